//! Acceptance suite: one PASS/FAIL line per criterion, with its runtime
//! against the budget. Exits non-zero if anything fails.
//!
//! `cargo test -p qvsum-cli --test acceptance -- <substring>` runs only the
//! criteria whose name contains the substring.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use http_body_util::BodyExt;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

use qvsum_core::config::{FusionMode, TrainingConfig};
use qvsum_core::dataset::{
    generate_synthetic, ground_truth, load_sequence, merge_annotations, SyntheticConfig,
    SyntheticDataset,
};
use qvsum_core::evaluation::{run_ablation_observed, AblationReport, AblationSuite, DEFAULT_SEEDS};
use qvsum_core::features::extract_features;
use qvsum_core::fusion::{fuse, project_query};
use qvsum_core::generator::{
    accuracy_on_pairs, count_correct, cross_entropy_loss, frame_accuracy, train, FusionHead,
    InputSource, Model,
};
use qvsum_core::manifest::{RelevanceScore, Split, SplitAssignment};
use qvsum_core::nn::{Linear, Module};
use qvsum_core::output::{select_summary, SelectionPolicy};
use qvsum_core::PADDED_FRAMES;
use qvsum_service::{router, AppState, SummaryResponse};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fixture(name: &str) -> SyntheticDataset {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/synthetic")
        .join(name);
    let cfg: SyntheticConfig = serde_json::from_slice(&std::fs::read(&path).expect("read fixture"))
        .expect("parse fixture");
    generate_synthetic(&cfg).expect("generate fixture")
}

// ---------------------------------------------------------------------------

fn cross_entropy_oracle() -> Outcome {
    for c in 0..4 {
        let l = cross_entropy_loss(&[0.0; 4], c).map_err(|e| e.to_string())?;
        if (l - 4f64.ln()).abs() > 1e-9 {
            return Err(format!("class {c}: {l} vs ln 4"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0f64;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let c = rng.gen_range(0..4);
        // Direct definition; safe without max-subtraction in this range.
        let oracle = -(x[c].exp() / x.iter().map(|v| v.exp()).sum::<f64>()).ln();
        let got = cross_entropy_loss(&x, c).map_err(|e| e.to_string())?;
        worst = worst.max((got - oracle).abs());
    }
    check(
        worst <= 1e-6,
        format!("ln 4 for all classes; max |Δ| {worst:.2e} on 1000 vectors"),
    )
}

fn majority_vote_oracle() -> Outcome {
    let mut mismatches = 0;
    for code in 0..1024u32 {
        let votes: Vec<u8> = (0..5).map(|i| ((code >> (2 * i)) & 3) as u8).collect();
        // Mode, preferring the higher score among tied counts.
        let count = |s: u8| votes.iter().filter(|&&v| v == s).count();
        let oracle = (0..4u8).max_by_key(|&s| (count(s), s)).unwrap();
        let scores: Vec<RelevanceScore> = votes
            .iter()
            .map(|&v| RelevanceScore::new(v).unwrap())
            .collect();
        if merge_annotations(&scores)
            .map_err(|e| e.to_string())?
            .value()
            != oracle
        {
            mismatches += 1;
        }
    }
    check(
        mismatches == 0,
        format!("{mismatches} mismatches over 1024 vote vectors"),
    )
}

fn padding_alignment() -> Outcome {
    let ds = generate_synthetic(&SyntheticConfig {
        n_pairs: 20,
        min_frames: 5,
        max_frames: PADDED_FRAMES,
        seed: 3,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    for pair in &ds.manifest.pairs {
        let n = pair.original_frame_count;
        let seq = load_sequence(&ds, pair).map_err(|e| e.to_string())?;
        let labels = ground_truth(&pair.annotations).map_err(|e| e.to_string())?;
        if seq.len() != PADDED_FRAMES || labels.len() != PADDED_FRAMES || seq.original_count() != n
        {
            return Err(format!(
                "{}: {} frames, {} labels",
                pair.video_id,
                seq.len(),
                labels.len()
            ));
        }
        for i in 0..PADDED_FRAMES {
            if seq.frame(i).data() != seq.frame(i % n).data() || labels[i] != labels[i % n] {
                return Err(format!(
                    "{}: position {i} differs from {}",
                    pair.video_id,
                    i % n
                ));
            }
        }
    }
    let counts: Vec<usize> = ds
        .manifest
        .pairs
        .iter()
        .map(|p| p.original_frame_count)
        .collect();
    check(
        true,
        format!(
            "20 videos, {}..={} original frames",
            counts.iter().min().unwrap(),
            counts.iter().max().unwrap()
        ),
    )
}

fn fusion_identities() -> Outcome {
    let ds = fixture("overfit.json");
    let config = TrainingConfig::desk();
    let model = Model::new(
        &config,
        qvsum_core::query::Dictionary::build(&["beach city"]).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    let pair = &ds.manifest.pairs[0];
    let f = extract_features(
        &load_sequence(&ds, pair).map_err(|e| e.to_string())?,
        &model.backbone,
    )
    .map_err(|e| e.to_string())?;
    let d = f.ncols();
    let q = Array1::from(vec![1.0, 1.0]);
    let mut zero = Linear::zeros(2, d);
    let p0 = project_query(q.view(), &zero).map_err(|e| e.to_string())?;
    zero.bias.fill(1.0);
    let p1 = project_query(q.view(), &zero).map_err(|e| e.to_string())?;
    let e = |r: qvsum_core::Result<Array2<f64>>| r.map_err(|e| e.to_string());
    let sum = e(fuse(f.view(), p0.view(), FusionMode::Sum))?;
    let mult = e(fuse(f.view(), p1.view(), FusionMode::Mult))?;
    let none = e(fuse(f.view(), p1.view(), FusionMode::None))?;
    let concat = e(fuse(f.view(), p1.view(), FusionMode::Concat))?;
    // Bitwise comparison, so -0.0 vs 0.0 or NaN would count as differences.
    let bits = |a: &Array2<f64>| a.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let ok = bits(&sum) == bits(&f)
        && bits(&mult) == bits(&f)
        && bits(&none) == bits(&f)
        && concat.ncols() == 2 * d
        && concat.nrows() == f.nrows();
    check(
        ok,
        format!(
            "tiny features 199×{d}: sum/mult/none bit-exact, concat width {}",
            concat.ncols()
        ),
    )
}

/// Flat view of every parameter of a head, in `Module` order.
fn head_values(h: &FusionHead) -> Vec<f64> {
    let mut ps = Vec::new();
    h.params("", &mut ps);
    ps.iter()
        .flat_map(|p| p.value.iter().copied().collect::<Vec<_>>())
        .collect()
}

fn perturbed(h: &FusionHead, flat: usize, delta: f64) -> FusionHead {
    let mut out = h.clone();
    let mut ps = Vec::new();
    out.params_mut("", &mut ps);
    let mut k = flat;
    for p in ps.iter_mut() {
        if k < p.value.len() {
            *p.value.iter_mut().nth(k).unwrap() += delta;
            break;
        }
        k -= p.value.len();
    }
    drop(ps);
    out
}

fn gradient_checks() -> Outcome {
    let (v, d) = (5, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let f = Array2::from_shape_fn((3, d), |_| rng.gen_range(-1.0..1.0));
    let q = Array1::from(vec![1.0, 0.0, 1.0, 1.0, 0.0]);
    let labels = [0, 2, 3];
    let h = 1e-5;
    let mut worst = 0f64;
    let mut checked = 0;
    for mode in [
        FusionMode::None,
        FusionMode::Sum,
        FusionMode::Concat,
        FusionMode::Mult,
    ] {
        let head = FusionHead::random(mode, v, d, &mut rng);
        let loss = |m: &FusionHead| m.loss_and_grad(f.view(), q.view(), &labels).unwrap().loss;
        let g = head
            .loss_and_grad(f.view(), q.view(), &labels)
            .map_err(|e| e.to_string())?;
        let analytic = head_values(&g.params);
        for (i, &ana) in analytic.iter().enumerate() {
            let num = (loss(&perturbed(&head, i, h)) - loss(&perturbed(&head, i, -h))) / (2.0 * h);
            let scale = num.abs().max(ana.abs());
            if scale < 1e-8 {
                // Parameter does not reach the loss (projection under `none`).
                continue;
            }
            let rel = (num - ana).abs() / scale;
            if rel > 1e-3 {
                return Err(format!(
                    "{mode} parameter {i}: numeric {num} vs analytic {ana}"
                ));
            }
            worst = worst.max(rel);
            checked += 1;
        }
    }
    check(
        checked > 0,
        format!("{checked} projection/head entries over 4 modes, max rel err {worst:.2e}"),
    )
}

fn overfit() -> Outcome {
    let mut ds = fixture("overfit.json");
    ds.manifest.split_assignment = SplitAssignment::from_entries(
        ds.manifest
            .pairs
            .iter()
            .map(|p| (p.video_id.clone(), Split::Train)),
    );
    let config = TrainingConfig::desk();
    let out = train(&ds.manifest, InputSource::Frames(&ds), &config).map_err(|e| e.to_string())?;
    let pairs: Vec<_> = ds.manifest.pairs.iter().collect();
    let acc = accuracy_on_pairs(&out.final_model, &pairs, InputSource::Frames(&ds))
        .map_err(|e| e.to_string())?;
    check(
        out.steps <= 200 && acc >= 0.95,
        format!(
            "{} pairs, {} steps at lr {}, train accuracy {acc:.4}",
            pairs.len(),
            out.steps,
            config.learning_rate
        ),
    )
}

/// The seed-0 mult model of the controllability run, reused by the service
/// criterion.
struct Shared {
    query_match: SyntheticDataset,
    mult_model: Mutex<Option<Model>>,
}

fn ablate(
    ds: &SyntheticDataset,
    suite: AblationSuite,
    keep: Option<&Shared>,
) -> Result<AblationReport, String> {
    let observer = |model: &Model, row: &qvsum_core::evaluation::AblationRow| {
        if let Some(s) = keep {
            if row.seed == DEFAULT_SEEDS[0] && row.configuration == FusionMode::Mult {
                *s.mult_model.lock().unwrap() = Some(model.clone());
            }
        }
    };
    let report = run_ablation_observed(
        &ds.manifest,
        InputSource::Frames(ds),
        &TrainingConfig::synthetic_ablation(),
        &DEFAULT_SEEDS,
        suite,
        &observer,
    )
    .map_err(|e| e.to_string())?;
    if let Some(row) = report.rows.iter().find(|r| r.error.is_some()) {
        return Err(format!(
            "{} seed {} failed: {}",
            row.configuration,
            row.seed,
            row.error.as_deref().unwrap()
        ));
    }
    Ok(report)
}

fn mean(report: &AblationReport, mode: FusionMode) -> f64 {
    report.summary(mode).map_or(f64::NAN, |s| s.mean)
}

fn controllability(shared: &Shared) -> Outcome {
    let qm = ablate(&shared.query_match, AblationSuite::Query, Some(shared))?;
    let (mult, none) = (mean(&qm, FusionMode::Mult), mean(&qm, FusionMode::None));
    let qi = ablate(
        &fixture("query_independent.json"),
        AblationSuite::Query,
        None,
    )?;
    let gap = qi.gap().unwrap_or(f64::NAN);
    check(
        mult >= none + 0.10 && mult >= 0.90 && gap.abs() <= 0.05,
        format!(
            "query-match mult {mult:.4} vs none {none:.4}; query-independent gap {gap:+.4} (3 seeds)"
        ),
    )
}

fn fusion_ordering() -> Outcome {
    let report = ablate(&fixture("gating.json"), AblationSuite::Fusion, None)?;
    let means: Vec<String> = report
        .summaries()
        .iter()
        .map(|s| format!("{} {:.4}", s.mode, s.mean))
        .collect();
    let mult = mean(&report, FusionMode::Mult);
    let ok = report
        .summaries()
        .iter()
        .all(|s| s.runs == DEFAULT_SEEDS.len() && mult >= s.mean);
    check(ok, format!("means: {}", means.join(", ")))
}

fn accuracy_arithmetic() -> Outcome {
    let truth: Vec<RelevanceScore> = (0..199)
        .map(|i| RelevanceScore::new((i % 4) as u8).unwrap())
        .collect();
    let pred: Vec<RelevanceScore> = truth
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if i < 94 {
                *t
            } else {
                RelevanceScore::new((t.value() + 1) % 4).unwrap()
            }
        })
        .collect();
    let correct = count_correct(&pred, &truth).map_err(|e| e.to_string())?;
    let acc = frame_accuracy(&pred, &truth).map_err(|e| e.to_string())?;
    check(
        correct == 94 && (acc - 94.0 / 199.0).abs() <= 1e-9,
        format!("{correct}/199 correct, accuracy {acc:.10}"),
    )
}

fn selection_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cases = 0;
    for _ in 0..1000 {
        let density: f64 = rng.gen();
        let mask: Vec<bool> = (0..PADDED_FRAMES).map(|_| rng.gen_bool(density)).collect();
        let original = rng.gen_range(1..=PADDED_FRAMES);
        for k in [1, 3, 7, 20] {
            let s = select_summary(&mask, k, original, SelectionPolicy::Uniform)
                .map_err(|e| e.to_string())?;
            let relevant: Vec<usize> = (0..original).filter(|&i| mask[i]).collect();
            let m = relevant.len();
            // Float oracle: ties are exact in binary, so ties-even matches.
            let expected: Vec<usize> = if m <= k {
                relevant.clone()
            } else if k == 1 {
                vec![relevant[0]]
            } else {
                (0..k)
                    .map(|j| {
                        relevant[((j * (m - 1)) as f64 / (k - 1) as f64).round_ties_even() as usize]
                    })
                    .collect()
            };
            let ok = s.indices.len() == k.min(m)
                && s.indices.windows(2).all(|w| w[0] < w[1])
                && s.indices.iter().all(|&i| mask[i] && i < original)
                && s.indices == expected;
            if !ok {
                return Err(format!(
                    "k={k}, original={original}: got {:?}, expected {expected:?}",
                    s.indices
                ));
            }
            cases += 1;
        }
    }
    check(true, format!("{cases} mask/k cases"))
}

async fn post(app: axum::Router, body: serde_json::Value) -> Result<(StatusCode, Vec<u8>), String> {
    let req = Request::post("/summarize")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .map_err(|e| e.to_string())?;
    let resp = app.oneshot(req).await.map_err(|e| e.to_string())?;
    let status = resp.status();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .map_err(|e| e.to_string())?
        .to_bytes();
    Ok((status, bytes.to_vec()))
}

fn service(shared: &Shared) -> Outcome {
    let ds = &shared.query_match;
    let model = match shared.mult_model.lock().unwrap().take() {
        Some(m) => m,
        None => {
            train(
                &ds.manifest,
                InputSource::Frames(ds),
                &TrainingConfig::synthetic_ablation(),
            )
            .map_err(|e| e.to_string())?
            .final_model
        }
    };
    let pairs: Vec<_> = ds
        .manifest
        .split_pairs(Split::Test)
        .into_iter()
        .cloned()
        .collect();
    let state = Arc::new(
        AppState::new(model, pairs.clone(), Box::new(ds.clone())).map_err(|e| e.to_string())?,
    );
    let app = router(state, None);
    let rt = tokio::runtime::Builder::new_current_thread()
        .build()
        .map_err(|e| e.to_string())?;
    rt.block_on(async {
        let concepts = &ds.config.vocab;
        let mut diverged = 0;
        for pair in &pairs {
            let payload = serde_json::json!({"video_id": pair.video_id, "query": pair.query, "k": 7});
            let a = post(app.clone(), payload.clone()).await?;
            let b = post(app.clone(), payload).await?;
            if a.0 != StatusCode::OK || a != b {
                return Err(format!("{}: responses differ or failed ({})", pair.video_id, a.0));
            }
            let mut sets = Vec::new();
            for c in concepts {
                let (s, body) =
                    post(app.clone(), serde_json::json!({"video_id": pair.video_id, "query": c, "k": 7}))
                        .await?;
                if s != StatusCode::OK {
                    return Err(format!("{}: query `{c}` returned {s}", pair.video_id));
                }
                let r: SummaryResponse = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
                sets.push(r.indices);
            }
            if sets.iter().any(|s| *s != sets[0]) {
                diverged += 1;
            }
        }
        check(
            diverged > 0,
            format!(
                "{} videos: repeated payloads byte-identical; {diverged} give different indices across {} queries",
                pairs.len(),
                concepts.len()
            ),
        )
    })
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let shared = Shared {
        query_match: fixture("query_match.json"),
        mult_model: Mutex::new(None),
    };
    type Criterion<'a> = (&'a str, u64, Box<dyn Fn() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("cross_entropy_oracle", 1, Box::new(cross_entropy_oracle)),
        ("majority_vote_oracle", 1, Box::new(majority_vote_oracle)),
        ("padding_label_alignment", 10, Box::new(padding_alignment)),
        ("fusion_identities", 1, Box::new(fusion_identities)),
        ("gradient_checks", 30, Box::new(gradient_checks)),
        ("overfit_tiny_backbone", 300, Box::new(overfit)),
        (
            "query_controllability",
            1800,
            Box::new(|| controllability(&shared)),
        ),
        ("fusion_ordering", 2700, Box::new(fusion_ordering)),
        ("accuracy_arithmetic", 1, Box::new(accuracy_arithmetic)),
        (
            "summary_selection_contract",
            5,
            Box::new(selection_contract),
        ),
        (
            "service_determinism_divergence",
            60,
            Box::new(|| service(&shared)),
        ),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, budget, run) in &criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let budget = Duration::from_secs(*budget);
        let in_time = elapsed <= budget;
        let (ok, detail) = match result {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} {name}: {detail} [{:.2}s / {}s{}]",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
