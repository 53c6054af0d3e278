//! Ablation harness (query vs. no query, fusion operators) and summary
//! strips for qualitative inspection.

use std::fmt::Write as _;
use std::str::FromStr;

use image::{imageops, Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{FusionMode, TrainingConfig};
use crate::dataset::FrameStore;
use crate::error::{Error, Result};
use crate::features::FeatureBank;
use crate::generator::{
    count_correct, evaluate_accuracy, initial_backbone, train, InputSource, Model,
    RelevancePrediction,
};
use crate::manifest::{DatasetManifest, RelevanceScore, Split};
use crate::output::{threshold_scores, SummarySelection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationSuite {
    /// none vs. mult.
    Query,
    /// sum, concat, mult, none.
    Fusion,
}

impl AblationSuite {
    pub fn modes(self) -> &'static [FusionMode] {
        match self {
            AblationSuite::Query => &[FusionMode::None, FusionMode::Mult],
            AblationSuite::Fusion => &[
                FusionMode::Sum,
                FusionMode::Concat,
                FusionMode::Mult,
                FusionMode::None,
            ],
        }
    }
}

impl FromStr for AblationSuite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "query" => Ok(AblationSuite::Query),
            "fusion" => Ok(AblationSuite::Fusion),
            other => Err(Error::config(format!("unknown ablation suite `{other}`"))),
        }
    }
}

pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub configuration: FusionMode,
    pub seed: u64,
    /// Test accuracy of the final-epoch model; `None` if the run failed.
    pub final_test_accuracy: Option<f64>,
    pub val_curve: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeSummary {
    pub mode: FusionMode,
    pub mean: f64,
    /// Sample standard deviation (0 for a single run).
    pub sd: f64,
    pub runs: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub suite: AblationSuite,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn summary(&self, mode: FusionMode) -> Option<ModeSummary> {
        let rows: Vec<&AblationRow> = self
            .rows
            .iter()
            .filter(|r| r.configuration == mode)
            .collect();
        let accs: Vec<f64> = rows.iter().filter_map(|r| r.final_test_accuracy).collect();
        if accs.is_empty() {
            return None;
        }
        let n = accs.len() as f64;
        let mean = accs.iter().sum::<f64>() / n;
        let sd = if accs.len() > 1 {
            (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(ModeSummary {
            mode,
            mean,
            sd,
            runs: accs.len(),
            failed: rows.len() - accs.len(),
        })
    }

    pub fn summaries(&self) -> Vec<ModeSummary> {
        self.suite
            .modes()
            .iter()
            .filter_map(|&m| self.summary(m))
            .collect()
    }

    /// Mean accuracy of mult minus mean accuracy of none.
    pub fn gap(&self) -> Option<f64> {
        Some(self.summary(FusionMode::Mult)?.mean - self.summary(FusionMode::None)?.mean)
    }

    /// The mode with the highest mean accuracy; earlier modes in suite order
    /// win ties.
    pub fn best_mode(&self) -> Option<FusionMode> {
        self.summaries()
            .into_iter()
            .fold(None, |best: Option<ModeSummary>, s| match best {
                Some(b) if b.mean >= s.mean => Some(b),
                _ => Some(s),
            })
            .map(|s| s.mode)
    }

    /// `configuration,seed,final_test_accuracy,val_curve,error`, with the
    /// validation curve as `;`-separated accuracies.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Decode(e.to_string());
        w.write_record([
            "configuration",
            "seed",
            "final_test_accuracy",
            "val_curve",
            "error",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            let curve: Vec<String> = r.val_curve.iter().map(|v| format!("{v:.6}")).collect();
            w.write_record([
                r.configuration.to_string(),
                r.seed.to_string(),
                r.final_test_accuracy
                    .map(|a| format!("{a:.6}"))
                    .unwrap_or_default(),
                curve.join(";"),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Decode(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let title = match self.suite {
            AblationSuite::Query => "Query ablation",
            AblationSuite::Fusion => "Fusion ablation",
        };
        let _ = writeln!(out, "# {title}\n");
        let _ = writeln!(out, "| configuration | seed | test accuracy |");
        let _ = writeln!(out, "|---|---|---|");
        for r in &self.rows {
            let acc = match (&r.final_test_accuracy, &r.error) {
                (Some(a), _) => format!("{a:.4}"),
                (None, Some(e)) => format!("failed: {e}"),
                (None, None) => "failed".into(),
            };
            let _ = writeln!(out, "| {} | {} | {acc} |", r.configuration, r.seed);
        }
        let _ = writeln!(out, "\n| configuration | mean ± sd | runs | failed |");
        let _ = writeln!(out, "|---|---|---|---|");
        for s in self.summaries() {
            let _ = writeln!(
                out,
                "| {} | {:.4} ± {:.4} | {} | {} |",
                s.mode, s.mean, s.sd, s.runs, s.failed
            );
        }
        if let Some(g) = self.gap() {
            let _ = writeln!(out, "\nGap (mult − none): {g:+.4}");
        }
        if let Some(b) = self.best_mode() {
            let _ = writeln!(out, "Best configuration: {b}");
        }
        out
    }
}

/// Trains every configuration of `suite` once per seed and reports final-
/// epoch test accuracy. A failing run is recorded and the rest continue.
///
/// With a frozen backbone and frame input, features are extracted once per
/// seed and shared by that seed's configurations. Precomputed features are
/// used as given.
pub fn run_ablation(
    manifest: &DatasetManifest,
    input: InputSource<'_>,
    base: &TrainingConfig,
    seeds: &[u64],
    suite: AblationSuite,
) -> Result<AblationReport> {
    run_ablation_observed(manifest, input, base, seeds, suite, &|_, _| {})
}

/// Like [`run_ablation`], calling `observer` with each successful run's
/// final model and row (possibly from several threads).
pub fn run_ablation_observed(
    manifest: &DatasetManifest,
    input: InputSource<'_>,
    base: &TrainingConfig,
    seeds: &[u64],
    suite: AblationSuite,
    observer: &(dyn Fn(&Model, &AblationRow) + Sync),
) -> Result<AblationReport> {
    base.validate()?;
    if manifest.split_pairs(Split::Train).is_empty() {
        return Err(Error::config("the training split is empty"));
    }
    if seeds.is_empty() {
        return Err(Error::config("no seeds given"));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        let seed_config = TrainingConfig {
            seed,
            ..base.clone()
        };
        let bank;
        let seed_input = match (base.freeze_backbone, input) {
            (true, InputSource::Frames(store)) => {
                match shared_features(manifest, store, &seed_config) {
                    Ok(b) => {
                        bank = b;
                        InputSource::Features(&bank)
                    }
                    Err(e) => {
                        rows.extend(suite.modes().iter().map(|&m| failed_row(m, seed, &e)));
                        continue;
                    }
                }
            }
            (_, other) => other,
        };
        let seed_rows: Vec<AblationRow> = suite
            .modes()
            .par_iter()
            .map(|&mode| {
                let config = TrainingConfig {
                    fusion_mode: mode,
                    ..seed_config.clone()
                };
                run_one(manifest, seed_input, &config, observer)
                    .unwrap_or_else(|e| failed_row(mode, seed, &e))
            })
            .collect();
        rows.extend(seed_rows);
    }
    Ok(AblationReport { suite, rows })
}

pub fn run_query_ablation(
    manifest: &DatasetManifest,
    input: InputSource<'_>,
    base: &TrainingConfig,
    seeds: &[u64],
) -> Result<AblationReport> {
    run_ablation(manifest, input, base, seeds, AblationSuite::Query)
}

pub fn run_fusion_ablation(
    manifest: &DatasetManifest,
    input: InputSource<'_>,
    base: &TrainingConfig,
    seeds: &[u64],
) -> Result<AblationReport> {
    run_ablation(manifest, input, base, seeds, AblationSuite::Fusion)
}

fn shared_features(
    manifest: &DatasetManifest,
    store: &dyn FrameStore,
    config: &TrainingConfig,
) -> Result<FeatureBank> {
    FeatureBank::compute(&manifest.pairs, store, &initial_backbone(config)?)
}

fn run_one(
    manifest: &DatasetManifest,
    input: InputSource<'_>,
    config: &TrainingConfig,
    observer: &(dyn Fn(&Model, &AblationRow) + Sync),
) -> Result<AblationRow> {
    let out = train(manifest, input, config)?;
    let acc = evaluate_accuracy(&out.final_model, manifest, Split::Test, input)?;
    let row = AblationRow {
        configuration: config.fusion_mode,
        seed: config.seed,
        final_test_accuracy: Some(acc),
        val_curve: out.log.iter().filter_map(|l| l.val_acc).collect(),
        error: None,
    };
    observer(&out.final_model, &row);
    Ok(row)
}

fn failed_row(mode: FusionMode, seed: u64, err: &Error) -> AblationRow {
    tracing::warn!(%mode, seed, error = %err, "ablation run failed");
    AblationRow {
        configuration: mode,
        seed,
        final_test_accuracy: None,
        val_curve: Vec::new(),
        error: Some(err.to_string()),
    }
}

// ---------------------------------------------------------------------------
// Summary strips

/// Record written next to a strip image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripRecord {
    pub correct: usize,
    pub total: usize,
    /// `"<correct>/<total>"`.
    pub caption: String,
    pub selected: Vec<usize>,
    pub gt_relevant: Vec<bool>,
    pub pred_relevant: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct SummaryStrip {
    pub image: RgbImage,
    pub record: StripRecord,
}

const THUMB: u32 = 64;
const GAP: u32 = 4;
const BAR_CELL: u32 = 4;
const BAR_HEIGHT: u32 = 16;
const SAMPLE_THUMBS: usize = 10;
const GREEN: Rgb<u8> = Rgb([0, 176, 80]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const INK: Rgb<u8> = Rgb([32, 32, 32]);

/// 3×5 digit glyphs, one row per `u8`, high bit on the left.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];
const GLYPH_SCALE: u32 = 2;

fn fill(img: &mut RgbImage, x: u32, y: u32, w: u32, h: u32, color: Rgb<u8>) {
    for yy in y..(y + h).min(img.height()) {
        for xx in x..(x + w).min(img.width()) {
            img.put_pixel(xx, yy, color);
        }
    }
}

fn draw_number(img: &mut RgbImage, x: u32, y: u32, n: usize) {
    for (i, ch) in n.to_string().bytes().enumerate() {
        let glyph = DIGITS[(ch - b'0') as usize];
        let gx = x + i as u32 * 4 * GLYPH_SCALE;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3 {
                if bits & (0b100 >> col) != 0 {
                    let (px, py) = (gx + col * GLYPH_SCALE, y + row as u32 * GLYPH_SCALE);
                    fill(img, px, py, GLYPH_SCALE, GLYPH_SCALE, INK);
                }
            }
        }
    }
}

fn draw_bar(img: &mut RgbImage, y: u32, mask: &[bool]) {
    for (i, &on) in mask.iter().enumerate() {
        let x = GAP + i as u32 * BAR_CELL;
        fill(
            img,
            x,
            y,
            BAR_CELL,
            BAR_HEIGHT,
            if on { GREEN } else { BLACK },
        );
    }
}

fn thumbnail(frame: &RgbImage) -> RgbImage {
    imageops::resize(frame, THUMB, THUMB, imageops::FilterType::Triangle)
}

/// Draws a four-row strip: evenly spaced sample frames, the ground-truth
/// relevance bar (green = relevant), the predicted bar, and the selected
/// frames labelled with their original indices.
///
/// `frames` are the original frames; `gt` and `pred` cover all padded rows.
pub fn render_summary_strip(
    frames: &[RgbImage],
    gt: &[RelevanceScore],
    pred: &RelevancePrediction,
    selection: &SummarySelection,
) -> Result<SummaryStrip> {
    if gt.len() != pred.scores.len() {
        return Err(Error::shape(format!(
            "{} ground-truth scores but {} predictions",
            gt.len(),
            pred.scores.len()
        )));
    }
    if frames.is_empty() || frames.len() > gt.len() {
        return Err(Error::shape(format!(
            "{} frames for {} scored rows",
            frames.len(),
            gt.len()
        )));
    }
    if let Some(&bad) = selection.indices.iter().find(|&&i| i >= frames.len()) {
        return Err(Error::shape(format!(
            "selected frame {bad} but the video has {} frames",
            frames.len()
        )));
    }
    let correct = count_correct(&pred.scores, gt)?;
    let gt_mask = threshold_scores(gt);
    let pred_mask = threshold_scores(&pred.scores);

    let samples: Vec<usize> = if frames.len() <= SAMPLE_THUMBS {
        (0..frames.len()).collect()
    } else {
        crate::output::uniform_positions(frames.len(), SAMPLE_THUMBS)
    };
    let label_h = 5 * GLYPH_SCALE + GAP;
    let bar_w = gt.len() as u32 * BAR_CELL;
    let thumbs_w = |n: usize| n as u32 * (THUMB + GAP);
    let width = GAP
        + bar_w
            .max(thumbs_w(samples.len()))
            .max(thumbs_w(selection.indices.len()));
    let rows_y = [
        GAP,
        GAP + THUMB + GAP,
        GAP + THUMB + GAP + BAR_HEIGHT + GAP,
        GAP + THUMB + 2 * (GAP + BAR_HEIGHT) + GAP,
    ];
    let height = rows_y[3] + THUMB + GAP + label_h;
    let mut img = RgbImage::from_pixel(width, height, BACKGROUND);

    for (slot, &i) in samples.iter().enumerate() {
        let x = GAP + slot as u32 * (THUMB + GAP);
        imageops::replace(&mut img, &thumbnail(&frames[i]), x as i64, rows_y[0] as i64);
    }
    draw_bar(&mut img, rows_y[1], &gt_mask);
    draw_bar(&mut img, rows_y[2], &pred_mask);
    for (slot, &i) in selection.indices.iter().enumerate() {
        let x = GAP + slot as u32 * (THUMB + GAP);
        imageops::replace(&mut img, &thumbnail(&frames[i]), x as i64, rows_y[3] as i64);
        draw_number(&mut img, x, rows_y[3] + THUMB + GAP, i);
    }

    Ok(SummaryStrip {
        image: img,
        record: StripRecord {
            correct,
            total: gt.len(),
            caption: format!("{correct}/{}", gt.len()),
            selected: selection.indices.clone(),
            gt_relevant: gt_mask,
            pred_relevant: pred_mask,
        },
    })
}
