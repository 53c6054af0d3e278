//! `qvsum`: dataset building, training, evaluation, ablations and serving.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qvsum_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, WeightsChoice};
use qvsum_core::config::{BackboneKind, FusionMode, TrainingConfig};
use qvsum_core::dataset::{
    build_dataset, encode_png, generate_synthetic, ground_truth, load_sequence, BuildOptions,
    DiskFrameStore, FrameStore, SeparabilityRule, SyntheticConfig,
};
use qvsum_core::evaluation::{render_summary_strip, run_ablation_observed, AblationSuite};
use qvsum_core::features::{
    cache_features, load_feature_bank, read_feature_meta, write_feature_meta, FeatureBank,
    FeatureCacheMeta,
};
use qvsum_core::generator::{
    backbone_provenance, evaluate_accuracy, initial_backbone, train, InputSource, Model,
};
use qvsum_core::json::to_canonical_string;
use qvsum_core::manifest::{
    validate_manifest, DatasetManifest, QueryVideoPair, Split, ValidationOptions,
};
use qvsum_core::output::{select_summary, threshold_relevance, SelectionPolicy};
use qvsum_service::{load_state, resolve_data_root, serve, LoadOptions, DATA_ROOT_ENV};

#[derive(Parser)]
#[command(
    name = "qvsum",
    version,
    about = "Query-controllable video summarization"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a manifest from a raw directory of videos/frames and annotations.
    BuildDataset(BuildDatasetArgs),
    /// Generate a synthetic corpus (frames + manifest).
    GenSynthetic(GenSyntheticArgs),
    /// Check a manifest against every dataset invariant.
    Validate(ValidateArgs),
    /// Extract backbone features once and store them as `.feat` files.
    CacheFeatures(CacheFeaturesArgs),
    /// Train a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Frame accuracy of a checkpoint on one split.
    Eval(EvalArgs),
    /// Summarize one video for a text query.
    Summarize(SummarizeArgs),
    /// Run the query or fusion ablation over several seeds.
    Ablate(AblateArgs),
    /// Serve a checkpoint over HTTP.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Reference backbone, fine-tuned, lr 1e-4, 25 epochs.
    Full,
    /// Tiny frozen backbone, otherwise as full.
    Desk,
    /// Desk with lr 3e-3, used for the synthetic ablation corpora.
    SyntheticAblation,
}

impl Preset {
    fn config(self) -> TrainingConfig {
        match self {
            Preset::Full => TrainingConfig::default(),
            Preset::Desk => TrainingConfig::desk(),
            Preset::SyntheticAblation => TrainingConfig::synthetic_ablation(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    None,
    Sum,
    Concat,
    Mult,
}

impl From<FusionArg> for FusionMode {
    fn from(f: FusionArg) -> Self {
        match f {
            FusionArg::None => FusionMode::None,
            FusionArg::Sum => FusionMode::Sum,
            FusionArg::Concat => FusionMode::Concat,
            FusionArg::Mult => FusionMode::Mult,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BackboneArg {
    Reference,
    Tiny,
}

impl From<BackboneArg> for BackboneKind {
    fn from(b: BackboneArg) -> Self {
        match b {
            BackboneArg::Reference => BackboneKind::ReferenceCnn,
            BackboneArg::Tiny => BackboneKind::TinyCnn,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectArg {
    Uniform,
    First,
}

impl From<SelectArg> for SelectionPolicy {
    fn from(s: SelectArg) -> Self {
        match s {
            SelectArg::Uniform => SelectionPolicy::Uniform,
            SelectArg::First => SelectionPolicy::First,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    QueryMatch,
    Gating,
    QueryIndependent,
}

impl From<RuleArg> for SeparabilityRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::QueryMatch => SeparabilityRule::QueryMatch,
            RuleArg::Gating => SeparabilityRule::Gating,
            RuleArg::QueryIndependent => SeparabilityRule::QueryIndependent,
        }
    }
}

#[derive(Args)]
struct BuildDatasetArgs {
    #[arg(long)]
    raw_dir: PathBuf,
    /// Manifest path; frames are written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write normalized frame caches.
    #[arg(long)]
    frame_cache: bool,
}

#[derive(Args)]
struct GenSyntheticArgs {
    /// JSON file with a synthetic corpus configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    /// Probability of replacing an annotator's vote.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    rule: Option<RuleArg>,
    #[arg(long)]
    annotators: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Also count frames on disk (resolved like `serve`).
    #[arg(long)]
    check_frames: bool,
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    min_annotators: usize,
}

#[derive(Args)]
struct CacheFeaturesArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "tiny")]
    backbone: BackboneArg,
    /// Seed of the random backbone init (ignored with --backbone-weights).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    backbone_weights: Option<PathBuf>,
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, value_enum, default_value = "full")]
    preset: Preset,
    #[arg(long, value_enum)]
    fusion: Option<FusionArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum)]
    backbone: Option<BackboneArg>,
    /// Keep backbone weights fixed (`true`/`false`).
    #[arg(long)]
    freeze_backbone: Option<bool>,
    /// `.qvw` bundle with backbone weights, e.g. converted ImageNet weights.
    #[arg(long)]
    backbone_weights: Option<PathBuf>,
}

impl ConfigArgs {
    fn build(&self) -> TrainingConfig {
        let mut c = self.preset.config();
        if let Some(f) = self.fusion {
            c.fusion_mode = f.into();
        }
        if let Some(e) = self.epochs {
            c.epochs = e;
        }
        if let Some(lr) = self.lr {
            c.learning_rate = lr;
        }
        if let Some(b) = self.backbone {
            c.backbone = b.into();
        }
        if let Some(f) = self.freeze_backbone {
            c.freeze_backbone = f;
        }
        if self.backbone_weights.is_some() {
            c.backbone_weights = self.backbone_weights.clone();
        }
        c
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Feature cache from `cache-features` (frozen backbone only).
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Defaults to the manifest recorded in the checkpoint.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Use the best-validation weights instead of the final ones.
    #[arg(long)]
    best: bool,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    data_root: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    video: String,
    #[arg(long)]
    query: String,
    #[arg(long, default_value_t = 7)]
    k: usize,
    #[arg(long, value_enum, default_value = "uniform")]
    select: SelectArg,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    best: bool,
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    suite: SuiteArg,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Report directory: report.csv, report.md, strips/.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Query,
    Fusion,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Serve only this split.
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    #[arg(long)]
    best: bool,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Restrict CORS to this origin (default: any).
    #[arg(long)]
    cors_origin: Option<String>,
}

fn data_root(explicit: Option<&Path>, manifest: &Path) -> PathBuf {
    let env = std::env::var(DATA_ROOT_ENV).ok();
    resolve_data_root(explicit, env.as_deref(), manifest)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn weights_choice(best: bool) -> WeightsChoice {
    if best {
        WeightsChoice::Best
    } else {
        WeightsChoice::Final
    }
}

/// The checkpoint's manifest unless one is given explicitly.
fn checkpoint_manifest(ck: &Checkpoint, explicit: Option<&Path>) -> Result<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| ck.meta.manifest.clone())
        .context("the checkpoint records no manifest; pass --manifest")
}

/// Loads a feature cache after checking it was made by the backbone that
/// `config` describes.
fn cached_bank(
    dir: &Path,
    manifest: &DatasetManifest,
    config: &TrainingConfig,
) -> Result<FeatureBank> {
    let meta = read_feature_meta(dir)?;
    let expected = backbone_provenance(config);
    if meta.backbone != config.backbone || meta.provenance != expected {
        bail!(
            "feature cache was made by {:?} ({}), the configuration needs {:?} ({expected})",
            meta.backbone,
            meta.provenance,
            config.backbone
        );
    }
    Ok(load_feature_bank(dir, &manifest.pairs, meta.feature_dim)?)
}

fn build_dataset_cmd(a: BuildDatasetArgs) -> Result<()> {
    let out_dir = a.out.parent().unwrap_or(Path::new(".")).to_path_buf();
    let opts = BuildOptions {
        seed: a.seed,
        frame_cache: a.frame_cache,
        ..Default::default()
    };
    let manifest = build_dataset(&a.raw_dir, &out_dir, &opts)?;
    manifest.save(&a.out)?;
    println!(
        "{} pairs written to {}",
        manifest.pairs.len(),
        a.out.display()
    );
    Ok(())
}

fn gen_synthetic_cmd(a: GenSyntheticArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_slice::<SyntheticConfig>(
            &std::fs::read(p).with_context(|| format!("reading {}", p.display()))?,
        )
        .with_context(|| format!("parsing {}", p.display()))?,
        None => SyntheticConfig::default(),
    };
    if let Some(n) = a.n {
        cfg.n_pairs = n;
    }
    if let Some(noise) = a.noise {
        cfg.noise = noise;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(rule) = a.rule {
        cfg.rule = rule.into();
    }
    if let Some(n) = a.annotators {
        cfg.annotators = n;
    }
    let ds = generate_synthetic(&cfg)?;
    ds.write_to(&a.out)?;
    println!(
        "{} {} pairs written to {}",
        ds.manifest.pairs.len(),
        cfg.rule,
        a.out.display()
    );
    Ok(())
}

fn validate_cmd(a: ValidateArgs) -> Result<ExitCode> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let opts = ValidationOptions {
        frames_root: a
            .check_frames
            .then(|| data_root(a.data_root.as_deref(), &a.manifest)),
        min_annotators: a.min_annotators,
        ..Default::default()
    };
    let report = validate_manifest(&manifest, &opts);
    for w in &report.warnings {
        println!("warning: {w}");
    }
    for v in &report.violations {
        println!("violation: {v}");
    }
    if report.is_valid() {
        println!("ok: {} pairs", manifest.pairs.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{} violation(s)", report.violations.len());
        Ok(ExitCode::from(2))
    }
}

fn cache_features_cmd(a: CacheFeaturesArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let config = TrainingConfig {
        backbone: a.backbone.into(),
        seed: a.seed,
        backbone_weights: a.backbone_weights,
        ..TrainingConfig::default()
    };
    let backbone = initial_backbone(&config)?;
    let store = DiskFrameStore::new(data_root(a.data_root.as_deref(), &a.manifest));
    let n = cache_features(&manifest.pairs, &store, &backbone, &a.out)?;
    write_feature_meta(
        &a.out,
        &FeatureCacheMeta {
            backbone: config.backbone,
            feature_dim: backbone.feature_dim(),
            provenance: backbone_provenance(&config),
        },
    )?;
    println!("{n} feature files written to {}", a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let config = TrainingConfig {
        seed: a.seed,
        ..a.config.build()
    };
    let store = DiskFrameStore::new(data_root(a.data_root.as_deref(), &a.manifest));
    let bank;
    let input = match &a.features {
        Some(dir) => {
            bank = cached_bank(dir, &manifest, &config)?;
            InputSource::Features(&bank)
        }
        None => InputSource::Frames(&store),
    };
    let out = train(&manifest, input, &config)?;
    save_checkpoint(&a.out, &out, Some(&std::path::absolute(&a.manifest)?))?;
    for l in &out.log {
        let val = l
            .val_acc
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "epoch {:>3}  loss {:.4}  train {:.4}  val {val}",
            l.epoch, l.train_loss, l.train_acc
        );
    }
    println!(
        "{} steps; best epoch {}; checkpoint in {}",
        out.steps,
        out.best_epoch,
        a.out.display()
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let ck = load_checkpoint(&a.ckpt, weights_choice(a.best))?;
    let manifest_path = checkpoint_manifest(&ck, a.manifest.as_deref())?;
    let manifest = DatasetManifest::load(&manifest_path)?;
    let split: Split = a.split.into();
    let store = DiskFrameStore::new(data_root(a.data_root.as_deref(), &manifest_path));
    let bank;
    let input = match &a.features {
        Some(dir) => {
            bank = cached_bank(dir, &manifest, &ck.model.config)?;
            InputSource::Features(&bank)
        }
        None => InputSource::Frames(&store),
    };
    let acc = evaluate_accuracy(&ck.model, &manifest, split, input)?;
    let frames = manifest.split_pairs(split).len() * qvsum_core::PADDED_FRAMES;
    println!(
        "{split} accuracy {acc:.4} ({} / {frames} frames)",
        (acc * frames as f64).round()
    );
    Ok(())
}

#[derive(Serialize)]
struct SummaryRecord<'a> {
    video_id: &'a str,
    query: &'a str,
    k: usize,
    indices: &'a [usize],
    scores: Vec<u8>,
    mask: &'a [bool],
    original_frame_count: usize,
    selection_policy: SelectionPolicy,
    oov_warning: bool,
    empty_summary: bool,
}

fn find_pair<'m>(manifest: &'m DatasetManifest, id: &str) -> Result<&'m QueryVideoPair> {
    manifest
        .pair(id)
        .with_context(|| format!("video `{id}` is not in the manifest"))
}

fn summarize_cmd(a: SummarizeArgs) -> Result<()> {
    let ck = load_checkpoint(&a.ckpt, weights_choice(a.best))?;
    let manifest_path = checkpoint_manifest(&ck, a.manifest.as_deref())?;
    let manifest = DatasetManifest::load(&manifest_path)?;
    let pair = find_pair(&manifest, &a.video)?;
    let store = DiskFrameStore::new(data_root(a.data_root.as_deref(), &manifest_path));
    let seq = load_sequence(&store, pair)?;
    let pred = ck.model.predict(&seq, &a.query)?;
    let mask = threshold_relevance(&pred);
    let sel = select_summary(&mask, a.k, pair.original_frame_count, a.select.into())?;
    if pred.oov_warning {
        eprintln!("warning: no query word is in the model's dictionary");
    }

    let frames = store.load_frames(pair)?;
    for &i in &sel.indices {
        write(
            &a.out.join(format!("frame_{i:03}.png")),
            encode_png(&frames[i])?,
        )?;
    }
    let record = SummaryRecord {
        video_id: &pair.video_id,
        query: &a.query,
        k: a.k,
        indices: &sel.indices,
        scores: pred.scores.iter().map(|s| s.value()).collect(),
        mask: &mask,
        original_frame_count: pair.original_frame_count,
        selection_policy: sel.policy,
        oov_warning: pred.oov_warning,
        empty_summary: sel.empty_summary,
    };
    write(&a.out.join("summary.json"), to_canonical_string(&record))?;
    let gt = ground_truth(&pair.annotations)?;
    let strip = render_summary_strip(&frames, &gt, &pred, &sel)?;
    write(&a.out.join("strip.png"), encode_png(&strip.image)?)?;
    write(
        &a.out.join("strip.json"),
        to_canonical_string(&strip.record),
    )?;
    println!(
        "selected {:?} ({} correct vs. annotations)",
        sel.indices, strip.record.caption
    );
    Ok(())
}

fn ablate_cmd(a: AblateArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let store = DiskFrameStore::new(data_root(a.data_root.as_deref(), &a.manifest));
    let base = a.config.build();
    let suite = match a.suite {
        SuiteArg::Query => AblationSuite::Query,
        SuiteArg::Fusion => AblationSuite::Fusion,
    };
    let strip_seed = *a.seeds.first().context("no seeds given")?;
    let strip_pair = manifest.split_pairs(Split::Test).first().copied().cloned();
    let strips_dir = a.out.join("strips");
    // One strip per configuration: the first seed's model on the first test
    // video with its own query.
    let observer = |model: &Model, row: &qvsum_core::evaluation::AblationRow| {
        let Some(pair) = strip_pair.as_ref().filter(|_| row.seed == strip_seed) else {
            return;
        };
        let name = format!("{}_seed{}_{}", row.configuration, row.seed, pair.video_id);
        let result = (|| -> Result<()> {
            let frames = store.load_frames(pair)?;
            let pred = model.predict(&load_sequence(&store, pair)?, &pair.query)?;
            let sel = select_summary(
                &threshold_relevance(&pred),
                7,
                pair.original_frame_count,
                SelectionPolicy::Uniform,
            )?;
            let gt = ground_truth(&pair.annotations)?;
            let strip = render_summary_strip(&frames, &gt, &pred, &sel)?;
            write(
                &strips_dir.join(format!("{name}.png")),
                encode_png(&strip.image)?,
            )?;
            write(
                &strips_dir.join(format!("{name}.json")),
                to_canonical_string(&strip.record),
            )
        })();
        if let Err(e) = result {
            tracing::warn!(error = %e, "could not render strip {name}");
        }
    };
    let report = run_ablation_observed(
        &manifest,
        InputSource::Frames(&store),
        &base,
        &a.seeds,
        suite,
        &observer,
    )?;
    write(&a.out.join("report.csv"), report.to_csv()?)?;
    let md = report.to_markdown();
    write(&a.out.join("report.md"), &md)?;
    print!("{md}");
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let opts = LoadOptions {
        weights: weights_choice(a.best),
        split: a.split.map(Into::into),
        data_root: a.data_root.clone(),
        feature_cache: a.features.clone(),
    };
    let state = Arc::new(load_state(&a.ckpt, &a.manifest, &opts)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .with_context(|| format!("binding {}:{}", a.host, a.port))?;
        println!("listening on http://{}", listener.local_addr()?);
        serve(listener, state, a.cors_origin.as_deref()).await?;
        Ok(())
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::BuildDataset(a) => build_dataset_cmd(a).map(|_| ExitCode::SUCCESS),
        Command::GenSynthetic(a) => gen_synthetic_cmd(a).map(|_| ExitCode::SUCCESS),
        Command::Validate(a) => validate_cmd(a),
        Command::CacheFeatures(a) => cache_features_cmd(a).map(|_| ExitCode::SUCCESS),
        Command::Train(a) => train_cmd(a).map(|_| ExitCode::SUCCESS),
        Command::Eval(a) => eval_cmd(a).map(|_| ExitCode::SUCCESS),
        Command::Summarize(a) => summarize_cmd(a).map(|_| ExitCode::SUCCESS),
        Command::Ablate(a) => ablate_cmd(a).map(|_| ExitCode::SUCCESS),
        Command::Serve(a) => serve_cmd(a).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn config_flags_override_the_preset() {
        let cli = Cli::parse_from([
            "qvsum",
            "train",
            "--manifest",
            "m.json",
            "--out",
            "ck",
            "--preset",
            "desk",
            "--fusion",
            "concat",
            "--epochs",
            "3",
            "--lr",
            "0.01",
            "--freeze-backbone",
            "false",
            "--seed",
            "4",
        ]);
        let Command::Train(a) = cli.command else {
            panic!("parsed the wrong subcommand")
        };
        let c = a.config.build();
        assert_eq!(c.fusion_mode, FusionMode::Concat);
        assert_eq!((c.epochs, c.learning_rate), (3, 0.01));
        assert_eq!(c.backbone, BackboneKind::TinyCnn);
        assert!(!c.freeze_backbone);
        assert_eq!(a.seed, 4);
    }

    #[test]
    fn seeds_are_comma_separated() {
        let cli = Cli::parse_from([
            "qvsum",
            "ablate",
            "--manifest",
            "m",
            "--suite",
            "fusion",
            "--seeds",
            "3,5",
            "--out",
            "r",
        ]);
        let Command::Ablate(a) = cli.command else {
            panic!("parsed the wrong subcommand")
        };
        assert_eq!(a.seeds, [3, 5]);
    }
}
