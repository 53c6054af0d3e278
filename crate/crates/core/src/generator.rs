//! The summary generator: backbone features, query projection and fusion, a
//! linear head over four relevance classes, and the training loop.

use std::borrow::Cow;
use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::Backbone;
use crate::config::{FusionMode, TrainingConfig};
use crate::dataset::{ground_truth, load_sequence, FrameSequence, FrameStore};
use crate::error::{Error, Result};
use crate::features::{extract_features, extract_original_features, frame_to_f64, FeatureBank};
use crate::fusion::{fuse, fuse_backward, project_query};
use crate::manifest::{DatasetManifest, QueryVideoPair, RelevanceScore, Split};
use crate::nn::{
    add_assign, join, load_state, state_dict, zeros_like, Adam, AdamConfig, Linear, Module,
    ParamMut, ParamRef,
};
use crate::query::{encode_query, Dictionary, QueryVector};
use crate::weights::TensorMap;
use crate::NUM_CLASSES;

fn check_logits(logits: &[f64], label: usize) -> Result<()> {
    if label >= logits.len() {
        return Err(Error::Label(format!(
            "class {label} with {} logits",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logits {logits:?}")));
    }
    Ok(())
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `−x[class] + ln Σ_j exp(x[j])`, with the maximum subtracted before
/// exponentiating.
pub fn cross_entropy_loss(logits: &[f64], label: usize) -> Result<f64> {
    check_logits(logits, label)?;
    Ok(log_sum_exp(logits) - logits[label])
}

/// `∂loss/∂x = softmax(x) − onehot(class)`.
pub fn cross_entropy_grad(logits: &[f64], label: usize) -> Result<Vec<f64>> {
    check_logits(logits, label)?;
    let lse = log_sum_exp(logits);
    Ok(logits
        .iter()
        .enumerate()
        .map(|(j, &v)| (v - lse).exp() - f64::from(j == label))
        .collect())
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (j, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = j;
        }
    }
    best
}

/// Query projection plus classification head, i.e. everything above the
/// backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionHead {
    pub mode: FusionMode,
    /// `V → d`.
    pub projection: Linear,
    /// `d′ → 4`.
    pub head: Linear,
}

/// Result of one forward/backward pass over a batch of frames.
#[derive(Debug, Clone)]
pub struct HeadGradients {
    /// Mean cross-entropy over the frames.
    pub loss: f64,
    pub logits: Array2<f64>,
    pub params: FusionHead,
    /// `∂loss/∂features`, one row per frame.
    pub features: Array2<f64>,
}

impl FusionHead {
    /// The head starts at zero, so every mode begins at the uniform
    /// prediction whatever the fused features look like. The projection
    /// weight is random (a zero weight next to a zero head is a saddle that
    /// concat never leaves) and mult gets bias 1 so `F ⊙ p` starts near `F`.
    pub fn new(mode: FusionMode, vocab: usize, feature_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut projection = Linear::new(vocab, feature_dim, rng);
        projection
            .bias
            .fill(if mode == FusionMode::Mult { 1.0 } else { 0.0 });
        Self {
            mode,
            projection,
            head: Linear::zeros(mode.fused_width(feature_dim), NUM_CLASSES),
        }
    }

    /// Uniform `±1/√fan_in` init for both layers.
    pub fn random(
        mode: FusionMode,
        vocab: usize,
        feature_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            mode,
            projection: Linear::new(vocab, feature_dim, rng),
            head: Linear::new(mode.fused_width(feature_dim), NUM_CLASSES, rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.projection.out_features()
    }

    pub fn logits(&self, features: ArrayView2<f64>, q: ArrayView1<f64>) -> Result<Array2<f64>> {
        let p = project_query(q, &self.projection)?;
        self.head
            .forward(fuse(features, p.view(), self.mode)?.view())
    }

    /// Mean cross-entropy over the rows of `features` and its gradients.
    pub fn loss_and_grad(
        &self,
        features: ArrayView2<f64>,
        q: ArrayView1<f64>,
        labels: &[usize],
    ) -> Result<HeadGradients> {
        let n = features.nrows();
        if labels.len() != n || n == 0 {
            return Err(Error::shape(format!(
                "{n} feature rows but {} labels",
                labels.len()
            )));
        }
        let p = project_query(q, &self.projection)?;
        let fused = fuse(features, p.view(), self.mode)?;
        let logits = self.head.forward(fused.view())?;
        let mut loss = 0.0;
        let mut grad_logits = Array2::zeros(logits.raw_dim());
        for ((row, mut g), &label) in logits
            .axis_iter(Axis(0))
            .zip(grad_logits.axis_iter_mut(Axis(0)))
            .zip(labels)
        {
            let row = row.to_vec();
            loss += cross_entropy_loss(&row, label)?;
            g.assign(&Array1::from(cross_entropy_grad(&row, label)?));
        }
        let scale = 1.0 / n as f64;
        grad_logits *= scale;
        let mut params = zeros_like(self);
        let grad_fused = self
            .head
            .backward(fused.view(), grad_logits.view(), &mut params.head);
        let (grad_features, grad_p) =
            fuse_backward(features, p.view(), self.mode, grad_fused.view());
        self.projection
            .backward_vec(q, grad_p.view(), &mut params.projection);
        Ok(HeadGradients {
            loss: loss * scale,
            logits,
            params,
            features: grad_features,
        })
    }
}

impl Module for FusionHead {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.projection.params(&join(prefix, "projection"), out);
        self.head.params(&join(prefix, "head"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.projection.params_mut(&join(prefix, "projection"), out);
        self.head.params_mut(&join(prefix, "head"), out);
    }
}

/// Per-frame predictions for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevancePrediction {
    pub scores: Vec<RelevanceScore>,
    /// `frames × 4`, columns ordered by score.
    pub logits: Array2<f64>,
    pub oov_warning: bool,
}

impl RelevancePrediction {
    pub fn from_logits(logits: Array2<f64>, oov_warning: bool) -> Result<Self> {
        if logits.ncols() != NUM_CLASSES {
            return Err(Error::shape(format!(
                "{} logit columns, expected {NUM_CLASSES}",
                logits.ncols()
            )));
        }
        let scores = logits
            .axis_iter(Axis(0))
            .map(|row| RelevanceScore::new(argmax(row) as u8))
            .collect::<Result<_>>()?;
        Ok(Self {
            scores,
            logits,
            oov_warning,
        })
    }
}

/// A complete model: configuration, dictionary, backbone and head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: TrainingConfig,
    pub dictionary: Dictionary,
    pub backbone: Backbone,
    pub head: FusionHead,
}

fn seeded_backbone(config: &TrainingConfig, rng: &mut ChaCha8Rng) -> Result<Backbone> {
    let mut backbone = Backbone::new(config.backbone, rng);
    if let Some(path) = &config.backbone_weights {
        load_state(&mut backbone, "", &crate::weights::load_weights(path)?)?;
    }
    Ok(backbone)
}

/// `pretrained:<path>` or `random-init:seed=<n>`.
pub fn backbone_provenance(config: &TrainingConfig) -> String {
    match &config.backbone_weights {
        Some(p) => format!("pretrained:{}", p.display()),
        None => format!("random-init:seed={}", config.seed),
    }
}

/// The backbone [`Model::new`] starts from for `config`, so frozen features
/// can be computed once and shared by runs that differ only in the head.
pub fn initial_backbone(config: &TrainingConfig) -> Result<Backbone> {
    seeded_backbone(config, &mut ChaCha8Rng::seed_from_u64(config.seed))
}

impl Model {
    /// Seeded initialization. If the configuration names backbone weights
    /// they replace the random backbone init.
    pub fn new(config: &TrainingConfig, dictionary: Dictionary) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let backbone = seeded_backbone(config, &mut rng)?;
        let head = FusionHead::new(
            config.fusion_mode,
            dictionary.len(),
            backbone.feature_dim(),
            &mut rng,
        );
        Ok(Self {
            config: config.clone(),
            dictionary,
            backbone,
            head,
        })
    }

    /// Where the backbone weights came from.
    pub fn backbone_provenance(&self) -> String {
        backbone_provenance(&self.config)
    }

    pub fn encode(&self, query: &str) -> QueryVector {
        encode_query(query, &self.dictionary)
    }

    pub fn predict_features(
        &self,
        features: ArrayView2<f64>,
        query: &str,
    ) -> Result<RelevancePrediction> {
        let q = self.encode(query);
        let logits = self.head.logits(features, Array1::from(q.values).view())?;
        RelevancePrediction::from_logits(logits, q.oov_warning)
    }

    pub fn predict(&self, seq: &FrameSequence, query: &str) -> Result<RelevancePrediction> {
        self.predict_features(extract_features(seq, &self.backbone)?.view(), query)
    }

    /// All tensors, prefixed `backbone.`, `projection.` and `head.`.
    pub fn state(&self) -> TensorMap {
        let mut out: TensorMap = state_dict(&self.head).into_iter().collect();
        out.extend(
            state_dict(&self.backbone)
                .into_iter()
                .map(|(n, t)| (join("backbone", &n), t)),
        );
        out
    }

    pub fn load_state(&mut self, tensors: &TensorMap) -> Result<()> {
        load_state(&mut self.backbone, "backbone", tensors)?;
        load_state(&mut self.head, "", tensors)
    }
}

/// Where frame features come from during training and evaluation.
#[derive(Clone, Copy)]
pub enum InputSource<'a> {
    /// Decode frames and run the model's backbone.
    Frames(&'a dyn FrameStore),
    /// Precomputed features; only valid for a frozen backbone.
    Features(&'a FeatureBank),
}

impl InputSource<'_> {
    fn features<'s>(
        &'s self,
        model: &Model,
        pair: &QueryVideoPair,
    ) -> Result<Cow<'s, Array2<f64>>> {
        match self {
            InputSource::Features(bank) => Ok(Cow::Borrowed(bank.get(&pair.video_id)?)),
            InputSource::Frames(store) => Ok(Cow::Owned(extract_features(
                &load_sequence(*store, pair)?,
                &model.backbone,
            )?)),
        }
    }
}

fn labels_of(pair: &QueryVideoPair) -> Result<Vec<usize>> {
    Ok(ground_truth(&pair.annotations)?
        .iter()
        .map(|s| s.index())
        .collect())
}

/// Fraction of positions where `pred` equals `truth`.
pub fn frame_accuracy(pred: &[RelevanceScore], truth: &[RelevanceScore]) -> Result<f64> {
    Ok(count_correct(pred, truth)? as f64 / truth.len() as f64)
}

pub fn count_correct(pred: &[RelevanceScore], truth: &[RelevanceScore]) -> Result<usize> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    Ok(pred.iter().zip(truth).filter(|(p, t)| p == t).count())
}

/// Micro-averaged exact-match accuracy over every frame of the given pairs.
pub fn accuracy_on_pairs(
    model: &Model,
    pairs: &[&QueryVideoPair],
    input: InputSource<'_>,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::config("cannot evaluate an empty split"));
    }
    let (mut correct, mut total) = (0usize, 0usize);
    for pair in pairs {
        let pred = model.predict_features(input.features(model, pair)?.view(), &pair.query)?;
        let truth = ground_truth(&pair.annotations)?;
        correct += count_correct(&pred.scores, &truth)?;
        total += truth.len();
    }
    Ok(correct as f64 / total as f64)
}

pub fn evaluate_accuracy(
    model: &Model,
    manifest: &DatasetManifest,
    split: Split,
    input: InputSource<'_>,
) -> Result<f64> {
    accuracy_on_pairs(model, &manifest.split_pairs(split), input)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// Absent when the manifest has no validation pairs.
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_model: Model,
    pub best_model: Model,
    /// 1-based epoch of `best_model`.
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub steps: usize,
}

/// Frames per backward chunk when the backbone is trained. Fixed so that
/// gradient summation order does not depend on the thread count.
const BACKWARD_CHUNK: usize = 4;

/// Backbone gradient for one video given `∂loss/∂features` of its padded
/// rows. Rows that copy the same original frame have their gradients summed
/// onto that frame.
fn backbone_gradient(
    backbone: &Backbone,
    seq: &FrameSequence,
    grad_rows: ArrayView2<f64>,
) -> Result<Backbone> {
    let n = seq.original_count();
    let mut grad_unique = Array2::<f64>::zeros((n, grad_rows.ncols()));
    for (i, row) in grad_rows.axis_iter(Axis(0)).enumerate() {
        let mut dst = grad_unique.row_mut(i % n);
        dst += &row;
    }
    let frames: Vec<_> = seq.originals().collect();
    let mut total = zeros_like(backbone);
    for (chunk_idx, chunk) in frames.chunks(BACKWARD_CHUNK).enumerate() {
        let parts = chunk
            .par_iter()
            .enumerate()
            .map(|(j, frame)| -> Result<Backbone> {
                let (_, cache) = backbone.forward_train(&frame_to_f64(frame))?;
                let mut g = zeros_like(backbone);
                backbone.backward(
                    &cache,
                    grad_unique.row(chunk_idx * BACKWARD_CHUNK + j),
                    &mut g,
                )?;
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        for g in &parts {
            add_assign(&mut total, g);
        }
    }
    Ok(total)
}

/// Trains on the manifest's train split, logging validation accuracy after
/// every epoch. One optimizer step per training video; videos are visited
/// in a seeded random order each epoch.
pub fn train(
    manifest: &DatasetManifest,
    input: InputSource<'_>,
    config: &TrainingConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let train_pairs = manifest.split_pairs(Split::Train);
    if train_pairs.is_empty() {
        return Err(Error::config("the training split is empty"));
    }
    let val_pairs = manifest.split_pairs(Split::Val);
    let dictionary = Dictionary::build(
        &train_pairs
            .iter()
            .map(|p| p.query.as_str())
            .collect::<Vec<_>>(),
    )?;
    let mut model = Model::new(config, dictionary)?;

    let bank_storage;
    let input = match (config.freeze_backbone, input) {
        (true, InputSource::Frames(store)) => {
            bank_storage = FeatureBank::compute(
                train_pairs.iter().chain(&val_pairs).copied(),
                store,
                &model.backbone,
            )?;
            InputSource::Features(&bank_storage)
        }
        (true, InputSource::Features(bank)) => {
            if bank.dim() != model.backbone.feature_dim() {
                return Err(Error::shape(format!(
                    "feature bank width {} does not match the {} backbone ({})",
                    bank.dim(),
                    model.backbone.kind(),
                    model.backbone.feature_dim()
                )));
            }
            input
        }
        (false, InputSource::Features(_)) => {
            return Err(Error::config(
                "a trainable backbone needs frames, not cached features",
            ));
        }
        (false, InputSource::Frames(_)) => input,
    };

    let labels: BTreeMap<&str, Vec<usize>> = train_pairs
        .iter()
        .map(|p| Ok((p.video_id.as_str(), labels_of(p)?)))
        .collect::<Result<_>>()?;
    let queries: BTreeMap<&str, Array1<f64>> = train_pairs
        .iter()
        .map(|p| {
            (
                p.video_id.as_str(),
                Array1::from(model.encode(&p.query).values),
            )
        })
        .collect();

    let adam_cfg = AdamConfig {
        lr: config.learning_rate,
        beta1: config.adam_beta1,
        beta2: config.adam_beta2,
        eps: config.adam_eps,
    };
    let mut head_opt = Adam::new(adam_cfg);
    let mut backbone_opt = Adam::new(adam_cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<&QueryVideoPair> = train_pairs.clone();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut steps = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut total) = (0.0, 0usize, 0usize);
        for pair in &order {
            let id = pair.video_id.as_str();
            let y = &labels[id];
            let q = queries[id].view();
            let (grads, seq) = match input {
                InputSource::Features(bank) => {
                    (model.head.loss_and_grad(bank.get(id)?.view(), q, y)?, None)
                }
                InputSource::Frames(store) => {
                    let seq = load_sequence(store, pair)?;
                    let rows = crate::features::tile_rows(
                        &extract_original_features(&seq, &model.backbone)?,
                        seq.len(),
                    )?;
                    (model.head.loss_and_grad(rows.view(), q, y)?, Some(seq))
                }
            };
            if !grads.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, step {steps}, video `{id}`"
                )));
            }
            loss_sum += grads.loss;
            correct += grads
                .logits
                .axis_iter(Axis(0))
                .zip(y)
                .filter(|(row, &label)| argmax(row.view()) == label)
                .count();
            total += y.len();
            if let Some(seq) = seq {
                let g = backbone_gradient(&model.backbone, &seq, grads.features.view())?;
                backbone_opt.step(&mut model.backbone, &g)?;
            }
            head_opt.step(&mut model.head, &grads.params)?;
            steps += 1;
        }

        let val_acc = if val_pairs.is_empty() {
            None
        } else {
            Some(accuracy_on_pairs(&model, &val_pairs, input)?)
        };
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_acc: correct as f64 / total as f64,
            val_acc,
        };
        tracing::info!(
            epoch,
            train_loss = entry.train_loss,
            train_acc = entry.train_acc,
            val_acc = ?entry.val_acc,
            "epoch finished"
        );
        let score = val_acc.unwrap_or(f64::NEG_INFINITY);
        if best
            .as_ref()
            .is_none_or(|(b, _, _)| score > *b || val_acc.is_none())
        {
            best = Some((score, epoch, model.clone()));
        }
        log.push(entry);
    }

    let (_, best_epoch, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        final_model: model,
        best_model,
        best_epoch,
        log,
        steps,
    })
}
