//! Checkpoint directories.
//!
//! ```text
//! ckpt/
//!   config.json         TrainingConfig
//!   dictionary.json     word → index
//!   meta.json           CheckpointMeta
//!   weights.qvw         final-epoch tensors
//!   weights_best.qvw    best-validation tensors
//!   training_log.csv    epoch,train_loss,train_acc,val_acc
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{BackboneKind, FusionMode, TrainingConfig};
use crate::error::{from_json_slice, Error, Result};
use crate::generator::{EpochLog, Model, TrainOutcome};
use crate::json::to_canonical_string;
use crate::query::Dictionary;
use crate::weights::{load_weights, save_weights};

pub const CONFIG_FILE: &str = "config.json";
pub const DICTIONARY_FILE: &str = "dictionary.json";
pub const META_FILE: &str = "meta.json";
pub const FINAL_WEIGHTS_FILE: &str = "weights.qvw";
pub const BEST_WEIGHTS_FILE: &str = "weights_best.qvw";
pub const LOG_FILE: &str = "training_log.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub feature_dim: usize,
    pub vocab_size: usize,
    pub fusion_mode: FusionMode,
    pub backbone: BackboneKind,
    pub backbone_provenance: String,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Manifest the model was trained on, if known.
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightsChoice {
    #[default]
    Final,
    Best,
}

impl WeightsChoice {
    fn file(self) -> &'static str {
        match self {
            WeightsChoice::Final => FINAL_WEIGHTS_FILE,
            WeightsChoice::Best => BEST_WEIGHTS_FILE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
    pub log: Vec<EpochLog>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn encode_training_log(log: &[EpochLog]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in log {
        w.serialize(row).map_err(|e| Error::Decode(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Decode(e.to_string()))
}

pub fn decode_training_log(bytes: &[u8]) -> Result<Vec<EpochLog>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Schema {
                path: format!("training_log[{i}]"),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Writes a training run to `dir`, creating it if needed.
pub fn save_checkpoint(dir: &Path, outcome: &TrainOutcome, manifest: Option<&Path>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let model = &outcome.final_model;
    let meta = CheckpointMeta {
        feature_dim: model.backbone.feature_dim(),
        vocab_size: model.dictionary.len(),
        fusion_mode: model.config.fusion_mode,
        backbone: model.config.backbone,
        backbone_provenance: model.backbone_provenance(),
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.log.len(),
        manifest: manifest.map(Path::to_path_buf),
    };
    write(&dir.join(CONFIG_FILE), to_canonical_string(&model.config))?;
    model.dictionary.save(&dir.join(DICTIONARY_FILE))?;
    write(&dir.join(META_FILE), to_canonical_string(&meta))?;
    save_weights(&dir.join(FINAL_WEIGHTS_FILE), &model.state())?;
    save_weights(&dir.join(BEST_WEIGHTS_FILE), &outcome.best_model.state())?;
    write(&dir.join(LOG_FILE), encode_training_log(&outcome.log)?)
}

pub fn load_checkpoint(dir: &Path, which: WeightsChoice) -> Result<Checkpoint> {
    let config: TrainingConfig = from_json_slice(&read(&dir.join(CONFIG_FILE))?)?;
    let dictionary = Dictionary::load(&dir.join(DICTIONARY_FILE))?;
    let meta: CheckpointMeta = from_json_slice(&read(&dir.join(META_FILE))?)?;
    if meta.vocab_size != dictionary.len() || meta.fusion_mode != config.fusion_mode {
        return Err(Error::config(format!(
            "{} disagrees with the checkpoint's config or dictionary",
            META_FILE
        )));
    }
    // Every tensor comes from the weight file; don't touch the original
    // pretrained bundle, which may not exist on this machine.
    let mut model = Model::new(
        &TrainingConfig {
            backbone_weights: None,
            ..config.clone()
        },
        dictionary,
    )?;
    model.load_state(&load_weights(&dir.join(which.file()))?)?;
    model.config = config;
    let log = decode_training_log(&read(&dir.join(LOG_FILE))?)?;
    Ok(Checkpoint { model, meta, log })
}
