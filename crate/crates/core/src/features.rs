//! Frame features: backbone activations for every padded frame, plus the
//! on-disk cache (`<video_id>.feat`, a `[199, d]` little-endian `f32`
//! tensor) plus a `features.json` sidecar naming the backbone that made it.
//!
//! Padded frames are copies, so only the original frames go through the
//! backbone and rows are tiled cyclically afterwards. Padded rows are
//! therefore bit-identical to the rows they copy.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;

use serde::{Deserialize, Serialize};

use crate::backbone::Backbone;
use crate::codec::{decode_f32_tensor, encode_f32_tensor};
use crate::config::BackboneKind;
use crate::dataset::{load_sequence, FrameSequence, FrameStore, FrameTensor};
use crate::error::{from_json_slice, Error, Result};
use crate::manifest::QueryVideoPair;
use crate::PADDED_FRAMES;

pub fn frame_to_f64(frame: &FrameTensor) -> Array3<f64> {
    frame.data().mapv(f64::from)
}

/// Features of the original (unpadded) frames, one row each.
pub fn extract_original_features(seq: &FrameSequence, backbone: &Backbone) -> Result<Array2<f64>> {
    let rows = seq
        .originals()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|f| backbone.forward(&frame_to_f64(f)))
        .collect::<Result<Vec<_>>>()?;
    let d = backbone.feature_dim();
    let mut out = Array2::zeros((rows.len(), d));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
        dst.assign(&src);
    }
    Ok(out)
}

/// Repeats rows cyclically until there are `target` of them.
pub fn tile_rows(rows: &Array2<f64>, target: usize) -> Result<Array2<f64>> {
    let n = rows.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("no feature rows to tile".into()));
    }
    if n > target {
        return Err(Error::Overflow(format!(
            "{n} rows exceed the padded length {target}"
        )));
    }
    Ok(Array2::from_shape_fn((target, rows.ncols()), |(i, j)| {
        rows[[i % n, j]]
    }))
}

/// The `199 × d` feature matrix of a padded frame sequence.
pub fn extract_features(seq: &FrameSequence, backbone: &Backbone) -> Result<Array2<f64>> {
    tile_rows(&extract_original_features(seq, backbone)?, seq.len())
}

/// In-memory feature matrices keyed by video id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureBank {
    dim: usize,
    features: BTreeMap<String, Array2<f64>>,
}

impl FeatureBank {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            features: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn insert(&mut self, video_id: impl Into<String>, features: Array2<f64>) -> Result<()> {
        if features.dim() != (PADDED_FRAMES, self.dim) {
            return Err(Error::shape(format!(
                "feature matrix {:?}, expected ({PADDED_FRAMES}, {})",
                features.dim(),
                self.dim
            )));
        }
        self.features.insert(video_id.into(), features);
        Ok(())
    }

    pub fn get(&self, video_id: &str) -> Result<&Array2<f64>> {
        self.features.get(video_id).ok_or_else(|| Error::CacheMiss {
            video_id: video_id.to_string(),
        })
    }

    /// Extracts features for `pairs`, loading frames from `store`.
    pub fn compute<'a>(
        pairs: impl IntoIterator<Item = &'a QueryVideoPair>,
        store: &dyn FrameStore,
        backbone: &Backbone,
    ) -> Result<Self> {
        let mut bank = Self::new(backbone.feature_dim());
        for pair in pairs {
            let seq = load_sequence(store, pair)?;
            bank.insert(pair.video_id.clone(), extract_features(&seq, backbone)?)?;
        }
        Ok(bank)
    }
}

pub fn encode_feature_cache(features: &Array2<f64>) -> Vec<u8> {
    let (n, d) = features.dim();
    encode_f32_tensor(&[n as u32, d as u32], features.iter().map(|&v| v as f32))
}

pub fn decode_feature_cache(bytes: &[u8]) -> Result<Array2<f64>> {
    let (dims, data) = decode_f32_tensor(bytes, 2)?;
    if dims[0] != PADDED_FRAMES || dims[1] == 0 {
        return Err(Error::Decode(format!(
            "feature cache shape {dims:?}, expected [{PADDED_FRAMES}, d]"
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Decode(
            "feature cache holds non-finite values".into(),
        ));
    }
    Ok(Array2::from_shape_vec(
        (dims[0], dims[1]),
        data.into_iter().map(f64::from).collect(),
    )
    .expect("length checked by decoder"))
}

pub fn feature_cache_path(dir: &Path, video_id: &str) -> PathBuf {
    dir.join(format!("{video_id}.feat"))
}

/// Writes one `.feat` file per pair; returns the number written.
pub fn cache_features<'a>(
    pairs: impl IntoIterator<Item = &'a QueryVideoPair>,
    store: &dyn FrameStore,
    backbone: &Backbone,
    out_dir: &Path,
) -> Result<usize> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = 0;
    for pair in pairs {
        let seq = load_sequence(store, pair)?;
        let path = feature_cache_path(out_dir, &pair.video_id);
        let bytes = encode_feature_cache(&extract_features(&seq, backbone)?);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written += 1;
    }
    Ok(written)
}

/// Loads a cached feature matrix and checks its width against the backbone.
pub fn load_cached_features(
    dir: &Path,
    video_id: &str,
    expected_dim: usize,
) -> Result<Array2<f64>> {
    let path = feature_cache_path(dir, video_id);
    if !path.exists() {
        return Err(Error::CacheMiss {
            video_id: video_id.to_string(),
        });
    }
    let m = decode_feature_cache(&std::fs::read(&path).map_err(|e| Error::io(&path, e))?)?;
    if m.ncols() != expected_dim {
        return Err(Error::shape(format!(
            "{} has width {}, backbone produces {expected_dim}",
            path.display(),
            m.ncols()
        )));
    }
    Ok(m)
}

pub const FEATURE_META_FILE: &str = "features.json";

/// Which backbone produced a feature cache.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureCacheMeta {
    pub backbone: BackboneKind,
    pub feature_dim: usize,
    /// Same format as `Model::backbone_provenance`.
    pub provenance: String,
}

pub fn write_feature_meta(dir: &Path, meta: &FeatureCacheMeta) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(FEATURE_META_FILE);
    std::fs::write(&path, crate::json::to_canonical_string(meta)).map_err(|e| Error::io(&path, e))
}

pub fn read_feature_meta(dir: &Path) -> Result<FeatureCacheMeta> {
    let path = dir.join(FEATURE_META_FILE);
    from_json_slice(&std::fs::read(&path).map_err(|e| Error::io(&path, e))?)
}

/// Loads the cached features of every pair into a bank.
pub fn load_feature_bank<'a>(
    dir: &Path,
    pairs: impl IntoIterator<Item = &'a QueryVideoPair>,
    expected_dim: usize,
) -> Result<FeatureBank> {
    let mut bank = FeatureBank::new(expected_dim);
    for p in pairs {
        bank.insert(
            p.video_id.clone(),
            load_cached_features(dir, &p.video_id, expected_dim)?,
        )?;
    }
    Ok(bank)
}
