//! Dataset assembly from a raw directory:
//!
//! ```text
//! raw-dir/
//!   queries.csv                 video_id,query
//!   annotations.csv             video_id,annotator,frame,label
//!   frames/<video_id>/*.png     frames already sampled at 1 fps, or
//!   videos/<video_id>.<ext>     a video file, sampled with ffmpeg
//! ```
//!
//! Annotations index original frames (0-based). Votes are merged after
//! cyclic padding, so padded positions repeat the labels of the frames
//! they copy.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::Deserialize;

use super::frame_cache::write_frame_cache;
use super::frames::{pad_cyclic, prepare_sequence, resize_frame};
use super::labels::map_label;
use super::sampling::{sample_frames, FfmpegVideo};
use super::split::split_dataset;
use super::store::{list_frame_files, write_frames};
use crate::error::{Error, Result};
use crate::manifest::{AnnotationSet, DatasetManifest, QueryVideoPair};
use crate::PADDED_FRAMES;

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct QueryRow {
    pub video_id: String,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct AnnotationRow {
    pub video_id: String,
    pub annotator: String,
    pub frame: usize,
    pub label: String,
}

fn parse_csv<T: serde::de::DeserializeOwned>(bytes: &[u8], what: &str) -> Result<Vec<T>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bytes)
        .deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Schema {
                path: format!("{what}[{i}]"),
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn parse_queries_csv(bytes: &[u8]) -> Result<Vec<QueryRow>> {
    parse_csv(bytes, "queries")
}

pub fn parse_annotations_csv(bytes: &[u8]) -> Result<Vec<AnnotationRow>> {
    parse_csv(bytes, "annotations")
}

/// Builds one video's padded annotation set from its raw rows.
///
/// Every annotator must label every original frame exactly once. Annotators
/// are ordered by id.
pub fn assemble_annotations(rows: &[&AnnotationRow], frame_count: usize) -> Result<AnnotationSet> {
    if frame_count == 0 {
        return Err(Error::EmptyInput("video has no frames".into()));
    }
    let mut by_annotator: BTreeMap<&str, Vec<Option<u8>>> = BTreeMap::new();
    for row in rows {
        if row.frame >= frame_count {
            return Err(Error::shape(format!(
                "annotator `{}` labels frame {} of a {frame_count}-frame video",
                row.annotator, row.frame
            )));
        }
        let score = map_label(&row.label)?;
        let slots = by_annotator
            .entry(row.annotator.as_str())
            .or_insert_with(|| vec![None; frame_count]);
        if slots[row.frame].replace(score.value()).is_some() {
            return Err(Error::shape(format!(
                "annotator `{}` labels frame {} twice",
                row.annotator, row.frame
            )));
        }
    }
    if by_annotator.is_empty() {
        return Err(Error::EmptyInput("video has no annotations".into()));
    }
    let mut original = vec![Vec::with_capacity(by_annotator.len()); frame_count];
    for (annotator, slots) in &by_annotator {
        for (frame, slot) in slots.iter().enumerate() {
            let v = slot.ok_or_else(|| {
                Error::shape(format!("annotator `{annotator}` skipped frame {frame}"))
            })?;
            original[frame].push(v);
        }
    }
    Ok(AnnotationSet {
        per_frame: pad_cyclic(&original, PADDED_FRAMES)?,
    })
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub ratios: [f64; 3],
    pub seed: u64,
    /// Also write normalized frame caches under `<out_dir>/frame_cache/`.
    pub frame_cache: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            ratios: super::DEFAULT_SPLIT_RATIOS,
            seed: 0,
            frame_cache: false,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn sample_video(raw_dir: &Path, video_id: &str) -> Result<Vec<RgbImage>> {
    let frame_dir = raw_dir.join("frames").join(video_id);
    if frame_dir.is_dir() {
        return list_frame_files(&frame_dir)?
            .iter()
            .map(|p| Ok(resize_frame(&image::open(p)?.to_rgb8())))
            .collect();
    }
    let videos = raw_dir.join("videos");
    let video = std::fs::read_dir(&videos)
        .map_err(|e| Error::io(&videos, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .find(|p| p.file_stem().and_then(|s| s.to_str()) == Some(video_id))
        .ok_or_else(|| Error::EmptyInput(format!("no frames or video for `{video_id}`")))?;
    sample_frames(&mut FfmpegVideo::open(video)?, 1.0)
}

/// Samples, annotates and splits every video in `raw_dir`, writing frames
/// under `out_dir/frames/<video_id>/`. Videos are processed in parallel; the
/// result is independent of the worker count.
pub fn build_dataset(
    raw_dir: &Path,
    out_dir: &Path,
    opts: &BuildOptions,
) -> Result<DatasetManifest> {
    let queries = parse_queries_csv(&read(&raw_dir.join("queries.csv"))?)?;
    let annotations = parse_annotations_csv(&read(&raw_dir.join("annotations.csv"))?)?;

    let mut by_video: BTreeMap<&str, Vec<&AnnotationRow>> = BTreeMap::new();
    for row in &annotations {
        by_video.entry(row.video_id.as_str()).or_default().push(row);
    }
    let mut query_of: BTreeMap<&str, &str> = BTreeMap::new();
    for q in &queries {
        if query_of.insert(&q.video_id, &q.query).is_some() {
            return Err(Error::config(format!(
                "video `{}` has two queries",
                q.video_id
            )));
        }
    }

    let ids: Vec<&str> = query_of.keys().copied().collect();
    let pairs = ids
        .par_iter()
        .map(|&id| -> Result<QueryVideoPair> {
            let frames = sample_video(raw_dir, id)?;
            if frames.len() > PADDED_FRAMES {
                return Err(Error::Overflow(format!(
                    "video `{id}` has {} frames, at most {PADDED_FRAMES} supported",
                    frames.len()
                )));
            }
            let rows = by_video.get(id).map(Vec::as_slice).unwrap_or(&[]);
            let ann = assemble_annotations(rows, frames.len())?;
            let frame_dir = PathBuf::from("frames").join(id);
            write_frames(&out_dir.join(&frame_dir), &frames)?;
            if opts.frame_cache {
                write_frame_cache(
                    &out_dir.join("frame_cache"),
                    id,
                    &prepare_sequence(&frames)?,
                )?;
            }
            Ok(QueryVideoPair {
                video_id: id.to_string(),
                query: query_of[id].to_string(),
                frame_dir,
                annotations: ann,
                original_frame_count: frames.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    split_dataset(pairs, opts.ratios, opts.seed)
}
