//! Normalized frame cache: `<video_id>.frames.bin` holds the padded sequence
//! as a 199×3×128×128 `f32` tensor; `<video_id>.frames.json` records the
//! original frame count and the normalization constants used.

use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::frames::{pad_frames, FrameSequence, FrameTensor, CHANNEL_MEAN, CHANNEL_STD};
use crate::codec::{decode_f32_tensor, encode_f32_tensor};
use crate::error::{from_json_slice, Error, Result};
use crate::{FRAME_SIZE, PADDED_FRAMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameCacheSidecar {
    pub video_id: String,
    pub original_frame_count: usize,
    pub shape: [usize; 4],
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

pub fn encode_frame_cache(seq: &FrameSequence) -> Vec<u8> {
    let dims = [seq.len() as u32, 3, FRAME_SIZE as u32, FRAME_SIZE as u32];
    encode_f32_tensor(&dims, seq.frames().flat_map(|f| f.data().iter().copied()))
}

/// Decodes a frame cache body into its frames (all 199 of them).
pub fn decode_frame_cache(bytes: &[u8]) -> Result<Vec<FrameTensor>> {
    let (dims, data) = decode_f32_tensor(bytes, 4)?;
    if dims != [PADDED_FRAMES, 3, FRAME_SIZE, FRAME_SIZE] {
        return Err(Error::Decode(format!(
            "frame cache shape {dims:?}, expected [{PADDED_FRAMES}, 3, {FRAME_SIZE}, {FRAME_SIZE}]"
        )));
    }
    let per_frame = 3 * FRAME_SIZE * FRAME_SIZE;
    data.chunks_exact(per_frame)
        .map(|chunk| {
            let arr = Array3::from_shape_vec((3, FRAME_SIZE, FRAME_SIZE), chunk.to_vec())
                .expect("chunk length matches shape");
            FrameTensor::from_normalized(arr)
        })
        .collect()
}

fn paths(dir: &Path, video_id: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{video_id}.frames.bin")),
        dir.join(format!("{video_id}.frames.json")),
    )
}

pub fn write_frame_cache(dir: &Path, video_id: &str, seq: &FrameSequence) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (bin, json) = paths(dir, video_id);
    std::fs::write(&bin, encode_frame_cache(seq)).map_err(|e| Error::io(&bin, e))?;
    let sidecar = FrameCacheSidecar {
        video_id: video_id.to_string(),
        original_frame_count: seq.original_count(),
        shape: [seq.len(), 3, FRAME_SIZE, FRAME_SIZE],
        mean: CHANNEL_MEAN,
        std: CHANNEL_STD,
    };
    std::fs::write(&json, crate::json::to_canonical_string(&sidecar))
        .map_err(|e| Error::io(&json, e))
}

pub fn read_frame_cache(dir: &Path, video_id: &str) -> Result<FrameSequence> {
    let (bin, json) = paths(dir, video_id);
    if !bin.exists() {
        return Err(Error::CacheMiss {
            video_id: video_id.to_string(),
        });
    }
    let sidecar: FrameCacheSidecar =
        from_json_slice(&std::fs::read(&json).map_err(|e| Error::io(&json, e))?)?;
    if sidecar.mean != CHANNEL_MEAN || sidecar.std != CHANNEL_STD {
        return Err(Error::Decode(format!(
            "{} was normalized with different constants",
            bin.display()
        )));
    }
    let mut frames = decode_frame_cache(&std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?)?;
    let n = sidecar.original_frame_count;
    if n == 0 || n > frames.len() {
        return Err(Error::Decode(format!("bad original frame count {n}")));
    }
    frames.truncate(n);
    pad_frames(frames, PADDED_FRAMES)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::frames::prepare_sequence;
    use image::RgbImage;

    #[test]
    fn cache_round_trip() {
        let imgs: Vec<RgbImage> = (0..4u8)
            .map(|i| RgbImage::from_fn(128, 128, |x, y| image::Rgb([i, x as u8, y as u8])))
            .collect();
        let seq = prepare_sequence(&imgs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_frame_cache(dir.path(), "vid", &seq).unwrap();
        let bytes = std::fs::read(dir.path().join("vid.frames.bin")).unwrap();
        assert_eq!(
            &bytes[..16],
            &[199, 0, 0, 0, 3, 0, 0, 0, 128, 0, 0, 0, 128, 0, 0, 0]
        );
        let back = read_frame_cache(dir.path(), "vid").unwrap();
        assert_eq!(back.original_count(), 4);
        for i in 0..199 {
            assert_eq!(back.frame(i), seq.frame(i));
        }
        assert!(matches!(
            read_frame_cache(dir.path(), "other"),
            Err(Error::CacheMiss { video_id }) if video_id == "other"
        ));
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let bytes = encode_f32_tensor(&[1, 3, 2, 2], [0.0; 12]);
        assert!(matches!(decode_frame_cache(&bytes), Err(Error::Decode(_))));
    }
}
