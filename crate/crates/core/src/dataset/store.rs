use std::path::{Path, PathBuf};

use image::RgbImage;

use super::frames::{prepare_sequence, resize_frame, FrameSequence};
use crate::error::{Error, Result};
use crate::manifest::QueryVideoPair;

/// Supplies the sampled frames of a query-video pair.
pub trait FrameStore: Send + Sync {
    /// The original (unpadded) frames, 128×128 RGB, in time order.
    fn load_frames(&self, pair: &QueryVideoPair) -> Result<Vec<RgbImage>>;

    /// Encoded image bytes of one original frame.
    fn frame_bytes(&self, pair: &QueryVideoPair, index: usize) -> Result<Vec<u8>>;
}

/// Loads a pair's frames, then normalizes and pads them to 199.
pub fn load_sequence(store: &dyn FrameStore, pair: &QueryVideoPair) -> Result<FrameSequence> {
    let frames = store.load_frames(pair)?;
    if frames.len() != pair.original_frame_count {
        return Err(Error::shape(format!(
            "video `{}` has {} frames, manifest says {}",
            pair.video_id,
            frames.len(),
            pair.original_frame_count
        )));
    }
    prepare_sequence(&frames)
}

const FRAME_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// Image files directly inside `dir`, sorted by file name.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_frame = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if is_frame && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Frames stored as image files under `root/<frame_dir>/`.
#[derive(Debug, Clone)]
pub struct DiskFrameStore {
    root: PathBuf,
}

impl DiskFrameStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn files(&self, pair: &QueryVideoPair) -> Result<Vec<PathBuf>> {
        let dir = self.root.join(&pair.frame_dir);
        let mut files = list_frame_files(&dir)?;
        if files.len() < pair.original_frame_count {
            return Err(Error::shape(format!(
                "{} holds {} frames, expected {}",
                dir.display(),
                files.len(),
                pair.original_frame_count
            )));
        }
        files.truncate(pair.original_frame_count);
        Ok(files)
    }
}

impl FrameStore for DiskFrameStore {
    fn load_frames(&self, pair: &QueryVideoPair) -> Result<Vec<RgbImage>> {
        self.files(pair)?
            .iter()
            .map(|path| {
                let img = image::open(path)?.to_rgb8();
                Ok(resize_frame(&img))
            })
            .collect()
    }

    fn frame_bytes(&self, pair: &QueryVideoPair, index: usize) -> Result<Vec<u8>> {
        let files = self.files(pair)?;
        let path = files.get(index).ok_or_else(|| {
            Error::shape(format!(
                "frame {index} out of range for `{}` ({} frames)",
                pair.video_id, pair.original_frame_count
            ))
        })?;
        std::fs::read(path).map_err(|e| Error::io(path, e))
    }
}

/// PNG-encodes a frame.
pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Writes frames as `000000.png`, `000001.png`, … into `dir`.
pub fn write_frames(dir: &Path, frames: &[RgbImage]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, frame) in frames.iter().enumerate() {
        let path = dir.join(format!("{i:06}.png"));
        std::fs::write(&path, encode_png(frame)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
