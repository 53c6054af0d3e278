//! Uniform frame sampling from videos.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use image::RgbImage;
use serde::Deserialize;

use super::frames::resize_frame;
use crate::error::{Error, Result};

/// Anything that can hand out frames on a uniform time grid.
pub trait VideoSource {
    fn duration_secs(&self) -> f64;

    /// Decodes up to `count` frames, the ones shown at `t = j / rate`.
    fn decode_uniform(&mut self, rate: f64, count: usize) -> Result<Vec<RgbImage>>;
}

/// Samples `rate` frames per elapsed second, resized to 128×128.
///
/// A video of duration `D` seconds yields `floor(D * rate)` frames.
pub fn sample_frames(video: &mut dyn VideoSource, rate: f64) -> Result<Vec<RgbImage>> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::config(format!(
            "sampling rate {rate} must be positive"
        )));
    }
    let duration = video.duration_secs();
    if !duration.is_finite() || duration < 0.0 {
        return Err(Error::Decode(format!("invalid duration {duration}")));
    }
    let count = (duration * rate + 1e-6).floor() as usize;
    if count == 0 {
        return Err(Error::EmptyInput(format!(
            "video of {duration:.3}s has no full sampling interval"
        )));
    }
    let frames = video.decode_uniform(rate, count)?;
    if frames.is_empty() {
        return Err(Error::Decode("decoder produced no frames".into()));
    }
    if frames.len() < count {
        tracing::warn!(
            expected = count,
            decoded = frames.len(),
            "video ended early"
        );
    }
    Ok(frames.iter().take(count).map(resize_frame).collect())
}

/// A clip already decoded into memory at a constant frame rate.
#[derive(Debug, Clone)]
pub struct DecodedClip {
    pub fps: f64,
    pub frames: Vec<RgbImage>,
}

impl VideoSource for DecodedClip {
    fn duration_secs(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    fn decode_uniform(&mut self, rate: f64, count: usize) -> Result<Vec<RgbImage>> {
        Ok((0..count)
            .map(|j| ((j as f64 / rate) * self.fps + 1e-9).floor() as usize)
            .take_while(|&idx| idx < self.frames.len())
            .map(|idx| self.frames[idx].clone())
            .collect())
    }
}

#[derive(Deserialize)]
struct Probe {
    format: ProbeFormat,
    #[serde(default)]
    streams: Vec<ProbeStream>,
}

#[derive(Deserialize)]
struct ProbeFormat {
    duration: Option<String>,
}

#[derive(Deserialize)]
struct ProbeStream {
    width: Option<u32>,
    height: Option<u32>,
}

/// A video file decoded through the `ffmpeg`/`ffprobe` command-line tools.
#[derive(Debug, Clone)]
pub struct FfmpegVideo {
    path: PathBuf,
    duration: f64,
    width: u32,
    height: u32,
}

impl FfmpegVideo {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let out = Command::new("ffprobe")
            .args(["-v", "error", "-select_streams", "v:0"])
            .args(["-show_entries", "format=duration:stream=width,height"])
            .args(["-print_format", "json"])
            .arg(&path)
            .output()
            .map_err(|e| Error::Decode(format!("cannot run ffprobe: {e}")))?;
        if !out.status.success() {
            return Err(Error::Decode(format!(
                "ffprobe failed on {}: {}",
                path.display(),
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let probe: Probe = serde_json::from_slice(&out.stdout)
            .map_err(|e| Error::Decode(format!("unreadable ffprobe output: {e}")))?;
        let duration = probe
            .format
            .duration
            .as_deref()
            .and_then(|d| d.parse::<f64>().ok())
            .unwrap_or(0.0);
        let stream = probe
            .streams
            .first()
            .ok_or_else(|| Error::Decode(format!("{} has no video stream", path.display())))?;
        let (width, height) = match (stream.width, stream.height) {
            (Some(w), Some(h)) if w > 0 && h > 0 => (w, h),
            _ => return Err(Error::Decode("video stream has no dimensions".into())),
        };
        Ok(Self {
            path,
            duration,
            width,
            height,
        })
    }
}

impl VideoSource for FfmpegVideo {
    fn duration_secs(&self) -> f64 {
        self.duration
    }

    fn decode_uniform(&mut self, rate: f64, count: usize) -> Result<Vec<RgbImage>> {
        let mut child = Command::new("ffmpeg")
            .args(["-v", "error", "-i"])
            .arg(&self.path)
            .args(["-vf", &format!("fps={rate}:start_time=0:round=down")])
            .args(["-frames:v", &count.to_string()])
            .args(["-f", "rawvideo", "-pix_fmt", "rgb24", "-"])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| Error::Decode(format!("cannot run ffmpeg: {e}")))?;
        let mut raw = Vec::new();
        child
            .stdout
            .take()
            .expect("stdout is piped")
            .read_to_end(&mut raw)
            .map_err(|e| Error::io(&self.path, e))?;
        let status = child.wait().map_err(|e| Error::io(&self.path, e))?;
        if !status.success() {
            return Err(Error::Decode(format!(
                "ffmpeg failed on {}",
                self.path.display()
            )));
        }
        let frame_bytes = self.width as usize * self.height as usize * 3;
        Ok(raw
            .chunks_exact(frame_bytes)
            .filter_map(|chunk| RgbImage::from_raw(self.width, self.height, chunk.to_vec()))
            .collect())
    }
}
