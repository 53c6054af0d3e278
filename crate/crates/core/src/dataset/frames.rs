use std::sync::Arc;

use image::imageops::FilterType;
use image::RgbImage;
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::{FRAME_SIZE, PADDED_FRAMES};

/// Per-channel RGB mean of the training frames, on the 0..1 scale.
pub const CHANNEL_MEAN: [f32; 3] = [0.4280, 0.4106, 0.3589];
/// Per-channel RGB standard deviation, on the 0..1 scale.
pub const CHANNEL_STD: [f32; 3] = [0.2737, 0.2631, 0.2601];

/// A normalized 3×128×128 frame, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor(Array3<f32>);

impl FrameTensor {
    /// Wraps already-normalized data. The shape must be 3×128×128.
    pub fn from_normalized(data: Array3<f32>) -> Result<Self> {
        if data.dim() != (3, FRAME_SIZE, FRAME_SIZE) {
            return Err(Error::shape(format!(
                "frame tensor is {:?}, expected (3, {FRAME_SIZE}, {FRAME_SIZE})",
                data.dim()
            )));
        }
        Ok(Self(data))
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.0
    }

    pub fn into_inner(self) -> Array3<f32> {
        self.0
    }
}

/// Bilinear resize to 128×128; a no-op for frames already at that size.
pub fn resize_frame(img: &RgbImage) -> RgbImage {
    if img.dimensions() == (FRAME_SIZE as u32, FRAME_SIZE as u32) {
        img.clone()
    } else {
        image::imageops::resize(
            img,
            FRAME_SIZE as u32,
            FRAME_SIZE as u32,
            FilterType::Triangle,
        )
    }
}

/// Applies `(x - mean_c) / std_c` in place to values on the 0..1 scale.
pub fn normalize_values(values: &mut Array3<f32>) {
    for (c, mut plane) in values.outer_iter_mut().enumerate() {
        let (m, s) = (CHANNEL_MEAN[c], CHANNEL_STD[c]);
        plane.mapv_inplace(|x| (x - m) / s);
    }
}

/// Inverse of [`normalize_values`].
pub fn denormalize_values(values: &mut Array3<f32>) {
    for (c, mut plane) in values.outer_iter_mut().enumerate() {
        let (m, s) = (CHANNEL_MEAN[c], CHANNEL_STD[c]);
        plane.mapv_inplace(|x| x * s + m);
    }
}

/// Normalizes a 128×128 RGB frame.
pub fn normalize(img: &RgbImage) -> Result<FrameTensor> {
    let (w, h) = img.dimensions();
    if (w as usize, h as usize) != (FRAME_SIZE, FRAME_SIZE) {
        return Err(Error::shape(format!(
            "frame is {w}×{h}, expected {FRAME_SIZE}×{FRAME_SIZE}"
        )));
    }
    let mut values = Array3::<f32>::zeros((3, FRAME_SIZE, FRAME_SIZE));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            values[[c, y as usize, x as usize]] = f32::from(px[c]) / 255.0;
        }
    }
    normalize_values(&mut values);
    Ok(FrameTensor(values))
}

/// Maps a normalized frame back to 8-bit RGB.
pub fn denormalize(frame: &FrameTensor) -> RgbImage {
    let mut values = frame.0.clone();
    denormalize_values(&mut values);
    let (_, h, w) = values.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| {
            (values[[c, y as usize, x as usize]] * 255.0)
                .round()
                .clamp(0.0, 255.0) as u8
        };
        image::Rgb([px(0), px(1), px(2)])
    })
}

/// Repeats `items` from the start until `target` entries exist:
/// `out[i] = items[i % items.len()]`.
pub fn pad_cyclic<T: Clone>(items: &[T], target: usize) -> Result<Vec<T>> {
    if items.is_empty() {
        return Err(Error::EmptyInput("cannot pad an empty sequence".into()));
    }
    if items.len() > target {
        return Err(Error::Overflow(format!(
            "{} items exceed the padded length {target}",
            items.len()
        )));
    }
    Ok((0..target)
        .map(|i| items[i % items.len()].clone())
        .collect())
}

/// A video's frames on the fixed-length padded timeline.
///
/// Padded positions share storage with the original frame they repeat, so
/// `frame(i)` and `frame(i % original_count)` are the same tensor.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    frames: Vec<Arc<FrameTensor>>,
    original_count: usize,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn original_count(&self) -> usize {
        self.original_count
    }

    pub fn frame(&self, i: usize) -> &FrameTensor {
        &self.frames[i]
    }

    pub fn frames(&self) -> impl Iterator<Item = &FrameTensor> {
        self.frames.iter().map(|f| f.as_ref())
    }

    /// The distinct frames, in time order.
    pub fn originals(&self) -> impl Iterator<Item = &FrameTensor> {
        self.frames[..self.original_count]
            .iter()
            .map(|f| f.as_ref())
    }
}

/// Pads normalized frames cyclically to `target` (199 for the dataset).
pub fn pad_frames(frames: Vec<FrameTensor>, target: usize) -> Result<FrameSequence> {
    let original_count = frames.len();
    let shared: Vec<Arc<FrameTensor>> = frames.into_iter().map(Arc::new).collect();
    Ok(FrameSequence {
        frames: pad_cyclic(&shared, target)?,
        original_count,
    })
}

/// Resizes, normalizes and pads raw frames to the standard 199-frame timeline.
pub fn prepare_sequence(images: &[RgbImage]) -> Result<FrameSequence> {
    let frames = images
        .iter()
        .map(|img| normalize(&resize_frame(img)))
        .collect::<Result<Vec<_>>>()?;
    pad_frames(frames, PADDED_FRAMES)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pads_three_to_seven() {
        let out = pad_cyclic(&["f0", "f1", "f2"], 7).unwrap();
        assert_eq!(out, ["f0", "f1", "f2", "f0", "f1", "f2", "f0"]);
    }

    #[test]
    fn full_length_is_unchanged() {
        let items: Vec<usize> = (0..199).collect();
        assert_eq!(pad_cyclic(&items, 199).unwrap(), items);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn seventy_five_frames_follow_index_arithmetic() {
        let items: Vec<usize> = (0..75).collect();
        let out = pad_cyclic(&items, 199).unwrap();
        // Independent oracle: position p repeats source frame p mod 75.
        for p in 75..150 {
            assert_eq!(out[p], p - 75);
        }
        for p in 150..199 {
            assert_eq!(out[p], p - 150);
        }
        assert_eq!(out[198], 48);
    }

    #[test]
    fn padding_errors() {
        assert!(matches!(
            pad_cyclic::<u8>(&[], 5),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(pad_cyclic(&[1, 2, 3], 2), Err(Error::Overflow(_))));
    }

    #[test]
    fn normalize_rejects_wrong_size() {
        let img = RgbImage::new(64, 64);
        assert!(matches!(normalize(&img), Err(Error::Shape(_))));
    }

    #[test]
    fn resize_is_bilinear_and_exact_for_flat_images() {
        let img = RgbImage::from_pixel(320, 240, image::Rgb([10, 200, 30]));
        let out = resize_frame(&img);
        assert_eq!(out.dimensions(), (128, 128));
        assert!(out.pixels().all(|p| p.0 == [10, 200, 30]));
    }

    #[test]
    fn normalized_values_use_channel_constants() {
        let img = RgbImage::from_pixel(128, 128, image::Rgb([255, 0, 128]));
        let t = normalize(&img).unwrap();
        let d = t.data();
        assert!((d[[0, 5, 5]] - (1.0 - 0.4280) / 0.2737).abs() < 1e-6);
        assert!((d[[1, 5, 5]] - (0.0 - 0.4106) / 0.2631).abs() < 1e-6);
        assert!((d[[2, 5, 5]] - (128.0 / 255.0 - 0.3589) / 0.2601).abs() < 1e-6);
        assert_eq!(denormalize(&t), img);
    }

    #[test]
    fn sequence_shares_padded_copies() {
        let imgs: Vec<RgbImage> = (0..5u8)
            .map(|i| RgbImage::from_pixel(128, 128, image::Rgb([i * 40, 0, 0])))
            .collect();
        let seq = prepare_sequence(&imgs).unwrap();
        assert_eq!(seq.len(), 199);
        assert_eq!(seq.original_count(), 5);
        for i in 0..199 {
            assert_eq!(seq.frame(i), seq.frame(i % 5));
        }
    }

    proptest! {
        #[test]
        fn denormalize_inverts_normalize(vals in proptest::collection::vec(0.0f32..=1.0, 3 * 4 * 4)) {
            let x = Array3::from_shape_vec((3, 4, 4), vals).unwrap();
            let mut y = x.clone();
            normalize_values(&mut y);
            denormalize_values(&mut y);
            for (a, b) in x.iter().zip(y.iter()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }

        #[test]
        fn cyclic_padding_property(n in 1usize..=199) {
            let items: Vec<usize> = (0..n).map(|i| i * 7 + 1).collect();
            let out = pad_cyclic(&items, 199).unwrap();
            prop_assert_eq!(out.len(), 199);
            for i in 0..199 {
                prop_assert_eq!(out[i], out[i % n]);
            }
        }
    }
}
