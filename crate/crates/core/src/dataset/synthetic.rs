//! Procedurally rendered query-video pairs with known relevance.
//!
//! Every frame shows colored "concepts" and is either high or low quality.
//! Its true score is `2 * relevant + high_quality`, so the four classes are
//! Very Good (relevant, sharp), Good (relevant, washed out), Not Good
//! (irrelevant, sharp) and Bad (irrelevant, washed out). What "relevant"
//! means depends on the [`SeparabilityRule`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::frames::pad_cyclic;
use super::split::{split_dataset, DEFAULT_SPLIT_RATIOS};
use super::store::{encode_png, write_frames, FrameStore};
use crate::error::{Error, Result};
use crate::manifest::{AnnotationSet, DatasetManifest, QueryVideoPair, RelevanceScore};
use crate::{FRAME_SIZE, PADDED_FRAMES};

const PALETTE: [[u8; 3]; 8] = [
    [220, 40, 40],
    [40, 180, 60],
    [40, 80, 220],
    [230, 210, 40],
    [200, 50, 200],
    [40, 200, 210],
    [240, 130, 30],
    [120, 60, 160],
];

pub const DEFAULT_CONCEPTS: [&str; 4] = ["beach", "city", "forest", "snow"];
const FILLERS: [&str; 6] = ["video", "official", "hd", "live", "best", "new"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparabilityRule {
    /// Each frame shows one concept; it is relevant iff that concept is the
    /// one named in the query.
    QueryMatch,
    /// Each frame shows a subset of four concepts, one per quadrant; it is
    /// relevant iff the queried concept is present (query bit AND frame bit).
    Gating,
    /// Each frame shows one concept; relevance depends only on the concept
    /// (the first half of the vocabulary is relevant) and ignores the query.
    QueryIndependent,
}

impl fmt::Display for SeparabilityRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeparabilityRule::QueryMatch => "query_match",
            SeparabilityRule::Gating => "gating",
            SeparabilityRule::QueryIndependent => "query_independent",
        })
    }
}

impl FromStr for SeparabilityRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "query_match" => Ok(SeparabilityRule::QueryMatch),
            "gating" => Ok(SeparabilityRule::Gating),
            "query_independent" => Ok(SeparabilityRule::QueryIndependent),
            other => Err(Error::config(format!(
                "unknown separability rule `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_pairs: usize,
    /// Concept words; each gets its own color.
    pub vocab: Vec<String>,
    pub rule: SeparabilityRule,
    /// Probability that an annotator's vote is replaced by a different label.
    pub noise: f64,
    pub annotators: usize,
    /// Inclusive range of original frame counts.
    pub min_frames: usize,
    pub max_frames: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_pairs: 50,
            vocab: DEFAULT_CONCEPTS.iter().map(|s| s.to_string()).collect(),
            rule: SeparabilityRule::QueryMatch,
            noise: 0.0,
            annotators: 5,
            min_frames: 20,
            max_frames: 60,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let k = self.vocab.len();
        if k < 2 {
            return Err(Error::config(
                "synthetic vocabulary needs at least 2 concepts",
            ));
        }
        if k > PALETTE.len() {
            return Err(Error::config(format!(
                "at most {} concepts supported",
                PALETTE.len()
            )));
        }
        if self.rule == SeparabilityRule::Gating && k != 4 {
            return Err(Error::config(
                "the gating rule uses exactly 4 concepts (one per quadrant)",
            ));
        }
        let mut words: Vec<&str> = self.vocab.iter().map(String::as_str).collect();
        words.sort_unstable();
        words.dedup();
        if words.len() != k
            || words
                .iter()
                .any(|w| w.is_empty() || w.contains(char::is_whitespace) || FILLERS.contains(w))
        {
            return Err(Error::config("concept words must be distinct single words"));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::config("noise must be a probability"));
        }
        if self.annotators == 0 {
            return Err(Error::config("need at least one annotator"));
        }
        if self.min_frames == 0
            || self.min_frames > self.max_frames
            || self.max_frames > PADDED_FRAMES
        {
            return Err(Error::config(format!(
                "frame range {}..={} must lie within 1..={PADDED_FRAMES}",
                self.min_frames, self.max_frames
            )));
        }
        if self.n_pairs < 3 {
            return Err(Error::config("need at least 3 pairs"));
        }
        Ok(())
    }
}

/// How to draw one synthetic frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameRecipe {
    /// Bit `c` set when concept `c` is visible.
    pub concepts: u8,
    pub high_quality: bool,
    pub jitter_seed: u64,
}

#[derive(Debug, Clone)]
struct VideoRecipe {
    query_concept: usize,
    frames: Vec<FrameRecipe>,
    rule: SeparabilityRule,
}

impl VideoRecipe {
    fn true_score(&self, frame: &FrameRecipe, n_concepts: usize) -> RelevanceScore {
        let relevant = match self.rule {
            SeparabilityRule::QueryMatch | SeparabilityRule::Gating => {
                frame.concepts & (1 << self.query_concept) != 0
            }
            SeparabilityRule::QueryIndependent => {
                (frame.concepts.trailing_zeros() as usize) < n_concepts / 2
            }
        };
        RelevanceScore::new(2 * relevant as u8 + frame.high_quality as u8).expect("score in range")
    }
}

/// A generated corpus: the manifest plus the recipes needed to render frames.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    pub config: SyntheticConfig,
    videos: BTreeMap<String, VideoRecipe>,
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let k = config.vocab.len();
    let mut pairs = Vec::with_capacity(config.n_pairs);
    let mut videos = BTreeMap::new();

    for v in 0..config.n_pairs {
        let video_id = format!("syn{v:04}");
        let query_concept = rng.gen_range(0..k);
        let n_frames = rng.gen_range(config.min_frames..=config.max_frames);
        let frames: Vec<FrameRecipe> = (0..n_frames)
            .map(|_| {
                let concepts = match config.rule {
                    SeparabilityRule::Gating => rng.gen_range(0..16u8),
                    SeparabilityRule::QueryMatch => {
                        let c = if rng.gen_bool(0.5) {
                            query_concept
                        } else {
                            let other = rng.gen_range(0..k - 1);
                            if other >= query_concept {
                                other + 1
                            } else {
                                other
                            }
                        };
                        1 << c
                    }
                    SeparabilityRule::QueryIndependent => 1 << rng.gen_range(0..k),
                };
                FrameRecipe {
                    concepts,
                    high_quality: rng.gen_bool(0.5),
                    jitter_seed: rng.gen(),
                }
            })
            .collect();
        let recipe = VideoRecipe {
            query_concept,
            frames,
            rule: config.rule,
        };

        let mut words = vec![config.vocab[query_concept].as_str()];
        let n_fillers = rng.gen_range(0..=2);
        words.extend(FILLERS.choose_multiple(&mut rng, n_fillers).copied());
        words.shuffle(&mut rng);

        let votes: Vec<Vec<u8>> = recipe
            .frames
            .iter()
            .map(|f| {
                let truth = recipe.true_score(f, k).value();
                (0..config.annotators)
                    .map(|_| {
                        if config.noise > 0.0 && rng.gen_bool(config.noise) {
                            let other = rng.gen_range(0..3u8);
                            if other >= truth {
                                other + 1
                            } else {
                                other
                            }
                        } else {
                            truth
                        }
                    })
                    .collect()
            })
            .collect();

        pairs.push(QueryVideoPair {
            video_id: video_id.clone(),
            query: words.join(" "),
            frame_dir: PathBuf::from("frames").join(&video_id),
            annotations: AnnotationSet {
                per_frame: pad_cyclic(&votes, PADDED_FRAMES)?,
            },
            original_frame_count: n_frames,
        });
        videos.insert(video_id, recipe);
    }

    Ok(SyntheticDataset {
        manifest: split_dataset(pairs, DEFAULT_SPLIT_RATIOS, config.seed)?,
        config: config.clone(),
        videos,
    })
}

fn mix(a: u8, b: u8, t: f32) -> f32 {
    f32::from(a) * (1.0 - t) + f32::from(b) * t
}

/// Renders one 128×128 frame.
pub fn render_frame(recipe: &FrameRecipe, rule: SeparabilityRule) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.jitter_seed);
    let brightness: f32 = rng.gen_range(-10.0..10.0);
    let half = FRAME_SIZE as u32 / 2;
    let single = recipe.concepts.trailing_zeros() as usize;
    let mut img = RgbImage::new(FRAME_SIZE as u32, FRAME_SIZE as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let concept = match rule {
            SeparabilityRule::Gating => {
                let quadrant = (y >= half) as usize * 2 + (x >= half) as usize;
                (recipe.concepts & (1 << quadrant) != 0).then_some(quadrant)
            }
            _ => Some(single),
        };
        let base = match concept {
            Some(c) => {
                let period = 8 + 4 * c as u32;
                let stripe = ((x + y) / period).is_multiple_of(2);
                let color = PALETTE[c];
                if stripe {
                    color
                } else {
                    color.map(|v| v / 2)
                }
            }
            None => [128, 128, 128],
        };
        let noise: f32 = rng.gen_range(-8.0..8.0);
        *px = Rgb(base.map(|v| {
            let v = if recipe.high_quality {
                f32::from(v)
            } else {
                // Washed out: low contrast and dim.
                mix(v, 110, 0.7) * 0.8
            };
            (v + brightness + noise).round().clamp(0.0, 255.0) as u8
        }));
    }
    img
}

impl SyntheticDataset {
    fn recipe(&self, video_id: &str) -> Result<&VideoRecipe> {
        self.videos.get(video_id).ok_or_else(|| Error::CacheMiss {
            video_id: video_id.to_string(),
        })
    }

    /// Noise-free scores of a video's original frames.
    pub fn true_scores(&self, video_id: &str) -> Result<Vec<RelevanceScore>> {
        let r = self.recipe(video_id)?;
        Ok(r.frames
            .iter()
            .map(|f| r.true_score(f, self.config.vocab.len()))
            .collect())
    }

    /// The concept word named by a video's query.
    pub fn query_concept(&self, video_id: &str) -> Result<&str> {
        Ok(&self.config.vocab[self.recipe(video_id)?.query_concept])
    }

    /// Per-frame concept bitmasks of a video's original frames.
    pub fn frame_concepts(&self, video_id: &str) -> Result<Vec<u8>> {
        Ok(self
            .recipe(video_id)?
            .frames
            .iter()
            .map(|f| f.concepts)
            .collect())
    }

    /// Writes the manifest to `manifest_path` and the frames as PNGs in
    /// `frames/<video_id>/` next to it.
    pub fn write_to(&self, manifest_path: &Path) -> Result<()> {
        let root = manifest_path.parent().unwrap_or(Path::new("."));
        for pair in &self.manifest.pairs {
            write_frames(&root.join(&pair.frame_dir), &self.load_frames(pair)?)?;
        }
        self.manifest.save(manifest_path)
    }
}

impl FrameStore for SyntheticDataset {
    fn load_frames(&self, pair: &QueryVideoPair) -> Result<Vec<RgbImage>> {
        let r = self.recipe(&pair.video_id)?;
        Ok(r.frames.iter().map(|f| render_frame(f, r.rule)).collect())
    }

    fn frame_bytes(&self, pair: &QueryVideoPair, index: usize) -> Result<Vec<u8>> {
        let r = self.recipe(&pair.video_id)?;
        let f = r.frames.get(index).ok_or_else(|| {
            Error::shape(format!(
                "frame {index} out of range for `{}`",
                pair.video_id
            ))
        })?;
        encode_png(&render_frame(f, r.rule))
    }
}
