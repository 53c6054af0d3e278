use crate::error::{Error, Result};
use crate::manifest::{AnnotationSet, DatasetManifest, RelevanceScore};

/// Maps an annotation label to its score. Matching ignores case and
/// surrounding whitespace.
pub fn map_label(label_text: &str) -> Result<RelevanceScore> {
    match label_text.trim().to_ascii_lowercase().as_str() {
        "very good" => Ok(RelevanceScore::VERY_GOOD),
        "good" => Ok(RelevanceScore::GOOD),
        "not good" => Ok(RelevanceScore::NOT_GOOD),
        "bad" => Ok(RelevanceScore::BAD),
        _ => Err(Error::Label(label_text.to_string())),
    }
}

/// Picks between equally frequent scores. Favors the higher score.
fn break_tie(a: RelevanceScore, b: RelevanceScore) -> RelevanceScore {
    a.max(b)
}

/// Majority vote over one frame's annotator scores.
pub fn merge_annotations(votes: &[RelevanceScore]) -> Result<RelevanceScore> {
    if votes.is_empty() {
        return Err(Error::EmptyInput("no votes to merge".into()));
    }
    let mut counts = [0usize; 4];
    for v in votes {
        counts[v.index()] += 1;
    }
    let mut best: Option<(usize, RelevanceScore)> = None;
    for score in RelevanceScore::ALL {
        let c = counts[score.index()];
        if c == 0 {
            continue;
        }
        best = match best {
            Some((bc, bs)) if bc > c => Some((bc, bs)),
            Some((bc, bs)) if bc == c => Some((bc, break_tie(bs, score))),
            _ => Some((c, score)),
        };
    }
    Ok(best.expect("non-empty votes").1)
}

/// Merged labels for every frame of the padded timeline.
pub fn ground_truth(annotations: &AnnotationSet) -> Result<Vec<RelevanceScore>> {
    (0..annotations.frame_count())
        .map(|i| merge_annotations(&annotations.votes(i)?))
        .collect()
}

/// Share of each raw annotator vote over the original (unpadded) frames.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    pub total_votes: usize,
    /// Fractions indexed by score: Bad, Not Good, Good, Very Good.
    pub fractions: [f64; 4],
}

pub fn label_distribution(manifest: &DatasetManifest) -> LabelDistribution {
    let mut counts = [0usize; 4];
    for pair in &manifest.pairs {
        let n = pair
            .original_frame_count
            .min(pair.annotations.frame_count());
        for row in &pair.annotations.per_frame[..n] {
            for &v in row {
                if let Some(c) = counts.get_mut(v as usize) {
                    *c += 1;
                }
            }
        }
    }
    let total: usize = counts.iter().sum();
    let fractions = counts.map(|c| {
        if total == 0 {
            0.0
        } else {
            c as f64 / total as f64
        }
    });
    LabelDistribution {
        total_votes: total,
        fractions,
    }
}
