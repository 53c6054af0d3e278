//! Turning per-frame scores into a summary: threshold at "Good", then pick
//! at most `k` relevant original frames in time order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::RelevancePrediction;
use crate::manifest::RelevanceScore;
use crate::PADDED_FRAMES;

/// `mask[i]` is true when frame `i` scored 2 or 3.
pub fn threshold_scores(scores: &[RelevanceScore]) -> Vec<bool> {
    scores.iter().map(|s| s.is_relevant()).collect()
}

pub fn threshold_relevance(pred: &RelevancePrediction) -> Vec<bool> {
    threshold_scores(&pred.scores)
}

/// How `k` frames are chosen when more than `k` are relevant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Evenly spaced over the relevant frames, so the summary spans the video.
    #[default]
    Uniform,
    /// The earliest `k` relevant frames.
    First,
}

impl SelectionPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionPolicy::Uniform => "uniform",
            SelectionPolicy::First => "first",
        }
    }
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SelectionPolicy::Uniform),
            "first" => Ok(SelectionPolicy::First),
            other => Err(Error::config(format!("unknown selection policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummarySelection {
    /// Original frame indices, strictly increasing.
    pub indices: Vec<usize>,
    pub k: usize,
    pub policy: SelectionPolicy,
    /// No original frame was relevant.
    pub empty_summary: bool,
}

/// Checks the request parameters shared by the CLI and the service.
pub fn validate_selection_request(k: usize, original_count: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::config("summary length k must be at least 1"));
    }
    if !(1..=PADDED_FRAMES).contains(&original_count) {
        return Err(Error::config(format!(
            "original frame count {original_count} outside 1..={PADDED_FRAMES}"
        )));
    }
    Ok(())
}

/// `round(num / den)` with ties to even, in exact integer arithmetic.
fn div_round_half_even(num: usize, den: usize) -> usize {
    let (q, r) = (num / den, num % den);
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
    }
}

/// Positions `round(j·(m−1)/(k−1))` for `j = 0..k`, for `k ≤ m`. With
/// `k = 1` the single position is 0.
pub fn uniform_positions(m: usize, k: usize) -> Vec<usize> {
    if k <= 1 {
        return vec![0; k.min(m)];
    }
    (0..k)
        .map(|j| div_round_half_even(j * (m - 1), k - 1))
        .collect()
}

/// Picks at most `k` relevant frames among the first `original_count`
/// (padded copies are never selected).
pub fn select_summary(
    mask: &[bool],
    k: usize,
    original_count: usize,
    policy: SelectionPolicy,
) -> Result<SummarySelection> {
    validate_selection_request(k, original_count)?;
    if mask.len() < original_count {
        return Err(Error::shape(format!(
            "mask has {} entries, fewer than {original_count} original frames",
            mask.len()
        )));
    }
    let relevant: Vec<usize> = (0..original_count).filter(|&i| mask[i]).collect();
    let indices = if relevant.len() <= k {
        relevant
    } else {
        match policy {
            SelectionPolicy::First => relevant[..k].to_vec(),
            SelectionPolicy::Uniform => uniform_positions(relevant.len(), k)
                .into_iter()
                .map(|p| relevant[p])
                .collect(),
        }
    };
    Ok(SummarySelection {
        empty_summary: indices.is_empty(),
        indices,
        k,
        policy,
    })
}
