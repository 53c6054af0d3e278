use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, QueryVideoPair, Split, SplitAssignment};

pub const DEFAULT_SPLIT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];

/// Train/val/test sizes for `n` items. Each split gets `floor(n * ratio)`;
/// leftovers go to the splits with the largest fractional parts, earlier
/// splits first on ties.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::config(format!("invalid split ratios {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios sum to {total}, not 1")));
    }
    let exact = ratios.map(|r| n as f64 * r);
    // Guard against 0.6 * 190 landing a hair below 114.
    let mut sizes = exact.map(|x| (x + 1e-9).floor() as usize);
    let assigned: usize = sizes.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - sizes[a] as f64;
        let fb = exact[b] - sizes[b] as f64;
        fb.partial_cmp(&fa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    Ok(sizes)
}

/// Shuffles pairs with a seeded RNG and assigns them to train/val/test.
/// The output lists pairs sorted by video id.
pub fn split_dataset(
    mut pairs: Vec<QueryVideoPair>,
    ratios: [f64; 3],
    seed: u64,
) -> Result<DatasetManifest> {
    let sizes = split_sizes(pairs.len(), ratios)?;
    if pairs.len() < 3 {
        return Err(Error::config(format!(
            "need at least 3 pairs to split, got {}",
            pairs.len()
        )));
    }
    pairs.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut entries = Vec::with_capacity(pairs.len());
    let mut cursor = 0;
    for (split, size) in Split::ALL.into_iter().zip(sizes) {
        for &idx in &order[cursor..cursor + size] {
            entries.push((pairs[idx].video_id.clone(), split));
        }
        cursor += size;
    }
    Ok(DatasetManifest {
        pairs,
        split_assignment: SplitAssignment::from_entries(entries),
        seed,
    })
}
