//! Shared domain types and the on-disk dataset manifest.
//!
//! A manifest is a single UTF-8 JSON document. Keys appear in the canonical
//! order below and split assignments are sorted by video id:
//!
//! ```text
//! {
//!   "pairs": [
//!     {
//!       "video_id": "...",
//!       "query": "...",
//!       "frame_dir": "frames/<video_id>",
//!       "annotations": { "per_frame": [[2,2,3,1,2], ...] },   // 199 rows
//!       "original_frame_count": 75
//!     }
//!   ],
//!   "split_assignment": { "<video_id>": "train" | "val" | "test" },
//!   "seed": 0
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{from_json_slice, Error, Result};
use crate::{MAX_QUERY_WORDS, PADDED_FRAMES};

/// Frame relevance to a query: 0 = "Bad", 1 = "Not Good", 2 = "Good",
/// 3 = "Very Good".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct RelevanceScore(u8);

impl RelevanceScore {
    pub const BAD: Self = Self(0);
    pub const NOT_GOOD: Self = Self(1);
    pub const GOOD: Self = Self(2);
    pub const VERY_GOOD: Self = Self(3);

    pub const ALL: [Self; 4] = [Self::BAD, Self::NOT_GOOD, Self::GOOD, Self::VERY_GOOD];

    pub fn new(value: u8) -> Result<Self> {
        if value <= 3 {
            Ok(Self(value))
        } else {
            Err(Error::Label(format!("score {value} outside 0..=3")))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Relevant frames are those scored "Good" or better.
    pub fn is_relevant(self) -> bool {
        self.0 >= 2
    }
}

impl TryFrom<u8> for RelevanceScore {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        Self::new(value)
    }
}

impl<'de> Deserialize<'de> for RelevanceScore {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let v = u8::deserialize(de)?;
        RelevanceScore::new(v).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for RelevanceScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Raw annotator votes, one inner list per frame of the padded timeline.
///
/// Votes are kept as plain integers so that a manifest with an out-of-range
/// value still parses and can be reported by [`validate_manifest`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct AnnotationSet {
    pub per_frame: Vec<Vec<u8>>,
}

impl AnnotationSet {
    pub fn frame_count(&self) -> usize {
        self.per_frame.len()
    }

    pub fn annotator_count(&self) -> usize {
        self.per_frame.first().map_or(0, Vec::len)
    }

    /// Typed votes for one frame.
    pub fn votes(&self, frame: usize) -> Result<Vec<RelevanceScore>> {
        let row = self
            .per_frame
            .get(frame)
            .ok_or_else(|| Error::shape(format!("frame {frame} has no annotations")))?;
        row.iter().map(|&v| RelevanceScore::new(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryVideoPair {
    pub video_id: String,
    pub query: String,
    /// Directory holding the sampled frames, relative to the data root.
    pub frame_dir: PathBuf,
    pub annotations: AnnotationSet,
    pub original_frame_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split `{other}`"))),
        }
    }
}

/// Mapping from video id to split.
///
/// Stored as an entry list rather than a map so that a document assigning the
/// same id twice survives parsing and is reported as leakage.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitAssignment {
    entries: Vec<(String, Split)>,
}

impl SplitAssignment {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, Split)>) -> Self {
        let mut entries: Vec<_> = entries.into_iter().collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        Self { entries }
    }

    pub fn entries(&self) -> &[(String, Split)] {
        &self.entries
    }

    pub fn get(&self, video_id: &str) -> Option<Split> {
        self.entries
            .iter()
            .find(|(id, _)| id == video_id)
            .map(|&(_, s)| s)
    }

    /// Video ids assigned to `split`, sorted.
    pub fn ids(&self, split: Split) -> Vec<&str> {
        let mut ids: Vec<&str> = self
            .entries
            .iter()
            .filter(|(_, s)| *s == split)
            .map(|(id, _)| id.as_str())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Serialize for SplitAssignment {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let mut sorted: Vec<&(String, Split)> = self.entries.iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        let mut map = ser.serialize_map(Some(sorted.len()))?;
        for (id, split) in sorted {
            map.serialize_entry(id, split)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for SplitAssignment {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = SplitAssignment;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map from video id to split")
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut access: A,
            ) -> std::result::Result<Self::Value, A::Error> {
                let mut entries = Vec::new();
                while let Some((k, v)) = access.next_entry::<String, Split>()? {
                    entries.push((k, v));
                }
                Ok(SplitAssignment { entries })
            }
        }

        de.deserialize_map(EntriesVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub pairs: Vec<QueryVideoPair>,
    pub split_assignment: SplitAssignment,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        from_json_slice(bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&bytes)
    }

    pub fn to_canonical_json(&self) -> String {
        crate::json::to_canonical_string(self)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_canonical_json()).map_err(|e| Error::io(path, e))
    }

    pub fn pair(&self, video_id: &str) -> Option<&QueryVideoPair> {
        self.pairs.iter().find(|p| p.video_id == video_id)
    }

    /// Pairs assigned to `split`, ordered by video id.
    pub fn split_pairs(&self, split: Split) -> Vec<&QueryVideoPair> {
        let mut pairs: Vec<&QueryVideoPair> = self
            .pairs
            .iter()
            .filter(|p| self.split_assignment.get(&p.video_id) == Some(split))
            .collect();
        pairs.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        pairs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    ScoreOutOfRange,
    SplitLeakage,
    MissingFrames,
    UnassignedVideo,
    UnknownVideo,
    DuplicateVideo,
    FrameCount,
    QueryLength,
    AnnotationLength,
    AnnotatorCount,
    NonCyclicAnnotations,
    SplitSizes,
}

impl ViolationKind {
    pub fn describe(self) -> &'static str {
        match self {
            ViolationKind::ScoreOutOfRange => "score out of range",
            ViolationKind::SplitLeakage => "split leakage",
            ViolationKind::MissingFrames => "missing frames",
            ViolationKind::UnassignedVideo => "video has no split",
            ViolationKind::UnknownVideo => "split names an unknown video",
            ViolationKind::DuplicateVideo => "duplicate video id",
            ViolationKind::FrameCount => "original frame count out of range",
            ViolationKind::QueryLength => "query too long",
            ViolationKind::AnnotationLength => "annotation length mismatch",
            ViolationKind::AnnotatorCount => "inconsistent annotator count",
            ViolationKind::NonCyclicAnnotations => "annotations not cyclically padded",
            ViolationKind::SplitSizes => "split sizes do not follow ratios",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Where the problem is, e.g. `pairs[3].annotations.per_frame[17][2]`.
    pub location: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} at {}: {}",
            self.kind.describe(),
            self.location,
            self.detail
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Non-fatal observations, e.g. fewer than five annotators.
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(
        &mut self,
        kind: ViolationKind,
        location: impl Into<String>,
        detail: impl Into<String>,
    ) {
        self.violations.push(Violation {
            kind,
            location: location.into(),
            detail: detail.into(),
        });
    }
}

#[derive(Debug, Clone)]
pub struct ValidationOptions {
    pub ratios: [f64; 3],
    /// When set, frame directories are resolved against this root and counted.
    pub frames_root: Option<PathBuf>,
    pub min_annotators: usize,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            ratios: crate::dataset::DEFAULT_SPLIT_RATIOS,
            frames_root: None,
            min_annotators: 5,
        }
    }
}

/// Lists every violated manifest invariant. An empty report means the manifest
/// is valid.
pub fn validate_manifest(manifest: &DatasetManifest, opts: &ValidationOptions) -> ValidationReport {
    use ViolationKind as K;
    let mut report = ValidationReport::default();

    let mut seen = BTreeSet::new();
    for (pi, pair) in manifest.pairs.iter().enumerate() {
        let at = format!("pairs[{pi}]");
        if !seen.insert(pair.video_id.as_str()) {
            report.push(
                K::DuplicateVideo,
                &at,
                format!("`{}` listed twice", pair.video_id),
            );
        }

        let words = crate::query::tokenize(&pair.query).len();
        if words > MAX_QUERY_WORDS {
            report.push(
                K::QueryLength,
                format!("{at}.query"),
                format!("{words} words, at most {MAX_QUERY_WORDS} allowed"),
            );
        }

        let n = pair.original_frame_count;
        if n == 0 || n > PADDED_FRAMES {
            report.push(
                K::FrameCount,
                format!("{at}.original_frame_count"),
                format!("{n} not in 1..={PADDED_FRAMES}"),
            );
        }

        let ann = &pair.annotations;
        if ann.frame_count() != PADDED_FRAMES {
            report.push(
                K::AnnotationLength,
                format!("{at}.annotations.per_frame"),
                format!("{} frames, expected {PADDED_FRAMES}", ann.frame_count()),
            );
        }
        let annotators = ann.annotator_count();
        if annotators == 0 && ann.frame_count() > 0 {
            report.push(
                K::AnnotatorCount,
                format!("{at}.annotations.per_frame[0]"),
                "no annotator votes",
            );
        }
        for (fi, row) in ann.per_frame.iter().enumerate() {
            if row.len() != annotators {
                report.push(
                    K::AnnotatorCount,
                    format!("{at}.annotations.per_frame[{fi}]"),
                    format!("{} votes, expected {annotators}", row.len()),
                );
            }
            for (ai, &v) in row.iter().enumerate() {
                if v > 3 {
                    report.push(
                        K::ScoreOutOfRange,
                        format!("{at}.annotations.per_frame[{fi}][{ai}]"),
                        format!("value {v} not in 0..=3"),
                    );
                }
            }
        }
        if n > 0 && n <= PADDED_FRAMES {
            if let Some(fi) =
                (n..ann.frame_count()).find(|&i| ann.per_frame[i] != ann.per_frame[i % n])
            {
                report.push(
                    K::NonCyclicAnnotations,
                    format!("{at}.annotations.per_frame[{fi}]"),
                    format!("differs from frame {}", fi % n),
                );
            }
        }
        if annotators > 0 && annotators < opts.min_annotators {
            report.warnings.push(format!(
                "{at}: {annotators} annotators (fewer than {})",
                opts.min_annotators
            ));
        }

        if let Some(root) = &opts.frames_root {
            let dir = root.join(&pair.frame_dir);
            match crate::dataset::list_frame_files(&dir) {
                Ok(files) if files.len() >= n => {}
                Ok(files) => report.push(
                    K::MissingFrames,
                    format!("{at}.frame_dir"),
                    format!("{} has {} frames, expected {n}", dir.display(), files.len()),
                ),
                Err(e) => report.push(K::MissingFrames, format!("{at}.frame_dir"), e.to_string()),
            }
        }
    }

    let mut assigned: BTreeMap<&str, Split> = BTreeMap::new();
    for (id, split) in manifest.split_assignment.entries() {
        match assigned.get(id.as_str()) {
            Some(prev) if prev != split => report.push(
                K::SplitLeakage,
                format!("split_assignment.{id}"),
                format!("assigned to both {prev} and {split}"),
            ),
            Some(_) => report.push(
                K::DuplicateVideo,
                format!("split_assignment.{id}"),
                "assigned twice",
            ),
            None => {
                assigned.insert(id, *split);
            }
        }
        if !seen.contains(id.as_str()) {
            report.push(
                K::UnknownVideo,
                format!("split_assignment.{id}"),
                "no pair with this id",
            );
        }
    }
    for (pi, pair) in manifest.pairs.iter().enumerate() {
        if !assigned.contains_key(pair.video_id.as_str()) {
            report.push(
                K::UnassignedVideo,
                format!("pairs[{pi}]"),
                format!("`{}` missing from split_assignment", pair.video_id),
            );
        }
    }

    if !report.has(K::SplitLeakage) && !report.has(K::DuplicateVideo) && !seen.is_empty() {
        match crate::dataset::split_sizes(seen.len(), opts.ratios) {
            Ok(expected) => {
                let actual = Split::ALL.map(|s| assigned.values().filter(|&&v| v == s).count());
                if actual != expected {
                    report.push(
                        K::SplitSizes,
                        "split_assignment",
                        format!("train/val/test = {actual:?}, expected {expected:?}"),
                    );
                }
            }
            Err(e) => report
                .warnings
                .push(format!("split sizes not checked: {e}")),
        }
    }

    report
}
