//! Dataset construction: sampling, normalization, cyclic padding, label
//! merging, splitting and synthetic corpora.

mod frame_cache;
mod frames;
mod labels;
mod raw;
mod sampling;
mod split;
mod store;
mod synthetic;

pub use frame_cache::{
    decode_frame_cache, encode_frame_cache, read_frame_cache, write_frame_cache, FrameCacheSidecar,
};
pub use frames::{
    denormalize, denormalize_values, normalize, normalize_values, pad_cyclic, pad_frames,
    prepare_sequence, resize_frame, FrameSequence, FrameTensor, CHANNEL_MEAN, CHANNEL_STD,
};
pub use labels::{
    ground_truth, label_distribution, map_label, merge_annotations, LabelDistribution,
};
pub use raw::{
    assemble_annotations, build_dataset, parse_annotations_csv, parse_queries_csv, AnnotationRow,
    BuildOptions, QueryRow,
};
pub use sampling::{sample_frames, DecodedClip, FfmpegVideo, VideoSource};
pub use split::{split_dataset, split_sizes, DEFAULT_SPLIT_RATIOS};
pub use store::{
    encode_png, list_frame_files, load_sequence, write_frames, DiskFrameStore, FrameStore,
};
pub use synthetic::{
    generate_synthetic, render_frame, FrameRecipe, SeparabilityRule, SyntheticConfig,
    SyntheticDataset, DEFAULT_CONCEPTS,
};
