//! Query-controllable video summarization.
//!
//! A video is sampled at one frame per second, cyclically padded to a fixed
//! length, passed through a CNN, fused with a bag-of-words query vector and
//! classified frame by frame into four relevance scores. Frames scored
//! Good or Very Good form the summary.

pub mod backbone;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod fusion;
pub mod generator;
pub mod json;
pub mod manifest;
pub mod nn;
pub mod output;
pub mod query;
pub mod weights;

pub use error::{Error, Result};

/// Frames per video after cyclic padding.
pub const PADDED_FRAMES: usize = 199;
/// Side length of the square frames fed to the CNN.
pub const FRAME_SIZE: usize = 128;
/// Queries longer than this are truncated.
pub const MAX_QUERY_WORDS: usize = 8;
/// Relevance classes: Bad, Not Good, Good, Very Good.
pub const NUM_CLASSES: usize = 4;
