//! End-to-end neural speaker diarization with encoder-decoder attractors
//! and speaker-embedding fusion, at desk scale.
//!
//! The pipeline: 8 kHz audio -> spliced/subsampled log-Mel features (and,
//! optionally, per-frame speaker embeddings from a pluggable provider) ->
//! transformer encoder -> LSTM encoder-decoder attractor head -> per-frame
//! speaker posteriors -> thresholding/median filtering -> RTTM segments,
//! scored with a collar-aware DER. A simulator generates 2-speaker training
//! conversations with a controllable overlap ratio.
//!
//! Fusion variants (`model::FusionVariant`):
//! - `Baseline`: acoustic features only.
//! - `EmbeddingAttractors`: embeddings (through a one-block encoder) drive
//!   the attractor head; posteriors use the acoustic encodings.
//! - `EmbeddingInput`: embeddings replace the acoustic features entirely.
//! - `ConcatInput`: frame-wise concatenation of both streams.

pub mod audio;
pub mod cli;
pub mod embeddings;
pub mod error;
pub mod features;
pub mod labels;
pub mod losses;
pub mod mat;
pub mod metrics;
pub mod model;
pub mod segments;
pub mod simulate;
pub mod trainer;
pub mod vad;

pub use error::{Error, Result};
