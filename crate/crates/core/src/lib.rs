//! Frequency-aware sparse attention for RoPE models.
//!
//! Every attention head that uses rotary position embeddings can be split into
//! `d/2` two-dimensional *frequency chunks*, each rotated at its own angular
//! frequency. A handful of these chunks carry almost all of the head's
//! contextual (content-dependent) ranking signal. This crate:
//!
//! 1. measures how well each chunk's attention ranking agrees with the full
//!    head ([`agreement`]),
//! 2. picks the dominant chunks per head offline ([`calibration`]),
//! 3. uses them online to cheaply rank cached tokens and then runs exact
//!    attention over only the selected tokens ([`engine`]),
//! 4. models the tiered KV-cache layout and its memory traffic ([`cache`]).
//!
//! [`harness`] generates synthetic corpora with planted dominant chunks and
//! runs end-to-end experiments; [`tooling`] holds the file formats and the
//! `fasa` command line.
//!
//! The `examples/` directory has one runnable program per capability.

pub mod agreement;
pub mod cache;
pub mod calibration;
pub mod engine;
pub mod error;
pub mod harness;
pub mod matrix;
pub mod rope;
pub mod scores;
pub mod tooling;

pub use agreement::{ca, compound_ca, mean_ca, topk_indices, AgreementWindow, CaScore};
pub use cache::{
    footprint_fasa_m, full_cache_footprint, speedup_limit, speedup_model, traffic_fraction, CacheGeometry, TieredCache,
};
pub use calibration::{calibrate, calibrate_head, CalibrationCorpus, DominantChunk, DominantSet, HeadId};
pub use engine::{model_fraction, BudgetConfig, DecodeMode, DecodeOutcome, HeadState, TokenSelection};
pub use error::{FasaError, Result};
pub use matrix::Matrix;
pub use rope::{apply_rope, rotate_chunk, theta, ChunkIndex, RopeConfig};
pub use scores::{attend, fc_scores, full_scores, subset_scores, HeadSample, ScoreVector};
