//! Sub-space quantized vector retrieval with consistency-regularized
//! training and a ReID-style evaluation harness.
//!
//! The pipeline, end to end:
//!
//! 1. [`features`] — labeled embedding sets: synthesis, `.fvs` persistence,
//!    query/gallery splitting.
//! 2. [`quantizer`] — per-sub-space k-means codebooks and short codes.
//! 3. [`distance`] — exact sub-space distance matrices, centroid look-up
//!    tables (real and integer-quantized), and per-query distance rows.
//! 4. [`ranker`] — counting sort for integer rows, comparison sort for
//!    real ones, identical tie handling.
//! 5. [`trainer`] — CE + triplet + consistency losses over a linear
//!    embedder, with periodic warm-started codebook refreshes.
//! 6. [`evaluator`] — CMC / mAP under junk filtering, plus the ranking
//!    speed benchmark.
//!
//! With the default `parallel` feature, encode, table construction, and
//! evaluation fan out over rayon; disabling it yields a fully sequential
//! build with identical results.

mod binio;
mod parallel;

pub mod distance;
pub mod error;
pub mod evaluator;
pub mod features;
pub mod quantizer;
pub mod ranker;
pub mod trainer;

pub use error::{Error, Result};
