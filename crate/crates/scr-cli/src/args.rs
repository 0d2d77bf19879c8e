//! Flag definitions for every subcommand.
//!
//! Fields are optional so a `--config` file can supply them; flags always
//! override the file. Required values are enforced after merging.

use std::path::PathBuf;

use clap::Args;
use scr_core::distance::DistanceKind;
use scr_core::ranker::RankAlgorithm;

/// Generate a synthetic labeled feature set and write it as `.fvs`.
#[derive(Args, Debug)]
pub struct GenArgs {
    /// key=value defaults file (# comments allowed)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of identities
    #[arg(long)]
    pub ids: Option<usize>,
    /// Instances per identity
    #[arg(long = "per-id")]
    pub per_id: Option<usize>,
    /// Vector dimension
    #[arg(long)]
    pub dim: Option<usize>,
    /// Within-identity noise (default 1.0)
    #[arg(long)]
    pub stddev: Option<f64>,
    /// Side of the identity-mean hypercube (default 10.0)
    #[arg(long)]
    pub sep: Option<f64>,
    /// Number of cameras, round-robin assigned (default 4)
    #[arg(long)]
    pub cameras: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scale every vector to unit L2 norm
    #[arg(long)]
    pub normalize: bool,
    /// Output .fvs path
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Split a feature set into query and gallery halves.
#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input .fvs path
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Fraction of each identity's rows sent to the query side (default 0.25)
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "query-out")]
    pub query_out: Option<PathBuf>,
    #[arg(long = "gallery-out")]
    pub gallery_out: Option<PathBuf>,
}

/// Train the embedder with the consistency-regularized loss stack.
#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training .fvs path
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Training epochs (default 120)
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Batch size, split as P identities x K instances (default 64)
    #[arg(long)]
    pub batch: Option<usize>,
    /// Initial learning rate (default 3.5e-4)
    #[arg(long)]
    pub lr: Option<f64>,
    /// Triplet margin (default 0.3)
    #[arg(long)]
    pub margin: Option<f64>,
    /// Consistency weight (default 0.01)
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Codebook refresh period in epochs (default 10)
    #[arg(long = "t")]
    pub refresh: Option<usize>,
    /// Number of sub-spaces (default 4)
    #[arg(long = "m")]
    pub subspaces: Option<usize>,
    /// Centroids per sub-space (default 256)
    #[arg(long = "c")]
    pub centroids: Option<usize>,
    /// Regularize against the integer table instead of the real one
    #[arg(long = "int-mode")]
    pub int_mode: bool,
    /// Embedding dimension (default: input dimension)
    #[arg(long = "embed-dim")]
    pub embed_dim: Option<usize>,
    #[arg(long = "kmeans-iters")]
    pub kmeans_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Writes <prefix>.cbk, <prefix>.prm, <prefix>.log.csv
    #[arg(long = "out-prefix")]
    pub out_prefix: Option<PathBuf>,
}

/// Build retrieval artifacts: codebook, codes, and both distance tables.
#[derive(Args, Debug)]
pub struct BuildArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Gallery .fvs path
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Number of sub-spaces (default 4)
    #[arg(long = "m")]
    pub subspaces: Option<usize>,
    /// Centroids per sub-space (default 256)
    #[arg(long = "c")]
    pub centroids: Option<usize>,
    /// Lloyd iterations (default 25)
    #[arg(long)]
    pub iters: Option<usize>,
    /// Relative improvement stop threshold (default 1e-4)
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Writes <prefix>.cbk, <prefix>.pqc, <prefix>.lut, <prefix>.int.lut
    #[arg(long = "out-prefix")]
    pub out_prefix: Option<PathBuf>,
}

/// Rank a gallery for every query vector.
#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Query .fvs path
    #[arg(long)]
    pub query: Option<PathBuf>,
    /// exact | scr | intscr | hamming
    #[arg(long)]
    pub pipeline: Option<DistanceKind>,
    /// Keep only the first k results per query
    #[arg(long)]
    pub topk: Option<usize>,
    /// Gallery .fvs (exact and hamming pipelines)
    #[arg(long)]
    pub gallery: Option<PathBuf>,
    /// Codebook .cbk (scr and intscr pipelines)
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    /// Gallery codes .pqc (scr and intscr pipelines)
    #[arg(long)]
    pub codes: Option<PathBuf>,
    /// Distance table .lut; kind must match the pipeline
    #[arg(long)]
    pub lut: Option<PathBuf>,
    /// Binary code length for hamming (default 32)
    #[arg(long)]
    pub bits: Option<usize>,
    /// Write rankings to this CSV instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Compute CMC / mAP for a pipeline over a query/gallery pair.
#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub query: Option<PathBuf>,
    #[arg(long)]
    pub gallery: Option<PathBuf>,
    /// exact | scr | intscr | hamming
    #[arg(long)]
    pub pipeline: Option<DistanceKind>,
    /// Reuse a trained codebook; otherwise one is trained on the gallery
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    #[arg(long = "m")]
    pub subspaces: Option<usize>,
    #[arg(long = "c")]
    pub centroids: Option<usize>,
    #[arg(long = "kmeans-iters")]
    pub kmeans_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Binary code length for hamming (default 32)
    #[arg(long)]
    pub bits: Option<usize>,
    /// counting | comparison (default: the pipeline's natural ranker)
    #[arg(long)]
    pub ranker: Option<RankAlgorithm>,
    /// CMC points to report, comma-separated (default 1,5,10,20)
    #[arg(long)]
    pub ks: Option<String>,
    /// Also write the report as CSV
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Time distance + ranking per query across gallery sizes and pipelines.
#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated gallery sizes; scientific notation allowed (1e6)
    #[arg(long)]
    pub sizes: Option<String>,
    /// Comma-separated subset of exact,scr,intscr,hamming
    #[arg(long)]
    pub pipelines: Option<String>,
    /// Feature dimension (default 128)
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long = "m")]
    pub subspaces: Option<usize>,
    #[arg(long = "c")]
    pub centroids: Option<usize>,
    /// Hamming bits (default: 8 * M)
    #[arg(long)]
    pub bits: Option<usize>,
    /// Timed queries per cell (default 10)
    #[arg(long)]
    pub queries: Option<usize>,
    /// Untimed warm-up queries (default 1)
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Codebook training sample cap (default 10000)
    #[arg(long = "train-sample")]
    pub train_sample: Option<usize>,
    /// Feature memory budget in MiB; larger sizes are skipped (default 2048)
    #[arg(long = "budget-mb")]
    pub budget_mb: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the report as CSV
    #[arg(long)]
    pub csv: Option<PathBuf>,
}
