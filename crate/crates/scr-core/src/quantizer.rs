//! Sub-space product quantization.
//!
//! Vectors are split into `M` contiguous sub-spaces of dimension `D/M`.
//! Lloyd's algorithm learns `C` centroids per sub-space independently, and
//! every vector is then represented by its `M` nearest-centroid indices (a
//! short code of `M * log2(C)` bits when `C` is a power of two).
//!
//! Distances here and in the distance engine are *squared* Euclidean so the
//! sum over sub-spaces equals the global squared distance exactly; ranking
//! order is unchanged by the squaring.
//!
//! # File layouts (all little-endian)
//!
//! `.cbk`: magic `b"SCRC"`, version u32 = 1, `m` u32, `c` u32, `sub_dim`
//! u32, then `m x c x sub_dim` f32 centroid values.
//!
//! `.pqc`: magic `b"SCRQ"`, version u32 = 1, `n` u64, `m` u32, `c` u32,
//! then `n x m` u16 centroid indices.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{self, CountingReader};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::parallel;

const CBK_MAGIC: &[u8; 4] = b"SCRC";
const PQC_MAGIC: &[u8; 4] = b"SCRQ";
const FORMAT_VERSION: u32 = 1;

/// Maximum number of centroids per sub-space; codes are stored as u16.
pub const MAX_CENTROIDS: usize = 65536;

/// Learned quantization dictionary: `M` sub-spaces x `C` centroids each.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    num_subspaces: usize,
    num_centroids: usize,
    sub_dim: usize,
    /// Flat `[m][c][d]` layout.
    centroids: Vec<f32>,
}

impl Codebook {
    pub fn new(
        num_subspaces: usize,
        num_centroids: usize,
        sub_dim: usize,
        centroids: Vec<f32>,
    ) -> Result<Self> {
        if num_subspaces == 0 || sub_dim == 0 {
            return Err(Error::Config("sub-space count and dimension must be positive".into()));
        }
        if num_centroids == 0 || num_centroids > MAX_CENTROIDS {
            return Err(Error::Config(format!(
                "centroid count must be in 1..={MAX_CENTROIDS}, got {num_centroids}"
            )));
        }
        if centroids.len() != num_subspaces * num_centroids * sub_dim {
            return Err(Error::Config(format!(
                "centroid buffer has {} values, expected {}",
                centroids.len(),
                num_subspaces * num_centroids * sub_dim
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::Corruption("non-finite centroid value".into()));
        }
        Ok(Codebook {
            num_subspaces,
            num_centroids,
            sub_dim,
            centroids,
        })
    }

    pub fn num_subspaces(&self) -> usize {
        self.num_subspaces
    }

    pub fn num_centroids(&self) -> usize {
        self.num_centroids
    }

    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    /// Full vector dimension `D = M * sub_dim`.
    pub fn dim(&self) -> usize {
        self.num_subspaces * self.sub_dim
    }

    pub fn centroid(&self, subspace: usize, index: usize) -> &[f32] {
        let start = (subspace * self.num_centroids + index) * self.sub_dim;
        &self.centroids[start..start + self.sub_dim]
    }

    /// Code length in bits, defined when `C` is a power of two.
    pub fn code_bits(&self) -> Option<u32> {
        if self.num_centroids.is_power_of_two() {
            Some(self.num_subspaces as u32 * self.num_centroids.trailing_zeros())
        } else {
            None
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        binio::write_magic(&mut w, CBK_MAGIC)?;
        binio::write_u32(&mut w, FORMAT_VERSION)?;
        binio::write_u32(&mut w, self.num_subspaces as u32)?;
        binio::write_u32(&mut w, self.num_centroids as u32)?;
        binio::write_u32(&mut w, self.sub_dim as u32)?;
        for &v in &self.centroids {
            binio::write_f32(&mut w, v)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = CountingReader::new(BufReader::new(File::open(path)?));
        r.read_magic(CBK_MAGIC)?;
        r.read_version(FORMAT_VERSION)?;
        let at = r.offset();
        let m = r.read_u32("sub-space count")? as usize;
        let c = r.read_u32("centroid count")? as usize;
        let sub_dim = r.read_u32("sub-space dimension")? as usize;
        let len = m
            .checked_mul(c)
            .and_then(|v| v.checked_mul(sub_dim))
            .ok_or_else(|| Error::format(at, "centroid payload size overflows"))?;
        let mut centroids = vec![0.0f32; len];
        r.read_f32_into(&mut centroids, "centroid payload")?;
        Codebook::new(m, c, sub_dim, centroids)
    }
}

/// Per-vector centroid indices: `N` rows of `M` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMatrix {
    num_subspaces: usize,
    num_centroids: usize,
    codes: Vec<u16>,
}

impl CodeMatrix {
    pub fn new(num_subspaces: usize, num_centroids: usize, codes: Vec<u16>) -> Result<Self> {
        if num_subspaces == 0 || codes.is_empty() || !codes.len().is_multiple_of(num_subspaces) {
            return Err(Error::Config(format!(
                "code buffer of {} entries is not a positive multiple of M={num_subspaces}",
                codes.len()
            )));
        }
        if let Some(&bad) = codes.iter().find(|&&c| c as usize >= num_centroids) {
            return Err(Error::Corruption(format!(
                "code {bad} out of range for C={num_centroids}"
            )));
        }
        Ok(CodeMatrix {
            num_subspaces,
            num_centroids,
            codes,
        })
    }

    pub fn len(&self) -> usize {
        self.codes.len() / self.num_subspaces
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn num_subspaces(&self) -> usize {
        self.num_subspaces
    }

    pub fn num_centroids(&self) -> usize {
        self.num_centroids
    }

    pub fn code(&self, i: usize) -> &[u16] {
        &self.codes[i * self.num_subspaces..(i + 1) * self.num_subspaces]
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        binio::write_magic(&mut w, PQC_MAGIC)?;
        binio::write_u32(&mut w, FORMAT_VERSION)?;
        binio::write_u64(&mut w, self.len() as u64)?;
        binio::write_u32(&mut w, self.num_subspaces as u32)?;
        binio::write_u32(&mut w, self.num_centroids as u32)?;
        for &c in &self.codes {
            binio::write_u16(&mut w, c)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = CountingReader::new(BufReader::new(File::open(path)?));
        r.read_magic(PQC_MAGIC)?;
        r.read_version(FORMAT_VERSION)?;
        let at = r.offset();
        let n = r.read_u64("code count")? as usize;
        let m = r.read_u32("sub-space count")? as usize;
        let c = r.read_u32("centroid count")? as usize;
        let len = n
            .checked_mul(m)
            .ok_or_else(|| Error::format(at, "code payload size overflows"))?;
        let mut codes = vec![0u16; len];
        r.read_u16_into(&mut codes, "code payload")?;
        CodeMatrix::new(m, c, codes)
    }
}

/// Observability record for one `train_codebook` call.
#[derive(Debug, Clone)]
pub struct KMeansReport {
    /// Largest iteration count over the independently trained sub-spaces.
    pub iterations_run: usize,
    /// Sum over sub-spaces of summed squared distances to assigned centroids,
    /// measured against the final centroids.
    pub total_quantization_error: f64,
    pub per_subspace_error: Vec<f64>,
    /// Total assignment error at each Lloyd iteration (sub-spaces that
    /// converged early contribute their final error to later iterations).
    pub error_trace: Vec<f64>,
    /// Set when the requested `C` exceeded the number of distinct
    /// sub-vectors and was clamped.
    pub clamped_to: Option<usize>,
}

/// Split a feature set into `M` row-major sub-matrices of shape `N x D/M`.
///
/// Sub-matrix `m` holds columns `[m*D/M, (m+1)*D/M)`; concatenating the
/// sub-rows restores the original vectors exactly.
pub fn split_subspaces(set: &FeatureSet, num_subspaces: usize) -> Result<Vec<Vec<f32>>> {
    split_subspaces_raw(set.vectors(), set.len(), set.dim(), num_subspaces)
}

pub fn split_subspaces_raw(
    data: &[f32],
    n: usize,
    dim: usize,
    num_subspaces: usize,
) -> Result<Vec<Vec<f32>>> {
    let sub_dim = check_divides(dim, num_subspaces)?;
    let mut out = vec![Vec::with_capacity(n * sub_dim); num_subspaces];
    for row in data.chunks_exact(dim) {
        for (m, sub) in out.iter_mut().enumerate() {
            sub.extend_from_slice(&row[m * sub_dim..(m + 1) * sub_dim]);
        }
    }
    Ok(out)
}

fn check_divides(dim: usize, num_subspaces: usize) -> Result<usize> {
    if num_subspaces == 0 || !dim.is_multiple_of(num_subspaces) {
        return Err(Error::Config(format!(
            "sub-space count {num_subspaces} does not divide dimension {dim}"
        )));
    }
    Ok(dim / num_subspaces)
}

pub(crate) fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Train a codebook over a feature set. See [`train_codebook_raw`].
#[allow(clippy::too_many_arguments)]
pub fn train_codebook(
    set: &FeatureSet,
    num_subspaces: usize,
    num_centroids: usize,
    max_iters: usize,
    tol: f64,
    warm_start: Option<&Codebook>,
    rng_seed: u64,
) -> Result<(Codebook, KMeansReport)> {
    train_codebook_raw(
        set.vectors(),
        set.len(),
        set.dim(),
        num_subspaces,
        num_centroids,
        max_iters,
        tol,
        warm_start,
        rng_seed,
    )
}

/// Lloyd's algorithm per sub-space over row-major data.
///
/// Cold starts use k-means++ seeding; a warm start reuses the given
/// codebook's centroids (the iterative refresh path). Iteration stops at
/// `max_iters`, when no centroid moves, or when the relative error
/// improvement drops below `tol`. Empty clusters are re-seeded with the
/// point farthest from its assigned centroid. If `C` exceeds the number of
/// distinct sub-vectors in some sub-space, it is clamped to the smallest
/// such count and a warning is logged. Deterministic for a given seed.
#[allow(clippy::too_many_arguments)]
pub fn train_codebook_raw(
    data: &[f32],
    n: usize,
    dim: usize,
    num_subspaces: usize,
    num_centroids: usize,
    max_iters: usize,
    tol: f64,
    warm_start: Option<&Codebook>,
    rng_seed: u64,
) -> Result<(Codebook, KMeansReport)> {
    let sub_dim = check_divides(dim, num_subspaces)?;
    if num_centroids == 0 || num_centroids > MAX_CENTROIDS {
        return Err(Error::Config(format!(
            "centroid count must be in 1..={MAX_CENTROIDS}, got {num_centroids}"
        )));
    }
    if max_iters == 0 {
        return Err(Error::Config("max_iters must be at least 1".into()));
    }
    if n == 0 || data.len() != n * dim {
        return Err(Error::Config(format!(
            "data of {} values does not match {n} rows of dimension {dim}",
            data.len()
        )));
    }
    if let Some(cb) = warm_start {
        if cb.num_subspaces != num_subspaces || cb.sub_dim != sub_dim {
            return Err(Error::Config(format!(
                "warm-start codebook shape ({}, {}) does not match requested ({num_subspaces}, {sub_dim})",
                cb.num_subspaces, cb.sub_dim
            )));
        }
    }

    let subspaces = split_subspaces_raw(data, n, dim, num_subspaces)?;

    // Clamp C to the smallest distinct sub-vector count across sub-spaces so
    // every sub-space keeps C live centroids.
    let mut effective_c = num_centroids;
    if n < num_centroids {
        for sub in &subspaces {
            let mut rows: Vec<&[f32]> = sub.chunks_exact(sub_dim).collect();
            rows.sort_unstable_by(|a, b| {
                a.iter().map(|v| v.to_bits()).cmp(b.iter().map(|v| v.to_bits()))
            });
            rows.dedup();
            effective_c = effective_c.min(rows.len());
        }
        if effective_c < num_centroids {
            log::warn!(
                "clamping centroid count from {num_centroids} to {effective_c}: only that many distinct sub-vectors"
            );
        }
    }
    if let Some(cb) = warm_start {
        if cb.num_centroids != effective_c {
            return Err(Error::Config(format!(
                "warm-start codebook has {} centroids, expected {effective_c}",
                cb.num_centroids
            )));
        }
    }

    // Sub-spaces are independent; each gets a seed derived from its index so
    // results do not depend on scheduling.
    let results: Vec<SubspaceFit> = parallel::map_indexed(num_subspaces, |m| {
        let warm = warm_start.map(|cb| {
            let start = m * cb.num_centroids * sub_dim;
            &cb.centroids[start..start + cb.num_centroids * sub_dim]
        });
        lloyd_subspace(
            &subspaces[m],
            n,
            sub_dim,
            effective_c,
            max_iters,
            tol,
            warm,
            rng_seed.wrapping_add(m as u64),
        )
    });

    let mut centroids = Vec::with_capacity(num_subspaces * effective_c * sub_dim);
    let mut per_subspace_error = Vec::with_capacity(num_subspaces);
    let mut iterations_run = 0usize;
    for fit in &results {
        centroids.extend_from_slice(&fit.centroids);
        per_subspace_error.push(fit.final_error);
        iterations_run = iterations_run.max(fit.trace.len());
    }
    let mut error_trace = vec![0.0f64; iterations_run];
    for fit in &results {
        for (i, slot) in error_trace.iter_mut().enumerate() {
            *slot += fit.trace.get(i).copied().unwrap_or(fit.final_error);
        }
    }

    let codebook = Codebook::new(num_subspaces, effective_c, sub_dim, centroids)?;
    let report = KMeansReport {
        iterations_run,
        total_quantization_error: per_subspace_error.iter().sum(),
        per_subspace_error,
        error_trace,
        clamped_to: (effective_c < num_centroids).then_some(effective_c),
    };
    Ok((codebook, report))
}

struct SubspaceFit {
    centroids: Vec<f32>,
    /// Assignment error against the final centroids.
    final_error: f64,
    /// Assignment error at the start of each iteration.
    trace: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn lloyd_subspace(
    points: &[f32],
    n: usize,
    sub_dim: usize,
    c: usize,
    max_iters: usize,
    tol: f64,
    warm_start: Option<&[f32]>,
    seed: u64,
) -> SubspaceFit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = |i: usize| &points[i * sub_dim..(i + 1) * sub_dim];

    let mut centroids: Vec<f32> = match warm_start {
        Some(w) => w.to_vec(),
        None => kmeans_plus_plus(points, n, sub_dim, c, &mut rng),
    };

    let mut assignments = vec![0usize; n];
    let mut dists = vec![0.0f64; n];
    let mut trace = Vec::new();

    for _ in 0..max_iters {
        // assignment step
        let mut err = 0.0;
        for i in 0..n {
            let (best, d) = nearest_centroid(point(i), &centroids, c, sub_dim);
            assignments[i] = best;
            dists[i] = d;
            err += d;
        }
        trace.push(err);

        // update step: means in f64, stored back as f32
        let mut sums = vec![0.0f64; c * sub_dim];
        let mut counts = vec![0usize; c];
        for i in 0..n {
            counts[assignments[i]] += 1;
            let sum = &mut sums[assignments[i] * sub_dim..(assignments[i] + 1) * sub_dim];
            for (s, &v) in sum.iter_mut().zip(point(i)) {
                *s += v as f64;
            }
        }
        let mut new_centroids = centroids.clone();
        for k in 0..c {
            if counts[k] > 0 {
                for d in 0..sub_dim {
                    new_centroids[k * sub_dim + d] = (sums[k * sub_dim + d] / counts[k] as f64) as f32;
                }
            }
        }
        // re-seed empty clusters with the point farthest from its centroid
        for k in 0..c {
            if counts[k] == 0 {
                let farthest = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]))
                    .expect("n >= 1");
                new_centroids[k * sub_dim..(k + 1) * sub_dim].copy_from_slice(point(farthest));
                dists[farthest] = 0.0; // don't hand the same point to another empty cluster
            }
        }

        let moved = new_centroids != centroids;
        centroids = new_centroids;
        if !moved {
            break;
        }
        if trace.len() >= 2 {
            let prev = trace[trace.len() - 2];
            if prev - err < tol * prev.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
    }

    // final error measured against the final centroids, matching encode()
    let final_error: f64 = (0..n)
        .map(|i| nearest_centroid(point(i), &centroids, c, sub_dim).1)
        .sum();

    SubspaceFit {
        centroids,
        final_error,
        trace,
    }
}

/// Nearest centroid by squared distance; ties go to the lowest index.
fn nearest_centroid(p: &[f32], centroids: &[f32], c: usize, sub_dim: usize) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for k in 0..c {
        let d = squared_distance(p, &centroids[k * sub_dim..(k + 1) * sub_dim]);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    (best, best_d)
}

fn kmeans_plus_plus(
    points: &[f32],
    n: usize,
    sub_dim: usize,
    c: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f32> {
    let point = |i: usize| &points[i * sub_dim..(i + 1) * sub_dim];
    let mut centroids = Vec::with_capacity(c * sub_dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(point(first));

    let mut weights: Vec<f64> = (0..n)
        .map(|i| squared_distance(point(i), point(first)))
        .collect();
    while centroids.len() < c * sub_dim {
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let mut x = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in weights.iter().enumerate() {
                if x < w {
                    chosen = i;
                    break;
                }
                x -= w;
            }
            chosen
        } else {
            // all remaining points coincide with a centroid; callers clamp C
            // to the distinct count so this only happens on exact duplicates
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(point(next));
        let new_c = &centroids[start..start + sub_dim];
        for (i, w) in weights.iter_mut().enumerate() {
            let d = squared_distance(point(i), new_c);
            if d < *w {
                *w = d;
            }
        }
    }
    centroids
}

/// Encode every row as its per-sub-space nearest-centroid indices.
pub fn encode(set: &FeatureSet, codebook: &Codebook) -> Result<CodeMatrix> {
    encode_raw(set.vectors(), set.len(), set.dim(), codebook)
}

pub fn encode_raw(data: &[f32], n: usize, dim: usize, codebook: &Codebook) -> Result<CodeMatrix> {
    if dim != codebook.dim() {
        return Err(Error::Config(format!(
            "vector dimension {dim} does not match codebook dimension {}",
            codebook.dim()
        )));
    }
    if n == 0 || data.len() != n * dim {
        return Err(Error::Config("data shape does not match declared n x dim".into()));
    }
    let rows: Vec<Vec<u16>> = parallel::map_indexed(n, |i| {
        encode_vector_unchecked(&data[i * dim..(i + 1) * dim], codebook)
    });
    let mut codes = Vec::with_capacity(n * codebook.num_subspaces);
    for row in rows {
        codes.extend_from_slice(&row);
    }
    CodeMatrix::new(codebook.num_subspaces, codebook.num_centroids, codes)
}

/// Encode a single vector.
pub fn encode_vector(vector: &[f32], codebook: &Codebook) -> Result<Vec<u16>> {
    if vector.len() != codebook.dim() {
        return Err(Error::Config(format!(
            "vector dimension {} does not match codebook dimension {}",
            vector.len(),
            codebook.dim()
        )));
    }
    Ok(encode_vector_unchecked(vector, codebook))
}

fn encode_vector_unchecked(vector: &[f32], codebook: &Codebook) -> Vec<u16> {
    let sub_dim = codebook.sub_dim;
    (0..codebook.num_subspaces)
        .map(|m| {
            let sub = &vector[m * sub_dim..(m + 1) * sub_dim];
            let start = m * codebook.num_centroids * sub_dim;
            let slice = &codebook.centroids[start..start + codebook.num_centroids * sub_dim];
            nearest_centroid(sub, slice, codebook.num_centroids, sub_dim).0 as u16
        })
        .collect()
}

/// Total squared assignment error of rows against a codebook, i.e. the
/// reconstruction error of `encode` followed by `reconstruct`.
pub fn quantization_error_raw(
    data: &[f32],
    n: usize,
    dim: usize,
    codebook: &Codebook,
) -> Result<f64> {
    if dim != codebook.dim() {
        return Err(Error::Config(format!(
            "vector dimension {dim} does not match codebook dimension {}",
            codebook.dim()
        )));
    }
    if data.len() != n * dim {
        return Err(Error::Config("data shape does not match declared n x dim".into()));
    }
    let sub_dim = codebook.sub_dim;
    let per_row: Vec<f64> = parallel::map_indexed(n, |i| {
        let row = &data[i * dim..(i + 1) * dim];
        (0..codebook.num_subspaces)
            .map(|m| {
                let sub = &row[m * sub_dim..(m + 1) * sub_dim];
                let start = m * codebook.num_centroids * sub_dim;
                let slice = &codebook.centroids[start..start + codebook.num_centroids * sub_dim];
                nearest_centroid(sub, slice, codebook.num_centroids, sub_dim).1
            })
            .sum()
    });
    Ok(per_row.iter().sum())
}

/// Rebuild approximate vectors by concatenating each code's centroids.
pub fn reconstruct(codes: &CodeMatrix, codebook: &Codebook) -> Result<Vec<f32>> {
    if codes.num_subspaces() != codebook.num_subspaces {
        return Err(Error::Config(format!(
            "code matrix has M={}, codebook has M={}",
            codes.num_subspaces(),
            codebook.num_subspaces
        )));
    }
    let n = codes.len();
    let dim = codebook.dim();
    let mut out = Vec::with_capacity(n * dim);
    for i in 0..n {
        for (m, &c) in codes.code(i).iter().enumerate() {
            if c as usize >= codebook.num_centroids {
                return Err(Error::Corruption(format!(
                    "code {c} out of range for C={}",
                    codebook.num_centroids
                )));
            }
            out.extend_from_slice(codebook.centroid(m, c as usize));
        }
    }
    Ok(out)
}
