//! Distance computation: exact per-sub-space matrices, centroid look-up
//! tables, their integer-quantized form, and per-query distance rows.
//!
//! The real-valued table stores all pairwise centroid distances per
//! sub-space (`M x C x C`), so the distance between two coded vectors is a
//! sum of `M` table entries. The integer table rescales those entries into
//! `0..=255` with one global affine factor, bounding any code-pair distance
//! by `255 * M` — small enough for a counting-sort bucket array.
//!
//! All distances are squared Euclidean, accumulated in f64.
//!
//! # `.lut` file layout (little-endian)
//!
//! ```text
//! magic   b"SCRL"                       (4 bytes)
//! version u32 = 1
//! kind    u8: 0 = real, 1 = integer
//! m, c    u32 each
//! kind 0: m x c x c f32 entries
//! kind 1: scale f64, then m x c x c u8 entries
//! ```
//!
//! Real tables are held as f64 in memory; saving rounds them to f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::binio::{self, CountingReader};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::parallel;
use crate::quantizer::{squared_distance, CodeMatrix, Codebook};

const LUT_MAGIC: &[u8; 4] = b"SCRL";
const LUT_VERSION: u32 = 1;

/// Which distance produced a row of values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistanceKind {
    Euclidean,
    Scr,
    IntScr,
    Hamming,
}

impl DistanceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DistanceKind::Euclidean => "euclidean",
            DistanceKind::Scr => "scr",
            DistanceKind::IntScr => "intscr",
            DistanceKind::Hamming => "hamming",
        }
    }
}

impl std::str::FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" | "euclidean" => Ok(DistanceKind::Euclidean),
            "scr" => Ok(DistanceKind::Scr),
            "intscr" => Ok(DistanceKind::IntScr),
            "hamming" => Ok(DistanceKind::Hamming),
            other => Err(Error::Argument(format!(
                "unknown pipeline '{other}' (expected exact|scr|intscr|hamming)"
            ))),
        }
    }
}

/// Per-sub-space squared distances between two row sets: `M x N_a x N_b`.
#[derive(Debug, Clone)]
pub struct SubspaceDistanceMatrix {
    num_subspaces: usize,
    rows_a: usize,
    rows_b: usize,
    data: Vec<f64>,
}

impl SubspaceDistanceMatrix {
    pub fn num_subspaces(&self) -> usize {
        self.num_subspaces
    }

    pub fn rows_a(&self) -> usize {
        self.rows_a
    }

    pub fn rows_b(&self) -> usize {
        self.rows_b
    }

    pub fn entry(&self, subspace: usize, i: usize, j: usize) -> f64 {
        self.data[(subspace * self.rows_a + i) * self.rows_b + j]
    }

    /// Sum over sub-spaces, i.e. the global squared distance between i and j.
    pub fn summed(&self, i: usize, j: usize) -> f64 {
        (0..self.num_subspaces).map(|m| self.entry(m, i, j)).sum()
    }
}

/// The Euclidean-based matrix: per-sub-space squared distances between all
/// row pairs of `a` and `b`. With `a == b` each slice is symmetric with a
/// zero diagonal, and the slice sum over `m` equals the global squared
/// Euclidean distance exactly (same additive decomposition).
pub fn euclidean_matrix(
    a: &FeatureSet,
    b: &FeatureSet,
    num_subspaces: usize,
) -> Result<SubspaceDistanceMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::Config(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    euclidean_matrix_raw(a.vectors(), a.len(), b.vectors(), b.len(), a.dim(), num_subspaces)
}

pub fn euclidean_matrix_raw(
    a: &[f32],
    n_a: usize,
    b: &[f32],
    n_b: usize,
    dim: usize,
    num_subspaces: usize,
) -> Result<SubspaceDistanceMatrix> {
    if num_subspaces == 0 || !dim.is_multiple_of(num_subspaces) {
        return Err(Error::Config(format!(
            "sub-space count {num_subspaces} does not divide dimension {dim}"
        )));
    }
    let sub_dim = dim / num_subspaces;
    let slices: Vec<Vec<f64>> = parallel::map_indexed(num_subspaces, |m| {
        let lo = m * sub_dim;
        let hi = lo + sub_dim;
        let mut slice = Vec::with_capacity(n_a * n_b);
        for i in 0..n_a {
            let ai = &a[i * dim + lo..i * dim + hi];
            for j in 0..n_b {
                let bj = &b[j * dim + lo..j * dim + hi];
                slice.push(squared_distance(ai, bj));
            }
        }
        slice
    });
    let mut data = Vec::with_capacity(num_subspaces * n_a * n_b);
    for slice in slices {
        data.extend_from_slice(&slice);
    }
    Ok(SubspaceDistanceMatrix {
        num_subspaces,
        rows_a: n_a,
        rows_b: n_b,
        data,
    })
}

/// Precomputed centroid-to-centroid squared distances: `M x C x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceLut {
    num_subspaces: usize,
    num_centroids: usize,
    data: Vec<f64>,
}

impl DistanceLut {
    pub fn num_subspaces(&self) -> usize {
        self.num_subspaces
    }

    pub fn num_centroids(&self) -> usize {
        self.num_centroids
    }

    pub fn entry(&self, subspace: usize, a: usize, b: usize) -> f64 {
        self.data[(subspace * self.num_centroids + a) * self.num_centroids + b]
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_lut_header(&mut w, 0, self.num_subspaces, self.num_centroids)?;
        for &v in &self.data {
            binio::write_f32(&mut w, v as f32)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Integer-quantized table: `entry = round(scale * real_entry)`, all entries
/// in `0..=255`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntLut {
    num_subspaces: usize,
    num_centroids: usize,
    scale: f64,
    data: Vec<u8>,
}

impl IntLut {
    pub const BITS_PER_ENTRY: u32 = 8;

    pub fn num_subspaces(&self) -> usize {
        self.num_subspaces
    }

    pub fn num_centroids(&self) -> usize {
        self.num_centroids
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn entry(&self, subspace: usize, a: usize, b: usize) -> u8 {
        self.data[(subspace * self.num_centroids + a) * self.num_centroids + b]
    }

    /// Upper bound for any code-pair distance: `255 * M`.
    pub fn max_distance(&self) -> u32 {
        255 * self.num_subspaces as u32
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_lut_header(&mut w, 1, self.num_subspaces, self.num_centroids)?;
        binio::write_f64(&mut w, self.scale)?;
        w.write_all(&self.data)?;
        w.flush()?;
        Ok(())
    }
}

/// Either table, for APIs that accept both.
#[derive(Debug, Clone, Copy)]
pub enum LutTable<'a> {
    Real(&'a DistanceLut),
    Int(&'a IntLut),
}

/// On-disk `.lut` content.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyLut {
    Real(DistanceLut),
    Int(IntLut),
}

fn write_lut_header<W: Write>(w: &mut W, kind: u8, m: usize, c: usize) -> Result<()> {
    binio::write_magic(w, LUT_MAGIC)?;
    binio::write_u32(w, LUT_VERSION)?;
    binio::write_u8(w, kind)?;
    binio::write_u32(w, m as u32)?;
    binio::write_u32(w, c as u32)?;
    Ok(())
}

pub fn load_lut(path: impl AsRef<Path>) -> Result<AnyLut> {
    let mut r = CountingReader::new(BufReader::new(File::open(path)?));
    r.read_magic(LUT_MAGIC)?;
    r.read_version(LUT_VERSION)?;
    let kind_at = r.offset();
    let kind = r.read_u8("kind")?;
    let m = r.read_u32("sub-space count")? as usize;
    let c = r.read_u32("centroid count")? as usize;
    let len = m
        .checked_mul(c)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::format(kind_at, "table size overflows"))?;
    match kind {
        0 => {
            let mut f32_data = vec![0.0f32; len];
            r.read_f32_into(&mut f32_data, "table payload")?;
            if f32_data.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(kind_at, "non-finite table entry"));
            }
            Ok(AnyLut::Real(DistanceLut {
                num_subspaces: m,
                num_centroids: c,
                data: f32_data.into_iter().map(|v| v as f64).collect(),
            }))
        }
        1 => {
            let scale = r.read_f64("scale")?;
            if scale.is_nan() || scale <= 0.0 {
                return Err(Error::format(kind_at, format!("non-positive scale {scale}")));
            }
            let mut data = vec![0u8; len];
            r.read_exact(&mut data, "table payload")?;
            Ok(AnyLut::Int(IntLut {
                num_subspaces: m,
                num_centroids: c,
                scale,
                data,
            }))
        }
        other => Err(Error::format(kind_at, format!("unknown table kind {other}"))),
    }
}

/// Build the real-valued table from a codebook: all pairwise centroid
/// squared distances, per sub-space. Symmetric with a zero diagonal.
pub fn build_lut(codebook: &Codebook) -> DistanceLut {
    let m = codebook.num_subspaces();
    let c = codebook.num_centroids();
    let slices: Vec<Vec<f64>> = parallel::map_indexed(m, |sub| {
        let mut slice = vec![0.0f64; c * c];
        for a in 0..c {
            for b in (a + 1)..c {
                let d = squared_distance(codebook.centroid(sub, a), codebook.centroid(sub, b));
                slice[a * c + b] = d;
                slice[b * c + a] = d;
            }
        }
        slice
    });
    let mut data = Vec::with_capacity(m * c * c);
    for slice in slices {
        data.extend_from_slice(&slice);
    }
    DistanceLut {
        num_subspaces: m,
        num_centroids: c,
        data,
    }
}

/// Quantize a real table into `0..=255` with one global affine scale.
///
/// `scale = 255 / max_entry` (1 when the table is all zeros); entries are
/// rounded to nearest, halves away from zero. The maximum entry maps to
/// exactly 255, so any `M`-entry code-pair sum stays within `255 * M`.
pub fn quantize_lut(lut: &DistanceLut) -> Result<IntLut> {
    if lut.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Corruption("non-finite entry in distance table".into()));
    }
    let max = lut.max_entry();
    let scale = if max > 0.0 { 255.0 / max } else { 1.0 };
    let data = lut
        .data
        .iter()
        .map(|&v| {
            let q = (scale * v).round();
            debug_assert!((0.0..=255.0).contains(&q));
            q as u8
        })
        .collect();
    Ok(IntLut {
        num_subspaces: lut.num_subspaces,
        num_centroids: lut.num_centroids,
        scale,
        data,
    })
}

/// A query's distances to every gallery item.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRow {
    pub query_index: usize,
    pub kind: DistanceKind,
    pub values: DistanceValues,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DistanceValues {
    Real(Vec<f64>),
    Int(Vec<u32>),
}

impl DistanceValues {
    pub fn len(&self) -> usize {
        match self {
            DistanceValues::Real(v) => v.len(),
            DistanceValues::Int(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_code(code: &[u16], m: usize, c: usize, what: &str) -> Result<()> {
    if code.len() != m {
        return Err(Error::Corruption(format!(
            "{what} has {} sub-space indices, table expects {m}",
            code.len()
        )));
    }
    if let Some(&bad) = code.iter().find(|&&x| x as usize >= c) {
        return Err(Error::Corruption(format!(
            "{what} index {bad} out of range for C={c}"
        )));
    }
    Ok(())
}

/// Sum of per-sub-space table entries for two codes (the approximate
/// squared distance between the vectors they encode).
pub fn scr_distance(code_a: &[u16], code_b: &[u16], lut: &DistanceLut) -> Result<f64> {
    check_code(code_a, lut.num_subspaces, lut.num_centroids, "code_a")?;
    check_code(code_b, lut.num_subspaces, lut.num_centroids, "code_b")?;
    Ok(scr_distance_unchecked(code_a, code_b, lut))
}

#[inline]
fn scr_distance_unchecked(code_a: &[u16], code_b: &[u16], lut: &DistanceLut) -> f64 {
    let c = lut.num_centroids;
    code_a
        .iter()
        .zip(code_b)
        .enumerate()
        .map(|(m, (&a, &b))| lut.data[(m * c + a as usize) * c + b as usize])
        .sum()
}

/// Integer counterpart of [`scr_distance`]; bounded by `255 * M`.
pub fn int_scr_distance(code_a: &[u16], code_b: &[u16], lut: &IntLut) -> Result<u32> {
    check_code(code_a, lut.num_subspaces, lut.num_centroids, "code_a")?;
    check_code(code_b, lut.num_subspaces, lut.num_centroids, "code_b")?;
    Ok(int_scr_distance_unchecked(code_a, code_b, lut))
}

#[inline]
fn int_scr_distance_unchecked(code_a: &[u16], code_b: &[u16], lut: &IntLut) -> u32 {
    let c = lut.num_centroids;
    code_a
        .iter()
        .zip(code_b)
        .enumerate()
        .map(|(m, (&a, &b))| lut.data[(m * c + a as usize) * c + b as usize] as u32)
        .sum()
}

/// Distances from one coded query to every row of a code matrix.
pub fn distance_row(
    query_index: usize,
    query_code: &[u16],
    gallery: &CodeMatrix,
    table: LutTable<'_>,
) -> Result<DistanceRow> {
    let (m, c) = match table {
        LutTable::Real(lut) => (lut.num_subspaces, lut.num_centroids),
        LutTable::Int(lut) => (lut.num_subspaces, lut.num_centroids),
    };
    if gallery.num_subspaces() != m || gallery.num_centroids() > c {
        return Err(Error::Config(format!(
            "code matrix shape (M={}, C={}) incompatible with table (M={m}, C={c})",
            gallery.num_subspaces(),
            gallery.num_centroids()
        )));
    }
    check_code(query_code, m, c, "query code")?;
    match table {
        LutTable::Real(lut) => {
            let values = (0..gallery.len())
                .map(|j| scr_distance_unchecked(query_code, gallery.code(j), lut))
                .collect();
            Ok(DistanceRow {
                query_index,
                kind: DistanceKind::Scr,
                values: DistanceValues::Real(values),
            })
        }
        LutTable::Int(lut) => {
            let values = (0..gallery.len())
                .map(|j| int_scr_distance_unchecked(query_code, gallery.code(j), lut))
                .collect();
            Ok(DistanceRow {
                query_index,
                kind: DistanceKind::IntScr,
                values: DistanceValues::Int(values),
            })
        }
    }
}

/// Exact squared Euclidean distances from a raw query vector to every
/// gallery row — the oracle baseline for every approximate pipeline.
pub fn exact_distance_row(
    query_index: usize,
    query: &[f32],
    gallery: &FeatureSet,
) -> Result<DistanceRow> {
    if query.len() != gallery.dim() {
        return Err(Error::Config(format!(
            "query dimension {} does not match gallery dimension {}",
            query.len(),
            gallery.dim()
        )));
    }
    let values = gallery.rows().map(|row| squared_distance(query, row)).collect();
    Ok(DistanceRow {
        query_index,
        kind: DistanceKind::Euclidean,
        values: DistanceValues::Real(values),
    })
}

/// Sign-binarized vectors packed into u64 words.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryCodes {
    num_vectors: usize,
    bits: usize,
    words_per_vector: usize,
    words: Vec<u64>,
}

impl BinaryCodes {
    pub fn len(&self) -> usize {
        self.num_vectors
    }

    pub fn is_empty(&self) -> bool {
        self.num_vectors == 0
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_vector..(i + 1) * self.words_per_vector]
    }
}

/// Sign-threshold features at zero into `bits`-bit binary codes.
///
/// When `bits < D` each bit is the sign of the mean over one of `bits`
/// near-equal contiguous coordinate blocks; when `bits == D` it is the
/// per-coordinate sign. Values `>= 0` map to 1.
pub fn binarize_features(set: &FeatureSet, bits: usize) -> Result<BinaryCodes> {
    let dim = set.dim();
    if bits == 0 || bits > dim {
        return Err(Error::Config(format!(
            "bit count {bits} must be in 1..={dim} for dimension {dim}"
        )));
    }
    let words_per_vector = bits.div_ceil(64);
    let mut words = vec![0u64; set.len() * words_per_vector];
    for (i, row) in set.rows().enumerate() {
        let out = &mut words[i * words_per_vector..(i + 1) * words_per_vector];
        for bit in 0..bits {
            // block [bit*dim/bits, (bit+1)*dim/bits): sizes differ by at most 1
            let lo = bit * dim / bits;
            let hi = (bit + 1) * dim / bits;
            let mean: f64 = row[lo..hi].iter().map(|&v| v as f64).sum::<f64>() / (hi - lo) as f64;
            if mean >= 0.0 {
                out[bit / 64] |= 1u64 << (bit % 64);
            }
        }
    }
    Ok(BinaryCodes {
        num_vectors: set.len(),
        bits,
        words_per_vector,
        words,
    })
}

/// Hamming distances (popcount of XOR) from one binary code to a gallery.
pub fn hamming_distance_row(
    query_index: usize,
    query: &[u64],
    gallery: &BinaryCodes,
) -> Result<DistanceRow> {
    if query.len() != gallery.words_per_vector {
        return Err(Error::Config(format!(
            "query has {} words, gallery rows have {}",
            query.len(),
            gallery.words_per_vector
        )));
    }
    let values = (0..gallery.num_vectors)
        .map(|j| {
            gallery
                .row(j)
                .iter()
                .zip(query)
                .map(|(&a, &b)| (a ^ b).count_ones())
                .sum()
        })
        .collect();
    Ok(DistanceRow {
        query_index,
        kind: DistanceKind::Hamming,
        values: DistanceValues::Int(values),
    })
}
