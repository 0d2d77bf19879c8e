//! Labeled embedding sets: synthesis, persistence, and query/gallery splits.
//!
//! A [`FeatureSet`] is the raw input to everything else in this crate: `N`
//! row vectors of dimension `D` with a person identity and a camera label
//! per row. Sets are immutable after construction and validated up front,
//! so downstream code can assume finite values and consistent lengths.
//!
//! # `.fvs` file layout (all little-endian)
//!
//! ```text
//! magic   b"SCRF"                      (4 bytes)
//! version u32 = 1                      (4 bytes)
//! n       u64                          (8 bytes)
//! dim     u32                          (4 bytes)
//! labels  n x { person_id u32, camera_id u16 }
//! vectors n x dim x f32, row-major
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::binio::{self, CountingReader};
use crate::error::{Error, Result};

const FVS_MAGIC: &[u8; 4] = b"SCRF";
const FVS_VERSION: u32 = 1;

/// `N` labeled embedding vectors of dimension `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    data: Vec<f32>,
    person_ids: Vec<u32>,
    camera_ids: Vec<u16>,
}

impl FeatureSet {
    /// Build a set from row-major data, validating every invariant.
    pub fn new(
        dim: usize,
        data: Vec<f32>,
        person_ids: Vec<u32>,
        camera_ids: Vec<u16>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("dim", "must be at least 1"));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::validation(
                "vectors",
                format!("data length {} is not a positive multiple of dim {dim}", data.len()),
            ));
        }
        let n = data.len() / dim;
        if person_ids.len() != n {
            return Err(Error::validation(
                "person_ids",
                format!("expected {n} labels, got {}", person_ids.len()),
            ));
        }
        if camera_ids.len() != n {
            return Err(Error::validation(
                "camera_ids",
                format!("expected {n} labels, got {}", camera_ids.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(
                "vectors",
                format!("non-finite value at row {}, column {}", pos / dim, pos % dim),
            ));
        }
        Ok(FeatureSet {
            dim,
            data,
            person_ids,
            camera_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        false // N >= 1 by construction
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn vectors(&self) -> &[f32] {
        &self.data
    }

    pub fn person_ids(&self) -> &[u32] {
        &self.person_ids
    }

    pub fn camera_ids(&self) -> &[u16] {
        &self.camera_ids
    }

    /// Number of distinct person identities.
    pub fn num_identities(&self) -> usize {
        let mut ids: Vec<u32> = self.person_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Row indices grouped by person id, in ascending id order.
    pub fn rows_by_identity(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut map: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &id) in self.person_ids.iter().enumerate() {
            map.entry(id).or_default().push(i);
        }
        map
    }

    /// New set containing the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Argument("subset of zero rows".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        let mut person_ids = Vec::with_capacity(indices.len());
        let mut camera_ids = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Argument(format!(
                    "row index {i} out of range for set of {}",
                    self.len()
                )));
            }
            data.extend_from_slice(self.row(i));
            person_ids.push(self.person_ids[i]);
            camera_ids.push(self.camera_ids[i]);
        }
        FeatureSet::new(self.dim, data, person_ids, camera_ids)
    }

    /// Copy of this set with every row scaled to unit L2 norm.
    ///
    /// Rows with zero norm are left untouched. This is opt-in; nothing in
    /// the pipeline normalizes implicitly.
    pub fn l2_normalized(&self) -> Self {
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.dim) {
            let norm = row.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v = (*v as f64 / norm) as f32;
                }
            }
        }
        out
    }
}

/// Parameters for synthetic clustered feature generation.
///
/// Identity means are drawn uniformly from the hypercube
/// `[-identity_separation/2, identity_separation/2]^dim` (centered at the
/// origin so sign-based binarization stays meaningful); instances are the
/// mean plus isotropic Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_identities: usize,
    pub instances_per_identity: usize,
    pub dim: usize,
    pub cluster_stddev: f64,
    pub identity_separation: f64,
    pub num_cameras: usize,
    pub rng_seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.num_identities == 0 {
            return Err(Error::validation("num_identities", "must be positive"));
        }
        if self.instances_per_identity == 0 {
            return Err(Error::validation("instances_per_identity", "must be positive"));
        }
        if self.dim == 0 {
            return Err(Error::validation("dim", "must be positive"));
        }
        if self.cluster_stddev.is_nan() || self.cluster_stddev <= 0.0 {
            return Err(Error::validation("cluster_stddev", "must be > 0"));
        }
        if self.identity_separation.is_nan() || self.identity_separation <= 0.0 {
            return Err(Error::validation("identity_separation", "must be > 0"));
        }
        if self.num_cameras < 2 {
            return Err(Error::validation("num_cameras", "must be at least 2"));
        }
        Ok(())
    }
}

/// Generate a clustered synthetic feature set, deterministically per seed.
///
/// Rows are identity-major: identity 0's instances first, then identity 1,
/// and so on. Camera ids cycle round-robin over the global row index, so any
/// identity with two or more instances spans at least two cameras.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<FeatureSet> {
    spec.validate()?;
    let n = spec.num_identities * spec.instances_per_identity;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let noise = Normal::new(0.0, spec.cluster_stddev)
        .map_err(|e| Error::validation("cluster_stddev", e.to_string()))?;
    let half = spec.identity_separation / 2.0;

    let mut data = Vec::with_capacity(n * spec.dim);
    let mut person_ids = Vec::with_capacity(n);
    let mut camera_ids = Vec::with_capacity(n);
    let mut mean = vec![0.0f64; spec.dim];
    for id in 0..spec.num_identities {
        for m in mean.iter_mut() {
            *m = rng.random_range(-half..=half);
        }
        for _ in 0..spec.instances_per_identity {
            let global = person_ids.len();
            for &m in mean.iter() {
                data.push((m + noise.sample(&mut rng)) as f32);
            }
            person_ids.push(id as u32);
            camera_ids.push((global % spec.num_cameras) as u16);
        }
    }
    FeatureSet::new(spec.dim, data, person_ids, camera_ids)
}

/// Write a feature set in `.fvs` format, overwriting any existing file.
pub fn save_features(set: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    binio::write_magic(&mut w, FVS_MAGIC)?;
    binio::write_u32(&mut w, FVS_VERSION)?;
    binio::write_u64(&mut w, set.len() as u64)?;
    binio::write_u32(&mut w, set.dim as u32)?;
    for i in 0..set.len() {
        binio::write_u32(&mut w, set.person_ids[i])?;
        binio::write_u16(&mut w, set.camera_ids[i])?;
    }
    for &v in &set.data {
        binio::write_f32(&mut w, v)?;
    }
    w.flush()?;
    Ok(())
}

/// Load a feature set from `.fvs` format.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let file = File::open(path)?;
    let mut r = CountingReader::new(BufReader::new(file));
    r.read_magic(FVS_MAGIC)?;
    r.read_version(FVS_VERSION)?;
    let n_at = r.offset();
    let n = r.read_u64("vector count")?;
    let dim = r.read_u32("dimension")? as usize;
    if n == 0 {
        return Err(Error::format(n_at, "vector count must be at least 1"));
    }
    if dim == 0 {
        return Err(Error::format(n_at + 8, "dimension must be at least 1"));
    }
    let n = usize::try_from(n)
        .map_err(|_| Error::format(n_at, format!("vector count {n} exceeds address space")))?;

    let mut person_ids = Vec::with_capacity(n);
    let mut camera_ids = Vec::with_capacity(n);
    for _ in 0..n {
        person_ids.push(r.read_u32("person id")?);
        camera_ids.push(r.read_u16("camera id")?);
    }
    let mut data = vec![0.0f32; n * dim];
    let payload_at = r.offset();
    r.read_f32_into(&mut data, "vector payload")?;
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            payload_at + 4 * pos as u64,
            format!("non-finite value in row {}", pos / dim),
        ));
    }
    FeatureSet::new(dim, data, person_ids, camera_ids)
}

/// Split into (query, gallery) so every identity appears in both halves.
///
/// Per identity, `ceil(query_fraction * instances)` rows go to the query
/// side, capped at `instances - 1` so the gallery keeps at least one. The
/// choice of rows is shuffled deterministically from `rng_seed`.
pub fn split_query_gallery(
    set: &FeatureSet,
    query_fraction: f64,
    rng_seed: u64,
) -> Result<(FeatureSet, FeatureSet)> {
    if !(query_fraction > 0.0 && query_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "query_fraction must be in (0,1), got {query_fraction}"
        )));
    }
    let by_id = set.rows_by_identity();
    let singletons: Vec<u32> = by_id
        .iter()
        .filter(|(_, rows)| rows.len() < 2)
        .map(|(&id, _)| id)
        .collect();
    if !singletons.is_empty() {
        return Err(Error::Protocol(format!(
            "identities with a single instance cannot be split: {singletons:?}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut query_rows = Vec::new();
    let mut gallery_rows = Vec::new();
    for (_, rows) in by_id {
        let take = ((query_fraction * rows.len() as f64).ceil() as usize).min(rows.len() - 1);
        let mut shuffled = rows;
        shuffled.shuffle(&mut rng);
        query_rows.extend_from_slice(&shuffled[..take]);
        gallery_rows.extend_from_slice(&shuffled[take..]);
    }
    query_rows.sort_unstable();
    gallery_rows.sort_unstable();
    Ok((set.subset(&query_rows)?, set.subset(&gallery_rows)?))
}
