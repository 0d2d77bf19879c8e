//! Retrieval evaluation (CMC / mAP under junk filtering) and the ranking
//! speed benchmark.
//!
//! Filtering follows the standard cross-camera protocol: gallery items
//! sharing *both* the person id and the camera id with the query are junk
//! and removed from the ranking; queries left without a single valid
//! same-id cross-camera match are skipped and counted. AP per query is the
//! mean of the precision at each relevant hit over the filtered ranking.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distance::{
    binarize_features, build_lut, distance_row, exact_distance_row, hamming_distance_row,
    quantize_lut, BinaryCodes, DistanceKind, DistanceLut, DistanceRow, DistanceValues, IntLut,
    LutTable,
};
use crate::error::{Error, Result};
use crate::features::{generate_synthetic, FeatureSet, SynthSpec};
use crate::parallel;
use crate::quantizer::{encode, train_codebook, CodeMatrix};
use crate::ranker::{comparison_sort_rank, counting_sort_rank, RankAlgorithm, RankResult};

/// Distance inputs for one evaluation run. Labels always come from the
/// query/gallery feature sets passed to [`evaluate`].
pub enum Pipeline<'a> {
    /// Brute-force squared Euclidean on the raw vectors.
    Exact,
    Scr {
        query_codes: &'a CodeMatrix,
        gallery_codes: &'a CodeMatrix,
        lut: &'a DistanceLut,
    },
    IntScr {
        query_codes: &'a CodeMatrix,
        gallery_codes: &'a CodeMatrix,
        lut: &'a IntLut,
    },
    Hamming {
        query_bits: &'a BinaryCodes,
        gallery_bits: &'a BinaryCodes,
    },
}

impl Pipeline<'_> {
    pub fn kind(&self) -> DistanceKind {
        match self {
            Pipeline::Exact => DistanceKind::Euclidean,
            Pipeline::Scr { .. } => DistanceKind::Scr,
            Pipeline::IntScr { .. } => DistanceKind::IntScr,
            Pipeline::Hamming { .. } => DistanceKind::Hamming,
        }
    }

    /// The ranker a pipeline would use when the caller has no preference:
    /// counting sort for integer distances, comparison sort otherwise.
    pub fn natural_ranker(&self) -> RankAlgorithm {
        match self {
            Pipeline::Exact | Pipeline::Scr { .. } => RankAlgorithm::Comparison,
            Pipeline::IntScr { .. } | Pipeline::Hamming { .. } => RankAlgorithm::Counting,
        }
    }

    fn row(&self, query_index: usize, query: &FeatureSet, gallery: &FeatureSet) -> Result<DistanceRow> {
        match self {
            Pipeline::Exact => exact_distance_row(query_index, query.row(query_index), gallery),
            Pipeline::Scr {
                query_codes,
                gallery_codes,
                lut,
            } => distance_row(
                query_index,
                query_codes.code(query_index),
                gallery_codes,
                LutTable::Real(lut),
            ),
            Pipeline::IntScr {
                query_codes,
                gallery_codes,
                lut,
            } => distance_row(
                query_index,
                query_codes.code(query_index),
                gallery_codes,
                LutTable::Int(lut),
            ),
            Pipeline::Hamming {
                query_bits,
                gallery_bits,
            } => hamming_distance_row(query_index, query_bits.row(query_index), gallery_bits),
        }
    }

    fn counting_max(&self) -> u32 {
        match self {
            Pipeline::IntScr { lut, .. } => lut.max_distance(),
            Pipeline::Hamming { query_bits, .. } => query_bits.bits() as u32,
            _ => 0,
        }
    }

    fn validate(&self, query: &FeatureSet, gallery: &FeatureSet) -> Result<()> {
        let check = |n_q: usize, n_g: usize| -> Result<()> {
            if n_q != query.len() || n_g != gallery.len() {
                return Err(Error::Contract(format!(
                    "pipeline inputs ({n_q} query / {n_g} gallery rows) misaligned with label sets ({} / {})",
                    query.len(),
                    gallery.len()
                )));
            }
            Ok(())
        };
        match self {
            Pipeline::Exact => Ok(()),
            Pipeline::Scr {
                query_codes,
                gallery_codes,
                ..
            } => check(query_codes.len(), gallery_codes.len()),
            Pipeline::IntScr {
                query_codes,
                gallery_codes,
                ..
            } => check(query_codes.len(), gallery_codes.len()),
            Pipeline::Hamming {
                query_bits,
                gallery_bits,
            } => check(query_bits.len(), gallery_bits.len()),
        }
    }
}

/// Accuracy metrics for one pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Hit rate within the top k, for each requested k (the full gallery
    /// size is always included).
    pub rank_k: BTreeMap<usize, f64>,
    pub mean_ap: f64,
    pub num_queries_evaluated: usize,
    pub num_queries_skipped: usize,
    pub distance_kind: DistanceKind,
}

impl EvalReport {
    pub fn rank1(&self) -> f64 {
        self.rank_k.get(&1).copied().unwrap_or(0.0)
    }

    /// CSV with a fixed header: one row per metric.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "distance_kind,metric,k,value")?;
        let kind = self.distance_kind.as_str();
        for (&k, &v) in &self.rank_k {
            writeln!(w, "{kind},rank,{k},{v}")?;
        }
        writeln!(w, "{kind},map,,{}", self.mean_ap)?;
        writeln!(w, "{kind},queries_evaluated,,{}", self.num_queries_evaluated)?;
        writeln!(w, "{kind},queries_skipped,,{}", self.num_queries_skipped)?;
        Ok(())
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "pipeline: {}", self.distance_kind.as_str());
        let _ = writeln!(
            out,
            "queries evaluated: {} (skipped: {})",
            self.num_queries_evaluated, self.num_queries_skipped
        );
        for (&k, &v) in &self.rank_k {
            let _ = writeln!(out, "rank-{k:<4} {:.4}", v);
        }
        let _ = writeln!(out, "mAP      {:.4}", self.mean_ap);
        out
    }
}

/// Evaluate one pipeline over a query/gallery pair.
///
/// `ks` selects the CMC points to report; the gallery size is always added.
pub fn evaluate(
    query: &FeatureSet,
    gallery: &FeatureSet,
    pipeline: &Pipeline<'_>,
    ranker: RankAlgorithm,
    ks: &[usize],
) -> Result<EvalReport> {
    pipeline.validate(query, gallery)?;
    if query.dim() != gallery.dim() {
        return Err(Error::Config("query/gallery dimension mismatch".into()));
    }

    let max_value = pipeline.counting_max();
    // (first_hit_rank, ap) per query; None = skipped (no valid match)
    let per_query: Vec<Result<Option<(usize, f64)>>> = parallel::map_indexed(query.len(), |qi| {
        let row = pipeline.row(qi, query, gallery)?;
        let ranking = match ranker {
            RankAlgorithm::Counting => counting_sort_rank(&row, max_value)?,
            RankAlgorithm::Comparison => comparison_sort_rank(&row)?,
        };
        Ok(score_query(
            query.person_ids()[qi],
            query.camera_ids()[qi],
            gallery,
            &ranking,
        ))
    });

    let mut ranks = Vec::with_capacity(query.len());
    let mut ap_sum = 0.0;
    let mut skipped = 0usize;
    for result in per_query {
        match result? {
            Some((first_hit, ap)) => {
                ranks.push(first_hit);
                ap_sum += ap;
            }
            None => skipped += 1,
        }
    }
    if ranks.is_empty() {
        return Err(Error::Protocol(
            "no query has a valid cross-camera match in the gallery".into(),
        ));
    }

    let evaluated = ranks.len();
    let mut rank_k = BTreeMap::new();
    let mut all_ks: Vec<usize> = ks.iter().copied().filter(|&k| k >= 1).collect();
    all_ks.push(gallery.len());
    for k in all_ks {
        let hits = ranks.iter().filter(|&&r| r <= k).count();
        rank_k.insert(k, hits as f64 / evaluated as f64);
    }

    Ok(EvalReport {
        rank_k,
        mean_ap: ap_sum / evaluated as f64,
        num_queries_evaluated: evaluated,
        num_queries_skipped: skipped,
        distance_kind: pipeline.kind(),
    })
}

/// Walk a ranking, drop junk (same id and same camera), and return the
/// 1-based rank of the first valid match plus the average precision.
fn score_query(
    person: u32,
    camera: u16,
    gallery: &FeatureSet,
    ranking: &RankResult,
) -> Option<(usize, f64)> {
    let mut filtered_pos = 0usize;
    let mut hits = 0usize;
    let mut first_hit = None;
    let mut precision_sum = 0.0;
    for &gi in &ranking.order {
        let g_person = gallery.person_ids()[gi as usize];
        let g_camera = gallery.camera_ids()[gi as usize];
        if g_person == person && g_camera == camera {
            continue; // junk: same identity seen by the same camera
        }
        filtered_pos += 1;
        if g_person == person {
            hits += 1;
            precision_sum += hits as f64 / filtered_pos as f64;
            first_hit.get_or_insert(filtered_pos);
        }
    }
    first_hit.map(|rank| (rank, precision_sum / hits as f64))
}

/// Counts of distinct values in paired float/integer distance rows.
///
/// Integer distances collapse into at most `255 * M + 1` buckets while the
/// float population stays fine-grained; the ratio of the two counts is what
/// makes counting sort effective.
pub fn distinct_distance_census(rows: &[DistanceRow]) -> (usize, usize) {
    let mut floats = std::collections::HashSet::new();
    let mut ints = std::collections::HashSet::new();
    for row in rows {
        match &row.values {
            DistanceValues::Real(vs) => {
                for &v in vs {
                    floats.insert(v.to_bits());
                }
            }
            DistanceValues::Int(vs) => {
                for &v in vs {
                    ints.insert(v);
                }
            }
        }
    }
    (floats.len(), ints.len())
}

/// Configuration for [`bench_ranking`].
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub gallery_sizes: Vec<usize>,
    pub pipelines: Vec<DistanceKind>,
    pub dim: usize,
    pub num_subspaces: usize,
    pub num_centroids: usize,
    /// Bits for the Hamming baseline; defaults to the code length `8 * M`.
    pub hamming_bits: Option<usize>,
    pub num_queries: usize,
    pub warmup_queries: usize,
    /// Codebooks are trained on at most this many gallery rows.
    pub train_sample: usize,
    /// Sizes whose feature matrix would exceed this many bytes are skipped.
    pub memory_budget_bytes: usize,
    pub rng_seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            gallery_sizes: vec![1_000, 10_000, 100_000],
            pipelines: vec![
                DistanceKind::Euclidean,
                DistanceKind::Scr,
                DistanceKind::IntScr,
                DistanceKind::Hamming,
            ],
            dim: 128,
            num_subspaces: 4,
            num_centroids: 256,
            hamming_bits: None,
            num_queries: 10,
            warmup_queries: 1,
            train_sample: 10_000,
            memory_budget_bytes: 2 << 30,
            rng_seed: 0,
        }
    }
}

/// One benchmark measurement.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub gallery_size: usize,
    pub distance_kind: DistanceKind,
    pub code_length_bits: usize,
    pub build_time_s: f64,
    pub mean_query_time_s: f64,
    pub mean_distance_time_s: f64,
    pub mean_sort_time_s: f64,
    pub queries_per_second: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// (gallery_size, reason) for sizes that could not be measured.
    pub skipped: Vec<(usize, String)>,
}

impl BenchReport {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(
            w,
            "gallery_size,distance_kind,code_length_bits,build_time_s,mean_query_time_s,mean_distance_time_s,mean_sort_time_s,queries_per_second"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.gallery_size,
                r.distance_kind.as_str(),
                r.code_length_bits,
                r.build_time_s,
                r.mean_query_time_s,
                r.mean_distance_time_s,
                r.mean_sort_time_s,
                r.queries_per_second
            )?;
        }
        Ok(())
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>12} {:>10} {:>6} {:>12} {:>12} {:>12} {:>12}",
            "gallery", "pipeline", "bits", "build_s", "query_s", "dist_s", "sort_s"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>12} {:>10} {:>6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
                r.gallery_size,
                r.distance_kind.as_str(),
                r.code_length_bits,
                r.build_time_s,
                r.mean_query_time_s,
                r.mean_distance_time_s,
                r.mean_sort_time_s
            );
        }
        for (size, reason) in &self.skipped {
            let _ = writeln!(out, "skipped size {size}: {reason}");
        }
        out
    }
}

/// Time the online phase — distance row plus ranking, per query — for each
/// (gallery size, pipeline) pair over synthetic features.
///
/// Offline structures (codebooks, tables, codes, binarizations) are built
/// outside the timed region and reported as `build_time_s`. Query execution
/// is single-threaded so per-query times are comparable across pipelines.
pub fn bench_ranking(config: &BenchConfig) -> Result<BenchReport> {
    if config.gallery_sizes.is_empty() || config.pipelines.is_empty() {
        return Err(Error::Argument("nothing to benchmark".into()));
    }
    if config.num_queries == 0 || config.warmup_queries == 0 {
        return Err(Error::Argument("need at least one query and one warm-up pass".into()));
    }

    let mut report = BenchReport::default();
    let mut sizes: Vec<usize> = Vec::new();
    for &size in &config.gallery_sizes {
        if size == 0 {
            report.skipped.push((size, "empty gallery".into()));
            continue;
        }
        let bytes = (size + config.num_queries) * config.dim * 4;
        if bytes > config.memory_budget_bytes {
            report.skipped.push((
                size,
                format!(
                    "feature matrix needs {bytes} bytes, budget is {}",
                    config.memory_budget_bytes
                ),
            ));
        } else {
            sizes.push(size);
        }
    }
    if sizes.is_empty() {
        return Ok(report);
    }
    let max_size = *sizes.iter().max().unwrap();

    // one label per row keeps generation simple; the benchmark measures
    // speed, not accuracy, so the identity structure is irrelevant
    let all = generate_synthetic(&SynthSpec {
        num_identities: max_size + config.num_queries,
        instances_per_identity: 1,
        dim: config.dim,
        cluster_stddev: 1.0,
        identity_separation: 10.0,
        num_cameras: 2,
        rng_seed: config.rng_seed,
    })?;
    let query_rows: Vec<usize> = (max_size..max_size + config.num_queries).collect();
    let queries = all.subset(&query_rows)?;
    let gallery_all = all.subset(&(0..max_size).collect::<Vec<_>>())?;
    drop(all);

    let needs_codes = config
        .pipelines
        .iter()
        .any(|k| matches!(k, DistanceKind::Scr | DistanceKind::IntScr));
    let mut codebook = None;
    let mut codebook_build_s = 0.0;
    if needs_codes {
        let t0 = Instant::now();
        let train = if gallery_all.len() > config.train_sample {
            let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed ^ 0x5eed);
            let mut rows: Vec<usize> = (0..gallery_all.len()).collect();
            for i in 0..config.train_sample {
                let j = rng.random_range(i..rows.len());
                rows.swap(i, j);
            }
            rows.truncate(config.train_sample);
            gallery_all.subset(&rows)?
        } else {
            gallery_all.clone()
        };
        let (cb, _) = train_codebook(
            &train,
            config.num_subspaces,
            config.num_centroids,
            20,
            1e-4,
            None,
            config.rng_seed,
        )?;
        codebook_build_s = t0.elapsed().as_secs_f64();
        codebook = Some(cb);
    }

    for &size in &sizes {
        let gallery = gallery_all.subset(&(0..size).collect::<Vec<_>>())?;
        for &kind in &config.pipelines {
            let row = bench_one(config, &queries, &gallery, kind, codebook.as_ref(), codebook_build_s)?;
            report.rows.push(row);
        }
    }
    Ok(report)
}

fn bench_one(
    config: &BenchConfig,
    queries: &FeatureSet,
    gallery: &FeatureSet,
    kind: DistanceKind,
    codebook: Option<&crate::quantizer::Codebook>,
    codebook_build_s: f64,
) -> Result<BenchRow> {
    enum Prepared {
        Exact,
        Scr {
            query_codes: CodeMatrix,
            gallery_codes: CodeMatrix,
            lut: DistanceLut,
        },
        IntScr {
            query_codes: CodeMatrix,
            gallery_codes: CodeMatrix,
            lut: IntLut,
        },
        Hamming {
            query_bits: BinaryCodes,
            gallery_bits: BinaryCodes,
        },
    }

    let build_start = Instant::now();
    let (prepared, code_length_bits) = match kind {
        DistanceKind::Euclidean => (Prepared::Exact, config.dim * 32),
        DistanceKind::Scr | DistanceKind::IntScr => {
            let cb = codebook.expect("codebook built for coded pipelines");
            let gallery_codes = encode(gallery, cb)?;
            let query_codes = encode(queries, cb)?;
            let lut = build_lut(cb);
            let bits = cb
                .code_bits()
                .map(|b| b as usize)
                .unwrap_or(cb.num_subspaces() * 16);
            if kind == DistanceKind::Scr {
                (
                    Prepared::Scr {
                        query_codes,
                        gallery_codes,
                        lut,
                    },
                    bits,
                )
            } else {
                let lut = quantize_lut(&lut)?;
                (
                    Prepared::IntScr {
                        query_codes,
                        gallery_codes,
                        lut,
                    },
                    bits,
                )
            }
        }
        DistanceKind::Hamming => {
            let bits = config
                .hamming_bits
                .unwrap_or(8 * config.num_subspaces)
                .min(config.dim);
            (
                Prepared::Hamming {
                    query_bits: binarize_features(queries, bits)?,
                    gallery_bits: binarize_features(gallery, bits)?,
                },
                bits,
            )
        }
    };
    let mut build_time_s = build_start.elapsed().as_secs_f64();
    if matches!(kind, DistanceKind::Scr | DistanceKind::IntScr) {
        build_time_s += codebook_build_s;
    }

    let run_query = |qi: usize| -> Result<(f64, f64)> {
        let t0 = Instant::now();
        let row = match &prepared {
            Prepared::Exact => exact_distance_row(qi, queries.row(qi), gallery)?,
            Prepared::Scr {
                query_codes,
                gallery_codes,
                lut,
            } => distance_row(qi, query_codes.code(qi), gallery_codes, LutTable::Real(lut))?,
            Prepared::IntScr {
                query_codes,
                gallery_codes,
                lut,
            } => distance_row(qi, query_codes.code(qi), gallery_codes, LutTable::Int(lut))?,
            Prepared::Hamming {
                query_bits,
                gallery_bits,
            } => hamming_distance_row(qi, query_bits.row(qi), gallery_bits)?,
        };
        let distance_s = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let ranking = match &prepared {
            Prepared::Exact | Prepared::Scr { .. } => comparison_sort_rank(&row)?,
            Prepared::IntScr { lut, .. } => counting_sort_rank(&row, lut.max_distance())?,
            Prepared::Hamming { query_bits, .. } => {
                counting_sort_rank(&row, query_bits.bits() as u32)?
            }
        };
        let sort_s = t1.elapsed().as_secs_f64();
        std::hint::black_box(&ranking);
        Ok((distance_s, sort_s))
    };

    for w in 0..config.warmup_queries.min(queries.len()) {
        run_query(w)?;
    }
    let mut distance_total = 0.0;
    let mut sort_total = 0.0;
    for qi in 0..config.num_queries.min(queries.len()) {
        let (d, s) = run_query(qi)?;
        distance_total += d;
        sort_total += s;
    }
    let n = config.num_queries.min(queries.len()) as f64;
    let mean_query = (distance_total + sort_total) / n;
    Ok(BenchRow {
        gallery_size: gallery.len(),
        distance_kind: kind,
        code_length_bits,
        build_time_s,
        mean_query_time_s: mean_query,
        mean_distance_time_s: distance_total / n,
        mean_sort_time_s: sort_total / n,
        queries_per_second: if mean_query > 0.0 { 1.0 / mean_query } else { f64::INFINITY },
    })
}
