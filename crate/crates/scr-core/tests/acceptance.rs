//! Acceptance suite: one test per release criterion, each printing a
//! `ACCEPTANCE Cxx PASS` line on success (run with `--nocapture` to see
//! them). Expected values come from independent oracles computed here, not
//! from the implementation under test.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use scr_core::distance::{
    binarize_features, build_lut, distance_row, exact_distance_row, int_scr_distance,
    quantize_lut, scr_distance, DistanceKind, DistanceRow, DistanceValues, LutTable,
};
use scr_core::evaluator::{evaluate, Pipeline};
use scr_core::features::{generate_synthetic, split_query_gallery, FeatureSet, SynthSpec};
use scr_core::quantizer::{encode, train_codebook, Codebook};
use scr_core::ranker::{comparison_sort_rank, counting_sort_rank, RankAlgorithm};
use scr_core::trainer::{
    consistency_loss, cross_entropy_loss, run_training, triplet_loss, TrainConfig,
};

fn int_row(values: Vec<u32>) -> DistanceRow {
    DistanceRow {
        query_index: 0,
        kind: DistanceKind::IntScr,
        values: DistanceValues::Int(values),
    }
}

fn real_row(values: Vec<f64>) -> DistanceRow {
    DistanceRow {
        query_index: 0,
        kind: DistanceKind::Euclidean,
        values: DistanceValues::Real(values),
    }
}

/// Central finite differences; the gradient oracle.
fn finite_diff(f: impl Fn(&[f64]) -> f64, point: &[f64], step: f64) -> Vec<f64> {
    let mut grads = Vec::with_capacity(point.len());
    let mut x = point.to_vec();
    for i in 0..point.len() {
        x[i] = point[i] + step;
        let hi = f(&x);
        x[i] = point[i] - step;
        let lo = f(&x);
        x[i] = point[i];
        grads.push((hi - lo) / (2.0 * step));
    }
    grads
}

fn assert_grads_close(analytic: &[f64], numeric: &[f64], tol: f64, what: &str) {
    for (i, (&a, &f)) in analytic.iter().zip(numeric).enumerate() {
        let denom = a.abs().max(f.abs()).max(1e-6);
        assert!(
            ((a - f) / denom).abs() < tol,
            "{what}: gradient mismatch at {i}: analytic {a}, numeric {f}"
        );
    }
}

/// The clustered synthetic regime used by the accuracy-trend criteria.
fn trend_set(seed: u64) -> FeatureSet {
    generate_synthetic(&SynthSpec {
        num_identities: 100,
        instances_per_identity: 10,
        dim: 128,
        cluster_stddev: 2.0,
        identity_separation: 10.0,
        num_cameras: 4,
        rng_seed: seed,
    })
    .unwrap()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

#[test]
fn c01_counting_sort_speedup_at_one_million() {
    let n = 1_000_000usize;
    let max_value = 255 * 4u32;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let ints: Vec<u32> = (0..n).map(|_| rng.random_range(0..=max_value)).collect();
    let floats: Vec<f64> = ints.iter().map(|&v| v as f64).collect();
    let irow = int_row(ints);
    let frow = real_row(floats);

    // warm-up
    counting_sort_rank(&irow, max_value).unwrap();
    comparison_sort_rank(&frow).unwrap();

    let mut counting_times = Vec::new();
    let mut comparison_times = Vec::new();
    for _ in 0..3 {
        let t = Instant::now();
        let a = counting_sort_rank(&irow, max_value).unwrap();
        counting_times.push(t.elapsed().as_secs_f64());

        let t = Instant::now();
        let b = comparison_sort_rank(&frow).unwrap();
        comparison_times.push(t.elapsed().as_secs_f64());
        assert_eq!(a.order, b.order);
    }
    let counting = median(counting_times);
    let comparison = median(comparison_times);
    let speedup = comparison / counting;
    assert!(
        speedup >= 5.0,
        "counting sort only {speedup:.1}x faster ({counting:.4}s vs {comparison:.4}s)"
    );
    println!(
        "ACCEPTANCE C01 PASS — counting sort {speedup:.1}x faster than comparison sort at N=10^6 \
         ({counting:.4}s vs {comparison:.4}s per query, threshold 5x)"
    );
}

#[test]
fn c02_subspace_additivity_at_2048() {
    let dim = 2048usize;
    let n = 100usize;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let make = |rng: &mut ChaCha8Rng| -> FeatureSet {
        let data: Vec<f32> = (0..n * dim).map(|_| normal.sample(rng) as f32).collect();
        FeatureSet::new(dim, data, vec![0; n], vec![0; n]).unwrap()
    };
    let a = make(&mut rng);
    let b = make(&mut rng);

    for m in [4usize, 64, 256] {
        let vr = scr_core::distance::euclidean_matrix(&a, &b, m).unwrap();
        for i in 0..n {
            // the direct O(D) oracle for the global squared distance
            let direct: f64 = a
                .row(i)
                .iter()
                .zip(b.row(i))
                .map(|(&x, &y)| {
                    let d = x as f64 - y as f64;
                    d * d
                })
                .sum();
            let summed = vr.summed(i, i);
            let rel = ((summed - direct) / direct.abs().max(1e-12)).abs();
            assert!(rel < 1e-6, "M={m}, pair {i}: rel error {rel}");
        }
    }
    println!(
        "ACCEPTANCE C02 PASS — sub-space slice sums equal global squared distances \
         within 1e-6 relative for 100 pairs at D=2048, M in {{4, 64, 256}}"
    );
}

#[test]
fn c03_lossless_codebook_reproduces_exact_rankings() {
    let set = generate_synthetic(&SynthSpec {
        num_identities: 50,
        instances_per_identity: 4,
        dim: 512,
        cluster_stddev: 1.0,
        identity_separation: 10.0,
        num_cameras: 2,
        rng_seed: 77,
    })
    .unwrap();
    assert_eq!(set.len(), 200);

    // C = N: every distinct sub-vector becomes a centroid
    let (cb, report) = train_codebook(&set, 4, set.len(), 50, 0.0, None, 5).unwrap();
    assert_eq!(cb.num_centroids(), 200, "sub-vectors were expected to be distinct");
    assert!(
        report.total_quantization_error < 1e-9,
        "codebook is not lossless: error {}",
        report.total_quantization_error
    );

    let codes = encode(&set, &cb).unwrap();
    let lut = build_lut(&cb);
    for qi in 0..set.len() {
        let exact = comparison_sort_rank(&exact_distance_row(qi, set.row(qi), &set).unwrap()).unwrap();
        let approx =
            comparison_sort_rank(&distance_row(qi, codes.code(qi), &codes, LutTable::Real(&lut)).unwrap())
                .unwrap();
        assert_eq!(
            exact.order, approx.order,
            "rankings diverge for query {qi}"
        );
    }
    println!(
        "ACCEPTANCE C03 PASS — lossless codebook rankings identical to brute force \
         (200 queries x 200 gallery, D=512, including tie order)"
    );
}

#[test]
fn c04_integer_quantization_bound() {
    let (m, c) = (4usize, 64usize);
    let set = generate_synthetic(&SynthSpec {
        num_identities: 64,
        instances_per_identity: 4,
        dim: 32,
        cluster_stddev: 1.0,
        identity_separation: 8.0,
        num_cameras: 2,
        rng_seed: 3,
    })
    .unwrap();
    let (cb, _) = train_codebook(&set, m, c, 30, 1e-6, None, 9).unwrap();
    assert_eq!(cb.num_centroids(), c);
    let lut = build_lut(&cb);
    let int = quantize_lut(&lut).unwrap();
    let s = int.scale();

    // per-entry rounding bound, exhaustive over all M x C x C entries
    for sub in 0..m {
        for a in 0..c {
            for b in 0..c {
                let err = (s * lut.entry(sub, a, b) - int.entry(sub, a, b) as f64).abs();
                assert!(err <= 0.5, "entry ({sub},{a},{b}): rounding error {err} > 0.5");
            }
        }
    }

    // summed bound |s * D_SCR - D_IntSCR| <= 0.5 * M over random code pairs
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let bound = 0.5 * m as f64;
    for _ in 0..20_000 {
        let code_a: Vec<u16> = (0..m).map(|_| rng.random_range(0..c as u16)).collect();
        let code_b: Vec<u16> = (0..m).map(|_| rng.random_range(0..c as u16)).collect();
        let real = scr_distance(&code_a, &code_b, &lut).unwrap();
        let quantized = int_scr_distance(&code_a, &code_b, &int).unwrap();
        let err = (s * real - quantized as f64).abs();
        assert!(err <= bound, "code pair bound violated: {err} > {bound}");
    }
    println!(
        "ACCEPTANCE C04 PASS — |scale * D_SCR - D_IntSCR| <= 0.5 per entry over all \
         {m}x{c}x{c} entries and <= 0.5*M over code pairs (M={m}, C={c})"
    );
}

#[test]
fn c05_counting_sort_equals_comparison_sort() {
    // exhaustive: every integer row of length <= 6 with values <= 3
    let mut exhaustive = 0usize;
    for len in 1..=6usize {
        let total = 4usize.pow(len as u32);
        for idx in 0..total {
            let mut values = Vec::with_capacity(len);
            let mut rest = idx;
            for _ in 0..len {
                values.push((rest % 4) as u32);
                rest /= 4;
            }
            let row = int_row(values);
            let a = counting_sort_rank(&row, 3).unwrap();
            let b = comparison_sort_rank(&row).unwrap();
            assert_eq!(a.order, b.order);
            assert_eq!(a.distances, b.distances);
            exhaustive += 1;
        }
    }
    assert_eq!(exhaustive, 4 + 16 + 64 + 256 + 1024 + 4096);

    // randomized: 1000 rows with N up to 10^4
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..1000 {
        let n = rng.random_range(1..=10_000usize);
        let max = rng.random_range(1..=1020u32);
        let values: Vec<u32> = (0..n).map(|_| rng.random_range(0..=max)).collect();
        let row = int_row(values);
        let a = counting_sort_rank(&row, max).unwrap();
        let b = comparison_sort_rank(&row).unwrap();
        assert_eq!(a.order, b.order);
    }
    println!(
        "ACCEPTANCE C05 PASS — counting sort equals comparison sort on {exhaustive} \
         exhaustive small rows and 1000 random rows up to N=10^4"
    );
}

#[test]
fn c06_gradients_match_finite_differences() {
    let step = 1e-5;
    let tol = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let normal = Normal::new(0.0, 1.0).unwrap();

    // cross-entropy: embeddings and classifier
    for t in 0..10 {
        let (n, dim, classes) = (3usize, 4usize, 3usize);
        let emb: Vec<f64> = (0..n * dim).map(|_| normal.sample(&mut rng)).collect();
        let cls: Vec<f64> = (0..classes * dim).map(|_| normal.sample(&mut rng)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let (_, ge, gc) = cross_entropy_loss(&emb, n, dim, &labels, &cls, classes).unwrap();
        let fd_e = finite_diff(
            |e| cross_entropy_loss(e, n, dim, &labels, &cls, classes).unwrap().0,
            &emb,
            step,
        );
        assert_grads_close(&ge, &fd_e, tol, &format!("ce embeddings #{t}"));
        let fd_c = finite_diff(
            |c| cross_entropy_loss(&emb, n, dim, &labels, c, classes).unwrap().0,
            &cls,
            step,
        );
        assert_grads_close(&gc, &fd_c, tol, &format!("ce classifier #{t}"));
    }

    // triplet: active hinge away from the corner
    let mut checked = 0;
    while checked < 10 {
        let dim = 5;
        let a: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        let p: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        let ng: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        let (loss, grads) = triplet_loss(&a, &p, &ng, 0.5).unwrap();
        if loss < 0.05 {
            continue;
        }
        checked += 1;
        let fd = finite_diff(|x| triplet_loss(x, &p, &ng, 0.5).unwrap().0, &a, step);
        assert_grads_close(&grads.anchor, &fd, tol, "triplet anchor");
        let fd = finite_diff(|x| triplet_loss(&a, x, &ng, 0.5).unwrap().0, &p, step);
        assert_grads_close(&grads.positive, &fd, tol, "triplet positive");
        let fd = finite_diff(|x| triplet_loss(&a, &p, x, 0.5).unwrap().0, &ng, step);
        assert_grads_close(&grads.negative, &fd, tol, "triplet negative");
    }

    // consistency: codes held fixed, so the objective is smooth in the batch
    let set = generate_synthetic(&SynthSpec {
        num_identities: 6,
        instances_per_identity: 3,
        dim: 8,
        cluster_stddev: 0.5,
        identity_separation: 6.0,
        num_cameras: 2,
        rng_seed: 5,
    })
    .unwrap();
    let (cb, _) = train_codebook(&set, 2, 6, 25, 1e-9, None, 2).unwrap();
    let lut = build_lut(&cb);
    let int = quantize_lut(&lut).unwrap();
    for t in 0..10 {
        let n = 4usize;
        let emb: Vec<f64> = (0..n * 8).map(|_| normal.sample(&mut rng) * 2.0).collect();
        let emb_f32: Vec<f32> = emb.iter().map(|&v| v as f32).collect();
        let codes = scr_core::quantizer::encode_raw(&emb_f32, n, 8, &cb).unwrap();
        let table = if t % 2 == 0 {
            LutTable::Real(&lut)
        } else {
            LutTable::Int(&int)
        };
        let (_, grad) = consistency_loss(&emb, n, 8, &codes, table, 2).unwrap();
        let fd = finite_diff(
            |e| consistency_loss(e, n, 8, &codes, table, 2).unwrap().0,
            &emb,
            step,
        );
        assert_grads_close(&grad, &fd, tol, &format!("consistency #{t}"));
    }
    println!(
        "ACCEPTANCE C06 PASS — CE, triplet, and consistency gradients match central \
         finite differences (step 1e-5) within 1e-4 relative on 10 instances each"
    );
}

fn int_scr_rank1(query: &FeatureSet, gallery: &FeatureSet, c: usize, seed: u64) -> f64 {
    let (cb, _) = train_codebook(gallery, 4, c, 25, 1e-4, None, seed).unwrap();
    let lut = quantize_lut(&build_lut(&cb)).unwrap();
    let query_codes = encode(query, &cb).unwrap();
    let gallery_codes = encode(gallery, &cb).unwrap();
    evaluate(
        query,
        gallery,
        &Pipeline::IntScr {
            query_codes: &query_codes,
            gallery_codes: &gallery_codes,
            lut: &lut,
        },
        RankAlgorithm::Counting,
        &[1],
    )
    .unwrap()
    .rank1()
}

#[test]
fn c07_rank1_grows_with_centroid_count() {
    let mut rank1_c4 = 0.0;
    let mut rank1_c256 = 0.0;
    for seed in 0..3u64 {
        let set = trend_set(1000 + seed);
        let (query, gallery) = split_query_gallery(&set, 0.25, seed).unwrap();
        rank1_c4 += int_scr_rank1(&query, &gallery, 4, seed);
        rank1_c256 += int_scr_rank1(&query, &gallery, 256, seed);
    }
    rank1_c4 /= 3.0;
    rank1_c256 /= 3.0;
    let gap_points = (rank1_c256 - rank1_c4) * 100.0;
    assert!(
        gap_points >= 5.0,
        "C=256 rank-1 {rank1_c256:.3} vs C=4 {rank1_c4:.3}: gap {gap_points:.1} points < 5"
    );
    println!(
        "ACCEPTANCE C07 PASS — mean rank-1 over 3 seeds: C=256 {rank1_c256:.3} vs C=4 \
         {rank1_c4:.3} ({gap_points:.1} points, threshold 5)"
    );
}

#[test]
fn c08_short_code_intscr_beats_hamming() {
    let mut intscr = 0.0;
    let mut hamming = 0.0;
    for seed in 0..3u64 {
        let set = trend_set(1000 + seed);
        let (query, gallery) = split_query_gallery(&set, 0.25, seed).unwrap();
        // both sides use 32-bit codes: M=4 x log2(256) vs 32 sign bits
        intscr += int_scr_rank1(&query, &gallery, 256, seed);
        let query_bits = binarize_features(&query, 32).unwrap();
        let gallery_bits = binarize_features(&gallery, 32).unwrap();
        hamming += evaluate(
            &query,
            &gallery,
            &Pipeline::Hamming {
                query_bits: &query_bits,
                gallery_bits: &gallery_bits,
            },
            RankAlgorithm::Counting,
            &[1],
        )
        .unwrap()
        .rank1();
    }
    intscr /= 3.0;
    hamming /= 3.0;
    let gap_points = (intscr - hamming) * 100.0;
    assert!(
        gap_points >= 10.0,
        "IntSCR rank-1 {intscr:.3} vs Hamming {hamming:.3}: gap {gap_points:.1} points < 10"
    );
    println!(
        "ACCEPTANCE C08 PASS — 32-bit codes, mean rank-1 over 3 seeds: IntSCR {intscr:.3} \
         vs Hamming {hamming:.3} ({gap_points:.1} points, threshold 10)"
    );
}

#[test]
fn c09_training_descends_and_refreshes_monotonically() {
    let set = generate_synthetic(&SynthSpec {
        num_identities: 20,
        instances_per_identity: 10,
        dim: 32,
        cluster_stddev: 0.3,
        identity_separation: 6.0,
        num_cameras: 2,
        rng_seed: 4,
    })
    .unwrap();
    let config = TrainConfig {
        epochs: 20,
        num_subspaces: 4,
        num_centroids: 16,
        kmeans_iters: 15,
        rng_seed: 1,
        ..TrainConfig::default() // T=10, alpha=0.01, batch 64, lr schedule
    };
    assert_eq!(config.refresh_period, 10);
    assert_eq!(config.alpha, 0.01);

    let (_, _, log) = run_training(&set, &config).unwrap();
    let first = log.epochs.first().unwrap().total;
    let last = log.epochs.last().unwrap().total;
    assert!(last < first, "loss did not descend: epoch 1 {first}, epoch 20 {last}");

    assert_eq!(log.refreshes.len(), 2, "expected refreshes at epochs 10 and 20");
    for refresh in &log.refreshes {
        assert!(
            refresh.error_after <= refresh.error_before,
            "refresh at epoch {} increased quantization error: {} -> {}",
            refresh.epoch,
            refresh.error_before,
            refresh.error_after
        );
    }
    println!(
        "ACCEPTANCE C09 PASS — 20-epoch default run: total loss {first:.4} -> {last:.4}, \
         both codebook refreshes non-increasing in quantization error"
    );
}

#[test]
fn c10_absolute_benchmark_numbers_out_of_scope() {
    // Absolute accuracy numbers on the restricted person re-identification
    // benchmarks (Market-1501, DukeMTMC-reID) depend on those datasets and
    // a deep CNN backbone; neither ships with this artifact. The property
    // and trend criteria above (C01 to C09) are the substitute contract.
    println!(
        "ACCEPTANCE C10 PASS — dataset-bound absolute numbers are explicitly out of \
         scope; the trend/property suite substitutes for them"
    );
}

/// Not a numbered criterion: the codebook artifact itself stays sane at the
/// sweep's corner configuration (M=256 at D=2048 gives 2048-bit codes).
#[test]
fn code_length_arithmetic_matches_sweep() {
    let cb = Codebook::new(4, 256, 512, vec![0.0; 4 * 256 * 512]).unwrap();
    assert_eq!(cb.code_bits(), Some(32));
    let cb = Codebook::new(256, 256, 8, vec![0.0; 256 * 256 * 8]).unwrap();
    assert_eq!(cb.code_bits(), Some(2048));
}
