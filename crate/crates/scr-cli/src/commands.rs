//! Implementations of the six subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use scr_core::distance::{
    binarize_features, build_lut, distance_row, exact_distance_row, hamming_distance_row,
    load_lut, quantize_lut, AnyLut, DistanceKind, DistanceValues, LutTable,
};
use scr_core::evaluator::{bench_ranking, evaluate, BenchConfig, Pipeline};
use scr_core::features::{
    generate_synthetic, load_features, save_features, split_query_gallery, SynthSpec,
};
use scr_core::quantizer::{encode, train_codebook, CodeMatrix, Codebook};
use scr_core::ranker::{comparison_sort_rank, counting_sort_rank, top_k, RankAlgorithm, RankResult};
use scr_core::trainer::{run_training, LrSchedule, TrainConfig};

use crate::args::{BenchArgs, BuildArgs, EvalArgs, GenArgs, SearchArgs, SplitArgs, TrainArgs};
use crate::config::{parse_sizes, required, FileConfig};
use crate::CliError;

fn file_config(path: &Option<PathBuf>) -> Result<FileConfig, CliError> {
    match path {
        Some(p) => FileConfig::load(p),
        None => Ok(FileConfig::default()),
    }
}

fn check_input(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "input file not found: {}",
            path.display()
        )))
    }
}

fn open_out(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

pub fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let mut cfg = file_config(&args.config)?;
    let spec = SynthSpec {
        num_identities: required(cfg.merge(args.ids, "ids")?, "ids")?,
        instances_per_identity: required(cfg.merge(args.per_id, "per-id")?, "per-id")?,
        dim: required(cfg.merge(args.dim, "dim")?, "dim")?,
        cluster_stddev: cfg.merge(args.stddev, "stddev")?.unwrap_or(1.0),
        identity_separation: cfg.merge(args.sep, "sep")?.unwrap_or(10.0),
        num_cameras: cfg.merge(args.cameras, "cameras")?.unwrap_or(4),
        rng_seed: cfg.merge(args.seed, "seed")?.unwrap_or(0),
    };
    let normalize = cfg.merge_bool(args.normalize, "normalize")?;
    let out = required(cfg.merge(args.out, "out")?, "out")?;
    cfg.finish()?;

    let mut set = generate_synthetic(&spec)?;
    if normalize {
        set = set.l2_normalized();
    }
    save_features(&set, &out)?;
    println!(
        "wrote {}: N={} D={} identities={} cameras={}{}",
        out.display(),
        set.len(),
        set.dim(),
        set.num_identities(),
        spec.num_cameras,
        if normalize { " (unit-normalized)" } else { "" }
    );
    Ok(())
}

pub fn cmd_split(args: SplitArgs) -> Result<(), CliError> {
    let mut cfg = file_config(&args.config)?;
    let features = required(cfg.merge(args.features, "features")?, "features")?;
    let fraction = cfg.merge(args.fraction, "fraction")?.unwrap_or(0.25);
    let seed = cfg.merge(args.seed, "seed")?.unwrap_or(0);
    let query_out: PathBuf = required(cfg.merge(args.query_out, "query-out")?, "query-out")?;
    let gallery_out: PathBuf = required(cfg.merge(args.gallery_out, "gallery-out")?, "gallery-out")?;
    cfg.finish()?;
    check_input(&features)?;

    let set = load_features(&features)?;
    let (query, gallery) = split_query_gallery(&set, fraction, seed)?;
    save_features(&query, &query_out)?;
    save_features(&gallery, &gallery_out)?;
    println!(
        "split N={} into query N={} ({}) and gallery N={} ({})",
        set.len(),
        query.len(),
        query_out.display(),
        gallery.len(),
        gallery_out.display()
    );
    Ok(())
}

pub fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = file_config(&args.config)?;
    let features_path: PathBuf = required(cfg.merge(args.features, "features")?, "features")?;
    let config = TrainConfig {
        epochs: cfg.merge(args.epochs, "epochs")?.unwrap_or(120),
        batch_size: cfg.merge(args.batch, "batch")?.unwrap_or(64),
        schedule: LrSchedule {
            initial: cfg.merge(args.lr, "lr")?.unwrap_or(3.5e-4),
            ..LrSchedule::default()
        },
        margin: cfg.merge(args.margin, "margin")?.unwrap_or(0.3),
        alpha: cfg.merge(args.alpha, "alpha")?.unwrap_or(0.01),
        refresh_period: cfg.merge(args.refresh, "t")?.unwrap_or(10),
        num_subspaces: cfg.merge(args.subspaces, "m")?.unwrap_or(4),
        num_centroids: cfg.merge(args.centroids, "c")?.unwrap_or(256),
        int_mode: cfg.merge_bool(args.int_mode, "int-mode")?,
        embed_dim: cfg.merge(args.embed_dim, "embed-dim")?,
        kmeans_iters: cfg.merge(args.kmeans_iters, "kmeans-iters")?.unwrap_or(25),
        kmeans_tol: 1e-4,
        rng_seed: cfg.merge(args.seed, "seed")?.unwrap_or(0),
    };
    let out_prefix: PathBuf = required(cfg.merge(args.out_prefix, "out-prefix")?, "out-prefix")?;
    cfg.finish()?;
    check_input(&features_path)?;

    println!(
        "training: epochs={} batch={} lr={} T={} alpha={} M={} C={} margin={} int_mode={} seed={}",
        config.epochs,
        config.batch_size,
        config.schedule.initial,
        config.refresh_period,
        config.alpha,
        config.num_subspaces,
        config.num_centroids,
        config.margin,
        config.int_mode,
        config.rng_seed
    );

    let features = load_features(&features_path)?;
    let (params, codebook, log) = run_training(&features, &config)?;

    let cbk = out_prefix.with_extension("cbk");
    let prm = out_prefix.with_extension("prm");
    let csv = out_prefix.with_extension("log.csv");
    codebook.save(&cbk)?;
    params.save(&prm)?;
    let mut w = open_out(&csv)?;
    log.write_csv(&mut w)?;
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;

    let last = log.epochs.last().expect("at least one epoch");
    println!(
        "done: final total loss {:.6}, quantization error {:.6}, {} codebook refreshes",
        last.total,
        last.quant_error,
        log.refreshes.len()
    );
    println!("wrote {}, {}, {}", cbk.display(), prm.display(), csv.display());
    Ok(())
}

pub fn cmd_build(args: BuildArgs) -> Result<(), CliError> {
    let mut cfg = file_config(&args.config)?;
    let features_path: PathBuf = required(cfg.merge(args.features, "features")?, "features")?;
    let m = cfg.merge(args.subspaces, "m")?.unwrap_or(4);
    let c = cfg.merge(args.centroids, "c")?.unwrap_or(256);
    let iters = cfg.merge(args.iters, "iters")?.unwrap_or(25);
    let tol = cfg.merge(args.tol, "tol")?.unwrap_or(1e-4);
    let seed = cfg.merge(args.seed, "seed")?.unwrap_or(0);
    let out_prefix: PathBuf = required(cfg.merge(args.out_prefix, "out-prefix")?, "out-prefix")?;
    cfg.finish()?;
    check_input(&features_path)?;

    let features = load_features(&features_path)?;
    let (codebook, report) = train_codebook(&features, m, c, iters, tol, None, seed)?;
    let codes = encode(&features, &codebook)?;
    let lut = build_lut(&codebook);
    let int_lut = quantize_lut(&lut)?;

    let cbk = out_prefix.with_extension("cbk");
    let pqc = out_prefix.with_extension("pqc");
    let lut_path = out_prefix.with_extension("lut");
    let int_path = out_prefix.with_extension("int.lut");
    codebook.save(&cbk)?;
    codes.save(&pqc)?;
    lut.save(&lut_path)?;
    int_lut.save(&int_path)?;

    let bits = match codebook.code_bits() {
        Some(b) => format!("{b} bits"),
        None => format!("{} sub-space indices (C not a power of two)", codebook.num_subspaces()),
    };
    println!(
        "built M={} C={} sub_dim={}: code length {bits}, quantization error {:.6} in {} iterations",
        codebook.num_subspaces(),
        codebook.num_centroids(),
        codebook.sub_dim(),
        report.total_quantization_error,
        report.iterations_run
    );
    println!(
        "wrote {}, {}, {}, {}",
        cbk.display(),
        pqc.display(),
        lut_path.display(),
        int_path.display()
    );
    Ok(())
}

fn write_rankings<W: Write>(w: &mut W, results: &[RankResult]) -> std::io::Result<()> {
    writeln!(w, "query_index,rank,gallery_index,distance")?;
    for result in results {
        for (pos, &gi) in result.order.iter().enumerate() {
            let distance = match &result.distances {
                DistanceValues::Real(v) => v[pos].to_string(),
                DistanceValues::Int(v) => v[pos].to_string(),
            };
            writeln!(w, "{},{},{},{}", result.query_index, pos + 1, gi, distance)?;
        }
    }
    Ok(())
}

/// Stdout may be a pipe that closes early (`scr search | head`); that is
/// not an error.
fn tolerate_broken_pipe(result: std::io::Result<()>) -> Result<(), CliError> {
    match result {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(CliError::Runtime(e.to_string())),
    }
}

pub fn cmd_search(args: SearchArgs) -> Result<(), CliError> {
    let mut cfg = file_config(&args.config)?;
    let query_path: PathBuf = required(cfg.merge(args.query, "query")?, "query")?;
    let pipeline: DistanceKind = required(cfg.merge(args.pipeline, "pipeline")?, "pipeline")?;
    let topk = cfg.merge(args.topk, "topk")?;
    let gallery_path: Option<PathBuf> = cfg.merge(args.gallery, "gallery")?;
    let codebook_path: Option<PathBuf> = cfg.merge(args.codebook, "codebook")?;
    let codes_path: Option<PathBuf> = cfg.merge(args.codes, "codes")?;
    let lut_path: Option<PathBuf> = cfg.merge(args.lut, "lut")?;
    let bits = cfg.merge(args.bits, "bits")?.unwrap_or(32);
    let out: Option<PathBuf> = cfg.merge(args.out, "out")?;
    cfg.finish()?;

    check_input(&query_path)?;
    let query = load_features(&query_path)?;

    let results: Vec<RankResult> = match pipeline {
        DistanceKind::Euclidean => {
            let gallery_path = required(gallery_path, "gallery")?;
            check_input(&gallery_path)?;
            let gallery = load_features(&gallery_path)?;
            (0..query.len())
                .map(|qi| {
                    let row = exact_distance_row(qi, query.row(qi), &gallery)?;
                    comparison_sort_rank(&row)
                })
                .collect::<Result<_, _>>()?
        }
        DistanceKind::Hamming => {
            let gallery_path = required(gallery_path, "gallery")?;
            check_input(&gallery_path)?;
            let gallery = load_features(&gallery_path)?;
            let query_bits = binarize_features(&query, bits)?;
            let gallery_bits = binarize_features(&gallery, bits)?;
            (0..query.len())
                .map(|qi| {
                    let row = hamming_distance_row(qi, query_bits.row(qi), &gallery_bits)?;
                    counting_sort_rank(&row, bits as u32)
                })
                .collect::<Result<_, _>>()?
        }
        DistanceKind::Scr | DistanceKind::IntScr => {
            let codebook_path = required(codebook_path, "codebook")?;
            let codes_path = required(codes_path, "codes")?;
            let lut_path = required(lut_path, "lut")?;
            for p in [&codebook_path, &codes_path, &lut_path] {
                check_input(p)?;
            }
            let codebook = Codebook::load(&codebook_path)?;
            let gallery_codes = CodeMatrix::load(&codes_path)?;
            let any_lut = load_lut(&lut_path)?;
            check_artifacts(&codebook, &gallery_codes, &any_lut, pipeline)?;
            let query_codes = encode(&query, &codebook)?;
            (0..query.len())
                .map(|qi| {
                    match (&any_lut, pipeline) {
                        (AnyLut::Real(lut), DistanceKind::Scr) => {
                            let row = distance_row(qi, query_codes.code(qi), &gallery_codes, LutTable::Real(lut))?;
                            comparison_sort_rank(&row)
                        }
                        (AnyLut::Int(lut), DistanceKind::IntScr) => {
                            let row = distance_row(qi, query_codes.code(qi), &gallery_codes, LutTable::Int(lut))?;
                            counting_sort_rank(&row, lut.max_distance())
                        }
                        _ => unreachable!("checked by check_artifacts"),
                    }
                })
                .collect::<Result<_, _>>()?
        }
    };

    let results: Vec<RankResult> = match topk {
        Some(k) => results
            .iter()
            .map(|r| top_k(r, k.min(r.len())))
            .collect::<Result<_, _>>()?,
        None => results,
    };

    match out {
        Some(path) => {
            let mut w = open_out(&path)?;
            write_rankings(&mut w, &results).map_err(|e| CliError::Runtime(e.to_string()))?;
            w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
            println!(
                "wrote {} ranking rows to {}",
                results.iter().map(RankResult::len).sum::<usize>(),
                path.display()
            );
        }
        None => {
            let stdout = std::io::stdout();
            tolerate_broken_pipe(write_rankings(&mut stdout.lock(), &results))?;
        }
    }
    Ok(())
}

/// M/C consistency between the loaded artifacts; mismatches name the files.
fn check_artifacts(
    codebook: &Codebook,
    codes: &CodeMatrix,
    lut: &AnyLut,
    pipeline: DistanceKind,
) -> Result<(), CliError> {
    let (lut_m, lut_c, lut_kind) = match lut {
        AnyLut::Real(l) => (l.num_subspaces(), l.num_centroids(), DistanceKind::Scr),
        AnyLut::Int(l) => (l.num_subspaces(), l.num_centroids(), DistanceKind::IntScr),
    };
    if lut_kind != pipeline {
        return Err(CliError::Usage(format!(
            "pipeline {} needs a {} table, but the .lut file holds a {} table",
            pipeline.as_str(),
            if pipeline == DistanceKind::Scr { "real" } else { "integer" },
            if lut_kind == DistanceKind::Scr { "real" } else { "integer" },
        )));
    }
    if codes.num_subspaces() != codebook.num_subspaces()
        || codes.num_centroids() != codebook.num_centroids()
    {
        return Err(CliError::Usage(format!(
            ".pqc codes (M={}, C={}) do not match .cbk codebook (M={}, C={})",
            codes.num_subspaces(),
            codes.num_centroids(),
            codebook.num_subspaces(),
            codebook.num_centroids()
        )));
    }
    if lut_m != codebook.num_subspaces() || lut_c != codebook.num_centroids() {
        return Err(CliError::Usage(format!(
            ".lut table (M={lut_m}, C={lut_c}) does not match .cbk codebook (M={}, C={})",
            codebook.num_subspaces(),
            codebook.num_centroids()
        )));
    }
    Ok(())
}

pub fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let mut cfg = file_config(&args.config)?;
    let query_path: PathBuf = required(cfg.merge(args.query, "query")?, "query")?;
    let gallery_path: PathBuf = required(cfg.merge(args.gallery, "gallery")?, "gallery")?;
    let pipeline: DistanceKind = required(cfg.merge(args.pipeline, "pipeline")?, "pipeline")?;
    let codebook_path: Option<PathBuf> = cfg.merge(args.codebook, "codebook")?;
    let m = cfg.merge(args.subspaces, "m")?.unwrap_or(4);
    let c = cfg.merge(args.centroids, "c")?.unwrap_or(256);
    let kmeans_iters = cfg.merge(args.kmeans_iters, "kmeans-iters")?.unwrap_or(25);
    let seed = cfg.merge(args.seed, "seed")?.unwrap_or(0);
    let bits = cfg.merge(args.bits, "bits")?.unwrap_or(32);
    let ranker: Option<RankAlgorithm> = cfg.merge(args.ranker, "ranker")?;
    let ks_raw: Option<String> = cfg.merge(args.ks, "ks")?;
    let csv: Option<PathBuf> = cfg.merge(args.csv, "csv")?;
    cfg.finish()?;

    check_input(&query_path)?;
    check_input(&gallery_path)?;
    if let Some(p) = &codebook_path {
        check_input(p)?;
    }
    let ks = match ks_raw {
        Some(raw) => parse_sizes(&raw)?,
        None => vec![1, 5, 10, 20],
    };

    let query = load_features(&query_path)?;
    let gallery = load_features(&gallery_path)?;

    // owned artifacts for the coded pipelines
    let mut codebook = None;
    if matches!(pipeline, DistanceKind::Scr | DistanceKind::IntScr) {
        let cb = match &codebook_path {
            Some(p) => Codebook::load(p)?,
            None => train_codebook(&gallery, m, c, kmeans_iters, 1e-4, None, seed)?.0,
        };
        codebook = Some(cb);
    }
    let coded = match &codebook {
        Some(cb) => Some((encode(&query, cb)?, encode(&gallery, cb)?, build_lut(cb))),
        None => None,
    };
    let binary = match pipeline {
        DistanceKind::Hamming => Some((
            binarize_features(&query, bits)?,
            binarize_features(&gallery, bits)?,
        )),
        _ => None,
    };
    let int_lut = match (pipeline, &coded) {
        (DistanceKind::IntScr, Some((_, _, lut))) => Some(quantize_lut(lut)?),
        _ => None,
    };

    let pipeline_inputs = match pipeline {
        DistanceKind::Euclidean => Pipeline::Exact,
        DistanceKind::Scr => {
            let (q, g, lut) = coded.as_ref().expect("codebook built");
            Pipeline::Scr {
                query_codes: q,
                gallery_codes: g,
                lut,
            }
        }
        DistanceKind::IntScr => {
            let (q, g, _) = coded.as_ref().expect("codebook built");
            Pipeline::IntScr {
                query_codes: q,
                gallery_codes: g,
                lut: int_lut.as_ref().expect("int table built"),
            }
        }
        DistanceKind::Hamming => {
            let (q, g) = binary.as_ref().expect("binarized");
            Pipeline::Hamming {
                query_bits: q,
                gallery_bits: g,
            }
        }
    };
    let ranker = ranker.unwrap_or_else(|| pipeline_inputs.natural_ranker());
    let report = evaluate(&query, &gallery, &pipeline_inputs, ranker, &ks)?;

    print!("{}", report.to_table());
    if let Some(path) = csv {
        let mut w = open_out(&path)?;
        report.write_csv(&mut w)?;
        w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let mut cfg = file_config(&args.config)?;
    let sizes_raw: Option<String> = cfg.merge(args.sizes, "sizes")?;
    let pipelines_raw: Option<String> = cfg.merge(args.pipelines, "pipelines")?;
    let config = BenchConfig {
        gallery_sizes: match sizes_raw {
            Some(raw) => parse_sizes(&raw)?,
            None => vec![1_000, 10_000, 100_000],
        },
        pipelines: match pipelines_raw {
            Some(raw) => raw
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<DistanceKind>().map_err(CliError::from))
                .collect::<Result<_, _>>()?,
            None => vec![
                DistanceKind::Euclidean,
                DistanceKind::Scr,
                DistanceKind::IntScr,
                DistanceKind::Hamming,
            ],
        },
        dim: cfg.merge(args.dim, "dim")?.unwrap_or(128),
        num_subspaces: cfg.merge(args.subspaces, "m")?.unwrap_or(4),
        num_centroids: cfg.merge(args.centroids, "c")?.unwrap_or(256),
        hamming_bits: cfg.merge(args.bits, "bits")?,
        num_queries: cfg.merge(args.queries, "queries")?.unwrap_or(10),
        warmup_queries: cfg.merge(args.warmup, "warmup")?.unwrap_or(1),
        train_sample: cfg.merge(args.train_sample, "train-sample")?.unwrap_or(10_000),
        memory_budget_bytes: cfg
            .merge::<usize>(args.budget_mb, "budget-mb")?
            .unwrap_or(2048)
            .saturating_mul(1 << 20),
        rng_seed: cfg.merge(args.seed, "seed")?.unwrap_or(0),
    };
    let csv: Option<PathBuf> = cfg.merge(args.csv, "csv")?;
    cfg.finish()?;

    let report = bench_ranking(&config)?;
    print!("{}", report.to_table());
    if let Some(path) = csv {
        let mut w = open_out(&path)?;
        report.write_csv(&mut w)?;
        w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
