//! End-to-end tests against the built `scr` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scr(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scr"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed ({:?}):\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn gen_features(dir: &Path, name: &str, ids: usize, per_id: usize, dim: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    let out = scr(
        &[
            "gen",
            "--ids",
            &ids.to_string(),
            "--per-id",
            &per_id.to_string(),
            "--dim",
            &dim.to_string(),
            "--stddev",
            "0.2",
            "--sep",
            "8.0",
            "--seed",
            &seed.to_string(),
            "--out",
            path.to_str().unwrap(),
        ],
        dir,
    );
    assert_ok(&out);
    path
}

#[test]
fn gen_reports_counts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = scr(
        &[
            "gen", "--ids", "50", "--per-id", "8", "--dim", "128", "--seed", "1", "--out", "a.fvs",
        ],
        dir.path(),
    );
    let stdout = assert_ok(&out);
    assert!(stdout.contains("N=400"), "summary missing N: {stdout}");

    let first = std::fs::read(dir.path().join("a.fvs")).unwrap();
    let out = scr(
        &[
            "gen", "--ids", "50", "--per-id", "8", "--dim", "128", "--seed", "1", "--out", "b.fvs",
        ],
        dir.path(),
    );
    assert_ok(&out);
    let second = std::fs::read(dir.path().join("b.fvs")).unwrap();
    assert_eq!(first, second, "same flags must produce bit-identical files");
}

#[test]
fn missing_required_flag_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = scr(&["gen", "--ids", "2", "--per-id", "2", "--dim", "4"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--out"), "error should name the flag: {stderr}");
}

#[test]
fn unknown_flag_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = scr(&["gen", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.fvs"), b"not a feature file").unwrap();
    let out = scr(
        &[
            "build",
            "--features",
            "bad.fvs",
            "--m",
            "2",
            "--c",
            "4",
            "--out-prefix",
            "g",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn missing_input_path_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = scr(
        &[
            "build",
            "--features",
            "nope.fvs",
            "--out-prefix",
            "g",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.fvs"));
}

#[test]
fn build_reports_code_length_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    gen_features(dir.path(), "g.fvs", 30, 6, 32, 3);
    let args = [
        "build",
        "--features",
        "g.fvs",
        "--m",
        "4",
        "--c",
        "16",
        "--seed",
        "2",
        "--out-prefix",
        "g",
    ];
    let stdout = assert_ok(&scr(&args, dir.path()));
    assert!(stdout.contains("code length 16 bits"), "{stdout}");
    for ext in ["cbk", "pqc", "lut", "int.lut"] {
        assert!(dir.path().join(format!("g.{ext}")).is_file(), "missing g.{ext}");
    }

    let first = std::fs::read(dir.path().join("g.cbk")).unwrap();
    let mut rebuild = args;
    rebuild[10] = "h";
    assert_ok(&scr(&rebuild, dir.path()));
    let second = std::fs::read(dir.path().join("h.cbk")).unwrap();
    assert_eq!(first, second, "same seed must rebuild identical codebooks");
}

#[test]
fn build_32_bit_configuration() {
    let dir = tempfile::tempdir().unwrap();
    // C=256 clamps to the number of rows unless N >= 256
    gen_features(dir.path(), "g.fvs", 80, 4, 32, 5);
    let stdout = assert_ok(&scr(
        &[
            "build", "--features", "g.fvs", "--m", "4", "--c", "256", "--iters", "10",
            "--seed", "2", "--out-prefix", "g32",
        ],
        dir.path(),
    ));
    assert!(stdout.contains("code length 32 bits"), "{stdout}");
}

#[test]
fn search_exact_finds_gallery_duplicate() {
    let dir = tempfile::tempdir().unwrap();
    let gallery = gen_features(dir.path(), "g.fvs", 10, 4, 16, 7);
    // query file = first rows of the gallery file: top hit must be itself
    let set = scr_core::features::load_features(&gallery).unwrap();
    let query = set.subset(&[0, 1]).unwrap();
    scr_core::features::save_features(&query, dir.path().join("q.fvs")).unwrap();

    let stdout = assert_ok(&scr(
        &[
            "search", "--query", "q.fvs", "--pipeline", "exact", "--gallery", "g.fvs",
            "--topk", "3",
        ],
        dir.path(),
    ));
    let lines: Vec<&str> = stdout.trim_end().lines().collect();
    assert_eq!(lines[0], "query_index,rank,gallery_index,distance");
    assert_eq!(lines.len(), 1 + 2 * 3, "2 queries x topk 3 rows");
    assert!(lines[1].starts_with("0,1,0,0"), "query 0 should hit gallery 0: {}", lines[1]);
    assert!(lines[4].starts_with("1,1,1,0"), "query 1 should hit gallery 1: {}", lines[4]);
}

#[test]
fn search_scr_agrees_with_exact_for_lossless_codebook() {
    let dir = tempfile::tempdir().unwrap();
    let gallery = gen_features(dir.path(), "g.fvs", 12, 2, 16, 9);
    // C = N = 24: every sub-vector becomes its own centroid
    assert_ok(&scr(
        &[
            "build", "--features", "g.fvs", "--m", "2", "--c", "24", "--seed", "1",
            "--out-prefix", "g",
        ],
        dir.path(),
    ));
    // queries drawn from the gallery, so their sub-vectors are centroids
    // too and the table distances equal the exact ones
    let set = scr_core::features::load_features(&gallery).unwrap();
    let query = set.subset(&[2, 9, 17]).unwrap();
    scr_core::features::save_features(&query, dir.path().join("q.fvs")).unwrap();

    let exact = assert_ok(&scr(
        &[
            "search", "--query", "q.fvs", "--pipeline", "exact", "--gallery", "g.fvs",
            "--topk", "3",
        ],
        dir.path(),
    ));
    let scr_out = assert_ok(&scr(
        &[
            "search", "--query", "q.fvs", "--pipeline", "scr", "--codebook", "g.cbk",
            "--codes", "g.pqc", "--lut", "g.lut", "--topk", "3",
        ],
        dir.path(),
    ));
    let top = |text: &str| -> Vec<u32> {
        text.lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
            .collect()
    };
    assert_eq!(top(&exact), top(&scr_out), "lossless codebook must preserve rankings");
}

#[test]
fn search_intscr_topk_rows() {
    let dir = tempfile::tempdir().unwrap();
    gen_features(dir.path(), "g.fvs", 20, 4, 16, 11);
    assert_ok(&scr(
        &[
            "build", "--features", "g.fvs", "--m", "4", "--c", "16", "--seed", "3",
            "--out-prefix", "g",
        ],
        dir.path(),
    ));
    gen_features(dir.path(), "q.fvs", 2, 2, 16, 12);
    let stdout = assert_ok(&scr(
        &[
            "search", "--query", "q.fvs", "--pipeline", "intscr", "--codebook", "g.cbk",
            "--codes", "g.pqc", "--lut", "g.int.lut", "--topk", "10",
        ],
        dir.path(),
    ));
    assert_eq!(stdout.trim_end().lines().count(), 1 + 4 * 10, "4 queries x 10 rows");
}

#[test]
fn search_hamming_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    gen_features(dir.path(), "g.fvs", 8, 3, 16, 15);
    gen_features(dir.path(), "q.fvs", 2, 2, 16, 16);
    let stdout = assert_ok(&scr(
        &[
            "search", "--query", "q.fvs", "--pipeline", "hamming", "--gallery", "g.fvs",
            "--bits", "16", "--topk", "2",
        ],
        dir.path(),
    ));
    let lines: Vec<&str> = stdout.trim_end().lines().collect();
    assert_eq!(lines.len(), 1 + 4 * 2, "4 queries x topk 2");
    // hamming distances at 16 bits stay within 0..=16
    for line in &lines[1..] {
        let d: u32 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert!(d <= 16);
    }
}

#[test]
fn search_artifact_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    gen_features(dir.path(), "g.fvs", 10, 4, 16, 13);
    for (c, prefix) in [("8", "a"), ("16", "b")] {
        assert_ok(&scr(
            &[
                "build", "--features", "g.fvs", "--m", "4", "--c", c, "--seed", "1",
                "--out-prefix", prefix,
            ],
            dir.path(),
        ));
    }
    gen_features(dir.path(), "q.fvs", 2, 2, 16, 14);
    // codes from the C=8 build, table from the C=16 build
    let out = scr(
        &[
            "search", "--query", "q.fvs", "--pipeline", "intscr", "--codebook", "a.cbk",
            "--codes", "a.pqc", "--lut", "b.int.lut",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("C=8") && stderr.contains("C=16"), "should name the mismatch: {stderr}");

    // real table fed to the intscr pipeline
    let out = scr(
        &[
            "search", "--query", "q.fvs", "--pipeline", "intscr", "--codebook", "a.cbk",
            "--codes", "a.pqc", "--lut", "a.lut",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_exact_on_separable_data_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let set_path = gen_features(dir.path(), "all.fvs", 12, 4, 16, 21);
    assert!(set_path.is_file());
    assert_ok(&scr(
        &[
            "split", "--features", "all.fvs", "--fraction", "0.25", "--seed", "1",
            "--query-out", "q.fvs", "--gallery-out", "g.fvs",
        ],
        dir.path(),
    ));
    let stdout = assert_ok(&scr(
        &[
            "eval", "--query", "q.fvs", "--gallery", "g.fvs", "--pipeline", "exact",
            "--csv", "eval.csv",
        ],
        dir.path(),
    ));
    assert!(stdout.contains("rank-1    1.0000"), "{stdout}");

    let csv = std::fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    assert!(csv.starts_with("distance_kind,metric,k,value"));
    assert!(csv.contains("euclidean,rank,1,1"));
}

#[test]
fn eval_intscr_trains_codebook_on_the_fly() {
    let dir = tempfile::tempdir().unwrap();
    gen_features(dir.path(), "all.fvs", 15, 4, 16, 22);
    assert_ok(&scr(
        &[
            "split", "--features", "all.fvs", "--fraction", "0.25", "--seed", "2",
            "--query-out", "q.fvs", "--gallery-out", "g.fvs",
        ],
        dir.path(),
    ));
    let stdout = assert_ok(&scr(
        &[
            "eval", "--query", "q.fvs", "--gallery", "g.fvs", "--pipeline", "intscr",
            "--m", "4", "--c", "16", "--seed", "3",
        ],
        dir.path(),
    ));
    assert!(stdout.contains("pipeline: intscr"), "{stdout}");
    assert!(stdout.contains("mAP"), "{stdout}");
}

#[test]
fn train_smoke_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    gen_features(dir.path(), "t.fvs", 8, 4, 16, 31);
    let stdout = assert_ok(&scr(
        &[
            "train", "--features", "t.fvs", "--epochs", "2", "--batch", "8", "--m", "4",
            "--c", "8", "--kmeans-iters", "5", "--seed", "1", "--out-prefix", "run",
        ],
        dir.path(),
    ));
    // run header echoes the defaulted hyperparameters
    assert!(stdout.contains("T=10"), "{stdout}");
    assert!(stdout.contains("alpha=0.01"), "{stdout}");
    assert!(stdout.contains("C=8"), "{stdout}");

    let log = std::fs::read_to_string(dir.path().join("run.log.csv")).unwrap();
    let lines: Vec<&str> = log.trim_end().lines().collect();
    assert_eq!(lines.len(), 3, "header + one line per epoch: {log}");
    assert_eq!(lines[0], "epoch,lr,ce,triplet,consistency,total,quant_error");
    assert!(dir.path().join("run.cbk").is_file());
    assert!(dir.path().join("run.prm").is_file());
}

#[test]
fn bench_emits_row_per_size_and_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = assert_ok(&scr(
        &[
            "bench", "--sizes", "200,500", "--pipelines", "exact,intscr", "--dim", "16",
            "--m", "4", "--c", "8", "--queries", "2", "--train-sample", "300", "--seed", "4",
            "--csv", "bench.csv",
        ],
        dir.path(),
    ));
    assert!(stdout.contains("gallery"), "{stdout}");
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let lines: Vec<&str> = csv.trim_end().lines().collect();
    assert_eq!(lines.len(), 1 + 4, "header + 2 sizes x 2 pipelines: {csv}");
    assert!(lines[1].starts_with("200,euclidean,512,"));
    // M=4, C=8 gives 4 * log2(8) = 12-bit codes
    assert!(csv.contains("500,intscr,12,"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("gen.conf"),
        "# synthetic set\nids = 4\nper-id = 3\ndim = 8\nseed = 5\nout = from_config.fvs\n",
    )
    .unwrap();
    let stdout = assert_ok(&scr(&["gen", "--config", "gen.conf"], dir.path()));
    assert!(stdout.contains("N=12"), "{stdout}");
    assert!(dir.path().join("from_config.fvs").is_file());

    // flag overrides the file value
    let stdout = assert_ok(&scr(
        &["gen", "--config", "gen.conf", "--ids", "6", "--out", "override.fvs"],
        dir.path(),
    ));
    assert!(stdout.contains("N=18"), "{stdout}");
    assert!(dir.path().join("override.fvs").is_file());
}

#[test]
fn unknown_config_key_exits_2_with_name() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.conf"),
        "ids = 2\nper-id = 2\ndim = 4\nout = x.fvs\nbanana = 7\n",
    )
    .unwrap();
    let out = scr(&["gen", "--config", "bad.conf"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("banana"));
}
