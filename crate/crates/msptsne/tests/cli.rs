//! End-to-end checks of the command-line surface through the real binary.


use std::path::Path;
use std::process::{Command, Output};

fn msptsne(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msptsne"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn gen_writes_expected_shape_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = msptsne(
        &["gen", "--n", "1000", "--seed", "9", "--noise", "0.01", "--out", "a.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("N=1000 M=3"));
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let lines = a.split(|&b| b == b'\n').filter(|l| !l.is_empty()).count();
    assert_eq!(lines, 1000);

    let out2 = msptsne(
        &["gen", "--n", "1000", "--seed", "9", "--noise", "0.01", "--out", "b.csv"],
        dir.path(),
    );
    assert!(out2.status.success());
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b, "same seed must produce identical bytes");
}

#[test]
fn gen_rejects_invalid_n() {
    let dir = tempfile::tempdir().unwrap();
    let out = msptsne(&["gen", "--n", "3", "--out", "a.csv"], dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("at least 8"), "{}", stderr(&out));
    assert!(!dir.path().join("a.csv").exists());
}

fn small_fit_args<'a>(data: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "fit", "--data", data, "--epochs", "40", "--layers", "16,16,32,16", "--seed", "5",
        "--out", out,
    ]
}

#[test]
fn fit_trains_and_loss_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let gen = msptsne(
        &["gen", "--n", "120", "--noise", "0.05", "--seed", "4", "--out", "h.csv"],
        dir.path(),
    );
    assert!(gen.status.success());
    let out = msptsne(&small_fit_args("h.csv", "m.mspt"), dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("m.mspt").exists());

    let log = std::fs::read_to_string(dir.path().join("m.log.csv")).unwrap();
    let losses: Vec<f64> = log
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 40);
    assert!(
        losses.last().unwrap() < &losses[0],
        "loss should drop: {losses:?}"
    );
}

#[test]
fn fit_accepts_fixed_mode_and_rejects_bad_perplexity() {
    let dir = tempfile::tempdir().unwrap();
    let gen = msptsne(
        &["gen", "--n", "120", "--noise", "0.05", "--seed", "4", "--out", "h.csv"],
        dir.path(),
    );
    assert!(gen.status.success());

    let ok = msptsne(
        &[
            "fit", "--data", "h.csv", "--mode", "fixed", "--perplexity", "30", "--epochs", "5",
            "--layers", "8,8,16,8", "--out", "f.mspt",
        ],
        dir.path(),
    );
    assert!(ok.status.success(), "{}", stderr(&ok));

    let bad = msptsne(
        &[
            "fit", "--data", "h.csv", "--mode", "fixed", "--perplexity", "0", "--epochs", "5",
            "--out", "g.mspt",
        ],
        dir.path(),
    );
    assert!(!bad.status.success());
    assert!(stderr(&bad).contains("perplexity"), "{}", stderr(&bad));
    assert!(!dir.path().join("g.mspt").exists());
}

#[test]
fn transform_is_deterministic_and_validates_dims() {
    let dir = tempfile::tempdir().unwrap();
    assert!(msptsne(
        &["gen", "--n", "96", "--noise", "0.02", "--seed", "8", "--out", "h.csv"],
        dir.path()
    )
    .status
    .success());
    assert!(msptsne(&small_fit_args("h.csv", "m.mspt"), dir.path())
        .status
        .success());

    let t1 = msptsne(
        &["transform", "--model", "m.mspt", "--data", "h.csv", "--out", "e1.csv"],
        dir.path(),
    );
    assert!(t1.status.success(), "{}", stderr(&t1));
    let t2 = msptsne(
        &["transform", "--model", "m.mspt", "--data", "h.csv", "--out", "e2.csv"],
        dir.path(),
    );
    assert!(t2.status.success());
    let e1 = std::fs::read(dir.path().join("e1.csv")).unwrap();
    let e2 = std::fs::read(dir.path().join("e2.csv")).unwrap();
    assert_eq!(e1, e2);
    let rows = e1.split(|&b| b == b'\n').filter(|l| !l.is_empty()).count();
    assert_eq!(rows, 96, "one embedding row per input row");

    // wrong input dimensionality is named in the error
    std::fs::write(dir.path().join("wide.csv"), "1,2,3,4\n5,6,7,8\n").unwrap();
    let bad = msptsne(
        &["transform", "--model", "m.mspt", "--data", "wide.csv", "--out", "e3.csv"],
        dir.path(),
    );
    assert!(!bad.status.success());
    let err = stderr(&bad);
    assert!(err.contains("expects 3"), "{err}");
}

#[test]
fn transform_passes_labels_through() {
    let dir = tempfile::tempdir().unwrap();
    assert!(msptsne(
        &["gen", "--n", "64", "--noise", "0.03", "--seed", "3", "--out", "h.csv"],
        dir.path()
    )
    .status
    .success());
    // attach a label column to the generated helix
    let plain = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
    let labeled: String = plain
        .lines()
        .enumerate()
        .map(|(i, l)| format!("{l},{}\n", i % 4))
        .collect();
    std::fs::write(dir.path().join("hl.csv"), labeled).unwrap();

    assert!(msptsne(&small_fit_args("h.csv", "m.mspt"), dir.path())
        .status
        .success());
    let out = msptsne(
        &[
            "transform", "--model", "m.mspt", "--data", "hl.csv", "--labels", "--out", "e.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let emb = std::fs::read_to_string(dir.path().join("e.csv")).unwrap();
    for (i, line) in emb.lines().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 3, "two coordinates plus the label");
        assert_eq!(cells[2], format!("{}", i % 4));
    }
}

#[test]
fn evaluate_identity_prints_unit_auc() {
    let dir = tempfile::tempdir().unwrap();
    assert!(msptsne(
        &["gen", "--n", "64", "--noise", "0.05", "--seed", "2", "--out", "h.csv"],
        dir.path()
    )
    .status
    .success());
    let out = msptsne(
        &["evaluate", "--hd", "h.csv", "--ld", "h.csv", "--out", "c.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let printed = stdout(&out);
    let auc: f64 = printed
        .lines()
        .find_map(|l| l.strip_prefix("auc="))
        .expect("auc printed")
        .parse()
        .unwrap();
    assert_eq!(auc, 1.0);

    let curve = std::fs::read_to_string(dir.path().join("c.csv")).unwrap();
    assert!(curve.starts_with("# auc=1.0"), "{curve}");
    assert_eq!(
        curve.lines().filter(|l| !l.starts_with('#')).count(),
        62,
        "curve spans K = 1..N-2"
    );
}

#[test]
fn evaluate_rejects_size_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.csv"), "1,2\n3,4\n5,6\n7,8\n").unwrap();
    std::fs::write(dir.path().join("b.csv"), "1,2\n3,4\n5,6\n").unwrap();
    let out = msptsne(
        &["evaluate", "--hd", "a.csv", "--ld", "b.csv", "--out", "c.csv"],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(stderr(&out).contains("disagree"), "{}", stderr(&out));
}

/// Shared fast experiment flags for the protocol-level assertions.
fn experiment_args<'a>(data: &'a str, out: &'a str, seed: &'a str) -> Vec<&'a str> {
    vec![
        "experiment", "--data", data, "--epochs", "30", "--layers", "16,16,32,16",
        "--perplexities", "8,16,32", "--seed", seed, "--out", out,
    ]
}

#[test]
fn experiment_emits_full_report_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    assert!(msptsne(
        &["gen", "--n", "150", "--noise", "0.05", "--seed", "6", "--out", "h.csv"],
        dir.path()
    )
    .status
    .success());

    let run = msptsne(&experiment_args("h.csv", "r1", "3"), dir.path());
    assert!(run.status.success(), "{}", stderr(&run));

    let summary = std::fs::read_to_string(dir.path().join("r1/summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 4, "multiscale + three perplexities: {summary}");
    for row in &rows {
        let cells: Vec<&str> = row.split(',').collect();
        let train: f64 = cells[2].parse().unwrap();
        let extended: f64 = cells[3].parse().unwrap();
        assert!(train.abs() <= 1.0 && extended.abs() <= 1.0);
    }
    for method in ["multiscale", "perp8", "perp16", "perp32"] {
        assert!(dir.path().join(format!("r1/models/{method}.mspt")).exists());
        assert!(dir.path().join(format!("r1/curves/{method}_train.csv")).exists());
        assert!(dir
            .path()
            .join(format!("r1/embeddings/{method}_extended.csv"))
            .exists());
    }
    assert!(dir.path().join("r1/config.json").exists());

    let rerun = msptsne(&experiment_args("h.csv", "r2", "3"), dir.path());
    assert!(rerun.status.success());
    let summary2 = std::fs::read_to_string(dir.path().join("r2/summary.csv")).unwrap();
    assert_eq!(
        summary.replace("r1/", ""),
        summary2.replace("r2/", ""),
        "same seed must give an identical summary"
    );
}

#[test]
fn summary_aucs_match_re_evaluation_of_emitted_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    assert!(msptsne(
        &["gen", "--n", "140", "--noise", "0.05", "--seed", "11", "--out", "h.csv"],
        dir.path()
    )
    .status
    .success());
    let run = msptsne(&experiment_args("h.csv", "run", "11"), dir.path());
    assert!(run.status.success(), "{}", stderr(&run));

    // rebuild the HD sides of both scenarios from the echoed split
    let config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/config.json")).unwrap())
            .unwrap();
    let train_idx: Vec<usize> = config["train_indices"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap() as usize)
        .collect();
    let test_idx: Vec<usize> = config["test_indices"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap() as usize)
        .collect();
    let full = msptsne::datasets::load_csv(&dir.path().join("h.csv"), false, false).unwrap();
    let train_x = msptsne::datasets::take_rows(&full.x, &train_idx);
    let union_idx: Vec<usize> = train_idx.iter().chain(&test_idx).copied().collect();
    let union_x = msptsne::datasets::take_rows(&full.x, &union_idx);
    msptsne::datasets::save_csv(&train_x, None, &dir.path().join("hd_train.csv")).unwrap();
    msptsne::datasets::save_csv(&union_x, None, &dir.path().join("hd_union.csv")).unwrap();

    let summary = std::fs::read_to_string(dir.path().join("run/summary.csv")).unwrap();
    for row in summary.lines().filter(|l| !l.starts_with('#')) {
        let cells: Vec<&str> = row.split(',').collect();
        let (method, train_auc, extended_auc): (&str, f64, f64) =
            (cells[0], cells[2].parse().unwrap(), cells[3].parse().unwrap());
        for (scenario, auc, hd) in [
            ("train", train_auc, "hd_train.csv"),
            ("extended", extended_auc, "hd_union.csv"),
        ] {
            let emb = format!("run/embeddings/{method}_{scenario}.csv");
            let eval = msptsne(
                &["evaluate", "--hd", hd, "--ld", &emb, "--out", "tmp_curve.csv"],
                dir.path(),
            );
            assert!(eval.status.success(), "{}", stderr(&eval));
            let printed: f64 = stdout(&eval)
                .lines()
                .find_map(|l| l.strip_prefix("auc="))
                .unwrap()
                .parse()
                .unwrap();
            assert!(
                (printed - auc).abs() <= 1e-12,
                "{method} {scenario}: summary {auc} vs re-evaluated {printed}"
            );
        }
    }
}

#[test]
fn width_grid_selects_the_better_training_auc() {
    let dir = tempfile::tempdir().unwrap();
    assert!(msptsne(
        &["gen", "--n", "130", "--noise", "0.05", "--seed", "13", "--out", "h.csv"],
        dir.path()
    )
    .status
    .success());

    // reference runs, one per width configuration
    let configs = ["16,16,32,16", "2,2,2,2"];
    let mut train_aucs = Vec::new();
    for (i, layers) in configs.iter().enumerate() {
        let run = msptsne(
            &[
                "experiment", "--data", "h.csv", "--epochs", "25", "--perplexities", "8",
                "--layers", layers, "--seed", "13", "--out", &format!("single{i}"),
            ],
            dir.path(),
        );
        assert!(run.status.success(), "{}", stderr(&run));
        let summary =
            std::fs::read_to_string(dir.path().join(format!("single{i}/summary.csv"))).unwrap();
        let row = summary
            .lines()
            .find(|l| l.starts_with("multiscale"))
            .unwrap()
            .to_string();
        train_aucs.push(row.split(',').nth(2).unwrap().parse::<f64>().unwrap());
    }
    let expected = configs[if train_aucs[0] >= train_aucs[1] { 0 } else { 1 }].replace(',', "x");

    let grid = msptsne(
        &[
            "experiment", "--data", "h.csv", "--epochs", "25", "--perplexities", "8",
            "--width-grid", "16,16,32,16;2,2,2,2", "--seed", "13", "--out", "grid",
        ],
        dir.path(),
    );
    assert!(grid.status.success(), "{}", stderr(&grid));
    let summary = std::fs::read_to_string(dir.path().join("grid/summary.csv")).unwrap();
    let chosen = summary
        .lines()
        .find(|l| l.starts_with("multiscale"))
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .to_string();
    assert_eq!(chosen, expected, "grid must pick the best train auc\n{summary}");
}

#[test]
fn failed_experiment_exits_nonzero_without_partial_files() {
    let dir = tempfile::tempdir().unwrap();
    assert!(msptsne(
        &["gen", "--n", "60", "--noise", "0.05", "--seed", "1", "--out", "h.csv"],
        dir.path()
    )
    .status
    .success());
    // a perplexity no batch can satisfy fails method perp5000 after the
    // others may already have written their files
    let out = msptsne(
        &[
            "experiment", "--data", "h.csv", "--epochs", "5", "--layers", "8,8,16,8",
            "--perplexities", "8,5000", "--seed", "1", "--out", "run",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(stderr(&out).contains("perp5000"), "{}", stderr(&out));
    assert!(!dir.path().join("run/summary.csv").exists());
    let leftovers: Vec<_> = walk(dir.path().join("run"))
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "tmp"))
        .collect();
    assert!(leftovers.is_empty(), "stray temp files: {leftovers:?}");
}

fn walk(root: std::path::PathBuf) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    let mut stack = vec![root];
    while let Some(dir) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&dir) else {
            continue;
        };
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path);
            }
        }
    }
    files
}

#[test]
fn thread_cap_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    assert!(msptsne(
        &["gen", "--n", "64", "--noise", "0.05", "--seed", "2", "--out", "h.csv"],
        dir.path()
    )
    .status
    .success());
    let out = Command::new(env!("CARGO_BIN_EXE_msptsne"))
        .args(["evaluate", "--hd", "h.csv", "--ld", "h.csv", "--out", "c.csv"])
        .env("MSPTSNE_THREADS", "1")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));

    let bad = Command::new(env!("CARGO_BIN_EXE_msptsne"))
        .args(["evaluate", "--hd", "h.csv", "--ld", "h.csv", "--out", "c.csv"])
        .env("MSPTSNE_THREADS", "zero")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!bad.status.success());
}
