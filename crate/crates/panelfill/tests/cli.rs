use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use panelfill::io::{decode_cov_binary, read_labeled_matrix, read_panel, CsvOptions};
use panelfill_core::{apply_missing, gen_basic_dgp, BasicDgpConfig, MissingPattern, PanelMatrix};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_panelfill"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a panel with a date index; missing cells as `NA`, observed ones with a fixed
/// six-decimal format so the text differs from the shortest round-trip form.
fn write_panel(dir: &Path, name: &str, panel: &PanelMatrix) -> PathBuf {
    let mut text = String::from("date");
    for i in 0..panel.n() {
        text.push_str(&format!(",s{i}"));
    }
    text.push('\n');
    for t in 0..panel.t() {
        text.push_str(&format!("2000-{:03}", t + 1));
        for i in 0..panel.n() {
            match panel.get(t, i) {
                Some(v) => text.push_str(&format!(",{v:.6}")),
                None => text.push_str(",NA"),
            }
        }
        text.push('\n');
    }
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn simulated(t: usize, n: usize, seed: u64) -> PanelMatrix {
    gen_basic_dgp(&BasicDgpConfig::new(t, n, 2, 1.0, seed), 0).unwrap().panel
}

fn incomplete(t: usize, n: usize, seed: u64) -> (PanelMatrix, PanelMatrix) {
    let full = simulated(t, n, seed);
    let masked = apply_missing(&full, &MissingPattern::SouthWestBlock { row_frac: 0.5, col_frac: 0.4 }).unwrap();
    (full, masked)
}

#[test]
fn impute_complete_panel_reproduces_input() {
    let dir = TempDir::new().unwrap();
    let input = write_panel(dir.path(), "panel.csv", &simulated(40, 12, 1));
    let out = dir.path().join("imputed.csv");
    let se = dir.path().join("se.csv");
    let o = run(&[
        "impute", "--input", p(&input), "--r", "2", "--method", "tp+", "--out", p(&out), "--se-out", p(&se),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(&input).unwrap(), fs::read(&out).unwrap());
    let se_panel = read_panel(&se, &CsvOptions::default()).unwrap();
    assert!(se_panel.panel.is_complete());
    assert!(se_panel.panel.values().iter().all(|v| *v > 0.0));
}

#[test]
fn impute_keeps_observed_cells_and_fills_missing() {
    let dir = TempDir::new().unwrap();
    let (_, masked) = incomplete(50, 14, 2);
    let input = write_panel(dir.path(), "panel.csv", &masked);
    let out = dir.path().join("imputed.csv");
    for method in ["tp", "tw", "tp+", "tw+", "em"] {
        let o = run(&["impute", "--input", p(&input), "--r", "2", "--method", method, "--out", p(&out)]);
        assert!(o.status.success(), "{method}: {}", String::from_utf8_lossy(&o.stderr));
        let before = read_panel(&input, &CsvOptions::default()).unwrap();
        let after = read_panel(&out, &CsvOptions::default()).unwrap();
        assert!(after.panel.is_complete());
        assert_eq!(after.index, before.index);
        for t in 0..before.t() {
            for i in 0..before.n() {
                if before.panel.is_observed(t, i) {
                    assert_eq!(after.raw[t][i], before.raw[t][i]);
                }
            }
        }
        // Re-importing the output and exporting again keeps every cell.
        let again = dir.path().join("again.csv");
        let o = run(&["impute", "--input", p(&out), "--r", "2", "--method", method, "--out", p(&again)]);
        assert!(o.status.success());
        assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());
    }
}

#[test]
fn standardized_imputation_returns_original_units() {
    let dir = TempDir::new().unwrap();
    let (_, masked) = incomplete(60, 15, 3);
    let shifted = PanelMatrix::new(masked.values().map(|v| 100.0 + 5.0 * v), masked.mask().clone()).unwrap();
    let input = write_panel(dir.path(), "panel.csv", &shifted);
    let out = dir.path().join("imputed.csv");
    let o = run(&[
        "impute", "--input", p(&input), "--r", "2", "--method", "tp", "--transform", "standardize", "--out",
        p(&out),
    ]);
    assert!(o.status.success());
    let after = read_panel(&out, &CsvOptions::default()).unwrap();
    let filled: Vec<f64> = (0..shifted.t())
        .flat_map(|t| (0..shifted.n()).map(move |i| (t, i)))
        .filter(|&(t, i)| !shifted.is_observed(t, i))
        .map(|(t, i)| after.panel.values()[(t, i)])
        .collect();
    let mean = filled.iter().sum::<f64>() / filled.len() as f64;
    assert!((mean - 100.0).abs() < 5.0, "{mean}");
}

#[test]
fn cov_is_reproducible_across_runs_and_threads() {
    let dir = TempDir::new().unwrap();
    let (_, masked) = incomplete(60, 10, 4);
    let input = write_panel(dir.path(), "panel.csv", &masked);
    let mut outputs = Vec::new();
    for (k, threads) in ["1", "1", "3"].iter().enumerate() {
        let csv = dir.path().join(format!("cov{k}.csv"));
        let bin = dir.path().join(format!("cov{k}.bin"));
        let o = run(&[
            "--threads", threads, "cov", "--input", p(&input), "--r", "2", "--method", "sm+2", "--S", "30",
            "--seed", "7", "--out", p(&csv), "--bin-out", p(&bin),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push((fs::read(&csv).unwrap(), fs::read(&bin).unwrap()));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    let (names, from_csv) = read_labeled_matrix(&dir.path().join("cov0.csv")).unwrap();
    let from_bin = decode_cov_binary(&outputs[0].1).unwrap();
    assert_eq!(names.len(), 10);
    assert_eq!(from_csv, from_bin);
    assert_eq!(from_bin, from_bin.transpose());
}

#[test]
fn overlay_without_seed_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let (_, masked) = incomplete(40, 8, 5);
    let input = write_panel(dir.path(), "panel.csv", &masked);
    let out = dir.path().join("cov.csv");
    let o = run(&["cov", "--input", p(&input), "--r", "2", "--method", "sm1", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    // Deterministic estimators need no seed.
    let o = run(&["cov", "--input", p(&input), "--r", "2", "--method", "sfa+", "--out", p(&out)]);
    assert!(o.status.success());
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let (_, masked) = incomplete(40, 8, 6);
    let input = write_panel(dir.path(), "panel.csv", &masked);
    let out = dir.path().join("x.csv");
    // Usage.
    assert_eq!(run(&["impute", "--input", p(&input), "--r", "0", "--out", p(&out)]).status.code(), Some(2));
    assert_eq!(run(&["impute", "--input", p(&input), "--out", p(&out)]).status.code(), Some(2));
    assert_eq!(
        run(&["impute", "--input", p(&input), "--r", "2", "--method", "xx", "--out", p(&out)]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    // Data.
    let missing = dir.path().join("nope.csv");
    assert_eq!(run(&["impute", "--input", p(&missing), "--r", "2", "--out", p(&out)]).status.code(), Some(3));
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "a,b\n1,2\n3,oops\n").unwrap();
    assert_eq!(
        run(&["impute", "--input", p(&bad), "--index", "no", "--r", "1", "--out", p(&out)]).status.code(),
        Some(3)
    );
    let empty_series = dir.path().join("empty.csv");
    fs::write(&empty_series, "a,b,c\n1,NA,2\n3,NA,4\n5,NA,1\n").unwrap();
    assert_eq!(
        run(&["impute", "--input", p(&empty_series), "--r", "1", "--out", p(&out)]).status.code(),
        Some(3)
    );
    // Numerical: covariates that duplicate each other make the regression singular.
    let full = simulated(40, 8, 6);
    let input_full = write_panel(dir.path(), "full.csv", &full);
    let y = dir.path().join("y.csv");
    let w = dir.path().join("w.csv");
    let mut ytext = String::from("y\n");
    let mut wtext = String::from("w1,w2\n");
    for t in 0..40 {
        ytext.push_str(&format!("{}\n", (t as f64 * 0.7).sin()));
        wtext.push_str(&format!("{0},{0}\n", (t as f64 * 0.3).cos()));
    }
    fs::write(&y, ytext).unwrap();
    fs::write(&w, wtext).unwrap();
    let o = run(&["favar", "--input", p(&input_full), "--y", p(&y), "--w", p(&w), "--r", "2"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn version_and_help() {
    let o = run(&["--version"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains(env!("CARGO_PKG_VERSION")));
    let o = run(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["impute", "cov", "risk", "favar", "simulate"] {
        assert!(text.contains(cmd), "{cmd}");
    }
}

#[test]
fn favar_reports_coefficients() {
    let dir = TempDir::new().unwrap();
    let (_, masked) = incomplete(80, 20, 7);
    let input = write_panel(dir.path(), "panel.csv", &masked);
    let y = dir.path().join("y.csv");
    let w = dir.path().join("w.csv");
    let mut ytext = String::from("y\n");
    let mut wtext = String::from("w\n");
    for t in 0..80 {
        let wt = (t as f64 * 0.37).sin();
        wtext.push_str(&format!("{wt}\n"));
        ytext.push_str(&format!("{}\n", 2.0 * wt + 0.1 * (t as f64 * 1.3).cos()));
    }
    fs::write(&y, ytext).unwrap();
    fs::write(&w, wtext).unwrap();
    let out = dir.path().join("favar.json");
    let o = run(&["favar", "--input", p(&input), "--y", p(&y), "--w", p(&w), "--r", "2", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["schema"], 1);
    assert_eq!(v["delta"].as_array().unwrap().len(), 3);
    let beta = v["delta"][2].as_f64().unwrap();
    assert!((beta - 2.0).abs() < 0.1, "{beta}");
}

#[test]
fn risk_against_truth() {
    let dir = TempDir::new().unwrap();
    let (full, masked) = incomplete(60, 10, 8);
    let input = write_panel(dir.path(), "panel.csv", &masked);
    let truth = write_panel(dir.path(), "truth.csv", &full);
    let out = dir.path().join("risk.json");
    let o = run(&[
        "risk", "--input", p(&input), "--truth", p(&truth), "--r", "2", "--method", "sm+1", "--S", "20", "--seed",
        "3", "--units-scale", "100", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["estimator"], "sm+1");
    let n_inc = v["incomplete_series"].as_array().unwrap().len();
    assert_eq!(n_inc, 4);
    assert_eq!(v["estimate"]["call_prices"].as_array().unwrap().len(), n_inc);
    assert_eq!(v["covariance_pairs"].as_array().unwrap().len(), 4 * 6 + 6);
    let est = v["estimate"]["pvol"].as_f64().unwrap();
    let tru = v["truth"]["pvol"].as_f64().unwrap();
    assert!(est > 0.0 && tru > 0.0);
    assert!((est - tru).abs() < 0.5 * tru);
}

#[test]
fn simulate_requires_seed_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let small = [
        "--set", "t=60", "--set", "n=60", "--set", "t_o=30", "--set", "n_o=30", "--set",
        "points=bal:25:20,tall:50:20,wide:25:40,miss:55:35", "--set", "modes=standardize", "--reps", "4",
    ];
    let mut args = vec!["simulate", "--preset", "table1-case1"];
    args.extend(small);
    assert_eq!(run(&args).status.code(), Some(2));
    let mut outs = Vec::new();
    for (k, threads) in ["1", "2"].iter().enumerate() {
        let out = dir.path().join(format!("r{k}.json"));
        let mut a = vec!["--threads", threads, "simulate", "--preset", "table1-case1", "--seed", "1"];
        a.extend(small);
        a.extend(["--out", p(&out)]);
        let o = run(&a);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outs.push(fs::read_to_string(&out).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    let v: serde_json::Value = serde_json::from_str(&outs[0]).unwrap();
    assert_eq!(v["schema"], 1);
    assert_eq!(v["effective"], 4);
    assert!(v.get("wall_clock_secs").is_none());
    assert_eq!(v["config"]["seed"], "1");
}

#[test]
fn simulate_prints_table() {
    let o = run(&[
        "simulate", "--preset", "table2", "--seed", "2", "--reps", "3", "--set", "methods=tp", "--table",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.starts_with("distribution study: 3 of 3"));
    assert!(text.contains("coverage"));
}

#[test]
fn unknown_preset_is_usage_error() {
    assert_eq!(run(&["simulate", "--preset", "nope", "--seed", "1"]).status.code(), Some(2));
}

#[test]
fn calibrated_study_reads_a_returns_file() {
    let dir = TempDir::new().unwrap();
    let returns = write_panel(dir.path(), "returns.csv", &simulated(70, 30, 9));
    let panel_file = format!("panel_file={}", p(&returns));
    let out = dir.path().join("report.json");
    let o = run(&[
        "simulate", "--preset", "calibrated", "--seed", "5", "--reps", "3", "--set", "source=panel", "--set",
        &panel_file, "--set", "n_select=20", "--set", "r=2", "--set", "draws=5", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["study"], "risk");
    assert_eq!(v["effective"], 3);
    // An incomplete file is rejected as a data error.
    let (_, masked) = incomplete(70, 30, 9);
    let holey = write_panel(dir.path(), "holey.csv", &masked);
    let panel_file = format!("panel_file={}", p(&holey));
    let o = run(&[
        "simulate", "--preset", "calibrated", "--seed", "5", "--reps", "1", "--set", "source=panel", "--set",
        &panel_file,
    ]);
    assert_eq!(o.status.code(), Some(3));
}
