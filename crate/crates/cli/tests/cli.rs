use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn nb(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nb"))
        .args(args)
        .current_dir(dir)
        .env("NB_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = nb(args, dir);
    assert!(
        out.status.success(),
        "nb {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn simulate(dir: &Path, sub: &str, n: usize, p: usize, q: usize, seed: u64, extra: &[&str]) {
    let (n, p, q, seed) = (n.to_string(), p.to_string(), q.to_string(), seed.to_string());
    let mut args = vec!["simulate", "--structure", "er", "--n", &n, "--p", &p, "--q", &q, "--seed", &seed, "--out", sub];
    args.extend_from_slice(extra);
    ok(&args, dir);
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// `metric,value` rows of a metrics file.
fn metric(path: &Path, name: &str) -> Option<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .find_map(|l| l.strip_prefix(&format!("{name},")).map(|v| v.parse().unwrap()))
}

fn edge_lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn simulation_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), "a", 50, 100, 3, 7, &[]);
    simulate(tmp.path(), "b", 50, 100, 3, 7, &[]);
    for f in ["Y.csv", "X.csv", "truth.json", "clusters.csv"] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap(), "{f}");
    }
    let y = fs::read_to_string(tmp.path().join("a/Y.csv")).unwrap();
    assert_eq!(y.lines().count(), 51);
    assert_eq!(y.lines().next().unwrap().split(',').count(), 100);
}

#[test]
fn zero_inflated_simulation_has_the_requested_zero_rate() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), "z", 200, 40, 4, 3, &["--zi-mean", "0.5"]);
    let y = fs::read_to_string(tmp.path().join("z/Y.csv")).unwrap();
    let values: Vec<f64> = y.lines().skip(1).flat_map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>()).collect();
    let rate = values.iter().filter(|&&v| v == 0.0).count() as f64 / values.len() as f64;
    // Per-variable probabilities have sd 0.05 around the mean.
    assert!((rate - 0.5).abs() < 0.03, "zero rate {rate}");
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let out = nb(&["simulate", "--n", "50", "--p", "10"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = nb(&["fit", "--y", "missing.csv", "--q", "2"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = nb(&["simulate", "--n", "10", "--p", "3", "--q", "5"], tmp.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn mismatched_inputs_name_both_files() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), "a", 30, 12, 2, 1, &[]);
    simulate(tmp.path(), "b", 40, 12, 2, 1, &[]);
    let out = nb(&["fit", "--y", "a/Y.csv", "--x", "b/X.csv", "--q", "2"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("a/Y.csv") && err.contains("b/X.csv"), "{err}");
}

#[test]
fn latent_fit_recovers_the_clustering() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), "s", 50, 100, 3, 11, &[]);
    ok(&["fit", "--y", "s/Y.csv", "--x", "s/X.csv", "--q", "3", "--out", "f"], tmp.path());
    for f in ["model.json", "network.edgelist.tsv", "network.dot"] {
        assert!(tmp.path().join("f").join(f).exists(), "{f}");
    }
    ok(&["metrics", "--model", "f/model.json", "--truth", "s/truth.json", "--out", "m.csv"], tmp.path());
    assert_eq!(metric(&tmp.path().join("m.csv"), "ari"), Some(1.0));
    let model = json(&tmp.path().join("f/model.json"));
    assert_eq!(model["schema_version"], 1);
    assert_eq!(model["method"], "vem");
    let labels = model["clustering"].as_array().unwrap();
    assert!(labels.iter().all(|l| (1..=3).contains(&l.as_u64().unwrap())));
}

#[test]
fn fits_are_deterministic_and_model_files_round_trip() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), "s", 40, 30, 3, 5, &[]);
    for out in ["a", "b"] {
        ok(&["fit", "--y", "s/Y.csv", "--x", "s/X.csv", "--q", "3", "--lambda", "0.05", "--seed", "4", "--out", out], tmp.path());
    }
    let a = fs::read(tmp.path().join("a/model.json")).unwrap();
    assert_eq!(a, fs::read(tmp.path().join("b/model.json")).unwrap());
    let value: Value = serde_json::from_slice(&a).unwrap();
    let mut again = serde_json::to_string_pretty(&value).unwrap();
    again.push('\n');
    assert_eq!(again.as_bytes(), &a[..]);
}

#[test]
fn two_step_with_known_clusters_keeps_them() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), "s", 40, 24, 4, 2, &[]);
    ok(&["fit", "--y", "s/Y.csv", "--x", "s/X.csv", "--method", "two-step", "--clusters", "s/clusters.csv", "--out", "f"], tmp.path());
    let model = json(&tmp.path().join("f/model.json"));
    let truth = json(&tmp.path().join("s/truth.json"));
    assert_eq!(model["clustering"], truth["clustering"]);
    assert_eq!(model["method"], "two-step");
}

#[test]
fn penalty_controls_edge_count() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), "s", 80, 40, 5, 9, &[]);
    let common = ["fit", "--y", "s/Y.csv", "--x", "s/X.csv", "--method", "em", "--clusters", "s/clusters.csv"];
    let mut dense = common.to_vec();
    dense.extend(["--lambda", "0", "--out", "dense"]);
    ok(&dense, tmp.path());
    let mut empty = common.to_vec();
    empty.extend(["--lambda", "100", "--out", "empty"]);
    ok(&empty, tmp.path());
    assert_eq!(edge_lines(&tmp.path().join("dense/network.edgelist.tsv")), 10);
    assert_eq!(edge_lines(&tmp.path().join("empty/network.edgelist.tsv")), 0);
    let dot = fs::read_to_string(tmp.path().join("dense/network.dot")).unwrap();
    assert!(dot.contains("deeppink") || dot.contains("steelblue"));
}

#[test]
fn non_convergence_still_succeeds() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), "s", 40, 30, 3, 5, &[]);
    let out = nb(&["fit", "--y", "s/Y.csv", "--x", "s/X.csv", "--q", "3", "--max-iter", "1", "--tol", "1e-14", "--out", "f"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&tmp.path().join("f/model.json"))["converged"], false);
}

#[test]
fn select_picks_the_true_cluster_count() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), "s", 100, 100, 3, 21, &[]);
    ok(&["--jobs", "2", "select", "--y", "s/Y.csv", "--x", "s/X.csv", "--qs", "1,2,3,4,5,6,7,8", "--out", "sel"], tmp.path());
    let criteria = fs::read_to_string(tmp.path().join("sel/criteria.csv")).unwrap();
    let selected: Vec<&str> = criteria.lines().filter(|l| l.contains(",true,")).filter(|l| l.split(',').nth(8) == Some("true")).collect();
    assert_eq!(selected.len(), 1, "{criteria}");
    assert!(selected[0].starts_with("3,"), "{criteria}");
    assert_eq!(json(&tmp.path().join("sel/model.json"))["q"], 3);
}

#[test]
fn penalty_sweep_records_a_path_for_auc() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), "s", 100, 40, 4, 8, &[]);
    ok(&["select", "--y", "s/Y.csv", "--x", "s/X.csv", "--clusters", "s/clusters.csv", "--lambda-points", "10", "--out", "sel"], tmp.path());
    assert_eq!(edge_lines(&tmp.path().join("sel/criteria.csv")), 10);
    ok(&["metrics", "--model", "sel/model.json", "--truth", "s/truth.json", "--out", "m.csv"], tmp.path());
    let auc = metric(&tmp.path().join("m.csv"), "auc");
    assert!(auc.is_some_and(|a| (0.0..=1.0).contains(&a)));
    assert!(metric(&tmp.path().join("m.csv"), "f1").is_some());
}

#[test]
fn stars_chooses_a_penalty_from_the_grid() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), "s", 80, 30, 4, 13, &[]);
    let stdout = ok(
        &["stars", "--y", "s/Y.csv", "--x", "s/X.csv", "--clusters", "s/clusters.csv", "--lambda-points", "8", "--subsamples", "6", "--threshold", "0.8", "--out", "st"],
        tmp.path(),
    );
    let stability = fs::read_to_string(tmp.path().join("st/stability.csv")).unwrap();
    let lambdas: Vec<f64> = stability.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(lambdas.len(), 8);
    let chosen = json(&tmp.path().join("st/model.json"))["lambda"].as_f64().unwrap();
    assert!(lambdas.contains(&chosen), "{stdout}");
    let marked: Vec<&str> = stability.lines().filter(|l| l.ends_with(",true")).collect();
    assert_eq!(marked.len(), 1);
}

#[test]
fn metrics_of_the_truth_against_itself() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), "s", 30, 20, 3, 4, &[]);
    ok(&["metrics", "--model", "s/truth.json", "--truth", "s/truth.json", "--out", "m.csv"], tmp.path());
    let m = tmp.path().join("m.csv");
    assert_eq!(metric(&m, "ari"), Some(1.0));
    for name in ["rmse_B", "rmse_D", "rmse_fit"] {
        assert_eq!(metric(&m, name), Some(0.0), "{name}");
    }
    assert_eq!(metric(&m, "f1"), Some(1.0));
}

#[test]
fn experiment_writes_long_format_rows() {
    let tmp = TempDir::new().unwrap();
    ok(
        &["experiment", "--ns", "30", "--p", "12", "--qs", "3", "--replicates", "2", "--methods", "vem,two-step-kmeans", "--lambda-points", "5", "--out", "e/rows.csv"],
        tmp.path(),
    );
    let text = fs::read_to_string(tmp.path().join("e/rows.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "replicate,structure,n,p,q,method,metric,value");
    assert!(text.lines().any(|l| l.contains(",vem,ari,")));
    let out = nb(&["experiment", "--methods", "nonsense", "--out", "x.csv"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}
