use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: [&str; 6] = ["--draws", "4000", "--chains", "2", "--burnin", "1000"];

fn voi(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voi"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("run voi")
}

fn ok(args: &[&str], out: &Path) {
    let o = voi(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().chain(SMALL.iter()).copied().collect()
}

fn data_file() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic_london_2012.json")
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn sample_twice_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = data_file();
    let args = with_small(&["sample", "--data", data.to_str().unwrap(), "--scenario", "base", "--seed", "1"]);
    ok(&args, &dir.path().join("a"));
    ok(&args, &dir.path().join("b"));
    let a = fs::read(dir.path().join("a/samples.csv")).unwrap();
    let b = fs::read(dir.path().join("b/samples.csv")).unwrap();
    assert_eq!(a, b);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/samples.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 1);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn one_cell_evppi_grid() {
    let dir = tempfile::tempdir().unwrap();
    ok(&with_small(&["evppi", "--inputs", "pi_GA", "--outputs", "mu_UN", "--scenario", "a"]), dir.path());
    let r = rows(&dir.path().join("evppi_grid.csv"));
    assert_eq!(r.len(), 2);
    assert_eq!(r[0], vec!["group", "mu_UN"]);
    assert_eq!(r[1][0], "pi_GA");
    let p: f64 = r[1][1].parse().unwrap();
    assert!((0.0..=1.02).contains(&p), "{p}");
    assert!(dir.path().join("evppi_grid.svg").exists());
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("evppi_grid.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["scenario"], "a");
}

#[test]
fn default_grid_is_founders_by_outputs() {
    let dir = tempfile::tempdir().unwrap();
    ok(&with_small(&["evppi", "--se-draws", "0"]), dir.path());
    let r = rows(&dir.path().join("evppi_grid.csv"));
    assert_eq!(r.len(), 1 + voi_core::cli::DEFAULT_INPUT_GROUPS.len());
    assert!(r.iter().all(|row| row.len() == 1 + voi_core::hiv::HivOutputs::NAMES.len()));
    let long = rows(&dir.path().join("evppi_cells.csv"));
    assert_eq!(long.len(), 1 + 17 * 36);
}

#[test]
fn evsi_at_zero_sample_size_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    ok(&with_small(&["evsi", "--design", "gmshs", "--n", "0"]), dir.path());
    let r = rows(&dir.path().join("evsi_curve.csv"));
    assert_eq!(&r[0][..6], &["design", "output", "n", "evsi", "remaining_variance", "se"]);
    assert_eq!(r.len(), 2);
    assert_eq!(r[1][0], "gmshs");
    assert_eq!(r[1][2], "0");
    assert_eq!(r[1][3].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn default_evsi_runs_both_designs_over_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    ok(&with_small(&["evsi", "--se-draws", "0"]), dir.path());
    let r = rows(&dir.path().join("evsi_curve.csv"));
    assert_eq!(r.len(), 1 + 2 * 7);
    let ns: Vec<&str> = r[1..8].iter().map(|row| row[2].as_str()).collect();
    assert_eq!(ns, ["10", "50", "100", "500", "1000", "5000", "10000"]);
    assert!(r[1..8].iter().all(|row| row[0] == "gumanon"));
    assert!(r[8..].iter().all(|row| row[0] == "gmshs"));
}

#[test]
fn enbs_from_curve_file_and_do_not_sample() {
    let dir = tempfile::tempdir().unwrap();
    let curve_dir = dir.path().join("curve");
    ok(&with_small(&["evsi", "--n", "10,100,1000"]), &curve_dir);
    let curve = curve_dir.join("evsi_curve.csv");
    let out = dir.path().join("enbs");
    ok(&["enbs", "--curve", curve.to_str().unwrap(), "--cost-fixed", "1e12"], &out);
    let r = rows(&out.join("enbs.csv"));
    assert_eq!(r.len(), 1 + 2 * 3);
    assert!(r[1..].iter().all(|row| row[6] == "0"));
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run.meta.json")).unwrap()).unwrap();
    assert!(meta["enbs"].as_array().unwrap().iter().all(|e| e["do_not_sample"] == true));
    assert!(out.join("enbs.svg").exists());
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"seed": 11, "draws": 2000, "chains": 2, "burnin": 500, "scenario": "b"}"#).unwrap();
    let out = dir.path().join("o");
    ok(&["summary", "--config", cfg.to_str().unwrap(), "--seed", "12"], &out);
    let echoed: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["seed"], 12);
    assert_eq!(echoed["draws"], 2000);
    assert_eq!(echoed["scenario"], "b");
    assert_eq!(echoed["command"], "summary");
    let r = rows(&out.join("summary.csv"));
    assert_eq!(r[0], ["name", "mean", "sd", "median", "q2.5", "q97.5", "rhat", "ess"]);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["evppi", "--inputs", "not_a_column"],
        vec!["evsi", "--n", "100,10"],
        vec!["sample", "--scenario", "c"],
        vec!["sample", "--data", "/no/such.json"],
        vec!["evsi", "--loss", "entropy"],
        vec!["frobnicate"],
    ] {
        let o = voi(&args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn runtime_errors_exit_1_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"y_pop\": 1}").unwrap();
    let o = voi(&["sample", "--data", bad.to_str().unwrap()], &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains("loading data"), "{msg}");
    assert!(msg.contains("missing"), "{msg}");
}
