use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn flr(args: &[&str], dir: &Path, threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_flr"));
    cmd.args(args).current_dir(dir).env("RUST_LOG", "warn");
    match threads {
        Some(t) => cmd.env("FLR_THREADS", t),
        None => cmd.env_remove("FLR_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

const SIM: &str = r#"
[scenario]
mode = "commutative"
spectrum = "power"
m = 16
t = 2.0
c = 2.0
sigma = 0.0
filter = "cutoff"
seed = 3

[simulate]
n = 64

[fit]
dataset = "sim/dataset.csv"
truth = "sim/truth.json"
lambda = 1e-12
"#;

#[test]
fn filters_check_default_passes() {
    let dir = TempDir::new().unwrap();
    let out = flr(&["filters-check", "--out", "fc"], dir.path(), None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(dir.path().join("fc/filters_check.json"));
    assert_eq!(report["passed"], true);
    let tik = &report["families"][0]["certification"];
    assert_eq!(tik["kind"], "tikhonov");
    let omega1 = tik["omega"][0]["supremum"].as_f64().unwrap();
    assert!((omega1 - 1.0).abs() < 1e-3, "omega_1 = {omega1}");
    assert!(dir.path().join("fc/manifest.json").exists());
}

#[test]
fn filters_check_tikhonov_p2_fails() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "c.toml", "[filter]\nkinds = [\"tikhonov\"]\np_list = [2.0]\n");
    let out = flr(&["filters-check", "--config", "c.toml", "--out", "o"], dir.path(), None);
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("tikhonov") && stderr.contains("lambda"), "{stderr}");
    assert_eq!(json(dir.path().join("o/manifest.json"))["exit_code"], 2);
}

#[test]
fn malformed_config_exits_1() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "c.toml", "[filter\nkinds =");
    let out = flr(&["filters-check", "--config", "c.toml"], dir.path(), None);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    let out = flr(&["rates", "--config", "missing.toml"], dir.path(), None);
    assert_eq!(code(&out), 1);
    let out = flr(&["rates", "--preset", "no-such-preset"], dir.path(), None);
    assert_eq!(code(&out), 1);
}

#[test]
fn lowerbound_preset_passes() {
    let dir = TempDir::new().unwrap();
    let out = flr(&["lowerbound", "--preset", "lowerbound-m16", "--out", "lb"], dir.path(), None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rep = json(dir.path().join("lb/separation_report.json"));
    assert!(rep["report"]["min_hamming"].as_u64().unwrap() >= 3);
    assert_eq!(rep["report"]["codebook_verified"], true);
    assert!(rep["codebook"].as_array().unwrap().len() >= 5);
}

#[test]
fn lowerbound_rejects_bad_u_and_zero_variance() {
    let dir = TempDir::new().unwrap();
    let smooth = "smoothness = { kind = \"commutative\", alpha = 0.5 }\n";
    write(dir.path(), "u.toml", &format!("[lowerbound]\nm = 16\nu = 0.5\n{smooth}"));
    write(dir.path(), "s.toml", &format!("[lowerbound]\nm = 16\nsigma2 = 0.0\n{smooth}"));
    for file in ["u.toml", "s.toml"] {
        let out = flr(&["lowerbound", "--config", file], dir.path(), None);
        assert_eq!(code(&out), 1, "{file}");
    }
}

#[test]
fn simulate_then_fit_recovers_noiseless_slope() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "sim.toml", SIM);
    let out = flr(&["simulate", "--config", "sim.toml", "--out", "sim"], dir.path(), None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = flr(&["fit", "--config", "sim.toml", "--out", "fit"], dir.path(), None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let res = json(dir.path().join("fit/fit_result.json"));
    assert_eq!(res["errors_available"], true);
    assert!(res["errors"]["l2"].as_f64().unwrap() <= 1e-8);
    assert_eq!(res["fit"]["filter_kind"], "cutoff");
    assert_eq!(res["fit"]["beta_hat"].as_array().unwrap().len(), 16);
}

#[test]
fn fit_on_curves_without_truth() {
    let dir = TempDir::new().unwrap();
    let g = 101;
    let grid: Vec<f64> = (0..g).map(|k| k as f64 / (g - 1) as f64).collect();
    let mut curves = String::from("s");
    for s in &grid {
        curves += &format!(",{s}");
    }
    curves.push('\n');
    let mut responses = String::from("id,y\n");
    for k in 0..40 {
        let a = (k as f64 * 0.37).sin();
        let b = (k as f64 * 0.91).cos();
        curves += &format!("c{k}");
        for s in &grid {
            curves += &format!(",{}", a * s + b * s * s);
        }
        curves.push('\n');
        responses += &format!("c{k},{}\n", 0.5 * a + 0.25 * b);
    }
    write(dir.path(), "curves.csv", &curves);
    write(dir.path(), "y.csv", &responses);
    let config = r#"
[scenario]
mode = "commutative"
m = 12
t = 4.0
c = 2.0
sigma = 0.5
filter = "tikhonov"
seed = 1

[fit]
curves = "curves.csv"
responses = "y.csv"
"#;
    write(dir.path(), "c.toml", config);
    let out = flr(&["fit", "--config", "c.toml", "--out", "o"], dir.path(), None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let res = json(dir.path().join("o/fit_result.json"));
    assert_eq!(res["errors_available"], false);
    assert!(res["errors"].is_null());
    assert_eq!(res["fit"]["diagnostics"]["n"], 40);
}

#[test]
fn fit_reports_parse_errors_with_row() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "d.csv", "x_1,x_2,y\n1,2,3\n1,oops,3\n");
    write(
        dir.path(),
        "c.toml",
        "[fit]\ndataset = \"d.csv\"\nlambda = 0.1\n",
    );
    let out = flr(&["fit", "--config", "c.toml", "--out", "o"], dir.path(), None);
    assert_eq!(code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("row 3") && stderr.contains("d.csv"), "{stderr}");
}

#[test]
fn seed_changes_dataset_not_manifest_schema() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "sim.toml", SIM);
    flr(&["simulate", "--config", "sim.toml", "--out", "a"], dir.path(), None);
    flr(&["simulate", "--config", "sim.toml", "--out", "b", "--seed", "4"], dir.path(), None);
    let a = fs::read(dir.path().join("a/dataset.csv")).unwrap();
    let b = fs::read(dir.path().join("b/dataset.csv")).unwrap();
    assert_ne!(a, b);
    let keys = |v: Value| -> Vec<String> { v.as_object().unwrap().keys().cloned().collect() };
    let ma = json(dir.path().join("a/manifest.json"));
    let mb = json(dir.path().join("b/manifest.json"));
    assert_ne!(ma["config_hash"], mb["config_hash"]);
    assert_eq!(mb["base_seed"], 4);
    assert_eq!(keys(ma), keys(mb));
}

const SMALL_RATES: &str = r#"
[scenario]
mode = "commutative"
m = 32
t = 4.0
c = 2.0
sigma = 0.5
filter = "tikhonov"
seed = 11

[harness]
replicates = 1
n_grid = [64, 128, 256, 512]
"#;

#[test]
fn underpowered_rates_are_withheld() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "r.toml", SMALL_RATES);
    let out = flr(&["rates", "--config", "r.toml", "--out", "o"], dir.path(), None);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("underpowered"));
    let rep = json(dir.path().join("o/commutative-tikhonov-l2.json"));
    assert_eq!(rep["verdict"], "withheld");
    let svg = fs::read_to_string(dir.path().join("o/commutative-tikhonov-l2.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
}

/// Every output file except the manifest (which carries timestamps).
fn numeric_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let rates = SMALL_RATES.replace("replicates = 1", "replicates = 6");
    write(dir.path(), "r.toml", &rates);
    write(dir.path(), "sim.toml", SIM);
    let runs: [(&[&str], &str); 4] = [
        (&["rates", "--config", "r.toml"], "rates"),
        (&["simulate", "--config", "sim.toml"], "sim"),
        (&["lowerbound", "--preset", "lowerbound-m16"], "lb"),
        (&["filters-check"], "fc"),
    ];
    for (args, name) in runs {
        let mut outputs = Vec::new();
        for (k, threads) in [Some("1"), Some("3"), None].into_iter().enumerate() {
            let out_dir = format!("{name}-{k}");
            let mut full: Vec<&str> = args.to_vec();
            full.extend(["--out", &out_dir]);
            flr(&full, dir.path(), threads);
            outputs.push(numeric_outputs(&dir.path().join(&out_dir)));
        }
        assert!(!outputs[0].is_empty());
        assert_eq!(outputs[0], outputs[1], "{name}: FLR_THREADS=1 vs 3");
        assert_eq!(outputs[0], outputs[2], "{name}: FLR_THREADS=1 vs default");
    }
}

#[test]
fn brownian_cubic_preset_passes() {
    let dir = TempDir::new().unwrap();
    let out = flr(&["rates", "--preset", "comm-brownian-cubic-a05", "--out", "o"], dir.path(), None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rep = json(dir.path().join("o/commutative-tikhonov-l2.json"));
    let slope = rep["fitted_slope"].as_f64().unwrap();
    assert!((slope + 2.0 / 7.0).abs() <= 0.08, "slope {slope}");
}

#[test]
fn invalid_thread_count_is_rejected() {
    let dir = TempDir::new().unwrap();
    let out = flr(&["filters-check"], dir.path(), Some("zero"));
    assert_eq!(code(&out), 1);
}
