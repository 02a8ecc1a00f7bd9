use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kroncov::experiment::io::read_covariance_bin;
use nalgebra::DMatrix;
use serde_json::Value;

fn kroncov(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kroncov"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

/// Writes `config.toml` into `dir` and runs `cmd` with output under `out`.
fn run(dir: &Path, cmd: &str, config: &str, out: &str) -> Output {
    let name = format!("{out}.toml");
    fs::write(dir.join(&name), config).unwrap();
    kroncov(dir, &[cmd, "--config", &name, "--out", out])
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Data rows: everything after the provenance comment and header.
fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn synth_is_deterministic_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 7\n[synth]\np = 2\nt = 2\nn = 3\n";
    ok(run(dir.path(), "synth", cfg, "a"));
    ok(run(dir.path(), "synth", cfg, "b"));
    for f in ["samples.csv", "samples_truth.bin", "samples.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    let rows = csv_rows(&dir.path().join("a/samples.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.len() == 4));
    let text = fs::read_to_string(dir.path().join("a/samples.csv")).unwrap();
    assert!(text.starts_with("# config_hash=") && text.lines().next().unwrap().ends_with("seed=7"));
    assert_eq!(json(&dir.path().join("a/samples.json"))["distribution"], "gaussian");

    ok(run(dir.path(), "synth", "seed = 7\n[synth]\np = 2\nt = 2\nn = 3\ndof = 3.0\n", "t"));
    assert_eq!(json(&dir.path().join("t/samples.json"))["distribution"], "student-t");
    assert_ne!(fs::read(dir.path().join("t/samples.csv")).unwrap(), fs::read(dir.path().join("a/samples.csv")).unwrap());

    // --seed overrides the config.
    ok(kroncov(dir.path(), &["synth", "--config", "a.toml", "--out", "c", "--seed", "8"]));
    assert_ne!(fs::read(dir.path().join("c/samples.csv")).unwrap(), fs::read(dir.path().join("a/samples.csv")).unwrap());
}

#[test]
fn estimate_scm_on_two_samples() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("x.csv"), "x_0_0,x_0_1\n1,0\n-1,0\n").unwrap();
    ok(run(dir.path(), "estimate", "[estimate]\ninput = \"x.csv\"\np = 2\nt = 1\nestimator = \"scm\"\n", "out"));
    let (sigma, prov) = read_covariance_bin(&dir.path().join("out/covariance.bin")).unwrap();
    assert_eq!(*sigma.matrix(), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    assert_eq!(prov.seed, 0);
    let diag = json(&dir.path().join("out/diagnostics.json"));
    assert_eq!(diag["config_hash"].as_str().unwrap(), prov.config_hash);
    assert!(diag["condition_number"].is_null());
}

#[test]
fn estimate_diagnostics_contracts() {
    let dir = tempfile::tempdir().unwrap();
    ok(run(dir.path(), "synth", "seed = 3\n[synth]\np = 4\nt = 3\nn = 8\n", "data"));
    let est = |kind: &str, out: &str| {
        let cfg = format!("[estimate]\ninput = \"data/samples.csv\"\np = 4\nt = 3\nestimator = \"{kind}\"\n");
        ok(run(dir.path(), "estimate", &cfg, out));
        json(&dir.path().join(out).join("diagnostics.json"))
    };
    let tyler = est("tyler-kronpca", "tyler");
    assert!((tyler["trace"].as_f64().unwrap() - 12.0).abs() < 1e-9);
    let (sigma, _) = read_covariance_bin(&dir.path().join("tyler/covariance.bin")).unwrap();
    assert!((sigma.trace() - 12.0).abs() < 1e-9);

    // n = 8 < pT = 12: the sample covariance is singular, the regularized one is not.
    let scm = est("scm", "scm");
    let dc = est("dc-kronpca-lw", "dc");
    let dc_cond = dc["condition_number"].as_f64().expect("finite condition number");
    let scm_cond = scm["condition_number"].as_f64().unwrap_or(f64::INFINITY);
    assert!(dc_cond <= scm_cond, "{dc_cond} vs {scm_cond}");
    let model = json(&dir.path().join("dc/model.json"));
    assert!(model["factors"].as_array().is_some_and(|f| !f.is_empty()));
}

fn mse_table(path: &Path) -> Vec<(String, usize, f64)> {
    csv_rows(path)
        .into_iter()
        .map(|r| (r[0].clone(), r[1].parse().unwrap(), r[2].parse().unwrap()))
        .collect()
}

#[test]
fn mse_bench_scm_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 1\n[mse_bench]\np = 10\nt = 5\nn_grid = [50, 200, 1000]\ntrials = 20\n\
               [[mse_bench.estimators]]\nkind = \"scm\"\n";
    ok(run(dir.path(), "mse-bench", cfg, "out"));
    let table = mse_table(&dir.path().join("out/mse.csv"));
    let means: Vec<f64> = table.iter().map(|r| r.2).collect();
    assert_eq!(table.iter().map(|r| r.1).collect::<Vec<_>>(), [50, 200, 1000]);
    assert!(means.windows(2).all(|w| w[1] <= w[0]), "{means:?}");
    let manifest = json(&dir.path().join("out/manifest.json"));
    assert_eq!(manifest["cells"].as_array().unwrap().len(), 3);
}

#[test]
fn mse_bench_kronpca_beats_scm_at_low_sample_size() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 2\n[mse_bench]\np = 20\nt = 5\nn_grid = [10]\ntrials = 100\n\
               [[mse_bench.estimators]]\nkind = \"scm\"\n\
               [[mse_bench.estimators]]\nkind = \"kronpca\"\nlabel = \"kronpca-r1\"\nconfig = { r = 1 }\n";
    ok(run(dir.path(), "mse-bench", cfg, "out"));
    let table = mse_table(&dir.path().join("out/mse.csv"));
    let mean = |name: &str| table.iter().find(|r| r.0 == name).unwrap().2;
    assert!(mean("kronpca-r1") < mean("scm"), "{table:?}");
}

fn anomaly_config(magnitude: f64, n_frames: usize) -> String {
    format!(
        "seed = 42\n[anomaly]\ntrain_len = 200\n\
         [anomaly.synthetic]\np = 10\nn_frames = {n_frames}\nrate = 0.1\nmagnitude = {magnitude}\n\
         [[anomaly.curves]]\nestimator = \"dc-kronpca-lw\"\nt = 10\n\
         [[anomaly.curves]]\nestimator = \"chen-tyler\"\nt = 1\n"
    )
}

#[test]
fn anomaly_detects_injected_shifts() {
    let dir = tempfile::tempdir().unwrap();
    ok(run(dir.path(), "anomaly", &anomaly_config(5.0, 10_000), "live"));
    let auc = json(&dir.path().join("live/auc_dc-kronpca-lw_t10.json"));
    assert!(auc["auc"].as_f64().unwrap() >= 0.95, "{auc}");
    assert!(auc["n_anomalous"].as_u64().unwrap() > 0);
    let baseline = json(&dir.path().join("live/auc_chen-tyler_t1.json"));
    assert_eq!(baseline["t"], 1);
    assert!(dir.path().join("live/roc_chen-tyler_t1.csv").exists());
    assert_eq!(csv_rows(&dir.path().join("live/stream.csv")).len(), 10_000);

    ok(run(dir.path(), "anomaly", &anomaly_config(0.0, 30_000), "null"));
    let auc = json(&dir.path().join("null/auc_dc-kronpca-lw_t10.json"))["auc"].as_f64().unwrap();
    assert!((0.4..=0.6).contains(&auc), "null AUC {auc}");
}

#[test]
fn anomaly_reads_labeled_csv() {
    let dir = tempfile::tempdir().unwrap();
    ok(run(dir.path(), "anomaly", &anomaly_config(4.0, 3000), "gen"));
    let cfg = "[anomaly]\ninput = \"gen/stream.csv\"\ntrain_len = 200\nlinear_detrend = true\n\
               [[anomaly.curves]]\nestimator = \"tyler-kronpca\"\nt = 3\n";
    ok(run(dir.path(), "anomaly", cfg, "csv"));
    let auc = json(&dir.path().join("csv/auc_tyler-kronpca_t3.json"));
    assert!((0.0..=1.0).contains(&auc["auc"].as_f64().unwrap()));
    assert!(!dir.path().join("csv/stream.csv").exists());
}

fn spectrum_summary(dir: &Path, cfg: &str, out: &str) -> (u64, u64) {
    ok(run(dir, "spectrum", cfg, out));
    let s = json(&dir.join(out).join("summary.json"));
    (s["kron_count"].as_u64().unwrap(), s["pca_count"].as_u64().unwrap())
}

#[test]
fn spectrum_examples() {
    let dir = tempfile::tempdir().unwrap();
    let (k, pca) = spectrum_summary(dir.path(), "[spectrum]\n[spectrum.truth]\np = 6\nt = 4\n", "truth");
    assert_eq!(k, 1);
    assert!(pca >= 1);
    let (k, pca) = spectrum_summary(dir.path(), "[spectrum]\n[spectrum.truth]\np = 3\nt = 3\ntcoeff = 0.0\nscoeff = 0.0\n", "id");
    assert_eq!((k, pca), (1, 9));
    let (k, pca) = spectrum_summary(dir.path(), "seed = 4\n[spectrum]\nn = 10000\n[spectrum.truth]\np = 10\nt = 5\n", "ar");
    assert!(k <= pca, "{k} vs {pca}");

    let rows = csv_rows(&dir.path().join("truth/spectrum.csv"));
    let energy: f64 = rows.iter().filter_map(|r| r[1].parse::<f64>().ok()).map(|v| v * v).sum();
    assert!((energy - 1.0).abs() < 1e-12);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |o: Output| o.status.code();
    // An unreadable config is a config error; unreadable data or unwritable output is io.
    assert_eq!(code(kroncov(dir.path(), &["synth", "--config", "missing.toml"])), Some(2));
    assert_eq!(code(run(dir.path(), "synth", "[synth]\np = 2\nt = 2\nn = 3\nbogus = 1\n", "a")), Some(2));
    assert_eq!(code(run(dir.path(), "estimate", "seed = 1\n", "b")), Some(2));
    assert_eq!(
        code(run(dir.path(), "estimate", "[estimate]\ninput = \"nope.csv\"\np = 2\nt = 1\nestimator = \"scm\"\n", "c")),
        Some(1)
    );
    fs::write(dir.path().join("bad.csv"), "x_0_0,x_0_1\n1,zz\n").unwrap();
    assert_eq!(
        code(run(dir.path(), "estimate", "[estimate]\ninput = \"bad.csv\"\np = 2\nt = 1\nestimator = \"scm\"\n", "d")),
        Some(2)
    );
    fs::write(dir.path().join("ok.csv"), "x_0_0,x_0_1\n1,0\n-1,0\n").unwrap();
    let cv = "[estimate]\ninput = \"ok.csv\"\np = 2\nt = 1\nestimator = \"dc-kronpca-lw\"\nconfig = { rho = \"cv\" }\n";
    assert_eq!(code(run(dir.path(), "estimate", cv, "e")), Some(2));
    // 41 training windows of dimension 100 give a singular sample covariance.
    let singular = "[anomaly]\ntrain_len = 50\n[anomaly.synthetic]\np = 10\nn_frames = 300\nrate = 0.1\nmagnitude = 5.0\n\
                    [[anomaly.curves]]\nestimator = \"scm\"\nt = 10\n";
    assert_eq!(code(run(dir.path(), "anomaly", singular, "f")), Some(3));
}
