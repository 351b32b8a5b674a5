//! End-to-end runs of the binary: exit codes, artifacts and determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn catstab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catstab"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run_with(experiment: &str, config: &Path, out: &Path) -> Output {
    catstab(&[
        experiment,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
}

const SMALL_EVOLVE: &str = r#"{
  "experiment": "evolve",
  "model": "effective",
  "params": { "kappa_1ph": 1.0, "kappa_2ph": 250.0, "kappa_ps": 760.0, "eps_2ph": 500.0, "storage_dim": 16 },
  "grid": { "t_end": 0.05, "samples": 11 }
}"#;

#[test]
fn evolve_writes_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "evolve.json", SMALL_EVOLVE);
    let out = tmp.path().join("run");
    let o = run_with("evolve", &cfg, &out);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    for f in [
        "config.json",
        "timeseries.csv",
        "timeseries.json",
        "fidelity.svg",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let csv = fs::read_to_string(out.join("timeseries.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(
        header.starts_with("time,fidelity,parity,mean_photon,trace_error"),
        "{header}"
    );
    assert_eq!(csv.lines().count(), 12);

    let ts: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("timeseries.json")).unwrap()).unwrap();
    assert_eq!(ts["times"].as_array().unwrap().len(), 11);
    assert_eq!(ts["observables"]["fidelity"].as_array().unwrap().len(), 11);

    // the as-run config parses again and records the run directory
    let as_run = catstab::ExperimentConfig::load(&out.join("config.json")).unwrap();
    assert_eq!(as_run.output.as_deref(), Some(out.as_path()));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["experiment"], "evolve");
    assert!(manifest["versions"]["catstab-core"].is_string());
    assert!(manifest["timings"]["compute_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "evolve.json", SMALL_EVOLVE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run_with("evolve", &cfg, &a).status.code(), Some(0));
    assert_eq!(run_with("evolve", &cfg, &b).status.code(), Some(0));
    for f in ["timeseries.csv", "timeseries.json", "fidelity.svg"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }

    let sweep = write_config(
        tmp.path(),
        "sweep.json",
        r#"{
  "experiment": "sweep",
  "params": { "storage_dim": 14 },
  "grid": { "g_2ph": { "start": 100.0, "stop": 200.0, "step": 100.0 }, "g_ps": { "start": 200.0, "stop": 400.0, "step": 200.0 } }
}"#,
    );
    let (c, d) = (tmp.path().join("c"), tmp.path().join("d"));
    let one = catstab(&[
        "sweep",
        "--config",
        sweep.to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
        "--threads",
        "1",
    ]);
    let two = catstab(&[
        "sweep",
        "--config",
        sweep.to_str().unwrap(),
        "--out",
        d.to_str().unwrap(),
        "--threads",
        "3",
    ]);
    assert_eq!(
        one.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&one.stderr)
    );
    assert_eq!(two.status.code(), Some(0));
    assert_eq!(
        fs::read(c.join("sweep.csv")).unwrap(),
        fs::read(d.join("sweep.csv")).unwrap()
    );
}

#[test]
fn config_errors_exit_2_and_write_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let bad = write_config(
        tmp.path(),
        "bad.json",
        "{\n  \"experiment\": \"evolve\",\n  \"params\": { \"kappa_1ph\": 1.0, \"kapa_2ph\": 2.0 },\n  \"grid\": { \"t_end\": 1.0 }\n}",
    );
    let o = run_with("evolve", &bad, &out);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.json:3:"), "{err}");
    assert!(err.contains("kapa_2ph"), "{err}");
    assert!(!out.exists());

    // well-formed config run under the wrong experiment name
    let cfg = write_config(tmp.path(), "evolve.json", SMALL_EVOLVE);
    assert_eq!(run_with("steady", &cfg, &out).status.code(), Some(2));
    assert_eq!(run_with("simulate", &cfg, &out).status.code(), Some(2));
    assert!(!out.exists());

    let missing = tmp.path().join("absent.json");
    assert_eq!(run_with("evolve", &missing, &out).status.code(), Some(2));
    assert_eq!(catstab(&["evolve"]).status.code(), Some(2));
}

#[test]
fn degenerate_steady_state_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    // without loss or parity pumping both parity sectors are stationary
    let cfg = write_config(
        tmp.path(),
        "steady.json",
        r#"{ "experiment": "steady", "params": { "kappa_1ph": 0.0, "kappa_2ph": 1.0, "kappa_ps": 0.0, "eps_2ph": 2.0, "storage_dim": 12 } }"#,
    );
    let o = run_with("steady", &cfg, &out);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(!out.exists());
}

#[test]
fn oversized_dense_propagator_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(
        tmp.path(),
        "evolve.json",
        r#"{
  "experiment": "evolve",
  "params": { "kappa_1ph": 1.0, "kappa_2ph": 1.0, "kappa_ps": 0.0, "eps_2ph": 2.0, "storage_dim": 300 },
  "grid": { "t_end": 1.0, "samples": 3 },
  "propagator": { "method": "dense-exponential" }
}"#,
    );
    let o = run_with("evolve", &cfg, &out);
    assert_eq!(
        o.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("300"), "{err}");
    assert!(!out.exists());
}
