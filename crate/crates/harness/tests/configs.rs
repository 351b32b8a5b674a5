//! Every shipped configuration parses and runs end to end at reduced size.

use std::fs;
use std::path::{Path, PathBuf};

use catstab::{run, ExperimentConfig, RunOptions};
use serde_json::{json, Value};

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn shipped() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(config_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    v.sort();
    v
}

/// Shrink grids and truncations so the whole set runs in seconds.
fn shrink(mut v: Value) -> Value {
    let exp = v["experiment"].as_str().unwrap().to_string();
    match exp.as_str() {
        "evolve" | "compare" => {
            let t_end = if v["model"] == "three_mode" {
                0.002
            } else {
                0.05
            };
            v["grid"] = json!({ "t_end": t_end, "samples": 5 });
        }
        "wigner" => {
            v["grid"]["nx"] = json!(15);
            v["grid"]["np"] = json!(15);
        }
        "sweep" => {
            v["grid"] = json!({
                "g_2ph": { "start": 100.0, "stop": 200.0, "step": 100.0 },
                "g_ps": { "start": 300.0, "stop": 300.0, "step": 100.0 }
            });
            v["params"]["storage_dim"] = json!(14);
        }
        "reduce" => v["grid"]["deltas"] = json!([0.2]),
        _ => {}
    }
    if v["model"] == "three_mode" {
        v["params"]["layout"] = json!([10, 2, 2]);
    } else if v["params"].get("kappa_2ph").is_some() {
        v["params"]["storage_dim"] = json!(16);
    }
    v
}

#[test]
fn shipped_configs_parse() {
    let files = shipped();
    assert!(files.len() >= 8, "{files:?}");
    for f in files {
        ExperimentConfig::load(&f).unwrap_or_else(|e| panic!("{e}"));
    }
}

#[test]
fn shipped_configs_run_at_reduced_size() {
    let tmp = tempfile::tempdir().unwrap();
    for f in shipped() {
        let stem = f.file_stem().unwrap().to_string_lossy().to_string();
        let value: Value = serde_json::from_str(&fs::read_to_string(&f).unwrap()).unwrap();
        let text = serde_json::to_string_pretty(&shrink(value)).unwrap();
        let cfg = ExperimentConfig::parse(&stem, &text).unwrap_or_else(|e| panic!("{e}"));
        let out = tmp.path().join(&stem);
        let report = run(
            &cfg,
            &RunOptions {
                out_dir: Some(out.clone()),
                threads: Some(1),
                full_model: false,
            },
        )
        .unwrap_or_else(|e| panic!("{stem}: {e}"));
        assert!(out.join("manifest.json").is_file(), "{stem}");
        assert!(out.join("config.json").is_file(), "{stem}");
        for name in &report.outputs {
            assert!(out.join(name).is_file(), "{stem}: {name}");
            if name.ends_with(".csv") {
                let mut r = csv::Reader::from_path(out.join(name)).unwrap();
                assert!(!r.headers().unwrap().is_empty(), "{stem}: {name}");
                assert!(r.records().all(|rec| rec.is_ok()), "{stem}: {name}");
            }
        }
    }
}
