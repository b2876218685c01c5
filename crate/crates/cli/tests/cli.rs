use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn floodgt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_floodgt")).args(args).output().unwrap()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|_| panic!("stderr is not JSON: {}", String::from_utf8_lossy(&o.stderr)))
}

/// Small synthetic dataset with a config trimmed for test speed.
fn small_run(dir: &Path, patch: impl FnOnce(&mut Value)) -> PathBuf {
    let o = floodgt(&["synth", "--out", dir.to_str().unwrap(), "--n-per-class", "150", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let path = dir.join("config.json");
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    cfg["model"]["max_epochs"] = 60.into();
    cfg["uncertainty"]["passes"] = 10.into();
    cfg["importance"]["n_perm"] = 5.into();
    cfg["autocorr"]["n_perm"] = 99.into();
    cfg["map"]["cell_size"] = 1500.0.into();
    cfg["sensitivity"] = serde_json::json!([{"param": "num_layers", "values": [1.0]}]);
    let scen = cfg["paths"]["scenarios"].as_array().unwrap()[..2].to_vec();
    cfg["paths"]["scenarios"] = scen.into();
    patch(&mut cfg);
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn version_and_schema_are_json() {
    let o = floodgt(&["--version"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["name"], "floodgt");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    let o = floodgt(&["--config-schema"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["fields"].as_array().unwrap().iter().any(|f| f["name"] == "paths.features"));
}

#[test]
fn usage_errors_exit_2_with_json() {
    let o = floodgt(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "usage");

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"paths": {"features": "nope.csv", "output_dir": "out"}, "factors": [{"name": "a", "kind": "continuous"}]}"#).unwrap();
    let o = floodgt(&["ingest", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["error"], "invalid_config");
    assert!(e["message"].as_str().unwrap().contains("nope.csv"));

    std::fs::write(&cfg, r#"{"paths": {}, "unexpected": 1}"#).unwrap();
    assert_eq!(floodgt(&["ingest", "-c", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn report_without_outputs_lists_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run(dir.path(), |_| {});
    let o = floodgt(&["report", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let e = stderr_json(&o);
    assert_eq!(e["message"], "missing artifacts");
    let missing: Vec<&str> = e["missing"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(missing.iter().any(|m| m.ends_with("metrics.json")));
    assert!(missing.iter().any(|m| m.ends_with("table4.csv")));

    let o = floodgt(&["train", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bad_input_data_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("f.csv"), "id,x,y,a,label\n1,0,0,1.5,0\n2,1,1,2.5,2\n").unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"paths": {"features": "f.csv", "output_dir": "out"}, "factors": [{"name": "a", "kind": "continuous"}]}"#,
    )
    .unwrap();
    let o = floodgt(&["ingest", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr_json(&o)["message"].as_str().unwrap().contains("row"));
}

#[test]
fn train_then_predict_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run(dir.path(), |_| {});
    let c = cfg.to_str().unwrap();
    for stage in ["ingest", "sample", "build-graph", "pe", "train", "predict", "metrics"] {
        let o = floodgt(&[stage, "-c", c]);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let out = dir.path().join("out");
    let preds = std::fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert!(preds.starts_with("# floodgt"));
    assert_eq!(preds.lines().count(), 2 + 240);
    let m: Value = serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(m["test"]["auc_roc"].as_f64().unwrap() > 0.8);
}

#[test]
fn rerun_is_byte_identical_and_every_file_has_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run(dir.path(), |_| {});
    let c = cfg.to_str().unwrap();
    let o = floodgt(&["all", "-c", c]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let hash = serde_json::from_slice::<Value>(&o.stdout).unwrap()["config_hash"].as_str().unwrap().to_string();
    let out = dir.path().join("out");
    let first = snapshot(&out);

    for (name, bytes) in &first {
        let text = String::from_utf8_lossy(bytes);
        let ext = name.extension().unwrap().to_str().unwrap();
        match ext {
            "csv" | "tsv" => assert!(text.lines().next().unwrap().contains(&format!("config_hash={hash}")), "{name:?}"),
            "json" => {
                let v: Value = serde_json::from_str(&text).unwrap();
                assert_eq!(v["provenance"]["config_hash"], hash.as_str(), "{name:?}");
            }
            "asc" => {
                let mut meta = name.as_os_str().to_owned();
                meta.push(".meta.json");
                assert!(first.contains_key(&PathBuf::from(meta)), "{name:?}");
            }
            other => panic!("unexpected artifact type {other}"),
        }
    }

    for stage in [
        "ingest", "sample", "build-graph", "pe", "train", "predict", "metrics", "autocorr", "krige", "classify", "importance",
        "sensitivity", "exposure", "scenario", "report",
    ] {
        let o = floodgt(&[stage, "-c", c]);
        assert!(o.status.success(), "{stage}");
    }
    let second = snapshot(&out);
    assert_eq!(first.keys().collect::<Vec<_>>(), second.keys().collect::<Vec<_>>());
    for (k, v) in &first {
        assert!(second[k] == *v, "{k:?} differs on rerun");
    }
}

#[test]
fn changing_the_training_seed_changes_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run(dir.path(), |_| {});
    let c = cfg.to_str().unwrap();
    for stage in ["ingest", "sample", "build-graph", "pe", "train"] {
        assert!(floodgt(&[stage, "-c", c]).status.success());
    }
    let out = dir.path().join("out");
    let model_a = std::fs::read(out.join("model.json")).unwrap();
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    v["model"]["seed"] = 999.into();
    std::fs::write(&cfg, v.to_string()).unwrap();
    assert!(floodgt(&["train", "-c", c]).status.success());
    assert_ne!(std::fs::read(out.join("model.json")).unwrap(), model_a);
}
