use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn helidiff(args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_helidiff"));
    cmd.args(args);
    if let Some(n) = threads {
        cmd.env("HELIDIFF_THREADS", n.to_string());
    }
    cmd.output().expect("failed to launch helidiff")
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is not JSON")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL_RUN: &str = r#"
name = "small"
operator = "antisym"
seed = 11
outputs = ["histogram", "trackers", "entropy", "grid", "comparison", "snapshots"]

[integrator]
dt = 0.01
steps = 20
snapshot_every = 10
tracker_every = 5

[solver]
kind = "both"
n = 2000
shape = [8, 8, 8]

[histogram]
shape = [8, 8, 1]
"#;

#[test]
fn classify_labels_catalog_operators() {
    let dir = tempfile::tempdir().unwrap();
    for (op, label) in [
        ("beltrami", "strong_beltrami"),
        ("grad_casimir", "poisson"),
        ("landau_lifshitz", "general_antisymmetric"),
    ] {
        let cfg = write_config(dir.path(), &format!("{op}.toml"), &format!("name = \"c\"\noperator = \"{op}\"\n"));
        let report = json(&helidiff(&["classify", &cfg, "--samples", "300"], None));
        assert_eq!(report["label"], label, "{op}");
        assert_eq!(report["n_samples"], 300);
    }
    let report = json(&helidiff(&["classify", "fig7", "--samples", "200"], None));
    assert_eq!(report["label"], "strong_beltrami");
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        "name = \"x\"\n",
        "name = \"x\"\noperator = \"no_such_operator\"\n",
        "name = \"x\"\noperator = \"beltrami\"\nunknown_key = 1\n",
        "name = \"x\"\noperator = \"beltrami\"\n[friction]\nenabled = true\nbeta = 1.0\n",
    ];
    for (i, body) in cases.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("bad{i}.toml"), body);
        let out = helidiff(&["run", &cfg, "--out", dir.path().join("o").to_str().unwrap()], None);
        assert_eq!(out.status.code(), Some(2), "case {i}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
    let out = helidiff(&["classify", "fig99"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn undefined_friction_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "beta.toml",
        r#"
name = "beta"
operator = "uniform_z"
outputs = ["trackers"]
hamiltonian = { name = "half_square" }
friction = { enabled = true, adaptive = true }
domain = { kind = "unbounded" }
init = { kind = "point", center = [0.0, 0.0, 1.0] }
integrator = { dt = 0.01, steps = 5 }
solver = { kind = "particles", n = 10 }
"#,
    );
    let out = helidiff(&["run", &cfg, "--out", dir.path().join("o").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn run_writes_hashed_artifacts_independent_of_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL_RUN);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let summary = json(&helidiff(&["run", &cfg, "--out", a.to_str().unwrap()], Some(1)));
    assert_eq!(summary["particles"]["particles"], 2000);
    assert_eq!(summary["particles"]["steps"], 20);
    json(&helidiff(&["run", &cfg, "--out", b.to_str().unwrap()], Some(4)));

    let ma = manifest(&a);
    assert_eq!(ma, manifest(&b));
    assert_eq!(ma["schema_version"], 1);
    assert_eq!(ma["seed"], 11);
    let outputs = ma["outputs"].as_array().unwrap();
    for entry in outputs {
        let path = a.join(entry["path"].as_str().unwrap());
        let bytes = fs::read(&path).unwrap();
        assert_eq!(entry["bytes"], bytes.len() as u64);
        let hex = entry["sha256"].as_str().unwrap();
        assert_eq!(hex, helidiff_core::pipeline::sha256_hex(&bytes));
    }
    let names: Vec<&str> = outputs.iter().map(|e| e["path"].as_str().unwrap()).collect();
    for want in ["config.toml", "summary.json", "particles_histogram.bin", "grid_final.bin", "grid_entropy_S.csv"] {
        assert!(names.iter().any(|n| n.ends_with(want)), "missing {want} in {names:?}");
    }
    assert!(names.iter().any(|n| n.starts_with("snapshots/")));
}

#[test]
fn overrides_change_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL_RUN);
    let out = dir.path().join("o");
    let summary = json(&helidiff(
        &["run", &cfg, "--out", out.to_str().unwrap(), "--steps", "4", "--particles", "300", "--seed", "2"],
        None,
    ));
    assert_eq!(summary["particles"]["particles"], 300);
    assert_eq!(summary["particles"]["steps"], 4);
    assert_eq!(manifest(&out)["seed"], 2);
}

#[test]
fn compare_of_a_density_with_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL_RUN);
    let out = dir.path().join("o");
    json(&helidiff(&["run", &cfg, "--out", out.to_str().unwrap()], None));
    for name in ["grid_final.bin", "particles_histogram_xy.csv"] {
        let p = out.join(name);
        let p = p.to_str().unwrap();
        let report_path = dir.path().join("cmp.json");
        let report = json(&helidiff(&["compare", p, p, "--out", report_path.to_str().unwrap()], None));
        assert_eq!(report["l1_distance"], 0.0);
        assert_eq!(report["l2_distance"], 0.0);
        assert_eq!(report["max_rel_deviation"], 0.0);
        let saved: Value = serde_json::from_slice(&fs::read(&report_path).unwrap()).unwrap();
        assert_eq!(saved, report);
    }
    let mismatch = helidiff(
        &["compare", out.join("grid_final.bin").to_str().unwrap(), out.join("particles_histogram.bin").to_str().unwrap()],
        None,
    );
    assert_eq!(mismatch.status.code(), Some(2));
}
