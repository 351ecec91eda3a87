use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use xdiff::harness::output::SERIES_HEADER;

fn workdir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn xdiff(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_xdiff"));
    cmd.args(args).env_remove("XDIFF_SEED");
    if let Some(s) = seed {
        cmd.env("XDIFF_SEED", s);
    }
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn shipped(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_str()
        .unwrap()
        .to_owned()
}

#[test]
fn run_writes_expected_rows() {
    let dir = workdir("rows");
    let out = dir.join("out");
    let o = xdiff(
        &[
            "run",
            "--config",
            &shipped("muskat.toml"),
            "--out",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("series.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(SERIES_HEADER));
    // t_end = 0.1, output_stride = 0.002
    assert_eq!(lines.count(), 51);
    let report = std::fs::read_to_string(out.join("report.json")).unwrap();
    assert!(report.contains("\"passed\": true"));
    assert!(out.join("config.toml").exists());
}

#[test]
fn missing_config_is_usage_error() {
    assert_eq!(xdiff(&["run"], None).status.code(), Some(2));
    assert_eq!(
        xdiff(&["run", "--config", "/nonexistent/x.toml"], None).status.code(),
        Some(2)
    );
    assert_eq!(xdiff(&[], None).status.code(), Some(2));
    assert_eq!(xdiff(&["frobnicate", "--config", "x"], None).status.code(), Some(2));
}

#[test]
fn syntax_errors_are_usage_errors() {
    let dir = workdir("syntax");
    let bad = write(&dir, "bad.toml", "a = = 1\n");
    assert_eq!(xdiff(&["run", "--config", &bad], None).status.code(), Some(2));
    let unknown = write(&dir, "unknown.toml", "alpha = 1.0\n");
    assert_eq!(xdiff(&["run", "--config", &unknown], None).status.code(), Some(2));
    let kind = write(&dir, "kind.toml", "kind = \"gronwall\"\n");
    assert_eq!(xdiff(&["run", "--config", &kind], None).status.code(), Some(2));
    let seed = write(&dir, "seed.toml", "t_end = 0.0\n");
    assert_eq!(xdiff(&["run", "--config", &seed], Some("many")).status.code(), Some(2));
}

#[test]
fn degenerate_parameters_name_the_constraint() {
    let dir = workdir("condabcd");
    let cfg = write(&dir, "c.toml", "a = 1.0\nb = 2.0\nc = 1.0\nd = 2.0\n");
    let o = xdiff(
        &["run", "--config", &cfg, "--out", dir.join("o").to_str().unwrap()],
        None,
    );
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("condabcd") && err.contains("model"), "{err}");
}

#[test]
fn semantic_errors_exit_one() {
    let dir = workdir("semantic");
    let cfg = write(&dir, "c.toml", "dt = -1.0\n");
    let o = xdiff(&["run", "--config", &cfg], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("solver"));

    let pme = write(&dir, "pme.toml", "t_end = 40.0\n");
    let o = xdiff(
        &["pme", "--config", &pme, "--out", dir.join("o").to_str().unwrap()],
        None,
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pme_validation"));
}

#[test]
fn seeded_runs_are_byte_identical() {
    let dir = workdir("determinism");
    let cfg = write(
        &dir,
        "r.toml",
        "initial = \"random\"\nn_cells = 64\nt_end = 0.04\noutput_stride = 0.004\n",
    );
    let go = |sub: &str, seed: Option<&str>| {
        let out = dir.join(sub);
        let o = xdiff(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], seed);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out.join("series.csv")).unwrap()
    };
    let a = go("a", None);
    assert_eq!(a, go("b", None));
    assert_eq!(a, go("c", Some("42")));
    assert_ne!(a, go("d", Some("43")));
    let echo = std::fs::read_to_string(dir.join("d").join("config.toml")).unwrap();
    assert!(echo.lines().any(|l| l == "seed = 43"), "{echo}");
}

#[test]
fn invariants_report_hash_is_reproducible() {
    let dir = workdir("invariants");
    let cfg = write(
        &dir,
        "i.toml",
        "pointwise_samples = 2000\nstate_pairs = 20\nsolver_runs = 5\nsolver_steps = 20\n",
    );
    let digest = |sub: &str| {
        let out = dir.join(sub);
        let o = xdiff(&["invariants", "--config", &cfg, "--out", out.to_str().unwrap()], None);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        v["digest"].as_str().unwrap().to_owned()
    };
    assert_eq!(digest("a"), digest("b"));
}

#[test]
fn every_shipped_config_succeeds() {
    let dir = workdir("shipped");
    for (sub, name) in [
        ("run", "near_degenerate.toml"),
        ("gronwall", "gronwall.toml"),
        ("pme", "pme.toml"),
        ("convergence", "convergence.toml"),
    ] {
        let out = dir.join(sub);
        let o = xdiff(&[sub, "--config", &shipped(name), "--out", out.to_str().unwrap()], None);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{sub}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let pme = std::fs::read_dir(dir.join("pme")).unwrap().count();
    // series.csv, three per-level series, report.json, config.toml
    assert_eq!(pme, 6);
}
