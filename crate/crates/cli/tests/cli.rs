use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tvsdp::scenario::{perf_index, read_csv};
use tvsdp::SymMat;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn tvsdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvsdp"))
        .args(args)
        .env_remove("TVSDP_SOLVER_VERBOSE")
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_csv_whose_j_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("pendulum.toml");
    let out = tvsdp(&["run", "--config", path_str(&cfg), "--out", path_str(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let j: f64 = stdout
        .split_whitespace()
        .find_map(|w| w.strip_prefix("J="))
        .unwrap()
        .parse()
        .unwrap();

    let csv = dir.path().join("pendulum_online_sdp.csv");
    let header = fs::read_to_string(&csv).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "t,x1,x2,u1,V,gamma,status");
    let back = read_csv(&csv).unwrap();
    assert_eq!(back.states.len(), 100);
    let jr = perf_index(&back.states, &back.inputs, &SymMat::identity(2), &SymMat::identity(1), 100).unwrap();
    assert!((jr - j).abs() <= 1e-9 * j.abs());
}

#[test]
fn overrides_and_json_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("jet.toml");
    let out = tvsdp(&[
        "run", "--config", path_str(&cfg), "--out", path_str(dir.path()),
        "--scenario", "online_lq", "--x0", "0.5,-0.2,0.1", "--format", "json",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("jet_online_lq.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["scenario"], "online_lq");
    assert_eq!(v["config"]["x0"]["values"][1], -0.2);
    assert_eq!(v["states"][0][0], 0.5);
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[plant]\nkind = \"jet\"\n[x0]\nvalues = [1.0]\n").unwrap();
    let out = tvsdp(&["run", "--config", path_str(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("x0 has 1 components"));

    fs::write(&bad, "[plant]\nkind = \"rocket\"\n[x0]\nseed = 1\n").unwrap();
    assert_eq!(tvsdp(&["run", "--config", path_str(&bad)]).status.code(), Some(2));

    let missing = dir.path().join("missing.toml");
    let out = tvsdp(&["run", "--config", path_str(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.toml"));
}

#[test]
fn infeasibility_is_data() {
    // A(0) of the jet model is not stabilizable, so the LQR baseline has no gain
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("jet.toml");
    let out = tvsdp(&["run", "--config", path_str(&cfg), "--out", path_str(dir.path()), "--scenario", "lti_lqr"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("not stabilizable"));
}

#[test]
fn sweep_is_reproducible() {
    let cfg = configs().join("custom.toml");
    let mut bytes = Vec::new();
    for workers in ["1", "3"] {
        let dir = tempfile::tempdir().unwrap();
        let out = tvsdp(&[
            "sweep", "--config", path_str(&cfg), "--runs", "6", "--workers", workers, "--out", path_str(dir.path()),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(dir.path().join("custom_online_sdp_run0005.csv").exists());
        bytes.push(fs::read(dir.path().join("custom_online_sdp_sweep.json")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn certify_offline_writes_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("pendulum_offline.toml");
    let out = tvsdp(&["certify-offline", "--config", path_str(&cfg), "--out", path_str(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("certified:"));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("pendulum_offline.json")).unwrap()).unwrap();
    assert_eq!(v["outcome"]["outcome"], "certified");
    assert_eq!(v["violations"], 0);
}

#[test]
fn shipped_configs_parse() {
    for entry in fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        tvsdp::ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}
