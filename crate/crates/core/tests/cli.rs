use std::path::Path;
use std::process::{Command, Output};
use willmore_lab::config::{MetricConfig, RunConfig};
use willmore_lab::reduction::{ScanBox, ScanSpec};

fn small(mut c: RunConfig) -> RunConfig {
    c.grid.n_theta = 16;
    c.grid.l_max = 10;
    c.scan = ScanSpec {
        bounds: ScanBox { lo: [-3.0; 3], hi: [3.0; 3] },
        rho_min: 0.5,
        rho_max: 2.5,
        n_p: 5,
        n_rho: 4,
        refine_tol: 1e-2,
    };
    c
}

fn flat() -> RunConfig {
    RunConfig { metric: MetricConfig::Flat, ..RunConfig::default() }
}

fn run(dir: &Path, cfg: &str, args: &[&str]) -> Output {
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg).unwrap();
    Command::new(env!("CARGO_BIN_EXE_willmore-lab"))
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir)
        .args(args)
        .env_remove("WILLMORE_LAB_THREADS")
        .output()
        .unwrap()
}

#[test]
fn curvature_of_flat_config_is_zero() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &flat().to_toml(), &["curvature", "--point", "0.1,-0.2,0.3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["max_abs_riemann"], 0.0);
    assert_eq!(v["s_norm2"], 0.0);
}

#[test]
fn curvature_at_bump_centre_reports_s_tilde() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &RunConfig::default().to_toml(), &["curvature", "--point", "0,0,0"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["s_tilde"].as_f64().unwrap() > 0.0);
    assert_eq!(v["invariants_ok"], true);
}

#[test]
fn malformed_configs_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let neg = RunConfig::default().to_toml().replace("sigma = 1.0", "sigma = -1.0");
    let o = run(d.path(), &neg, &["curvature", "--point", "0,0,0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sigma"));
    let unknown = RunConfig::default().to_toml() + "\nextra_key = 1\n";
    assert_eq!(run(d.path(), &unknown, &["surface"]).status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_willmore-lab"))
        .args(["--config", "/nonexistent/run.toml", "surface"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn single_surface_subcommands() {
    let d = tempfile::tempdir().unwrap();
    let mut c = small(RunConfig::default());
    c.epsilons = vec![0.02, 0.01, 0.005];
    let text = c.to_toml();
    for sub in ["surface", "willmore", "solve-w"] {
        let o = run(d.path(), &text, &[sub]);
        assert_eq!(o.status.code(), Some(0), "{sub}: {}", String::from_utf8_lossy(&o.stderr));
        let _: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    }
    let v: serde_json::Value = serde_json::from_slice(&run(d.path(), &text, &["willmore"]).stdout).unwrap();
    assert!(v["epsilon_fit"]["g1"].as_f64().unwrap().abs() < 1e-6);
}

#[test]
fn flat_scan_expecting_a_maximum_exits_3() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &small(flat()).to_toml(), &["scan", "--expect-max"]);
    assert_eq!(o.status.code(), Some(3));
    let csv = std::fs::read_to_string(d.path().join("scan.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5 * 5 * 5 * 4 + 1);
}

#[test]
fn bump_scan_finds_a_maximum_and_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let text = small(RunConfig::default()).to_toml();
    let o = run(d.path(), &text, &["--threads", "1", "scan", "--expect-max"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read(d.path().join("scan.csv")).unwrap();
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("scan.json")).unwrap()).unwrap();
    assert!(json["interior_maxima"].as_u64().unwrap() >= 1);
    assert_eq!(String::from_utf8_lossy(&csv).lines().count(), 5 * 5 * 5 * 4 + 1);

    let d2 = tempfile::tempdir().unwrap();
    run(d2.path(), &text, &["--threads", "1", "scan"]);
    assert_eq!(csv, std::fs::read(d2.path().join("scan.csv")).unwrap());

    let d3 = tempfile::tempdir().unwrap();
    run(d3.path(), &text, &["--threads", "2", "scan"]);
    let other = std::fs::read_to_string(d3.path().join("scan.csv")).unwrap();
    for (a, b) in String::from_utf8_lossy(&csv).lines().zip(other.lines()).skip(1) {
        let (fa, fb) = (a.split(',').nth(4).unwrap(), b.split(',').nth(4).unwrap());
        let (x, y): (f64, f64) = (fa.parse().unwrap(), fb.parse().unwrap());
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn verify_subset_and_skips() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &RunConfig::default().to_toml(), &["verify", "--only", "1,2,3"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(v["checks"].as_array().unwrap().len(), 3);
    let o = run(d.path(), &flat().to_toml(), &["verify", "--only", "5,6,10"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&o.stdout).matches("[SKIP]").count(), 3);
}

#[test]
fn invariance_subcommand() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &RunConfig::default().to_toml(), &["--seed", "3", "invariance", "--pairs", "4"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(d.path().join("invariance.json").exists());
}
