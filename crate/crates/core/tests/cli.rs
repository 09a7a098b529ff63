use std::path::Path;
use std::process::Command;

use ionsim::config::Config;
use ionsim::report::{run_with_claims, ClaimStatus, parse_claims};

fn ionsim(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ionsim"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

fn small_config(dir: &Path, claims: &str) -> std::path::PathBuf {
    std::fs::write(dir.join("claims.toml"), claims).unwrap();
    let path = dir.join("small.toml");
    std::fs::write(
        &path,
        "[run]\nseed = 5\n[montecarlo]\nruns = 3\n[ionization]\ncoverage_runs = 5\n[efficiency_scan]\nvoltages_v = [2400, 3800]\n",
    )
    .unwrap();
    path
}

#[test]
fn simulate_then_calibrate() {
    let dir = tempfile::tempdir().unwrap();
    let o = ionsim(&["simulate", "--seed", "3"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sig = dir.path().join("signal.csv");
    let bg = dir.path().join("background.csv");
    let o = ionsim(
        &[
            "calibrate",
            "--signal",
            sig.to_str().unwrap(),
            "--background",
            bg.to_str().unwrap(),
            "--bin-ns",
            "1",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let j: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("calibration.json")).unwrap()).unwrap();
    let eta_i = j["efficiencies"]["eta_ion"].as_f64().unwrap();
    let sigma = j["efficiencies"]["eta_ion_sigma"].as_f64().unwrap();
    assert!((eta_i - 45099.0 / 48702.0).abs() < 5.0 * sigma);
    let hist = std::fs::read_to_string(dir.path().join("histogram.csv")).unwrap();
    assert!(hist.starts_with("bin_center_ns,counts\n"));
}

#[test]
fn fit_tof_and_scan_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["fit", "tof", "scan"] {
        let o = ionsim(&[cmd], dir.path());
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let fit: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("fit.json")).unwrap()).unwrap();
    assert!((fit["tau_ns"].as_f64().unwrap() - 64.4).abs() < 5.0);
    let tof: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("tof.json")).unwrap()).unwrap();
    assert!((tof["t_det_ns"].as_f64().unwrap() - 415.8).abs() < 0.1);
    let scan: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("scan.json")).unwrap()).unwrap();
    assert!((scan["d_containment_mm"].as_f64().unwrap() - 0.84).abs() <= 0.02);
    assert!(std::fs::read_to_string(dir.path().join("line_scan.csv")).unwrap().starts_with("position_mm,eta,sigma"));
}

#[test]
fn report_exit_code_follows_claims() {
    let dir = tempfile::tempdir().unwrap();
    let good = "[[claim]]\nid = \"eta_det\"\ncriterion = 1\nquantity = \"exact.eta_det\"\nexpected = 0.9908\ntolerance = 5e-4\nprovenance = \"exact-arithmetic\"\nanchor = \"counts\"\n";
    let cfg = small_config(dir.path(), good);
    let o = ionsim(&["report", "--config", cfg.to_str().unwrap()], &dir.path().join("ok"));
    assert!(o.status.success());

    let bad = good.replace("0.9908", "0.5");
    let cfg = small_config(dir.path(), &bad);
    let o = ionsim(&["report", "--config", cfg.to_str().unwrap()], &dir.path().join("bad"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.toml");
    std::fs::write(&path, "[montecarlo]\nfwhm = 8.5\n").unwrap();
    let o = ionsim(&["tof", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("montecarlo.fwhm"));
}

#[test]
fn empty_claim_list_gives_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Config::from_file(&small_config(dir.path(), "")).unwrap();
    let r = run_with_claims(&cfg, &parse_claims("").unwrap(), &dir.path().join("out")).unwrap();
    assert!(r.claims.is_empty());
    assert!(r.passed);
    for name in [
        "ionization_data.csv",
        "ionization_curve.csv",
        "dt_curve.csv",
        "dt_histogram.csv",
        "efficiency_vs_uacc.csv",
        "area_map.csv",
        "line_scans.csv",
        "report.json",
    ] {
        assert!(r.artifacts.iter().any(|a| a == name), "{name}");
    }
}

#[test]
fn failing_group_marks_only_its_claims() {
    let dir = tempfile::tempdir().unwrap();
    let claims = "[[claim]]\nid = \"a\"\ncriterion = 1\nquantity = \"exact.eta_det\"\nexpected = 0.9908\ntolerance = 5e-4\nprovenance = \"exact-arithmetic\"\nanchor = \"x\"\n\n[[claim]]\nid = \"b\"\ncriterion = 8\nquantity = \"scanmap.diameter_mm\"\nexpected = 0.84\ntolerance = 0.02\nprovenance = \"model-calibration\"\nanchor = \"x\"\n";
    let mut cfg = Config::from_file(&small_config(dir.path(), claims)).unwrap();
    // a line scan outside the grid fails the whole scan group
    cfg.scanmap.gain_voltages_v = vec![1000.0];
    cfg.scanmap.line_offset_mm = 50.0;
    let r = run_with_claims(&cfg, &parse_claims(claims).unwrap(), &dir.path().join("out")).unwrap();
    assert_eq!(r.claim("a").unwrap().status, ClaimStatus::Pass);
    assert_eq!(r.claim("b").unwrap().status, ClaimStatus::Error);
    assert!(!r.passed);
}
