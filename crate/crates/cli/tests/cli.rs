use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bearing-ntf")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn simulate_writes_every_format_with_a_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    for (name, bytes) in [("x.csv", None), ("x.wav", None), ("x.f32", Some(4 * 50_000))] {
        let out = dir.path().join(name);
        let mut args = vec!["simulate", "--out", p(&out), "--duration", "2", "--seed", "3"];
        if name.ends_with(".f32") {
            args.extend(["--format", "f32le"]);
        }
        let r = bin(&args);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        let sidecar: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join(format!("{name}.json"))).unwrap()).unwrap();
        assert_eq!(sidecar["seed"], 3);
        assert_eq!(sidecar["duration"], 2.0);
        if let Some(b) = bytes {
            assert_eq!(fs::metadata(&out).unwrap().len(), b);
        }
    }
    let csv = fs::read_to_string(dir.path().join("x.csv")).unwrap();
    assert_eq!(csv.lines().count(), 50_000);
}

fn analyze_args<'a>(input: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "analyze",
        "--input",
        input,
        "--out",
        out,
        "--segments",
        "8",
        "--iterations",
        "30",
        "--beta=-1,1",
        "--selectors",
        "ntf,kurtosis",
    ]
}

#[test]
fn analyze_is_deterministic_across_formats() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("sig.wav");
    let raw = dir.path().join("sig.f32");
    for f in [&wav, &raw] {
        let r = bin(&["simulate", "--out", p(f), "--duration", "4", "--format", if f == &wav { "wav" } else { "f32le" }]);
        assert!(r.status.success());
    }
    let out = dir.path().join("run");
    let first = bin(&analyze_args(p(&wav), p(&out)));
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let report = fs::read(out.join("report.json")).unwrap();
    let second = bin(&analyze_args(p(&wav), p(&out)));
    assert!(second.status.success());
    assert_eq!(report, fs::read(out.join("report.json")).unwrap());
    assert_eq!(first.stdout, second.stdout);

    let raw_out = dir.path().join("raw");
    let mut args = analyze_args(p(&raw), p(&raw_out));
    args.extend(["--sample-rate", "25000"]);
    assert!(bin(&args).status.success());
    let a: serde_json::Value = serde_json::from_slice(&report).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&fs::read(raw_out.join("report.json")).unwrap()).unwrap();
    assert_eq!(a["max_envsi"], b["max_envsi"]);
    assert_eq!(a["ntf"].as_array().unwrap().len(), 2);
    assert!(out.join("ntf_beta1/H.csv").is_file());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let r = bin(&["analyze", "--input", p(&missing), "--sample-rate", "1000"]);
    assert_eq!(r.status.code(), Some(3));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "0.1\n0.2\nabc\n").unwrap();
    let r = bin(&["analyze", "--input", p(&bad), "--sample-rate", "1000"]);
    assert_eq!(r.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&r.stderr).contains("line 3"));

    let r = bin(&["analyze", "--rank", "0", "--duration", "1"]);
    assert_eq!(r.status.code(), Some(2));
    let r = bin(&["analyze", "--selectors", "gini"]);
    assert_eq!(r.status.code(), Some(2));
    let r = bin(&["efficiency", "--trials", "0"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# short run\nduration = 2\nseed = 5\nsegments = 4\niterations = 10\nselectors = kurtosis\n").unwrap();
    let out = dir.path().join("run");
    let r = bin(&["analyze", "--config", p(&cfg), "--seed", "6", "--out", p(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["segments"], 4);
    assert_eq!(report["config"]["input"]["simulated"]["seed"], 6);
    assert_eq!(report["signal"]["samples"], 50_000);
    assert_eq!(report["selectors"][0]["method"], "kurtosis");
}

#[test]
fn efficiency_writes_grids() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eff");
    let r = bin(&[
        "efficiency",
        "--trials",
        "1",
        "--grid-aci",
        "0,4",
        "--grid-anci",
        "20",
        "--beta=-1",
        "--selectors",
        "kurtosis",
        "--duration",
        "2",
        "--segments",
        "6",
        "--iterations",
        "20",
        "--out",
        p(&out),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let grid: serde_json::Value = serde_json::from_slice(&fs::read(out.join("efficiency.json")).unwrap()).unwrap();
    assert_eq!(grid["methods"].as_array().unwrap().len(), 2);
    let csv = fs::read_to_string(out.join("efficiency_kurtosis.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "a_ci,20");
    assert!(csv.lines().nth(1).unwrap().starts_with("0,0"));
}
