use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn adqc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adqc")).args(args).output().expect("binary runs")
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with("# created_unix"))
        .map(String::from)
        .collect()
}

#[test]
fn sweep_writes_csv_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let args = |p: &Path| {
        vec![
            "sweep".to_string(),
            "--rho-ab".into(),
            "0.9:0.96:2".into(),
            "--scheme".into(),
            "nec,adqc,gb".into(),
            "--b".into(),
            "2".into(),
            "--B".into(),
            "1".into(),
            "--n-design".into(),
            "5000".into(),
            "--n-eval".into(),
            "20000".into(),
            "--budget".into(),
            "40".into(),
            "--max-outer-iters".into(),
            "1".into(),
            "--out".into(),
            p.to_string_lossy().into_owned(),
        ]
    };
    for p in [&a, &b] {
        let out = Command::new(env!("CARGO_BIN_EXE_adqc")).args(args(p)).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let lines = data_lines(&a);
    assert_eq!(lines, data_lines(&b));
    let rows: Vec<_> = lines.iter().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "scheme,b,B,rho_ab,i_ab,i_ae,i_be,c_sk_low,c_ab,beta,gamma,retention,n,seed");
    assert_eq!(rows.len(), 7);
    assert!(rows[4].starts_with("ADQC-opt,2,1,0.96,"));
    assert!(rows[5].starts_with("GB,2,0,0.9,"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("plan.toml");
    fs::write(&cfg, "rho_ab = [0.85, 0.95]\nschemes = [\"nec\"]\nb = [3]\nn_eval = 1000\nseed = 5\n").unwrap();
    let out = adqc(&["sweep", "--config", cfg.to_str().unwrap(), "--b", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<_> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.starts_with("NEC-uniform,2,0,") && r.ends_with(",1000,5")));
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.toml");
    fs::write(&cfg, "schemes = []\n").unwrap();
    let out = adqc(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no schemes"));

    assert_eq!(adqc(&["sweep", "--rho-ab", "0.2", "--scheme", "nec"]).status.code(), Some(1));
    assert_eq!(adqc(&["sweep", "--bogus"]).status.code(), Some(1));
    assert_eq!(adqc(&["trace", "--n-eval", "20000"]).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_with_two() {
    let out = adqc(&["sweep", "--scheme", "nec", "--n-eval", "100", "--out", "/nonexistent-dir/x.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_points_exit_with_three() {
    // the GB guard is wider than a one-bit cell, so every point fails
    let out = adqc(&["sweep", "--scheme", "nec,gb", "--b", "3", "--guard", "2", "--rho-ab", "0.9", "--n-eval", "100"]);
    assert_eq!(out.status.code(), Some(3));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("NEC-uniform,3,0,0.9,")));
    assert!(String::from_utf8_lossy(&out.stderr).contains("failed: GB b=3 rho_ab=0.9"));
}

#[test]
fn trace_rows() {
    let out = adqc(&["trace", "--n-eval", "1", "--scheme", "adqc-uniform", "--B", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "x,y,z,sym_a,sym_b,sym_e,xi,retained");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].split(',').all(|f| !f.is_empty()));

    let out = adqc(&["trace", "--n-eval", "200", "--scheme", "gb", "--seed", "3"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.ends_with(",,,,,false")));
}

#[test]
fn optimize_persists_design() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("design");
    let out = adqc(&[
        "optimize",
        "--scheme",
        "nec-opt",
        "--b",
        "2",
        "--rho-ab",
        "0.95",
        "--n-design",
        "5000",
        "--n-eval",
        "5000",
        "--budget",
        "30",
        "--max-outer-iters",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_to_string(out_dir.join("log.jsonl")).unwrap();
    assert!(log.lines().count() >= 4);
    assert!(log.lines().all(|l| l.contains("\"half_step\"")));
    for party in ["a", "b", "e"] {
        let record = fs::read_to_string(out_dir.join(format!("quantizer_{party}.toml"))).unwrap();
        let q = adqc_core::quantizer::Quantizer::from_record(&record).unwrap();
        assert_eq!(q.levels(), 4);
    }
    assert!(fs::read_to_string(out_dir.join("result.csv")).unwrap().contains("NEC-opt,2,0,0.95,"));
}
