use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lorenz-atlas"));
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("LORENZ_ATLAS_")) {
        c.env_remove(k);
    }
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// CSV rows of an output, without comment lines and the column header.
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn verdict_at_reference_point() {
    let o = run(&["verdict", "--alpha", "0.4", "--lambda", "0.9"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = rows(&stdout(&o));
    assert_eq!(r.len(), 1);
    assert_eq!(r[0][6], "LorenzAttractor");
}

#[test]
fn modelmap_curves_contains_l2() {
    let o = run(&["modelmap-curves", "--A", "0.63", "--nu", "0.8"]);
    assert!(o.status.success());
    let r = rows(&stdout(&o));
    let l2 = r.iter().find(|r| r[0] == "l2").expect("l2 row");
    let mu: f64 = l2[1].parse().unwrap();
    assert_eq!(format!("{mu:.7}"), "0.0992437");
}

#[test]
fn unknown_flag_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v.csv");
    let o = run(&["verdict", "--no-such-key", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
    assert!(!out.exists());
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["kneading", "--alpha"]).status.code(), Some(2));
    assert_eq!(run(&["kneading", "--alpha", "abc"]).status.code(), Some(2));
    assert_eq!(run(&["map1d", "--side", "left"]).status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_3_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let o = run(&["simulate", "--lambda", "-1", "--t_end", "100", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!out.exists());
}

#[test]
fn header_carries_version_and_hash() {
    let o = run(&["kneading", "--lambda", "1.1"]);
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), format!("# lorenz-atlas {}", env!("CARGO_PKG_VERSION")));
    let h = lines.next().unwrap().strip_prefix("# config_hash ").unwrap().to_string();
    assert_eq!(h.len(), 64);
    assert!(text.contains("# lambda = 1.1"));
}

#[test]
fn same_config_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "# map data\nalpha = 0.4\nlambda = 0.9\nn_pairs = 300\n").unwrap();
    for out in [&a, &b] {
        let o = run(&["map1d", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let flags = run(&["map1d", "--alpha", "0.4", "--lambda", "0.9", "--n_pairs", "300", "--out", a.to_str().unwrap()]);
    assert!(flags.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), ta);
}

#[test]
fn environment_overrides_file_and_flags_override_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("k.conf");
    std::fs::write(&cfg, "lambda = 1.0\n").unwrap();
    let c = cfg.to_str().unwrap();
    let o = bin().args(["kneading", "--config", c]).env("LORENZ_ATLAS_LAMBDA", "1.1").output().unwrap();
    assert!(stdout(&o).contains("# lambda = 1.1"));
    let o = bin().args(["kneading", "--config", c, "--lambda=1.2"]).env("LORENZ_ATLAS_LAMBDA", "1.1").output().unwrap();
    assert!(stdout(&o).contains("# lambda = 1.2"));
    let o = bin().args(["kneading"]).env("LORENZ_ATLAS_NOT_A_KEY", "1").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

fn chart_args<'a>(ckpt: &'a Path, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["chart", "--preset", "fig6b", "--n", "6", "--batch", "5", "--checkpoint", ckpt.to_str().unwrap()];
    v.extend_from_slice(extra);
    v
}

#[test]
fn chart_resume_matches_single_run() {
    let dir = tempfile::tempdir().unwrap();
    let full = run(&chart_args(&dir.path().join("full.ckpt"), &[]));
    assert!(full.status.success());
    let part = dir.path().join("part.ckpt");
    let first = run(&chart_args(&part, &["--stop_after", "13"]));
    assert!(first.status.success());
    assert!(rows(&stdout(&first)).iter().any(|r| r[3] == "pending"));
    let resumed = run(&chart_args(&part, &[]));
    let body = |o: &Output| stdout(o).lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&full), body(&resumed));
    assert!(rows(&stdout(&resumed)).iter().all(|r| r[3] == "ok"));
}

#[test]
fn bisect_and_trace_subcommands() {
    let o = run(&["bisect-homoclinic", "--tol", "1e-4"]);
    assert!(o.status.success());
    let lambda: f64 = rows(&stdout(&o))[0][1].parse().unwrap();
    assert!((lambda - 1.2054).abs() < 1e-3, "{lambda}");
    let o = run(&["bisect-homoclinic", "--lambda_a", "1.1", "--lambda_b", "1.12"]);
    assert_eq!(o.status.code(), Some(3));
}
