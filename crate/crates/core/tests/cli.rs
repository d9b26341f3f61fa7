use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dbnapprox::harness::read_rate_summary;

const RATE: &str = "\
# q = 2 rate table
[experiment]
name = rate
kind = rate
seed = 17

[target]
kind = standard_normal

[parent]
kind = gaussian

[run]
q = 2
sigma = 0.1
m_values = 4, 16, 64, 256
trials = 50

[quadrature]
lo = -8
hi = 8
points = 64
";

fn dbnapprox(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dbnapprox"));
    c.args(args).env_remove("DBNAPPROX_THREADS");
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run_rate(cfg: &Path, out: &Path, extra: &[&str], envs: &[(&str, &str)]) -> String {
    let mut args = vec![
        "rate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let o = dbnapprox(&args, envs);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::read_to_string(out.join("rate.csv")).unwrap()
}

#[test]
fn rate_table_shape_and_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "rate.cfg", RATE);
    let a = run_rate(&cfg, &dir.path().join("a"), &["--threads", "1"], &[]);
    let b = run_rate(&cfg, &dir.path().join("b"), &[], &[("DBNAPPROX_THREADS", "3")]);
    assert_eq!(a, b);

    let lines: Vec<&str> = a.lines().collect();
    assert!(lines[0].starts_with("# dbnapprox-csv v1 experiment=rate config="));
    let rows = &lines[2..];
    assert_eq!(
        rows.iter().filter(|l| l.split(',').nth(1) == Some("trial")).count(),
        200
    );
    assert_eq!(
        rows.iter().filter(|l| l.split(',').nth(1) == Some("summary")).count(),
        4
    );
    let hash = lines[0].rsplit("config=").next().unwrap();
    assert!(rows.iter().all(|l| l.starts_with(hash)));
    // sorted by (m, trial), summary last within each m
    let keys: Vec<(usize, usize)> = rows
        .iter()
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[2].parse().unwrap(), c[3].parse().unwrap_or(usize::MAX))
        })
        .collect();
    assert!(keys.windows(2).all(|w| w[0] < w[1]));
    assert!(!a.contains('\r'));

    let summary = read_rate_summary(&a).unwrap();
    assert_eq!(summary.points.len(), 4);
    let gp = std::fs::read_to_string(dir.path().join("a/rate.gp")).unwrap();
    assert!(gp.contains("slope = -0.5\n"));
    assert!(dir.path().join("a/rate.fit.csv").exists());
}

#[test]
fn seed_override_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let text = RATE.replace(
        "m_values = 4, 16, 64, 256\ntrials = 50",
        "m_values = 4, 8, 16\ntrials = 10",
    );
    let cfg = write_config(dir.path(), "rate.cfg", &text);
    let a = run_rate(&cfg, &dir.path().join("a"), &[], &[]);
    let b = run_rate(&cfg, &dir.path().join("b"), &["--seed", "99"], &[]);
    assert_ne!(a.lines().next(), b.lines().next());
    assert_ne!(a.lines().nth(2), b.lines().nth(2));
}

#[test]
fn malformed_config_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "bad.cfg", &RATE.replace("trials = 50", "trials = fifty"));
    let o = dbnapprox(
        &[
            "rate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 17"));
    assert!(!out.exists() || std::fs::read_dir(&out).unwrap().next().is_none());

    let wrong = write_config(dir.path(), "rate.cfg", RATE);
    let o = dbnapprox(
        &[
            "norms",
            "--config",
            wrong.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(!o.status.success());
    assert!(!out.exists() || std::fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn failed_trials_are_rows_not_aborts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.cfg",
        "[experiment]\nname = s\nseed = 1\n[run]\nm_values = 2, 3\ntrials = 2\ntolerance = 1e-300\n",
    );
    let out = dir.path().join("out");
    let o = dbnapprox(
        &[
            "synthesize-rbm",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success());
    let csv = std::fs::read_to_string(out.join("s.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.contains(",failed: ")).count(), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("4 rows recorded as failed"));
}

#[test]
fn approximate_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let approx = write_config(
        dir.path(),
        "a.cfg",
        "[experiment]\nname = a\nseed = 2\n[target]\nkind = standard_normal\n[parent]\nkind = gaussian\n[run]\nq = 2\nm = 8\nepsilon = 0.3\n[quadrature]\nlo = -8\nhi = 8\npoints = 48\n",
    );
    let o = dbnapprox(
        &[
            "approximate",
            "--config",
            approx.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cert = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert!(cert.lines().nth(2).unwrap().contains(",true,"));

    let eval = write_config(
        dir.path(),
        "e.cfg",
        "[experiment]\nname = e\nseed = 3\n[run]\nmodel = a.dbn\npoints = 0; 1\nsamples = 3\n",
    );
    let o = dbnapprox(
        &[
            "eval",
            "--config",
            eval.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("e.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 2 + 3);
}
