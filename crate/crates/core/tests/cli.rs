//! End-to-end runs of the command-line tool on tiny problems.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use spectral_partition::config::RunConfig;

const BIN: &str = env!("CARGO_BIN_EXE_spectral-partition");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(
        &path,
        format!("# tiny periodic case\nh = 2\nalpha = 1\np_max = 4\nnx = 12\nboundary = periodic\nrun_id = tiny\n{extra}"),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn eig_error_writes_a_long_table() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sub/table.csv");
    let stdout = ok(&[
        "eig-error", "--shape", "disk", "--n", "24,30", "--c", "1e3,1e4", "--kmax", "3", "--out",
        csv.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "N,C,max_rel_error,worst_k,note");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("24,1e3,"));
    assert!(stdout.contains("C=1e3"));
}

#[test]
fn optimize_writes_outputs_and_the_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("out");
    let stdout = ok(&["optimize", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(stdout.starts_with("tiny: total"));
    for ext in ["csv", "ppm", "pgm", "phases", "cfg"] {
        assert!(out.join(format!("tiny.{ext}")).exists(), "missing tiny.{ext}");
    }
    let echoed = RunConfig::load(&out.join("tiny.cfg")).unwrap();
    assert_eq!(echoed, RunConfig::load(Path::new(&cfg)).unwrap());
    let rows = fs::read_to_string(out.join("tiny.csv")).unwrap().lines().count();
    assert!((2..=6).contains(&rows));
}

#[test]
fn sequential_flag_gives_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 5\n");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["optimize", "--config", &cfg, "--out", a.to_str().unwrap()]);
    ok(&["--sequential", "optimize", "--config", &cfg, "--out", b.to_str().unwrap()]);
    assert_eq!(fs::read(a.join("tiny.csv")).unwrap(), fs::read(b.join("tiny.csv")).unwrap());
    assert_eq!(fs::read(a.join("tiny.phases")).unwrap(), fs::read(b.join("tiny.phases")).unwrap());
}

#[test]
fn init_resumes_from_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let first = dir.path().join("first");
    ok(&["optimize", "--config", &cfg, "--out", first.to_str().unwrap()]);
    let resumed = dir.path().join("resumed.cfg");
    let text = fs::read_to_string(&cfg).unwrap();
    fs::write(&resumed, format!("{text}init = {}\n", first.join("tiny.phases").display())).unwrap();
    let second = dir.path().join("second");
    ok(&["optimize", "--config", resumed.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    let last_total = |p: &Path| -> f64 {
        let text = fs::read_to_string(p).unwrap();
        text.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap()
    };
    let first_total = |p: &Path| -> f64 {
        let text = fs::read_to_string(p).unwrap();
        text.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap()
    };
    let end = last_total(&first.join("tiny.csv"));
    let start = first_total(&second.join("tiny.csv"));
    assert!((end - start).abs() <= 1e-9 * end.abs(), "{end} vs {start}");
}

#[test]
fn sweep_and_stability() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("sweep");
    let stdout = ok(&["sweep-alpha", "--config", &cfg, "--alphas", "0.5,2", "--out", out.to_str().unwrap()]);
    assert_eq!(stdout.lines().count(), 2);
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(out.join("tiny_alpha0.ppm").exists() && out.join("tiny_alpha1.ppm").exists());

    let stdout = ok(&["stability", "--config", &cfg, "--seeds", "2"]);
    assert!(stdout.contains("seed 0:") && stdout.contains("seed 1:"));
    assert!(stdout.contains("spread"));
}

#[test]
fn bad_input_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gamma = 3\n");
    let out = run(&["optimize", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 8"), "{err}");

    let cfg = write_config(dir.path(), "");
    let out = run(&["stability", "--config", &cfg, "--seeds", "1"]);
    assert!(!out.status.success());

    let out = run(&["sweep-alpha", "--config", &cfg, "--alphas", "2,1", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
}
