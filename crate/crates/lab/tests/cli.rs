use std::fs;
use std::path::Path;
use std::process::Command;

use midpoint_core::grid::{NoisePath, TimeGrid};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_midpoint-lab"))
}

const SWEEP: &str = "\
[experiment]
name = kl-order-sweep
[potential]
kind = anisotropic
spectrum = 0.5, 1
[grid]
t = 0.5
h = 1/4, 1/8
m = 4
[scheme]
name = M-LMC
[run]
n_paths = 300
seed = 11
";

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run_to(cfg: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    let o = bin()
        .arg("run")
        .arg(cfg)
        .arg("--output")
        .arg(out)
        .args(extra)
        .output()
        .unwrap();
    assert!(o.status.code().is_some(), "killed");
    o
}

#[test]
fn same_config_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sweep.cfg", SWEEP);
    let (a, b, c) = (dir.path().join("a.csv"), dir.path().join("b.csv"), dir.path().join("c.csv"));
    run_to(&cfg, &a, &[]);
    run_to(&cfg, &b, &[]);
    run_to(&cfg, &c, &["--threads", "8"]);
    let a = fs::read(a).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, fs::read(b).unwrap());
    assert_eq!(a, fs::read(c).unwrap());
}

#[test]
fn csv_has_versioned_header_and_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sweep.cfg", SWEEP);
    let out = dir.path().join("r.csv");
    let o = run_to(&cfg, &out, &["--timing"]);
    let text = fs::read_to_string(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# midpoint-lab csv v1"));
    assert_eq!(lines.next(), Some("# experiment=kl-order-sweep"));
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert!(header.starts_with("experiment,config_hash,scheme,quantity,h,d,q,m,gamma,estimate,se"));
    assert!(header.ends_with(",runtime_ms"));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("kl-order-sweep"), "{stderr}");
    // exit status follows the summary verdict
    assert_eq!(o.status.success(), stderr.lines().last().unwrap().starts_with("PASS"));
}

#[test]
fn loose_tolerance_needs_one_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "table.cfg",
        "\
[experiment]
name = complexity-table
eps = 10, 5
[potential]
kind = anisotropic
spectrum = 0.5, 1
[grid]
t = 1
m = 4
[scheme]
name = M-LMC, ULMC, DM-ULMC
",
    );
    let out = dir.path().join("t.csv");
    run_to(&cfg, &out, &[]);
    let text = fs::read_to_string(out).unwrap();
    let steps: Vec<&str> = text
        .lines()
        .filter(|l| l.contains(",path:n_steps,"))
        .collect();
    assert_eq!(steps.len(), 6, "{text}");
    for l in steps {
        assert!(l.contains(",1.0000000000000000e0,"), "{l}");
    }
}

#[test]
fn step_bound_violation_fails_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", &SWEEP.replace("0.5, 1", "4, 8"));
    let out = dir.path().join("never.csv");
    let o = run_to(&cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("h <= 1/(beta*q)"));
    assert!(!out.exists());
}

#[test]
fn dumped_path_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sweep.cfg", SWEEP);
    let out = dir.path().join("p.bin");
    let o = bin()
        .args(["dump-path", cfg.to_str().unwrap(), "--index", "3", "--output"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success());
    let back = NoisePath::read_from(&mut fs::File::open(&out).unwrap(), 0.5).unwrap();
    let grid = TimeGrid::new(0.5, 2, 4).unwrap();
    assert_eq!(back, NoisePath::sample(grid, 2, 11, 3).unwrap());
}

#[test]
fn dumped_blocks_cover_the_lower_triangle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sweep.cfg", SWEEP);
    let o = bin()
        .args(["dump-blocks", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    // N = 2 steps: blocks (0,0), (1,1), (1,0), each 8 x 8
    let heads: Vec<&str> = text.lines().filter(|l| l.starts_with("# block")).collect();
    assert_eq!(heads, ["# block 0 0 (8x8)", "# block 1 1 (8x8)", "# block 1 0 (8x8)"]);
    let rows = text.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 24);
    let first = text.lines().nth(2).unwrap();
    assert_eq!(first.split(' ').count(), 8);
}
