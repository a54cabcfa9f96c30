use std::path::Path;
use std::process::{Command, Output};

fn sgk(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgk"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SGK_THREADS")
        .output()
        .expect("sgk runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = sgk(args, cwd);
    assert!(
        out.status.success(),
        "sgk {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str], cwd: &Path) -> String {
    let out = sgk(args, cwd);
    assert!(!out.status.success(), "sgk {args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn write_points(path: &Path, n: usize) {
    let mut s = String::from("# x y\n");
    for k in 0..n {
        let t = k as f64 / n as f64;
        s.push_str(&format!("{} {}\n", (t * 7.31).fract(), (t * 3.17 + 0.05).fract()));
    }
    std::fs::write(path, s).unwrap();
}

#[test]
fn weights_report_rates() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["weights", "--dims", "1,2"], dir.path());
    assert_eq!(out.lines().count(), 3);
    assert!(out.lines().all(|l| l.contains("beta = 1.562500")), "{out}");
    let out = ok(&["weights", "--dims", "1,2,3", "--weights", "cost-benefit"], dir.path());
    assert!(out.contains("w = (33/49, 41/49, 1)"), "{out}");
    assert!(out.contains("beta = 1.041667"), "{out}");
}

#[test]
fn interpolate_eval_info_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(
        &["interpolate", "--direction", "grid,dim=1", "-J", "4", "--function", "prodexp", "--out", "run"],
        d,
    );
    assert!(out.contains("sparse-grid points N: 31"), "{out}");
    assert!(out.contains("plan entries: 1"), "{out}");
    assert!(d.join("run/run.json").exists() && d.join("run/manifest.json").exists());

    let csv = ok(&["eval", "--interpolant", "run", "--eval-grid", "5"], d);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x1,value"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let (x, v) = l.split_once(',').unwrap();
            (x.parse().unwrap(), v.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 5);
    for (x, v) in rows {
        assert!((v - x.exp()).abs() < 1e-4, "u({x}) = {v}");
    }

    let info = ok(&["info", "run"], d);
    assert!(info.contains("level: 4") && info.contains("direction 1: dim 1"), "{info}");
}

#[test]
fn two_direction_plan() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        &[
            "interpolate",
            "--direction",
            "grid,dim=1",
            "--direction",
            "grid,dim=1",
            "--weights",
            "1,1",
            "-J",
            "2",
            "--out",
            "run",
            "--dump-plan",
        ],
        dir.path(),
    );
    assert!(out.contains("plan entries: 5"), "{out}");
    assert!(out.contains("factorizations: 6"), "{out}");
    for line in ["0 2 : 1", "1 1 : 1", "2 0 : 1", "0 1 : -1", "1 0 : -1"] {
        assert!(out.lines().any(|l| l == line), "missing {line:?} in {out}");
    }
}

#[test]
fn changed_points_make_the_interpolant_stale() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_points(&d.join("pts.txt"), 120);
    ok(&["interpolate", "--points", "pts.txt", "-J", "2", "--function", "gaussian", "--out", "run"], d);
    let csv = ok(&["eval", "--interpolant", "run", "--eval-random", "3"], d);
    assert_eq!(csv.lines().next(), Some("x1,x2,value"));
    assert_eq!(csv.lines().count(), 4);
    write_points(&d.join("pts.txt"), 130);
    let err = fails(&["eval", "--interpolant", "run", "--eval-random", "3"], d);
    assert!(err.contains("stale interpolant"), "{err}");
}

#[test]
fn subsample_writes_levels_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_points(&d.join("pts.txt"), 200);
    let out = ok(&["subsample", "--points", "pts.txt", "-J", "3", "--out", "sub", "--seed", "4"], d);
    assert!(out.starts_with("level,count,q,h\n"), "{out}");
    let stats = std::fs::read_to_string(d.join("sub/stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 5);
    let mut previous = Vec::new();
    for j in 0..=3 {
        let level: Vec<usize> = std::fs::read_to_string(d.join(format!("sub/level_{j}.txt")))
            .unwrap()
            .lines()
            .map(|l| l.parse().unwrap())
            .collect();
        assert!(previous.iter().all(|i| level.contains(i)), "level {j} is not nested");
        previous = level;
    }
}

#[test]
fn convergence_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let csv = ok(
        &["convergence", "--direction", "grid,dim=1", "--direction", "grid,dim=1", "-J", "2..4"],
        d,
    );
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "J,N,error,order");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].ends_with(','));
    let errors: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{csv}");

    write_points(&d.join("pts.txt"), 100);
    let err = fails(&["convergence", "--points", "pts.txt", "-J", "1..2"], d);
    assert!(err.contains("--eval-random"), "{err}");
    let csv = ok(&["convergence", "--points", "pts.txt", "-J", "1..2", "--eval-random", "30"], d);
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn bad_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let err = fails(
        &["interpolate", "--direction", "grid,dim=1", "--kernel", "beta=1", "--kernel", "beta=2", "--out", "x"],
        d,
    );
    assert!(err.contains("--kernel"), "{err}");
    let err = fails(&["interpolate", "--direction", "grid,dim=1", "--function", "cosh", "--out", "x"], d);
    assert!(err.contains("const1"), "{err}");
    let err = fails(&["study", "no-such-study"], d);
    assert!(err.contains("fig4-analog"), "{err}");
}

#[test]
fn dump_defaults_is_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["interpolate", "--direction", "grid,dim=2", "--dump-defaults"], dir.path());
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["level"], 4);
    let out = ok(&["study", "fig1-analog", "--dump-defaults"], dir.path());
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["study"], "fig1-analog");
}

#[test]
fn small_study_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["--threads", "2", "study", "fig1-analog", "--out", "report.md"], dir.path());
    assert!(out.contains("## fig1-analog (PASS"), "{out}");
    assert!(dir.path().join("report.md").exists());
}
