use std::path::Path;
use std::process::{Command, Output};

const ARTIFACTS: [&str; 7] = [
    "config.txt",
    "tree.csv",
    "path.csv",
    "ric.csv",
    "barrier.csv",
    "tracking.csv",
    "summary.csv",
];

fn safeplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_safeplan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// A quick cave run: small budget keeps the tree short.
fn quick_cave(out: &Path, seed: &str) -> Output {
    safeplan(&[
        "run",
        "cave_like",
        "--seed",
        seed,
        "--out",
        out.to_str().unwrap(),
        "--set",
        "planner.budget=6",
    ])
}

#[test]
fn bundled_single_obstacle_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = safeplan(&["run", "single_obstacle", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ARTIFACTS {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let path = read(dir.path(), "path.csv");
    assert!(path.starts_with("step,node,x,y,xdot,ydot,p_x,p_y,stance,heading_sin,heading_cos,h_min\n"));
    let last: Vec<f64> = path
        .lines()
        .last()
        .unwrap()
        .split(',')
        .skip(2)
        .take(2)
        .map(|v| v.parse().unwrap())
        .collect();
    assert!((last[0] - 15.0).hypot(last[1] - 10.0) <= 0.5);
    let summary = read(dir.path(), "summary.csv");
    assert!(summary.contains("termination,reached_goal"));
    for line in read(dir.path(), "barrier.csv").lines().skip(1) {
        let h: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(h >= -1e-4, "{line}");
    }
    let tracking = read(dir.path(), "tracking.csv");
    assert!(tracking.lines().any(|l| l.starts_with("closed_loop,")));
}

#[test]
fn negative_com_height_is_a_config_error() {
    let out = safeplan(&["run", "single_obstacle", "--set", "lip.com_height=-0.6"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lip.com_height"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let out = safeplan(&["run", "single_obstacle", "--set", "planner.radius=2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("planner.radius"));
}

#[test]
fn same_seed_gives_identical_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(quick_cave(a.path(), "7").status.code(), Some(0));
    assert_eq!(quick_cave(b.path(), "7").status.code(), Some(0));
    for name in ["path.csv", "ric.csv", "tree.csv"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
    assert!(read(a.path(), "ric.csv").lines().count() > 1);
}

#[test]
fn config_echo_reproduces_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(quick_cave(a.path(), "3").status.code(), Some(0));
    let echo = a.path().join("config.txt");
    let out = safeplan(&["run", echo.to_str().unwrap(), "--out", b.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in &ARTIFACTS[1..] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
}

#[test]
fn validate_reports_findings() {
    let out = safeplan(&["validate", "cave_like"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok"));

    let dir = tempfile::tempdir().unwrap();
    let two = dir.path().join("two.cfg");
    std::fs::write(&two, "lip.mass = -1\nbarrier.gamma = 1.5\n").unwrap();
    let out = safeplan(&["validate", two.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 2, "{stdout}");
    assert!(stdout.contains("lip.mass") && stdout.contains("barrier.gamma"));

    let missing = dir.path().join("missing.cfg");
    std::fs::write(&missing, "map.source = file\nmap.path = nowhere.occ\n").unwrap();
    let out = safeplan(&["validate", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("map.path") && stdout.contains("nowhere.occ"),
        "{stdout}"
    );
}

#[test]
fn map_file_with_listed_obstacles() {
    let dir = tempfile::tempdir().unwrap();
    let n = 40;
    let mut map = format!("OCCGRID {n} {n} 0.25 0 0\n");
    for j in 0..n {
        let row: Vec<&str> = (0..n)
            .map(|i| {
                if (18..22).contains(&i) && (10..30).contains(&j) {
                    "1"
                } else {
                    "0"
                }
            })
            .collect();
        map.push_str(&row.join(" "));
        map.push('\n');
    }
    std::fs::write(dir.path().join("wall.occ"), map).unwrap();
    let cfg = dir.path().join("wall.cfg");
    std::fs::write(
        &cfg,
        "map.source = file\nmap.path = wall.occ\nobstacles.mode = list\nobstacles.norm_p = 2\n\
         obstacles.0.center = 5, 5\nobstacles.0.radii = 0.5, 2.5\n\
         start.x = 2\nstart.y = 5\ngoal.x = 8\ngoal.y = 5\nplanner.max_samples = 3000\nplanner.seed = 1\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = safeplan(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(read(&out_dir, "summary.csv").contains("termination,reached_goal"));
}

#[test]
fn unreachable_goal_is_a_planning_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = safeplan(&[
        "run",
        "single_obstacle",
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "goal.x=10",
        "--set",
        "planner.max_samples=40",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("goal not reached"));
    assert!(dir.path().join("tree.csv").is_file());
}

#[test]
fn io_failures_exit_4() {
    assert_eq!(safeplan(&["run", "no_such_scenario"]).status.code(), Some(4));
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let out = safeplan(&["run", "single_obstacle", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
}
