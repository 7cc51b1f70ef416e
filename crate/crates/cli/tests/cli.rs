use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_riskpomdp"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const FAST_SOLVE: [&str; 4] = ["--belief-count", "100", "--max-iter", "60"];

fn fixture_and_policy(dir: &Path) {
    run(&["fixture", "--out-dir", p(dir)]);
    let model = dir.join("model.txt");
    run(&[
        &["solve", p(&model), "--gamma", "0.9", "--out-dir", p(dir)],
        &FAST_SOLVE[..],
    ]
    .concat());
}

#[test]
fn fixture_solve_control_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    fixture_and_policy(dir.path());
    let trace = dir.path().join("trace.csv");
    let mut child = bin()
        .args([
            "control",
            "--model",
            p(&dir.path().join("model.txt")),
            "--policy",
            p(&dir.path().join("policy-gamma-0.9.txt")),
            "--trace",
            p(&trace),
        ])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    // Observations shown in the configuration the previous action selected
    // are not known in advance, so feed the start configuration and let the
    // terminal symbol end the run.
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"m_p_on\nm_p_on\ng\nm_p_on\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let actions: Vec<String> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    // Initial action plus one per observation before g.
    assert_eq!(actions.len(), 3, "{actions:?}");
    for a in &actions {
        assert!(["manual_on", "manual_off", "auto_on", "auto_off"].contains(&a.as_str()));
    }
    let text = fs::read_to_string(&trace).unwrap();
    assert!(text.starts_with("# riskpomdp "));
    assert!(text
        .lines()
        .any(|l| l.starts_with("step,time_seconds,observation,action,beta")));
}

#[test]
fn thresholds_listed_per_configuration() {
    let dir = tempfile::tempdir().unwrap();
    fixture_and_policy(dir.path());
    let out = run(&[
        "control",
        "--model",
        p(&dir.path().join("model.txt")),
        "--policy",
        p(&dir.path().join("policy-gamma-0.9.txt")),
        "--thresholds",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in ["manual", "auto"] {
        assert!(text.contains(needle), "{text}");
    }
}

#[test]
fn malformed_model_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    run(&["fixture", "--out-dir", p(dir.path())]);
    let path = dir.path().join("model.txt");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let target = lines.iter().position(|l| l.starts_with("DISCOUNT")).unwrap();
    lines[target] = "DISCOUNT: nope";
    fs::write(&path, lines.join("\n")).unwrap();
    let out = bin()
        .args(["export", p(&path), "--format", "cassandra"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!("model.txt:{}", target + 1)), "{err}");
}

#[test]
fn cassandra_export_has_preamble() {
    let dir = tempfile::tempdir().unwrap();
    run(&["fixture", "--out-dir", p(dir.path())]);
    let out = run(&["export", p(&dir.path().join("model.txt")), "--format", "cassandra"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("discount: 0.98"), "{text}");
    assert!(text.contains("states: "));
    assert!(text.lines().any(|l| l.starts_with("T: ")));
}

#[test]
fn outputs_are_byte_identical_across_runs_and_jobs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, jobs) in [(a.path(), "1"), (b.path(), "4")] {
        run(&[
            "--seed",
            "7",
            "--jobs",
            jobs,
            "gen-batch",
            "--out",
            p(&dir.join("batch.txt")),
            "--missions",
            "60",
        ]);
        run(&["--jobs", jobs, "fixture", "--out-dir", p(dir)]);
        let (model, confusion) = (dir.join("model.txt"), dir.join("confusion.txt"));
        let args = [
            "--seed",
            "7",
            "--jobs",
            jobs,
            "select",
            "--model",
            p(&model),
            "--confusion",
            p(&confusion),
            "--gamma",
            "0.9",
            "0.98",
            "--n-models",
            "8",
            "--n-episodes",
            "20",
            "--out-dir",
            p(dir),
        ];
        run(&[&args[..], &FAST_SOLVE[..]].concat());
    }
    for name in [
        "batch.txt",
        "report.tsv",
        "report.txt",
        "selected.txt",
        "policy-gamma-0.98.txt",
    ] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn failed_selection_leaves_incomplete_marker() {
    let dir = tempfile::tempdir().unwrap();
    run(&["fixture", "--out-dir", p(dir.path())]);
    let (model, confusion) = (dir.path().join("model.txt"), dir.path().join("confusion.txt"));
    let args = [
        "select",
        "--model",
        p(&model),
        "--confusion",
        p(&confusion),
        "--gamma",
        "0.9",
        "--quantile",
        "1.5",
        "--out-dir",
        p(dir.path()),
    ];
    let out = bin().args([&args[..], &FAST_SOLVE[..]].concat()).output().unwrap();
    assert!(!out.status.success());
    assert!(dir.path().join("INCOMPLETE").exists());
    assert!(!dir.path().join("selected.txt").exists());
}

#[test]
fn unknown_observation_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fixture_and_policy(dir.path());
    let mut child = bin()
        .args([
            "control",
            "--model",
            p(&dir.path().join("model.txt")),
            "--policy",
            p(&dir.path().join("policy-gamma-0.9.txt")),
        ])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"m_maybe\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("m_maybe"));
}

#[test]
fn batch_to_model() {
    let dir = tempfile::tempdir().unwrap();
    let batch = dir.path().join("batch.txt");
    run(&[
        "--seed",
        "3",
        "gen-batch",
        "--out",
        p(&batch),
        "--missions",
        "160",
        "--participants",
        "12",
    ]);
    run(&[
        "--seed",
        "3",
        "build-model",
        p(&batch),
        "--out-dir",
        p(dir.path()),
        "--folds",
        "2",
        "--grid-point",
        "10,4,5",
        "--em-max-iter",
        "50",
        "--em-restarts",
        "1",
    ]);
    let model = fs::read_to_string(dir.path().join("model.txt")).unwrap();
    assert!(model.starts_with("# riskpomdp "));
    assert!(model.contains("STATES:"));
    let confusion = fs::read_to_string(dir.path().join("confusion.txt")).unwrap();
    assert_eq!(confusion.lines().filter(|l| l.starts_with("CONFIG")).count(), 4);
    // The learned model is a valid input for the solver.
    run(&[
        &[
            "solve",
            p(&dir.path().join("model.txt")),
            "--gamma",
            "0.9",
            "--out-dir",
            p(dir.path()),
        ],
        &FAST_SOLVE[..],
    ]
    .concat());
    assert!(dir.path().join("policy-gamma-0.9.txt").exists());
}
