use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wristsense"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn values(text: &str, prefix: &str) -> Vec<f64> {
    text.lines()
        .filter(|l| l.starts_with(prefix))
        .map(|l| {
            let mut it = l.split_whitespace().skip(1);
            let v = it.find(|t| t.parse::<f64>().is_ok()).unwrap();
            v.parse().unwrap()
        })
        .collect()
}

#[test]
fn generate_empty_and_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["generate", "-n", "0", "--out", "empty"], d.path());
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(d.path().join("empty/dataset.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("tx_mm,"));

    for dir in ["a", "b"] {
        let o = run(&["generate", "-n", "200", "--seed", "9", "--out", dir], d.path());
        assert_eq!(o.status.code(), Some(0));
    }
    let a = fs::read(d.path().join("a/dataset.csv")).unwrap();
    let b = fs::read(d.path().join("b/dataset.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        fs::read(d.path().join("a/trace.jsonl")).unwrap(),
        fs::read(d.path().join("b/trace.jsonl")).unwrap()
    );
}

#[test]
fn generate_then_calibrate_meets_band() {
    let d = tempfile::tempdir().unwrap();
    assert!(run(&["generate", "-n", "5000", "--seed", "1", "--out", "g"], d.path()).status.success());
    let o = run(&["calibrate", "g/dataset.csv", "--out", "g"], d.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let r2 = values(&out, "R2 ");
    assert_eq!(r2.len(), 7);
    assert!(r2[..6].iter().all(|r| *r >= 0.90));
    assert!(r2[6] >= 0.95);
    let fit: serde_json::Value = serde_json::from_slice(&fs::read(d.path().join("g/fit.json")).unwrap()).unwrap();
    assert_eq!(fit["k_hat"].as_array().unwrap().len(), 36);
}

#[test]
fn noiseless_calibration_prints_ones() {
    let d = tempfile::tempdir().unwrap();
    assert!(run(&["generate", "-n", "300", "--no-noise", "--out", "g"], d.path()).status.success());
    let o = run(&["calibrate", "g/dataset.csv"], d.path());
    assert!(o.status.success());
    for line in stdout(&o).lines() {
        assert!(line.ends_with("1.0000"), "{line}");
    }
}

#[test]
fn calibrate_errors_exit_two() {
    let d = tempfile::tempdir().unwrap();
    assert!(run(&["generate", "-n", "50", "--out", "g"], d.path()).status.success());
    let text = fs::read_to_string(d.path().join("g/dataset.csv")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[5] = "1,2,3,oops,5,6,7,8,9,10,11,12";
    fs::write(d.path().join("bad.csv"), lines.join("\n")).unwrap();
    let o = run(&["calibrate", "bad.csv"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 6"), "{}", stderr(&o));

    let mut deficient = String::from(lines[0]);
    for i in 0..60 {
        let z = (i as f64 - 30.0) * 0.01;
        deficient.push_str(&format!("\n0,0,{z},0,0,0,0,0,{},0,0,0", 14.0 * z));
    }
    fs::write(d.path().join("deficient.csv"), deficient).unwrap();
    let o = run(&["calibrate", "deficient.csv"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).to_lowercase().contains("rank"), "{}", stderr(&o));
}

#[test]
fn sensitivity_reports() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["sensitivity"], d.path());
    assert!(o.status.success());
    let out = stdout(&o);
    let f = values(&out, "F_");
    assert_eq!(f.len(), 6);
    assert!(f.iter().all(|v| *v > 0.0));
    assert!(f[5] < f.iter().take(5).copied().fold(f64::MAX, f64::min));

    let identity: Vec<f64> = (0..36).map(|i| if i % 7 == 0 { 1.0 } else { 0.0 }).collect();
    fs::write(d.path().join("k.json"), serde_json::to_string(&identity).unwrap()).unwrap();
    let o = run(&["sensitivity", "--stiffness", "k.json"], d.path());
    let out = stdout(&o);
    assert_eq!(values(&out, "s_"), values(&out, "F_"));

    let half = stdout(&run(&["sensitivity", "--resolution", "0.125"], d.path()));
    let full = stdout(&run(&["sensitivity", "--resolution", "0.25"], d.path()));
    let (h, w) = (values(&half, "s_"), values(&full, "s_"));
    for i in 0..6 {
        let rel = (h[i] - w[i] / 2.0).abs() / w[i];
        // rotational tilt entries go through atan, which is linear to well under print precision here
        assert!(rel < 1e-5, "component {i}: {} vs {}", h[i], w[i]);
    }
    let (h, w) = (values(&half, "F_"), values(&full, "F_"));
    for i in 0..6 {
        assert!((h[i] - w[i] / 2.0).abs() / w[i] < 1e-5);
    }

    let singular = vec![0.0; 36];
    fs::write(d.path().join("zero.json"), serde_json::to_string(&singular).unwrap()).unwrap();
    assert_eq!(run(&["sensitivity", "--stiffness", "zero.json"], d.path()).status.code(), Some(2));
}

#[test]
fn run_trials_prints_rate() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["run", "peg", "--trials", "20"], d.path());
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("20/20") && out.contains("(100.0%)"), "{out}");
}

#[test]
fn maze_batch_solves_all() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["run", "maze", "--trials", "50", "--seed", "3"], d.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("50/50"));
}

#[test]
fn run_replay_and_rerun_are_identical() {
    let d = tempfile::tempdir().unwrap();
    assert!(run(&["run", "usb", "--seed", "5", "--out", "a"], d.path()).status.success());
    assert!(run(&["run", "usb", "--seed", "5", "--out", "b"], d.path()).status.success());
    let a = fs::read(d.path().join("a/outcome.json")).unwrap();
    assert_eq!(a, fs::read(d.path().join("b/outcome.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["retries"], 1);
    let o = run(&["replay", "a/trace.jsonl", "--out", "c"], d.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("bit-exact: true"));
}

#[test]
fn mismatch_and_failure_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let screw = serde_json::json!({
        "kind": "screw",
        "screw": {
            "pitch_mm": 0.7, "head_z_mm": 0.0, "initial_turns": 0.0, "seat_turns": 3.0,
            "engagement_depth_mm": 0.7, "friction_nm": 0.0, "friction_slope_nm_per_turn": 0.0,
            "seat_stiffness_nm_per_rad": 0.0, "cross_threaded": false, "cross_binding_nm_per_rad": 1.0
        }
    });
    fs::write(d.path().join("screw.json"), screw.to_string()).unwrap();
    let o = run(&["run", "peg", "--scene", "screw.json"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("peg"));
    // free-spinning screw never tightens
    let o = run(&["run", "screw", "--scene", "screw.json"], d.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    fs::write(d.path().join("bad.json"), "{ not json").unwrap();
    assert_eq!(run(&["run", "peg", "--config", "bad.json"], d.path()).status.code(), Some(2));
    assert_eq!(run(&["run", "bogus"], d.path()).status.code(), Some(2));
}

#[test]
fn accept_prints_table() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["accept", "--out", "rep"], d.path());
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.contains(" criterion ")).count(), 8, "{out}");
    assert_eq!(o.status.code(), Some(if out.contains("FAIL") { 1 } else { 0 }));
    assert!(d.path().join("rep/acceptance.json").exists());
}
