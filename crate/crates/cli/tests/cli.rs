use std::path::Path;
use std::process::{Command, Output};

fn giicov(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_giicov"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(dir: &Path, model: &str, n: &str, seed: &str, out: &str) {
    let o = giicov(&["simulate", "--model", model, "--n", n, "--periods", "5", "--seed", seed, "--out", out], dir);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn simulate_is_deterministic_and_writes_metadata() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "model1", "30", "11", "a.csv");
    simulate(dir.path(), "model1", "30", "11", "b.csv");
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.csv")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 1 + 30 * 5);
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 11);
    assert_eq!(meta["theta0"], serde_json::json!([1.0, 0.4]));
}

#[test]
fn model3_keeps_only_the_observed_window() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "model3", "6", "2", "m3.csv");
    let text = std::fs::read_to_string(dir.path().join("m3.csv")).unwrap();
    let mut times: Vec<u32> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(times.len(), 6 * 3);
    times.sort();
    times.dedup();
    assert_eq!(times, vec![3, 4, 5]);
}

#[test]
fn uniform_dump_has_debug_columns() {
    let dir = tempfile::tempdir().unwrap();
    let o = giicov(
        &["simulate", "--model", "exp-ar", "--n", "1", "--periods", "20", "--out", "s.csv", "--dump-uniforms", "u.csv"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("u.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "i,t,r,u");
    assert_eq!(text.lines().count(), 21);
}

#[test]
fn estimate_recovers_model1_parameters() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "model1", "200", "7", "m1.csv");
    let o = giicov(
        &["estimate", "--model", "model1", "--data", "m1.csv", "--start", "1,0.4", "--seed", "3", "--out", "r.json"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("95% interval") && out.contains("iterations"));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    let theta: Vec<f64> = serde_json::from_value(r["theta"].clone()).unwrap();
    // five times the reference Monte Carlo standard deviations at n = 200
    assert!((theta[0] - 1.0).abs() < 5.0 * 0.0281, "{theta:?}");
    assert!((theta[1] - 0.4).abs() < 5.0 * 0.0419, "{theta:?}");
    assert_eq!(r["converged"], true);
}

#[test]
fn kernel_options_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "model1", "100", "4", "m1.csv");
    let o = giicov(
        &["estimate", "--model", "model1", "--data", "m1.csv", "--start", "1,0.4", "--method", "gii1", "--bandwidth", "0.08", "--out", "r.json"],
        dir.path(),
    );
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(r["method"], "gii1");
    assert_eq!(r["bandwidth"], 0.08);
    assert!(stdout(&o).contains("bandwidth   0.08"));
}

#[test]
fn malformed_data_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "unit,time,y,x1\n1,1,0,0.5\n1,2,zz,0.1\n").unwrap();
    let o = giicov(&["estimate", "--model", "model1", "--data", "bad.csv"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn wrong_shape_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "model3", "5", "1", "m3.csv");
    let o = giicov(&["estimate", "--model", "model1", "--data", "m3.csv", "--start", "1,0.4"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[design]\nmodel = \"model1\"\nn = 5\nperiods = 5\nsample_size = 4\n").unwrap();
    let o = giicov(&["mc", "--config", "c.toml", "--out-dir", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sample_size"), "{}", stderr(&o));
    let o = giicov(&["simulate", "--model", "no-such-model", "--n", "3", "--periods", "5", "--out", "x.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = giicov(&["estimate", "--data", "x.csv", "--method", "bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

const SMALL_DESIGN: &str = r#"
[design]
model = "model1"
n = 60
periods = 5
replications = 4
seed = 5

[[methods]]
method = "giicov"
reps = 5

[output]
dir = "out"
"#;

#[test]
fn mc_writes_tables_and_is_thread_invariant() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("d.toml"), SMALL_DESIGN).unwrap();
    let one = giicov(&["mc", "--config", "d.toml", "--threads", "1", "--out-dir", "t1"], dir.path());
    assert!(one.status.success(), "{}", stderr(&one));
    let two = giicov(&["mc", "--config", "d.toml", "--threads", "3", "--out-dir", "t3"], dir.path());
    assert!(two.status.success(), "{}", stderr(&two));
    let read = |p: &str| std::fs::read_to_string(dir.path().join(p)).unwrap();
    assert_eq!(read("t1/summary.csv"), read("t3/summary.csv"));
    assert_eq!(read("t1/summary.txt"), read("t3/summary.txt"));
    assert_eq!(read("t1/replications.jsonl").lines().count(), 4);
    assert!(read("t1/timing.txt").contains("mean_seconds"));
    assert!(read("t1/summary.csv").starts_with("model,n,method,param,mbias,ab,std,cv95,used,nonconverged"));

    let cmp = giicov(&["compare", "t1/summary.csv", "t3/summary.csv"], dir.path());
    assert!(cmp.status.success(), "{}", stderr(&cmp));
    let text = stdout(&cmp);
    assert_eq!(text.lines().count(), 4);
    for line in text.lines().skip(2) {
        let cells: Vec<&str> = line.split_whitespace().rev().take(2).collect();
        assert!(cells.iter().all(|c| *c == "1.00" || *c == "n/a"), "{text}");
    }
}

#[test]
fn selftest_passes_and_lists_tolerances() {
    let dir = tempfile::tempdir().unwrap();
    let o = giicov(&["selftest"], dir.path());
    assert!(o.status.success(), "{}", stdout(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 4);
    assert!(out.contains("tolerance: exact"));
}
