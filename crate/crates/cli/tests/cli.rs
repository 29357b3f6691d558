use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lpwan-energy"))
}

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

fn run(args: &[&str]) -> Output {
    bin()
        .env_remove("LPWAN_ENERGY_CALIBRATION")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn golden(name: &str) -> String {
    fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("tests/golden")
            .join(name),
    )
    .unwrap()
}

#[test]
fn airtime_examples() {
    let o = run(&[
        "airtime",
        "--sf",
        "7",
        "--bw",
        "125000",
        "--cr",
        "1",
        "--payload",
        "12",
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), golden("airtime_sf7_12.txt"));
    let o = run(&["airtime", "--sf", "12", "--payload", "51"]);
    assert!(stdout(&o).contains("2465.792 ms"));
}

#[test]
fn airtime_usage_and_validation_errors() {
    let o = run(&["airtime", "--payload", "12"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = run(&["airtime", "--sf", "6", "--payload", "12"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["airtime", "--sf", "12", "--payload", "52"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn table1_golden() {
    let o = run(&["table1"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), golden("table1.txt"));
}

fn perturbed_calibration(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(repo("crates/core/data/table1_calibration.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    for row in v["rows"].as_array_mut().unwrap() {
        row["rx2_ack"] = serde_json::json!(5.7);
    }
    let path = dir.join("perturbed.json");
    fs::write(&path, v.to_string()).unwrap();
    path
}

#[test]
fn table1_flags_perturbed_rx2() {
    let dir = tempfile::tempdir().unwrap();
    let path = perturbed_calibration(dir.path());
    let by_flag = run(&["table1", "--calibration", path.to_str().unwrap()]);
    let by_env = bin()
        .env("LPWAN_ENERGY_CALIBRATION", &path)
        .arg("table1")
        .output()
        .unwrap();
    assert_eq!(stdout(&by_flag), stdout(&by_env));
    let text = stdout(&by_flag);
    let rows: Vec<&str> = text.lines().skip(1).take(6).collect();
    for row in &rows {
        let cols: Vec<&str> = row.split_whitespace().collect();
        assert!(cols[5].ends_with('*'), "{row}");
    }
    assert!(text.contains("mismatch"));

    let check = run(&["calibrate-check", "--calibration", path.to_str().unwrap()]);
    assert_eq!(check.status.code(), Some(1));
    assert!(run(&["calibrate-check"]).status.success());
}

#[test]
fn table1_missing_calibration() {
    let o = run(&["table1", "--calibration", "/nonexistent/cal.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_writes_reports_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = repo("scenarios/batch-10.json");
    let mut reports = Vec::new();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        let o = run(&[
            "simulate",
            "--scenario",
            scenario.to_str().unwrap(),
            "--seed",
            "5",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        let line = stdout(&o);
        assert!(
            line.contains("lifetime") && line.contains("average current"),
            "{line}"
        );
        assert!(out.join("events.csv").exists());
        reports.push(fs::read(out.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let csv = fs::read_to_string(dir.path().join("a/events.csv")).unwrap();
    assert!(csv.starts_with("t_us,state,duration_us,energy_nJ,detail\n"));
}

#[test]
fn simulate_csv_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "simulate",
        "--scenario",
        repo("scenarios/batch-1.json").to_str().unwrap(),
        "--format",
        "csv",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(dir.path().join("events.csv").exists());
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn simulate_seed_range() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.json");
    fs::write(
        &scenario,
        r#"{"version": 1, "duration_s": 86400,
            "sensing": {"mode": "interrupt", "event_rate_per_hour": 4, "wake_duration_s": 0.01}}"#,
    )
    .unwrap();
    let o = run(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--seeds",
        "1..5",
        "--format",
        "json",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 4);
    let single = dir.path().join("single");
    run(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--seed",
        "3",
        "--format",
        "json",
        "--out",
        single.to_str().unwrap(),
    ]);
    assert_eq!(
        fs::read(dir.path().join("seed-3/report.json")).unwrap(),
        fs::read(single.join("report.json")).unwrap()
    );
}

#[test]
fn simulate_rejects_bad_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("bad.json");
    fs::write(
        &scenario,
        r#"{"version": 1, "duration_s": 60, "sensing": {"mode": "poll", "period_s": 1, "sample_s": 0.01}}"#,
    )
    .unwrap();
    let o = run(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sample_s"));

    fs::write(
        &scenario,
        r#"{"version": 9, "duration_s": 60, "sensing": {"mode": "poll", "period_s": 1, "sample_duration_s": 0.01}}"#,
    )
    .unwrap();
    let o = run(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("version"));

    let o = run(&["simulate", "--scenario", "/nonexistent.json"]);
    assert_eq!(o.status.code(), Some(1));
}

fn compare(a: &str, b: &str) -> String {
    let o = run(&[
        "compare",
        "--scenario",
        repo(a).to_str().unwrap(),
        "--scenario",
        repo(b).to_str().unwrap(),
        "--seed",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

fn row(text: &str, name: &str) -> Vec<f64> {
    let line = text.lines().find(|l| l.starts_with(name)).unwrap();
    line[name.len()..]
        .split_whitespace()
        .map(|x| x.parse().unwrap())
        .collect()
}

fn ratio(text: &str) -> f64 {
    text.lines()
        .last()
        .unwrap()
        .rsplit(' ')
        .next()
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn compare_identical_and_batched() {
    let same = compare("scenarios/batch-1.json", "scenarios/batch-1.json");
    assert!(same.trim_end().ends_with("1.000"), "{same}");
    let batched = compare("scenarios/batch-1.json", "scenarios/batch-10.json");
    let energy = row(&batched, "total energy [J]");
    assert!(energy[1] < energy[0]);
    let shares: f64 = ["sleep", "sense", "process", "tx", "rx"]
        .iter()
        .map(|s| row(&batched, &format!("{s} share [%]"))[0])
        .sum();
    assert!((shares - 100.0).abs() < 0.05);
}

#[test]
fn compare_reference_pair() {
    let text = compare("scenarios/poll-1hz.json", "scenarios/sleepy-interrupt.json");
    assert!(ratio(&text) >= 10.0, "{text}");
}

#[test]
fn compare_needs_two() {
    let o = run(&[
        "compare",
        "--scenario",
        repo("scenarios/batch-1.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn per_bit_export() {
    let o = run(&["per-bit"]);
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("dr,sf,payload_bytes,time_on_air_ms,energy_per_bit_uJ")
    );
    assert_eq!(lines.count(), 6 * 51);
    assert!(text.contains("\n5,7,12,41.216,"));
}

#[test]
fn version_lists_schemas() {
    let o = run(&["--version"]);
    let text = stdout(&o);
    assert!(
        text.contains("1.0.0") && text.contains("scenario schema 1"),
        "{text}"
    );
}
