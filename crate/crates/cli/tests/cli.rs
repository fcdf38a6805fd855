use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_intervene");

fn repo(path: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(path)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(args: &[&str], code: i32) -> String {
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

/// Single trigger at step 0 with a uniform critic.
fn single_trigger(p_fail: f64, recovery: f64, disruption: f64) -> String {
    format!(
        r#"[agent]
p_fail = {p_fail}

[critic]
kind = "beta"
fail_alpha = 1.0
fail_beta = 1.0
succeed_alpha = 1.0
succeed_beta = 1.0

[mechanism]
kind = "rollback"
recovery_prob = {recovery}
disruption_prob = {disruption}

[policy]
kind = "threshold"
tau = 0.0
intervention_budget = 1
"#
    )
}

fn logit_normal(overconfidence: f64) -> String {
    format!(
        r#"[agent]
p_fail = 0.5

[critic]
kind = "logit_normal"
separation = 0.2
overconfidence = {overconfidence}

[mechanism]
kind = "none"
recovery_prob = 0.0
disruption_prob = 0.0

[policy]
kind = "threshold"
"#
    )
}

fn simulate(dir: &TempDir, config: &Path, name: &str, tasks: usize, seeds: usize, seed: u64) -> PathBuf {
    let out = dir.path().join(name);
    ok(&[
        "simulate",
        s(config),
        "--tasks",
        &tasks.to_string(),
        "--seeds",
        &seeds.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(&out),
    ]);
    out
}

fn summary_json(stdout: &str) -> Value {
    let (_, json) = stdout.split_once("--- summary (json) ---").expect("summary block");
    serde_json::from_str(json).unwrap()
}

fn number_after<'a>(text: &'a str, key: &str) -> f64 {
    let rest = &text[text.find(key).unwrap_or_else(|| panic!("{key} missing in {text}")) + key.len()..];
    let token: String = rest
        .trim_start()
        .chars()
        .take_while(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+'))
        .collect();
    token
        .parse()
        .unwrap_or_else(|_| panic!("no number after {key}: {rest}"))
}

#[test]
fn simulate_writes_two_lines_per_unit() {
    let dir = TempDir::new().unwrap();
    let log = simulate(&dir, &repo("configs/minimal.toml"), "a.jsonl", 10, 3, 0);
    assert_eq!(fs::read_to_string(log).unwrap().lines().count(), 60);
}

#[test]
fn repeated_invocations_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let config = repo("configs/calibrated_rollback.toml");
    let a = simulate(&dir, &config, "a.jsonl", 200, 2, 9);
    let b = simulate(&dir, &config, "b.jsonl", 200, 2, 9);
    let c = dir.path().join("c.jsonl");
    let serial_stdout = ok(&[
        "--serial",
        "simulate",
        s(&config),
        "--tasks",
        "200",
        "--seeds",
        "2",
        "--seed",
        "9",
        "--out",
        s(&c),
    ]);
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    assert_eq!(bytes, fs::read(&c).unwrap());
    let parallel_stdout = ok(&[
        "simulate",
        s(&config),
        "--tasks",
        "200",
        "--seeds",
        "2",
        "--seed",
        "9",
        "--out",
        s(&b),
    ]);
    assert_eq!(serial_stdout, parallel_stdout);

    let report = |serial: bool, csv: &Path| {
        let mut args = vec![
            "report",
            s(&a),
            "--bootstrap-iters",
            "2000",
            "--seed",
            "4",
            "--csv",
            s(csv),
        ];
        if serial {
            args.insert(0, "--serial");
        }
        (ok(&args), fs::read(csv).unwrap())
    };
    let first = report(false, &dir.path().join("1.csv"));
    assert_eq!(first, report(false, &dir.path().join("2.csv")));
    assert_eq!(first, report(true, &dir.path().join("3.csv")));
}

#[test]
fn glm_like_config_recovers_its_rates() {
    let dir = TempDir::new().unwrap();
    let log = simulate(&dir, &repo("configs/glm_like.toml"), "glm.jsonl", 323, 1, 0);
    let summary = summary_json(&ok(&["decide", s(&log), "--pilot", "323", "--bootstrap-iters", "4000"]));
    for (ci, truth) in [("r_ci", 0.2479), ("d_ci", 0.1461)] {
        let (low, high) = (
            summary[ci]["low"].as_f64().unwrap(),
            summary[ci]["high"].as_f64().unwrap(),
        );
        assert!(low <= truth && truth <= high, "{ci} [{low}, {high}] misses {truth}");
    }
}

#[test]
fn published_pilot_rates_deploy() {
    let out = ok(&["decide", s(&repo("crates/core/fixtures/alfworld_pilot.toml"))]);
    assert!(out.contains("verdict: deploy"), "{out}");
    let summary = summary_json(&out);
    assert_eq!(summary["decision"]["verdict"], "deploy");
    assert!((summary["p_star"].as_f64().unwrap() - 0.82).abs() < 0.005);
}

#[test]
fn all_succeed_log_is_trivial() {
    let dir = TempDir::new().unwrap();
    let mut text = String::new();
    for t in 0..12 {
        for condition in ["baseline", "intervention"] {
            text.push_str(&format!(
                r#"{{"task_id":"t{t}","seed":0,"condition":"{condition}","outcome":"success","n_steps":3,"interventions":[],"answered":true}}"#
            ));
            text.push('\n');
        }
    }
    let log = write(&dir, "all.jsonl", &text);
    let out = ok(&["decide", s(&log), "--pilot", "12"]);
    assert_eq!(summary_json(&out)["decision"]["verdict"], "trivial_all_succeed");
    assert_eq!(summary_json(&out)["decision"]["trace"].as_array().unwrap().len(), 1);
}

#[test]
fn count_derived_rates_at_low_failure_hold_back() {
    let dir = TempDir::new().unwrap();
    let profile = write(
        &dir,
        "glm.toml",
        "failure_rate = 0.297\nrecovery_rate = 0.24786324786324787\ndisruption_rate = 0.14606741573033707\n",
    );
    let out = ok(&["decide", s(&profile)]);
    assert_eq!(summary_json(&out)["decision"]["verdict"], "do_not_deploy");
}

#[test]
fn errors_map_to_category_exit_codes() {
    let dir = TempDir::new().unwrap();
    let bad = write(&dir, "bad.toml", &single_trigger(1.5, 0.3, 0.2));
    let msg = fails_with(&["simulate", s(&bad), "--out", s(&dir.path().join("x.jsonl"))], 2);
    assert!(msg.contains("agent.p_fail"), "{msg}");
    let unknown = write(
        &dir,
        "unknown.toml",
        &(single_trigger(0.5, 0.3, 0.2) + "\n[extra]\nx = 1\n"),
    );
    fails_with(&["simulate", s(&unknown), "--out", s(&dir.path().join("x.jsonl"))], 2);

    let log = simulate(&dir, &repo("configs/minimal.toml"), "small.jsonl", 20, 1, 0);
    let msg = fails_with(&["decide", s(&log), "--pilot", "30"], 2);
    assert!(msg.contains("20"), "{msg}");
    fails_with(&["decide", s(&log), "--pilot", "20", "--margin", "1.5"], 3);

    let one_class = write(&dir, "one.toml", &single_trigger(0.0, 0.0, 0.0));
    let log = simulate(&dir, &one_class, "one.jsonl", 20, 1, 0);
    fails_with(&["calibrate", s(&log)], 4);

    let garbage = write(&dir, "garbage.jsonl", "{\"task_id\": 3}\n");
    let msg = fails_with(&["report", s(&garbage)], 2);
    assert!(msg.contains("line 1"), "{msg}");
}

#[test]
fn unmatched_runs_are_pairing_errors() {
    let dir = TempDir::new().unwrap();
    let log = write(
        &dir,
        "orphan.jsonl",
        concat!(
            r#"{"task_id":"a","seed":0,"condition":"baseline","outcome":"success","n_steps":1,"interventions":[],"answered":true}"#,
            "\n",
            r#"{"task_id":"b","seed":1,"condition":"intervention","outcome":"failure","n_steps":1,"interventions":[],"answered":true}"#,
            "\n"
        ),
    );
    let msg = fails_with(&["report", s(&log)], 2);
    assert!(
        msg.contains("pairing") && msg.contains('b') && msg.contains('1'),
        "{msg}"
    );
}

#[test]
fn baseline_only_log_gives_one_row() {
    let dir = TempDir::new().unwrap();
    let log = simulate(&dir, &repo("configs/minimal.toml"), "m.jsonl", 30, 1, 0);
    let baseline: String = fs::read_to_string(&log)
        .unwrap()
        .lines()
        .filter(|l| l.contains(r#""condition":"baseline""#))
        .map(|l| format!("{l}\n"))
        .collect();
    let only = write(&dir, "base.jsonl", &baseline);
    let out = ok(&["report", s(&only), "--bootstrap-iters", "1000"]);
    let rows: Vec<&str> = out
        .lines()
        .filter(|l| l.starts_with("baseline") || l.starts_with("base "))
        .collect();
    assert_eq!(rows.len(), 1, "{out}");
    assert!(!out.lines().any(|l| l.starts_with("base ")), "{out}");
}

#[test]
fn large_true_effect_is_significant() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "gain.toml", &single_trigger(0.6, 0.3, 0.2));
    let log = simulate(&dir, &config, "gain.jsonl", 20_000, 1, 1);
    let out = ok(&["report", s(&log), "--bootstrap-iters", "1000"]);
    let row = out.lines().find(|l| l.starts_with("gain")).unwrap();
    assert!(row.trim_end().ends_with("yes"), "{out}");
}

#[test]
fn null_effect_is_rarely_significant() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "null.toml", &single_trigger(0.5, 0.2, 0.2));
    let mut quiet = 0;
    for seed in 0..20 {
        let log = simulate(&dir, &config, "null.jsonl", 200, 1, seed);
        let out = ok(&[
            "report",
            s(&log),
            "--bootstrap-iters",
            "1000",
            "--seed",
            &seed.to_string(),
        ]);
        let row = out.lines().find(|l| l.starts_with("null")).unwrap();
        let p: f64 = row.split_whitespace().nth(6).unwrap().parse().unwrap();
        quiet += (p > 0.05) as usize;
    }
    assert!(quiet >= 18, "{quiet} of 20");
}

#[test]
fn calibrate_recovers_overconfidence() {
    let dir = TempDir::new().unwrap();
    for (name, t_true) in [("qwen", 2.27), ("glm", 8.81), ("calibrated", 1.0)] {
        let config = write(&dir, &format!("{name}.toml"), &logit_normal(t_true));
        let log = simulate(&dir, &config, &format!("{name}.jsonl"), 600, 1, 2);
        let out = ok(&["calibrate", s(&log)]);
        let row: Vec<f64> = out
            .lines()
            .find(|l| l.starts_with("critic"))
            .unwrap()
            .split_whitespace()
            .skip(1)
            .map(|x| x.trim_end_matches('%').parse().unwrap())
            .collect();
        let (t, before, after, reduction) = (row[0], row[1], row[2], row[3]);
        assert!((t - t_true).abs() / t_true < 0.10, "{name}: T {t}");
        if t_true > 1.0 {
            assert!(reduction >= 30.0, "{name}: {out}");
        } else {
            assert!((before - after).abs() < 0.01, "{name}: {out}");
        }
    }
}

#[test]
fn oracle_modes() {
    let dir = TempDir::new().unwrap();
    let no_recovery = write(&dir, "r0.toml", &single_trigger(0.5, 0.0, 0.3));
    let log = simulate(&dir, &no_recovery, "r0.jsonl", 2000, 1, 3);
    let out = ok(&["oracle", s(&log), "--mode", "intervention"]);
    let line = out.lines().find(|l| l.starts_with("oracle intervention")).unwrap();
    assert!(line.ends_with("(+0.0 pp)"), "{out}");

    let seeds = write(&dir, "s.toml", &single_trigger(0.43, 0.3, 0.2));
    let log = simulate(&dir, &seeds, "s.jsonl", 20_000, 2, 4);
    let out = ok(&["oracle", s(&log), "--mode", "bo2"]);
    let bo2 = number_after(&out, "oracle Bo2:");
    assert!((bo2 - 81.5).abs() <= 1.5, "{out}");

    let table = ok(&["fixture", "oracle"]);
    let qwen = table.lines().find(|l| l.starts_with("Qwen")).unwrap();
    assert!(qwen.contains("64.7 (+7.7)") && qwen.contains("68.0 (+11.0)"), "{qwen}");
}

#[test]
fn select_mode_reports_the_power_caveat() {
    let dir = TempDir::new().unwrap();
    let log = simulate(&dir, &repo("configs/calibrated_rollback.toml"), "sel.jsonl", 40, 2, 5);
    let out = ok(&["oracle", s(&log), "--mode", "select"]);
    assert!(out.contains("contested tasks:"), "{out}");
    assert!(out.contains("23%"), "{out}");
}
