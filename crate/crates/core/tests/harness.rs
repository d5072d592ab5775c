use std::fs;
use std::path::Path;
use std::process::Command;

use proptest::prelude::*;

use stableplan::config::{ExperimentConfig, OracleKind, ParamSource, PolicyKind};
use stableplan::harness::{self, Mode, REPORT_FILE, SUMMARY_FILE};
use stableplan::stability::VerdictStatus;
use stableplan::trajectory::TrajectoryRecord;

const BASE: &str = r#"
[environment]
kind = "two_queue"
lambda = [0.3, 0.3]
mu = [0.8, 0.8]
gamma = 0.9

[oracle]
kind = "grid"
source = "override"
delta = 0.1
horizon = 2
width = 4
epsilon = 1.0

[policy]
tau = 0.3

[lyapunov]
nu = 1.4142135623730951
nu_prime = 1.4142135623730951
b = 5.0
alpha = 0.05

[run]
horizon = 300
trials = 4
seed = 99
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stableplan"))
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("experiment.toml");
    fs::write(&path, text).unwrap();
    path
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = vec![
        (REPORT_FILE.to_string(), fs::read(dir.join(REPORT_FILE)).unwrap()),
        (SUMMARY_FILE.to_string(), fs::read(dir.join(SUMMARY_FILE)).unwrap()),
    ];
    let mut names: Vec<_> = fs::read_dir(dir.join("trajectories"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    names.sort();
    for p in names {
        files.push((p.file_name().unwrap().to_string_lossy().into(), fs::read(&p).unwrap()));
    }
    files
}

#[test]
fn outputs_are_identical_across_runs_and_pool_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut trees = Vec::new();
    for (i, workers) in [1usize, 8, 1].iter().enumerate() {
        let text = BASE.replace("seed = 99", &format!("seed = 99\nworkers = {workers}"));
        let cfg = write_config(tmp.path(), &text);
        let out = tmp.path().join(format!("out{i}"));
        let status = bin().arg("run").arg(&cfg).arg("--out").arg(&out).status().unwrap();
        assert_eq!(status.code(), Some(0));
        trees.push(read_tree(&out));
    }
    assert_eq!(trees[0].len(), 6);
    assert_eq!(trees[0], trees[1]);
    assert_eq!(trees[0], trees[2]);
}

#[test]
fn analyze_reproduces_the_inline_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml(BASE).unwrap();
    let out = harness::run_experiment(&cfg, Mode::Run).unwrap();
    harness::write_outputs(tmp.path(), &cfg, &out).unwrap();
    assert_eq!(harness::analyze(tmp.path(), None).unwrap(), out.report);
    let status = bin().arg("analyze").arg(tmp.path()).status().unwrap();
    assert_eq!(status.code(), Some(0));
    assert_eq!(
        fs::read(tmp.path().join("analysis.json")).unwrap(),
        fs::read(tmp.path().join(REPORT_FILE)).unwrap()
    );
    // sample accounting: summary totals equal the per-step log
    let logged: u64 = out.trajectories.iter().map(|t| t.total_samples()).sum();
    assert_eq!(out.summary.total_samples, logged);
    assert!(logged > 0);
}

#[test]
fn analyze_theta_flag_changes_only_theta_dependent_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml(BASE).unwrap();
    let out = harness::run_experiment(&cfg, Mode::Run).unwrap();
    harness::write_outputs(tmp.path(), &cfg, &out).unwrap();
    let strict = harness::analyze(tmp.path(), Some(0.001)).unwrap();
    assert_eq!(strict.theta, 0.001);
    assert_eq!(strict.tail, out.report.tail);
    assert!(strict.verdict.boundedness_level >= out.report.verdict.boundedness_level);
}

#[test]
fn truncated_trajectory_names_its_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml(BASE).unwrap();
    let out = harness::run_experiment(&cfg, Mode::Run).unwrap();
    harness::write_outputs(tmp.path(), &cfg, &out).unwrap();
    let path = harness::trajectory_path(tmp.path(), 2);
    let text = fs::read_to_string(&path).unwrap();
    let kept: Vec<&str> = text.lines().take(40).collect();
    fs::write(&path, kept.join("\n") + "\n").unwrap();
    let err = harness::analyze(tmp.path(), None).unwrap_err();
    assert!(err.to_string().contains("41"), "{err}");
    let output = bin().arg("analyze").arg(tmp.path()).output().unwrap();
    assert_eq!(output.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&output.stderr).contains("trial_0002.csv"));
}

#[test]
fn empty_run_directory_is_inconclusive() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml(BASE).unwrap();
    fs::write(tmp.path().join("config.toml"), cfg.to_toml().unwrap()).unwrap();
    let output = bin().arg("analyze").arg(tmp.path()).output().unwrap();
    assert_eq!(output.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&output.stderr).contains("warning"));
    let report = harness::analyze(tmp.path(), None).unwrap();
    assert_eq!(report.verdict.status, VerdictStatus::Inconclusive);
}

#[test]
fn budget_cap_fails_trials_but_keeps_running() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), BASE);
    let out = tmp.path().join("out");
    let cap = 5_000u64;
    let status = bin()
        .args(["run"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--budget-cap", &cap.to_string()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary["failed_trials"], 4);
    assert!(summary["total_samples"].as_u64().unwrap() <= cap * 4);
    let t = TrajectoryRecord::read_csv(&harness::trajectory_path(&out, 0)).unwrap();
    assert!(!t.header.status.is_complete());
    assert!(t.total_samples() <= cap);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), BASE);
    assert_eq!(bin().arg("run").arg(&cfg).arg("--bogus").output().unwrap().status.code(), Some(1));
    assert_eq!(bin().output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    let bad = write_config(tmp.path(), &BASE.replace("tau = 0.3", "tau = 0.3\ncolour = 1"));
    assert_eq!(bin().arg("run").arg(&bad).output().unwrap().status.code(), Some(1));
    let missing = tmp.path().join("nope.toml");
    assert_eq!(bin().arg("params").arg(&missing).output().unwrap().status.code(), Some(3));
    assert_eq!(
        bin().arg("analyze").arg(tmp.path().join("nothing")).output().unwrap().status.code(),
        Some(3)
    );
}

#[test]
fn params_sheet_and_budget_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), BASE);
    let output = bin().arg("params").arg(&cfg).args(["--budget-cap", "1000000"]).output().unwrap();
    assert_eq!(output.status.code(), Some(0));
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("H = 22"), "{text}");
    assert!(text.contains("OVER BUDGET: vanilla formula"), "{text}");
    assert!(!text.contains("OVER BUDGET: configured oracle"), "{text}");
}

#[test]
fn oracle_flag_switches_to_vanilla() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), BASE);
    let out = tmp.path().join("out");
    let status = bin()
        .arg("run")
        .arg(&cfg)
        .args(["--oracle", "vanilla", "--trials", "1", "--horizon", "20", "--seed", "4"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let t = TrajectoryRecord::read_csv(&harness::trajectory_path(&out, 0)).unwrap();
    // full tree: 8 + 64 calls per step
    assert!(t.rows[..20].iter().all(|r| r.samples_used == 72));
    assert_eq!(t.header.seed, 4);
}

#[test]
fn tune_command_logs_delta_levels() {
    let tmp = tempfile::tempdir().unwrap();
    let text = BASE
        .replace("tau = 0.3", "")
        .replace("horizon = 300", "horizon = 200\nbudget_cap = 100000000");
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("out");
    let status = bin().arg("tune").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary["adaptive"], true);
    let level0 = &summary["delta_levels"][0];
    assert_eq!(level0["delta"], 1.0);
    assert_eq!(level0["oracle"]["formula"]["kind"], "flat");
    assert_eq!(level0["oracle"]["effective"]["horizon"], 2);
}

#[test]
fn uniform_and_serve_longest_need_no_samples() {
    for kind in ["uniform", "serve_longest"] {
        let text = BASE.replace("tau = 0.3", &format!("kind = \"{kind}\""));
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let out = harness::run_experiment(&cfg, Mode::Run).unwrap();
        assert_eq!(out.summary.total_samples, 0);
        assert_eq!(out.summary.complete_trials, 4);
    }
}

fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
    (
        any::<u64>(),
        1u64..100,
        1u64..10_000,
        prop_oneof![Just(OracleKind::Grid), Just(OracleKind::Vanilla)],
        prop_oneof![Just(PolicyKind::Boltzmann), Just(PolicyKind::Uniform), Just(PolicyKind::ServeLongest)],
        0.01f64..0.99,
        proptest::option::of(1u64..1_000_000),
        any::<bool>(),
    )
        .prop_map(|(seed, trials, horizon, oracle, policy, delta, cap, adaptive)| {
            let mut cfg = ExperimentConfig::from_toml(BASE).unwrap();
            cfg.run.seed = seed;
            cfg.run.trials = trials;
            cfg.run.horizon = horizon;
            cfg.run.budget_cap = cap;
            cfg.oracle.kind = oracle;
            cfg.oracle.delta = delta;
            cfg.oracle.source = if adaptive { ParamSource::Formula } else { ParamSource::Override };
            cfg.policy.kind = policy;
            cfg.adaptive.enabled = adaptive;
            cfg
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips(cfg in arb_config()) {
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }
}
