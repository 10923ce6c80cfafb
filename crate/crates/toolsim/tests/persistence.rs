mod common;

use std::process::Command;

use proptest::prelude::*;
use toolsim::orchestrator::Environment;
use toolsim::persist::{trace_csv, RunStore, TraceEntry};
use toolsim::pool::map_bounded;

fn desk_run(dir: &std::path::Path, steps: u64) {
    let env = Environment::from_config(common::desk_config(dir)).unwrap();
    let store = RunStore::create(dir).unwrap();
    toolsim::run(&env, &store, steps).unwrap();
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    desk_run(a.path(), 5);
    desk_run(b.path(), 2);
    desk_run(b.path(), 5);
    for step in 0..5 {
        let (x, y) = (RunStore::open(a.path()), RunStore::open(b.path()));
        assert_eq!(
            std::fs::read(x.step_path(step)).unwrap(),
            std::fs::read(y.step_path(step)).unwrap(),
            "step {step}"
        );
        assert_eq!(std::fs::read(x.trajectories_path(step)).unwrap(), std::fs::read(y.trajectories_path(step)).unwrap());
    }
    assert_eq!(std::fs::read(a.path().join("trace.jsonl")).unwrap(), std::fs::read(b.path().join("trace.jsonl")).unwrap());
}

#[test]
fn artifacts_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let env = Environment::from_config(common::desk_config(dir.path())).unwrap();
    let store = RunStore::create(dir.path()).unwrap();
    let art = toolsim::orchestrator::run_step(&env, &env.initial_state()).unwrap();
    store.write_step(&art).unwrap();
    assert_eq!(store.load_step(0).unwrap(), art);
    let lines = store.load_trajectories(0).unwrap();
    assert_eq!(lines, toolsim::persist::trajectory_lines(&art));
    assert!(lines.iter().all(|l| l.final_reward.is_some() && l.advantage == Some(0.0)));
    // rewriting a step replaces its trace entry instead of appending
    store.write_step(&art).unwrap();
    assert_eq!(store.load_trace().unwrap().len(), 1);
}

#[test]
fn cli_run_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::repo_root().join("data/desk/desk.toml");
    let bin = env!("CARGO_BIN_EXE_toolsim");
    let out = Command::new(bin)
        .args(["run", "--config"])
        .arg(&config)
        .args(["--steps", "3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = Command::new(bin).args(["inspect", "--run"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "step,difficulty,mean_reward,aborted\n0,1,1,0\n1,21,1,0\n2,41,-1,0\n");

    let bad = Command::new(bin).args(["run", "--config", "/nonexistent.toml"]).output().unwrap();
    assert!(!bad.status.success());
}

#[test]
fn missing_trace_means_fresh_start() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path());
    assert!(store.load_trace().unwrap().is_empty());
    std::fs::write(store.trace_path(), "{not json\n").unwrap();
    assert!(store.load_trace().is_err());
}

proptest! {
    #[test]
    fn map_bounded_preserves_order(items in proptest::collection::vec(any::<i32>(), 0..64), cap in 1usize..9) {
        let out = map_bounded(items.clone(), cap, |x| i64::from(x) * 2);
        prop_assert_eq!(out, items.iter().map(|&x| i64::from(x) * 2).collect::<Vec<_>>());
    }

    #[test]
    fn csv_has_one_row_per_entry(n in 0usize..20, aborted in 0usize..5) {
        let trace: Vec<TraceEntry> = (0..n)
            .map(|i| TraceEntry {
                step: i as u64,
                difficulty_before: 1 + i as u32,
                difficulty_after: 1 + i as u32,
                mean_reward: (i % 2 == 0).then_some(0.5),
                valid: 4,
                aborted,
                failed_tasks: 0,
                failed: i % 2 == 1,
            })
            .collect();
        let csv = trace_csv(&trace);
        prop_assert_eq!(csv.lines().count(), n + 1);
        for (i, line) in csv.lines().skip(1).enumerate() {
            prop_assert_eq!(line.split(',').count(), 4);
            let (prefix, suffix) = (format!("{i},"), format!(",{aborted}"));
            prop_assert!(line.starts_with(&prefix) && line.ends_with(&suffix));
        }
    }
}

#[test]
fn bundled_configs_load() {
    for name in ["data/desk/desk.toml", "data/remote.toml"] {
        let cfg = toolsim::config::RunConfig::load(&common::repo_root().join(name)).unwrap();
        assert!(cfg.repository.exists(), "{name}: {}", cfg.repository.display());
    }
}
