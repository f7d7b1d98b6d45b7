//! Saving, reloading and re-exporting runs, through the library and the
//! command-line tool.

use std::fs;
use std::path::Path;
use std::process::Command;

use fimlab::config::{parse_manifest, render_manifest};
use fimlab::{load_record, replay, run_and_save, RECORD_DIR, REPORTS_DIR};
use fimlab_core::env::GridConfig;
use fimlab_core::harness::{Mode, RunConfig};
use fimlab_core::learner::LearnerConfig;

const TINY: &str = r#"
[experiment]
modes = ["fim"]
seeds = [7]

[run]
total_steps = 600
reestimate_interval = 300
estimation_steps = 200
eval_interval = 300
eval_episodes = 2
trace_interval = 50
dynamics_hidden = 16
dynamics_batch = 16
dynamics_updates = 1
dynamics_warmup = 10

[env]
episode_limit = 20

[learner]
batch_size = 4
agent_hidden = 16
mixer_embed = 8
hyper_hidden = 16
"#;

fn tiny(mode: Mode) -> RunConfig {
    RunConfig {
        mode,
        seed: 7,
        total_steps: 600,
        reestimate_interval: 300,
        estimation_steps: 200,
        eval_interval: 300,
        eval_episodes: 2,
        trace_interval: 50,
        dynamics_hidden: 16,
        dynamics_batch: 16,
        dynamics_updates: 1,
        dynamics_warmup: 10,
        env: GridConfig {
            episode_limit: 20,
            ..GridConfig::default()
        },
        learner: LearnerConfig {
            batch_size: 4,
            agent_hidden: 16,
            mixer_embed: 8,
            hyper_hidden: 16,
            ..LearnerConfig::default()
        },
        ..RunConfig::default()
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn saved_record_loads_back_equal() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(Mode::Fim);
    let (record, written) = run_and_save(&cfg, tmp.path(), |_| {}).unwrap();
    assert!(!written.is_empty());
    let back = load_record(&tmp.path().join(RECORD_DIR)).unwrap();
    assert_eq!(back, record);
}

#[test]
fn manifest_round_trips_every_mode() {
    for mode in Mode::ALL {
        let mut cfg = tiny(mode);
        if mode == Mode::Efi {
            cfg.efi_mask = Some(vec![4, 5, 6, 7]);
        }
        let text = render_manifest(&cfg).unwrap();
        assert_eq!(parse_manifest(&text, Path::new("m.toml")).unwrap(), cfg);
    }
}

#[test]
fn replay_reproduces_reports_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    run_and_save(&tiny(Mode::Fim), tmp.path(), |_| {}).unwrap();
    let again = tmp.path().join("again");
    replay(tmp.path(), &again).unwrap();
    assert_eq!(files(&tmp.path().join(REPORTS_DIR)), files(&again));
}

#[test]
fn repeated_runs_write_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_and_save(&tiny(Mode::Baseline), a.path(), |_| {}).unwrap();
    run_and_save(&tiny(Mode::Baseline), b.path(), |_| {}).unwrap();
    for sub in [RECORD_DIR, REPORTS_DIR] {
        assert_eq!(files(&a.path().join(sub)), files(&b.path().join(sub)));
    }
}

#[test]
fn heatmaps_count_every_training_step() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(Mode::Baseline);
    run_and_save(&cfg, tmp.path(), |_| {}).unwrap();
    let grid = fimlab::record::load_heatmaps(&tmp.path().join(RECORD_DIR), &cfg.env).unwrap();
    assert_eq!(grid.labels.len(), 4);
    for e in 0..grid.labels.len() {
        assert_eq!(grid.total(e), cfg.total_steps);
    }
}

fn fimlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fimlab"))
}

#[test]
fn cli_trains_profiles_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let out = tmp.path().join("runs");

    let status = fimlab().arg("train").arg("--config").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert!(status.success());
    let run = out.join("fim-seed7");
    assert!(run.join(RECORD_DIR).join("manifest.toml").is_file());
    assert!(run.join(REPORTS_DIR).join("success.tsv").is_file());

    let again = tmp.path().join("again");
    let status = fimlab().arg("replay").arg(&run).arg("--out").arg(&again).status().unwrap();
    assert!(status.success());
    assert_eq!(files(&run.join(REPORTS_DIR)), files(&again));

    let output = fimlab()
        .arg("profile")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.starts_with("dim\tlabel\t"));
    assert_eq!(text.lines().count(), 9);
}

#[test]
fn cli_sweep_writes_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let out = tmp.path().join("runs");
    let status = fimlab()
        .args(["sweep", "--mode", "baseline", "--mode", "afi_only", "--seed", "1", "--jobs", "2"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let summary = fs::read_to_string(out.join("sweep.tsv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(out.join("afi_only-seed1").is_dir());
}

#[test]
fn cli_reports_bad_config_and_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[run]\nalpa = 3.0\n").unwrap();
    let output = fimlab().arg("train").arg("--config").arg(&cfg).output().unwrap();
    assert!(!output.status.success());
    let err = String::from_utf8(output.stderr).unwrap();
    assert!(err.contains("alpa"), "{err}");

    let output = fimlab()
        .args(["train", "--mode", "fim", "--mode", "baseline"])
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(!output.status.success());
}
