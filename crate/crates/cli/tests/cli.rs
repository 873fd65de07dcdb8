use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use maskgrasp::eval::REPORT_HEADER;
use maskgrasp::ppo::METRICS_HEADER;

const TINY: &str = "\
# small enough for a test run
ppo.n_envs = 2
ppo.n_steps = 32
ppo.minibatch_size = 32
ppo.n_epochs = 1
sim.policy_resolution = 32
sim.max_episode_length = 40
train.checkpoint_every = 1
";

/// Answers every request with no detections, echoing sequential ids.
const EMPTY_DETECTOR: &str = r#"i=0; while read l; do i=$((i+1)); echo "{\"id\": $i, \"detections\": []}"; done"#;

fn mgrl(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mgrl"));
    c.args(args).env_remove("MGRL_DETECTOR_CMD").env("RUST_LOG", "warn");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("mgrl runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.conf");
    fs::write(&p, TINY).unwrap();
    p.display().to_string()
}

#[test]
fn unknown_key_is_a_config_error() {
    let o = mgrl(&["config-dump", "--set", "ppo.entropy=0.1"], &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("ppo.entropy"), "{}", stderr(&o));

    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.conf");
    fs::write(&cfg, "ppo.gamma = 0.99\nsim.colour = red\n").unwrap();
    let o = mgrl(&["config-dump", "-c", cfg.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("sim.colour") && stderr(&o).contains(":2"), "{}", stderr(&o));
}

#[test]
fn flags_override_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let o = mgrl(&["config-dump", "-c", &cfg, "--set", "ppo.n_envs=4"], &[("MGRL_DETECTOR_CMD", "my-detector --fast")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("ppo.n_envs = 4"));
    assert!(out.contains("ppo.n_steps = 32"));
    assert!(out.contains("detector.command = my-detector --fast"));
}

#[test]
fn reference_file_is_current() {
    let o = mgrl(&["config-dump", "--reference"], &[]);
    assert_eq!(code(&o), 0);
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/config-reference.conf");
    if std::env::var_os("MGRL_BLESS").is_some() {
        fs::write(&path, &o.stdout).unwrap();
    }
    let on_disk = fs::read(&path).expect("docs/config-reference.conf exists (regenerate with MGRL_BLESS=1)");
    assert!(on_disk == o.stdout, "docs/config-reference.conf is stale; rerun with MGRL_BLESS=1");
}

#[test]
fn train_requires_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = mgrl(&["train", "--variant", "onehot", "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--seed"));
    assert!(!out.exists());
}

#[test]
fn train_eval_and_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let run = tmp.path().join("m3");
    let run_s = run.to_str().unwrap();
    let train = |extra: &[&str]| {
        let mut args = vec!["train", "-c", &cfg, "--variant", "mask-gt", "--seed", "3", "--out", run_s, "--total-timesteps", "128"];
        args.extend_from_slice(extra);
        mgrl(&args, &[])
    };
    let o = train(&[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let resolved = fs::read_to_string(run.join("config.resolved")).unwrap();
    assert!(resolved.contains("train.seed = 3") && resolved.contains("train.variant = mask-gt"));
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some(METRICS_HEADER));
    assert_eq!(metrics.lines().count(), 3);
    assert!(run.join("checkpoints/iter_1.bin").is_file() && run.join("checkpoints/iter_2.bin").is_file());
    assert!(run.join("final.bin").is_file());
    let first = fs::read(run.join("metrics.csv")).unwrap();

    let o = train(&[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--overwrite"));

    let o = train(&["--overwrite"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(run.join("metrics.csv")).unwrap(), first, "same seed, same metrics");

    let ck = format!("{run_s}/final");
    let o = mgrl(
        &["eval", "-c", &cfg, "--checkpoint", &ck, "--objects", "ood", "--distractors", "1,2,3", "--detector", "simulated", "--episodes", "2", "--seeds", "2"],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let reports: Vec<_> = fs::read_dir(run.join("eval"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    assert_eq!(reports.len(), 1);
    let text = fs::read_to_string(&reports[0]).unwrap();
    assert_eq!(text.lines().next(), Some(REPORT_HEADER));
    assert_eq!(text.lines().count(), 1 + 3 * 2);
    assert!(text.lines().skip(1).all(|l| l.starts_with("mask-gt,simulated,ood,")));

    let o = mgrl(&["eval", "--checkpoint", run.join("nothing").to_str().unwrap()], &[]);
    assert_eq!(code(&o), 1);
    let o = mgrl(&["eval", "-c", &cfg, "--checkpoint", &ck, "--set", "train.variant=onehot", "--episodes", "0"], &[]);
    assert_eq!(code(&o), 1);
}

#[test]
fn sweep_writes_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("sweep");
    let o = mgrl(
        &["sweep", "-c", &cfg, "--variants", "onehot,mask-gt", "--seeds", "2", "--total-timesteps", "64", "--out", out.to_str().unwrap()],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("onehot/seed_1/final.bin").is_file());
    let curves = fs::read_to_string(out.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 2);
    assert!(curves.lines().nth(1).unwrap().starts_with("onehot,1,64,2,"));
}

#[test]
fn render_debug_dumps_frames_and_masks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let o = mgrl(&["render-debug", "-c", &cfg, "--steps", "2", "--out", tmp.path().to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["frame_0_0.png", "frame_0_1.png", "mask_0_0.png", "config.resolved"] {
        assert!(tmp.path().join("debug").join(f).is_file(), "{f}");
    }
}

#[test]
fn detector_check_uses_the_environment_override() {
    let o = mgrl(&["detector-check", "--states", "2"], &[]);
    assert_eq!(code(&o), 1, "no detector configured");
    let o = mgrl(&["detector-check", "--states", "2"], &[("MGRL_DETECTOR_CMD", EMPTY_DETECTOR)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = mgrl(&["detector-check", "--states", "2", "--command", "read l; echo not-json; sleep 1"], &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("protocol"), "{}", stderr(&o));
}
