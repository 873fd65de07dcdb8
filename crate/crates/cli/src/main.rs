//! `mgrl`: train, evaluate and inspect mask-conditioned grasping policies.
//!
//! Exit status: 0 on success, 1 for configuration or usage errors, 2 for
//! failures while running.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use maskgrasp::camera::render;
use maskgrasp::config::RunConfig;
use maskgrasp::detector::external::{DetectorClient, HttpDetector, ProcessDetector};
use maskgrasp::detector::{detect_oracle, BBox};
use maskgrasp::eval::{
    ablation_grid, evaluate, mean_se, Controller, EvalReport, NetworkController, ScriptedController,
};
use maskgrasp::nn::Checkpoint;
use maskgrasp::ppo::{read_metrics, BackendKind, Conditioning, GoalEnv, Trainer, Variant};
use maskgrasp::rng;
use maskgrasp::sim::{Action, ObjectSet, SuccessCriterion};
use maskgrasp::{Error, Result};

const DETECTOR_CMD_ENV: &str = "MGRL_DETECTOR_CMD";

/// Artifacts a run directory may contain; `--overwrite` removes only these.
const RUN_ARTIFACTS: &[&str] = &["config.resolved", "metrics.csv", "final.bin", "checkpoints", "eval", "debug"];

#[derive(Parser)]
#[command(name = "mgrl", version, about = "Mask-conditioned reach-and-grasp training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Config file of `section.key = value` lines.
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,
    /// Override one key, `key=value`; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy.
    Train(TrainArgs),
    /// Evaluate checkpoints and write a report CSV.
    Eval(EvalArgs),
    /// Train several variants and seeds, then aggregate learning curves.
    Sweep(SweepArgs),
    /// Evaluate mask-conditioned policies across object counts under one detector.
    Ablation(AblationArgs),
    /// Dump frames and goal masks of short episodes as PNG.
    RenderDebug(RenderArgs),
    /// Send rendered frames to an external detector and check its replies.
    DetectorCheck(DetectorCheckArgs),
    /// Print the effective configuration.
    ConfigDump(DumpArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// onehot, goalimage, mask-gt, mask-sim or mask-ext.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: u64,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    total_timesteps: Option<usize>,
    /// Replace the artifacts of an earlier run in the output directory.
    #[arg(long, conflicts_with = "resume")]
    overwrite: bool,
    /// Continue from the newest checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint file, run directory, or directory of `seed_*` runs;
    /// comma-separated for one checkpoint per seed. `.bin` may be omitted.
    #[arg(long)]
    checkpoint: String,
    /// Object sets: in, ood.
    #[arg(long)]
    objects: Option<String>,
    /// Object counts on the table, goal included.
    #[arg(long)]
    distractors: Option<String>,
    /// Mask detector at evaluation: oracle, simulated, external.
    #[arg(long)]
    detector: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    /// `N` for seeds 0..N, `a..b`, or a comma list.
    #[arg(long)]
    seeds: Option<String>,
    /// single_pad or both_pads.
    #[arg(long)]
    criterion: Option<String>,
    /// Directory receiving `eval/*.csv`; defaults to the checkpoint's run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated variants.
    #[arg(long)]
    variants: Option<String>,
    /// `N` for seeds 0..N, `a..b`, or a comma list.
    #[arg(long)]
    seeds: Option<String>,
    /// Root directory; runs go to `{out}/{variant}/seed_{s}`.
    #[arg(long, default_value = "runs/sweep")]
    out: PathBuf,
    #[arg(long)]
    total_timesteps: Option<usize>,
    /// Retrain runs that already finished.
    #[arg(long)]
    overwrite: bool,
    /// Evaluate every finished variant after training.
    #[arg(long)]
    eval: bool,
}

#[derive(Args)]
struct AblationArgs {
    #[command(flatten)]
    common: Common,
    /// `name=path` where path is a sweep variant directory or comma list of
    /// checkpoints; repeat per training condition.
    #[arg(long = "condition", required = true)]
    conditions: Vec<String>,
    /// Mask detector at evaluation.
    #[arg(long, default_value = "simulated")]
    detector: String,
    #[arg(long, default_value = "1,2,3")]
    distractors: String,
    #[arg(long, default_value = "in")]
    objects: String,
    #[arg(long)]
    episodes: Option<usize>,
    /// Directory receiving `eval/ablation.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    common: Common,
    /// Conditioning to render; mask variants dump their masks.
    #[arg(long, default_value = "mask-gt")]
    variant: String,
    /// Mask detector, overriding the variant's.
    #[arg(long)]
    detector: Option<String>,
    /// Drive the episodes with this policy instead of the scripted controller.
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    /// Steps dumped per episode.
    #[arg(long, default_value_t = 20)]
    steps: usize,
    #[arg(long, default_value = "in")]
    objects: String,
    #[arg(long, default_value_t = 3)]
    n_objects: usize,
    /// Goal label; random when absent.
    #[arg(long)]
    goal: Option<String>,
    /// Frames go to `{out}/debug/`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectorCheckArgs {
    #[command(flatten)]
    common: Common,
    /// Detector command (overrides config and the environment).
    #[arg(long)]
    command: Option<String>,
    /// Detector base URL.
    #[arg(long)]
    url: Option<String>,
    /// Number of random scenes sent.
    #[arg(long, default_value_t = 5)]
    states: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    common: Common,
    /// Print every key with its default and description instead.
    #[arg(long)]
    reference: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Ablation(a) => cmd_ablation(a),
        Command::RenderDebug(a) => cmd_render(a),
        Command::DetectorCheck(a) => cmd_detector_check(a),
        Command::ConfigDump(a) => cmd_dump(a),
    }
}

/// File, then environment, then `--set` overrides.
fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Ok(cmd) = std::env::var(DETECTOR_CMD_ENV) {
        if !cmd.trim().is_empty() {
            cfg.train.detector.command = Some(cmd);
        }
    }
    for kv in &common.set {
        cfg.apply_override(kv)?;
    }
    Ok(cfg)
}

fn init_logging(cfg: &RunConfig) {
    let env = env_logger::Env::default().default_filter_or(cfg.log_level.as_str());
    let _ = env_logger::Builder::from_env(env).format_target(false).try_init();
}

fn io_err(context: String) -> impl FnOnce(std::io::Error) -> Error {
    move |source| Error::Io { context, source }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(io_err(format!("writing {}", path.display())))
}

fn is_nonempty_dir(dir: &Path) -> bool {
    fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false)
}

/// Make `dir` ready for a fresh run.
fn prepare_run_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if is_nonempty_dir(dir) {
        if !overwrite {
            return Err(Error::Config(format!(
                "output directory {} is not empty; pass --overwrite to replace the earlier run or --resume to continue it",
                dir.display()
            )));
        }
        for name in RUN_ARTIFACTS {
            let p = dir.join(name);
            let res = if p.is_dir() {
                fs::remove_dir_all(&p)
            } else if p.exists() {
                fs::remove_file(&p)
            } else {
                Ok(())
            };
            res.map_err(io_err(format!("removing {}", p.display())))?;
        }
    }
    create_dir(dir)
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("seeds `{s}`: expected N, a..b or a comma list"));
    let s = s.trim();
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        (a..b).collect()
    } else if s.contains(',') {
        s.split(',')
            .filter(|x| !x.trim().is_empty())
            .map(|x| x.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    } else {
        let n: u64 = s.parse().map_err(|_| bad())?;
        (0..n).collect()
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

/// Newest checkpoint of a run directory: `final.bin`, else the highest
/// `checkpoints/iter_{n}.bin`.
fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    let fin = dir.join("final.bin");
    if fin.is_file() {
        return Some(fin);
    }
    fs::read_dir(dir.join("checkpoints"))
        .ok()?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let n: usize = name.strip_prefix("iter_")?.strip_suffix(".bin")?.parse().ok()?;
            Some((n, e.path()))
        })
        .max_by_key(|(n, _)| *n)
        .map(|(_, p)| p)
}

/// `seed_{s}` subdirectories of a sweep variant directory, sorted by seed.
fn seed_runs(dir: &Path) -> Vec<(u64, PathBuf)> {
    let mut runs: Vec<(u64, PathBuf)> = fs::read_dir(dir)
        .into_iter()
        .flatten()
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let seed = e.file_name().into_string().ok()?.strip_prefix("seed_")?.parse().ok()?;
            e.path().is_dir().then(|| (seed, e.path()))
        })
        .collect();
    runs.sort();
    runs
}

/// Resolve one checkpoint argument: a file (with or without `.bin`), a run
/// directory, or a directory of seed runs.
fn resolve_checkpoints(arg: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for part in arg.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let p = PathBuf::from(part);
        if p.is_file() {
            out.push(p);
            continue;
        }
        let with_ext = PathBuf::from(format!("{part}.bin"));
        if with_ext.is_file() {
            out.push(with_ext);
            continue;
        }
        if p.is_dir() {
            if let Some(c) = latest_checkpoint(&p) {
                out.push(c);
                continue;
            }
            let runs = seed_runs(&p);
            if !runs.is_empty() {
                for (seed, run) in runs {
                    out.push(latest_checkpoint(&run).ok_or_else(|| {
                        Error::Config(format!("run {} (seed {seed}) has no checkpoint", run.display()))
                    })?);
                }
                continue;
            }
        }
        return Err(Error::Config(format!(
            "checkpoint `{part}` not found (tried {part}, {part}.bin and run directories)"
        )));
    }
    if out.is_empty() {
        return Err(Error::Config("no checkpoint given".into()));
    }
    Ok(out)
}

/// Directory owning a checkpoint: the run directory for
/// `run/final.bin` and `run/checkpoints/iter_n.bin`.
fn run_dir_of(ck: &Path) -> PathBuf {
    let parent = ck.parent().unwrap_or(Path::new("."));
    if parent.file_name().is_some_and(|n| n == "checkpoints") {
        parent.parent().unwrap_or(Path::new(".")).to_path_buf()
    } else {
        parent.to_path_buf()
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    cfg.train.seed = a.seed;
    if let Some(v) = &a.variant {
        cfg.train.variant = v.parse()?;
    }
    if let Some(t) = a.total_timesteps {
        cfg.train.total_timesteps = t;
    }
    let out = a.out.clone().or_else(|| cfg.out_dir.clone()).ok_or_else(|| {
        Error::Config("no output directory: pass --out or set run.out_dir".into())
    })?;
    cfg.out_dir = Some(out.clone());
    cfg.validate()?;
    init_logging(&cfg);

    let resume_from = if a.resume {
        Some(latest_checkpoint(&out).ok_or_else(|| {
            Error::Config(format!("--resume: no checkpoint in {}", out.display()))
        })?)
    } else {
        prepare_run_dir(&out, a.overwrite)?;
        None
    };
    write_text(&out.join("config.resolved"), &cfg.dump())?;

    let trainer = match &resume_from {
        Some(p) => {
            let ck = Checkpoint::load_expecting(p, cfg.train.variant.as_str())?;
            log::info!("resuming from {} at {} steps", p.display(), ck.timesteps);
            Trainer::resume(cfg.train.clone(), ck)?
        }
        None => Trainer::new(cfg.train.clone())?,
    };
    let start = Instant::now();
    log::info!(
        "training {} seed {} for {} steps ({} iterations) into {}",
        cfg.train.variant,
        cfg.train.seed,
        cfg.train.total_timesteps,
        cfg.train.iterations(),
        out.display()
    );
    let outcome = trainer.run(Some(&out))?;
    let last = outcome.metrics.last();
    println!(
        "trained {} seed {}: {} steps in {:.0} s; last window return {:.3}, success {:.2}; final checkpoint {}",
        cfg.train.variant,
        cfg.train.seed,
        outcome.checkpoint.timesteps,
        start.elapsed().as_secs_f64(),
        last.map_or(f64::NAN, |m| m.mean_return),
        last.map_or(f64::NAN, |m| m.success_rate),
        out.join("final.bin").display()
    );
    Ok(())
}

fn apply_eval_flags(
    cfg: &mut RunConfig,
    objects: Option<&str>,
    distractors: Option<&str>,
    detector: Option<&str>,
    episodes: Option<usize>,
    criterion: Option<&str>,
) -> Result<()> {
    if let Some(o) = objects {
        cfg.set("eval.object_sets", o)?;
    }
    if let Some(d) = distractors {
        cfg.set("eval.n_objects", d)?;
    }
    if let Some(d) = detector {
        cfg.eval.backend = d.parse::<BackendKind>()?;
    }
    if let Some(e) = episodes {
        cfg.eval.episodes = e;
    }
    if let Some(c) = criterion {
        cfg.eval.criterion = c.parse::<SuccessCriterion>()?;
    }
    Ok(())
}

fn report_stem(report: &EvalReport, cfg: &RunConfig) -> String {
    let train = report.rows.first().map_or("none".to_string(), |r| r.train_backend.clone());
    let eval = report.rows.first().map_or("none".to_string(), |r| r.eval_backend.clone());
    let sets: Vec<&str> = cfg.eval.object_sets.iter().map(|s| s.as_str()).collect();
    let counts: Vec<String> = cfg.eval.n_objects.iter().map(|n| n.to_string()).collect();
    format!("{train}_{eval}_{}_n{}", sets.join("-"), counts.join("-"))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    apply_eval_flags(
        &mut cfg,
        a.objects.as_deref(),
        a.distractors.as_deref(),
        a.detector.as_deref(),
        a.episodes,
        a.criterion.as_deref(),
    )?;
    let checkpoints = resolve_checkpoints(&a.checkpoint)?;
    match &a.seeds {
        Some(s) => cfg.eval.seeds = parse_seeds(s)?,
        None if checkpoints.len() > 1 => cfg.eval.seeds = (0..checkpoints.len() as u64).collect(),
        None => {}
    }
    cfg.eval.checkpoints = checkpoints.clone();
    cfg.validate()?;
    init_logging(&cfg);

    let out = a.out.clone().unwrap_or_else(|| run_dir_of(&checkpoints[0]));
    let eval_dir = out.join("eval");
    create_dir(&eval_dir)?;
    let pending = eval_dir.join("pending.config.resolved");
    write_text(&pending, &cfg.dump())?;

    let start = Instant::now();
    let report = evaluate(&cfg.eval_spec(), None)?;
    let stem = report_stem(&report, &cfg);
    let csv = eval_dir.join(format!("{stem}.csv"));
    report.write_csv(&csv)?;
    fs::rename(&pending, eval_dir.join(format!("{stem}.config.resolved")))
        .map_err(io_err(format!("renaming {}", pending.display())))?;
    print!("{}", report.table());
    println!("report: {} ({:.0} s)", csv.display(), start.elapsed().as_secs_f64());
    Ok(())
}

/// Per-variant learning curves: mean and standard error across seeds at
/// every iteration all seeds reached.
fn write_curves(root: &Path, variants: &[Variant], seeds: &[u64]) -> Result<String> {
    let mut csv = String::from(
        "variant,iteration,timesteps,n_seeds,return_mean,return_se,success_mean,success_se,ep_len_mean,ep_len_se\n",
    );
    let mut summary = String::new();
    for v in variants {
        let mut runs = Vec::new();
        for s in seeds {
            let path = root.join(v.as_str()).join(format!("seed_{s}")).join("metrics.csv");
            if path.is_file() {
                runs.push(read_metrics(&path)?);
            }
        }
        let Some(len) = runs.iter().map(Vec::len).min() else { continue };
        for i in 0..len {
            let col = |f: fn(&maskgrasp::ppo::IterationMetrics) -> f64| {
                mean_se(&runs.iter().map(|r| f(&r[i])).collect::<Vec<_>>())
            };
            let (r, s, l) = (col(|m| m.mean_return), col(|m| m.success_rate), col(|m| m.mean_ep_len));
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                v,
                runs[0][i].iteration,
                runs[0][i].timesteps,
                runs.len(),
                r.mean,
                r.se,
                s.mean,
                s.se,
                l.mean,
                l.se
            ));
            if i + 1 == len {
                summary.push_str(&format!(
                    "{:<10} seeds {:>2}  steps {:>7}  return {:>7.3} ± {:.3}  success {:.2} ± {:.2}  length {:>5.1}\n",
                    v.as_str(),
                    runs.len(),
                    runs[0][i].timesteps,
                    r.mean,
                    r.se,
                    s.mean,
                    s.se,
                    l.mean
                ));
            }
        }
    }
    write_text(&root.join("curves.csv"), &csv)?;
    Ok(summary)
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(v) = &a.variants {
        cfg.set("sweep.variants", v)?;
    }
    if let Some(s) = &a.seeds {
        cfg.sweep_seeds = parse_seeds(s)?;
    }
    if let Some(t) = a.total_timesteps {
        cfg.train.total_timesteps = t;
    }
    cfg.out_dir = Some(a.out.clone());
    cfg.validate()?;
    init_logging(&cfg);
    create_dir(&a.out)?;
    write_text(&a.out.join("config.resolved"), &cfg.dump())?;

    for &variant in &cfg.sweep_variants {
        for &seed in &cfg.sweep_seeds {
            let dir = a.out.join(variant.as_str()).join(format!("seed_{seed}"));
            if dir.join("final.bin").is_file() && !a.overwrite {
                log::info!("{} seed {seed}: finished run found, skipping", variant);
                continue;
            }
            let mut run_cfg = cfg.clone();
            run_cfg.train.variant = variant;
            run_cfg.train.seed = seed;
            run_cfg.out_dir = Some(dir.clone());
            // An unfinished run is continued rather than restarted.
            let resume = (!a.overwrite).then(|| latest_checkpoint(&dir)).flatten();
            if resume.is_none() {
                prepare_run_dir(&dir, true)?;
            }
            write_text(&dir.join("config.resolved"), &run_cfg.dump())?;
            let trainer = match resume {
                Some(p) => Trainer::resume(run_cfg.train.clone(), Checkpoint::load_expecting(&p, variant.as_str())?)?,
                None => Trainer::new(run_cfg.train.clone())?,
            };
            let start = Instant::now();
            trainer.run(Some(&dir))?;
            log::info!("{} seed {seed} finished in {:.0} s", variant, start.elapsed().as_secs_f64());
        }
    }
    print!("{}", write_curves(&a.out, &cfg.sweep_variants, &cfg.sweep_seeds)?);
    println!("curves: {}", a.out.join("curves.csv").display());

    if a.eval {
        let mut all = EvalReport::default();
        for &variant in &cfg.sweep_variants {
            let runs = seed_runs(&a.out.join(variant.as_str()));
            let checkpoints: Vec<PathBuf> =
                runs.iter().filter_map(|(_, d)| Some(d.join("final.bin")).filter(|p| p.is_file())).collect();
            if checkpoints.is_empty() {
                continue;
            }
            let mut spec = cfg.eval_spec();
            spec.seeds = (0..checkpoints.len() as u64).collect();
            spec.checkpoints = checkpoints;
            spec.backend = variant.backend().unwrap_or(spec.backend);
            let report = evaluate(&spec, Some(variant.conditioning()))?;
            report.write_csv(&a.out.join("eval").join(format!("{variant}.csv")))?;
            all.merge(report);
        }
        all.write_csv(&a.out.join("eval").join("all.csv"))?;
        print!("{}", all.table());
    }
    Ok(())
}

fn cmd_ablation(a: AblationArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    apply_eval_flags(&mut cfg, Some(&a.objects), Some(&a.distractors), Some(&a.detector), a.episodes, None)?;
    let mut conditions = Vec::new();
    for c in &a.conditions {
        let (name, path) = c
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--condition `{c}`: expected name=path")))?;
        conditions.push((name.to_string(), resolve_checkpoints(path)?));
    }
    let n = conditions[0].1.len();
    if conditions.iter().any(|(_, c)| c.len() != n) {
        return Err(Error::Config("every --condition needs the same number of checkpoints (one per seed)".into()));
    }
    cfg.eval.seeds = (0..n as u64).collect();
    cfg.validate()?;
    init_logging(&cfg);
    let dir = a.out.join("eval");
    write_text(&dir.join("ablation.config.resolved"), &cfg.dump())?;
    let table = ablation_grid(&conditions, &cfg.eval_spec())?;
    table.report.write_csv(&dir.join("ablation.csv"))?;
    print!("{}", table.text());
    println!("report: {}", dir.join("ablation.csv").display());
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let variant: Variant = a.variant.parse()?;
    cfg.validate()?;
    init_logging(&cfg);
    let object_set: ObjectSet = a.objects.parse()?;
    let debug = a.out.join("debug");
    create_dir(&debug)?;
    write_text(&debug.join("config.resolved"), &cfg.dump())?;

    let backend = match &a.detector {
        Some(d) => Some(d.parse::<BackendKind>()?),
        None => variant.backend(),
    };
    let pipeline = match backend {
        Some(b) if variant.conditioning() == Conditioning::Mask => Some(cfg.train.detector.pipeline(b)?),
        _ => None,
    };
    let mut env = GoalEnv::new(cfg.train.sim.clone(), variant.conditioning(), pipeline)?;
    let mut controller: Box<dyn Controller> = match &a.checkpoint {
        Some(c) => {
            let path = resolve_checkpoints(c)?.remove(0);
            Box::new(NetworkController::from_checkpoint(Checkpoint::load_expecting(&path, variant.as_str())?)?)
        }
        None => Box::new(ScriptedController {
            conditioning: variant.conditioning(),
        }),
    };
    let hi_res = cfg.train.detector.resolution;
    let res = cfg.train.sim.policy_resolution;
    let mut written = 0usize;
    for ep in 0..a.episodes {
        let seed = rng::derive_seed(a.seed, &[ep as u64]);
        let mut input = match &a.goal {
            Some(g) => env.reset(seed, object_set, a.n_objects, g)?,
            None => env.reset_random_goal(seed, object_set, a.n_objects)?,
        };
        let goal = env.goal().map(|g| g.label_text.clone()).unwrap_or_default();
        log::info!("episode {ep}: goal `{goal}`");
        if variant.conditioning() == Conditioning::GoalImage {
            let plane = res * res;
            let mut frame = maskgrasp::camera::Frame::filled(res, res, [0.0; 3]);
            for i in 0..plane {
                frame.set_pixel(i % res, i / res, [0, 1, 2].map(|c| input.image[(3 + c) * plane + i]));
            }
            frame.write_png(&debug.join(format!("goal_{ep}.png")))?;
        }
        for step in 0..a.steps {
            let state = env.sim().state().expect("reset above");
            let frame = render(state, &env.sim().camera(hi_res));
            frame.write_png(&debug.join(format!("frame_{ep}_{step}.png")))?;
            written += 1;
            if variant.conditioning() == Conditioning::Mask {
                let plane = res * res;
                let mask = maskgrasp::goal::Mask {
                    width: res,
                    height: res,
                    data: input.image[3 * plane..4 * plane].iter().map(|&v| u8::from(v > 0.5)).collect(),
                };
                mask.write_png(&debug.join(format!("mask_{ep}_{step}.png")))?;
                written += 1;
            }
            let act = controller.act(&[&env], &[&input])?.remove(0);
            let out = env.step(Action::from_slice(&act))?;
            input = out.input;
            if out.terminated || out.truncated {
                log::info!("episode {ep} ended at step {} (success {})", step + 1, out.terminated);
                break;
            }
        }
    }
    println!("wrote {written} images to {}", debug.display());
    Ok(())
}

fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let iy = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn cmd_detector_check(a: DetectorCheckArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(c) = &a.command {
        cfg.train.detector.command = Some(c.clone());
    }
    if let Some(u) = &a.url {
        cfg.train.detector.url = Some(u.clone());
    }
    cfg.validate()?;
    init_logging(&cfg);
    let setup = &cfg.train.detector;
    let mut client: Box<dyn DetectorClient> = match (&setup.command, &setup.url) {
        (Some(cmd), _) => Box::new(ProcessDetector::spawn(cmd, setup.timeout)?),
        (None, Some(url)) => Box::new(HttpDetector::new(url, setup.timeout)),
        (None, None) => {
            return Err(Error::Config(format!(
                "no detector to check: pass --command or --url, set detector.command, or export {DETECTOR_CMD_ENV}"
            )))
        }
    };
    let mut env = GoalEnv::new(cfg.train.sim.clone(), Conditioning::OneHot, None)?;
    println!("state  goal          detections  best_score  iou_vs_oracle  latency_ms");
    for k in 0..a.states {
        let seed = rng::derive_seed(a.seed, &[k as u64]);
        env.reset_random_goal(seed, ObjectSet::InDistribution, cfg.eval.n_objects.iter().copied().max().unwrap_or(3))?;
        let state = env.sim().state().expect("reset above");
        let prompt = env.goal().expect("reset above").label_text.clone();
        let camera = env.sim().camera(setup.resolution);
        let frame = render(state, &camera);
        let t = Instant::now();
        let dets = client.detect(&frame, &prompt, setup.threshold)?;
        let ms = t.elapsed().as_secs_f64() * 1e3;
        let truth = detect_oracle(state, &camera, &prompt)?;
        let best = dets.iter().max_by(|x, y| x.score.total_cmp(&y.score));
        let overlap = match (best, truth.first()) {
            (Some(b), Some(t)) => format!("{:.3}", iou(&b.bbox, &t.bbox)),
            _ => "-".into(),
        };
        println!(
            "{k:<5}  {prompt:<12}  {:>10}  {:>10}  {overlap:>13}  {ms:>10.1}",
            dets.len(),
            best.map_or("-".into(), |b| format!("{:.3}", b.score)),
        );
    }
    println!("detector answered {} requests with well-formed responses", a.states);
    Ok(())
}

fn cmd_dump(a: DumpArgs) -> Result<()> {
    if a.reference {
        print!("{}", RunConfig::reference());
        return Ok(());
    }
    let cfg = load_config(&a.common)?;
    cfg.validate()?;
    print!("{}", cfg.dump());
    Ok(())
}
