//! Frozen-policy evaluation: success rate, episode length and return per
//! (object set × object count) cell, aggregated over seeds, plus the
//! train-backend × object-count ablation table.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{forward, Checkpoint, NetInput, PolicyParams, ACTION_DIM};
use crate::ppo::{BackendKind, Conditioning, DetectorSetup, GoalEnv, Variant};
use crate::rng::{self, tag};
use crate::sim::{pad_contact, Action, ObjectSet, SimConfig, SuccessCriterion};
use crate::{Error, Result};

pub const REPORT_HEADER: &str =
    "train_backend,eval_backend,object_set,n_objects,criterion,seed,success_rate,mean_ep_len,mean_return";

/// Chooses actions for a batch of environments.
pub trait Controller {
    fn name(&self) -> String;

    fn conditioning(&self) -> Conditioning;

    fn act(&mut self, envs: &[&GoalEnv], inputs: &[&NetInput]) -> Result<Vec<[f32; ACTION_DIM]>>;
}

/// Deterministic policy: the Gaussian mean, no sampling.
pub struct NetworkController {
    pub params: PolicyParams<f32>,
    pub variant: Variant,
}

impl NetworkController {
    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        Ok(NetworkController {
            variant: ck.variant.parse()?,
            params: ck.params,
        })
    }
}

impl Controller for NetworkController {
    fn name(&self) -> String {
        self.variant.to_string()
    }

    fn conditioning(&self) -> Conditioning {
        self.variant.conditioning()
    }

    fn act(&mut self, _envs: &[&GoalEnv], inputs: &[&NetInput]) -> Result<Vec<[f32; ACTION_DIM]>> {
        let (out, _) = forward(&self.params, inputs)?;
        Ok(out
            .mean
            .chunks_exact(ACTION_DIM)
            .map(|m| [m[0], m[1], m[2], m[3]])
            .collect())
    }
}

/// Privileged controller that reads the true goal position: descend onto
/// the grasp point with the gripper open, then close.
pub struct ScriptedController {
    pub conditioning: Conditioning,
}

impl Controller for ScriptedController {
    fn name(&self) -> String {
        "scripted".into()
    }

    fn conditioning(&self) -> Conditioning {
        self.conditioning
    }

    fn act(&mut self, envs: &[&GoalEnv], _inputs: &[&NetInput]) -> Result<Vec<[f32; ACTION_DIM]>> {
        Ok(envs
            .iter()
            .map(|env| {
                let sim = env.sim();
                let s = sim.state().expect("reset before acting");
                let scale = sim.config().action_scale;
                let g = s.goal().grasp_point();
                let target = [g[0], g[1], 0.5 * g[2]];
                let d: Vec<f64> = (0..3).map(|k| (target[k] - s.ee_pos[k]) / scale).collect();
                let aligned = d[0].abs() * scale < 0.005 && d[1].abs() * scale < 0.005 && s.ee_pos[2] <= g[2];
                let grip = if aligned { 1.0 } else { -1.0 };
                [d[0] as f32, d[1] as f32, d[2] as f32, grip]
            })
            .collect())
    }
}

/// Uniform random actions in [-1, 1].
pub struct RandomController {
    pub conditioning: Conditioning,
    pub rng: ChaCha8Rng,
}

impl Controller for RandomController {
    fn name(&self) -> String {
        "random".into()
    }

    fn conditioning(&self) -> Conditioning {
        self.conditioning
    }

    fn act(&mut self, envs: &[&GoalEnv], _inputs: &[&NetInput]) -> Result<Vec<[f32; ACTION_DIM]>> {
        Ok(envs
            .iter()
            .map(|_| std::array::from_fn(|_| self.rng.gen_range(-1.0f32..=1.0)))
            .collect())
    }
}

/// Evaluation protocol shared by every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSpec {
    /// One checkpoint evaluated at every seed, or one checkpoint per seed.
    pub checkpoints: Vec<PathBuf>,
    pub episodes: usize,
    pub object_sets: Vec<ObjectSet>,
    pub n_objects: Vec<usize>,
    /// Detector used for mask conditioning during evaluation.
    pub backend: BackendKind,
    pub criterion: SuccessCriterion,
    pub seeds: Vec<u64>,
    pub sim: SimConfig,
    pub detector: DetectorSetup,
    /// Environments stepped together in one network batch.
    pub batch: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            checkpoints: Vec::new(),
            episodes: 100,
            object_sets: vec![ObjectSet::InDistribution, ObjectSet::Ood],
            n_objects: vec![3],
            backend: BackendKind::Oracle,
            criterion: SuccessCriterion::SinglePad,
            seeds: (0..10).collect(),
            sim: SimConfig::default(),
            detector: DetectorSetup::default(),
            batch: 100,
        }
    }
}

impl EvalSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.episodes == 0 {
            return bad("eval.episodes must be at least 1");
        }
        if self.seeds.is_empty() || self.object_sets.is_empty() || self.n_objects.is_empty() {
            return bad("eval.seeds, eval.object_sets and eval.n_objects must be non-empty");
        }
        if self.batch == 0 {
            return bad("eval.batch must be at least 1");
        }
        for &set in &self.object_sets {
            for &n in &self.n_objects {
                let avail = set.entries().len().min(crate::sim::SLOTS.len());
                if n == 0 || n > avail {
                    return Err(Error::TooManyObjects {
                        requested: n,
                        available: avail,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Outcome of one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOutcome {
    pub success: bool,
    pub length: u32,
    pub ret: f64,
    /// Whether one pad / both pads touched the goal at any step.
    pub single_contact: bool,
    pub both_contact: bool,
}

/// One (cell, seed) row of the report.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub train_backend: String,
    pub eval_backend: String,
    pub object_set: ObjectSet,
    pub n_objects: usize,
    pub criterion: SuccessCriterion,
    pub seed: u64,
    pub success_rate: f64,
    pub mean_ep_len: f64,
    pub mean_return: f64,
    pub episodes: usize,
}

impl CellResult {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.train_backend,
            self.eval_backend,
            self.object_set.as_str(),
            self.n_objects,
            self.criterion.as_str(),
            self.seed,
            self.success_rate,
            self.mean_ep_len,
            self.mean_return
        )
    }

    pub fn parse_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 9 {
            return Err(Error::InvalidValue(format!("report row with {} fields: `{line}`", f.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidValue(format!("number `{s}` in report row")))
        };
        Ok(CellResult {
            train_backend: f[0].to_string(),
            eval_backend: f[1].to_string(),
            object_set: f[2].parse()?,
            n_objects: f[3]
                .parse()
                .map_err(|_| Error::InvalidValue(format!("object count `{}`", f[3])))?,
            criterion: f[4].parse()?,
            seed: f[5].parse().map_err(|_| Error::InvalidValue(format!("seed `{}`", f[5])))?,
            success_rate: num(f[6])?,
            mean_ep_len: num(f[7])?,
            mean_return: num(f[8])?,
            episodes: 0,
        })
    }
}

/// Mean ± standard error over seeds for one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAggregate {
    pub train_backend: String,
    pub eval_backend: String,
    pub object_set: ObjectSet,
    pub n_objects: usize,
    pub criterion: SuccessCriterion,
    pub n_seeds: usize,
    pub success: MeanSe,
    pub ep_len: MeanSe,
    pub ret: MeanSe,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

/// Mean and standard error (sample standard deviation over √n; zero for a
/// single value).
pub fn mean_se(values: &[f64]) -> MeanSe {
    let n = values.len() as f64;
    if values.is_empty() {
        return MeanSe {
            mean: f64::NAN,
            se: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return MeanSe { mean, se: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    MeanSe {
        mean,
        se: var.sqrt() / n.sqrt(),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<CellResult>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
        fs::write(path, self.to_csv()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse_csv(&text)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(REPORT_HEADER) {
            return Err(Error::InvalidValue("report CSV lacks the expected header".into()));
        }
        let rows = lines
            .filter(|l| !l.trim().is_empty())
            .map(CellResult::parse_row)
            .collect::<Result<_>>()?;
        Ok(EvalReport { rows })
    }

    pub fn merge(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
    }

    /// Aggregates in first-appearance order of the cell keys.
    pub fn aggregate(&self) -> Vec<CellAggregate> {
        let mut keys: Vec<(String, String, ObjectSet, usize, SuccessCriterion)> = Vec::new();
        for r in &self.rows {
            let k = (r.train_backend.clone(), r.eval_backend.clone(), r.object_set, r.n_objects, r.criterion);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(tb, eb, set, n, crit)| {
                let rows: Vec<&CellResult> = self
                    .rows
                    .iter()
                    .filter(|r| r.train_backend == tb && r.eval_backend == eb && r.object_set == set && r.n_objects == n && r.criterion == crit)
                    .collect();
                let col = |f: fn(&CellResult) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<_>>();
                CellAggregate {
                    n_seeds: rows.len(),
                    success: mean_se(&col(|r| r.success_rate)),
                    ep_len: mean_se(&col(|r| r.mean_ep_len)),
                    ret: mean_se(&col(|r| r.mean_return)),
                    train_backend: tb,
                    eval_backend: eb,
                    object_set: set,
                    n_objects: n,
                    criterion: crit,
                }
            })
            .collect()
    }

    /// Aligned human-readable summary of [`EvalReport::aggregate`].
    pub fn table(&self) -> String {
        let mut rows = vec![[
            "train".to_string(),
            "eval".to_string(),
            "objects".to_string(),
            "n".to_string(),
            "criterion".to_string(),
            "seeds".to_string(),
            "success".to_string(),
            "ep_len".to_string(),
            "return".to_string(),
        ]];
        for a in self.aggregate() {
            rows.push([
                a.train_backend,
                a.eval_backend,
                a.object_set.as_str().to_string(),
                a.n_objects.to_string(),
                a.criterion.as_str().to_string(),
                a.n_seeds.to_string(),
                format!("{:.3} ± {:.3}", a.success.mean, a.success.se),
                format!("{:.1} ± {:.1}", a.ep_len.mean, a.ep_len.se),
                format!("{:.2} ± {:.2}", a.ret.mean, a.ret.se),
            ]);
        }
        align(&rows)
    }
}

fn align<const N: usize>(rows: &[[String; N]]) -> String {
    let widths: Vec<usize> = (0..N).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

/// Label of the mask backend (or of the conditioning when it has none).
pub fn eval_backend_label(conditioning: Conditioning, backend: BackendKind) -> String {
    match conditioning {
        Conditioning::Mask => backend.to_string(),
        other => other.as_str().to_string(),
    }
}

/// Runs `episodes` episodes in batches and returns their outcomes in
/// episode order.
#[allow(clippy::too_many_arguments)]
pub fn run_episodes(
    controller: &mut dyn Controller,
    sim: &SimConfig,
    detector: &DetectorSetup,
    backend: BackendKind,
    object_set: ObjectSet,
    n_objects: usize,
    seed: u64,
    episodes: usize,
    batch: usize,
) -> Result<Vec<EpisodeOutcome>> {
    let conditioning = controller.conditioning();
    let mut outcomes = Vec::with_capacity(episodes);
    let mut envs: Vec<GoalEnv> = Vec::new();
    let set_tag = match object_set {
        ObjectSet::InDistribution => 0,
        ObjectSet::Ood => 1,
    };
    for start in (0..episodes).step_by(batch.max(1)) {
        let count = batch.min(episodes - start);
        while envs.len() < count {
            let pipeline = match conditioning {
                Conditioning::Mask => Some(detector.pipeline(backend)?),
                _ => None,
            };
            envs.push(GoalEnv::new(sim.clone(), conditioning, pipeline)?);
        }
        let mut inputs = Vec::with_capacity(count);
        for (i, env) in envs.iter_mut().take(count).enumerate() {
            let ep_seed = rng::derive_seed(seed, &[tag::EVAL, set_tag, n_objects as u64, (start + i) as u64]);
            inputs.push(Some(env.reset_random_goal(ep_seed, object_set, n_objects)?));
        }
        let mut results: Vec<EpisodeOutcome> = vec![
            EpisodeOutcome {
                success: false,
                length: 0,
                ret: 0.0,
                single_contact: false,
                both_contact: false,
            };
            count
        ];
        loop {
            let active: Vec<usize> = (0..count).filter(|&i| inputs[i].is_some()).collect();
            if active.is_empty() {
                break;
            }
            let env_refs: Vec<&GoalEnv> = active.iter().map(|&i| &envs[i]).collect();
            let in_refs: Vec<&NetInput> = active.iter().map(|&i| inputs[i].as_ref().expect("active")).collect();
            let actions = controller.act(&env_refs, &in_refs)?;
            for (k, &i) in active.iter().enumerate() {
                let step = envs[i].step(Action::from_slice(&actions[k]))?;
                let r = &mut results[i];
                r.length += 1;
                r.ret += step.reward;
                let s = envs[i].sim().state().expect("running");
                let contact = pad_contact(s, s.goal());
                r.single_contact |= contact.0 || contact.1;
                r.both_contact |= contact.0 && contact.1;
                if step.terminated || step.truncated {
                    r.success = step.terminated;
                    inputs[i] = None;
                } else {
                    inputs[i] = Some(step.input);
                }
            }
        }
        outcomes.extend(results);
    }
    Ok(outcomes)
}

fn summarize(outcomes: &[EpisodeOutcome]) -> (f64, f64, f64) {
    let n = outcomes.len() as f64;
    (
        outcomes.iter().filter(|o| o.success).count() as f64 / n,
        outcomes.iter().map(|o| f64::from(o.length)).sum::<f64>() / n,
        outcomes.iter().map(|o| o.ret).sum::<f64>() / n,
    )
}

/// Evaluate one controller at one seed over every cell of `spec`.
pub fn evaluate_controller(
    spec: &EvalSpec,
    controller: &mut dyn Controller,
    train_backend: &str,
    seed: u64,
) -> Result<Vec<CellResult>> {
    spec.validate()?;
    let mut sim = spec.sim.clone();
    sim.criterion = spec.criterion;
    let eval_backend = eval_backend_label(controller.conditioning(), spec.backend);
    let mut rows = Vec::new();
    for &set in &spec.object_sets {
        for &n in &spec.n_objects {
            let outcomes = run_episodes(
                controller,
                &sim,
                &spec.detector,
                spec.backend,
                set,
                n,
                seed,
                spec.episodes,
                spec.batch,
            )?;
            debug_assert_eq!(outcomes.len(), spec.episodes);
            let (success_rate, mean_ep_len, mean_return) = summarize(&outcomes);
            log::info!(
                "{train_backend} -> {eval_backend} {} n={n} seed {seed}: success {success_rate:.3} len {mean_ep_len:.1}",
                set.as_str()
            );
            rows.push(CellResult {
                train_backend: train_backend.to_string(),
                eval_backend: eval_backend.clone(),
                object_set: set,
                n_objects: n,
                criterion: spec.criterion,
                seed,
                success_rate,
                mean_ep_len,
                mean_return,
                episodes: outcomes.len(),
            });
        }
    }
    Ok(rows)
}

/// Evaluate the checkpoints of `spec`. `expected` optionally pins the
/// conditioning the checkpoints must have been trained with.
pub fn evaluate(spec: &EvalSpec, expected: Option<Conditioning>) -> Result<EvalReport> {
    spec.validate()?;
    if spec.checkpoints.is_empty() {
        return Err(Error::Config("no checkpoint given for evaluation".into()));
    }
    if spec.checkpoints.len() != 1 && spec.checkpoints.len() != spec.seeds.len() {
        return Err(Error::Config(format!(
            "{} checkpoints for {} seeds: give one checkpoint, or one per seed",
            spec.checkpoints.len(),
            spec.seeds.len()
        )));
    }
    let mut report = EvalReport::default();
    for (k, &seed) in spec.seeds.iter().enumerate() {
        let path = &spec.checkpoints[if spec.checkpoints.len() == 1 { 0 } else { k }];
        let ck = Checkpoint::load(path)?;
        let mut controller = NetworkController::from_checkpoint(ck)?;
        if let Some(c) = expected {
            if controller.conditioning() != c {
                return Err(Error::CheckpointVariantMismatch {
                    expected: c.as_str().to_string(),
                    found: controller.variant.to_string(),
                });
            }
        }
        let label = controller.variant.to_string();
        report.rows.extend(evaluate_controller(spec, &mut controller, &label, seed)?);
    }
    Ok(report)
}

/// Train-condition × object-count cross table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub report: EvalReport,
}

impl AblationTable {
    /// Rows: training condition; columns: object count (success mean ± SE).
    pub fn text(&self) -> String {
        let aggs = self.report.aggregate();
        let mut counts: Vec<(ObjectSet, usize)> = Vec::new();
        let mut conds: Vec<String> = Vec::new();
        for a in &aggs {
            if !counts.contains(&(a.object_set, a.n_objects)) {
                counts.push((a.object_set, a.n_objects));
            }
            if !conds.contains(&a.train_backend) {
                conds.push(a.train_backend.clone());
            }
        }
        let mut header = vec!["train \\ eval".to_string()];
        header.extend(counts.iter().map(|(s, n)| format!("{} n={n}", s.as_str())));
        let mut rows = vec![header];
        for c in &conds {
            let mut row = vec![c.clone()];
            for (s, n) in &counts {
                let cell = aggs
                    .iter()
                    .find(|a| &a.train_backend == c && a.object_set == *s && a.n_objects == *n)
                    .map(|a| format!("{:.2} ± {:.2}", a.success.mean, a.success.se))
                    .unwrap_or_else(|| "-".into());
                row.push(cell);
            }
            rows.push(row);
        }
        let n_cols = rows[0].len();
        let widths: Vec<usize> = (0..n_cols).map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}

/// Evaluate every training condition (one checkpoint per seed each) under
/// the template's evaluation backend and object counts.
pub fn ablation_grid(conditions: &[(String, Vec<PathBuf>)], template: &EvalSpec) -> Result<AblationTable> {
    if conditions.is_empty() || conditions.iter().any(|(_, c)| c.is_empty()) {
        return Err(Error::Config("ablation needs at least one checkpoint per training condition".into()));
    }
    let mut report = EvalReport::default();
    for (_, checkpoints) in conditions {
        let spec = EvalSpec {
            checkpoints: checkpoints.clone(),
            ..template.clone()
        };
        report.merge(evaluate(&spec, Some(Conditioning::Mask))?);
    }
    Ok(AblationTable { report })
}
