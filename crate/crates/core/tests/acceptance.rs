//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Criterion 6 runs live. Criteria 1 to 5 read the artifacts of a recorded
//! experiment from `$MGRL_RESULTS` (default `<workspace>/results`):
//!
//! ```text
//! sweep/{variant}/seed_{s}/metrics.csv   mgrl sweep --variants onehot,goalimage,mask-gt,mask-sim --seeds 10 --eval --out results/sweep
//! sweep/eval/{variant}.csv
//! ablation/eval/ablation.csv             mgrl ablation --condition mask-gt=results/sweep/mask-gt \
//!                                            --condition mask-sim=results/sweep/mask-sim --out results/ablation
//! ```
//!
//! Missing or partial results fail the criterion.

mod suite;

use std::path::{Path, PathBuf};
use std::time::Instant;

use maskgrasp::eval::{mean_se, CellAggregate, EvalReport, MeanSe};
use maskgrasp::ppo::{read_metrics, IterationMetrics};
use maskgrasp::sim::{ObjectSet, SimConfig};

const SEEDS: usize = 10;
const MASK_GT_MIN_SUCCESS: f64 = 0.80;
const ONEHOT_MAX_SUCCESS: f64 = 0.40;
const OOD_MAX_GAP: f64 = 0.10;
const GOALIMAGE_MIN_OOD_DROP: f64 = 0.20;
const FINAL_RETURN_FACTOR: f64 = 1.2;
const CHECKPOINT_EVERY: usize = 10;
const MASK_MAX_LEN_FRACTION: f64 = 0.5;
const BASELINE_MIN_LEN_FRACTION: f64 = 0.9;
const DISTRACTOR_MIN_DROP: f64 = 0.10;
const SUITE_BUDGET_S: f64 = 300.0;

type Outcome = Result<String, String>;

fn results_dir() -> PathBuf {
    std::env::var_os("MGRL_RESULTS")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../results"))
}

fn load_report(path: &Path) -> Result<EvalReport, String> {
    EvalReport::read_csv(path).map_err(|e| format!("no recorded evaluation: {e}"))
}

fn cell<'a>(aggs: &'a [CellAggregate], train: &str, set: ObjectSet, n: Option<usize>) -> Result<&'a CellAggregate, String> {
    let c = aggs
        .iter()
        .find(|a| a.train_backend == train && a.object_set == set && n.is_none_or(|n| a.n_objects == n))
        .ok_or_else(|| format!("no {train} {} cell recorded", set.as_str()))?;
    if c.n_seeds < SEEDS {
        return Err(format!(
            "{train} {} has {} of {SEEDS} seeds (success {:.2})",
            set.as_str(),
            c.n_seeds,
            c.success.mean
        ));
    }
    Ok(c)
}

fn variant_cells(results: &Path, variant: &str) -> Result<Vec<CellAggregate>, String> {
    Ok(load_report(&results.join("sweep/eval").join(format!("{variant}.csv")))?.aggregate())
}

fn conditioning_ordering(results: &Path) -> Outcome {
    let mut s = Vec::new();
    for v in ["mask-gt", "goalimage", "onehot"] {
        let aggs = variant_cells(results, v)?;
        s.push(cell(&aggs, v, ObjectSet::InDistribution, None)?.success.mean);
    }
    let (mask, image, onehot) = (s[0], s[1], s[2]);
    let detail = format!("in-distribution success mask-gt {mask:.2}, goal-image {image:.2}, one-hot {onehot:.2}");
    if mask > image && image > onehot && mask >= MASK_GT_MIN_SUCCESS && onehot <= ONEHOT_MAX_SUCCESS {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ood_robustness(results: &Path) -> Outcome {
    let m = variant_cells(results, "mask-gt")?;
    let g = variant_cells(results, "goalimage")?;
    let (mi, mo) = (
        cell(&m, "mask-gt", ObjectSet::InDistribution, None)?.success.mean,
        cell(&m, "mask-gt", ObjectSet::Ood, None)?.success.mean,
    );
    let (gi, go) = (
        cell(&g, "goalimage", ObjectSet::InDistribution, None)?.success.mean,
        cell(&g, "goalimage", ObjectSet::Ood, None)?.success.mean,
    );
    let detail = format!("mask-gt {mi:.2} -> {mo:.2}, goal-image {gi:.2} -> {go:.2}");
    if (mi - mo).abs() <= OOD_MAX_GAP && gi - go >= GOALIMAGE_MIN_OOD_DROP {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Mean return across seeds at every recorded iteration.
fn curve(results: &Path, variant: &str) -> Result<Vec<(IterationMetrics, MeanSe)>, String> {
    let mut runs = Vec::new();
    for s in 0..SEEDS {
        let p = results.join("sweep").join(variant).join(format!("seed_{s}/metrics.csv"));
        if let Ok(m) = read_metrics(&p) {
            runs.push(m);
        }
    }
    if runs.len() < SEEDS {
        return Err(format!("{variant}: {} of {SEEDS} training runs recorded", runs.len()));
    }
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    if len == 0 {
        return Err(format!("{variant}: empty metrics"));
    }
    Ok((0..len)
        .map(|i| (runs[0][i].clone(), mean_se(&runs.iter().map(|r| r[i].mean_return).collect::<Vec<_>>())))
        .collect())
}

fn learning_curves(results: &Path) -> Outcome {
    let mask = curve(results, "mask-gt")?;
    let baselines = [curve(results, "goalimage")?, curve(results, "onehot")?];
    let total = mask.last().map(|(m, _)| m.timesteps).unwrap_or(0);
    for (i, (m, r)) in mask.iter().enumerate() {
        let is_checkpoint = m.iteration % CHECKPOINT_EVERY == 0 || i + 1 == mask.len();
        if !is_checkpoint || 2 * m.timesteps <= total {
            continue;
        }
        for b in &baselines {
            let Some((_, br)) = b.get(i) else {
                return Err(format!("baseline curve ends before iteration {}", m.iteration));
            };
            if r.mean < br.mean {
                return Err(format!("iteration {}: mask-gt return {:.3} below baseline {:.3}", m.iteration, r.mean, br.mean));
            }
        }
    }
    let fin = |c: &[(IterationMetrics, MeanSe)]| c.last().map(|(_, r)| *r).expect("non-empty curve");
    let mf = fin(&mask);
    let best = baselines.iter().map(|b| fin(b)).max_by(|a, b| a.mean.total_cmp(&b.mean)).expect("two baselines");
    let needed = if best.mean > 0.0 { FINAL_RETURN_FACTOR * best.mean } else { best.mean + (FINAL_RETURN_FACTOR - 1.0) * best.mean.abs() };
    let separated = baselines.iter().all(|b| {
        let r = fin(b);
        mf.mean - mf.se > r.mean + r.se
    });
    let detail = format!(
        "final return mask-gt {:.3} ± {:.3}, best baseline {:.3} ± {:.3} (needs ≥ {needed:.3}, bands separated: {separated})",
        mf.mean, mf.se, best.mean, best.se
    );
    if mf.mean >= needed && separated {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn episode_lengths(results: &Path) -> Outcome {
    let max = f64::from(SimConfig::default().max_episode_length);
    let len = |v: &str| -> Result<f64, String> {
        Ok(cell(&variant_cells(results, v)?, v, ObjectSet::InDistribution, None)?.ep_len.mean)
    };
    let (m, g, o) = (len("mask-gt")?, len("goalimage")?, len("onehot")?);
    let detail = format!(
        "mean eval length mask-gt {m:.1} (≤ {:.0}), goal-image {g:.1}, one-hot {o:.1} (≥ {:.0})",
        MASK_MAX_LEN_FRACTION * max,
        BASELINE_MIN_LEN_FRACTION * max
    );
    if m <= MASK_MAX_LEN_FRACTION * max && g >= BASELINE_MIN_LEN_FRACTION * max && o >= BASELINE_MIN_LEN_FRACTION * max {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn distractor_degradation(results: &Path) -> Outcome {
    let aggs = load_report(&results.join("ablation/eval/ablation.csv"))?.aggregate();
    let pick = |train: &str, n: usize| -> Result<f64, String> {
        let c = cell(&aggs, train, ObjectSet::InDistribution, Some(n))?;
        if c.eval_backend != "simulated" {
            return Err(format!("{train} n={n} evaluated with {} instead of the simulated detector", c.eval_backend));
        }
        Ok(c.success.mean)
    };
    let gt: Vec<f64> = (1..=3).map(|n| pick("mask-gt", n)).collect::<Result<_, _>>()?;
    let sim: Vec<f64> = (1..=3).map(|n| pick("mask-sim", n)).collect::<Result<_, _>>()?;
    let detail = format!(
        "GT-trained {:.2}/{:.2}/{:.2}, detector-trained {:.2}/{:.2}/{:.2}",
        gt[0], gt[1], gt[2], sim[0], sim[1], sim[2]
    );
    let monotone = gt[0] >= gt[1] && gt[1] >= gt[2] && gt[2] <= gt[0] - DISTRACTOR_MIN_DROP;
    if monotone && gt.iter().zip(&sim).all(|(g, s)| g > s) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn property_suites() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let stub = Path::new(env!("CARGO_BIN_EXE_mgrl-echo-detector"));
    let checks: Vec<(&str, Box<dyn Fn() -> suite::Check>)> = vec![
        ("GAE oracle", Box::new(|| suite::gae_oracle(1000))),
        ("finite differences", Box::new(suite::gradient_checks)),
        ("mask invariants", Box::new(suite::mask_invariants)),
        ("projection/render", Box::new(|| suite::projection_render_consistency(100))),
        ("zero-noise detector", Box::new(|| suite::zero_noise_matches_oracle(100))),
        ("threshold", Box::new(suite::threshold_filtering)),
        ("determinism", Box::new(|| suite::training_determinism(tmp.path()))),
        ("loopback", Box::new(|| suite::external_loopback(stub))),
    ];
    for (name, check) in &checks {
        let t = Instant::now();
        match check() {
            Ok(s) => println!("    {name}: ok in {:.1} s ({s})", t.elapsed().as_secs_f64()),
            Err(e) => return Err(format!("{name}: {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs <= SUITE_BUDGET_S {
        Ok(format!("{} suites in {secs:.0} s (budget {SUITE_BUDGET_S:.0} s)", checks.len()))
    } else {
        Err(format!("suites passed but took {secs:.0} s (budget {SUITE_BUDGET_S:.0} s)"))
    }
}

fn main() {
    let results = results_dir();
    println!("acceptance (recorded results: {})", results.display());
    let criteria: [(&str, Box<dyn Fn() -> Outcome>); 6] = [
        ("1 conditioning ordering", Box::new(|| conditioning_ordering(&results))),
        ("2 out-of-distribution robustness", Box::new(|| ood_robustness(&results))),
        ("3 learning curves", Box::new(|| learning_curves(&results))),
        ("4 episode lengths", Box::new(|| episode_lengths(&results))),
        ("5 distractor degradation", Box::new(|| distractor_degradation(&results))),
        ("6 property suites", Box::new(property_suites)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        match check() {
            Ok(d) => println!("PASS criterion {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {name}: {d}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
