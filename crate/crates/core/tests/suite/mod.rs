//! Checks shared by the integration tests and the acceptance target. Each
//! returns a short summary on success and a description of the first
//! mismatch otherwise.

#![allow(dead_code)]

use std::path::Path;

use maskgrasp::camera::{project_bbox, render};
use maskgrasp::detector::external::{DetectorClient, ProcessDetector};
use maskgrasp::detector::{detect_oracle, detect_simulated, filter_threshold, BBox, Detection, NoiseProfile};
use maskgrasp::goal::{mask_from_bbox, DetectorBackend, MaskPipeline};
use maskgrasp::nn::layers::{conv_backward, conv_forward, linear_backward, linear_forward, relu_backward, relu_inplace, ConvGeom};
use maskgrasp::nn::{entropy, forward, log_prob, log_prob_grad, ConvSpec, NetInput, NetSpec, PolicyParams};
use maskgrasp::ppo::{compute_gae, compute_gae_terminal, loss_and_grads, train, Conditioning, GoalEnv, LossCoefs, Minibatch, TrainConfig};
use maskgrasp::sim::{Action, ObjectSet, SimConfig, TabletopEnv, WorldState};
use maskgrasp::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

pub const FD_EPS: f64 = 1e-3;
pub const FD_REL_TOL: f64 = 1e-3;
pub const GAE_TOL: f64 = 1e-9;
pub const THRESHOLD: f64 = 0.55;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

// ---------------------------------------------------------------- GAE

/// Forward sum of discounted TD errors up to the first episode end.
fn gae_forward_oracle(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    terminated: &[bool],
    truncated: &[bool],
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            let mut coef = 1.0;
            for k in t..n {
                let boot = if terminated[k] { 0.0 } else { gamma * next_values[k] };
                acc += coef * (rewards[k] + boot - values[k]);
                if terminated[k] || truncated[k] {
                    break;
                }
                coef *= gamma * lambda;
            }
            acc
        })
        .collect()
}

/// λ-return minus the value, from the n-step returns of an uninterrupted
/// trajectory (`values` carries the bootstrap as its last entry).
fn gae_lambda_return_oracle(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|t| {
            let horizon = n - t;
            let nstep = |m: usize| {
                let mut g = 0.0;
                for i in 0..m {
                    g += gamma.powi(i as i32) * rewards[t + i];
                }
                g + gamma.powi(m as i32) * values[t + m]
            };
            let mut lam = 0.0;
            for m in 1..horizon {
                lam += (1.0 - lambda) * lambda.powi(m as i32 - 1) * nstep(m);
            }
            lam += lambda.powi(horizon as i32 - 1) * nstep(horizon);
            lam - values[t]
        })
        .collect()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

pub fn gae_oracle(instances: usize) -> Check {
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for case in 0..instances {
        let n = r.gen_range(1..=64);
        let rewards = uniform(&mut r, n, -1.0, 1.0);
        let values = uniform(&mut r, n, -2.0, 2.0);
        let next_values = uniform(&mut r, n, -2.0, 2.0);
        let terminated: Vec<bool> = (0..n).map(|_| r.gen_bool(0.05)).collect();
        let truncated: Vec<bool> = (0..n).map(|_| r.gen_bool(0.03)).collect();
        let gamma = r.gen_range(0.9..=1.0);
        let lambda = r.gen_range(0.0..=1.0);
        let (adv, ret) = compute_gae(&rewards, &values, &next_values, &terminated, &truncated, gamma, lambda)
            .map_err(|e| e.to_string())?;
        let want = gae_forward_oracle(&rewards, &values, &next_values, &terminated, &truncated, gamma, lambda);
        for t in 0..n {
            worst = worst.max((adv[t] - want[t]).abs());
            if !close(adv[t], want[t], GAE_TOL) || !close(ret[t], want[t] + values[t], GAE_TOL) {
                return Err(format!("case {case} step {t}: advantage {} vs oracle {}", adv[t], want[t]));
            }
        }

        // Uninterrupted trajectory against the λ-return form.
        let boot = uniform(&mut r, n + 1, -2.0, 2.0);
        let (adv, _) = compute_gae_terminal(&rewards, &boot, &vec![false; n], gamma, lambda).map_err(|e| e.to_string())?;
        let want = gae_lambda_return_oracle(&rewards, &boot, gamma, lambda);
        for t in 0..n {
            worst = worst.max((adv[t] - want[t]).abs());
            if !close(adv[t], want[t], GAE_TOL) {
                return Err(format!("case {case} step {t}: advantage {} vs λ-return {}", adv[t], want[t]));
            }
        }
    }
    Ok(format!("{instances} instances, max abs error {worst:.1e}"))
}

// ---------------------------------------------------------------- gradients

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-9 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Compare analytic gradients with central differences of `loss` over
/// every coordinate of `x`.
fn fd_compare(name: &str, x: &mut [f64], analytic: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_EPS;
        let lp = loss(x);
        x[i] = orig - FD_EPS;
        let lm = loss(x);
        x[i] = orig;
        let numeric = (lp - lm) / (2.0 * FD_EPS);
        let e = rel_err(analytic[i], numeric);
        worst = worst.max(e);
        if e > FD_REL_TOL {
            return Err(format!("{name}[{i}]: analytic {} numeric {numeric} (rel {e:.2e})", analytic[i]));
        }
    }
    Ok(worst)
}

fn conv_check() -> Result<f64, String> {
    let mut r = rng(21);
    let batch = 2;
    let g = ConvGeom::new(2, 3, 3, 2, 7, 7).map_err(|e| e.to_string())?;
    let mut w = uniform(&mut r, g.out_ch * g.patch(), -0.5, 0.5);
    let mut b = uniform(&mut r, g.out_ch, -0.5, 0.5);
    let mut x = uniform(&mut r, g.in_ch * batch * g.in_h * g.in_w, -1.0, 1.0);
    let probe = uniform(&mut r, g.out_ch * batch * g.positions(), -1.0, 1.0);
    let dot = |y: Vec<f64>| y.iter().zip(&probe).map(|(a, b)| a * b).sum::<f64>();
    let (mut dw, mut db, mut dx) = (vec![0.0; w.len()], vec![0.0; b.len()], vec![0.0; x.len()]);
    conv_backward(&w, &x, &probe, &g, batch, &mut dw, &mut db, Some(&mut dx));
    let (w0, b0, x0) = (w.clone(), b.clone(), x.clone());
    let mut worst = fd_compare("conv.weight", &mut w, &dw, |w| dot(conv_forward(w, &b0, &x0, &g, batch)))?;
    worst = worst.max(fd_compare("conv.bias", &mut b, &db, |b| dot(conv_forward(&w0, b, &x0, &g, batch)))?);
    worst = worst.max(fd_compare("conv.input", &mut x, &dx, |x| dot(conv_forward(&w0, &b0, x, &g, batch)))?);
    Ok(worst)
}

fn linear_check() -> Result<f64, String> {
    let mut r = rng(22);
    let (batch, fan_in, out) = (3, 5, 4);
    let mut w = uniform(&mut r, out * fan_in, -0.5, 0.5);
    let mut b = uniform(&mut r, out, -0.5, 0.5);
    let mut x = uniform(&mut r, batch * fan_in, -1.0, 1.0);
    let probe = uniform(&mut r, batch * out, -1.0, 1.0);
    let dot = |y: Vec<f64>| y.iter().zip(&probe).map(|(a, b)| a * b).sum::<f64>();
    let (mut dw, mut db, mut dx) = (vec![0.0; w.len()], vec![0.0; b.len()], vec![0.0; x.len()]);
    linear_backward(&w, &x, &probe, batch, fan_in, &mut dw, &mut db, Some(&mut dx));
    let (w0, b0, x0) = (w.clone(), b.clone(), x.clone());
    let mut worst = fd_compare("linear.weight", &mut w, &dw, |w| dot(linear_forward(w, &b0, &x0, batch, fan_in)))?;
    worst = worst.max(fd_compare("linear.bias", &mut b, &db, |b| dot(linear_forward(&w0, b, &x0, batch, fan_in)))?);
    worst = worst.max(fd_compare("linear.input", &mut x, &dx, |x| dot(linear_forward(&w0, &b0, x, batch, fan_in)))?);
    Ok(worst)
}

fn relu_check() -> Result<f64, String> {
    let mut r = rng(23);
    // Keep every input away from the kink.
    let mut x: Vec<f64> = (0..40)
        .map(|_| {
            let v: f64 = r.gen_range(0.05..1.0);
            if r.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    let probe = uniform(&mut r, x.len(), -1.0, 1.0);
    let mut y = x.clone();
    relu_inplace(&mut y);
    let mut dy = probe.clone();
    relu_backward(&y, &mut dy);
    fd_compare("relu", &mut x, &dy, |x| {
        let mut y = x.to_vec();
        relu_inplace(&mut y);
        y.iter().zip(&probe).map(|(a, b)| a * b).sum()
    })
}

fn gaussian_check() -> Result<f64, String> {
    let mut r = rng(24);
    let a = uniform(&mut r, 4, -1.0, 1.0);
    let mut mean = uniform(&mut r, 4, -1.0, 1.0);
    let mut ls = uniform(&mut r, 4, -1.0, 0.5);
    let (dm, ds) = log_prob_grad(&mean, &ls, &a);
    let (m0, l0) = (mean.clone(), ls.clone());
    let mut worst = fd_compare("log_prob.mean", &mut mean, &dm, |m| log_prob(m, &l0, &a))?;
    worst = worst.max(fd_compare("log_prob.log_std", &mut ls, &ds, |l| log_prob(&m0, l, &a))?);
    let ones = vec![1.0; 4];
    worst = worst.max(fd_compare("entropy.log_std", &mut ls, &ones, |l| entropy(l))?);
    Ok(worst)
}

/// Eight-pixel micro network used by the full-loss check.
pub fn micro_spec() -> NetSpec {
    NetSpec {
        in_channels: 4,
        resolution: 8,
        flat_goal: 8,
        convs: vec![
            ConvSpec { out_channels: 4, kernel: 3, stride: 1 },
            ConvSpec { out_channels: 4, kernel: 3, stride: 2 },
        ],
        width: 6,
        trunk_layers: 2,
    }
}

pub fn micro_inputs(spec: &NetSpec, n: usize, seed: u64) -> Vec<NetInput> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| NetInput {
            image: (0..spec.in_channels * spec.resolution * spec.resolution).map(|_| r.gen_range(0.0f32..1.0)).collect(),
            channels: spec.in_channels,
            resolution: spec.resolution,
            proprio: std::array::from_fn(|_| r.gen_range(-1.0f32..1.0)),
            flat_goal: (0..spec.flat_goal).map(|k| if k == 2 { 1.0 } else { 0.0 }).collect(),
        })
        .collect()
}

fn full_loss_check() -> Result<f64, String> {
    let spec = micro_spec();
    // Central differences are only meaningful away from ReLU kinks; with
    // this initialization no pre-activation lies within one step of zero.
    let mut params: PolicyParams<f64> = PolicyParams::init(&spec, &mut rng(1));
    // Non-trivial standard deviations, inside the clamp range.
    let ls_idx = params.log_std_idx();
    params.tensors[ls_idx].data = vec![-0.3, 0.1, -0.6, 0.2];
    let inputs = micro_inputs(&spec, 6, 26);
    let refs: Vec<&NetInput> = inputs.iter().collect();
    let mut r = rng(27);
    let actions: Vec<[f32; 4]> = (0..6).map(|_| std::array::from_fn(|_| r.gen_range(-1.0f32..1.0))).collect();
    let (out, _) = forward(&params, &refs).map_err(|e| e.to_string())?;
    // Ratios placed inside the clip range and clipped on either side, away
    // from the kinks at 1 ± 0.1.
    let ratios = [0.7, 0.95, 1.05, 1.3, 0.98, 1.2];
    let old_log_probs: Vec<f64> = (0..6)
        .map(|i| {
            let a: Vec<f64> = actions[i].iter().map(|&v| f64::from(v)).collect();
            log_prob(&out.mean[i * 4..i * 4 + 4], &out.log_std, &a) - f64::ln(ratios[i])
        })
        .collect();
    let advantages = [1.0, -0.8, 0.6, -1.2, -0.5, 0.9];
    let returns = [0.5, -0.3, 1.2, 0.0, -1.0, 0.7];
    let coefs = LossCoefs { clip: 0.1, entropy_coef: 0.01, vf_coef: 0.5 };
    let mb = Minibatch {
        inputs: &refs,
        actions: &actions,
        old_log_probs: &old_log_probs,
        advantages: &advantages,
        returns: &returns,
    };
    let (_, grads) = loss_and_grads(&params, &mb, &coefs).map_err(|e| e.to_string())?;
    let names: Vec<String> = spec.param_shapes().into_iter().map(|(n, _)| n).collect();
    let mut worst = 0.0f64;
    for ti in 0..params.tensors.len() {
        let mut data = params.tensors[ti].data.clone();
        let analytic = grads.tensors[ti].data.clone();
        let mut p = params.clone();
        worst = worst.max(fd_compare(&names[ti], &mut data, &analytic, |d| {
            p.tensors[ti].data.copy_from_slice(d);
            loss_and_grads(&p, &mb, &coefs).map(|(s, _)| s.total).unwrap_or(f64::NAN)
        })?);
    }
    Ok(worst)
}

pub fn gradient_checks() -> Check {
    let mut parts = Vec::new();
    for (name, f) in [
        ("conv", conv_check as fn() -> Result<f64, String>),
        ("linear", linear_check),
        ("relu", relu_check),
        ("gaussian", gaussian_check),
        ("full loss", full_loss_check),
    ] {
        let worst = f()?;
        parts.push(format!("{name} {worst:.1e}"));
    }
    Ok(format!("max relative error: {}", parts.join(", ")))
}

// ---------------------------------------------------------------- masks

/// Random visited states: resets followed by a few random moves.
pub fn random_states(n: usize, seed: u64) -> Vec<WorldState> {
    let mut env = TabletopEnv::new(SimConfig::default());
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let set = if r.gen_bool(0.5) { ObjectSet::InDistribution } else { ObjectSet::Ood };
        let k = r.gen_range(1..=5);
        let labels: Vec<&str> = set.labels().collect();
        let goal = labels[r.gen_range(0..labels.len())];
        if env.reset(r.gen(), set, k, goal).is_err() {
            continue;
        }
        for _ in 0..r.gen_range(0..40) {
            let a = Action::new(std::array::from_fn(|_| r.gen_range(-1.0..1.0)), r.gen_range(-1.0..1.0));
            if env.step(a).map(|o| o.terminated || o.truncated).unwrap_or(true) {
                break;
            }
        }
        out.push(env.state().expect("reset").clone());
    }
    out
}

pub fn mask_invariants() -> Check {
    let full = mask_from_bbox(Some(&BBox::full()), 16, 12);
    if full.ones() != 16 * 12 {
        return Err(format!("full-frame box gave {} ones", full.ones()));
    }
    let empty = mask_from_bbox(None, 16, 12);
    if empty.ones() != 0 {
        return Err("missing box gave a non-empty mask".into());
    }
    let quarter = BBox::new(0.25, 0.25, 0.75, 0.75).map_err(|e| e.to_string())?;
    let m = mask_from_bbox(Some(&quarter), 8, 8);
    for y in 0..8 {
        for x in 0..8 {
            let want = u8::from((2..=5).contains(&x) && (2..=5).contains(&y));
            if m.get(x, y) != want {
                return Err(format!("8x8 centered box: pixel ({x},{y}) is {}", m.get(x, y)));
            }
        }
    }
    if m.ones() != 16 {
        return Err(format!("8x8 centered box gave {} ones", m.ones()));
    }
    let mut r = rng(31);
    for _ in 0..2000 {
        let (w, h) = (r.gen_range(8..80), r.gen_range(8..80));
        let (a, b) = (r.gen_range(0.0..1.0), r.gen_range(0.0..1.0));
        let (c, d) = (r.gen_range(0.0..1.0), r.gen_range(0.0..1.0));
        let bb = BBox::new(f64::min(a, b), f64::min(c, d), f64::max(a, b), f64::max(c, d)).map_err(|e| e.to_string())?;
        let m = mask_from_bbox(Some(&bb), w, h);
        if m.data.iter().any(|&v| v > 1) {
            return Err("mask value outside {0, 1}".into());
        }
        let (bw, bh) = ((bb.x1 - bb.x0) * w as f64, (bb.y1 - bb.y0) * h as f64);
        let lo = ((bw - 1.0).max(0.0)) * ((bh - 1.0).max(0.0));
        let hi = (bw + 1.0) * (bh + 1.0);
        let n = m.ones() as f64;
        if n < lo.floor() || n > hi.ceil() {
            return Err(format!("{w}x{h} mask of {bb:?} has {n} ones, box covers {:.1} px", bw * bh));
        }
    }
    Ok("binarity, full/empty, 8x8 count and 2000 area cases".into())
}

/// Every rendered pixel of an object, drawn alone, lies within its
/// projected box grown by one pixel.
pub fn projection_render_consistency(states: usize) -> Check {
    let rig = SimConfig::default().camera;
    let mut compared = 0usize;
    for (si, state) in random_states(states, 32).into_iter().enumerate() {
        for object in &state.objects {
            let single = WorldState {
                objects: vec![object.clone()],
                goal_index: 0,
                ..state.clone()
            };
            let res = 64;
            let camera = maskgrasp::camera::CameraModel::egocentric(state.ee_pos, &rig, res);
            let frame = render(&single, &camera);
            let mut ext = [usize::MAX, usize::MAX, 0, 0];
            let mut any = false;
            for y in 0..res {
                for x in 0..res {
                    if frame.pixel(x, y) == object.color {
                        any = true;
                        ext = [ext[0].min(x), ext[1].min(y), ext[2].max(x + 1), ext[3].max(y + 1)];
                    }
                }
            }
            match project_bbox(object, &camera) {
                None if any => return Err(format!("state {si}: {} rendered but not projected", object.label_text)),
                None => {}
                Some(_) if !any => {}
                Some(b) => {
                    let want = [b.x0 * res as f64, b.y0 * res as f64, b.x1 * res as f64, b.y1 * res as f64];
                    let inside = ext[0] as f64 >= want[0] - 1.0
                        && ext[1] as f64 >= want[1] - 1.0
                        && ext[2] as f64 <= want[2] + 1.0
                        && ext[3] as f64 <= want[3] + 1.0;
                    {
                        if !inside {
                            return Err(format!(
                                "state {si}: {} rendered extent {ext:?} px vs projected {want:?} px",
                                object.label_text
                            ));
                        }
                    }
                    compared += 1;
                }
            }
        }
    }
    Ok(format!("{compared} rendered objects inside their boxes (±1 px)"))
}

// ---------------------------------------------------------------- detector

pub fn zero_noise_matches_oracle(states: usize) -> Check {
    let rig = SimConfig::default().camera;
    let zero = NoiseProfile::zero();
    let mut visible = 0;
    for (i, state) in random_states(states, 41).into_iter().enumerate() {
        let camera = maskgrasp::camera::CameraModel::egocentric(state.ee_pos, &rig, 128);
        let prompt = state.goal().label_text;
        let oracle = detect_oracle(&state, &camera, prompt).map_err(|e| e.to_string())?;
        let sim = detect_simulated(&state, &camera, prompt, &zero, i as u64).map_err(|e| e.to_string())?;
        if oracle != sim {
            return Err(format!("state {i}: oracle {oracle:?} vs zero-noise {sim:?}"));
        }
        let mut a = MaskPipeline::oracle();
        let mut b = MaskPipeline::new(DetectorBackend::Simulated(zero.clone()), 128);
        let policy_cam = camera.with_resolution(64, 64);
        let ma = a.goal_mask(&state, &policy_cam, prompt, i as u64, true).map_err(|e| e.to_string())?;
        let mb = b.goal_mask(&state, &policy_cam, prompt, i as u64, true).map_err(|e| e.to_string())?;
        if ma != mb {
            return Err(format!("state {i}: masks differ"));
        }
        visible += usize::from(!oracle.is_empty());
    }
    Ok(format!("{states} states identical ({visible} with the goal in view)"))
}

pub fn threshold_filtering() -> Check {
    let mut r = rng(42);
    let bbox = BBox::new(0.1, 0.1, 0.4, 0.5).map_err(|e| e.to_string())?;
    for case in 0..500 {
        let mut dets: Vec<Detection> = (0..r.gen_range(0..12))
            .map(|_| Detection {
                bbox,
                score: r.gen_range(0.0..1.0),
                phrase: "apple".into(),
            })
            .collect();
        for s in [THRESHOLD, f64::from_bits(THRESHOLD.to_bits() - 1), f64::from_bits(THRESHOLD.to_bits() + 1)] {
            if r.gen_bool(0.3) {
                dets.push(Detection { bbox, score: s, phrase: "apple".into() });
            }
        }
        let want: Vec<Detection> = dets.iter().filter(|d| d.score >= 0.55).cloned().collect();
        let kept = filter_threshold(dets, THRESHOLD);
        if kept != want {
            return Err(format!("case {case}: kept {} detections, expected {}", kept.len(), want.len()));
        }
    }
    Ok("500 random detection sets, boundary scores included".into())
}

// ---------------------------------------------------------------- loopback

pub fn echo_command(stub: &Path, args: &str) -> String {
    format!("'{}' {args}", stub.display())
}

pub fn external_loopback(stub: &Path) -> Check {
    let boxes: [[f64; 4]; 2] = [[0.1, 0.2, 0.30000000000000004, 0.4], [1.0 / 3.0, 0.0, 2.0 / 3.0, 0.987654321012345]];
    let scores: [f64; 2] = [0.9, 0.5500000000000001];
    let args: Vec<String> = boxes
        .iter()
        .zip(scores)
        .map(|(b, s)| format!("--box {:?},{:?},{:?},{:?},{s:?}", b[0], b[1], b[2], b[3]))
        .collect();
    let timeout = std::time::Duration::from_secs(10);
    let mut client = ProcessDetector::spawn(&echo_command(stub, &args.join(" ")), timeout).map_err(|e| e.to_string())?;
    let frame = maskgrasp::camera::Frame::filled(32, 32, [0.2, 0.4, 0.6]);
    for round in 0..3 {
        let dets = client.detect(&frame, "mug", THRESHOLD).map_err(|e| e.to_string())?;
        if dets.len() != boxes.len() {
            return Err(format!("round {round}: {} detections returned", dets.len()));
        }
        for (d, (b, s)) in dets.iter().zip(boxes.iter().zip(scores)) {
            let got = d.bbox.to_array();
            if got.iter().zip(b).any(|(x, y)| x.to_bits() != y.to_bits()) || d.score.to_bits() != s.to_bits() || d.phrase != "mug" {
                return Err(format!("round {round}: sent {b:?}/{s}, received {got:?}/{}", d.score));
            }
        }
    }

    let mut bad = ProcessDetector::spawn(&echo_command(stub, "--malformed"), timeout).map_err(|e| e.to_string())?;
    match bad.detect(&frame, "mug", THRESHOLD) {
        Err(Error::ProtocolError(_)) => {}
        other => return Err(format!("malformed reply gave {other:?} instead of a protocol error")),
    }

    // First request answered, every later one malformed: the episode starts
    // with a real mask and then falls back to the empty one.
    let client = ProcessDetector::spawn(&echo_command(stub, "--box 0,0,1,1 --malformed-after 1"), timeout).map_err(|e| e.to_string())?;
    let pipeline = MaskPipeline::new(DetectorBackend::External(Box::new(client)), 64);
    let sim = SimConfig { policy_resolution: 16, ..SimConfig::default() };
    let mut env = GoalEnv::new(sim, Conditioning::Mask, Some(pipeline)).map_err(|e| e.to_string())?;
    let plane = 16 * 16;
    let first = env.reset(1, ObjectSet::InDistribution, 3, "apple").map_err(|e| e.to_string())?;
    if first.image[3 * plane..].iter().any(|&v| v != 1.0) {
        return Err("full-frame echo box did not give an all-ones first mask".into());
    }
    let next = env.step(Action::new([0.0; 3], 0.0)).map_err(|e| e.to_string())?;
    if next.input.image[3 * plane..].iter().any(|&v| v != 0.0) {
        return Err("malformed mid-episode reply did not fall back to the empty mask".into());
    }

    let client = ProcessDetector::spawn(&echo_command(stub, "--malformed"), timeout).map_err(|e| e.to_string())?;
    let pipeline = MaskPipeline::new(DetectorBackend::External(Box::new(client)), 64);
    let mut env = GoalEnv::new(SimConfig { policy_resolution: 16, ..SimConfig::default() }, Conditioning::Mask, Some(pipeline))
        .map_err(|e| e.to_string())?;
    match env.reset(1, ObjectSet::InDistribution, 3, "apple") {
        Err(Error::ProtocolError(_)) => {}
        other => return Err(format!("malformed reply at episode start gave {:?}", other.map(|_| ()))),
    }
    Ok("boxes bit-exact over 3 rounds; malformed replies raise a protocol error and fall back to the empty mask".into())
}

// ---------------------------------------------------------------- determinism

pub const DETERMINISM_STEPS: usize = 10_000;

pub fn training_determinism(tmp: &Path) -> Check {
    let config = TrainConfig {
        seed: 7,
        total_timesteps: DETERMINISM_STEPS,
        ..TrainConfig::default()
    };
    let mut csvs = Vec::new();
    let mut finals = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.join(run);
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        train(config.clone(), Some(&dir)).map_err(|e| e.to_string())?;
        csvs.push(std::fs::read(dir.join("metrics.csv")).map_err(|e| e.to_string())?);
        finals.push(std::fs::read(dir.join("final.bin")).map_err(|e| e.to_string())?);
    }
    if csvs[0] != csvs[1] {
        return Err("metrics CSVs of two identically seeded runs differ".into());
    }
    if finals[0] != finals[1] {
        return Err("final checkpoints of two identically seeded runs differ".into());
    }
    let rows = String::from_utf8_lossy(&csvs[0]).lines().count() - 1;
    Ok(format!("two {}-step runs: identical metrics ({rows} rows) and checkpoints", config.iterations() * config.buffer_size()))
}
