//! Mask-based goal conditioning for reach-and-grasp reinforcement learning.
//!
//! The crate bundles a planar tabletop simulator with an egocentric camera,
//! three interchangeable grounded-detector backends, the goal-conditioning
//! encoders built on top of them, a small actor-critic network with exact
//! hand-written gradients, a PPO trainer and an evaluation harness.
//!
//! Module map:
//!
//! - [`sim`]: world state, object catalog, kinematics, contact and reward.
//! - [`camera`]: egocentric rasterizer and ground-truth box projection.
//! - [`detector`]: oracle, simulated-noise and external-process detectors.
//! - [`goal`]: one-hot, goal-image and binary-mask goal conditioning.
//! - [`nn`]: tensors, conv/linear layers, Gaussian policy, checkpoints.
//! - [`ppo`]: rollout collection, GAE, clipped-surrogate updates, training.
//! - [`eval`]: frozen-policy evaluation and the distractor ablation grid.
//! - [`config`]: the flat `section.key = value` run configuration.

pub mod camera;
pub mod config;
pub mod detector;
pub mod error;
pub mod eval;
pub mod goal;
pub mod nn;
pub mod ppo;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
