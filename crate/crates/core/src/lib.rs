//! Desk-scale reinforcement-finetuning lab: mixed on-/off-policy proximal
//! policy gradients with experience replay, dual-anchor KL regularization,
//! and policy reincarnation, trained on deterministic token tasks with
//! verifiable binary rewards.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`env`]: token tasks, problems, the verifier, and trajectories
//! - [`policy`]: the linear-softmax policy/value model and its gradients
//! - [`advantage`]: GAE, its truncated-importance-weight variant, and
//!   group-relative advantages
//! - [`objective`]: clipped surrogates, KL penalties, and the composite loss
//! - [`replay`]: the historical-policy buffer and mixed batch sampling
//! - [`trainer`]: the two-stage training loop
//! - [`metrics`]: pass@1 evaluation, ratio diagnostics, and the CSV sink
//! - [`config`]: typed run configuration and the config-file parser
//! - [`checkpoint`]: versioned state serialization and the run driver

pub mod advantage;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod metrics;
pub mod objective;
pub mod policy;
pub mod replay;
pub mod seeding;
pub mod trainer;

pub use advantage::{gae, group_advantage, vtrace_gae, AdvantageRecord, GaeConfig};
pub use checkpoint::{load_checkpoint, run_training, save_checkpoint, Checkpoint, RunOutput};
pub use config::{parse_config, parse_config_str, Algo, RunConfig};
pub use env::{sample_problem, verify, Problem, TaskKind, TaskSpec, Token, Trajectory};
pub use error::{Error, Result};
pub use metrics::{evaluate_pass1, ratio_profile, read_metrics, MetricsRow, MetricsWriter};
pub use objective::{
    composite_loss, composite_loss_with_grad, kl_convex, kl_estimate, mixppg_term, ppo_clip_term,
    value_loss, LossBreakdown, LossCoeffs, Provenance, Stage,
};
pub use policy::{greedy_decode, rollout, sgd_step, GradBuffer, PolicyParams, PolicySnapshot};
pub use replay::{HistoryBuffer, MixedBatch, MixedUnit};
pub use trainer::{lambda_schedule, Trainer};
