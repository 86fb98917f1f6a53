//! Advantage estimation: GAE, its off-policy variant with truncated
//! importance weights, and the group-relative estimator.
//!
//! The off-policy recursion runs backward over a trajectory with per-token
//! truncated weights `c_t = min(cbar, ratio_t)`:
//!
//! ```text
//! delta_t = r_t + gamma * V(s_{t+1}) - V(s_t)
//! A_t     = delta_t + gamma * lambda * c_t * A_{t+1}
//! RTG_t   = A_t * c_t + V(s_t)
//! ```
//!
//! With all ratios equal to 1 this reduces exactly to standard GAE.

use crate::env::Trajectory;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Discounting and truncation parameters for the advantage recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaeConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Truncation ceiling for the per-token importance weight.
    pub cbar: f64,
}

impl Default for GaeConfig {
    fn default() -> Self {
        GaeConfig {
            gamma: 1.0,
            gae_lambda: 0.95,
            cbar: 1.0,
        }
    }
}

/// Per-token outputs of the advantage recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageRecord {
    pub delta: Vec<f64>,
    /// Truncated importance weights, each in `[0, cbar]`.
    pub c: Vec<f64>,
    pub advantage: Vec<f64>,
    /// Return-to-go value targets.
    pub rtg: Vec<f64>,
}

fn check_lengths(traj: &Trajectory, values: &[f64], logprobs: &[f64]) -> Result<()> {
    let n = traj.response.len();
    if values.len() != n || logprobs.len() != n || traj.behavior_logprobs.len() != n {
        return Err(Error::Config(format!(
            "advantage input length mismatch: response {}, values {}, logprobs {}, behavior {}",
            n,
            values.len(),
            logprobs.len(),
            traj.behavior_logprobs.len()
        )));
    }
    Ok(())
}

fn recurse(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    c: Vec<f64>,
    cfg: &GaeConfig,
) -> AdvantageRecord {
    let n = rewards.len();
    let mut delta = vec![0.0; n];
    for t in 0..n {
        let next_v = if t + 1 < n { values[t + 1] } else { bootstrap };
        delta[t] = rewards[t] + cfg.gamma * next_v - values[t];
    }
    let mut advantage = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        advantage[t] = delta[t] + cfg.gamma * cfg.gae_lambda * c[t] * next_adv;
        next_adv = advantage[t];
    }
    let rtg: Vec<f64> = (0..n).map(|t| advantage[t] * c[t] + values[t]).collect();
    AdvantageRecord {
        delta,
        c,
        advantage,
        rtg,
    }
}

/// Off-policy advantage estimation with truncated importance weights
/// computed from current-policy vs behavior log-probs.
///
/// `values` holds the current critic's estimate for each pre-token state;
/// `bootstrap` is the value past the final token (0 for finished episodes).
pub fn vtrace_gae(
    traj: &Trajectory,
    values: &[f64],
    bootstrap: f64,
    current_logprobs: &[f64],
    cfg: &GaeConfig,
) -> Result<AdvantageRecord> {
    check_lengths(traj, values, current_logprobs)?;
    let c: Vec<f64> = current_logprobs
        .iter()
        .zip(&traj.behavior_logprobs)
        .map(|(&cur, &beh)| cfg.cbar.min((cur - beh).exp()))
        .collect();
    Ok(recurse(&traj.reward_sequence(), values, bootstrap, c, cfg))
}

/// On-policy advantage estimation: the same recursion with every truncated
/// weight forced to 1.
pub fn gae(
    traj: &Trajectory,
    values: &[f64],
    bootstrap: f64,
    cfg: &GaeConfig,
) -> Result<AdvantageRecord> {
    check_lengths(traj, values, &traj.behavior_logprobs)?;
    let c = vec![1.0; traj.response.len()];
    Ok(recurse(&traj.reward_sequence(), values, bootstrap, c, cfg))
}

/// Group-relative advantages: standardize terminal rewards within a group of
/// rollouts for the same prompt (population std, epsilon-guarded).
pub fn group_advantage(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Config(format!(
            "group advantage needs at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / (std + 1e-6)).collect())
}
