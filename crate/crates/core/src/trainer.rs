//! The two-stage training loop: mixed on-/off-policy proximal policy
//! gradient with an update-to-data ratio, followed by policy reincarnation
//! (anchor reset plus a switch to pure on-policy updates).
//!
//! One step of the mixed stage: snapshot the live policy, roll out the fresh
//! share of the batch, mix in replayed trajectories, compute advantages once
//! with truncated importance weights, apply `m` gradient updates on that
//! fixed batch, then push the snapshot and fresh data into the history
//! buffer. The on-policy stage rolls out full batches and applies a single
//! update per step with the KL anchored to the reincarnated reference.

use crate::advantage::{gae, group_advantage, vtrace_gae};
use crate::config::RunConfig;
use crate::env::{sample_problem, Trajectory};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsRow};
use crate::objective::{
    composite_loss_with_grad, LossBreakdown, PreparedBatch, PreparedItem, PreparedToken, Stage,
};
use crate::policy::{rollout, sgd_step, GradBuffer, PolicyParams, PolicySnapshot};
use crate::replay::{HistoryBuffer, MixedBatch};
use crate::seeding::{self, domain};
use rand::Rng;

/// KL-convex decay schedule: full weight on the base anchor until `offset`,
/// then a 0.1 drop every 10 steps, floored at 0.5.
pub fn lambda_schedule(t: u64, offset: u64) -> f64 {
    let delayed = t.saturating_sub(offset);
    let k = delayed.div_ceil(10);
    (1.0 - 0.1 * k as f64).max(0.5)
}

/// Training loop state for one run.
pub struct Trainer {
    cfg: RunConfig,
    run_seed: u64,
    steps_done: u64,
    stage: Stage,
    live: PolicyParams,
    base: PolicySnapshot,
    prev: PolicySnapshot,
    /// Current KL base anchor: the base model, then the reincarnated
    /// reference after the stage transition.
    anchor: PolicySnapshot,
    reincarnated_at: Option<u64>,
    buffer: HistoryBuffer,
    fresh_rollouts_cum: u64,
    updates_applied: u64,
    last_pass1: f64,
}

impl Trainer {
    /// Build a trainer: validate the config, initialize the policy, run the
    /// supervised warmup that stands in for a pretrained base model, and
    /// freeze the base/anchor snapshots.
    pub fn new(cfg: RunConfig, run_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut live = PolicyParams::new_zero(cfg.context_window, cfg.task.alphabet_size());
        warmup(&mut live, &cfg, run_seed)?;
        let base = live.snapshot();
        let stage = if cfg.algo.is_remix() {
            Stage::Mix
        } else {
            Stage::Reincarnated
        };
        let mut trainer = Trainer {
            prev: base.clone(),
            anchor: base.clone(),
            base,
            buffer: HistoryBuffer::new(cfg.window_n),
            cfg,
            run_seed,
            steps_done: 0,
            stage,
            live,
            reincarnated_at: None,
            fresh_rollouts_cum: 0,
            updates_applied: 0,
            last_pass1: f64::NAN,
        };
        if trainer.cfg.algo.is_remix() && trainer.cfg.reincarnation_t == Some(0) {
            trainer.reincarnate()?;
        }
        Ok(trainer)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn run_seed(&self) -> u64 {
        self.run_seed
    }

    pub fn steps_done(&self) -> u64 {
        self.steps_done
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn live(&self) -> &PolicyParams {
        &self.live
    }

    pub fn base(&self) -> &PolicySnapshot {
        &self.base
    }

    pub fn anchor(&self) -> &PolicySnapshot {
        &self.anchor
    }

    pub fn prev_snapshot(&self) -> &PolicySnapshot {
        &self.prev
    }

    pub fn buffer(&self) -> &HistoryBuffer {
        &self.buffer
    }

    pub fn reincarnated_at(&self) -> Option<u64> {
        self.reincarnated_at
    }

    pub fn fresh_rollouts_cum(&self) -> u64 {
        self.fresh_rollouts_cum
    }

    pub fn updates_applied(&self) -> u64 {
        self.updates_applied
    }

    pub fn last_pass1(&self) -> f64 {
        self.last_pass1
    }

    /// Rebuild a trainer from checkpointed state (see the checkpoint module).
    pub(crate) fn from_parts(ck: crate::checkpoint::Checkpoint) -> Result<Self> {
        ck.config.validate()?;
        Ok(Trainer {
            buffer: ck
                .buffer
                .unwrap_or_else(|| HistoryBuffer::new(ck.config.window_n)),
            cfg: ck.config,
            run_seed: ck.run_seed,
            steps_done: ck.step,
            stage: ck.stage,
            live: ck.live,
            base: ck.base,
            prev: ck.prev,
            anchor: ck.anchor,
            reincarnated_at: ck.reincarnated_at,
            fresh_rollouts_cum: ck.fresh_rollouts_cum,
            updates_applied: ck.updates_applied,
            last_pass1: ck.last_pass1,
        })
    }

    /// Reset the KL anchor to the current policy, drop the history buffer,
    /// and switch to the on-policy stage. Valid exactly once, at the
    /// configured reincarnation step.
    pub fn reincarnate(&mut self) -> Result<()> {
        if !self.cfg.algo.is_remix() {
            return Err(Error::Invariant(
                "reincarnation only applies to remix algorithms".into(),
            ));
        }
        if self.reincarnated_at.is_some() {
            return Err(Error::Invariant("reincarnate called twice".into()));
        }
        if self.stage != Stage::Mix {
            return Err(Error::Invariant(
                "reincarnation requires the mix stage".into(),
            ));
        }
        if self.cfg.reincarnation_t != Some(self.steps_done) {
            return Err(Error::Invariant(format!(
                "reincarnation at step {} but configured for {:?}",
                self.steps_done, self.cfg.reincarnation_t
            )));
        }
        self.anchor = self.live.snapshot();
        self.buffer.drop_all();
        self.stage = Stage::Reincarnated;
        self.reincarnated_at = Some(self.steps_done);
        log::info!(
            "reincarnated at step {}: anchor reset, buffer dropped",
            self.steps_done
        );
        Ok(())
    }

    /// Roll out `n_traj` fresh trajectories under the step-start snapshot,
    /// grouped into replay units.
    fn fresh_rollouts(
        &self,
        snapshot: &PolicySnapshot,
        t: u64,
        n_traj: usize,
    ) -> Vec<Vec<Trajectory>> {
        let task = &self.cfg.task;
        let unit_size = self.cfg.unit_size();
        debug_assert_eq!(n_traj % unit_size, 0);
        let units = n_traj / unit_size;
        (0..units)
            .map(|u| {
                let problem_id = seeding::train_problem_id(self.run_seed, t, u as u64);
                let problem = sample_problem(task, problem_id);
                (0..unit_size)
                    .map(|j| {
                        let slot = (u * unit_size + j) as u64;
                        let seed = seeding::derive_seed(self.run_seed, domain::ROLLOUT, t, slot);
                        rollout(snapshot, task, &problem, seed, task.max_resp_len)
                    })
                    .collect()
            })
            .collect()
    }

    /// Evaluate everything the loss needs that is fixed for the step:
    /// features, advantages under the step-start policy and critic, clip
    /// centers, and anchor log-probs.
    fn prepare_batch(&self, batch: &MixedBatch, pi_k: &PolicySnapshot) -> Result<PreparedBatch> {
        let task = &self.cfg.task;
        let gae_cfg = self.cfg.gae_config();
        let use_critic = self.cfg.use_critic();
        let mut prepared = PreparedBatch::default();
        for unit in &batch.units {
            let group_adv = if self.cfg.algo.is_grpo() {
                let rewards: Vec<f64> = unit.trajectories.iter().map(|t| t.reward).collect();
                Some(group_advantage(&rewards)?)
            } else {
                None
            };
            for (traj_idx, traj) in unit.trajectories.iter().enumerate() {
                let problem = sample_problem(task, traj.problem_id);
                let n = traj.response.len();
                let mut feats_per_tok = Vec::with_capacity(n);
                let mut cur_lps = Vec::with_capacity(n);
                let mut values = Vec::with_capacity(n);
                let mut prefix = Vec::with_capacity(n);
                for &tok in &traj.response {
                    let feats = pi_k.feature_map.features(&problem.prompt, &prefix);
                    cur_lps.push(pi_k.logprob(&feats, tok));
                    if use_critic {
                        values.push(pi_k.value(&feats));
                    }
                    feats_per_tok.push(feats);
                    prefix.push(tok);
                }
                let (advantages, rtgs) = if let Some(ga) = &group_adv {
                    (vec![ga[traj_idx]; n], vec![0.0; n])
                } else {
                    let record = match self.stage {
                        Stage::Mix => vtrace_gae(traj, &values, 0.0, &cur_lps, &gae_cfg)?,
                        Stage::Reincarnated => gae(traj, &values, 0.0, &gae_cfg)?,
                    };
                    (record.advantage, record.rtg)
                };
                let mut tokens = Vec::with_capacity(n);
                for (pos, &tok) in traj.response.iter().enumerate() {
                    let feats = &feats_per_tok[pos];
                    let base_lp = self.anchor.logprob(feats, tok);
                    let prev_lp = match self.stage {
                        Stage::Mix => self.prev.logprob(feats, tok),
                        Stage::Reincarnated => base_lp,
                    };
                    tokens.push(PreparedToken {
                        feats: feats.clone(),
                        action: tok,
                        behavior_lp: traj.behavior_logprobs[pos],
                        center: (cur_lps[pos] - traj.behavior_logprobs[pos]).exp(),
                        advantage: advantages[pos],
                        rtg: rtgs[pos],
                        base_lp,
                        prev_lp,
                        position: pos,
                    });
                }
                prepared.items.push(PreparedItem {
                    tokens,
                    provenance: unit.provenance,
                });
            }
        }
        Ok(prepared)
    }

    /// Run one training step and produce its metrics row.
    pub fn train_step(&mut self) -> Result<MetricsRow> {
        let t = self.steps_done + 1;
        if t > self.cfg.total_steps {
            return Err(Error::Invariant(format!(
                "run already completed its {} configured steps",
                self.cfg.total_steps
            )));
        }
        self.live.version = t;
        let pi_k = self.live.snapshot();
        let lambda = lambda_schedule(t, self.cfg.lambda_offset);

        let (batch, fresh_units, fresh_generated) = match self.stage {
            Stage::Mix => {
                let fresh = self.fresh_rollouts(&pi_k, t, self.cfg.fresh_per_mix_step());
                let generated: usize = fresh.iter().map(|u| u.len()).sum();
                let replay_seed = seeding::derive_seed(self.run_seed, domain::REPLAY, t, 0);
                let batch = self.buffer.sample_mixed(
                    fresh.clone(),
                    self.cfg.batch_size,
                    self.cfg.p,
                    self.cfg.unit_size(),
                    replay_seed,
                )?;
                (batch, fresh, generated)
            }
            Stage::Reincarnated => {
                let fresh = self.fresh_rollouts(&pi_k, t, self.cfg.batch_size);
                let generated: usize = fresh.iter().map(|u| u.len()).sum();
                (MixedBatch::all_fresh(fresh.clone()), fresh, generated)
            }
        };

        let mean_resp_len = {
            let (sum, n) = fresh_units
                .iter()
                .flat_map(|u| u.iter())
                .fold((0usize, 0usize), |(s, n), tr| (s + tr.len(), n + 1));
            sum as f64 / n as f64
        };
        let mean_abs_log_ratio = metrics::mean_abs_log_ratio(&batch, &self.cfg.task, &pi_k);
        let ratio_profile = metrics::ratio_profile(
            &batch,
            &self.cfg.task,
            &pi_k,
            self.cfg.profile_buckets,
            self.cfg.task.max_resp_len,
        );

        let prepared = self.prepare_batch(&batch, &pi_k)?;
        let updates = match self.stage {
            Stage::Mix => self.cfg.m,
            Stage::Reincarnated => 1,
        };
        let mut first_breakdown: Option<LossBreakdown> = None;
        for _ in 0..updates {
            let (breakdown, grad): (LossBreakdown, GradBuffer) = composite_loss_with_grad(
                &prepared,
                &self.live,
                self.stage,
                &self.cfg.loss_coeffs(),
                lambda,
                self.cfg.use_critic(),
            )?;
            sgd_step(&mut self.live, &grad, self.cfg.lr, self.cfg.grad_clip)?;
            self.updates_applied += 1;
            first_breakdown.get_or_insert(breakdown);
        }
        let breakdown = first_breakdown.expect("at least one update per step");

        if self.stage == Stage::Mix {
            self.buffer.push(pi_k.clone(), fresh_units)?;
            self.prev = pi_k;
        }
        self.fresh_rollouts_cum += fresh_generated as u64;
        self.steps_done = t;

        if t == 1 || t.is_multiple_of(self.cfg.eval_every) || t == self.cfg.total_steps {
            self.last_pass1 =
                metrics::evaluate_pass1(&self.live, &self.cfg.task, self.cfg.eval_size)?;
        }

        let row = MetricsRow {
            step: t,
            stage: self.stage,
            fresh_count: batch.fresh_count,
            replay_count: batch.replay_count,
            shortfall: batch.shortfall,
            fresh_rollouts_cum: self.fresh_rollouts_cum,
            pass1: self.last_pass1,
            mean_resp_len,
            mean_is_ratio: breakdown.mean_is_ratio,
            mean_abs_log_ratio,
            ratio_profile,
            policy_loss: breakdown.surrogate,
            value_loss: breakdown.value_loss,
            entropy: breakdown.entropy,
            kl_base: breakdown.kl_base,
            kl_prev: breakdown.kl_prev,
            lambda_t: lambda,
            clip_fraction: breakdown.clip_fraction,
            clamp_count: breakdown.clamp_count,
        };

        if self.cfg.algo.is_remix()
            && self.stage == Stage::Mix
            && self.cfg.reincarnation_t == Some(t)
        {
            self.reincarnate()?;
        }
        Ok(row)
    }
}

/// Supervised warmup: maximum-likelihood training on canonical gold
/// responses drawn from a small problem pool. Emulates starting from a
/// pretrained base model with partial task competence; with a verifiable
/// binary reward, a uniformly random policy would never see a learning
/// signal at these horizon lengths.
fn warmup(params: &mut PolicyParams, cfg: &RunConfig, run_seed: u64) -> Result<()> {
    let task = &cfg.task;
    let pool: Vec<u64> = (0..cfg.warmup_pool)
        .map(|i| {
            seeding::derive_seed(run_seed, domain::WARMUP_POOL, i as u64, 0)
                & (seeding::EVAL_ID_BASE - 1)
        })
        .collect();
    for wstep in 0..cfg.warmup_steps {
        let mut rng = seeding::stream_rng(run_seed, domain::WARMUP, wstep, 0);
        let mut grad = GradBuffer::zeros_like(params);
        let mut tokens = 0usize;
        for j in 0..cfg.warmup_batch {
            let problem_id = if pool.is_empty() {
                seeding::derive_seed(run_seed, domain::WARMUP, wstep, 1000 + j as u64)
                    & (seeding::EVAL_ID_BASE - 1)
            } else {
                pool[rng.random_range(0..pool.len())]
            };
            let problem = sample_problem(task, problem_id);
            let mut target = vec![task.answer_sep()];
            target.extend_from_slice(&problem.gold_answer);
            target.push(task.eos());
            let mut prefix: Vec<u32> = Vec::with_capacity(target.len());
            for &tok in &target {
                let feats = params.feature_map.features(&problem.prompt, &prefix);
                let lps = params.log_softmax(&feats);
                let dlogits: Vec<f64> = (0..params.alphabet())
                    .map(|b| lps[b].exp() - if b == tok as usize { 1.0 } else { 0.0 })
                    .collect();
                grad.add_logit_grad(&feats, &dlogits);
                tokens += 1;
                prefix.push(tok);
            }
        }
        if tokens > 0 {
            grad.scale(1.0 / tokens as f64);
            sgd_step(params, &grad, cfg.warmup_lr, cfg.grad_clip)?;
        }
    }
    Ok(())
}
