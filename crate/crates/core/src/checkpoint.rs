//! Versioned checkpoint format: a JSON dump of all weights, reference
//! snapshots, counters, and the seed/step pair that determines every future
//! random draw. Optionally includes the replay buffer so a run can resume
//! exactly where it stopped.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricsRow;
use crate::objective::Stage;
use crate::policy::{PolicyParams, PolicySnapshot};
use crate::replay::HistoryBuffer;
use crate::trainer::Trainer;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Current checkpoint format version.
pub const CHECKPOINT_FORMAT: u32 = 1;

/// Complete serialized training state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: RunConfig,
    /// Together with `step`, fully determines all future random streams.
    pub run_seed: u64,
    pub step: u64,
    pub stage: Stage,
    pub live: PolicyParams,
    pub base: PolicySnapshot,
    pub prev: PolicySnapshot,
    pub anchor: PolicySnapshot,
    pub reincarnated_at: Option<u64>,
    pub fresh_rollouts_cum: u64,
    pub updates_applied: u64,
    pub last_pass1: f64,
    /// Replay buffer contents; `None` for weight-only checkpoints.
    pub buffer: Option<HistoryBuffer>,
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let json = serde_json::to_string(checkpoint)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let checkpoint: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("malformed checkpoint {}: {e}", path.display())))?;
    if checkpoint.format_version != CHECKPOINT_FORMAT {
        return Err(Error::Config(format!(
            "unsupported checkpoint format version {} (expected {CHECKPOINT_FORMAT})",
            checkpoint.format_version
        )));
    }
    Ok(checkpoint)
}

/// Outcome of a completed run.
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    pub final_pass1: f64,
}

/// Drive a full training run: write one metrics row per step, checkpoint at
/// the eval cadence and at the end. On a halting error the state is dumped
/// to the checkpoint path (when given) for diagnosis.
pub fn run_training(
    cfg: &RunConfig,
    seed: u64,
    metrics_path: Option<&Path>,
    checkpoint_path: Option<&Path>,
) -> Result<RunOutput> {
    let mut trainer = Trainer::new(cfg.clone(), seed)?;
    let mut writer = match metrics_path {
        Some(p) => Some(crate::metrics::MetricsWriter::create(
            p,
            cfg.profile_buckets,
        )?),
        None => None,
    };
    let mut rows = Vec::with_capacity(cfg.total_steps as usize);
    for _ in 0..cfg.total_steps {
        let row = match trainer.train_step() {
            Ok(row) => row,
            Err(e) => {
                if let Some(p) = checkpoint_path {
                    let dump = p.with_extension("dump.json");
                    let _ = save_checkpoint(&dump, &trainer.checkpoint(true));
                    log::error!("run halted: {e}; state dumped to {}", dump.display());
                }
                return Err(e);
            }
        };
        if let Some(w) = writer.as_mut() {
            w.write_row(&row)?;
        }
        let t = row.step;
        rows.push(row);
        if let Some(p) = checkpoint_path {
            if t % cfg.eval_every == 0 || t == cfg.total_steps {
                save_checkpoint(p, &trainer.checkpoint(true))?;
            }
        }
    }
    let final_pass1 = rows.last().map(|r| r.pass1).unwrap_or(f64::NAN);
    Ok(RunOutput { rows, final_pass1 })
}

impl Trainer {
    /// Serialize the complete training state.
    pub fn checkpoint(&self, include_buffer: bool) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT,
            config: self.config().clone(),
            run_seed: self.run_seed(),
            step: self.steps_done(),
            stage: self.stage(),
            live: self.live().clone(),
            base: self.base().clone(),
            prev: self.prev_snapshot().clone(),
            anchor: self.anchor().clone(),
            reincarnated_at: self.reincarnated_at(),
            fresh_rollouts_cum: self.fresh_rollouts_cum(),
            updates_applied: self.updates_applied(),
            last_pass1: self.last_pass1(),
            buffer: include_buffer.then(|| self.buffer().clone()),
        }
    }

    /// Rebuild a trainer from a checkpoint that includes the buffer;
    /// continues the exact step/seed streams of the original run.
    pub fn resume(checkpoint: Checkpoint) -> Result<Self> {
        if checkpoint.buffer.is_none() && checkpoint.config.algo.is_remix() {
            if let Some(t) = checkpoint.config.reincarnation_t {
                if checkpoint.step < t {
                    return Err(Error::Config(
                        "cannot resume a mix-stage run from a weight-only checkpoint \
                         (no replay buffer stored)"
                            .into(),
                    ));
                }
            } else {
                return Err(Error::Config(
                    "cannot resume a mix-stage run from a weight-only checkpoint \
                     (no replay buffer stored)"
                        .into(),
                ));
            }
        }
        Trainer::from_parts(checkpoint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Algo, RunConfig};

    fn cfg() -> RunConfig {
        RunConfig {
            algo: Algo::RemixPpo,
            batch_size: 10,
            total_steps: 10,
            reincarnation_t: Some(6),
            eval_every: 5,
            eval_size: 20,
            warmup_steps: 5,
            ..RunConfig::default()
        }
    }

    #[test]
    fn checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let mut tr = Trainer::new(cfg(), 5).unwrap();
        for _ in 0..3 {
            tr.train_step().unwrap();
        }
        let ck = tr.checkpoint(true);
        save_checkpoint(&path, &ck).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.step, 3);
        assert_eq!(loaded.live, *tr.live());
        assert_eq!(loaded.run_seed, 5);
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_run() {
        let mut straight = Trainer::new(cfg(), 11).unwrap();
        let full: Vec<_> = (0..8)
            .map(|_| straight.train_step().unwrap().to_record())
            .collect();

        let mut first = Trainer::new(cfg(), 11).unwrap();
        let mut head: Vec<_> = (0..4)
            .map(|_| first.train_step().unwrap().to_record())
            .collect();
        let ck = first.checkpoint(true);
        let mut resumed = Trainer::resume(ck).unwrap();
        head.extend((0..4).map(|_| resumed.train_step().unwrap().to_record()));

        assert_eq!(full, head);
        assert_eq!(straight.live(), resumed.live());
    }

    #[test]
    fn run_training_writes_metrics_and_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let metrics = dir.path().join("m.csv");
        let ck = dir.path().join("ck.json");
        let out = run_training(&cfg(), 2, Some(&metrics), Some(&ck)).unwrap();
        assert_eq!(out.rows.len(), 10);
        let parsed = crate::metrics::read_metrics(&metrics).unwrap();
        assert_eq!(parsed.len(), 10);
        assert!(load_checkpoint(&ck).unwrap().step == 10);
    }

    #[test]
    fn format_version_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let tr = Trainer::new(cfg(), 5).unwrap();
        let mut ck = tr.checkpoint(false);
        ck.format_version = 99;
        save_checkpoint(&path, &ck).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
