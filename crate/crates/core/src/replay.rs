//! Historical-policy buffer and the mixed on-/off-policy batch sampler.
//!
//! The buffer holds the last `N` policy snapshots together with the
//! trajectories (and their recorded log-probs) each one generated. Batches
//! mix freshly rolled-out trajectories with replayed ones in a `p` to
//! `1 - p` split; while the buffer is still filling up, the replay share is
//! backfilled by re-sampling the fresh items and the shortfall is reported.
//!
//! Replay units are whole trajectories, or whole rollout groups when
//! group-relative advantages are in use, so replayed items always retain a
//! valid baseline.

use crate::env::Trajectory;
use crate::error::{Error, Result};
use crate::objective::Provenance;
use crate::policy::PolicySnapshot;
use crate::seeding;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// One stored generation: the producing snapshot plus its rollout units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BufferEntry {
    pub snapshot: PolicySnapshot,
    /// Replay units: singleton vectors for per-trajectory replay, whole
    /// groups for group-advantage replay.
    pub units: Vec<Vec<Trajectory>>,
}

/// Sliding window of the most recent policy generations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryBuffer {
    entries: VecDeque<BufferEntry>,
    window: usize,
    /// Set after an explicit drop; sampling with a replay share is then an
    /// error until the buffer is repopulated.
    dropped: bool,
}

impl HistoryBuffer {
    pub fn new(window: usize) -> Self {
        HistoryBuffer {
            entries: VecDeque::new(),
            window,
            dropped: false,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn snapshot_count(&self) -> usize {
        self.entries.len()
    }

    pub fn unit_count(&self) -> usize {
        self.entries.iter().map(|e| e.units.len()).sum()
    }

    pub fn trajectory_count(&self) -> usize {
        self.entries
            .iter()
            .flat_map(|e| e.units.iter())
            .map(|u| u.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &BufferEntry> {
        self.entries.iter()
    }

    /// Append a generation; evicts the oldest entries beyond the window.
    /// The snapshot version must exceed every stored version.
    pub fn push(&mut self, snapshot: PolicySnapshot, units: Vec<Vec<Trajectory>>) -> Result<()> {
        if let Some(newest) = self.entries.back() {
            if snapshot.version() <= newest.snapshot.version() {
                return Err(Error::Invariant(format!(
                    "buffer push with non-increasing version: {} after {}",
                    snapshot.version(),
                    newest.snapshot.version()
                )));
            }
        }
        self.entries.push_back(BufferEntry { snapshot, units });
        while self.entries.len() > self.window {
            self.entries.pop_front();
        }
        self.dropped = false;
        Ok(())
    }

    /// Empty the buffer (reincarnation transition). Idempotent.
    pub fn drop_all(&mut self) {
        self.entries.clear();
        self.dropped = true;
    }

    fn unit_at(&self, mut index: usize) -> &Vec<Trajectory> {
        for entry in &self.entries {
            if index < entry.units.len() {
                return &entry.units[index];
            }
            index -= entry.units.len();
        }
        unreachable!("unit index out of range");
    }

    /// Form a mixed batch of `batch_size` trajectories from `fresh` units
    /// plus a `p` share replayed uniformly over all stored units. An
    /// underfull buffer backfills the replay share with re-sampled fresh
    /// units and reports the shortfall.
    pub fn sample_mixed(
        &self,
        fresh: Vec<Vec<Trajectory>>,
        batch_size: usize,
        p: f64,
        unit_size: usize,
        rng_seed: u64,
    ) -> Result<MixedBatch> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!(
                "off-policy portion p must lie in [0, 1], got {p}"
            )));
        }
        let replay_target = (p * batch_size as f64).round() as usize;
        if !replay_target.is_multiple_of(unit_size)
            || !(batch_size - replay_target).is_multiple_of(unit_size)
        {
            return Err(Error::Config(format!(
                "batch split {replay_target}/{} is not divisible into units of {unit_size}",
                batch_size - replay_target
            )));
        }
        let fresh_trajectories: usize = fresh.iter().map(|u| u.len()).sum();
        if fresh_trajectories != batch_size - replay_target {
            return Err(Error::Config(format!(
                "expected {} fresh trajectories, got {fresh_trajectories}",
                batch_size - replay_target
            )));
        }
        if replay_target > 0 && self.dropped {
            return Err(Error::Config(
                "replay requested from a dropped buffer; repopulate it first".into(),
            ));
        }

        let replay_units_target = replay_target / unit_size;
        let available = self.unit_count();
        let replay_units = replay_units_target.min(available);
        let shortfall_units = replay_units_target - replay_units;
        if shortfall_units > 0 && fresh.is_empty() {
            return Err(Error::Config(
                "cannot backfill an underfull buffer without fresh data".into(),
            ));
        }

        let mut rng = seeding::stream_rng(rng_seed, seeding::domain::REPLAY, 0, 0);
        let mut units: Vec<MixedUnit> = fresh
            .iter()
            .map(|u| MixedUnit {
                trajectories: u.clone(),
                provenance: Provenance::Fresh,
            })
            .collect();
        for _ in 0..shortfall_units {
            let pick = rng.random_range(0..fresh.len());
            units.push(MixedUnit {
                trajectories: fresh[pick].clone(),
                provenance: Provenance::Fresh,
            });
        }
        for _ in 0..replay_units {
            let pick = rng.random_range(0..available);
            units.push(MixedUnit {
                trajectories: self.unit_at(pick).clone(),
                provenance: Provenance::Replayed,
            });
        }

        let fresh_count: usize = units
            .iter()
            .filter(|u| u.provenance == Provenance::Fresh)
            .map(|u| u.trajectories.len())
            .sum();
        let replay_count: usize = units
            .iter()
            .filter(|u| u.provenance == Provenance::Replayed)
            .map(|u| u.trajectories.len())
            .sum();
        debug_assert_eq!(fresh_count + replay_count, batch_size);
        Ok(MixedBatch {
            units,
            fresh_count,
            replay_count,
            shortfall: shortfall_units * unit_size,
        })
    }
}

/// One batch unit with its data source.
#[derive(Debug, Clone)]
pub struct MixedUnit {
    pub trajectories: Vec<Trajectory>,
    pub provenance: Provenance,
}

/// A training batch mixing fresh and replayed units.
#[derive(Debug, Clone)]
pub struct MixedBatch {
    pub units: Vec<MixedUnit>,
    pub fresh_count: usize,
    pub replay_count: usize,
    /// Trajectories that had to be backfilled because the buffer was
    /// underfull.
    pub shortfall: usize,
}

impl MixedBatch {
    /// Batch of purely fresh units (on-policy stages and baselines).
    pub fn all_fresh(fresh: Vec<Vec<Trajectory>>) -> Self {
        let fresh_count = fresh.iter().map(|u| u.len()).sum();
        MixedBatch {
            units: fresh
                .into_iter()
                .map(|trajectories| MixedUnit {
                    trajectories,
                    provenance: Provenance::Fresh,
                })
                .collect(),
            fresh_count,
            replay_count: 0,
            shortfall: 0,
        }
    }

    pub fn len_trajectories(&self) -> usize {
        self.fresh_count + self.replay_count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_problem, TaskKind, TaskSpec};
    use crate::policy::{rollout, PolicyParams};

    fn snap(version: u64) -> PolicySnapshot {
        let mut p = PolicyParams::new_zero(2, 4);
        p.version = version;
        p.snapshot()
    }

    fn traj(tag: u64) -> Vec<Trajectory> {
        vec![Trajectory {
            problem_id: tag,
            response: vec![0, 1],
            behavior_logprobs: vec![-0.5, -0.7],
            reward: 0.0,
            behavior_version: tag,
            truncated: false,
        }]
    }

    #[test]
    fn window_evicts_oldest() {
        let mut buf = HistoryBuffer::new(2);
        buf.push(snap(1), vec![traj(1)]).unwrap();
        buf.push(snap(2), vec![traj(2)]).unwrap();
        buf.push(snap(3), vec![traj(3)]).unwrap();
        assert_eq!(buf.snapshot_count(), 2);
        let versions: Vec<u64> = buf.entries().map(|e| e.snapshot.version()).collect();
        assert_eq!(versions, vec![2, 3]);
    }

    #[test]
    fn push_requires_increasing_versions() {
        let mut buf = HistoryBuffer::new(2);
        buf.push(snap(2), vec![traj(1)]).unwrap();
        assert!(matches!(
            buf.push(snap(2), vec![traj(2)]),
            Err(Error::Invariant(_))
        ));
        assert!(matches!(
            buf.push(snap(1), vec![traj(3)]),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn push_to_empty_gives_size_one() {
        let mut buf = HistoryBuffer::new(3);
        buf.push(snap(1), vec![traj(1)]).unwrap();
        assert_eq!(buf.snapshot_count(), 1);
        assert_eq!(buf.trajectory_count(), 1);
    }

    #[test]
    fn mixed_split_counts() {
        let mut buf = HistoryBuffer::new(2);
        buf.push(snap(1), (0..10).map(traj).collect()).unwrap();
        let fresh: Vec<_> = (100..106).map(traj).collect();
        let batch = buf.sample_mixed(fresh, 10, 0.4, 1, 7).unwrap();
        assert_eq!(batch.fresh_count, 6);
        assert_eq!(batch.replay_count, 4);
        assert_eq!(batch.shortfall, 0);
    }

    #[test]
    fn p_zero_is_all_fresh() {
        let buf = HistoryBuffer::new(2);
        let fresh: Vec<_> = (0..10).map(traj).collect();
        let batch = buf.sample_mixed(fresh, 10, 0.0, 1, 7).unwrap();
        assert_eq!(batch.fresh_count, 10);
        assert_eq!(batch.replay_count, 0);
    }

    #[test]
    fn underfull_buffer_backfills_with_fresh() {
        let buf = HistoryBuffer::new(2);
        let fresh: Vec<_> = (0..6).map(traj).collect();
        let batch = buf.sample_mixed(fresh, 10, 0.4, 1, 7).unwrap();
        assert_eq!(batch.fresh_count, 10);
        assert_eq!(batch.replay_count, 0);
        assert_eq!(batch.shortfall, 4);
    }

    #[test]
    fn sampling_is_seed_reproducible() {
        let mut buf = HistoryBuffer::new(2);
        buf.push(snap(1), (0..20).map(traj).collect()).unwrap();
        let fresh: Vec<_> = (100..106).map(traj).collect();
        let a = buf.sample_mixed(fresh.clone(), 10, 0.4, 1, 9).unwrap();
        let b = buf.sample_mixed(fresh, 10, 0.4, 1, 9).unwrap();
        let ids = |m: &MixedBatch| -> Vec<u64> {
            m.units
                .iter()
                .flat_map(|u| u.trajectories.iter().map(|t| t.problem_id))
                .collect()
        };
        assert_eq!(ids(&a), ids(&b));
    }

    #[test]
    fn dropped_buffer_rejects_replay_until_repopulated() {
        let mut buf = HistoryBuffer::new(2);
        buf.push(snap(1), (0..10).map(traj).collect()).unwrap();
        buf.drop_all();
        assert_eq!(buf.snapshot_count(), 0);
        buf.drop_all(); // idempotent
        assert_eq!(buf.snapshot_count(), 0);
        let fresh: Vec<_> = (0..6).map(traj).collect();
        assert!(matches!(
            buf.sample_mixed(fresh.clone(), 10, 0.4, 1, 7),
            Err(Error::Config(_))
        ));
        // p = 0 is still fine after a drop
        let all: Vec<_> = (0..10).map(traj).collect();
        assert!(buf.sample_mixed(all, 10, 0.0, 1, 7).is_ok());
        // repopulating re-enables replay
        buf.push(snap(5), (0..10).map(traj).collect()).unwrap();
        assert!(buf.sample_mixed(fresh, 10, 0.4, 1, 7).is_ok());
    }

    #[test]
    fn rejects_bad_parameters() {
        let buf = HistoryBuffer::new(2);
        assert!(matches!(
            buf.sample_mixed(vec![], 0, 0.4, 1, 7),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            buf.sample_mixed(vec![], 10, 1.5, 1, 7),
            Err(Error::Config(_))
        ));
        // wrong fresh count
        assert!(matches!(
            buf.sample_mixed((0..3).map(traj).collect(), 10, 0.4, 1, 7),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn group_units_replay_whole_groups() {
        let mut buf = HistoryBuffer::new(2);
        let group =
            |tag: u64| -> Vec<Trajectory> { (0..4).flat_map(|i| traj(tag * 10 + i)).collect() };
        buf.push(snap(1), vec![group(1), group(2)]).unwrap();
        let fresh = vec![group(9)];
        let batch = buf.sample_mixed(fresh, 8, 0.5, 4, 3).unwrap();
        assert_eq!(batch.fresh_count, 4);
        assert_eq!(batch.replay_count, 4);
        for unit in &batch.units {
            assert_eq!(unit.trajectories.len(), 4);
        }
    }

    #[test]
    fn replayed_logprobs_reproduce_unit_ratio_under_stored_snapshot() {
        let task = TaskSpec {
            kind: TaskKind::Copy,
            vocab_size: 8,
            prompt_len: 3,
            max_resp_len: 10,
        };
        let mut params = PolicyParams::new_zero(4, task.alphabet_size());
        for (i, w) in params.policy_w.iter_mut().enumerate() {
            *w = ((i % 13) as f64 - 6.0) / 9.0;
        }
        params.version = 1;
        let snapshot = params.snapshot();
        let units: Vec<Vec<Trajectory>> = (0..8)
            .map(|s| {
                let problem = sample_problem(&task, s);
                vec![rollout(
                    &snapshot,
                    &task,
                    &problem,
                    1000 + s,
                    task.max_resp_len,
                )]
            })
            .collect();
        let mut buf = HistoryBuffer::new(2);
        buf.push(snapshot.clone(), units).unwrap();
        let fresh: Vec<_> = (100..103).map(traj).collect();
        let batch = buf.sample_mixed(fresh, 5, 0.4, 1, 11).unwrap();
        for unit in batch
            .units
            .iter()
            .filter(|u| u.provenance == Provenance::Replayed)
        {
            for t in &unit.trajectories {
                let problem = sample_problem(&task, t.problem_id);
                let mut prefix: Vec<u32> = Vec::new();
                for (pos, &tok) in t.response.iter().enumerate() {
                    let feats = snapshot.feature_map.features(&problem.prompt, &prefix);
                    let lp = snapshot.logprob(&feats, tok);
                    assert_eq!(
                        (lp - t.behavior_logprobs[pos]).exp(),
                        1.0,
                        "stored log-prob must match the stored snapshot exactly"
                    );
                    prefix.push(tok);
                }
            }
        }
    }

    #[test]
    fn stored_trajectories_are_unaffected_by_later_updates() {
        let mut params = PolicyParams::new_zero(2, 4);
        params.version = 1;
        let mut buf = HistoryBuffer::new(2);
        let unit = traj(42);
        let stored_lp = unit[0].behavior_logprobs.clone();
        buf.push(params.snapshot(), vec![unit]).unwrap();
        // mutate the live params afterwards
        params.policy_w.iter_mut().for_each(|w| *w += 1.0);
        let entry = buf.entries().next().unwrap();
        assert_eq!(entry.units[0][0].behavior_logprobs, stored_lp);
    }
}
