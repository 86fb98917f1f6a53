//! Per-step training metrics: held-out pass@1 evaluation, importance-ratio
//! diagnostics, and the CSV sink.
//!
//! One CSV row is emitted per training step. The column order is fixed and
//! documented in the README; the per-position ratio profile occupies one
//! column per bucket (`ratio_profile_0 ..`), with `NaN` marking buckets no
//! token reached that step.

use crate::env::{sample_problem, verify, TaskSpec};
use crate::error::{Error, Result};
use crate::objective::Stage;
use crate::policy::{greedy_decode, PolicyParams};
use crate::replay::MixedBatch;
use crate::seeding::eval_problem_id;
use std::io::Write;
use std::path::Path;

/// One training step's metrics record.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub stage: Stage,
    pub fresh_count: usize,
    pub replay_count: usize,
    pub shortfall: usize,
    pub fresh_rollouts_cum: u64,
    pub pass1: f64,
    pub mean_resp_len: f64,
    pub mean_is_ratio: f64,
    pub mean_abs_log_ratio: f64,
    pub ratio_profile: Vec<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl_base: f64,
    pub kl_prev: f64,
    pub lambda_t: f64,
    pub clip_fraction: f64,
    pub clamp_count: u64,
}

impl MetricsRow {
    /// Column names for a given profile bucket count.
    pub fn header(buckets: usize) -> Vec<String> {
        let mut cols: Vec<String> = [
            "step",
            "stage",
            "fresh_count",
            "replay_count",
            "shortfall",
            "fresh_rollouts_cum",
            "pass1",
            "mean_resp_len",
            "mean_is_ratio",
            "mean_abs_log_ratio",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for b in 0..buckets {
            cols.push(format!("ratio_profile_{b}"));
        }
        cols.extend(
            [
                "policy_loss",
                "value_loss",
                "entropy",
                "kl_base",
                "kl_prev",
                "lambda_t",
                "clip_fraction",
                "clamp_count",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        cols
    }

    /// Flat string record in CSV column order. Float formatting round-trips
    /// exactly, so record equality is value equality (including NaN).
    pub fn to_record(&self) -> Vec<String> {
        let mut rec = vec![
            self.step.to_string(),
            self.stage.to_string(),
            self.fresh_count.to_string(),
            self.replay_count.to_string(),
            self.shortfall.to_string(),
            self.fresh_rollouts_cum.to_string(),
            self.pass1.to_string(),
            self.mean_resp_len.to_string(),
            self.mean_is_ratio.to_string(),
            self.mean_abs_log_ratio.to_string(),
        ];
        for v in &self.ratio_profile {
            rec.push(v.to_string());
        }
        rec.extend([
            self.policy_loss.to_string(),
            self.value_loss.to_string(),
            self.entropy.to_string(),
            self.kl_base.to_string(),
            self.kl_prev.to_string(),
            self.lambda_t.to_string(),
            self.clip_fraction.to_string(),
            self.clamp_count.to_string(),
        ]);
        rec
    }
}

/// CSV metrics sink; writes the header on creation and flushes every row.
pub struct MetricsWriter<W: Write> {
    writer: csv::Writer<W>,
    buckets: usize,
    rows_written: u64,
}

impl MetricsWriter<std::fs::File> {
    pub fn create(path: &Path, buckets: usize) -> Result<Self> {
        let file = std::fs::File::create(path).map_err(|e| {
            Error::Config(format!("cannot open metrics sink {}: {e}", path.display()))
        })?;
        Self::from_writer(file, buckets)
    }
}

impl<W: Write> MetricsWriter<W> {
    pub fn from_writer(w: W, buckets: usize) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record(MetricsRow::header(buckets))?;
        writer.flush()?;
        Ok(MetricsWriter {
            writer,
            buckets,
            rows_written: 0,
        })
    }

    /// Append one row and flush it.
    pub fn write_row(&mut self, row: &MetricsRow) -> Result<()> {
        if row.ratio_profile.len() != self.buckets {
            return Err(Error::Invariant(format!(
                "ratio profile has {} buckets, sink expects {}",
                row.ratio_profile.len(),
                self.buckets
            )));
        }
        self.writer.write_record(row.to_record())?;
        self.writer.flush()?;
        self.rows_written += 1;
        Ok(())
    }

    pub fn rows_written(&self) -> u64 {
        self.rows_written
    }
}

fn parse_field<T: std::str::FromStr>(record: &csv::StringRecord, idx: usize) -> Result<T> {
    record
        .get(idx)
        .ok_or_else(|| Error::Config(format!("metrics row missing column {idx}")))?
        .parse()
        .map_err(|_| {
            Error::Config(format!(
                "metrics row column {idx} has unparseable value {:?}",
                record.get(idx).unwrap_or("")
            ))
        })
}

/// Read back a metrics CSV emitted by [`MetricsWriter`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let buckets = headers
        .iter()
        .filter(|h| h.starts_with("ratio_profile_"))
        .count();
    let expected = MetricsRow::header(buckets);
    let actual: Vec<String> = headers.iter().map(|s| s.to_string()).collect();
    if actual != expected {
        return Err(Error::Config(format!(
            "unexpected metrics header in {}",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let stage = match record.get(1) {
            Some("mix") => Stage::Mix,
            Some("reincarnated") => Stage::Reincarnated,
            other => {
                return Err(Error::Config(format!(
                    "unknown stage value {other:?} in metrics file"
                )))
            }
        };
        let mut profile = Vec::with_capacity(buckets);
        for b in 0..buckets {
            profile.push(parse_field(&record, 10 + b)?);
        }
        let tail = 10 + buckets;
        rows.push(MetricsRow {
            step: parse_field(&record, 0)?,
            stage,
            fresh_count: parse_field(&record, 2)?,
            replay_count: parse_field(&record, 3)?,
            shortfall: parse_field(&record, 4)?,
            fresh_rollouts_cum: parse_field(&record, 5)?,
            pass1: parse_field(&record, 6)?,
            mean_resp_len: parse_field(&record, 7)?,
            mean_is_ratio: parse_field(&record, 8)?,
            mean_abs_log_ratio: parse_field(&record, 9)?,
            ratio_profile: profile,
            policy_loss: parse_field(&record, tail)?,
            value_loss: parse_field(&record, tail + 1)?,
            entropy: parse_field(&record, tail + 2)?,
            kl_base: parse_field(&record, tail + 3)?,
            kl_prev: parse_field(&record, tail + 4)?,
            lambda_t: parse_field(&record, tail + 5)?,
            clip_fraction: parse_field(&record, tail + 6)?,
            clamp_count: parse_field(&record, tail + 7)?,
        });
    }
    Ok(rows)
}

/// Greedy pass@1 over the held-out evaluation problems. Deterministic given
/// the snapshot and eval size.
pub fn evaluate_pass1(params: &PolicyParams, task: &TaskSpec, eval_size: usize) -> Result<f64> {
    if eval_size == 0 {
        return Err(Error::Config("evaluation set must not be empty".into()));
    }
    let mut solved = 0usize;
    for i in 0..eval_size {
        let problem = sample_problem(task, eval_problem_id(i as u64));
        let response = greedy_decode(params, task, &problem, task.max_resp_len);
        if verify(task, &problem, &response) == 1.0 {
            solved += 1;
        }
    }
    Ok(solved as f64 / eval_size as f64)
}

fn log_ratio_terms<'a>(
    batch: &'a MixedBatch,
    task: &'a TaskSpec,
    current: &'a PolicyParams,
) -> impl Iterator<Item = (usize, f64)> + 'a {
    batch.units.iter().flat_map(move |unit| {
        unit.trajectories.iter().flat_map(move |traj| {
            let problem = sample_problem(task, traj.problem_id);
            let mut prefix = Vec::with_capacity(traj.response.len());
            traj.response
                .iter()
                .zip(&traj.behavior_logprobs)
                .enumerate()
                .map(move |(pos, (&tok, &behavior_lp))| {
                    let feats = current.feature_map.features(&problem.prompt, &prefix);
                    let lp = current.logprob(&feats, tok);
                    prefix.push(tok);
                    (pos, (lp - behavior_lp).abs())
                })
                .collect::<Vec<_>>()
        })
    })
}

/// Mean absolute log importance ratio of a batch under `current`.
pub fn mean_abs_log_ratio(batch: &MixedBatch, task: &TaskSpec, current: &PolicyParams) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (_, d) in log_ratio_terms(batch, task, current) {
        sum += d;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Mean absolute log importance ratio bucketed by token position. Buckets
/// partition positions `0..horizon`; buckets no token reached are `NaN`.
pub fn ratio_profile(
    batch: &MixedBatch,
    task: &TaskSpec,
    current: &PolicyParams,
    buckets: usize,
    horizon: usize,
) -> Vec<f64> {
    let mut sums = vec![0.0; buckets];
    let mut counts = vec![0usize; buckets];
    for (pos, d) in log_ratio_terms(batch, task, current) {
        let b = (pos * buckets / horizon).min(buckets - 1);
        sums[b] += d;
        counts[b] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{TaskKind, Trajectory};
    use crate::policy::{copy_expert_params, rollout};
    use crate::replay::MixedBatch;

    fn task() -> TaskSpec {
        TaskSpec {
            kind: TaskKind::Copy,
            vocab_size: 8,
            prompt_len: 3,
            max_resp_len: 10,
        }
    }

    #[test]
    fn pass1_is_a_fraction() {
        // a policy that solves copy exactly scores 1.0
        let t = task();
        let expert = copy_expert_params(&t, 50.0);
        assert_eq!(evaluate_pass1(&expert, &t, 50).unwrap(), 1.0);
        // zero weights emit token 0 forever and never finish: 0.0
        let uniform = PolicyParams::new_zero(4, t.alphabet_size());
        assert_eq!(evaluate_pass1(&uniform, &t, 50).unwrap(), 0.0);
        assert!(evaluate_pass1(&uniform, &t, 0).is_err());
    }

    #[test]
    fn pass1_chance_rate_on_sum_mod() {
        // Format scaffolding with indifferent answer logits: greedy resolves
        // the tie to token 0, so pass@1 approaches P(gold == 0) = 1/8.
        let t = TaskSpec {
            kind: TaskKind::SumMod,
            vocab_size: 8,
            prompt_len: 3,
            max_resp_len: 10,
        };
        let mut params = PolicyParams::new_zero(4, t.alphabet_size());
        let fm = params.feature_map;
        let a = t.alphabet_size();
        // With prompt_len 3 and window 4: pad sits in slot 0 only before any
        // token is emitted -> emit the separator. Right after it (separator
        // in slot 3) every logit is zero, so greedy ties to content token 0.
        // Two tokens after the separator (slot 2) -> emit EOS.
        params.policy_w[fm.slot_index(0, None) * a + t.answer_sep() as usize] = 50.0;
        let sep_two_back = fm.slot_index(2, Some(t.answer_sep()));
        params.policy_w[sep_two_back * a + t.eos() as usize] = 100.0;
        let k = 2000;
        let pass1 = evaluate_pass1(&params, &t, k).unwrap();
        // binomial 4-sigma band around 1/8
        let sigma = (0.125 * 0.875 / k as f64).sqrt();
        assert!(
            (pass1 - 0.125).abs() < 4.0 * sigma,
            "pass1 {pass1} not within {:.4} of 0.125",
            4.0 * sigma
        );
    }

    #[test]
    fn pass1_is_deterministic() {
        let t = task();
        let expert = copy_expert_params(&t, 2.0);
        let a = evaluate_pass1(&expert, &t, 100).unwrap();
        let b = evaluate_pass1(&expert, &t, 100).unwrap();
        assert_eq!(a, b);
    }

    fn batch_from_policy(params: &PolicyParams, t: &TaskSpec, n: usize) -> MixedBatch {
        let units: Vec<Vec<Trajectory>> = (0..n)
            .map(|i| {
                let problem = sample_problem(t, i as u64);
                vec![rollout(params, t, &problem, 500 + i as u64, t.max_resp_len)]
            })
            .collect();
        MixedBatch::all_fresh(units)
    }

    #[test]
    fn profile_is_zero_on_policy() {
        let t = task();
        let params = copy_expert_params(&t, 2.0);
        let batch = batch_from_policy(&params, &t, 12);
        let profile = ratio_profile(&batch, &t, &params, 4, t.max_resp_len);
        assert_eq!(profile.len(), 4);
        for v in profile.iter().filter(|v| !v.is_nan()) {
            assert_eq!(*v, 0.0);
        }
        assert_eq!(mean_abs_log_ratio(&batch, &t, &params), 0.0);
    }

    #[test]
    fn profile_reflects_constant_offset() {
        let t = task();
        let params = copy_expert_params(&t, 2.0);
        let mut batch = batch_from_policy(&params, &t, 12);
        let delta = 0.37;
        for unit in &mut batch.units {
            for traj in &mut unit.trajectories {
                for lp in &mut traj.behavior_logprobs {
                    *lp -= delta;
                }
            }
        }
        let profile = ratio_profile(&batch, &t, &params, 4, t.max_resp_len);
        for v in profile.iter().filter(|v| !v.is_nan()) {
            assert!((v - delta).abs() < 1e-12);
        }
    }

    #[test]
    fn unwritable_sink_is_an_error() {
        let Err(err) = MetricsWriter::create(Path::new("/nonexistent-dir/metrics.csv"), 4) else {
            panic!("expected an error for an unwritable sink");
        };
        assert!(err.to_string().contains("metrics sink"), "{err}");
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let rows: Vec<MetricsRow> = (0..5)
            .map(|i| MetricsRow {
                step: i + 1,
                stage: if i < 3 {
                    Stage::Mix
                } else {
                    Stage::Reincarnated
                },
                fresh_count: 19,
                replay_count: 13,
                shortfall: if i == 0 { 13 } else { 0 },
                fresh_rollouts_cum: 19 * (i + 1),
                pass1: 0.123_456_789_012_345_68 * (i as f64 + 1.0),
                mean_resp_len: 5.4321,
                mean_is_ratio: 1.000000000001,
                mean_abs_log_ratio: 0.031415926535,
                ratio_profile: vec![0.0, 0.1, f64::NAN, 0.3],
                policy_loss: -0.017,
                value_loss: 0.25,
                entropy: 2.19722457733622,
                kl_base: 1e-9,
                kl_prev: 2e-9,
                lambda_t: 0.9,
                clip_fraction: 0.0625,
                clamp_count: i,
            })
            .collect();
        {
            let mut writer = MetricsWriter::create(&path, 4).unwrap();
            for row in &rows {
                writer.write_row(row).unwrap();
            }
            assert_eq!(writer.rows_written(), 5);
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().filter(|l| l.starts_with("step,")).count(),
            1,
            "header exactly once"
        );
        assert_eq!(text.lines().count(), 6);
        let parsed = read_metrics(&path).unwrap();
        assert_eq!(parsed.len(), rows.len());
        for (a, b) in parsed.iter().zip(&rows) {
            assert_eq!(a.step, b.step);
            assert_eq!(a.stage, b.stage);
            assert_eq!(a.pass1.to_bits(), b.pass1.to_bits());
            assert_eq!(a.mean_is_ratio.to_bits(), b.mean_is_ratio.to_bits());
            for (x, y) in a.ratio_profile.iter().zip(&b.ratio_profile) {
                assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
            }
        }
    }
}
