//! Run configuration: typed fields, paper defaults, and a flat key-value
//! config-file parser with strict validation.
//!
//! The file format is one `key = value` pair per line; `#` starts a comment.
//! Unknown keys are rejected, missing keys take the defaults below.

use crate::advantage::GaeConfig;
use crate::env::{TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::objective::LossCoeffs;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Training algorithm family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Ppo,
    Grpo,
    RemixPpo,
    RemixGrpo,
}

impl Algo {
    /// True for the two-stage mixed-policy variants.
    pub fn is_remix(&self) -> bool {
        matches!(self, Algo::RemixPpo | Algo::RemixGrpo)
    }

    /// True for group-advantage variants (no critic).
    pub fn is_grpo(&self) -> bool {
        matches!(self, Algo::Grpo | Algo::RemixGrpo)
    }
}

impl std::str::FromStr for Algo {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppo" => Ok(Algo::Ppo),
            "grpo" => Ok(Algo::Grpo),
            "remix_ppo" => Ok(Algo::RemixPpo),
            "remix_grpo" => Ok(Algo::RemixGrpo),
            other => Err(Error::Config(format!(
                "unknown algo {other:?} (expected ppo, grpo, remix_ppo, or remix_grpo)"
            ))),
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algo::Ppo => write!(f, "ppo"),
            Algo::Grpo => write!(f, "grpo"),
            Algo::RemixPpo => write!(f, "remix_ppo"),
            Algo::RemixGrpo => write!(f, "remix_grpo"),
        }
    }
}

/// Full experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algo: Algo,
    /// Training batch size in trajectories.
    pub batch_size: usize,
    /// Off-policy data portion of each mixed batch.
    pub p: f64,
    /// Update-to-data ratio: gradient updates per mixed batch.
    pub m: usize,
    /// Historical policy window size.
    pub window_n: usize,
    /// Reincarnation step; `None` runs the mixed stage for the whole run.
    pub reincarnation_t: Option<u64>,
    pub epsilon: f64,
    pub beta: f64,
    pub c1: f64,
    pub c2: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub cbar: f64,
    pub lr: f64,
    pub grad_clip: f64,
    /// Rollouts per prompt for group-advantage algorithms.
    pub group_n: usize,
    pub total_steps: u64,
    /// Evaluation and checkpoint cadence in steps.
    pub eval_every: u64,
    /// Held-out evaluation set size.
    pub eval_size: usize,
    pub seeds: Vec<u64>,
    /// Origin of the lambda decay schedule.
    pub lambda_offset: u64,
    /// Context window of the policy feature map.
    pub context_window: usize,
    /// Supervised warmup emulating a pretrained base model: gradient steps,
    /// problems per step, distinct problems in the warmup pool, step size.
    pub warmup_steps: u64,
    pub warmup_batch: usize,
    pub warmup_pool: usize,
    pub warmup_lr: f64,
    /// Bucket count of the per-position ratio profile.
    pub profile_buckets: usize,
    pub task: TaskSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            algo: Algo::RemixPpo,
            batch_size: 32,
            p: 0.4,
            m: 2,
            window_n: 2,
            reincarnation_t: Some(50),
            epsilon: 0.2,
            beta: 0.001,
            c1: 0.5,
            c2: 0.001,
            gamma: 1.0,
            gae_lambda: 0.95,
            cbar: 1.0,
            lr: 1.0,
            grad_clip: 1.0,
            group_n: 8,
            total_steps: 500,
            eval_every: 25,
            eval_size: 200,
            seeds: vec![0],
            lambda_offset: 50,
            context_window: 4,
            warmup_steps: 320,
            warmup_batch: 8,
            warmup_pool: 8,
            warmup_lr: 0.3,
            profile_buckets: 4,
            task: TaskSpec {
                kind: TaskKind::Copy,
                vocab_size: 8,
                prompt_len: 3,
                max_resp_len: 10,
            },
        }
    }
}

impl RunConfig {
    /// Replayed trajectories per mixed batch.
    pub fn replay_target(&self) -> usize {
        (self.p * self.batch_size as f64).round() as usize
    }

    /// Fresh trajectories rolled out per mixed-stage step.
    pub fn fresh_per_mix_step(&self) -> usize {
        self.batch_size - self.replay_target()
    }

    /// Replay unit size: whole groups under group advantages.
    pub fn unit_size(&self) -> usize {
        if self.algo.is_grpo() {
            self.group_n
        } else {
            1
        }
    }

    pub fn use_critic(&self) -> bool {
        !self.algo.is_grpo()
    }

    pub fn loss_coeffs(&self) -> LossCoeffs {
        LossCoeffs {
            epsilon: self.epsilon,
            beta: self.beta,
            c1: self.c1,
            c2: self.c2,
        }
    }

    pub fn gae_config(&self) -> GaeConfig {
        GaeConfig {
            gamma: self.gamma,
            gae_lambda: self.gae_lambda,
            cbar: self.cbar,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        range(self.p, 0.0, 1.0, "p")?;
        if self.epsilon <= 0.0 || self.epsilon >= 1.0 {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        nonneg(self.beta, "beta")?;
        nonneg(self.c1, "c1")?;
        nonneg(self.c2, "c2")?;
        if self.gamma <= 0.0 || self.gamma > 1.0 {
            return Err(Error::Config(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        range(self.gae_lambda, 0.0, 1.0, "gae_lambda")?;
        positive(self.cbar, "cbar")?;
        positive(self.lr, "lr")?;
        nonneg(self.grad_clip, "grad_clip")?;
        positive(self.warmup_lr, "warmup_lr")?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.m == 0 {
            return Err(Error::Config("m (UTD ratio) must be at least 1".into()));
        }
        if self.window_n == 0 {
            return Err(Error::Config("window_n must be at least 1".into()));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if self.eval_size == 0 {
            return Err(Error::Config("eval_size must be positive".into()));
        }
        if self.group_n < 2 {
            return Err(Error::Config("group_n must be at least 2".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.context_window == 0 {
            return Err(Error::Config("context_window must be at least 1".into()));
        }
        if self.profile_buckets == 0 {
            return Err(Error::Config("profile_buckets must be at least 1".into()));
        }
        if self.warmup_steps > 0 && self.warmup_batch == 0 {
            return Err(Error::Config(
                "warmup_batch must be positive when warmup_steps > 0".into(),
            ));
        }
        if self.algo.is_remix() {
            if let Some(t) = self.reincarnation_t {
                if t >= self.total_steps {
                    return Err(Error::Config(format!(
                        "reincarnation_t ({t}) must be below total_steps ({}) for {} \
                         (use reincarnation_t = none to disable reincarnation)",
                        self.total_steps, self.algo
                    )));
                }
            }
        }
        if self.algo.is_grpo() && !self.batch_size.is_multiple_of(self.group_n) {
            return Err(Error::Config(format!(
                "batch_size ({}) must be a multiple of group_n ({}) for {}",
                self.batch_size, self.group_n, self.algo
            )));
        }
        // only the mixed variant replays, so only it constrains the split
        if self.algo == Algo::RemixGrpo && !self.replay_target().is_multiple_of(self.group_n) {
            return Err(Error::Config(format!(
                "the replay share round(p * batch_size) = {} must be a multiple of \
                 group_n ({}) for {}",
                self.replay_target(),
                self.group_n,
                self.algo
            )));
        }
        Ok(())
    }
}

fn range(v: f64, lo: f64, hi: f64, key: &str) -> Result<()> {
    if v.is_finite() && (lo..=hi).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{key} must lie in [{lo}, {hi}], got {v}"
        )))
    }
}

fn positive(v: f64, key: &str) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{key} must be positive, got {v}")))
    }
}

fn nonneg(v: f64, key: &str) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{key} must be nonnegative, got {v}")))
    }
}

fn parse_typed<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Config(format!(
            "key {key:?}: cannot parse {value:?} as {}",
            std::any::type_name::<T>()
        ))
    })
}

/// Parse a config file; missing keys take the defaults.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
    parse_config_str(&text)
}

/// Parse config text (`key = value` lines, `#` comments).
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected `key = value`, got {raw:?}",
                lineno + 1
            ))
        })?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "algo" => cfg.algo = value.parse()?,
            "batch_size" => cfg.batch_size = parse_typed(key, value)?,
            "p" => cfg.p = parse_typed(key, value)?,
            "m" => cfg.m = parse_typed(key, value)?,
            "window_n" => cfg.window_n = parse_typed(key, value)?,
            "reincarnation_t" => {
                cfg.reincarnation_t = if value == "none" {
                    None
                } else {
                    Some(parse_typed(key, value)?)
                }
            }
            "epsilon" => cfg.epsilon = parse_typed(key, value)?,
            "beta" => cfg.beta = parse_typed(key, value)?,
            "c1" => cfg.c1 = parse_typed(key, value)?,
            "c2" => cfg.c2 = parse_typed(key, value)?,
            "gamma" => cfg.gamma = parse_typed(key, value)?,
            "gae_lambda" => cfg.gae_lambda = parse_typed(key, value)?,
            "cbar" => cfg.cbar = parse_typed(key, value)?,
            "lr" => cfg.lr = parse_typed(key, value)?,
            "grad_clip" => cfg.grad_clip = parse_typed(key, value)?,
            "group_n" => cfg.group_n = parse_typed(key, value)?,
            "total_steps" => cfg.total_steps = parse_typed(key, value)?,
            "eval_every" => cfg.eval_every = parse_typed(key, value)?,
            "eval_size" => cfg.eval_size = parse_typed(key, value)?,
            "seeds" => {
                let mut seeds = Vec::new();
                for part in value.split(',') {
                    seeds.push(parse_typed(key, part.trim())?);
                }
                cfg.seeds = seeds;
            }
            "lambda_offset" => cfg.lambda_offset = parse_typed(key, value)?,
            "context_window" => cfg.context_window = parse_typed(key, value)?,
            "warmup_steps" => cfg.warmup_steps = parse_typed(key, value)?,
            "warmup_batch" => cfg.warmup_batch = parse_typed(key, value)?,
            "warmup_pool" => cfg.warmup_pool = parse_typed(key, value)?,
            "warmup_lr" => cfg.warmup_lr = parse_typed(key, value)?,
            "profile_buckets" => cfg.profile_buckets = parse_typed(key, value)?,
            "task_kind" => cfg.task.kind = value.parse()?,
            "vocab_size" => cfg.task.vocab_size = parse_typed(key, value)?,
            "prompt_len" => cfg.task.prompt_len = parse_typed(key, value)?,
            "max_resp_len" => cfg.task.max_resp_len = parse_typed(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "line {}: unknown config key {other:?}",
                    lineno + 1
                )))
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_paper_defaults() {
        let cfg = parse_config_str("").unwrap();
        assert_eq!(cfg.p, 0.4);
        assert_eq!(cfg.m, 2);
        assert_eq!(cfg.window_n, 2);
        assert_eq!(cfg.reincarnation_t, Some(50));
        assert_eq!(cfg.epsilon, 0.2);
        assert_eq!(cfg.c2, 0.001);
        assert_eq!(cfg.beta, 0.001);
        assert_eq!(cfg.gamma, 1.0);
        assert_eq!(cfg.gae_lambda, 0.95);
        assert_eq!(cfg.cbar, 1.0);
        assert_eq!(cfg.group_n, 8);
    }

    #[test]
    fn out_of_range_p_names_the_key() {
        let err = parse_config_str("p = 1.5").unwrap_err();
        assert!(err.to_string().contains('p'), "{err}");
        assert!(err.is_config());
    }

    #[test]
    fn remix_requires_t_below_total_steps() {
        let err = parse_config_str("algo = remix_ppo\ntotal_steps = 50\nreincarnation_t = 50")
            .unwrap_err();
        assert!(err.to_string().contains("reincarnation_t"), "{err}");
        // `none` disables reincarnation entirely
        let cfg =
            parse_config_str("algo = remix_ppo\ntotal_steps = 50\nreincarnation_t = none").unwrap();
        assert_eq!(cfg.reincarnation_t, None);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = parse_config_str("not_a_key = 3").unwrap_err();
        assert!(err.to_string().contains("not_a_key"), "{err}");
    }

    #[test]
    fn type_mismatch_names_the_key() {
        let err = parse_config_str("batch_size = lots").unwrap_err();
        assert!(err.to_string().contains("batch_size"), "{err}");
    }

    #[test]
    fn comments_and_spacing_are_tolerated() {
        let cfg = parse_config_str(
            "# a comment\n  algo = ppo  # trailing\n\n  lr = 0.1\nseeds = 1, 2, 3\n",
        )
        .unwrap();
        assert_eq!(cfg.algo, Algo::Ppo);
        assert_eq!(cfg.lr, 0.1);
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn grpo_batch_must_divide_into_groups() {
        let err = parse_config_str("algo = grpo\nbatch_size = 30\ngroup_n = 8").unwrap_err();
        assert!(err.to_string().contains("group_n"), "{err}");
        // 32 trajectories, groups of 8, replay share 16 -> ok
        let cfg =
            parse_config_str("algo = remix_grpo\nbatch_size = 32\ngroup_n = 8\np = 0.5").unwrap();
        assert_eq!(cfg.replay_target(), 16);
        // replay share 13 is not a whole number of groups
        let err = parse_config_str("algo = remix_grpo\nbatch_size = 32\ngroup_n = 8\np = 0.4")
            .unwrap_err();
        assert!(err.to_string().contains("replay share"), "{err}");
        // plain grpo never replays, so p does not constrain it
        assert!(parse_config_str("algo = grpo\nbatch_size = 32\ngroup_n = 8\np = 0.4").is_ok());
    }

    #[test]
    fn split_accounting_matches_examples() {
        let mut cfg = RunConfig {
            batch_size: 10,
            p: 0.4,
            ..RunConfig::default()
        };
        assert_eq!(cfg.replay_target(), 4);
        assert_eq!(cfg.fresh_per_mix_step(), 6);
        cfg.p = 0.0;
        assert_eq!(cfg.fresh_per_mix_step(), 10);
    }
}
