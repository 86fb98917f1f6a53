//! Token-generation tasks with a verifiable terminal reward.
//!
//! Episodes are token sequences: a fixed prompt followed by a sampled
//! response that ends at an end-of-sequence token or at the horizon cap.
//! The reward is binary and fully decidable: a response scores 1 exactly
//! when it is well formed (one answer separator, terminated by EOS) and the
//! answer segment matches the task's gold answer for the prompt.

use crate::error::{Error, Result};
use crate::seeding;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Token id over the full alphabet (content tokens plus specials).
pub type Token = u32;

/// The three deterministic answer rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Answer repeats the prompt.
    Copy,
    /// Answer is the prompt reversed.
    Reverse,
    /// Answer is the single token `(sum of prompt) mod vocab_size`.
    SumMod,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "reverse" => Ok(TaskKind::Reverse),
            "sum_mod" => Ok(TaskKind::SumMod),
            other => Err(Error::Config(format!(
                "unknown task kind {other:?} (expected copy, reverse, or sum_mod)"
            ))),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TaskKind::Copy => write!(f, "copy"),
            TaskKind::Reverse => write!(f, "reverse"),
            TaskKind::SumMod => write!(f, "sum_mod"),
        }
    }
}

/// Task family parameters. Content tokens are `0..vocab_size`; the answer
/// separator and EOS take the next two ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub vocab_size: u32,
    pub prompt_len: usize,
    /// Horizon cap on response length, including separator and EOS.
    pub max_resp_len: usize,
}

impl TaskSpec {
    /// Separator between think tokens and the answer segment.
    pub fn answer_sep(&self) -> Token {
        self.vocab_size
    }

    /// End-of-sequence token.
    pub fn eos(&self) -> Token {
        self.vocab_size + 1
    }

    /// Number of distinct tokens the policy can emit.
    pub fn alphabet_size(&self) -> usize {
        self.vocab_size as usize + 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config(format!(
                "vocab_size must be >= 2, got {}",
                self.vocab_size
            )));
        }
        if self.prompt_len == 0 {
            return Err(Error::Config("prompt_len must be positive".into()));
        }
        if self.max_resp_len < self.prompt_len + 2 {
            return Err(Error::Config(format!(
                "max_resp_len must be >= prompt_len + 2 (separator + answer + eos), got {} < {}",
                self.max_resp_len,
                self.prompt_len + 2
            )));
        }
        Ok(())
    }

    /// Gold answer for a prompt under this task's rule.
    pub fn gold_answer(&self, prompt: &[Token]) -> Vec<Token> {
        match self.kind {
            TaskKind::Copy => prompt.to_vec(),
            TaskKind::Reverse => prompt.iter().rev().copied().collect(),
            TaskKind::SumMod => {
                let sum: u64 = prompt.iter().map(|&t| t as u64).sum();
                vec![(sum % self.vocab_size as u64) as Token]
            }
        }
    }
}

/// One prompt plus its gold answer. The id doubles as the sampling seed, so
/// the problem can always be reconstructed from `(task, id)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: u64,
    pub prompt: Vec<Token>,
    pub gold_answer: Vec<Token>,
}

/// Sample the problem identified by `rng_seed`. Deterministic: the same
/// `(task, rng_seed)` always yields the same problem.
pub fn sample_problem(task: &TaskSpec, rng_seed: u64) -> Problem {
    let mut rng = seeding::stream_rng(rng_seed, seeding::domain::PROBLEM, 0, 0);
    let prompt: Vec<Token> = (0..task.prompt_len)
        .map(|_| rng.random_range(0..task.vocab_size))
        .collect();
    let gold_answer = task.gold_answer(&prompt);
    Problem {
        id: rng_seed,
        prompt,
        gold_answer,
    }
}

/// Score a response: 1.0 for a well-formed response whose answer segment
/// equals the gold answer, else 0.0. Malformed input never errors.
///
/// Well-formed means: exactly one answer separator anywhere, the final token
/// is EOS, and the answer segment is everything strictly between the
/// separator and that final EOS.
pub fn verify(task: &TaskSpec, problem: &Problem, response: &[Token]) -> f64 {
    let sep = task.answer_sep();
    let eos = task.eos();
    if response.is_empty() || *response.last().unwrap() != eos {
        return 0.0;
    }
    let sep_positions: Vec<usize> = response
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == sep)
        .map(|(i, _)| i)
        .collect();
    if sep_positions.len() != 1 {
        return 0.0;
    }
    let answer = &response[sep_positions[0] + 1..response.len() - 1];
    if answer == problem.gold_answer.as_slice() {
        1.0
    } else {
        0.0
    }
}

/// One sampled episode with everything needed to replay it later: the
/// producing policy's per-token log-probs and version tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub problem_id: u64,
    pub response: Vec<Token>,
    pub behavior_logprobs: Vec<f64>,
    pub reward: f64,
    pub behavior_version: u64,
    pub truncated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    /// Terminal-reward sequence: zero everywhere except the last token.
    pub fn reward_sequence(&self) -> Vec<f64> {
        let mut rewards = vec![0.0; self.response.len()];
        if let Some(last) = rewards.last_mut() {
            *last = self.reward;
        }
        rewards
    }
}
