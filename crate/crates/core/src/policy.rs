//! Autoregressive linear-softmax policy with a value head.
//!
//! States are encoded as a sparse feature vector: a bias slot plus a one-hot
//! of each of the last `window` tokens of the sequence (prompt followed by
//! the generated prefix), with a dedicated pad symbol for positions before
//! the start. Policy logits and the state value are linear in these
//! features, which keeps every gradient analytic and easy to check against
//! finite differences.

use crate::env::{verify, Problem, TaskSpec, Token, Trajectory};
use crate::error::{Error, Result};
use crate::seeding;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Sparse state features: indices of active (weight-1) entries.
pub type Features = Vec<usize>;

/// Fixed context-window feature encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMap {
    /// Number of trailing sequence tokens encoded.
    pub window: usize,
    /// Full alphabet size (content tokens + separator + EOS).
    pub alphabet: usize,
}

impl FeatureMap {
    pub fn new(window: usize, alphabet: usize) -> Self {
        FeatureMap { window, alphabet }
    }

    /// Total feature dimension: bias + window one-hots (alphabet + pad).
    pub fn dim(&self) -> usize {
        1 + self.window * (self.alphabet + 1)
    }

    /// Feature index for slot `j` holding token `tok` (`None` = pad).
    /// Slot `window - 1` is the most recent token.
    pub fn slot_index(&self, slot: usize, tok: Option<Token>) -> usize {
        let sym = tok.map_or(self.alphabet, |t| t as usize);
        1 + slot * (self.alphabet + 1) + sym
    }

    /// Active feature indices for the state `(prompt, generated prefix)`.
    pub fn features(&self, prompt: &[Token], prefix: &[Token]) -> Features {
        let total = prompt.len() + prefix.len();
        let mut feats = Vec::with_capacity(self.window + 1);
        feats.push(0); // bias
        for slot in 0..self.window {
            // Token at sequence position total - window + slot, pad if before start.
            let pos = total as isize - self.window as isize + slot as isize;
            let tok = if pos < 0 {
                None
            } else {
                let pos = pos as usize;
                Some(if pos < prompt.len() {
                    prompt[pos]
                } else {
                    prefix[pos - prompt.len()]
                })
            };
            feats.push(self.slot_index(slot, tok));
        }
        feats
    }
}

/// Live policy and value parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub feature_map: FeatureMap,
    /// Policy weights, row-major `[dim x alphabet]`.
    pub policy_w: Vec<f64>,
    /// Value-head weights, `[dim]`.
    pub value_w: Vec<f64>,
    /// Training iteration tag; snapshots inherit it.
    pub version: u64,
}

impl PolicyParams {
    /// Zero-initialized parameters: uniform policy, zero value.
    pub fn new_zero(window: usize, alphabet: usize) -> Self {
        let fm = FeatureMap::new(window, alphabet);
        PolicyParams {
            policy_w: vec![0.0; fm.dim() * alphabet],
            value_w: vec![0.0; fm.dim()],
            feature_map: fm,
            version: 0,
        }
    }

    pub fn alphabet(&self) -> usize {
        self.feature_map.alphabet
    }

    /// Raw logits for every token in the alphabet.
    pub fn logits(&self, feats: &[usize]) -> Vec<f64> {
        let a = self.alphabet();
        let mut logits = vec![0.0; a];
        for &f in feats {
            let row = &self.policy_w[f * a..(f + 1) * a];
            for (l, w) in logits.iter_mut().zip(row) {
                *l += w;
            }
        }
        logits
    }

    /// Log-probabilities over the alphabet (log-softmax of the logits).
    pub fn log_softmax(&self, feats: &[usize]) -> Vec<f64> {
        log_softmax(&self.logits(feats))
    }

    /// Log-probability of one action.
    pub fn logprob(&self, feats: &[usize], action: Token) -> f64 {
        self.log_softmax(feats)[action as usize]
    }

    /// State value under the value head.
    pub fn value(&self, feats: &[usize]) -> f64 {
        feats.iter().map(|&f| self.value_w[f]).sum()
    }

    /// Shannon entropy (nats) of the action distribution.
    pub fn entropy(&self, feats: &[usize]) -> f64 {
        entropy_from_logprobs(&self.log_softmax(feats))
    }

    /// Frozen copy of the current parameters.
    pub fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot {
            params: self.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.policy_w.iter().all(|w| w.is_finite()) && self.value_w.iter().all(|w| w.is_finite())
    }
}

/// Immutable frozen policy used as behavior policy, KL anchor, and clip
/// center source. Never mutated after creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    params: PolicyParams,
}

impl PolicySnapshot {
    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn version(&self) -> u64 {
        self.params.version
    }
}

impl std::ops::Deref for PolicySnapshot {
    type Target = PolicyParams;
    fn deref(&self) -> &PolicyParams {
        &self.params
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let log_z = max + sum_exp.ln();
    logits.iter().map(|&z| z - log_z).collect()
}

/// Entropy in nats from a log-probability vector.
pub fn entropy_from_logprobs(logprobs: &[f64]) -> f64 {
    -logprobs
        .iter()
        .map(|&lp| {
            let p = lp.exp();
            if p > 0.0 {
                p * lp
            } else {
                0.0
            }
        })
        .sum::<f64>()
}

/// Sample one episode under `params` at temperature 1 (no top-k/top-p).
/// Stops at EOS or after `max_len` tokens; records the behavior log-prob of
/// every emitted token and scores the finished response.
pub fn rollout(
    params: &PolicyParams,
    task: &TaskSpec,
    problem: &Problem,
    rng_seed: u64,
    max_len: usize,
) -> Trajectory {
    let mut rng = seeding::stream_rng(rng_seed, seeding::domain::ROLLOUT, 0, 0);
    let eos = task.eos();
    let mut response: Vec<Token> = Vec::with_capacity(max_len);
    let mut logprobs: Vec<f64> = Vec::with_capacity(max_len);
    while response.len() < max_len {
        let feats = params.feature_map.features(&problem.prompt, &response);
        let lps = params.log_softmax(&feats);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut action = lps.len() - 1;
        for (a, &lp) in lps.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                action = a;
                break;
            }
        }
        response.push(action as Token);
        logprobs.push(lps[action]);
        if action as Token == eos {
            break;
        }
    }
    let truncated = response.last() != Some(&eos);
    let reward = verify(task, problem, &response);
    Trajectory {
        problem_id: problem.id,
        response,
        behavior_logprobs: logprobs,
        reward,
        behavior_version: params.version,
        truncated,
    }
}

/// Greedy (argmax) decode, ties broken toward the lowest token id.
pub fn greedy_decode(
    params: &PolicyParams,
    task: &TaskSpec,
    problem: &Problem,
    max_len: usize,
) -> Vec<Token> {
    let eos = task.eos();
    let mut response: Vec<Token> = Vec::with_capacity(max_len);
    while response.len() < max_len {
        let feats = params.feature_map.features(&problem.prompt, &response);
        let logits = params.logits(&feats);
        let mut best = 0usize;
        for (a, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = a;
            }
        }
        response.push(best as Token);
        if best as Token == eos {
            break;
        }
    }
    response
}

/// Accumulated parameter gradients for one batch.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    pub policy: Vec<f64>,
    pub value: Vec<f64>,
    alphabet: usize,
}

impl GradBuffer {
    pub fn zeros_like(params: &PolicyParams) -> Self {
        GradBuffer {
            policy: vec![0.0; params.policy_w.len()],
            value: vec![0.0; params.value_w.len()],
            alphabet: params.alphabet(),
        }
    }

    /// Backprop a per-state loss gradient w.r.t. the logits into the policy
    /// weights (features are 0/1, so each active row adds the logit grad).
    pub fn add_logit_grad(&mut self, feats: &[usize], dloss_dlogits: &[f64]) {
        let a = self.alphabet;
        for &f in feats {
            let row = &mut self.policy[f * a..(f + 1) * a];
            for (g, d) in row.iter_mut().zip(dloss_dlogits) {
                *g += d;
            }
        }
    }

    /// Backprop a scalar loss gradient w.r.t. the state value.
    pub fn add_value_grad(&mut self, feats: &[usize], dloss_dvalue: f64) {
        for &f in feats {
            self.value[f] += dloss_dvalue;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.policy.iter_mut().chain(self.value.iter_mut()) {
            *g *= factor;
        }
    }

    /// Global L2 norm over policy and value gradients jointly.
    pub fn global_norm(&self) -> f64 {
        self.policy
            .iter()
            .chain(self.value.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.policy.iter().all(|g| g.is_finite()) && self.value.iter().all(|g| g.is_finite())
    }
}

/// Weights that solve the copy task deterministically when the window covers
/// `prompt_len + 1` tokens: the slot-0 token dictates the output. Pad maps to
/// the separator, the separator to EOS, and every content token to itself.
/// Useful as a known-optimal reference policy in tests and sanity checks.
pub fn copy_expert_params(task: &TaskSpec, scale: f64) -> PolicyParams {
    let window = task.prompt_len + 1;
    let mut params = PolicyParams::new_zero(window, task.alphabet_size());
    let fm = params.feature_map;
    let a = task.alphabet_size();
    let pad = fm.slot_index(0, None);
    params.policy_w[pad * a + task.answer_sep() as usize] = scale;
    let sep = fm.slot_index(0, Some(task.answer_sep()));
    params.policy_w[sep * a + task.eos() as usize] = scale;
    for v in 0..task.vocab_size {
        let f = fm.slot_index(0, Some(v));
        params.policy_w[f * a + v as usize] = scale;
    }
    let eos = fm.slot_index(0, Some(task.eos()));
    params.policy_w[eos * a + task.eos() as usize] = scale;
    params
}

/// One SGD step with global gradient-norm clipping.
pub fn sgd_step(
    params: &mut PolicyParams,
    grad: &GradBuffer,
    lr: f64,
    grad_clip: f64,
) -> Result<()> {
    if !grad.is_finite() {
        return Err(Error::NonFinite(
            "gradient contains NaN or infinite entries".into(),
        ));
    }
    let norm = grad.global_norm();
    let scale = if grad_clip > 0.0 && norm > grad_clip {
        grad_clip / norm
    } else {
        1.0
    };
    for (w, g) in params.policy_w.iter_mut().zip(&grad.policy) {
        *w -= lr * scale * g;
    }
    for (w, g) in params.value_w.iter_mut().zip(&grad.value) {
        *w -= lr * scale * g;
    }
    Ok(())
}
