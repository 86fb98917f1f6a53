//! Loss terms: clipped surrogates (on-policy and shifted-window), KL
//! penalties, entropy bonus, value loss, and the composite two-stage loss
//! with analytic gradients.
//!
//! All losses follow the minimization convention: the composite is
//! `surrogate + c1 * value_loss - c2 * entropy + beta * kl`.

use crate::env::Token;
use crate::error::{Error, Result};
use crate::policy::{entropy_from_logprobs, Features, GradBuffer, PolicyParams};
use serde::{Deserialize, Serialize};

/// Smallest admissible lower clip bound when a shifted window degenerates.
pub const MIN_CLIP_LOWER: f64 = 1e-8;

/// A clip window around a ratio center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipWindow {
    pub center: f64,
    pub epsilon: f64,
}

impl ClipWindow {
    /// Window bounds; the lower bound is clamped to [`MIN_CLIP_LOWER`] when
    /// the center sits below epsilon. Returns `(lo, hi, clamped)`.
    pub fn bounds(&self) -> (f64, f64, bool) {
        let lo = self.center - self.epsilon;
        let hi = self.center + self.epsilon;
        if lo <= 0.0 {
            (MIN_CLIP_LOWER, hi, true)
        } else {
            (lo, hi, false)
        }
    }
}

/// One evaluated surrogate term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateTerm {
    /// Loss value (minimization convention).
    pub loss: f64,
    /// True when the clipped branch was strictly smaller in the min.
    pub clipped: bool,
    /// True when the window's lower bound had to be clamped.
    pub clamped_lower: bool,
    /// True when the unclipped branch carries gradient.
    pub grad_flows: bool,
}

/// Standard clipped surrogate with the window centered at 1.
pub fn ppo_clip_term(ratio: f64, advantage: f64, epsilon: f64) -> Result<f64> {
    if !ratio.is_finite() {
        return Err(Error::NonFinite(format!(
            "importance ratio is not finite: {ratio}"
        )));
    }
    let surr1 = ratio * advantage;
    let surr2 = ratio.max(1.0 - epsilon).min(1.0 + epsilon) * advantage;
    Ok(-surr1.min(surr2))
}

/// Shifted-window clipped surrogate: the clip window is centered at the
/// ratio between the step-start policy and the behavior policy, so replayed
/// data is constrained around its own drift rather than around 1.
pub fn mixppg_term(
    theta_ratio: f64,
    center: f64,
    advantage: f64,
    epsilon: f64,
) -> Result<SurrogateTerm> {
    if !theta_ratio.is_finite() || !center.is_finite() {
        return Err(Error::NonFinite(format!(
            "surrogate inputs not finite: ratio {theta_ratio}, center {center}"
        )));
    }
    let (lo, hi, clamped_lower) = ClipWindow { center, epsilon }.bounds();
    let surr1 = theta_ratio * advantage;
    let surr2 = theta_ratio.max(lo).min(hi) * advantage;
    let clipped = surr2 < surr1;
    Ok(SurrogateTerm {
        loss: -surr1.min(surr2),
        clipped,
        clamped_lower,
        grad_flows: surr1 <= surr2,
    })
}

fn ppo_term_full(ratio: f64, advantage: f64, epsilon: f64) -> Result<SurrogateTerm> {
    if !ratio.is_finite() {
        return Err(Error::NonFinite(format!(
            "importance ratio is not finite: {ratio}"
        )));
    }
    let surr1 = ratio * advantage;
    let surr2 = ratio.max(1.0 - epsilon).min(1.0 + epsilon) * advantage;
    let clipped = surr2 < surr1;
    Ok(SurrogateTerm {
        loss: -surr1.min(surr2),
        clipped,
        clamped_lower: false,
        grad_flows: surr1 <= surr2,
    })
}

/// Convex combination of two KL estimates: `lambda` weights the base-model
/// anchor, `1 - lambda` the previous-policy anchor.
pub fn kl_convex(kl_base: f64, kl_prev: f64, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!(
            "kl-convex lambda must lie in [0, 1], got {lambda}"
        )));
    }
    Ok(lambda * kl_base + (1.0 - lambda) * kl_prev)
}

/// Low-variance per-token KL estimator (the k3 form): with
/// `u = exp(ref_lp - theta_lp)`, returns `u - (ref_lp - theta_lp) - 1`.
/// Nonnegative, zero exactly when the log-probs agree.
pub fn kl_estimate(theta_logprob: f64, ref_logprob: f64) -> f64 {
    let diff = ref_logprob - theta_logprob;
    diff.exp() - diff - 1.0
}

/// Exact KL(theta || reference) over a small alphabet, for tests and
/// diagnostics. Inputs are full log-prob vectors.
pub fn exact_kl(theta_logprobs: &[f64], ref_logprobs: &[f64]) -> f64 {
    theta_logprobs
        .iter()
        .zip(ref_logprobs)
        .map(|(&t, &r)| t.exp() * (t - r))
        .sum()
}

/// Squared-error critic loss.
pub fn value_loss(pred: f64, rtg: f64) -> f64 {
    0.5 * (pred - rtg) * (pred - rtg)
}

/// Data source of one batch item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Fresh,
    Replayed,
}

/// One token of a training batch with everything the loss needs that does
/// not depend on the live parameters.
#[derive(Debug, Clone)]
pub struct PreparedToken {
    pub feats: Features,
    pub action: Token,
    pub behavior_lp: f64,
    /// Clip-window center: step-start policy over behavior policy.
    pub center: f64,
    pub advantage: f64,
    /// Value target (return-to-go); ignored without a critic.
    pub rtg: f64,
    /// Log-prob of the action under the base anchor (or the reincarnated
    /// anchor in the on-policy stage).
    pub base_lp: f64,
    /// Log-prob under the previous-policy anchor (equals `base_lp` in the
    /// on-policy stage).
    pub prev_lp: f64,
    /// Token position within its response.
    pub position: usize,
}

/// One trajectory's worth of prepared tokens.
#[derive(Debug, Clone)]
pub struct PreparedItem {
    pub tokens: Vec<PreparedToken>,
    pub provenance: Provenance,
}

/// A full training batch, ready for repeated loss evaluation.
#[derive(Debug, Clone, Default)]
pub struct PreparedBatch {
    pub items: Vec<PreparedItem>,
}

impl PreparedBatch {
    pub fn token_count(&self) -> usize {
        self.items.iter().map(|i| i.tokens.len()).sum()
    }

    pub fn has_replayed(&self) -> bool {
        self.items
            .iter()
            .any(|i| i.provenance == Provenance::Replayed)
    }
}

/// Training stage: mixed on-/off-policy with dual KL anchors, or the
/// post-reset on-policy stage with a single anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Mix,
    Reincarnated,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Mix => write!(f, "mix"),
            Stage::Reincarnated => write!(f, "reincarnated"),
        }
    }
}

/// Loss weighting coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCoeffs {
    pub epsilon: f64,
    pub beta: f64,
    pub c1: f64,
    pub c2: f64,
}

/// All scalar components of one composite loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl_base: f64,
    pub kl_prev: f64,
    pub kl_convex: f64,
    pub total: f64,
    pub mean_is_ratio: f64,
    pub clip_fraction: f64,
    pub clamp_count: u64,
}

/// Composite loss over a prepared batch.
///
/// Stage `Mix` applies the shifted-window surrogate per token and the
/// lambda-weighted dual-anchor KL; stage `Reincarnated` applies the standard
/// clipped surrogate (fresh data only) with the KL anchored to the
/// reincarnated reference. With `use_critic == false` (group-advantage mode)
/// the value term is dropped entirely.
pub fn composite_loss(
    batch: &PreparedBatch,
    params: &PolicyParams,
    stage: Stage,
    coeffs: &LossCoeffs,
    lambda: f64,
    use_critic: bool,
) -> Result<LossBreakdown> {
    evaluate(batch, params, stage, coeffs, lambda, use_critic, None)
}

/// Composite loss plus its analytic gradient w.r.t. the live parameters.
pub fn composite_loss_with_grad(
    batch: &PreparedBatch,
    params: &PolicyParams,
    stage: Stage,
    coeffs: &LossCoeffs,
    lambda: f64,
    use_critic: bool,
) -> Result<(LossBreakdown, GradBuffer)> {
    let mut grad = GradBuffer::zeros_like(params);
    let breakdown = evaluate(
        batch,
        params,
        stage,
        coeffs,
        lambda,
        use_critic,
        Some(&mut grad),
    )?;
    Ok((breakdown, grad))
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    batch: &PreparedBatch,
    params: &PolicyParams,
    stage: Stage,
    coeffs: &LossCoeffs,
    lambda: f64,
    use_critic: bool,
    mut grad: Option<&mut GradBuffer>,
) -> Result<LossBreakdown> {
    if batch.items.is_empty() || batch.token_count() == 0 {
        return Err(Error::Config("composite loss over an empty batch".into()));
    }
    if stage == Stage::Reincarnated && batch.has_replayed() {
        return Err(Error::Config(
            "replayed items are not admissible in the reincarnated on-policy stage".into(),
        ));
    }
    if stage == Stage::Mix {
        // lambda range check up front; the same call combines the means below
        kl_convex(0.0, 0.0, lambda)?;
    }

    let n = batch.token_count() as f64;
    let inv_n = 1.0 / n;
    let mut sum_surr = 0.0;
    let mut sum_vl = 0.0;
    let mut sum_ent = 0.0;
    let mut sum_kl_base = 0.0;
    let mut sum_kl_prev = 0.0;
    let mut sum_ratio = 0.0;
    let mut clipped_count = 0u64;
    let mut clamp_count = 0u64;

    let alphabet = params.alphabet();
    let mut dlogits = vec![0.0; alphabet];

    for item in &batch.items {
        for tok in &item.tokens {
            let lps = params.log_softmax(&tok.feats);
            let theta_lp = lps[tok.action as usize];
            let ratio = (theta_lp - tok.behavior_lp).exp();

            let term = match stage {
                Stage::Mix => mixppg_term(ratio, tok.center, tok.advantage, coeffs.epsilon)?,
                Stage::Reincarnated => ppo_term_full(ratio, tok.advantage, coeffs.epsilon)?,
            };
            sum_surr += term.loss;
            if term.clipped {
                clipped_count += 1;
            }
            if term.clamped_lower {
                clamp_count += 1;
            }
            sum_ratio += ratio;

            let ent = entropy_from_logprobs(&lps);
            sum_ent += ent;

            let u_base = (tok.base_lp - theta_lp).exp();
            let u_prev = (tok.prev_lp - theta_lp).exp();
            let k3_base = u_base - (tok.base_lp - theta_lp) - 1.0;
            let k3_prev = u_prev - (tok.prev_lp - theta_lp) - 1.0;
            sum_kl_base += k3_base;
            sum_kl_prev += k3_prev;

            let mut v = 0.0;
            if use_critic {
                v = params.value(&tok.feats);
                sum_vl += value_loss(v, tok.rtg);
            }

            if let Some(g) = grad.as_deref_mut() {
                // d(loss)/d(theta_lp), all terms that route through the
                // sampled action's log-prob
                let surr_coeff = if term.grad_flows {
                    -tok.advantage * ratio
                } else {
                    0.0
                };
                let kl_coeff = match stage {
                    Stage::Mix => lambda * (1.0 - u_base) + (1.0 - lambda) * (1.0 - u_prev),
                    Stage::Reincarnated => 1.0 - u_base,
                };
                let lp_coeff = (surr_coeff + coeffs.beta * kl_coeff) * inv_n;
                for (b, d) in dlogits.iter_mut().enumerate() {
                    let p_b = lps[b].exp();
                    let onehot = if b == tok.action as usize { 1.0 } else { 0.0 };
                    // entropy term: d(-c2 * H)/dz_b = c2 * p_b * (lp_b + H)
                    *d = lp_coeff * (onehot - p_b) + coeffs.c2 * p_b * (lps[b] + ent) * inv_n;
                }
                g.add_logit_grad(&tok.feats, &dlogits);
                if use_critic {
                    g.add_value_grad(&tok.feats, coeffs.c1 * (v - tok.rtg) * inv_n);
                }
            }
        }
    }

    let surrogate = sum_surr * inv_n;
    let value_loss = sum_vl * inv_n;
    let entropy = sum_ent * inv_n;
    let kl_base = sum_kl_base * inv_n;
    let kl_prev = sum_kl_prev * inv_n;
    let kl_cvx = match stage {
        Stage::Mix => kl_convex(kl_base, kl_prev, lambda)?,
        Stage::Reincarnated => kl_base,
    };
    let total = surrogate + coeffs.c1 * value_loss - coeffs.c2 * entropy + coeffs.beta * kl_cvx;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!(
            "composite loss is not finite: surrogate {surrogate}, value {value_loss}, \
             entropy {entropy}, kl {kl_cvx}"
        )));
    }

    Ok(LossBreakdown {
        surrogate,
        value_loss,
        entropy,
        kl_base,
        kl_prev,
        kl_convex: kl_cvx,
        total,
        mean_is_ratio: sum_ratio * inv_n,
        clip_fraction: clipped_count as f64 / n,
        clamp_count,
    })
}
