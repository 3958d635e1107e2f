//! Single-sample policy-gradient estimators, the optimal message-dependent
//! baseline and the KL alignment term.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::critic::{CentralizedQ, CommQ, LocalQ};
use crate::error::{Error, Result};
use crate::policy::{score, score_inner_product, softmax, GradientSample, SoftmaxPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Ctde,
    Dtde,
    Dccda,
    DccdaOb,
    DccdaObKl,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Ctde,
        EstimatorKind::Dtde,
        EstimatorKind::Dccda,
        EstimatorKind::DccdaOb,
        EstimatorKind::DccdaObKl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Ctde => "ctde",
            EstimatorKind::Dtde => "dtde",
            EstimatorKind::Dccda => "dccda",
            EstimatorKind::DccdaOb => "dccda-ob",
            EstimatorKind::DccdaObKl => "dccda-ob-kl",
        }
    }

    /// Whether the critic conditions on received messages.
    pub fn uses_messages(self) -> bool {
        matches!(
            self,
            EstimatorKind::Dccda | EstimatorKind::DccdaOb | EstimatorKind::DccdaObKl
        )
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown estimator {s:?}")))
    }
}

/// Temperature `alpha`, KL scale `beta` and baseline denominator floor `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.01,
            eta: 1e-12,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.beta >= 0.0) || !(self.eta >= 0.0) {
            return Err(Error::Argument(format!(
                "need alpha > 0, beta >= 0, eta >= 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

fn tagged(key: u64, action: u32, values: Vec<f64>, kind: EstimatorKind) -> GradientSample {
    GradientSample {
        history_key: key,
        action,
        values,
        kind: Some(kind),
    }
}

/// `q * grad log pi(action | key)`.
pub fn weighted_score(probs: &[f64], action: u32, q: f64) -> Vec<f64> {
    score(probs, action as usize).into_iter().map(|g| q * g).collect()
}

pub fn g_ctde(
    q: &CentralizedQ,
    policy: &SoftmaxPolicy,
    joint_keys: &[u64],
    joint_action: &[u32],
    agent: usize,
) -> Result<GradientSample> {
    let value = q.get(&(joint_keys.to_vec(), joint_action.to_vec()));
    let (key, action) = (joint_keys[agent], joint_action[agent]);
    let g = policy.log_prob_gradient(key, action)?.scaled(value);
    Ok(tagged(key, action, g.values, EstimatorKind::Ctde))
}

pub fn g_dtde(q: &LocalQ, policy: &SoftmaxPolicy, key: u64, action: u32) -> Result<GradientSample> {
    let g = policy.log_prob_gradient(key, action)?.scaled(q.get(&(key, action)));
    Ok(tagged(key, action, g.values, EstimatorKind::Dtde))
}

pub fn g_dccda(q: &CommQ, policy: &SoftmaxPolicy, key: u64, action: u32, messages: &[u64]) -> Result<GradientSample> {
    let value = q.get(&(key, action, messages.to_vec()));
    let g = policy.log_prob_gradient(key, action)?.scaled(value);
    Ok(tagged(key, action, g.values, EstimatorKind::Dccda))
}

/// `sum_a pi(a) q(a) S(a) / max(sum_a pi(a) S(a), eta)`.
pub fn baseline_from(probs: &[f64], q: &[f64], eta: f64) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for a in 0..probs.len() {
        let s = score_inner_product(probs, a);
        num += probs[a] * q[a] * s;
        den += probs[a] * s;
    }
    let floored = den.max(eta);
    if !(floored > 0.0) {
        return Err(Error::DivisionGuard { denominator: den, floor: eta });
    }
    Ok(num / floored)
}

fn comm_values(q: &CommQ, key: u64, messages: &[u64], num_actions: usize) -> Vec<f64> {
    (0..num_actions as u32)
        .map(|a| q.get(&(key, a, messages.to_vec())))
        .collect()
}

pub fn optimal_baseline(q: &CommQ, policy: &SoftmaxPolicy, key: u64, messages: &[u64], eta: f64) -> Result<f64> {
    let probs = policy.action_distribution(key);
    baseline_from(&probs, &comm_values(q, key, messages, probs.len()), eta)
}

/// Estimate of the optimal baseline from sampled `(action, q)` pairs that
/// share one `(history, messages)` context.
pub fn sampled_baseline(probs: &[f64], samples: &[(u32, f64)], eta: f64) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(a, q) in samples {
        let s = score_inner_product(probs, a as usize);
        num += q * s;
        den += s;
    }
    let n = samples.len().max(1) as f64;
    let floored = (den / n).max(eta);
    if !(floored > 0.0) {
        return Err(Error::DivisionGuard { denominator: den / n, floor: eta });
    }
    Ok(num / n / floored)
}

pub fn g_dccda_ob(
    q: &CommQ,
    policy: &SoftmaxPolicy,
    key: u64,
    action: u32,
    messages: &[u64],
    eta: f64,
) -> Result<GradientSample> {
    let b = optimal_baseline(q, policy, key, messages, eta)?;
    let value = q.get(&(key, action, messages.to_vec()));
    let g = policy.log_prob_gradient(key, action)?.scaled(value - b);
    Ok(tagged(key, action, g.values, EstimatorKind::DccdaOb))
}

/// Negated `KL(pi || softmax(q / alpha))` and its gradient in the logits of
/// `pi`, with `q` held constant.
pub fn kl_term(probs: &[f64], q: &[f64], alpha: f64) -> Result<(f64, Vec<f64>)> {
    if !(alpha > 0.0) {
        return Err(Error::Argument(format!("temperature must be positive, got {alpha}")));
    }
    let scaled: Vec<f64> = q.iter().map(|v| v / alpha).collect();
    let target = softmax(&scaled);
    let f: Vec<f64> = probs
        .iter()
        .zip(&target)
        .map(|(p, t)| p.ln() - t.ln())
        .collect();
    let kl: f64 = probs.iter().zip(&f).map(|(p, fk)| p * fk).sum();
    let grad = probs.iter().zip(&f).map(|(p, fk)| -p * (fk - kl)).collect();
    Ok((-kl, grad))
}

pub fn kl_regularizer(
    policy: &SoftmaxPolicy,
    q: &CommQ,
    key: u64,
    messages: &[u64],
    alpha: f64,
) -> Result<(f64, Vec<f64>)> {
    let probs = policy.action_distribution(key);
    kl_term(&probs, &comm_values(q, key, messages, probs.len()), alpha)
}

pub fn g_dccda_ob_kl(
    q: &CommQ,
    policy: &SoftmaxPolicy,
    key: u64,
    action: u32,
    messages: &[u64],
    params: &HyperParams,
) -> Result<GradientSample> {
    params.validate()?;
    let mut g = g_dccda_ob(q, policy, key, action, messages, params.eta)?;
    if params.beta != 0.0 {
        let (_, kl_grad) = kl_regularizer(policy, q, key, messages, params.alpha)?;
        for (v, k) in g.values.iter_mut().zip(kl_grad) {
            *v += params.beta * k;
        }
    }
    g.kind = Some(EstimatorKind::DccdaObKl);
    Ok(g)
}

/// Estimator of `kind` from the action distribution and the critic values
/// of every own action in one context (history, teammates' actions or
/// messages). The sampled action's value is `q_all[action]`.
pub fn estimate(kind: EstimatorKind, probs: &[f64], action: u32, q_all: &[f64], params: &HyperParams) -> Result<Vec<f64>> {
    let q = q_all[action as usize];
    match kind {
        EstimatorKind::Ctde | EstimatorKind::Dtde | EstimatorKind::Dccda => Ok(weighted_score(probs, action, q)),
        EstimatorKind::DccdaOb | EstimatorKind::DccdaObKl => {
            let b = baseline_from(probs, q_all, params.eta)?;
            let mut g = weighted_score(probs, action, q - b);
            if kind == EstimatorKind::DccdaObKl && params.beta != 0.0 {
                let (_, kg) = kl_term(probs, q_all, params.alpha)?;
                for (v, k) in g.iter_mut().zip(kg) {
                    *v += params.beta * k;
                }
            }
            Ok(g)
        }
    }
}
