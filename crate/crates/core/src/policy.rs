//! Tabular softmax policies with analytic score functions.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::EstimatorKind;
use crate::model::env::sample_index;

/// Per-agent softmax policy over `(history key, action)` logits.
///
/// Unseen history keys behave as zero logits (uniform policy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    num_actions: usize,
    logits: BTreeMap<u64, Vec<f64>>,
}

/// Score-function sample for one history: coordinates over that history's
/// logits, zero everywhere else.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub history_key: u64,
    pub action: u32,
    pub values: Vec<f64>,
    pub kind: Option<EstimatorKind>,
}

impl GradientSample {
    pub fn scaled(mut self, factor: f64) -> Self {
        self.values.iter_mut().for_each(|v| *v *= factor);
        self
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Sum of gradient samples across histories.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyGradient {
    pub entries: BTreeMap<u64, Vec<f64>>,
}

impl PolicyGradient {
    pub fn add(&mut self, key: u64, values: &[f64], weight: f64) {
        let slot = self
            .entries
            .entry(key)
            .or_insert_with(|| vec![0.0; values.len()]);
        for (s, v) in slot.iter_mut().zip(values) {
            *s += weight * v;
        }
    }

    pub fn add_sample(&mut self, sample: &GradientSample, weight: f64) {
        self.add(sample.history_key, &sample.values, weight);
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.entries.values_mut().flatten() {
            *v *= factor;
        }
    }

    pub fn norm(&self) -> f64 {
        self.entries.values().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().flatten().all(|v| v.is_finite())
    }

    /// Rescales so the L2 norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `e_a - pi`, with the `a` coordinate computed as the mass of the other
/// actions so it stays accurate when `pi(a)` is close to one.
pub(crate) fn score(probs: &[f64], action: usize) -> Vec<f64> {
    let rest: f64 = probs
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != action)
        .map(|(_, p)| p)
        .sum();
    probs
        .iter()
        .enumerate()
        .map(|(k, &p)| if k == action { rest } else { -p })
        .collect()
}

pub(crate) fn score_inner_product(probs: &[f64], action: usize) -> f64 {
    score(probs, action).iter().map(|g| g * g).sum()
}

impl SoftmaxPolicy {
    pub fn new(num_actions: usize) -> Self {
        assert!(num_actions > 0, "policy needs at least one action");
        Self {
            num_actions,
            logits: BTreeMap::new(),
        }
    }

    /// Policy with logits drawn uniformly from `[-scale, scale]` for keys
    /// `0..num_keys`.
    pub fn random<R: Rng + ?Sized>(num_actions: usize, num_keys: u64, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::new(num_actions);
        for key in 0..num_keys {
            let z = (0..num_actions).map(|_| rng.random_range(-scale..=scale)).collect();
            p.logits.insert(key, z);
        }
        p
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn logits(&self, key: u64) -> Vec<f64> {
        self.logits
            .get(&key)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.num_actions])
    }

    pub fn set_logits(&mut self, key: u64, logits: Vec<f64>) -> Result<()> {
        if logits.len() != self.num_actions {
            return Err(Error::Argument(format!(
                "expected {} logits, got {}",
                self.num_actions,
                logits.len()
            )));
        }
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite(format!("logits for history {key}")));
        }
        self.logits.insert(key, logits);
        Ok(())
    }

    /// Number of history keys with explicitly stored logits.
    pub fn num_entries(&self) -> usize {
        self.logits.len()
    }

    pub fn keys(&self) -> impl Iterator<Item = u64> + '_ {
        self.logits.keys().copied()
    }

    pub fn action_distribution(&self, key: u64) -> Vec<f64> {
        match self.logits.get(&key) {
            Some(z) => softmax(z),
            None => vec![1.0 / self.num_actions as f64; self.num_actions],
        }
    }

    pub fn log_prob(&self, key: u64, action: u32) -> Result<f64> {
        self.check_action(action)?;
        let z = self.logits(key);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        Ok(z[action as usize] - lse)
    }

    fn check_action(&self, action: u32) -> Result<()> {
        if (action as usize) < self.num_actions {
            Ok(())
        } else {
            Err(Error::Argument(format!(
                "action {action} out of range {}",
                self.num_actions
            )))
        }
    }

    /// Gradient of `log pi(action | key)` with respect to the logits of `key`.
    pub fn log_prob_gradient(&self, key: u64, action: u32) -> Result<GradientSample> {
        self.check_action(action)?;
        let probs = self.action_distribution(key);
        Ok(GradientSample {
            history_key: key,
            action,
            values: score(&probs, action as usize),
            kind: None,
        })
    }

    /// Squared norm of the score, `S(a) = |e_a - pi|^2`.
    pub fn grad_inner_product(&self, key: u64, action: u32) -> Result<f64> {
        self.check_action(action)?;
        Ok(score_inner_product(
            &self.action_distribution(key),
            action as usize,
        ))
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, key: u64, rng: &mut R) -> u32 {
        sample_index(&self.action_distribution(key), rng) as u32
    }

    /// Plain gradient-ascent step `theta += lr * g`.
    pub fn apply_gradient(&mut self, gradient: &PolicyGradient, learning_rate: f64) -> Result<()> {
        check_rate(learning_rate)?;
        if !gradient.is_finite() {
            return Err(Error::NonFinite("policy gradient".into()));
        }
        for (&key, g) in &gradient.entries {
            self.bump(key, g, learning_rate)?;
        }
        Ok(())
    }

    fn bump(&mut self, key: u64, step: &[f64], scale: f64) -> Result<()> {
        if step.len() != self.num_actions {
            return Err(Error::Argument("gradient length mismatch".into()));
        }
        let n = self.num_actions;
        let z = self.logits.entry(key).or_insert_with(|| vec![0.0; n]);
        for (zi, gi) in z.iter_mut().zip(step) {
            *zi += scale * gi;
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("logits for history {key}")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn check_rate(lr: f64) -> Result<()> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("learning rate must be positive, got {lr}")))
    }
}

/// First-order optimizer used for actor updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer together with its per-coordinate state.
///
/// Adam state is kept per history key and only touched keys are updated.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    t: u64,
    m: BTreeMap<u64, Vec<f64>>,
    v: BTreeMap<u64, Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, policy: &mut SoftmaxPolicy, gradient: &PolicyGradient, lr: f64) -> Result<()> {
        let (beta1, beta2, eps) = match self.kind {
            OptimizerKind::Sgd => return policy.apply_gradient(gradient, lr),
            OptimizerKind::Adam { beta1, beta2, eps } => (beta1, beta2, eps),
        };
        check_rate(lr)?;
        if !gradient.is_finite() {
            return Err(Error::NonFinite("policy gradient".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (&key, g) in &gradient.entries {
            let m = self.m.entry(key).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(key).or_insert_with(|| vec![0.0; g.len()]);
            let mut step = vec![0.0; g.len()];
            for k in 0..g.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                step[k] = (m[k] / bc1) / ((v[k] / bc2).sqrt() + eps);
            }
            policy.bump(key, &step, lr)?;
        }
        Ok(())
    }
}
