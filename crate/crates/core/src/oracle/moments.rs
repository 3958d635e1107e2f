//! Exact first, second and fourth moments of single-sample gradient
//! estimators.
//!
//! A sample is drawn by picking a decision step uniformly, then a joint
//! history, a joint action and any received messages (or noise value) from
//! the on-policy distribution. The estimator of agent `i` is supported on
//! the logits of `h_i`, so vectors are stored per history key.

use std::collections::BTreeMap;

use crate::channel::{Channel, NoiseModel};
use crate::critic::{CentralizedQ, CommQ, LocalQ};
use crate::error::{Error, Result};
use crate::estimator::{baseline_from, kl_term, weighted_score};
use crate::oracle::qvalues::noise_messages;
use crate::oracle::tree::{received_distribution, OutcomeTree};
use crate::policy::score_inner_product;

#[derive(Debug, Clone, Copy)]
pub enum CriticRef<'a> {
    Joint(&'a CentralizedQ),
    Local(&'a LocalQ),
    Comm(&'a CommQ),
}

/// Where the critic's extra conditioning variable comes from.
#[derive(Debug, Clone, Copy)]
pub enum MessageSource<'a> {
    None,
    Channel(&'a Channel),
    /// Perfect codes of the other agents plus the index of a noise value.
    Noise(&'a NoiseModel),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineRule {
    None,
    /// The optimal baseline multiplied by `scale`.
    Optimal { eta: f64, scale: f64 },
}

/// Full description of one estimator for one agent.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorSpec<'a> {
    pub agent: usize,
    pub critic: CriticRef<'a>,
    pub messages: MessageSource<'a>,
    pub baseline: BaselineRule,
    /// `(alpha, beta)` of the KL alignment term.
    pub kl: Option<(f64, f64)>,
}

impl<'a> EstimatorSpec<'a> {
    pub fn plain(agent: usize, critic: CriticRef<'a>, messages: MessageSource<'a>) -> Self {
        Self {
            agent,
            critic,
            messages,
            baseline: BaselineRule::None,
            kl: None,
        }
    }

    pub fn with_baseline(mut self, eta: f64, scale: f64) -> Self {
        self.baseline = BaselineRule::Optimal { eta, scale };
        self
    }

    pub fn with_kl(mut self, alpha: f64, beta: f64) -> Self {
        self.kl = Some((alpha, beta));
        self
    }

    /// Critic value with the agent's own action replaced by `own`.
    pub fn value(&self, keys: &[u64], actions: &[u32], messages: &[u64], own: u32) -> f64 {
        let i = self.agent;
        match self.critic {
            CriticRef::Joint(q) => {
                let mut a = actions.to_vec();
                a[i] = own;
                q.get(&(keys.to_vec(), a))
            }
            CriticRef::Local(q) => q.get(&(keys[i], own)),
            CriticRef::Comm(q) => q.get(&(keys[i], own, messages.to_vec())),
        }
    }

    /// The estimator evaluated at one sample, over the logits of `h_i`.
    pub fn sample(&self, keys: &[u64], actions: &[u32], messages: &[u64], probs: &[f64]) -> Result<Vec<f64>> {
        let a_i = actions[self.agent];
        let needs_all = self.baseline != BaselineRule::None || self.kl.is_some();
        let all: Vec<f64> = if needs_all {
            (0..probs.len() as u32)
                .map(|a| self.value(keys, actions, messages, a))
                .collect()
        } else {
            Vec::new()
        };
        let q = if needs_all {
            all[a_i as usize]
        } else {
            self.value(keys, actions, messages, a_i)
        };
        let b = match self.baseline {
            BaselineRule::None => 0.0,
            BaselineRule::Optimal { eta, scale } => scale * baseline_from(probs, &all, eta)?,
        };
        let mut g = weighted_score(probs, a_i, q - b);
        if let Some((alpha, beta)) = self.kl {
            if beta != 0.0 {
                let (_, kg) = kl_term(probs, &all, alpha)?;
                for (gi, ki) in g.iter_mut().zip(kg) {
                    *gi += beta * ki;
                }
            }
        }
        Ok(g)
    }

    /// `(E_a[Q S])^2 / E_a[S]` for the sample's context; its expectation is
    /// the variance removed by the optimal baseline.
    pub fn baseline_gain(&self, keys: &[u64], actions: &[u32], messages: &[u64], probs: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for a in 0..probs.len() {
            let s = score_inner_product(probs, a);
            num += probs[a] * self.value(keys, actions, messages, a as u32) * s;
            den += probs[a] * s;
        }
        if den > 0.0 {
            num * num / den
        } else {
            0.0
        }
    }
}

/// One atom of the sampling distribution.
pub struct Atom<'t> {
    pub prob: f64,
    pub keys: &'t [u64],
    pub actions: Vec<u32>,
    pub messages: Vec<u64>,
    pub probs: &'t [f64],
}

/// Visits every atom of the sampling distribution of `spec`.
pub fn for_each_atom<F>(tree: &OutcomeTree, spec: &EstimatorSpec, actions_per_agent: &[usize], mut f: F) -> Result<()>
where
    F: FnMut(Atom) -> Result<()>,
{
    let i = spec.agent;
    let weight_t = 1.0 / tree.levels.len() as f64;
    for level in &tree.levels {
        for node in level {
            for a in 0..node.joint_probs.len() {
                let p = weight_t * node.prob * node.joint_probs[a];
                if p == 0.0 {
                    continue;
                }
                let actions = tree.joint_actions.digits(a);
                let received: Vec<(Vec<u64>, f64)> = match spec.messages {
                    MessageSource::None => vec![(Vec::new(), 1.0)],
                    MessageSource::Channel(c) => received_distribution(c, &node.keys, &actions, i)?,
                    MessageSource::Noise(noise) => {
                        let codes = noise_messages(&node.keys, &actions, actions_per_agent, i);
                        noise
                            .probs
                            .iter()
                            .enumerate()
                            .map(|(e, &pe)| {
                                let mut m = codes.clone();
                                m.push(e as u64);
                                (m, pe)
                            })
                            .collect()
                    }
                };
                for (m, pm) in received {
                    if pm == 0.0 {
                        continue;
                    }
                    f(Atom {
                        prob: p * pm,
                        keys: &node.keys,
                        actions: actions.clone(),
                        messages: m,
                        probs: &node.action_probs[i],
                    })?;
                }
            }
        }
    }
    Ok(())
}

/// Exact moments of one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMoments {
    /// Mean gradient per history key.
    pub mean: BTreeMap<u64, Vec<f64>>,
    /// `E |g|^2`.
    pub second_moment: f64,
    /// `E |g|^2 - |E g|^2`.
    pub variance: f64,
    /// Per-coordinate variances, per history key.
    pub coordinate_variance: BTreeMap<u64, Vec<f64>>,
    /// `E |g - E g|^4`, used for the standard error of sampled variances.
    pub fourth_central: f64,
    /// Expected squared-norm reduction available to the optimal baseline.
    pub baseline_gain: f64,
}

impl GradientMoments {
    pub fn mean_norm_squared(&self) -> f64 {
        self.mean.values().flatten().map(|v| v * v).sum()
    }

    /// Largest coordinate difference between two mean vectors.
    pub fn mean_max_diff(&self, other: &GradientMoments) -> f64 {
        let keys: std::collections::BTreeSet<&u64> = self.mean.keys().chain(other.mean.keys()).collect();
        let mut worst: f64 = 0.0;
        for k in keys {
            let zero = Vec::new();
            let a = self.mean.get(k).unwrap_or(&zero);
            let b = other.mean.get(k).unwrap_or(&zero);
            for c in 0..a.len().max(b.len()) {
                let x = a.get(c).copied().unwrap_or(0.0);
                let y = b.get(c).copied().unwrap_or(0.0);
                worst = worst.max((x - y).abs());
            }
        }
        worst
    }
}

pub fn gradient_moments(tree: &OutcomeTree, spec: &EstimatorSpec, actions_per_agent: &[usize]) -> Result<GradientMoments> {
    let mut mean: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut square: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut second = 0.0;
    let mut gain = 0.0;
    let mut total = 0.0;
    for_each_atom(tree, spec, actions_per_agent, |atom| {
        let g = spec.sample(atom.keys, &atom.actions, &atom.messages, atom.probs)?;
        let k = atom.keys[spec.agent];
        let m = mean.entry(k).or_insert_with(|| vec![0.0; g.len()]);
        let s = square.entry(k).or_insert_with(|| vec![0.0; g.len()]);
        for c in 0..g.len() {
            m[c] += atom.prob * g[c];
            s[c] += atom.prob * g[c] * g[c];
        }
        second += atom.prob * g.iter().map(|x| x * x).sum::<f64>();
        gain += atom.prob * spec.baseline_gain(atom.keys, &atom.actions, &atom.messages, atom.probs);
        total += atom.prob;
        Ok(())
    })?;
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Model(format!("sampling distribution has mass {total}")));
    }
    let mean_sq: f64 = mean.values().flatten().map(|v| v * v).sum();
    let coordinate_variance = mean
        .iter()
        .map(|(k, m)| {
            let s = &square[k];
            (*k, m.iter().zip(s).map(|(mu, sq)| sq - mu * mu).collect())
        })
        .collect();

    // |g - mu|^2 = |mu|^2 - |mu_h|^2 + |g - mu_h|^2 because g lives on h's logits.
    let mut fourth = 0.0;
    for_each_atom(tree, spec, actions_per_agent, |atom| {
        let g = spec.sample(atom.keys, &atom.actions, &atom.messages, atom.probs)?;
        let mu_h = &mean[&atom.keys[spec.agent]];
        let own: f64 = mu_h.iter().map(|v| v * v).sum();
        let diff: f64 = g.iter().zip(mu_h).map(|(x, m)| (x - m) * (x - m)).sum();
        let d2 = mean_sq - own + diff;
        fourth += atom.prob * d2 * d2;
        Ok(())
    })?;
    Ok(GradientMoments {
        mean,
        second_moment: second,
        variance: second - mean_sq,
        coordinate_variance,
        fourth_central: fourth,
        baseline_gain: gain,
    })
}
