//! Exhaustive computation of on-policy critics and gradient moments.

pub mod moments;
pub mod qvalues;
pub mod tree;
pub mod verify;

use crate::channel::{Channel, NoiseModel};
use crate::critic::{CentralizedQ, CommQ, LocalQ};
use crate::error::{Error, Result};
use crate::estimator::{EstimatorKind, HyperParams};
use crate::model::TabularDecPomdp;
use crate::policy::SoftmaxPolicy;

pub use moments::{BaselineRule, CriticRef, EstimatorSpec, GradientMoments, MessageSource};
pub use qvalues::{NodeValues, SurrogateValues};
pub use tree::{enumerate_joint_outcomes, Outcome, OutcomeTree, DEFAULT_NODE_BUDGET};
pub use verify::VerificationReport;

/// An enumerated model with its exact centralized critic.
pub struct Oracle<'a> {
    pub model: &'a TabularDecPomdp,
    pub tree: OutcomeTree,
    pub joint: NodeValues,
}

impl<'a> Oracle<'a> {
    pub fn new(model: &'a TabularDecPomdp, policies: &[SoftmaxPolicy]) -> Result<Self> {
        Self::with_budget(model, policies, DEFAULT_NODE_BUDGET)
    }

    pub fn with_budget(model: &'a TabularDecPomdp, policies: &[SoftmaxPolicy], budget: usize) -> Result<Self> {
        let tree = OutcomeTree::build_with_budget(model, policies, budget)?;
        let joint = qvalues::joint_q_on_tree(&tree, model.gamma);
        Ok(Self { model, tree, joint })
    }

    pub fn q_joint(&self) -> CentralizedQ {
        qvalues::joint_table(&self.tree, &self.joint)
    }

    pub fn expected_return(&self) -> f64 {
        qvalues::expected_return(&self.tree, &self.joint)
    }

    pub fn q_comm(&self, channel: &Channel, agent: usize) -> Result<CommQ> {
        self.check_agent(agent)?;
        qvalues::comm_q_on_tree(&self.tree, self.model.gamma, channel, agent)
    }

    pub fn q_local(&self, agent: usize) -> Result<LocalQ> {
        self.check_agent(agent)?;
        qvalues::local_q_on_tree(&self.tree, self.model.gamma, agent)
    }

    pub fn surrogate_values(&self, noise: &NoiseModel) -> Result<SurrogateValues> {
        qvalues::require_binary(self.model.binary_rewards(), noise)?;
        qvalues::surrogate_q_on_tree(&self.tree, &self.model.reward, self.model.gamma, noise)
    }

    pub fn q_surrogate(&self, noise: &NoiseModel, agent: usize) -> Result<CommQ> {
        self.check_agent(agent)?;
        let values = self.surrogate_values(noise)?;
        qvalues::surrogate_table(&self.tree, &values, &self.model.actions_per_agent, agent)
    }

    pub fn moments(&self, spec: &EstimatorSpec) -> Result<GradientMoments> {
        self.check_agent(spec.agent)?;
        moments::gradient_moments(&self.tree, spec, &self.model.actions_per_agent)
    }

    fn check_agent(&self, agent: usize) -> Result<()> {
        if agent < self.model.num_agents {
            Ok(())
        } else {
            Err(Error::Argument(format!("agent {agent} out of range")))
        }
    }
}

pub fn exact_q_joint(model: &TabularDecPomdp, policies: &[SoftmaxPolicy]) -> Result<CentralizedQ> {
    Ok(Oracle::new(model, policies)?.q_joint())
}

pub fn exact_q_comm(model: &TabularDecPomdp, policies: &[SoftmaxPolicy], channel: &Channel, agent: usize) -> Result<CommQ> {
    Oracle::new(model, policies)?.q_comm(channel, agent)
}

pub fn exact_surrogate_q(
    model: &TabularDecPomdp,
    policies: &[SoftmaxPolicy],
    noise: &NoiseModel,
    agent: usize,
) -> Result<CommQ> {
    Oracle::new(model, policies)?.q_surrogate(noise, agent)
}

/// Exact moments of estimator `kind` for `agent`, using exact critics.
///
/// Message-based kinds use the communicating critic of `source` (a channel,
/// or the surrogate critic of a noise model); `ctde` and `dtde` ignore it.
pub fn exact_gradient_moments(
    kind: EstimatorKind,
    model: &TabularDecPomdp,
    policies: &[SoftmaxPolicy],
    source: MessageSource,
    agent: usize,
    params: &HyperParams,
) -> Result<GradientMoments> {
    params.validate()?;
    let oracle = Oracle::new(model, policies)?;
    match kind {
        EstimatorKind::Ctde => {
            let q = oracle.q_joint();
            oracle.moments(&EstimatorSpec::plain(agent, CriticRef::Joint(&q), MessageSource::None))
        }
        EstimatorKind::Dtde => {
            let q = oracle.q_local(agent)?;
            oracle.moments(&EstimatorSpec::plain(agent, CriticRef::Local(&q), MessageSource::None))
        }
        _ => {
            let q = match source {
                MessageSource::Channel(c) => oracle.q_comm(c, agent)?,
                MessageSource::Noise(noise) => oracle.q_surrogate(noise, agent)?,
                MessageSource::None => oracle.q_comm(&Channel::Silent, agent)?,
            };
            let source = match source {
                MessageSource::None => MessageSource::Channel(&Channel::Silent),
                other => other,
            };
            let mut spec = EstimatorSpec::plain(agent, CriticRef::Comm(&q), source);
            if matches!(kind, EstimatorKind::DccdaOb | EstimatorKind::DccdaObKl) {
                spec = spec.with_baseline(params.eta, 1.0);
            }
            if kind == EstimatorKind::DccdaObKl {
                spec = spec.with_kl(params.alpha, params.beta);
            }
            oracle.moments(&spec)
        }
    }
}
