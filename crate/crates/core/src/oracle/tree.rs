//! Forward enumeration of every joint history a model can produce.

use crate::channel::Channel;
use crate::error::{Error, Result};
use crate::model::{AgentHistory, HistoryCodec, MixedRadix, TabularDecPomdp};
use crate::policy::SoftmaxPolicy;

/// Default cap on the number of tree nodes.
pub const DEFAULT_NODE_BUDGET: usize = 10_000_000;

/// A reachable joint history together with everything needed to reason
/// about the next decision.
#[derive(Debug, Clone)]
pub struct Node {
    pub histories: Vec<AgentHistory>,
    pub keys: Vec<u64>,
    /// Probability of reaching this joint history.
    pub prob: f64,
    /// Posterior over states given the joint history.
    pub belief: Vec<f64>,
    /// `pi_i(. | h_i)` for every agent.
    pub action_probs: Vec<Vec<f64>>,
    /// Product policy probability per joint action index.
    pub joint_probs: Vec<f64>,
    /// Expected immediate reward per joint action index.
    pub reward: Vec<f64>,
    /// Per joint action: `(joint observation, child index, P(o | h, a))`.
    pub children: Vec<Vec<(usize, usize, f64)>>,
}

/// All reachable joint histories, one level per decision step.
#[derive(Debug, Clone)]
pub struct OutcomeTree {
    pub levels: Vec<Vec<Node>>,
    pub joint_actions: MixedRadix,
    pub joint_observations: MixedRadix,
}

impl OutcomeTree {
    pub fn build(model: &TabularDecPomdp, policies: &[SoftmaxPolicy]) -> Result<Self> {
        Self::build_with_budget(model, policies, DEFAULT_NODE_BUDGET)
    }

    pub fn build_with_budget(model: &TabularDecPomdp, policies: &[SoftmaxPolicy], budget: usize) -> Result<Self> {
        model.ensure_valid()?;
        if policies.len() != model.num_agents {
            return Err(Error::Argument(format!(
                "expected {} policies, got {}",
                model.num_agents,
                policies.len()
            )));
        }
        for (i, p) in policies.iter().enumerate() {
            if p.num_actions() != model.actions_per_agent[i] {
                return Err(Error::Argument(format!("policy {i} has the wrong action count")));
            }
        }
        let ja = model.joint_actions();
        let jo = model.joint_observations();
        let codecs: Vec<HistoryCodec> = (0..model.num_agents).map(|i| model.codec(i)).collect();
        let ns = model.num_states;
        let mut count = 0usize;

        let mut roots = Vec::new();
        for o in 0..jo.size() {
            let joint: Vec<f64> = (0..ns)
                .map(|s| model.init_dist[s] * model.init_observation[s][o])
                .collect();
            let p: f64 = joint.iter().sum();
            if p <= 0.0 {
                continue;
            }
            count += 1;
            if count > budget {
                return Err(Error::Budget { budget, reached: count });
            }
            let histories = jo.digits(o).into_iter().map(AgentHistory::new).collect();
            roots.push(make_node(model, policies, &codecs, &ja, histories, p, normalized(joint, p))?);
        }

        let mut levels = vec![roots];
        for _ in 1..model.horizon {
            let parent_level = levels.last_mut().expect("at least one level");
            let mut next = Vec::new();
            for node in parent_level.iter_mut() {
                let mut per_action = Vec::with_capacity(ja.size());
                for a in 0..ja.size() {
                    let actions = ja.digits(a);
                    // Predicted next-state distribution before observing.
                    let mut pred = vec![0.0; ns];
                    for (s, &b) in node.belief.iter().enumerate() {
                        if b > 0.0 {
                            for (s2, &pt) in model.transition[s][a].iter().enumerate() {
                                pred[s2] += b * pt;
                            }
                        }
                    }
                    let mut kids = Vec::new();
                    for o in 0..jo.size() {
                        let joint: Vec<f64> = (0..ns).map(|s2| pred[s2] * model.observation[s2][a][o]).collect();
                        let po: f64 = joint.iter().sum();
                        if po <= 0.0 {
                            continue;
                        }
                        count += 1;
                        if count > budget {
                            return Err(Error::Budget { budget, reached: count });
                        }
                        let obs = jo.digits(o);
                        let histories = node
                            .histories
                            .iter()
                            .zip(actions.iter().zip(&obs))
                            .map(|(h, (&ai, &oi))| h.extended(ai, oi))
                            .collect();
                        let prob = node.prob * node.joint_probs[a] * po;
                        kids.push((o, next.len(), po));
                        next.push(make_node(model, policies, &codecs, &ja, histories, prob, normalized(joint, po))?);
                    }
                    per_action.push(kids);
                }
                node.children = per_action;
            }
            levels.push(next);
        }
        for node in levels.last_mut().expect("at least one level") {
            node.children = vec![Vec::new(); ja.size()];
        }
        Ok(Self {
            levels,
            joint_actions: ja,
            joint_observations: jo,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn horizon(&self) -> usize {
        self.levels.len()
    }

    /// Every `(joint history, joint action, received messages, probability)`
    /// at every depth. Messages are the full per-sender vector; they are
    /// empty when no channel is supplied.
    pub fn outcomes(&self, channel: Option<&Channel>) -> Result<Vec<Vec<Outcome>>> {
        let mut out = Vec::with_capacity(self.levels.len());
        for level in &self.levels {
            let mut rows = Vec::new();
            for node in level {
                for a in 0..self.joint_actions.size() {
                    let actions = self.joint_actions.digits(a);
                    let p = node.prob * node.joint_probs[a];
                    let messages = match channel {
                        Some(c) => sender_distribution(c, &node.keys, &actions)?,
                        None => vec![(Vec::new(), 1.0)],
                    };
                    for (m, pm) in messages {
                        rows.push(Outcome {
                            keys: node.keys.clone(),
                            actions: actions.clone(),
                            messages: m,
                            prob: p * pm,
                        });
                    }
                }
            }
            out.push(rows);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub keys: Vec<u64>,
    pub actions: Vec<u32>,
    pub messages: Vec<u64>,
    pub prob: f64,
}

/// Enumerates every outcome up to the model horizon.
pub fn enumerate_joint_outcomes(
    model: &TabularDecPomdp,
    policies: &[SoftmaxPolicy],
    channel: Option<&Channel>,
) -> Result<Vec<Vec<Outcome>>> {
    OutcomeTree::build(model, policies)?.outcomes(channel)
}

fn normalized(mut v: Vec<f64>, total: f64) -> Vec<f64> {
    v.iter_mut().for_each(|x| *x /= total);
    v
}

fn make_node(
    model: &TabularDecPomdp,
    policies: &[SoftmaxPolicy],
    codecs: &[HistoryCodec],
    ja: &MixedRadix,
    histories: Vec<AgentHistory>,
    prob: f64,
    belief: Vec<f64>,
) -> Result<Node> {
    let keys = codecs
        .iter()
        .zip(&histories)
        .map(|(c, h)| c.encode(h))
        .collect::<Result<Vec<u64>>>()?;
    let action_probs: Vec<Vec<f64>> = policies
        .iter()
        .zip(&keys)
        .map(|(p, &k)| p.action_distribution(k))
        .collect();
    let joint_probs = (0..ja.size())
        .map(|a| {
            ja.digits(a)
                .iter()
                .zip(&action_probs)
                .map(|(&ai, d)| d[ai as usize])
                .product()
        })
        .collect();
    let reward = (0..ja.size())
        .map(|a| belief.iter().zip(&model.reward).map(|(b, r)| b * r[a]).sum())
        .collect();
    Ok(Node {
        histories,
        keys,
        prob,
        belief,
        action_probs,
        joint_probs,
        reward,
        children: Vec::new(),
    })
}

/// Joint distribution of all senders' messages, as `(messages, prob)` pairs
/// in lexicographic order.
pub fn sender_distribution(channel: &Channel, keys: &[u64], actions: &[u32]) -> Result<Vec<(Vec<u64>, f64)>> {
    product_distribution(channel, keys, actions, None)
}

/// Distribution of the messages received by `receiver`: the product over
/// senders `j != receiver`.
pub fn received_distribution(
    channel: &Channel,
    keys: &[u64],
    actions: &[u32],
    receiver: usize,
) -> Result<Vec<(Vec<u64>, f64)>> {
    product_distribution(channel, keys, actions, Some(receiver))
}

fn product_distribution(
    channel: &Channel,
    keys: &[u64],
    actions: &[u32],
    skip: Option<usize>,
) -> Result<Vec<(Vec<u64>, f64)>> {
    let mut combos: Vec<(Vec<u64>, f64)> = vec![(Vec::new(), 1.0)];
    for (j, (&k, &a)) in keys.iter().zip(actions).enumerate() {
        if Some(j) == skip {
            continue;
        }
        let dist = channel.message_distribution(j, k, a)?;
        let mut next = Vec::with_capacity(combos.len() * dist.len());
        for (m, p) in &combos {
            for &(mj, pj) in &dist {
                let mut m = m.clone();
                m.push(mj);
                next.push((m, p * pj));
            }
        }
        combos = next;
    }
    Ok(combos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_random_decpomdp, RandomModelConfig};

    fn uniform(n: usize) -> Vec<SoftmaxPolicy> {
        vec![SoftmaxPolicy::new(2); n]
    }

    #[test]
    fn counts_match_brute_force() {
        let m = make_random_decpomdp(&RandomModelConfig::new(2, 2, 2, 2, 1), 0).unwrap();
        let tree = OutcomeTree::build(&m, &uniform(2)).unwrap();
        assert_eq!(tree.levels[0].len(), 4);
        let m = make_random_decpomdp(&RandomModelConfig::new(2, 2, 2, 2, 2), 0).unwrap();
        let tree = OutcomeTree::build(&m, &uniform(2)).unwrap();
        assert_eq!(tree.levels[1].len(), 64);
    }

    #[test]
    fn mass_is_one_at_every_depth() {
        let m = make_random_decpomdp(&RandomModelConfig::new(2, 3, 2, 2, 3), 4).unwrap();
        let ch = Channel::ActionOnly;
        for level in enumerate_joint_outcomes(&m, &uniform(2), Some(&ch)).unwrap() {
            let total: f64 = level.iter().map(|o| o.prob).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn budget_is_enforced() {
        let m = make_random_decpomdp(&RandomModelConfig::new(2, 2, 2, 2, 3), 0).unwrap();
        match OutcomeTree::build_with_budget(&m, &uniform(2), 100) {
            Err(Error::Budget { budget, .. }) => assert_eq!(budget, 100),
            other => panic!("expected budget error, got {other:?}"),
        }
    }
}
