//! Exact on-policy Q-functions by backward induction over an outcome tree.

use std::collections::HashMap;

use crate::channel::{perfect_code, Channel, NoiseModel};
use crate::critic::{CentralizedQ, CommKey, CommQ, LocalQ};
use crate::error::{Error, Result};
use crate::oracle::tree::{received_distribution, OutcomeTree};

/// Values indexed by `[level][node][joint action]`.
pub type NodeValues = Vec<Vec<Vec<f64>>>;

/// Centralized Q: immediate expected reward plus the discounted value of
/// every child, under the product policy.
pub fn joint_q_on_tree(tree: &OutcomeTree, gamma: f64) -> NodeValues {
    let mut q: NodeValues = tree
        .levels
        .iter()
        .map(|level| vec![Vec::new(); level.len()])
        .collect();
    let mut next_v: Vec<f64> = Vec::new();
    for t in (0..tree.levels.len()).rev() {
        let level = &tree.levels[t];
        let mut v = vec![0.0; level.len()];
        for (n, node) in level.iter().enumerate() {
            let qn: Vec<f64> = (0..node.reward.len())
                .map(|a| {
                    let future: f64 = node.children[a].iter().map(|&(_, c, po)| po * next_v[c]).sum();
                    node.reward[a] + gamma * future
                })
                .collect();
            v[n] = qn.iter().zip(&node.joint_probs).map(|(q, p)| q * p).sum();
            q[t][n] = qn;
        }
        next_v = v;
    }
    q
}

/// Expected discounted return of the start distribution.
pub fn expected_return(tree: &OutcomeTree, q: &NodeValues) -> f64 {
    tree.levels[0]
        .iter()
        .zip(&q[0])
        .map(|(node, qn)| node.prob * qn.iter().zip(&node.joint_probs).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

pub fn joint_table(tree: &OutcomeTree, q: &NodeValues) -> CentralizedQ {
    let mut table = CentralizedQ::new();
    for (level, ql) in tree.levels.iter().zip(q) {
        for (node, qn) in level.iter().zip(ql) {
            for (a, &v) in qn.iter().enumerate() {
                table
                    .set((node.keys.clone(), tree.joint_actions.digits(a)), v)
                    .expect("finite model values");
            }
        }
    }
    table
}

#[derive(Default)]
struct Acc {
    weight: f64,
    weighted: f64,
    count: f64,
    plain: f64,
}

impl Acc {
    fn add(&mut self, w: f64, v: f64) {
        self.weight += w;
        self.weighted += w * v;
        self.count += 1.0;
        self.plain += v;
    }

    fn value(&self) -> f64 {
        if self.weight > 0.0 {
            self.weighted / self.weight
        } else {
            // Unreachable under the policy; any consistent value will do.
            self.plain / self.count
        }
    }
}

/// Communicating critic of `agent`: the Bellman recursion over the
/// agent's view `(h_i, a_i, m_{-i})`, averaging immediate reward and the
/// next view's value over the on-policy posterior of the view.
pub fn comm_q_on_tree(tree: &OutcomeTree, gamma: f64, channel: &Channel, agent: usize) -> Result<CommQ> {
    let mut table = CommQ::new();
    let mut next_ev: Vec<f64> = Vec::new();
    for t in (0..tree.levels.len()).rev() {
        let level = &tree.levels[t];
        let mut acc: HashMap<CommKey, Acc> = HashMap::new();
        let mut views: Vec<Vec<Vec<(CommKey, f64)>>> = Vec::with_capacity(level.len());
        for node in level {
            let mut per_action = Vec::with_capacity(node.reward.len());
            for a in 0..node.reward.len() {
                let actions = tree.joint_actions.digits(a);
                let future: f64 = node.children[a].iter().map(|&(_, c, po)| po * next_ev[c]).sum();
                let base = node.reward[a] + gamma * future;
                let mut list = Vec::new();
                for (m, pm) in received_distribution(channel, &node.keys, &actions, agent)? {
                    let key: CommKey = (node.keys[agent], actions[agent], m);
                    acc.entry(key.clone()).or_default().add(node.prob * node.joint_probs[a] * pm, base);
                    list.push((key, pm));
                }
                per_action.push(list);
            }
            views.push(per_action);
        }
        let values: HashMap<CommKey, f64> = acc.into_iter().map(|(k, a)| (k, a.value())).collect();
        next_ev = level
            .iter()
            .zip(&views)
            .map(|(node, per_action)| {
                per_action
                    .iter()
                    .zip(&node.joint_probs)
                    .map(|(list, pa)| pa * list.iter().map(|(k, pm)| pm * values[k]).sum::<f64>())
                    .sum()
            })
            .collect();
        for (k, v) in values {
            table.set(k, v)?;
        }
    }
    Ok(table)
}

/// Local critic of `agent`, i.e. the communicating critic with a channel
/// that carries no information.
pub fn local_q_on_tree(tree: &OutcomeTree, gamma: f64, agent: usize) -> Result<LocalQ> {
    let comm = comm_q_on_tree(tree, gamma, &Channel::Silent, agent)?;
    let mut local = LocalQ::new();
    for ((h, a, _), v) in comm.sorted() {
        local.set((*h, *a), v)?;
    }
    Ok(local)
}

/// Surrogate critic values indexed by `[level][node][joint action][noise index]`.
pub type SurrogateValues = Vec<Vec<Vec<Vec<f64>>>>;

/// Surrogate Q over `(h, a, eps)`: surrogate immediate reward for the given
/// noise value plus the discounted expectation over the next joint action
/// and next noise value.
pub fn surrogate_q_on_tree(
    tree: &OutcomeTree,
    rewards: &[Vec<f64>],
    gamma: f64,
    noise: &NoiseModel,
) -> Result<SurrogateValues> {
    let ne = noise.values.len();
    let mut out: SurrogateValues = tree
        .levels
        .iter()
        .map(|level| vec![Vec::new(); level.len()])
        .collect();
    let mut next_v: Vec<f64> = Vec::new();
    for t in (0..tree.levels.len()).rev() {
        let level = &tree.levels[t];
        let mut v = vec![0.0; level.len()];
        for (n, node) in level.iter().enumerate() {
            let mut per_action = Vec::with_capacity(node.reward.len());
            for a in 0..node.reward.len() {
                let future: f64 = node.children[a].iter().map(|&(_, c, po)| po * next_v[c]).sum();
                let mut per_eps = Vec::with_capacity(ne);
                for &eps in &noise.values {
                    let mut r = 0.0;
                    for (s, &b) in node.belief.iter().enumerate() {
                        if b > 0.0 {
                            r += b * noise.surrogate_reward(rewards[s][a], eps)?;
                        }
                    }
                    per_eps.push(r + gamma * future);
                }
                per_action.push(per_eps);
            }
            v[n] = per_action
                .iter()
                .zip(&node.joint_probs)
                .map(|(qe, pa)| pa * qe.iter().zip(&noise.probs).map(|(q, p)| q * p).sum::<f64>())
                .sum();
            out[t][n] = per_action;
        }
        next_v = v;
    }
    Ok(out)
}

/// Surrogate critic stored as a communicating critic of `agent`: the
/// received "messages" are the perfect codes of the other agents followed by
/// the index of the agent's noise value.
pub fn surrogate_table(
    tree: &OutcomeTree,
    values: &SurrogateValues,
    actions_per_agent: &[usize],
    agent: usize,
) -> Result<CommQ> {
    let mut table = CommQ::new();
    for (level, vl) in tree.levels.iter().zip(values) {
        for (node, vn) in level.iter().zip(vl) {
            for (a, per_eps) in vn.iter().enumerate() {
                let actions = tree.joint_actions.digits(a);
                let codes = noise_messages(&node.keys, &actions, actions_per_agent, agent);
                for (e, &q) in per_eps.iter().enumerate() {
                    let mut m = codes.clone();
                    m.push(e as u64);
                    table.set((node.keys[agent], actions[agent], m), q)?;
                }
            }
        }
    }
    Ok(table)
}

/// Perfect codes of every sender except `agent`.
pub fn noise_messages(keys: &[u64], actions: &[u32], actions_per_agent: &[usize], agent: usize) -> Vec<u64> {
    (0..keys.len())
        .filter(|&j| j != agent)
        .map(|j| perfect_code(keys[j], actions[j], actions_per_agent[j]))
        .collect()
}

pub(crate) fn require_binary(rewards: Option<(f64, f64)>, noise: &NoiseModel) -> Result<()> {
    match rewards {
        Some((hi, lo)) if hi == noise.r_plus && lo == noise.r_minus => Ok(()),
        Some((hi, lo)) => Err(Error::Unsupported(format!(
            "model rewards ({hi}, {lo}) differ from the noise model pair ({}, {})",
            noise.r_plus, noise.r_minus
        ))),
        None => Err(Error::Unsupported("surrogate critic needs binary rewards".into())),
    }
}
