//! Generic episodic environment interface and trajectory sampling.

use rand::Rng;

use crate::channel::Channel;
use crate::error::{Error, Result};
use crate::model::history::{AgentHistory, HistoryCodec};
use crate::model::TabularDecPomdp;
use crate::policy::SoftmaxPolicy;

/// Draws an index from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `u` above the cumulative sum: fall back to the last
    // index with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Outcome of one joint step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step<S> {
    pub state: S,
    pub observations: Vec<u32>,
    pub reward: f64,
    pub done: bool,
}

/// Cooperative partially observable environment with a shared reward.
pub trait Environment: Sync {
    type State: Clone + Send;

    fn num_agents(&self) -> usize;
    fn num_actions(&self, agent: usize) -> usize;
    fn num_observations(&self, agent: usize) -> usize;
    fn horizon(&self) -> usize;
    fn gamma(&self) -> f64;

    /// Number of most recent steps kept in each agent's history, if bounded.
    fn history_window(&self) -> Option<usize> {
        None
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> (Self::State, Vec<u32>);

    fn step<R: Rng + ?Sized>(&self, state: &Self::State, actions: &[u32], rng: &mut R) -> Step<Self::State>;

    /// Whether a finished episode counts as a success.
    fn success(&self, _final_state: &Self::State, total_reward: f64) -> bool {
        total_reward > 0.0
    }

    fn codec(&self, agent: usize) -> HistoryCodec {
        HistoryCodec::new(self.num_observations(agent), self.num_actions(agent))
            .expect("environment sizes are positive")
    }
}

impl Environment for TabularDecPomdp {
    type State = usize;

    fn num_agents(&self) -> usize {
        self.num_agents
    }

    fn num_actions(&self, agent: usize) -> usize {
        self.actions_per_agent[agent]
    }

    fn num_observations(&self, agent: usize) -> usize {
        self.obs_per_agent[agent]
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Vec<u32>) {
        let s = sample_index(&self.init_dist, rng);
        let o = sample_index(&self.init_observation[s], rng);
        (s, self.joint_observations().digits(o))
    }

    fn step<R: Rng + ?Sized>(&self, state: &usize, actions: &[u32], rng: &mut R) -> Step<usize> {
        let a = self.joint_actions().index(actions);
        let reward = self.reward[*state][a];
        let next = sample_index(&self.transition[*state][a], rng);
        let o = sample_index(&self.observation[next][a], rng);
        Step {
            state: next,
            observations: self.joint_observations().digits(o),
            reward,
            done: false,
        }
    }
}

/// One recorded joint step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub observations: Vec<u32>,
    /// Per-agent history keys the actions were conditioned on.
    pub history_keys: Vec<u64>,
    pub actions: Vec<u32>,
    /// Message sent by each agent, when a channel was supplied.
    pub messages: Option<Vec<u64>>,
    pub reward: f64,
    /// Per-agent critic values recorded by the caller; empty when unused.
    pub q_values: Vec<f64>,
    /// Per-agent action distributions at this step.
    pub policy: Vec<Vec<f64>>,
    /// Per-agent history keys after the step; `None` on the final step.
    pub next_history_keys: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub discounted_return: f64,
    pub total_reward: f64,
    pub success: bool,
}

impl Trajectory {
    pub fn recompute_return(&self, gamma: f64) -> f64 {
        self.steps
            .iter()
            .rev()
            .fold(0.0, |acc, s| s.reward + gamma * acc)
    }
}

/// Runs one episode with message exchange when `channel` is given.
pub fn sample_episode<E: Environment, R: Rng + ?Sized>(
    env: &E,
    policies: &[SoftmaxPolicy],
    channel: Option<&Channel>,
    rng: &mut R,
) -> Result<Trajectory> {
    let n = env.num_agents();
    if policies.len() != n {
        return Err(Error::Argument(format!("expected {n} policies, got {}", policies.len())));
    }
    let codecs: Vec<HistoryCodec> = (0..n).map(|i| env.codec(i)).collect();
    let window = env.history_window();
    let (mut state, obs) = env.reset(rng);
    let mut histories: Vec<AgentHistory> = obs.iter().map(|&o| AgentHistory::new(o)).collect();
    let mut keys = encode_all(&codecs, &histories)?;
    let mut current_obs = obs;
    let mut steps = Vec::with_capacity(env.horizon());
    let gamma = env.gamma();
    let (mut ret, mut total, mut discount) = (0.0, 0.0, 1.0);

    for t in 0..env.horizon() {
        let policy: Vec<Vec<f64>> = policies
            .iter()
            .zip(&keys)
            .map(|(p, &k)| p.action_distribution(k))
            .collect();
        let actions: Vec<u32> = policy.iter().map(|d| sample_index(d, rng) as u32).collect();
        let messages = match channel {
            Some(c) => Some(c.sample_all(&keys, &actions, rng)?),
            None => None,
        };
        let out = env.step(&state, &actions, rng);
        if !out.reward.is_finite() {
            return Err(Error::NonFinite(format!("reward at step {t}")));
        }
        ret += discount * out.reward;
        total += out.reward;
        discount *= gamma;
        let last = out.done || t + 1 == env.horizon();
        let next_keys = if last {
            None
        } else {
            for (h, (&a, &o)) in histories.iter_mut().zip(actions.iter().zip(&out.observations)) {
                h.push(a, o);
                if let Some(w) = window {
                    h.truncate_to(w);
                }
            }
            Some(encode_all(&codecs, &histories)?)
        };
        steps.push(TrajectoryStep {
            observations: std::mem::take(&mut current_obs),
            history_keys: keys.clone(),
            actions,
            messages,
            reward: out.reward,
            q_values: Vec::new(),
            policy,
            next_history_keys: next_keys.clone(),
        });
        state = out.state;
        match next_keys {
            Some(k) => {
                keys = k;
                current_obs = out.observations;
            }
            None => break,
        }
    }
    let success = env.success(&state, total);
    Ok(Trajectory {
        steps,
        discounted_return: ret,
        total_reward: total,
        success,
    })
}

fn encode_all(codecs: &[HistoryCodec], histories: &[AgentHistory]) -> Result<Vec<u64>> {
    codecs
        .iter()
        .zip(histories)
        .map(|(c, h)| c.encode(h))
        .collect()
}
