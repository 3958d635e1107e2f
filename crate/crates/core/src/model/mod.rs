//! Finite Dec-POMDP models, environments, and episode sampling.

pub mod bandit;
pub mod env;
pub mod history;
pub mod traffic;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use env::{sample_episode, Environment, Step, Trajectory, TrajectoryStep};
pub use history::{AgentHistory, HistoryCodec, JointHistory};

/// Row-sum tolerance for probability tables.
pub const PROB_TOL: f64 = 1e-12;

/// Mixed-radix indexing of joint values (agent 0 most significant).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixedRadix {
    radices: Vec<usize>,
}

impl MixedRadix {
    pub fn new(radices: Vec<usize>) -> Self {
        Self { radices }
    }

    pub fn size(&self) -> usize {
        self.radices.iter().product()
    }

    pub fn index(&self, digits: &[u32]) -> usize {
        digits
            .iter()
            .zip(&self.radices)
            .fold(0, |acc, (&d, &r)| acc * r + d as usize)
    }

    pub fn digits(&self, mut index: usize) -> Vec<u32> {
        let mut out = vec![0u32; self.radices.len()];
        for (slot, &r) in out.iter_mut().zip(&self.radices).rev() {
            *slot = (index % r) as u32;
            index /= r;
        }
        out
    }
}

/// Complete tabular Dec-POMDP with a shared reward.
///
/// Joint actions and joint observations are indexed with [`MixedRadix`]
/// (agent 0 most significant). Tables are row-major nested arrays:
/// `transition[s][a][s']`, `observation[s'][a][o]`, `init_observation[s][o]`
/// and `reward[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDecPomdp {
    pub num_agents: usize,
    pub num_states: usize,
    pub init_dist: Vec<f64>,
    pub actions_per_agent: Vec<usize>,
    pub obs_per_agent: Vec<usize>,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub observation: Vec<Vec<Vec<f64>>>,
    /// Distribution of the first joint observation given the initial state.
    pub init_observation: Vec<Vec<f64>>,
    pub reward: Vec<Vec<f64>>,
    pub gamma: f64,
    pub horizon: usize,
}

impl TabularDecPomdp {
    pub fn joint_actions(&self) -> MixedRadix {
        MixedRadix::new(self.actions_per_agent.clone())
    }

    pub fn joint_observations(&self) -> MixedRadix {
        MixedRadix::new(self.obs_per_agent.clone())
    }

    pub fn num_joint_actions(&self) -> usize {
        self.actions_per_agent.iter().product()
    }

    pub fn num_joint_observations(&self) -> usize {
        self.obs_per_agent.iter().product()
    }

    pub fn codec(&self, agent: usize) -> HistoryCodec {
        HistoryCodec::new(self.obs_per_agent[agent], self.actions_per_agent[agent])
            .expect("validated sizes are positive")
    }

    /// Returns `Some((r_plus, r_minus))` when every reward entry takes one of
    /// two values (`r_plus > r_minus`). A constant reward table yields `None`.
    pub fn binary_rewards(&self) -> Option<(f64, f64)> {
        let mut values: Vec<f64> = Vec::new();
        for &r in self.reward.iter().flatten() {
            if !values.contains(&r) {
                values.push(r);
                if values.len() > 2 {
                    return None;
                }
            }
        }
        if values.len() != 2 {
            return None;
        }
        let (hi, lo) = if values[0] > values[1] {
            (values[0], values[1])
        } else {
            (values[1], values[0])
        };
        Some((hi, lo))
    }

    /// Lists every invariant violation; empty when the model is well formed.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.num_agents == 0 {
            v.push("num_agents must be positive".to_string());
        }
        if self.num_states == 0 {
            v.push("num_states must be positive".to_string());
        }
        if self.horizon == 0 {
            v.push("horizon must be positive".to_string());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            v.push(format!("gamma out of range: {}", self.gamma));
        }
        if self.actions_per_agent.len() != self.num_agents {
            v.push("actions_per_agent length differs from num_agents".to_string());
        }
        if self.obs_per_agent.len() != self.num_agents {
            v.push("obs_per_agent length differs from num_agents".to_string());
        }
        if self.actions_per_agent.iter().chain(&self.obs_per_agent).any(|&n| n == 0) {
            v.push("every agent needs at least one action and observation".to_string());
        }
        if !v.is_empty() {
            return v;
        }
        let (ns, na, no) = (
            self.num_states,
            self.num_joint_actions(),
            self.num_joint_observations(),
        );
        check_distribution(&mut v, "init_dist", &self.init_dist, ns);
        check_table(&mut v, "transition", &self.transition, ns, na, ns);
        check_table(&mut v, "observation", &self.observation, ns, na, no);
        if self.init_observation.len() != ns {
            v.push(format!("init_observation has {} rows, expected {ns}", self.init_observation.len()));
        } else {
            for (s, row) in self.init_observation.iter().enumerate() {
                check_distribution(&mut v, &format!("init_observation[{s}]"), row, no);
            }
        }
        if self.reward.len() != ns || self.reward.iter().any(|r| r.len() != na) {
            v.push(format!("reward must be {ns}x{na}"));
        } else {
            for (s, row) in self.reward.iter().enumerate() {
                for (a, r) in row.iter().enumerate() {
                    if !r.is_finite() {
                        v.push(format!("reward[{s}][{a}] is not finite"));
                    }
                }
            }
        }
        v
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Model(violations.join("; ")))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        model.ensure_valid()?;
        Ok(model)
    }
}

fn check_distribution(v: &mut Vec<String>, name: &str, row: &[f64], len: usize) {
    if row.len() != len {
        v.push(format!("{name} has length {}, expected {len}", row.len()));
        return;
    }
    if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        v.push(format!("{name} has a negative or non-finite entry"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        v.push(format!("{name} sums to {sum}"));
    }
}

fn check_table(v: &mut Vec<String>, name: &str, t: &[Vec<Vec<f64>>], n0: usize, n1: usize, n2: usize) {
    if t.len() != n0 || t.iter().any(|r| r.len() != n1) {
        v.push(format!("{name} must be {n0}x{n1}x{n2}"));
        return;
    }
    for (i, rows) in t.iter().enumerate() {
        for (j, row) in rows.iter().enumerate() {
            check_distribution(v, &format!("{name}[{i}][{j}]"), row, n2);
        }
    }
}

/// Sizes for [`make_random_decpomdp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomModelConfig {
    pub num_agents: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub num_observations: usize,
    pub horizon: usize,
    pub reward_range: (f64, f64),
    /// When set, every reward entry is one of the two values `(r_plus, r_minus)`.
    #[serde(default)]
    pub binary_rewards: Option<(f64, f64)>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_gamma() -> f64 {
    0.9
}

impl RandomModelConfig {
    pub fn new(num_agents: usize, num_states: usize, num_actions: usize, num_observations: usize, horizon: usize) -> Self {
        Self {
            num_agents,
            num_states,
            num_actions,
            num_observations,
            horizon,
            reward_range: (-1.0, 1.0),
            binary_rewards: None,
            gamma: default_gamma(),
        }
    }
}

/// Strictly positive random distribution of length `n`.
fn random_distribution<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| 0.05 + rng.random::<f64>()).collect();
    normalize(raw)
}

fn normalize(raw: Vec<f64>) -> Vec<f64> {
    let sum: f64 = raw.iter().sum();
    let mut out: Vec<f64> = raw.into_iter().map(|x| x / sum).collect();
    // Push the residual rounding error into the largest entry.
    let residual = 1.0 - out.iter().sum::<f64>();
    if let Some(max) = out.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *max += residual;
    }
    out
}

/// Random fully supported model; identical output for identical seeds.
pub fn make_random_decpomdp(config: &RandomModelConfig, seed: u64) -> Result<TabularDecPomdp> {
    let c = config;
    if c.num_agents == 0 || c.num_states == 0 || c.num_actions == 0 || c.num_observations == 0 || c.horizon == 0 {
        return Err(Error::Argument("all model sizes must be at least 1".into()));
    }
    if !(c.reward_range.0 <= c.reward_range.1) {
        return Err(Error::Argument("reward_range must be ordered".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ns = c.num_states;
    let na = c.num_actions.pow(c.num_agents as u32);
    let no = c.num_observations.pow(c.num_agents as u32);
    let init_dist = random_distribution(&mut rng, ns);
    let transition = (0..ns)
        .map(|_| (0..na).map(|_| random_distribution(&mut rng, ns)).collect())
        .collect();
    let observation = (0..ns)
        .map(|_| (0..na).map(|_| random_distribution(&mut rng, no)).collect())
        .collect();
    let init_observation = (0..ns).map(|_| random_distribution(&mut rng, no)).collect();
    let mut reward: Vec<Vec<f64>> = (0..ns)
        .map(|_| {
            (0..na)
                .map(|_| match c.binary_rewards {
                    Some((hi, lo)) => {
                        if rng.random::<bool>() {
                            hi
                        } else {
                            lo
                        }
                    }
                    None => rng.random_range(c.reward_range.0..=c.reward_range.1),
                })
                .collect()
        })
        .collect();
    if let Some((hi, lo)) = c.binary_rewards {
        if !(hi > lo) {
            return Err(Error::Argument("binary rewards need r_plus > r_minus".into()));
        }
        if ns * na < 2 {
            return Err(Error::Argument("binary rewards need at least two table entries".into()));
        }
        // Both values must occur for the model to count as binary.
        reward[0][0] = hi;
        reward[ns - 1][na - 1] = lo;
    }
    let model = TabularDecPomdp {
        num_agents: c.num_agents,
        num_states: ns,
        init_dist,
        actions_per_agent: vec![c.num_actions; c.num_agents],
        obs_per_agent: vec![c.num_observations; c.num_agents],
        transition,
        observation,
        init_observation,
        reward,
        gamma: c.gamma,
        horizon: c.horizon,
    };
    model.ensure_valid()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_state_model() -> TabularDecPomdp {
        TabularDecPomdp {
            num_agents: 1,
            num_states: 2,
            init_dist: vec![0.5, 0.5],
            actions_per_agent: vec![2],
            obs_per_agent: vec![2],
            transition: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; 2],
            observation: vec![vec![vec![1.0, 0.0]; 2], vec![vec![0.0, 1.0]; 2]],
            init_observation: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            reward: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            gamma: 0.9,
            horizon: 2,
        }
    }

    #[test]
    fn well_formed_model_has_empty_report() {
        assert!(two_state_model().validate().is_empty());
    }

    #[test]
    fn short_transition_row_is_reported() {
        let mut m = two_state_model();
        m.transition[1][0] = vec![0.9, 0.0];
        let report = m.validate();
        assert_eq!(report.len(), 1, "{report:?}");
        assert!(report[0].contains("transition[1][0]"));
    }

    #[test]
    fn gamma_above_one_is_reported() {
        let mut m = two_state_model();
        m.gamma = 1.2;
        let report = m.validate();
        assert_eq!(report.len(), 1);
        assert!(report[0].contains("gamma out of range"));
    }

    #[test]
    fn random_model_sizes_and_determinism() {
        let cfg = RandomModelConfig::new(2, 3, 2, 2, 3);
        let a = make_random_decpomdp(&cfg, 7).unwrap();
        let b = make_random_decpomdp(&cfg, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_states, 3);
        assert_eq!(a.num_joint_actions(), 4);
        assert_ne!(a, make_random_decpomdp(&cfg, 8).unwrap());
    }

    #[test]
    fn zero_size_is_an_argument_error() {
        let cfg = RandomModelConfig::new(2, 0, 2, 2, 3);
        assert!(matches!(make_random_decpomdp(&cfg, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn binary_reward_models_are_binary() {
        let mut cfg = RandomModelConfig::new(2, 3, 2, 2, 2);
        cfg.binary_rewards = Some((1.0, 0.0));
        for seed in 0..20 {
            let m = make_random_decpomdp(&cfg, seed).unwrap();
            assert_eq!(m.binary_rewards(), Some((1.0, 0.0)));
        }
    }

    #[test]
    fn json_round_trip() {
        let m = make_random_decpomdp(&RandomModelConfig::new(2, 2, 2, 2, 2), 3).unwrap();
        let back = TabularDecPomdp::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn mixed_radix_round_trip() {
        let r = MixedRadix::new(vec![2, 3, 4]);
        for i in 0..r.size() {
            assert_eq!(r.index(&r.digits(i)), i);
        }
        assert_eq!(r.index(&[1, 0, 0]), 12);
    }
}
