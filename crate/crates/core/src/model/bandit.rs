//! Two-step referential game used as a coordination benchmark.
//!
//! Agent 0 sees a hidden role `r` at the first step; agent 1 sees only agent
//! 0's first action at the second step. The shared reward is 1 when agent
//! 1's second action equals `r`, and 0 otherwise.

use crate::model::TabularDecPomdp;

/// Builds the game as a tabular model. `role_prob` is `P(r = 1)`.
pub fn coordination_bandit(role_prob: f64, gamma: f64) -> TabularDecPomdp {
    // States 0 and 1: first step with role r. State 2 + 2r + a: second step
    // after agent 0 played a.
    let num_states = 6;
    let mut transition = vec![vec![vec![0.0; num_states]; 4]; num_states];
    let mut observation = vec![vec![vec![0.0; 4]; 4]; num_states];
    let mut reward = vec![vec![0.0; 4]; num_states];
    for r in 0..2 {
        for ja in 0..4 {
            let a0 = ja / 2;
            transition[r][ja][2 + 2 * r + a0] = 1.0;
        }
    }
    for s in 2..num_states {
        let (r, a0) = ((s - 2) / 2, (s - 2) % 2);
        for ja in 0..4 {
            transition[s][ja][s] = 1.0;
            // Joint observation index: agent 0 sees 0, agent 1 sees a0.
            observation[s][ja][a0] = 1.0;
            let a1 = ja % 2;
            reward[s][ja] = if a1 == r { 1.0 } else { 0.0 };
        }
    }
    for (r, rows) in observation.iter_mut().enumerate().take(2) {
        for row in rows.iter_mut() {
            row[2 * r] = 1.0;
        }
    }
    let init_observation = (0..num_states)
        .map(|s| {
            let mut row = vec![0.0; 4];
            row[if s < 2 { 2 * s } else { 0 }] = 1.0;
            row
        })
        .collect();
    let mut init_dist = vec![0.0; num_states];
    init_dist[0] = 1.0 - role_prob;
    init_dist[1] = role_prob;
    TabularDecPomdp {
        num_agents: 2,
        num_states,
        init_dist,
        actions_per_agent: vec![2, 2],
        obs_per_agent: vec![2, 2],
        transition,
        observation,
        init_observation,
        reward,
        gamma,
        horizon: 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::env::{sample_episode, Environment};
    use crate::policy::SoftmaxPolicy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn model_is_valid_and_binary() {
        let m = coordination_bandit(0.5, 1.0);
        assert!(m.validate().is_empty(), "{:?}", m.validate());
        assert_eq!(m.binary_rewards(), Some((1.0, 0.0)));
    }

    #[test]
    fn signalling_convention_always_succeeds() {
        let m = coordination_bandit(0.5, 1.0);
        let c0 = m.codec(0);
        let c1 = m.codec(1);
        let mut p0 = SoftmaxPolicy::new(2);
        let mut p1 = SoftmaxPolicy::new(2);
        // Agent 0 reports the role; agent 1 repeats what it saw.
        for r in 0..2u32 {
            let mut z = vec![-40.0, -40.0];
            z[r as usize] = 40.0;
            p0.set_logits(c0.encode_entries(&[r]).unwrap(), z.clone()).unwrap();
            for a in 0..2u32 {
                p1.set_logits(c1.encode_entries(&[0, a, r]).unwrap(), z.clone()).unwrap();
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let tr = sample_episode(&m, &[p0.clone(), p1.clone()], None, &mut rng).unwrap();
            assert!(m.success(&0, tr.total_reward));
        }
    }
}
