//! Cross-checks of the tree oracle against a state-explicit brute-force
//! enumeration that never forms beliefs.

use std::collections::BTreeMap;

use dccda_core::critic::{expected_td_sweep, CentralizedQ, Transition, WeightedTransition};
use dccda_core::model::{make_random_decpomdp, AgentHistory, HistoryCodec, RandomModelConfig, TabularDecPomdp};
use dccda_core::oracle::verify::{random_batch, BatchConfig};
use dccda_core::oracle::{Oracle, OutcomeTree};
use dccda_core::par::Execution;
use dccda_core::policy::SoftmaxPolicy;

type Acc = BTreeMap<(Vec<u64>, Vec<u32>), (f64, f64)>;

struct Brute<'a> {
    model: &'a TabularDecPomdp,
    policies: &'a [SoftmaxPolicy],
    codecs: Vec<HistoryCodec>,
    /// `(keys, joint action) -> (sum of p * return-to-go, sum of p)`.
    acc: Acc,
}

impl Brute<'_> {
    fn keys(&self, hist: &[AgentHistory]) -> Vec<u64> {
        hist.iter().zip(&self.codecs).map(|(h, c)| c.encode(h).unwrap()).collect()
    }

    fn joint_prob(&self, keys: &[u64], actions: &[u32]) -> f64 {
        keys.iter()
            .zip(actions)
            .zip(self.policies)
            .map(|((&k, &a), p)| p.action_distribution(k)[a as usize])
            .product()
    }

    /// Expected return-to-go from state `s` with joint history `hist`.
    fn visit(&mut self, t: usize, s: usize, hist: Vec<AgentHistory>, p: f64) -> f64 {
        let m = self.model;
        let ja = m.joint_actions();
        let jo = m.joint_observations();
        let keys = self.keys(&hist);
        let mut value = 0.0;
        for a in 0..ja.size() {
            let actions = ja.digits(a);
            let pa = self.joint_prob(&keys, &actions);
            let mut g = m.reward[s][a];
            if t + 1 < m.horizon {
                for s2 in 0..m.num_states {
                    let pt = m.transition[s][a][s2];
                    if pt == 0.0 {
                        continue;
                    }
                    for o in 0..jo.size() {
                        let po = m.observation[s2][a][o];
                        if po == 0.0 {
                            continue;
                        }
                        let next: Vec<AgentHistory> = hist
                            .iter()
                            .zip(actions.iter().zip(jo.digits(o)))
                            .map(|(h, (&ai, oi))| h.extended(ai, oi))
                            .collect();
                        g += m.gamma * pt * po * self.visit(t + 1, s2, next, p * pa * pt * po);
                    }
                }
            }
            let e = self.acc.entry((keys.clone(), actions)).or_insert((0.0, 0.0));
            e.0 += p * g;
            e.1 += p;
            value += pa * g;
        }
        value
    }
}

fn brute_force(model: &TabularDecPomdp, policies: &[SoftmaxPolicy]) -> (Acc, f64) {
    let mut b = Brute {
        model,
        policies,
        codecs: (0..model.num_agents).map(|i| model.codec(i)).collect(),
        acc: Acc::new(),
    };
    let jo = model.joint_observations();
    let mut ret = 0.0;
    for s in 0..model.num_states {
        for o in 0..jo.size() {
            let p = model.init_dist[s] * model.init_observation[s][o];
            if p > 0.0 {
                let hist = jo.digits(o).into_iter().map(AgentHistory::new).collect();
                ret += p * b.visit(0, s, hist, p);
            }
        }
    }
    (b.acc, ret)
}

fn instances() -> Vec<(TabularDecPomdp, Vec<SoftmaxPolicy>)> {
    let mut out: Vec<_> = random_batch(&BatchConfig::new(24, 91), Execution::Sequential)
        .unwrap()
        .into_iter()
        .map(|i| (i.model, i.policies))
        .collect();
    // Three agents with unequal action and observation counts.
    let mut cfg = RandomModelConfig::new(3, 3, 2, 2, 2);
    cfg.gamma = 0.9;
    let mut model = make_random_decpomdp(&cfg, 5).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
    model.ensure_valid().unwrap();
    let policies = dccda_core::oracle::verify::random_policies(&model, 1.0, &mut rng);
    out.push((model.clone(), policies));
    model.gamma = 1.0;
    let policies = dccda_core::oracle::verify::random_policies(&model, 2.0, &mut rng);
    out.push((model, policies));
    out
}

#[test]
fn joint_q_matches_brute_force() {
    for (model, policies) in instances() {
        let oracle = Oracle::new(&model, &policies).unwrap();
        let q = oracle.q_joint();
        let (acc, ret) = brute_force(&model, &policies);
        assert_eq!(q.len(), acc.len());
        for (key, (num, w)) in &acc {
            assert!(*w > 0.0);
            assert!(q.contains(key), "missing {key:?}");
            let exact = num / w;
            assert!((q.get(key) - exact).abs() < 1e-12, "{key:?}: {} vs {exact}", q.get(key));
        }
        assert!((oracle.expected_return() - ret).abs() < 1e-12);
    }
}

/// The local critic is the on-policy conditional mean of the joint one.
#[test]
fn local_q_is_conditional_mean_of_joint_q() {
    for (model, policies) in instances() {
        let oracle = Oracle::new(&model, &policies).unwrap();
        let (acc, _) = brute_force(&model, &policies);
        for agent in 0..model.num_agents {
            let local = oracle.q_local(agent).unwrap();
            let mut cond: BTreeMap<(u64, u32), (f64, f64)> = BTreeMap::new();
            for ((keys, actions), (num, w)) in &acc {
                let others: f64 = (0..model.num_agents)
                    .filter(|&j| j != agent)
                    .map(|j| policies[j].action_distribution(keys[j])[actions[j] as usize])
                    .product();
                let e = cond.entry((keys[agent], actions[agent])).or_insert((0.0, 0.0));
                e.0 += others * num;
                e.1 += others * w;
            }
            assert_eq!(local.len(), cond.len());
            for (key, (num, w)) in cond {
                assert!((local.get(&key) - num / w).abs() < 1e-12);
            }
        }
    }
}

/// Backward induction through the expected-SARSA sweep: `T` full sweeps
/// with unit step from zero reproduce the exact joint critic.
#[test]
fn expected_td_sweeps_reach_exact_joint_q() {
    for (model, policies) in instances() {
        let tree = OutcomeTree::build(&model, &policies).unwrap();
        let oracle = Oracle::new(&model, &policies).unwrap();
        let exact = oracle.q_joint();
        let ja = &tree.joint_actions;
        let mut atoms = Vec::new();
        for (t, level) in tree.levels.iter().enumerate() {
            for node in level {
                for a in 0..ja.size() {
                    let mut next = Vec::new();
                    for &(_, child, po) in &node.children[a] {
                        let c = &tree.levels[t + 1][child];
                        for (a2, &pa) in c.joint_probs.iter().enumerate() {
                            next.push(((c.keys.clone(), ja.digits(a2)), po * pa));
                        }
                    }
                    atoms.push(WeightedTransition {
                        prob: node.prob * node.joint_probs[a],
                        transition: Transition {
                            key: (node.keys.clone(), ja.digits(a)),
                            reward: node.reward[a],
                            next,
                        },
                    });
                }
            }
        }
        let mut q = CentralizedQ::new();
        for _ in 0..model.horizon {
            expected_td_sweep(&mut q, &atoms, 1.0, model.gamma).unwrap();
        }
        assert!(q.max_abs_diff(&exact) < 1e-12);

        // A damped step converges geometrically.
        let mut q = CentralizedQ::new();
        let mut sweeps = 0;
        while q.max_abs_diff(&exact) >= 1e-8 {
            expected_td_sweep(&mut q, &atoms, 0.5, model.gamma).unwrap();
            sweeps += 1;
            assert!(sweeps <= 60 * model.horizon, "no convergence after {sweeps} sweeps");
        }
    }
}

/// Sample returns of simulated episodes approach the exact value.
#[test]
fn simulated_returns_match_exact_value() {
    use dccda_core::model::sample_episode;
    use rand::SeedableRng;

    for (model, policies) in instances().into_iter().take(6) {
        let exact = Oracle::new(&model, &policies).unwrap().expected_return();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let n = 40_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let g = sample_episode(&model, &policies, None, &mut rng).unwrap().discounted_return;
            sum += g;
            sq += g * g;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
        assert!((mean - exact).abs() <= 5.0 * se + 1e-12, "{mean} vs {exact} (se {se})");
    }
}
