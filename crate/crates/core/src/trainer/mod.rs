//! On-policy actor-critic training with pluggable critics, estimators and
//! message channels.
//!
//! Each iteration collects fresh episodes, updates every actor with the
//! configured estimator, runs one expected-SARSA sweep per critic over the
//! new records, and finally adjusts learned message functions.
//!
//! Message functions follow a score-function rule: for every record of a
//! receiver `i` and every sender `j`,
//! `log f_j(. | h_j, a_j) += lr / n * w * (e_m - f_j)`, where `w` is the
//! receiver's critic value for the sent message minus its average over
//! `f_j`.

pub mod buffer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{broadcast, Channel, MessageFunction, RowInit};
use crate::critic::{td_update, CentralizedQ, CommQ, LocalQ, Transition};
use crate::error::{Error, Result};
use crate::estimator::{baseline_from, estimate, kl_term, EstimatorKind, HyperParams};
use crate::metrics::{MetricsLog, MetricsRow};
use crate::model::env::{sample_episode, Environment, Trajectory};
use crate::model::MixedRadix;
use crate::policy::{Optimizer, OptimizerKind, PolicyGradient, SoftmaxPolicy};

pub use buffer::{NextContext, Record, ReplayBuffer};

/// How messages are produced during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ChannelConfig {
    Silent,
    Perfect,
    ActionOnly,
    /// Learned message functions over `alphabet` symbols, started from
    /// random rows with logits in `[-init_scale, init_scale]`.
    Learned { alphabet: usize, init_scale: f64 },
}

impl ChannelConfig {
    pub fn build<E: Environment>(&self, env: &E, seed: u64) -> Result<Channel> {
        let n = env.num_agents();
        Ok(match self {
            ChannelConfig::Silent => Channel::Silent,
            ChannelConfig::Perfect => Channel::PerfectDecoder {
                actions_per_agent: (0..n).map(|i| env.num_actions(i)).collect(),
            },
            ChannelConfig::ActionOnly => Channel::ActionOnly,
            ChannelConfig::Learned { alphabet, init_scale } => Channel::Learned {
                functions: (0..n)
                    .map(|j| {
                        let init = if *init_scale > 0.0 {
                            RowInit::Random {
                                seed: seed.wrapping_add(j as u64),
                                scale: *init_scale,
                            }
                        } else {
                            RowInit::Uniform
                        };
                        MessageFunction::new(*alphabet, env.num_actions(j), init)
                    })
                    .collect::<Result<_>>()?,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub estimator: EstimatorKind,
    pub iterations: usize,
    pub episodes_per_iteration: usize,
    /// Actor passes over each iteration's records.
    pub update_epochs: usize,
    pub actor_lr: f64,
    /// In `[0, 1]`; zero freezes the critics.
    pub critic_lr: f64,
    /// Zero keeps message functions fixed.
    pub comm_lr: f64,
    pub params: HyperParams,
    pub optimizer: OptimizerKind,
    pub max_grad_norm: Option<f64>,
    pub channel: ChannelConfig,
    /// Evaluate whenever this many more training episodes have finished.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Episodes of the evaluation after the last iteration.
    pub final_eval_episodes: usize,
    /// Stop collecting before exceeding this many environment steps.
    pub max_env_steps: Option<u64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorKind::Dccda,
            iterations: 100,
            episodes_per_iteration: 8,
            update_epochs: 1,
            actor_lr: 0.5,
            critic_lr: 0.1,
            comm_lr: 0.0,
            params: HyperParams::default(),
            optimizer: OptimizerKind::Sgd,
            max_grad_norm: None,
            channel: ChannelConfig::Perfect,
            eval_every: 25,
            eval_episodes: 32,
            final_eval_episodes: 32,
            max_env_steps: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.actor_lr > 0.0 && self.actor_lr.is_finite()) {
            return bad(format!("actor_lr must be positive, got {}", self.actor_lr));
        }
        if !(0.0..=1.0).contains(&self.critic_lr) {
            return bad(format!("critic_lr must lie in [0, 1], got {}", self.critic_lr));
        }
        if !(self.comm_lr >= 0.0 && self.comm_lr.is_finite()) {
            return bad(format!("comm_lr must be non-negative, got {}", self.comm_lr));
        }
        if self.episodes_per_iteration == 0 || self.update_epochs == 0 {
            return bad("episodes_per_iteration and update_epochs must be positive".into());
        }
        if self.eval_every == 0 || self.eval_episodes == 0 || self.final_eval_episodes == 0 {
            return bad("evaluation cadence and episode counts must be positive".into());
        }
        if let Some(g) = self.max_grad_norm {
            if !(g > 0.0) {
                return bad(format!("max_grad_norm must be positive, got {g}"));
            }
        }
        if let ChannelConfig::Learned { alphabet, init_scale } = self.channel {
            if alphabet == 0 || !(init_scale >= 0.0) {
                return bad("learned channel needs a positive alphabet and non-negative scale".into());
            }
        }
        self.params.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }
}

/// Critic tables for one run.
#[derive(Debug, Clone, PartialEq)]
pub enum Critics {
    /// One centralized critic shared by all agents.
    Joint(CentralizedQ),
    Local(Vec<LocalQ>),
    Comm(Vec<CommQ>),
}

impl Critics {
    pub fn for_estimator(kind: EstimatorKind, num_agents: usize) -> Self {
        match kind {
            EstimatorKind::Ctde => Critics::Joint(CentralizedQ::new()),
            EstimatorKind::Dtde => Critics::Local(vec![LocalQ::new(); num_agents]),
            _ => Critics::Comm(vec![CommQ::new(); num_agents]),
        }
    }

    /// Values of each own action of `agent`, everything else held fixed.
    pub fn action_values(&self, agent: usize, keys: &[u64], actions: &[u32], received: &[u64], num_actions: usize) -> Vec<f64> {
        (0..num_actions as u32)
            .map(|b| match self {
                Critics::Joint(q) => {
                    let mut a = actions.to_vec();
                    a[agent] = b;
                    q.get(&(keys.to_vec(), a))
                }
                Critics::Local(qs) => qs[agent].get(&(keys[agent], b)),
                Critics::Comm(qs) => qs[agent].get(&(keys[agent], b, received.to_vec())),
            })
            .collect()
    }
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policies: Vec<SoftmaxPolicy>,
    pub critics: Critics,
    pub channel: Option<Channel>,
    pub log: MetricsLog,
    pub episodes: usize,
    pub env_steps: u64,
}

impl TrainOutcome {
    pub fn final_eval_rate(&self) -> Option<f64> {
        self.log.final_eval_rate()
    }
}

/// Fraction of successful episodes when every agent samples from its own
/// policy; no messages are exchanged.
pub fn evaluate<E: Environment, R: rand::Rng + ?Sized>(
    env: &E,
    policies: &[SoftmaxPolicy],
    episodes: usize,
    rng: &mut R,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::Argument("evaluation needs at least one episode".into()));
    }
    let mut wins = 0usize;
    for _ in 0..episodes {
        if sample_episode(env, policies, None, rng)?.success {
            wins += 1;
        }
    }
    Ok(wins as f64 / episodes as f64)
}

const TRAIN_STREAM: u64 = 0;
const EVAL_STREAM: u64 = 1;

pub fn train<E: Environment>(env: &E, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let n = env.num_agents();
    let num_actions: Vec<usize> = (0..n).map(|i| env.num_actions(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(TRAIN_STREAM);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed);
    eval_rng.set_stream(EVAL_STREAM);

    let mut policies: Vec<SoftmaxPolicy> = num_actions.iter().map(|&k| SoftmaxPolicy::new(k)).collect();
    let mut optimizers: Vec<Optimizer> = (0..n).map(|_| Optimizer::new(config.optimizer)).collect();
    let mut critics = Critics::for_estimator(config.estimator, n);
    let mut channel = if config.estimator.uses_messages() {
        Some(config.channel.build(env, config.seed ^ 0x6368_616e)?)
    } else {
        None
    };
    let mut buffer = ReplayBuffer::new(n, config.episodes_per_iteration * env.horizon().max(1))?;
    let mut log = MetricsLog::new();
    let (mut episodes, mut env_steps) = (0usize, 0u64);
    let mut next_eval = config.eval_every;

    for iteration in 0..config.iterations {
        buffer.clear();
        let mut returns = Vec::with_capacity(config.episodes_per_iteration);
        let mut exhausted = false;
        for e in 0..config.episodes_per_iteration {
            if let Some(cap) = config.max_env_steps {
                if env_steps + env.horizon() as u64 > cap {
                    exhausted = true;
                    break;
                }
            }
            let tr = sample_episode(env, &policies, channel.as_ref(), &mut rng)?;
            env_steps += tr.steps.len() as u64;
            returns.push(tr.discounted_return);
            insert_episode(&mut buffer, &critics, &tr, e, &num_actions)?;
        }
        episodes += returns.len();
        if returns.is_empty() {
            break;
        }
        let exhausted = exhausted
            || config
                .max_env_steps
                .is_some_and(|cap| env_steps + env.horizon() as u64 > cap);

        let actor = update_actors(&mut policies, &mut optimizers, &buffer, config)?;
        let critic_loss = update_critics(&mut critics, &policies, &buffer, config.critic_lr, env.gamma())?;
        if let (Some(Channel::Learned { functions }), Critics::Comm(qs)) = (channel.as_mut(), &critics) {
            if config.comm_lr > 0.0 {
                update_message_functions(functions, &buffer, qs, config.comm_lr)?;
            }
        }

        let last = exhausted || iteration + 1 == config.iterations;
        let eval_rate = if last {
            Some(evaluate(env, &policies, config.final_eval_episodes, &mut eval_rng)?)
        } else if episodes >= next_eval {
            while next_eval <= episodes {
                next_eval += config.eval_every;
            }
            Some(evaluate(env, &policies, config.eval_episodes, &mut eval_rng)?)
        } else {
            None
        };
        log.push(MetricsRow {
            seed: config.seed,
            iteration,
            episodes,
            env_steps,
            grad_norms: actor.grad_norms,
            eval_rate,
            mean_return: returns.iter().sum::<f64>() / returns.len() as f64,
            actor_loss: actor.actor_loss,
            critic_loss,
            kl_loss: actor.kl_loss,
        })?;
        if last {
            break;
        }
    }
    Ok(TrainOutcome {
        policies,
        critics,
        channel,
        log,
        episodes,
        env_steps,
    })
}

fn received(messages: &Option<Vec<u64>>, n: usize, agent: usize) -> Result<Vec<u64>> {
    match messages {
        Some(m) => Ok(broadcast(m, n, agent)?.0),
        None => Ok(Vec::new()),
    }
}

/// Records every step of `tr` for every agent, with critic values looked up
/// now.
pub fn insert_episode(
    buffer: &mut ReplayBuffer,
    critics: &Critics,
    tr: &Trajectory,
    episode: usize,
    num_actions: &[usize],
) -> Result<()> {
    let n = buffer.num_agents();
    for (t, step) in tr.steps.iter().enumerate() {
        let next_step = tr.steps.get(t + 1);
        for i in 0..n {
            let messages = received(&step.messages, n, i)?;
            let q_all = critics.action_values(i, &step.history_keys, &step.actions, &messages, num_actions[i]);
            let next = match (&step.next_history_keys, next_step) {
                (Some(keys), Some(ns)) => Some(NextContext {
                    joint_keys: keys.clone(),
                    messages: received(&ns.messages, n, i)?,
                }),
                _ => None,
            };
            buffer.insert(
                i,
                Record {
                    episode,
                    step: t,
                    observation: step.observations[i],
                    history_key: step.history_keys[i],
                    joint_keys: step.history_keys.clone(),
                    messages,
                    sent: step.messages.as_ref().map(|m| m[i]),
                    action: step.actions[i],
                    joint_actions: step.actions.clone(),
                    reward: step.reward,
                    next_observation: next_step.map(|s| s.observations[i]),
                    next,
                    q: q_all[step.actions[i] as usize],
                    q_all,
                    probs: step.policy[i].clone(),
                },
            )?;
        }
    }
    Ok(())
}

struct ActorStats {
    grad_norms: Vec<f64>,
    actor_loss: f64,
    kl_loss: f64,
}

/// Mean estimator over one agent's records, evaluated with `policy`.
pub fn actor_gradient(
    kind: EstimatorKind,
    policy: &SoftmaxPolicy,
    records: &[Record],
    params: &HyperParams,
) -> Result<PolicyGradient> {
    let mut grad = PolicyGradient::default();
    if records.is_empty() {
        return Ok(grad);
    }
    let w = 1.0 / records.len() as f64;
    for r in records {
        let probs = policy.action_distribution(r.history_key);
        let g = estimate(kind, &probs, r.action, &r.q_all, params)?;
        grad.add(r.history_key, &g, w);
    }
    Ok(grad)
}

fn update_actors(
    policies: &mut [SoftmaxPolicy],
    optimizers: &mut [Optimizer],
    buffer: &ReplayBuffer,
    config: &TrainConfig,
) -> Result<ActorStats> {
    let kind = config.estimator;
    let params = &config.params;
    let n = policies.len();
    let mut stats = ActorStats {
        grad_norms: vec![0.0; n],
        actor_loss: 0.0,
        kl_loss: 0.0,
    };
    for i in 0..n {
        let records: Vec<Record> = buffer.records(i).iter().cloned().collect();
        if records.is_empty() {
            continue;
        }
        let count = records.len() as f64;
        for r in &records {
            let shift = match kind {
                EstimatorKind::DccdaOb | EstimatorKind::DccdaObKl => baseline_from(&r.probs, &r.q_all, params.eta)?,
                _ => 0.0,
            };
            stats.actor_loss -= (r.q - shift) * r.probs[r.action as usize].ln() / (count * n as f64);
            let (neg_kl, _) = kl_term(&r.probs, &r.q_all, params.alpha)?;
            stats.kl_loss -= neg_kl / (count * n as f64);
        }
        for epoch in 0..config.update_epochs {
            let mut grad = actor_gradient(kind, &policies[i], &records, params)?;
            if !grad.is_finite() {
                return Err(Error::NonFinite(format!("actor gradient of agent {i}")));
            }
            if epoch == 0 {
                stats.grad_norms[i] = grad.norm();
            }
            if let Some(max) = config.max_grad_norm {
                grad.clip_norm(max);
            }
            optimizers[i].step(&mut policies[i], &grad, config.actor_lr)?;
        }
    }
    Ok(stats)
}

/// One pass of expected-SARSA updates over the buffer; returns the mean
/// squared TD error seen before each update.
fn update_critics(
    critics: &mut Critics,
    policies: &[SoftmaxPolicy],
    buffer: &ReplayBuffer,
    lr: f64,
    gamma: f64,
) -> Result<f64> {
    let n = policies.len();
    let mut sq = 0.0;
    let mut count = 0usize;
    let mut apply = |err: f64| {
        sq += err * err;
        count += 1;
    };
    match critics {
        Critics::Joint(q) => {
            let radix = MixedRadix::new(policies.iter().map(SoftmaxPolicy::num_actions).collect());
            for r in buffer.records(0) {
                let next = match &r.next {
                    None => Vec::new(),
                    Some(ctx) => {
                        let dists: Vec<Vec<f64>> = policies
                            .iter()
                            .zip(&ctx.joint_keys)
                            .map(|(p, &k)| p.action_distribution(k))
                            .collect();
                        (0..radix.size())
                            .map(|a| {
                                let digits = radix.digits(a);
                                let w: f64 = digits.iter().zip(&dists).map(|(&d, p)| p[d as usize]).product();
                                ((ctx.joint_keys.clone(), digits), w)
                            })
                            .filter(|(_, w)| *w > 0.0)
                            .collect()
                    }
                };
                let tr = Transition {
                    key: (r.joint_keys.clone(), r.joint_actions.clone()),
                    reward: r.reward,
                    next,
                };
                apply(tr.target(q, gamma)? - q.get(&tr.key));
                td_update(q, &tr, lr, gamma)?;
            }
        }
        Critics::Local(qs) => {
            for i in 0..n {
                for r in buffer.records(i) {
                    let next = match &r.next {
                        None => Vec::new(),
                        Some(ctx) => {
                            let h = ctx.joint_keys[i];
                            own_weights(&policies[i], h, |b| (h, b))
                        }
                    };
                    let tr = Transition {
                        key: (r.history_key, r.action),
                        reward: r.reward,
                        next,
                    };
                    apply(tr.target(&qs[i], gamma)? - qs[i].get(&tr.key));
                    td_update(&mut qs[i], &tr, lr, gamma)?;
                }
            }
        }
        Critics::Comm(qs) => {
            for i in 0..n {
                for r in buffer.records(i) {
                    let next = match &r.next {
                        None => Vec::new(),
                        Some(ctx) => {
                            let h = ctx.joint_keys[i];
                            own_weights(&policies[i], h, |b| (h, b, ctx.messages.clone()))
                        }
                    };
                    let tr = Transition {
                        key: (r.history_key, r.action, r.messages.clone()),
                        reward: r.reward,
                        next,
                    };
                    apply(tr.target(&qs[i], gamma)? - qs[i].get(&tr.key));
                    td_update(&mut qs[i], &tr, lr, gamma)?;
                }
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sq / count as f64 })
}

fn own_weights<K>(policy: &SoftmaxPolicy, key: u64, make: impl Fn(u32) -> K) -> Vec<(K, f64)> {
    policy
        .action_distribution(key)
        .into_iter()
        .enumerate()
        .filter(|&(_, p)| p > 0.0)
        .map(|(b, p)| (make(b as u32), p))
        .collect()
}

/// Score-function update of every sender's message function from the
/// receivers' critics; see the module documentation for the rule.
pub fn update_message_functions(
    functions: &mut [MessageFunction],
    buffer: &ReplayBuffer,
    critics: &[CommQ],
    lr: f64,
) -> Result<()> {
    if lr == 0.0 {
        return Ok(());
    }
    let n = buffer.num_agents();
    if functions.len() != n || critics.len() != n {
        return Err(Error::Argument("one message function and critic per agent expected".into()));
    }
    for i in 0..n {
        let records = buffer.records(i);
        if records.is_empty() {
            continue;
        }
        let scale = lr / records.len() as f64;
        for r in records {
            if r.messages.len() + 1 != n {
                return Err(Error::Argument("record has no messages for the channel update".into()));
            }
            for j in (0..n).filter(|&j| j != i) {
                let slot = if j < i { j } else { j - 1 };
                let (h_j, a_j) = (r.joint_keys[j], r.joint_actions[j]);
                let sent = r.messages[slot];
                let probs = functions[j].probabilities(h_j, a_j)?.into_owned();
                let mut alt = r.messages.clone();
                let mut mean = 0.0;
                for (m, p) in probs.iter().enumerate() {
                    alt[slot] = m as u64;
                    mean += p * critics[i].get(&(r.history_key, r.action, alt.clone()));
                }
                let weight = critics[i].get(&(r.history_key, r.action, r.messages.clone())) - mean;
                functions[j].reinforce(h_j, a_j, sent, weight, scale)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::bandit::coordination_bandit;
    use crate::model::traffic::{traffic_junction_lite, TrafficConfig, GAS};

    fn quick(kind: EstimatorKind) -> TrainConfig {
        TrainConfig {
            estimator: kind,
            iterations: 20,
            episodes_per_iteration: 4,
            eval_every: 16,
            eval_episodes: 8,
            final_eval_episodes: 8,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_iterations_leave_parameters_unchanged() {
        let env = coordination_bandit(0.5, 1.0);
        let mut c = quick(EstimatorKind::Dccda);
        c.iterations = 0;
        let out = train(&env, &c).unwrap();
        assert!(out.log.is_empty());
        assert!(out.policies.iter().all(|p| p.num_entries() == 0));
        assert_eq!(out.env_steps, 0);
    }

    #[test]
    fn same_seed_gives_identical_logs() {
        let env = coordination_bandit(0.5, 1.0);
        for kind in EstimatorKind::ALL {
            let a = train(&env, &quick(kind)).unwrap();
            let b = train(&env, &quick(kind)).unwrap();
            assert_eq!(a.log.to_csv_string().unwrap(), b.log.to_csv_string().unwrap());
            assert_eq!(a.policies, b.policies);
        }
    }

    #[test]
    fn evaluation_cadence_and_final_row() {
        let env = coordination_bandit(0.5, 1.0);
        let out = train(&env, &quick(EstimatorKind::Ctde)).unwrap();
        let evals: Vec<usize> = out
            .log
            .rows()
            .iter()
            .filter(|r| r.eval_rate.is_some())
            .map(|r| r.episodes)
            .collect();
        assert_eq!(evals, vec![16, 32, 48, 64, 80]);
        assert!(out.log.rows().iter().all(|r| r.env_steps == r.episodes as u64 * 2));
    }

    #[test]
    fn step_budget_is_respected() {
        let env = coordination_bandit(0.5, 1.0);
        let mut c = quick(EstimatorKind::Dccda);
        c.max_env_steps = Some(23);
        let out = train(&env, &c).unwrap();
        assert!(out.env_steps <= 23);
        assert_eq!(out.env_steps, 22);
        assert!(out.log.rows().last().unwrap().eval_rate.is_some());
    }

    #[test]
    fn frozen_constant_critic_keeps_baselined_actor_still() {
        let env = coordination_bandit(0.5, 1.0);
        let mut c = quick(EstimatorKind::DccdaOb);
        c.critic_lr = 0.0;
        let out = train(&env, &c).unwrap();
        for p in &out.policies {
            for k in p.keys() {
                assert!(p.logits(k).iter().all(|&z| z == 0.0));
            }
        }
    }

    #[test]
    fn buffered_gradient_matches_online_estimator() {
        let env = coordination_bandit(0.5, 1.0);
        let mut c = quick(EstimatorKind::DccdaObKl);
        c.iterations = 5;
        let out = train(&env, &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let channel = out.channel.as_ref().unwrap();
        let tr = sample_episode(&env, &out.policies, Some(channel), &mut rng).unwrap();
        let mut buffer = ReplayBuffer::new(2, 8).unwrap();
        insert_episode(&mut buffer, &out.critics, &tr, 0, &[2, 2]).unwrap();
        let Critics::Comm(qs) = &out.critics else { panic!("comm critics expected") };
        for i in 0..2 {
            let records: Vec<Record> = buffer.records(i).iter().cloned().collect();
            let from_buffer = actor_gradient(c.estimator, &out.policies[i], &records, &c.params).unwrap();
            let mut online = PolicyGradient::default();
            for (step, r) in tr.steps.iter().zip(&records) {
                let m = broadcast(step.messages.as_ref().unwrap(), 2, i).unwrap().0;
                let g = crate::estimator::g_dccda_ob_kl(&qs[i], &out.policies[i], step.history_keys[i], step.actions[i], &m, &c.params)
                    .unwrap();
                online.add_sample(&g, 1.0 / records.len() as f64);
                assert_eq!(r.messages, m);
            }
            assert_eq!(from_buffer, online);
        }
    }

    #[test]
    fn message_update_favours_higher_receiver_value() {
        let mut f = vec![
            MessageFunction::new(2, 1, RowInit::Uniform).unwrap(),
            MessageFunction::new(2, 1, RowInit::Uniform).unwrap(),
        ];
        let mut critics = vec![CommQ::new(), CommQ::new()];
        critics[1].set((0, 0, vec![1]), 1.0).unwrap();
        critics[1].set((0, 0, vec![0]), 0.0).unwrap();
        let mut buffer = ReplayBuffer::new(2, 4).unwrap();
        for (i, m) in [(0usize, vec![0u64]), (1, vec![1])] {
            buffer
                .insert(
                    i,
                    Record {
                        episode: 0,
                        step: 0,
                        observation: 0,
                        history_key: 0,
                        joint_keys: vec![0, 0],
                        messages: m,
                        sent: Some(if i == 0 { 1 } else { 0 }),
                        action: 0,
                        joint_actions: vec![0, 0],
                        reward: 0.0,
                        next_observation: None,
                        next: None,
                        q: 0.0,
                        q_all: vec![0.0],
                        probs: vec![1.0],
                    },
                )
                .unwrap();
        }
        let before = f.clone();
        update_message_functions(&mut f, &buffer, &critics, 0.0).unwrap();
        assert_eq!(f, before);
        update_message_functions(&mut f, &buffer, &critics, 1.0).unwrap();
        let p = f[0].probabilities(0, 0).unwrap();
        assert!(p[1] > 0.5);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluation_examples() {
        let single = traffic_junction_lite(TrafficConfig::new(2, 1, 1.0, 8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let policies = vec![SoftmaxPolicy::new(2)];
        assert_eq!(evaluate(&single, &policies, 20, &mut rng).unwrap(), 1.0);

        let pair = traffic_junction_lite(TrafficConfig::new(2, 2, 1.0, 8)).unwrap();
        let mut always_gas = SoftmaxPolicy::new(2);
        let keys = pair.codec(0).num_keys(2).unwrap();
        for k in 0..keys {
            let mut z = vec![0.0; 2];
            z[GAS as usize] = 1e3;
            always_gas.set_logits(k, z).unwrap();
        }
        let rate = evaluate(&pair, &[always_gas.clone(), always_gas], 10, &mut rng).unwrap();
        assert_eq!(rate, 0.0);
        assert!(evaluate(&single, &[SoftmaxPolicy::new(2)], 0, &mut rng).is_err());
    }

    #[test]
    fn config_validation_and_json() {
        let mut c = TrainConfig::default();
        c.actor_lr = 0.0;
        assert!(c.validate().is_err());
        let c = TrainConfig::from_json(r#"{"estimator": "dccda-ob-kl", "iterations": 3, "channel": {"kind": "learned", "alphabet": 2, "init_scale": 1.0}}"#)
            .unwrap();
        assert_eq!(c.estimator, EstimatorKind::DccdaObKl);
        assert_eq!(c.episodes_per_iteration, 8);
        assert!(TrainConfig::from_json(r#"{"estimator": "dccda", "bogus": 1}"#).is_err());
    }
}
