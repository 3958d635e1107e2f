//! Machine checks of the variance results on batches of random instances.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{broadcast, Channel, MessageFunction, NoiseModel, RowInit};
use crate::critic::CommQ;
use crate::error::{Error, Result};
use crate::estimator::{kl_term, EstimatorKind, HyperParams};
use crate::model::env::{sample_episode, sample_index};
use crate::model::{make_random_decpomdp, RandomModelConfig, TabularDecPomdp};
use crate::oracle::moments::{CriticRef, EstimatorSpec, GradientMoments, MessageSource};
use crate::oracle::qvalues::noise_messages;
use crate::oracle::tree::received_distribution;
use crate::oracle::Oracle;
use crate::par::{map_range, map_slice, Execution};
use crate::policy::{score, softmax, SoftmaxPolicy};

/// Outcome of checking one claim over a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub claim: String,
    pub instances: usize,
    pub tolerance: f64,
    pub max_violation: f64,
    pub pass: bool,
    pub witness: Option<String>,
    pub details: BTreeMap<String, f64>,
}

impl VerificationReport {
    pub fn new(claim: &str, tolerance: f64) -> Self {
        Self {
            claim: claim.to_string(),
            instances: 0,
            tolerance,
            max_violation: 0.0,
            pass: true,
            witness: None,
            details: BTreeMap::new(),
        }
    }

    /// Records a violation amount; the first one above tolerance becomes the
    /// witness.
    pub fn record(&mut self, violation: f64, witness: impl FnOnce() -> String) {
        let v = if violation.is_nan() { f64::INFINITY } else { violation };
        if v > self.max_violation {
            self.max_violation = v;
        }
        if v > self.tolerance && self.witness.is_none() {
            self.witness = Some(witness());
        }
        self.pass = self.max_violation <= self.tolerance;
    }

    pub fn detail(&mut self, name: &str, value: f64) {
        self.details.insert(name.to_string(), value);
    }

    fn detail_max(&mut self, name: &str, value: f64) {
        let e = self.details.entry(name.to_string()).or_insert(f64::NEG_INFINITY);
        *e = e.max(value);
    }

    fn detail_min(&mut self, name: &str, value: f64) {
        let e = self.details.entry(name.to_string()).or_insert(f64::INFINITY);
        *e = e.min(value);
    }

    fn detail_add(&mut self, name: &str, value: f64) {
        *self.details.entry(name.to_string()).or_insert(0.0) += value;
    }

    /// Folds per-instance reports of the same claim into one.
    pub fn merge(claim: &str, tolerance: f64, parts: Vec<VerificationReport>) -> Self {
        let mut out = Self::new(claim, tolerance);
        for p in parts {
            out.instances += p.instances;
            if p.max_violation > out.max_violation {
                out.max_violation = p.max_violation;
            }
            if out.witness.is_none() {
                out.witness = p.witness;
            }
            for (k, v) in p.details {
                if k.starts_with("min_") {
                    out.detail_min(&k, v);
                } else if k.starts_with("max_") {
                    out.detail_max(&k, v);
                } else {
                    out.detail_add(&k, v);
                }
            }
        }
        out.pass = out.max_violation <= tolerance;
        out
    }
}

/// A model paired with fixed policies.
#[derive(Debug, Clone)]
pub struct Instance {
    pub label: String,
    pub model: TabularDecPomdp,
    pub policies: Vec<SoftmaxPolicy>,
}

impl Instance {
    pub fn perfect_channel(&self) -> Channel {
        Channel::PerfectDecoder {
            actions_per_agent: self.model.actions_per_agent.clone(),
        }
    }
}

/// Random logits for every history the model can produce.
pub fn random_policies<R: Rng + ?Sized>(model: &TabularDecPomdp, scale: f64, rng: &mut R) -> Vec<SoftmaxPolicy> {
    (0..model.num_agents)
        .map(|i| {
            let keys = model
                .codec(i)
                .num_keys(model.horizon.saturating_sub(1))
                .expect("small model");
            SoftmaxPolicy::random(model.actions_per_agent[i], keys, scale, rng)
        })
        .collect()
}

/// Shape of a verification batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub count: usize,
    pub seed: u64,
    pub max_states: usize,
    pub max_horizon: usize,
    pub binary_rewards: Option<(f64, f64)>,
    pub logit_scale: f64,
}

impl BatchConfig {
    pub fn new(count: usize, seed: u64) -> Self {
        Self {
            count,
            seed,
            max_states: 4,
            max_horizon: 3,
            binary_rewards: None,
            logit_scale: 1.5,
        }
    }
}

/// Two-agent instances with two actions and observations each, cycling
/// through `1..=max_states` states and `1..=max_horizon` steps.
pub fn random_batch(config: &BatchConfig, exec: Execution) -> Result<Vec<Instance>> {
    if config.count == 0 {
        return Err(Error::Argument("verification batch is empty".into()));
    }
    if config.max_states == 0 || config.max_horizon == 0 {
        return Err(Error::Argument("batch sizes must be positive".into()));
    }
    map_range(exec, config.count, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(k as u64);
        let states = 1 + k % config.max_states;
        let horizon = 1 + (k / config.max_states) % config.max_horizon;
        let mut mc = RandomModelConfig::new(2, states, 2, 2, horizon);
        mc.binary_rewards = config.binary_rewards;
        let model = make_random_decpomdp(&mc, rng.random())?;
        let policies = random_policies(&model, config.logit_scale, &mut rng);
        Ok(Instance {
            label: format!("seed {} #{k} (|S|={}, T={horizon})", config.seed, mc.num_states),
            model,
            policies,
        })
    })
    .into_iter()
    .collect()
}

/// `E_m[Q_comm(h_i, a_i, m)]` against `Q(h, a)` at every reachable pair.
pub fn verify_consistency(instance: &Instance, channel: &Channel, tol: f64) -> Result<VerificationReport> {
    let oracle = Oracle::new(&instance.model, &instance.policies)?;
    let mut report = VerificationReport::new("consistency", tol);
    report.instances = 1;
    for agent in 0..instance.model.num_agents {
        let comm = oracle.q_comm(channel, agent)?;
        for (t, level) in oracle.tree.levels.iter().enumerate() {
            for (n, node) in level.iter().enumerate() {
                for a in 0..node.joint_probs.len() {
                    let actions = oracle.tree.joint_actions.digits(a);
                    let mut avg = 0.0;
                    for (m, pm) in received_distribution(channel, &node.keys, &actions, agent)? {
                        avg += pm * comm.get(&(node.keys[agent], actions[agent], m));
                    }
                    let q = oracle.joint[t][n][a];
                    report.record((avg - q).abs(), || {
                        format!(
                            "{}: agent {agent}, histories {:?}, actions {actions:?}: Q = {q}, E_m[Q_comm] = {avg}",
                            instance.label, node.keys
                        )
                    });
                }
            }
        }
    }
    Ok(report)
}

pub fn verify_consistency_batch(batch: &[Instance], tol: f64, exec: Execution) -> Result<VerificationReport> {
    let parts = map_slice(exec, batch, |inst| verify_consistency(inst, &inst.perfect_channel(), tol))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(VerificationReport::merge("consistency", tol, parts))
}

/// Adds `amplitude * (tag - E[tag])` for every received message's tag, so
/// the critic depends on message randomness while its message average is
/// unchanged.
pub fn dither(q: &CommQ, tag_probs: &[f64], amplitude: f64) -> Result<CommQ> {
    let n = tag_probs.len() as u64;
    let mean: f64 = tag_probs.iter().enumerate().map(|(t, p)| t as f64 * p).sum();
    let mut out = CommQ::new();
    for ((h, a, m), v) in q.sorted() {
        let shift: f64 = m.iter().map(|&code| (code % n) as f64 - mean).sum();
        out.set((*h, *a, m.clone()), v + amplitude * shift)?;
    }
    Ok(out)
}

pub const DITHER_TAGS: [f64; 2] = [0.5, 0.5];

/// Variance of the communicating estimator against the centralized one for
/// every agent of one instance.
///
/// Two critics are checked: the exact critic of the perfect decoder (the
/// deterministic case, where both variances coincide) and a dithered critic
/// on a tagged perfect channel (a message-dependent critic that still
/// averages to the centralized one, where the gap is strictly positive).
pub fn verify_variance_ordering(instance: &Instance, tol: f64, dither_amplitude: f64) -> Result<VerificationReport> {
    let oracle = Oracle::new(&instance.model, &instance.policies)?;
    let mut report = VerificationReport::new("variance-ordering", tol);
    report.instances = 1;
    let joint = oracle.q_joint();
    let perfect = instance.perfect_channel();
    let tagged = Channel::Tagged {
        actions_per_agent: instance.model.actions_per_agent.clone(),
        tag_probs: DITHER_TAGS.to_vec(),
    };
    for agent in 0..instance.model.num_agents {
        let ctde = oracle.moments(&EstimatorSpec::plain(agent, CriticRef::Joint(&joint), MessageSource::None))?;
        let comm = oracle.q_comm(&perfect, agent)?;
        let det = oracle.moments(&EstimatorSpec::plain(agent, CriticRef::Comm(&comm), MessageSource::Channel(&perfect)))?;
        let gap = det.variance - ctde.variance;
        report.record(-gap, || {
            format!("{}: agent {agent}, perfect decoder gap {gap:e}", instance.label)
        });
        report.detail_max("max_abs_deterministic_gap", gap.abs());

        let dithered = dither(&oracle.q_comm(&tagged, agent)?, &DITHER_TAGS, dither_amplitude)?;
        let noisy = oracle.moments(&EstimatorSpec::plain(agent, CriticRef::Comm(&dithered), MessageSource::Channel(&tagged)))?;
        let gap = noisy.variance - ctde.variance;
        report.record(-gap, || format!("{}: agent {agent}, dithered gap {gap:e}", instance.label));
        report.detail_max("max_dithered_gap", gap);
        report.detail_min("min_dithered_gap", gap);
        if gap > 1e-6 {
            report.detail_add("strict_cases", 1.0);
        }
        report.detail_add("cases", 1.0);
    }
    Ok(report)
}

pub fn verify_variance_ordering_batch(batch: &[Instance], tol: f64, exec: Execution) -> Result<VerificationReport> {
    let parts = map_slice(exec, batch, |inst| verify_variance_ordering(inst, tol, 0.5))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(VerificationReport::merge("variance-ordering", tol, parts))
}

/// Unbiasedness of the surrogate reward, `E_eps[r_hat] = r`, for both
/// reward values under each noise model.
pub fn verify_surrogate_rewards(noises: &[NoiseModel], tol: f64) -> Result<VerificationReport> {
    let mut report = VerificationReport::new("surrogate-reward", tol);
    for noise in noises {
        report.instances += 1;
        for r in [noise.r_plus, noise.r_minus] {
            let mut avg = 0.0;
            for (&eps, &p) in noise.values.iter().zip(&noise.probs) {
                avg += p * noise.surrogate_reward(r, eps)?;
            }
            report.record((avg - r).abs(), || {
                format!("e = {}: reward {r}, E[r_hat] = {avg}", noise.rate())
            });
        }
    }
    Ok(report)
}

/// Noisy critic unbiasedness (`E_eps[Q_hat] = Q`) and noisy estimator variance
/// at least the centralized one, for one instance and noise model.
pub fn verify_noisy_critic(
    instance: &Instance,
    noise: &NoiseModel,
    tol_mean: f64,
    tol_var: f64,
) -> Result<(VerificationReport, VerificationReport)> {
    let oracle = Oracle::new(&instance.model, &instance.policies)?;
    let mut unbiased = VerificationReport::new("noisy-critic-unbiased", tol_mean);
    let mut ordering = VerificationReport::new("noisy-variance-ordering", tol_var);
    unbiased.instances = 1;
    ordering.instances = 1;
    let values = oracle.surrogate_values(noise)?;
    for (t, level) in values.iter().enumerate() {
        for (n, per_action) in level.iter().enumerate() {
            for (a, per_eps) in per_action.iter().enumerate() {
                let avg: f64 = per_eps.iter().zip(&noise.probs).map(|(q, p)| q * p).sum();
                let q = oracle.joint[t][n][a];
                unbiased.record((avg - q).abs(), || {
                    format!("{}: level {t}, node {n}, action {a}: Q = {q}, E_eps[Q_hat] = {avg}", instance.label)
                });
            }
        }
    }
    let joint = oracle.q_joint();
    for agent in 0..instance.model.num_agents {
        let ctde = oracle.moments(&EstimatorSpec::plain(agent, CriticRef::Joint(&joint), MessageSource::None))?;
        let table = crate::oracle::qvalues::surrogate_table(&oracle.tree, &values, &instance.model.actions_per_agent, agent)?;
        let noisy = oracle.moments(&EstimatorSpec::plain(agent, CriticRef::Comm(&table), MessageSource::Noise(noise)))?;
        let gap = noisy.variance - ctde.variance;
        ordering.record(-gap, || format!("{}: agent {agent}, e = {}, gap {gap:e}", instance.label, noise.rate()));
        ordering.detail_min("min_gap", gap);
        ordering.detail_max("max_gap", gap);
    }
    Ok((unbiased, ordering))
}

pub fn verify_noisy_critic_batch(
    batch: &[Instance],
    rate: f64,
    tol_mean: f64,
    tol_var: f64,
    exec: Execution,
) -> Result<(VerificationReport, VerificationReport)> {
    let parts = map_slice(exec, batch, |inst| {
        let (hi, lo) = inst
            .model
            .binary_rewards()
            .ok_or_else(|| Error::Unsupported(format!("{} has non-binary rewards", inst.label)))?;
        let noise = NoiseModel::with_rate(rate, (hi, lo))?;
        verify_noisy_critic(inst, &noise, tol_mean, tol_var)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (unbiased_parts, ordering_parts): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    Ok((
        VerificationReport::merge("noisy-critic-unbiased", tol_mean, unbiased_parts),
        VerificationReport::merge("noisy-variance-ordering", tol_var, ordering_parts),
    ))
}

/// Relative perturbations of the optimal baseline checked for optimality.
pub const BASELINE_PERTURBATIONS: [f64; 8] = [-0.5, -0.2, -0.1, -0.01, 0.01, 0.1, 0.2, 0.5];

/// Baseline claims for one instance with the perfect decoder:
/// variance reduction, optimality against perturbed baselines, the
/// variance-decomposition identity, and unbiasedness.
pub fn verify_baseline_claims(instance: &Instance, tol: f64, eta: f64) -> Result<[VerificationReport; 4]> {
    let oracle = Oracle::new(&instance.model, &instance.policies)?;
    let channel = instance.perfect_channel();
    let mut reduction = VerificationReport::new("baseline-variance-reduction", tol);
    let mut optimality = VerificationReport::new("baseline-optimality", tol);
    let mut identity = VerificationReport::new("variance-decomposition", tol);
    let mut unbiased = VerificationReport::new("unbiasedness", tol);
    for r in [&mut reduction, &mut optimality, &mut identity, &mut unbiased] {
        r.instances = 1;
    }
    let joint = oracle.q_joint();
    for agent in 0..instance.model.num_agents {
        let comm = oracle.q_comm(&channel, agent)?;
        let spec = EstimatorSpec::plain(agent, CriticRef::Comm(&comm), MessageSource::Channel(&channel));
        let plain = oracle.moments(&spec)?;
        let ob = oracle.moments(&spec.with_baseline(eta, 1.0))?;
        let label = &instance.label;

        let d = ob.variance - plain.variance;
        reduction.record(d, || format!("{label}: agent {agent}, Var(OB) - Var(DCCDA) = {d:e}"));
        reduction.detail_max("max_reduction", -d);

        let mut best_margin = f64::INFINITY;
        for delta in BASELINE_PERTURBATIONS {
            let other = oracle.moments(&spec.with_baseline(eta, 1.0 + delta))?;
            let margin = other.variance - ob.variance;
            optimality.record(-margin, || {
                format!("{label}: agent {agent}, baseline scaled by {} beats b* by {:e}", 1.0 + delta, -margin)
            });
            best_margin = best_margin.min(margin);
        }
        let varies = q_varies_over_actions(&comm, instance.model.actions_per_agent[agent]);
        if varies {
            optimality.detail_add("varying_cases", 1.0);
            if best_margin > 0.0 {
                optimality.detail_add("strict_cases", 1.0);
            }
        }

        let predicted = plain.variance - plain.baseline_gain;
        let err = (ob.variance - predicted).abs();
        identity.record(err, || {
            format!("{label}: agent {agent}, Var(OB) = {:e}, decomposition gives {predicted:e}", ob.variance)
        });

        let ctde = oracle.moments(&EstimatorSpec::plain(agent, CriticRef::Joint(&joint), MessageSource::None))?;
        let bias = ob.mean_max_diff(&plain);
        unbiased.record(bias, || format!("{label}: agent {agent}, |E[OB] - E[DCCDA]| = {bias:e}"));
        let cross = plain.mean_max_diff(&ctde);
        unbiased.record(cross, || format!("{label}: agent {agent}, |E[DCCDA] - E[CTDE]| = {cross:e}"));
        unbiased.detail_max("max_ob_bias", bias);
        unbiased.detail_max("max_ctde_dccda_mean_diff", cross);
    }
    Ok([reduction, optimality, identity, unbiased])
}

fn q_varies_over_actions(q: &CommQ, num_actions: usize) -> bool {
    let mut groups: BTreeMap<(u64, &Vec<u64>), Vec<f64>> = BTreeMap::new();
    for ((h, _, m), v) in q.sorted() {
        groups.entry((*h, m)).or_default().push(v);
    }
    groups.values().any(|vs| {
        vs.len() == num_actions && vs.iter().any(|v| (v - vs[0]).abs() > 1e-12)
    })
}

pub fn verify_baseline_batch(batch: &[Instance], tol: f64, eta: f64, exec: Execution) -> Result<Vec<VerificationReport>> {
    let parts = map_slice(exec, batch, |inst| verify_baseline_claims(inst, tol, eta))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut columns: [Vec<VerificationReport>; 4] = Default::default();
    for group in parts {
        for (c, r) in columns.iter_mut().zip(group) {
            c.push(r);
        }
    }
    Ok(columns
        .into_iter()
        .map(|c| {
            let claim = c[0].claim.clone();
            VerificationReport::merge(&claim, tol, c)
        })
        .collect())
}

/// Central-difference derivative of `f` along each coordinate of `x`.
pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], step: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[k] += step;
            down[k] -= step;
            (f(&up) - f(&down)) / (2.0 * step)
        })
        .collect()
}

/// Largest coordinate-wise relative error; pairs where both magnitudes are
/// below `floor` count as agreeing.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let scale = a.abs().max(n.abs());
            if scale < floor {
                0.0
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

fn log_softmax(z: &[f64], a: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    z[a] - max - z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Finite-difference checks of the score, the KL term gradient and the
/// expected combined estimator against random configurations.
pub fn verify_gradients(count: usize, seed: u64, tol: f64) -> Result<[VerificationReport; 3]> {
    const STEP: f64 = 1e-5;
    const FLOOR: f64 = 1e-7;
    let mut score_report = VerificationReport::new("score-finite-difference", tol);
    let mut kl_report = VerificationReport::new("kl-finite-difference", tol);
    let mut combined = VerificationReport::new("combined-finite-difference", tol);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..count {
        let n = rng.random_range(2..=5usize);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let alpha = rng.random_range(0.2..3.0);
        let beta = rng.random_range(0.0..1.0);
        let a = rng.random_range(0..n);
        let probs = softmax(&z);

        let analytic = score(&probs, a);
        let numeric = central_difference(|x| log_softmax(x, a), &z, STEP);
        let e = relative_error(&analytic, &numeric, FLOOR);
        score_report.record(e, || format!("config {k}: logits {z:?}, action {a}, relative error {e:e}"));

        let (_, kl_grad) = kl_term(&probs, &q, alpha)?;
        let numeric = central_difference(|x| kl_term(&softmax(x), &q, alpha).map(|r| r.0).unwrap_or(f64::NAN), &z, STEP);
        let e = relative_error(&kl_grad, &numeric, FLOOR);
        kl_report.record(e, || format!("config {k}: logits {z:?}, q {q:?}, alpha {alpha}, relative error {e:e}"));

        // The expectation of the combined estimator over actions is the
        // gradient of E_pi[Q] + beta * (negated KL).
        let mut policy = SoftmaxPolicy::new(n);
        policy.set_logits(0, z.clone())?;
        let mut critic = CommQ::new();
        for (b, &v) in q.iter().enumerate() {
            critic.set((0, b as u32, Vec::new()), v)?;
        }
        let params = HyperParams { alpha, beta, eta: 1e-12 };
        let mut expected = vec![0.0; n];
        for b in 0..n {
            let g = crate::estimator::g_dccda_ob_kl(&critic, &policy, 0, b as u32, &[], &params)?;
            for (e, v) in expected.iter_mut().zip(&g.values) {
                *e += probs[b] * v;
            }
        }
        let objective = |x: &[f64]| {
            let p = softmax(x);
            let value: f64 = p.iter().zip(&q).map(|(pi, qi)| pi * qi).sum();
            value + beta * kl_term(&p, &q, alpha).map(|r| r.0).unwrap_or(f64::NAN)
        };
        let numeric = central_difference(objective, &z, STEP);
        let e = relative_error(&expected, &numeric, FLOOR);
        combined.record(e, || format!("config {k}: logits {z:?}, relative error {e:e}"));
    }
    for r in [&mut score_report, &mut kl_report, &mut combined] {
        r.instances = count;
    }
    Ok([score_report, kl_report, combined])
}

/// Messages drawn from random learned functions with alphabet `alphabet`.
pub fn random_learned_channel(num_agents: usize, num_actions: usize, alphabet: usize, seed: u64) -> Result<Channel> {
    let functions = (0..num_agents)
        .map(|j| {
            MessageFunction::new(
                alphabet,
                num_actions,
                RowInit::Random {
                    seed: seed.wrapping_add(j as u64),
                    scale: 1.5,
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Channel::Learned { functions })
}

/// Sampled total variance of several estimators of one agent, all evaluated
/// on the same simulated samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledMoments {
    pub samples: usize,
    pub variances: Vec<f64>,
}

#[derive(Clone)]
struct Partial {
    sums: Vec<BTreeMap<u64, Vec<f64>>>,
    squares: Vec<f64>,
    count: usize,
}

impl Partial {
    fn new(k: usize) -> Self {
        Self {
            sums: vec![BTreeMap::new(); k],
            squares: vec![0.0; k],
            count: 0,
        }
    }

    fn absorb(&mut self, other: Partial) {
        for (mine, theirs) in self.sums.iter_mut().zip(other.sums) {
            for (key, v) in theirs {
                let slot = mine.entry(key).or_insert_with(|| vec![0.0; v.len()]);
                for (s, x) in slot.iter_mut().zip(v) {
                    *s += x;
                }
            }
        }
        for (s, x) in self.squares.iter_mut().zip(other.squares) {
            *s += x;
        }
        self.count += other.count;
    }
}

/// Simulates `samples` episodes; from each, one uniformly chosen step gives
/// one gradient sample per estimator. `specs` must all belong to the same
/// agent; the channel drives message generation.
pub fn sampled_variances(
    instance: &Instance,
    specs: &[EstimatorSpec],
    channel: Option<&Channel>,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<SampledMoments> {
    const BATCH: usize = 10_000;
    if samples < 2 {
        return Err(Error::Argument("need at least two samples".into()));
    }
    let agent = specs.first().map(|s| s.agent).unwrap_or(0);
    let n_agents = instance.model.num_agents;
    let batches = samples.div_ceil(BATCH);
    let parts = map_range(exec, batches, |b| -> Result<Partial> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let mut part = Partial::new(specs.len());
        let size = BATCH.min(samples - b * BATCH);
        for _ in 0..size {
            let tr = sample_episode(&instance.model, &instance.policies, channel, &mut rng)?;
            let step = &tr.steps[rng.random_range(0..tr.steps.len())];
            let probs = &step.policy[agent];
            let received = match &step.messages {
                Some(m) => broadcast(m, n_agents, agent)?.0,
                None => Vec::new(),
            };
            for (k, spec) in specs.iter().enumerate() {
                let messages = match spec.messages {
                    MessageSource::None => Vec::new(),
                    MessageSource::Channel(_) => received.clone(),
                    MessageSource::Noise(noise) => {
                        let mut m = noise_messages(&step.history_keys, &step.actions, &instance.model.actions_per_agent, agent);
                        m.push(sample_index(&noise.probs, &mut rng) as u64);
                        m
                    }
                };
                let g = spec.sample(&step.history_keys, &step.actions, &messages, probs)?;
                let slot = part.sums[k]
                    .entry(step.history_keys[agent])
                    .or_insert_with(|| vec![0.0; g.len()]);
                for (s, x) in slot.iter_mut().zip(&g) {
                    *s += x;
                }
                part.squares[k] += g.iter().map(|x| x * x).sum::<f64>();
            }
            part.count += 1;
        }
        Ok(part)
    });
    let mut total = Partial::new(specs.len());
    for p in parts {
        total.absorb(p?);
    }
    let n = total.count as f64;
    let variances = total
        .sums
        .iter()
        .zip(&total.squares)
        .map(|(sums, sq)| {
            let mean_sq: f64 = sums.values().flatten().map(|s| (s / n) * (s / n)).sum();
            (sq - n * mean_sq) / (n - 1.0)
        })
        .collect();
    Ok(SampledMoments {
        samples: total.count,
        variances,
    })
}

/// Standard error of a sampled variance computed from `n` samples.
pub fn variance_standard_error(moments: &GradientMoments, n: usize) -> f64 {
    ((moments.fourth_central - moments.variance * moments.variance).max(0.0) / n as f64).sqrt()
}

/// Monte-Carlo cross-check of all estimator kinds for agent 0 on one
/// instance with a stochastic learned channel.
pub fn verify_monte_carlo(
    instance: &Instance,
    samples: usize,
    seed: u64,
    sigmas: f64,
    params: &HyperParams,
    exec: Execution,
) -> Result<VerificationReport> {
    let oracle = Oracle::new(&instance.model, &instance.policies)?;
    let channel = random_learned_channel(instance.model.num_agents, 2, 3, seed ^ 0x6d63)?;
    let agent = 0;
    let joint = oracle.q_joint();
    let local = oracle.q_local(agent)?;
    let comm = oracle.q_comm(&channel, agent)?;
    let src = MessageSource::Channel(&channel);
    let specs: Vec<EstimatorSpec> = EstimatorKind::ALL
        .iter()
        .map(|kind| match kind {
            EstimatorKind::Ctde => EstimatorSpec::plain(agent, CriticRef::Joint(&joint), MessageSource::None),
            EstimatorKind::Dtde => EstimatorSpec::plain(agent, CriticRef::Local(&local), MessageSource::None),
            EstimatorKind::Dccda => EstimatorSpec::plain(agent, CriticRef::Comm(&comm), src),
            EstimatorKind::DccdaOb => EstimatorSpec::plain(agent, CriticRef::Comm(&comm), src).with_baseline(params.eta, 1.0),
            EstimatorKind::DccdaObKl => EstimatorSpec::plain(agent, CriticRef::Comm(&comm), src)
                .with_baseline(params.eta, 1.0)
                .with_kl(params.alpha, params.beta),
        })
        .collect();
    let sampled = sampled_variances(instance, &specs, Some(&channel), samples, seed, exec)?;
    let mut report = VerificationReport::new("monte-carlo-variance", sigmas);
    report.instances = 1;
    for ((kind, spec), v_hat) in EstimatorKind::ALL.iter().zip(&specs).zip(&sampled.variances) {
        let exact = oracle.moments(spec)?;
        let se = variance_standard_error(&exact, sampled.samples);
        let z = if se > 0.0 {
            (v_hat - exact.variance).abs() / se
        } else if (v_hat - exact.variance).abs() < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        report.record(z, || {
            format!(
                "{}: {kind}: sampled {v_hat:e}, exact {:e}, standard error {se:e}",
                instance.label, exact.variance
            )
        });
        report.detail_max(&format!("max_z_{kind}"), z);
    }
    Ok(report)
}
