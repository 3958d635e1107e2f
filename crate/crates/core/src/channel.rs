//! Message functions, broadcast, the perfect-decoder channel, and the
//! binary-reward noise model.

use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::env::sample_index;
use crate::model::PROB_TOL;
use crate::policy::softmax;

/// How rows absent from a [`MessageFunction`] table are treated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RowInit {
    /// Missing rows are an error.
    Strict,
    Uniform,
    /// Softmax of logits drawn uniformly from `[-scale, scale]`, seeded by
    /// `(seed, history, action)`.
    Random { seed: u64, scale: f64 },
}

/// Stochastic map `p(m | h_i, a_i)` over a finite alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageFunction {
    alphabet: usize,
    num_actions: usize,
    init: RowInit,
    rows: BTreeMap<u64, Vec<Vec<f64>>>,
}

fn mix(seed: u64, key: u64, action: u32) -> u64 {
    // splitmix64 finalizer over the combined inputs
    let mut z = seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((action as u64) << 32 | 0x5bd1);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl MessageFunction {
    pub fn new(alphabet: usize, num_actions: usize, init: RowInit) -> Result<Self> {
        if alphabet == 0 || num_actions == 0 {
            return Err(Error::Argument("alphabet and action count must be positive".into()));
        }
        Ok(Self {
            alphabet,
            num_actions,
            init,
            rows: BTreeMap::new(),
        })
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    fn default_row(&self, key: u64, action: u32) -> Result<Vec<f64>> {
        match self.init {
            RowInit::Strict => Err(Error::Argument(format!(
                "no message row for history {key}, action {action}"
            ))),
            RowInit::Uniform => Ok(vec![1.0 / self.alphabet as f64; self.alphabet]),
            RowInit::Random { seed, scale } => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, key, action));
                let z: Vec<f64> = (0..self.alphabet)
                    .map(|_| rng.random_range(-scale..=scale))
                    .collect();
                Ok(softmax(&z))
            }
        }
    }

    pub fn probabilities(&self, key: u64, action: u32) -> Result<Cow<'_, [f64]>> {
        if action as usize >= self.num_actions {
            return Err(Error::Argument(format!("action {action} out of range")));
        }
        match self.rows.get(&key) {
            Some(rows) => Ok(Cow::Borrowed(&rows[action as usize])),
            None => self.default_row(key, action).map(Cow::Owned),
        }
    }

    pub fn set_row(&mut self, key: u64, action: u32, probs: Vec<f64>) -> Result<()> {
        if probs.len() != self.alphabet || action as usize >= self.num_actions {
            return Err(Error::Argument("message row shape mismatch".into()));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > PROB_TOL {
            return Err(Error::Argument("message row is not a distribution".into()));
        }
        self.materialize(key)?;
        self.rows.get_mut(&key).expect("materialized")[action as usize] = probs;
        Ok(())
    }

    fn materialize(&mut self, key: u64) -> Result<()> {
        if !self.rows.contains_key(&key) {
            let rows = match self.init {
                RowInit::Strict => vec![vec![1.0 / self.alphabet as f64; self.alphabet]; self.num_actions],
                _ => (0..self.num_actions as u32)
                    .map(|a| self.default_row(key, a))
                    .collect::<Result<_>>()?,
            };
            self.rows.insert(key, rows);
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, key: u64, action: u32, rng: &mut R) -> Result<u64> {
        Ok(sample_index(&self.probabilities(key, action)?, rng) as u64)
    }

    /// Score-function step on the log-probabilities of one row:
    /// `z += lr * weight * (e_m - p)`, followed by renormalization.
    pub fn reinforce(&mut self, key: u64, action: u32, message: u64, weight: f64, lr: f64) -> Result<()> {
        if !weight.is_finite() {
            return Err(Error::NonFinite("message update weight".into()));
        }
        if message as usize >= self.alphabet {
            return Err(Error::Argument(format!("message {message} out of range")));
        }
        if lr == 0.0 || weight == 0.0 {
            return Ok(());
        }
        if !self.rows.contains_key(&key) && self.init == RowInit::Strict {
            return Err(Error::Argument(format!("no message row for history {key}")));
        }
        self.materialize(key)?;
        let row = &mut self.rows.get_mut(&key).expect("materialized")[action as usize];
        let z: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let indicator = if k as u64 == message { 1.0 } else { 0.0 };
                p.max(f64::MIN_POSITIVE).ln() + lr * weight * (indicator - p)
            })
            .collect();
        *row = softmax(&z);
        Ok(())
    }
}

/// Messages an agent receives from every other agent, in sender order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ReceivedMessages(pub Vec<u64>);

/// Drops the receiver's own message from a full broadcast.
pub fn broadcast(messages: &[u64], num_agents: usize, receiver: usize) -> Result<ReceivedMessages> {
    if messages.len() != num_agents || receiver >= num_agents {
        return Err(Error::Argument(format!(
            "expected {num_agents} messages for receiver {receiver}, got {}",
            messages.len()
        )));
    }
    Ok(ReceivedMessages(
        messages
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != receiver)
            .map(|(_, &m)| m)
            .collect(),
    ))
}

/// Message code of the perfect decoder: a bijection of `(h_j, a_j)`.
pub fn perfect_code(history_key: u64, action: u32, num_actions: usize) -> u64 {
    history_key * num_actions as u64 + action as u64
}

pub fn decode_perfect(code: u64, num_actions: usize) -> (u64, u32) {
    (code / num_actions as u64, (code % num_actions as u64) as u32)
}

/// Received messages under the perfect decoder for `receiver`.
pub fn perfect_decoder_channel(
    history_keys: &[u64],
    joint_action: &[u32],
    actions_per_agent: &[usize],
    receiver: usize,
) -> Result<ReceivedMessages> {
    let codes: Vec<u64> = history_keys
        .iter()
        .zip(joint_action)
        .zip(actions_per_agent)
        .map(|((&h, &a), &n)| perfect_code(h, a, n))
        .collect();
    broadcast(&codes, history_keys.len(), receiver)
}

/// Message generation used by critics during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Channel {
    /// Every sender emits message 0.
    Silent,
    /// Messages encode the sender's full `(h_j, a_j)`.
    PerfectDecoder { actions_per_agent: Vec<usize> },
    /// Perfect decoding plus an independent random tag drawn from
    /// `tag_probs`; the message is `perfect_code * tags + tag`.
    Tagged {
        actions_per_agent: Vec<usize>,
        tag_probs: Vec<f64>,
    },
    /// Messages carry only the sender's action; histories are lost.
    ActionOnly,
    /// One learnable message function per sender.
    Learned { functions: Vec<MessageFunction> },
}

impl Channel {
    /// Support and probabilities of sender `j`'s message.
    pub fn message_distribution(&self, sender: usize, key: u64, action: u32) -> Result<Vec<(u64, f64)>> {
        Ok(match self {
            Channel::Silent => vec![(0, 1.0)],
            Channel::PerfectDecoder { actions_per_agent } => {
                let n = *actions_per_agent
                    .get(sender)
                    .ok_or_else(|| Error::Argument(format!("unknown sender {sender}")))?;
                vec![(perfect_code(key, action, n), 1.0)]
            }
            Channel::Tagged {
                actions_per_agent,
                tag_probs,
            } => {
                let n = *actions_per_agent
                    .get(sender)
                    .ok_or_else(|| Error::Argument(format!("unknown sender {sender}")))?;
                let base = perfect_code(key, action, n) * tag_probs.len() as u64;
                tag_probs
                    .iter()
                    .enumerate()
                    .filter(|&(_, &p)| p > 0.0)
                    .map(|(t, &p)| (base + t as u64, p))
                    .collect()
            }
            Channel::ActionOnly => vec![(action as u64, 1.0)],
            Channel::Learned { functions } => {
                let f = functions
                    .get(sender)
                    .ok_or_else(|| Error::Argument(format!("unknown sender {sender}")))?;
                f.probabilities(key, action)?
                    .iter()
                    .enumerate()
                    .filter(|&(_, &p)| p > 0.0)
                    .map(|(m, &p)| (m as u64, p))
                    .collect()
            }
        })
    }

    pub fn sample_message<R: Rng + ?Sized>(&self, sender: usize, key: u64, action: u32, rng: &mut R) -> Result<u64> {
        match self {
            Channel::Learned { functions } => functions
                .get(sender)
                .ok_or_else(|| Error::Argument(format!("unknown sender {sender}")))?
                .sample(key, action, rng),
            Channel::Tagged {
                actions_per_agent,
                tag_probs,
            } => {
                let n = *actions_per_agent
                    .get(sender)
                    .ok_or_else(|| Error::Argument(format!("unknown sender {sender}")))?;
                let tag = sample_index(tag_probs, rng) as u64;
                Ok(perfect_code(key, action, n) * tag_probs.len() as u64 + tag)
            }
            _ => Ok(self.message_distribution(sender, key, action)?[0].0),
        }
    }

    /// Messages of all senders for one step.
    pub fn sample_all<R: Rng + ?Sized>(&self, keys: &[u64], actions: &[u32], rng: &mut R) -> Result<Vec<u64>> {
        keys.iter()
            .zip(actions)
            .enumerate()
            .map(|(j, (&h, &a))| self.sample_message(j, h, a, rng))
            .collect()
    }
}

/// Binary-reward corruption driven by an integer noise variable.
///
/// The reward is flipped whenever `eps < threshold`; the flip rate is
/// `e = P(eps < threshold)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub values: Vec<i64>,
    pub probs: Vec<f64>,
    pub threshold: i64,
    pub r_plus: f64,
    pub r_minus: f64,
}

impl NoiseModel {
    pub fn new(values: Vec<i64>, probs: Vec<f64>, threshold: i64, rewards: (f64, f64)) -> Result<Self> {
        let model = Self {
            values,
            probs,
            threshold,
            r_plus: rewards.0,
            r_minus: rewards.1,
        };
        model.check()?;
        Ok(model)
    }

    /// Uniform noise over `{-k, ..., k}`.
    pub fn uniform(k: u32, threshold: i64, rewards: (f64, f64)) -> Result<Self> {
        let k = k as i64;
        let n = (2 * k + 1) as usize;
        Self::new((-k..=k).collect(), vec![1.0 / n as f64; n], threshold, rewards)
    }

    /// Two-point noise set `{0, 1}` with `P(0) = e` and threshold 1.
    pub fn with_rate(e: f64, rewards: (f64, f64)) -> Result<Self> {
        Self::new(vec![0, 1], vec![e, 1.0 - e], 1, rewards)
    }

    fn check(&self) -> Result<()> {
        if self.values.is_empty() || self.values.len() != self.probs.len() {
            return Err(Error::Model("noise values and probabilities differ in length".into()));
        }
        if self.probs.iter().any(|p| !(*p >= 0.0)) || (self.probs.iter().sum::<f64>() - 1.0).abs() > PROB_TOL {
            return Err(Error::Model("noise distribution must sum to 1".into()));
        }
        if !(self.r_plus > self.r_minus) {
            return Err(Error::Model("reward pair must satisfy r_plus > r_minus".into()));
        }
        let e = self.rate();
        if !(e < 0.5) {
            return Err(Error::Model(format!("noise rate {e} must be below 0.5")));
        }
        Ok(())
    }

    pub fn rate(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.probs)
            .filter(|&(&v, _)| v < self.threshold)
            .map(|(_, p)| p)
            .sum()
    }

    pub fn flips(&self, eps: i64) -> bool {
        eps < self.threshold
    }

    fn check_reward(&self, r: f64) -> Result<bool> {
        if r == self.r_plus {
            Ok(true)
        } else if r == self.r_minus {
            Ok(false)
        } else {
            Err(Error::Argument(format!(
                "reward {r} is neither {} nor {}",
                self.r_plus, self.r_minus
            )))
        }
    }

    pub fn corrupt_reward(&self, r_true: f64, eps: i64) -> Result<f64> {
        let plus = self.check_reward(r_true)?;
        Ok(if self.flips(eps) == plus { self.r_minus } else { self.r_plus })
    }

    pub fn surrogate_reward(&self, r_true: f64, eps: i64) -> Result<f64> {
        let plus = self.check_reward(r_true)?;
        let e = self.rate();
        if !(e < 0.5) {
            return Err(Error::Model(format!("noise rate {e} must be below 0.5")));
        }
        // The observed reward picks the branch; the surrogate inverts the
        // flip in expectation.
        let observed_plus = plus != self.flips(eps);
        let (a, b) = if observed_plus {
            (self.r_plus, self.r_minus)
        } else {
            (self.r_minus, self.r_plus)
        };
        Ok(((1.0 - e) * a - e * b) / (1.0 - 2.0 * e))
    }

    pub fn sample_eps<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        self.values[sample_index(&self.probs, rng)]
    }
}
