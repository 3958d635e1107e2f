//! Observation-action histories and their collision-free integer keys.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Alternating sequence `(o_0, a_0, o_1, ..., o_t)` seen by one agent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentHistory {
    entries: Vec<u32>,
}

impl AgentHistory {
    pub fn new(first_observation: u32) -> Self {
        Self {
            entries: vec![first_observation],
        }
    }

    /// Builds a history from raw entries; they must start and end with an
    /// observation.
    pub fn from_entries(entries: Vec<u32>) -> Result<Self> {
        if entries.is_empty() || entries.len() % 2 == 0 {
            return Err(Error::Encoding(format!(
                "history must have odd, non-zero length (got {})",
                entries.len()
            )));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[u32] {
        &self.entries
    }

    /// Number of actions taken so far.
    pub fn steps(&self) -> usize {
        self.entries.len() / 2
    }

    pub fn last_observation(&self) -> u32 {
        *self.entries.last().expect("history is never empty")
    }

    pub fn push(&mut self, action: u32, observation: u32) {
        self.entries.push(action);
        self.entries.push(observation);
    }

    /// Keeps only the most recent `window` steps.
    pub fn truncate_to(&mut self, window: usize) {
        let keep = 2 * window + 1;
        if self.entries.len() > keep {
            self.entries.drain(..self.entries.len() - keep);
        }
    }

    pub fn extended(&self, action: u32, observation: u32) -> Self {
        let mut next = self.clone();
        next.push(action, observation);
        next
    }
}

/// Histories of all agents at a common time step.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointHistory {
    pub per_agent: Vec<AgentHistory>,
}

impl JointHistory {
    pub fn new(per_agent: Vec<AgentHistory>) -> Result<Self> {
        if let Some(first) = per_agent.first() {
            if per_agent.iter().any(|h| h.steps() != first.steps()) {
                return Err(Error::Argument(
                    "joint history components differ in length".into(),
                ));
            }
        }
        Ok(Self { per_agent })
    }

    pub fn steps(&self) -> usize {
        self.per_agent.first().map_or(0, AgentHistory::steps)
    }
}

/// Bijective map between histories of one agent and `u64` keys.
///
/// Histories are ordered first by number of steps, then lexicographically in
/// mixed radix (observations base `|O|`, actions base `|A|`), so every key
/// below the largest encodable one decodes to exactly one history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryCodec {
    pub num_observations: u32,
    pub num_actions: u32,
}

impl HistoryCodec {
    pub fn new(num_observations: usize, num_actions: usize) -> Result<Self> {
        if num_observations == 0 || num_actions == 0 {
            return Err(Error::Argument("codec sizes must be positive".into()));
        }
        Ok(Self {
            num_observations: num_observations as u32,
            num_actions: num_actions as u32,
        })
    }

    /// Number of distinct histories with exactly `steps` actions.
    fn count(&self, steps: usize) -> Option<u64> {
        let o = self.num_observations as u64;
        let a = self.num_actions as u64;
        let mut n = o;
        for _ in 0..steps {
            n = n.checked_mul(a)?.checked_mul(o)?;
        }
        Some(n)
    }

    fn offset(&self, steps: usize) -> Option<u64> {
        (0..steps).try_fold(0u64, |acc, k| acc.checked_add(self.count(k)?))
    }

    /// Number of histories with at most `max_steps` actions; their keys are
    /// exactly `0..num_keys(max_steps)`.
    pub fn num_keys(&self, max_steps: usize) -> Option<u64> {
        self.offset(max_steps + 1)
    }

    pub fn encode(&self, history: &AgentHistory) -> Result<u64> {
        self.encode_entries(history.entries())
    }

    pub fn encode_entries(&self, entries: &[u32]) -> Result<u64> {
        if entries.is_empty() || entries.len() % 2 == 0 {
            return Err(Error::Encoding("malformed history".into()));
        }
        let mut index: u64 = 0;
        for (pos, &v) in entries.iter().enumerate() {
            let radix = if pos % 2 == 0 {
                self.num_observations
            } else {
                self.num_actions
            };
            if v >= radix {
                return Err(Error::Encoding(format!(
                    "entry {v} at position {pos} out of range {radix}"
                )));
            }
            index = index
                .checked_mul(radix as u64)
                .and_then(|x| x.checked_add(v as u64))
                .ok_or_else(|| Error::Encoding("history key overflow".into()))?;
        }
        let steps = entries.len() / 2;
        self.offset(steps)
            .and_then(|off| off.checked_add(index))
            .ok_or_else(|| Error::Encoding("history key overflow".into()))
    }

    pub fn decode(&self, key: u64) -> Result<AgentHistory> {
        let mut steps = 0usize;
        let mut rest = key;
        loop {
            let n = self
                .count(steps)
                .ok_or_else(|| Error::Encoding(format!("key {key} not decodable")))?;
            if rest < n {
                break;
            }
            rest -= n;
            steps += 1;
        }
        let len = 2 * steps + 1;
        let mut entries = vec![0u32; len];
        for pos in (0..len).rev() {
            let radix = if pos % 2 == 0 {
                self.num_observations
            } else {
                self.num_actions
            } as u64;
            entries[pos] = (rest % radix) as u32;
            rest /= radix;
        }
        AgentHistory::from_entries(entries)
    }
}
