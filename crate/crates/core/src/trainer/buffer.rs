//! Per-agent on-policy experience storage.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Joint context of the step after a record.
#[derive(Debug, Clone, PartialEq)]
pub struct NextContext {
    pub joint_keys: Vec<u64>,
    /// Messages the agent receives at the next step.
    pub messages: Vec<u64>,
}

/// One step seen by one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub episode: usize,
    pub step: usize,
    pub observation: u32,
    pub history_key: u64,
    pub joint_keys: Vec<u64>,
    /// Messages received from the other agents, in sender order.
    pub messages: Vec<u64>,
    /// Message this agent sent, when a channel was active.
    pub sent: Option<u64>,
    pub action: u32,
    pub joint_actions: Vec<u32>,
    pub reward: f64,
    pub next_observation: Option<u32>,
    /// `None` on the last step of an episode.
    pub next: Option<NextContext>,
    /// Critic value of the taken action at insertion time.
    pub q: f64,
    /// Critic values of every own action in the same context.
    pub q_all: Vec<f64>,
    /// Action distribution the action was drawn from.
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    agents: Vec<VecDeque<Record>>,
}

impl ReplayBuffer {
    pub fn new(num_agents: usize, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Argument("buffer capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            agents: vec![VecDeque::new(); num_agents],
        })
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    /// Appends a record, dropping the oldest one when full.
    pub fn insert(&mut self, agent: usize, record: Record) -> Result<()> {
        let n = self.agents.len();
        let queue = self
            .agents
            .get_mut(agent)
            .ok_or_else(|| Error::Argument(format!("agent {agent} out of range for {n} agents")))?;
        let a = record.action as usize;
        if a >= record.probs.len() || record.q_all.len() != record.probs.len() {
            return Err(Error::Argument(format!("record action {a} does not fit its distribution")));
        }
        let mass: f64 = record.probs.iter().sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!("record distribution has mass {mass}")));
        }
        if record.q.to_bits() != record.q_all[a].to_bits() {
            return Err(Error::Argument("record value disagrees with its action values".into()));
        }
        if queue.len() == self.capacity {
            queue.pop_front();
        }
        queue.push_back(record);
        Ok(())
    }

    pub fn records(&self, agent: usize) -> &VecDeque<Record> {
        &self.agents[agent]
    }

    pub fn len(&self, agent: usize) -> usize {
        self.agents[agent].len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.iter().all(VecDeque::is_empty)
    }

    pub fn clear(&mut self) {
        self.agents.iter_mut().for_each(VecDeque::clear);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: usize) -> Record {
        Record {
            episode: 0,
            step,
            observation: 0,
            history_key: step as u64,
            joint_keys: vec![step as u64],
            messages: vec![],
            sent: None,
            action: 1,
            joint_actions: vec![1],
            reward: 0.0,
            next_observation: None,
            next: None,
            q: 2.0,
            q_all: vec![1.0, 2.0],
            probs: vec![0.25, 0.75],
        }
    }

    #[test]
    fn capacity_evicts_oldest() {
        let mut b = ReplayBuffer::new(1, 2).unwrap();
        for s in 0..3 {
            b.insert(0, record(s)).unwrap();
        }
        let steps: Vec<usize> = b.records(0).iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![1, 2]);
        b.clear();
        assert!(b.is_empty());
    }

    #[test]
    fn inconsistent_records_are_rejected() {
        let mut b = ReplayBuffer::new(1, 4).unwrap();
        let mut r = record(0);
        r.q = 1.0;
        assert!(b.insert(0, r).is_err());
        let mut r = record(0);
        r.probs = vec![0.5, 0.6];
        assert!(b.insert(0, r).is_err());
        assert!(b.insert(1, record(0)).is_err());
        assert!(ReplayBuffer::new(1, 0).is_err());
    }
}
