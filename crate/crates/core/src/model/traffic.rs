//! A small traffic junction: cars on four one-way lanes crossing one shared
//! cell, each car steered by one agent choosing brake or gas.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::env::{Environment, Step};

pub const BRAKE: u32 = 0;
pub const GAS: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficConfig {
    /// Cells on each side of the junction.
    pub arm: usize,
    pub num_agents: usize,
    /// Per-step probability that a waiting car enters its lane.
    pub spawn_prob: f64,
    pub horizon: usize,
    #[serde(default = "default_window")]
    pub history_window: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_collision_penalty")]
    pub collision_penalty: f64,
    #[serde(default = "default_time_penalty")]
    pub time_penalty: f64,
}

fn default_window() -> usize {
    2
}
fn default_gamma() -> f64 {
    0.99
}
fn default_collision_penalty() -> f64 {
    10.0
}
fn default_time_penalty() -> f64 {
    0.01
}

impl TrafficConfig {
    pub fn new(arm: usize, num_agents: usize, spawn_prob: f64, horizon: usize) -> Self {
        Self {
            arm,
            num_agents,
            spawn_prob,
            horizon,
            history_window: default_window(),
            gamma: default_gamma(),
            collision_penalty: default_collision_penalty(),
            time_penalty: default_time_penalty(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Car {
    Waiting,
    /// Position along the lane and steps since entering.
    Active { pos: usize, age: u32 },
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficState {
    pub cars: Vec<Car>,
    pub collided: bool,
}

/// Lanes N->S, S->N, E->W, W->E; agent `k` drives on lane `k mod 4`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficJunction {
    config: TrafficConfig,
}

pub fn traffic_junction_lite(config: TrafficConfig) -> Result<TrafficJunction> {
    TrafficJunction::new(config)
}

impl TrafficJunction {
    pub fn new(config: TrafficConfig) -> Result<Self> {
        let c = &config;
        if c.num_agents == 0 {
            return Err(Error::Config("traffic junction needs at least one car".into()));
        }
        if c.arm == 0 || c.num_agents > 4 * c.arm {
            return Err(Error::Config(format!(
                "arm length {} cannot hold {} cars",
                c.arm, c.num_agents
            )));
        }
        if !(0.0..=1.0).contains(&c.spawn_prob) || c.horizon == 0 {
            return Err(Error::Config("spawn_prob must be in [0, 1] and horizon positive".into()));
        }
        if !(c.gamma > 0.0 && c.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma out of range: {}", c.gamma)));
        }
        Ok(Self { config })
    }

    pub fn config(&self) -> &TrafficConfig {
        &self.config
    }

    fn lane_len(&self) -> usize {
        2 * self.config.arm + 1
    }

    fn lane(&self, agent: usize) -> usize {
        agent % 4
    }

    /// Shared cells: the junction is one cell for every lane; others are
    /// private to their lane.
    fn cell(&self, agent: usize, pos: usize) -> usize {
        if pos == self.config.arm {
            usize::MAX
        } else {
            self.lane(agent) * self.lane_len() + pos
        }
    }

    fn observe(&self, state: &TrafficState) -> Vec<u32> {
        let arm = self.config.arm;
        let n = self.config.num_agents;
        (0..n)
            .map(|i| {
                let code = match state.cars[i] {
                    Car::Waiting => 0,
                    Car::Active { pos, .. } => pos + 1,
                    Car::Done => self.lane_len() + 1,
                };
                let danger = (0..n).any(|j| {
                    j != i
                        && self.lane(j) != self.lane(i)
                        && matches!(state.cars[j], Car::Active { pos, .. } if pos == arm || pos + 1 == arm)
                });
                (2 * code + danger as usize) as u32
            })
            .collect()
    }
}

impl Environment for TrafficJunction {
    type State = TrafficState;

    fn num_agents(&self) -> usize {
        self.config.num_agents
    }

    fn num_actions(&self, _agent: usize) -> usize {
        2
    }

    fn num_observations(&self, _agent: usize) -> usize {
        2 * (self.lane_len() + 2)
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn gamma(&self) -> f64 {
        self.config.gamma
    }

    fn history_window(&self) -> Option<usize> {
        Some(self.config.history_window)
    }

    fn reset<R: Rng + ?Sized>(&self, _rng: &mut R) -> (TrafficState, Vec<u32>) {
        let state = TrafficState {
            cars: vec![Car::Waiting; self.config.num_agents],
            collided: false,
        };
        let obs = self.observe(&state);
        (state, obs)
    }

    fn step<R: Rng + ?Sized>(&self, state: &TrafficState, actions: &[u32], rng: &mut R) -> Step<TrafficState> {
        let len = self.lane_len();
        let mut cars = state.cars.clone();
        for (car, &a) in cars.iter_mut().zip(actions) {
            *car = match *car {
                // Draw for every waiting car so the RNG stream does not depend
                // on which cars are already on the road.
                Car::Waiting => {
                    if rng.random::<f64>() < self.config.spawn_prob {
                        Car::Active { pos: 0, age: 0 }
                    } else {
                        Car::Waiting
                    }
                }
                Car::Active { pos, age } if a == GAS => {
                    if pos + 1 == len {
                        Car::Done
                    } else {
                        Car::Active { pos: pos + 1, age: age + 1 }
                    }
                }
                Car::Active { pos, age } => Car::Active { pos, age: age + 1 },
                Car::Done => Car::Done,
            };
        }
        let cells: Vec<Option<usize>> = cars
            .iter()
            .enumerate()
            .map(|(i, c)| match *c {
                Car::Active { pos, .. } => Some(self.cell(i, pos)),
                _ => None,
            })
            .collect();
        let colliding = cells
            .iter()
            .enumerate()
            .filter(|&(i, c)| c.is_some() && cells.iter().enumerate().any(|(j, d)| j != i && d == c))
            .count();
        let waiting_time: u32 = cars
            .iter()
            .map(|c| match *c {
                Car::Active { age, .. } => age,
                _ => 0,
            })
            .sum();
        let reward = -self.config.collision_penalty * colliding as f64
            - self.config.time_penalty * waiting_time as f64;
        let done = cars.iter().all(|c| *c == Car::Done);
        let next = TrafficState {
            cars,
            collided: state.collided || colliding > 0,
        };
        let observations = self.observe(&next);
        Step {
            state: next,
            observations,
            reward,
            done,
        }
    }

    fn success(&self, final_state: &TrafficState, _total_reward: f64) -> bool {
        !final_state.collided
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(env: &TrafficJunction, actions: &dyn Fn(usize) -> u32, seed: u64) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut s, _) = env.reset(&mut rng);
        for _ in 0..env.horizon() {
            let a: Vec<u32> = (0..env.num_agents()).map(actions).collect();
            let out = env.step(&s, &a, &mut rng);
            s = out.state;
            if out.done {
                break;
            }
        }
        env.success(&s, 0.0)
    }

    #[test]
    fn geometry_checks() {
        assert!(TrafficJunction::new(TrafficConfig::new(1, 5, 0.5, 10)).is_err());
        assert!(TrafficJunction::new(TrafficConfig::new(0, 1, 0.5, 10)).is_err());
        assert!(TrafficJunction::new(TrafficConfig::new(1, 0, 0.5, 10)).is_err());
        assert!(TrafficJunction::new(TrafficConfig::new(1, 4, 0.5, 10)).is_ok());
    }

    #[test]
    fn crossing_cars_that_always_advance_collide() {
        let env = TrafficJunction::new(TrafficConfig::new(2, 2, 1.0, 10)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (s, _) = env.reset(&mut rng);
        // t0: both enter at pos 0; t1: pos 1; t2: both on the junction.
        let s = env.step(&s, &[GAS, GAS], &mut rng).state;
        let s = env.step(&s, &[GAS, GAS], &mut rng).state;
        assert!(!s.collided);
        let out = env.step(&s, &[GAS, GAS], &mut rng);
        assert!(out.state.collided);
        assert!(out.reward <= -20.0);
        assert!(!run(&env, &|_| GAS, 3));
    }

    #[test]
    fn single_car_always_succeeds() {
        let env = TrafficJunction::new(TrafficConfig::new(2, 1, 0.7, 12)).unwrap();
        for seed in 0..20 {
            assert!(run(&env, &|_| GAS, seed));
        }
    }

    #[test]
    fn yielding_avoids_collision() {
        let env = TrafficJunction::new(TrafficConfig::new(2, 2, 1.0, 12)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut s, _) = env.reset(&mut rng);
        for t in 0..12 {
            let a1 = if t < 4 { BRAKE } else { GAS };
            let out = env.step(&s, &[GAS, a1], &mut rng);
            s = out.state;
        }
        assert!(!s.collided);
        assert!(s.cars.iter().all(|c| *c == Car::Done));
    }

    #[test]
    fn observations_are_in_range() {
        let env = TrafficJunction::new(TrafficConfig::new(2, 4, 0.5, 15)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut s, obs) = env.reset(&mut rng);
        assert!(obs.iter().all(|&o| (o as usize) < env.num_observations(0)));
        for _ in 0..15 {
            let a: Vec<u32> = (0..4).map(|_| rng.random_range(0..2)).collect();
            let out = env.step(&s, &a, &mut rng);
            assert!(out.observations.iter().all(|&o| (o as usize) < env.num_observations(0)));
            s = out.state;
        }
    }
}
