//! Tabular Q-functions for centralized, local and communicating critics.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use crate::error::{Error, Result};

/// Key of a centralized critic: per-agent history keys and joint action.
pub type JointKey = (Vec<u64>, Vec<u32>);
/// Key of a local critic: own history key and own action.
pub type LocalKey = (u64, u32);
/// Key of a communicating critic: own history, own action, received messages.
pub type CommKey = (u64, u32, Vec<u64>);

/// Textual form of a table key used in JSON checkpoints.
pub trait TableKey: Clone + Eq + Hash + Ord {
    fn render(&self) -> String;
    fn parse(text: &str) -> Result<Self>;
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn split<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| p.parse().map_err(|_| Error::Argument(format!("bad key component {p:?}"))))
        .collect()
}

fn parts(text: &str, n: usize) -> Result<Vec<&str>> {
    let p: Vec<&str> = text.split('|').collect();
    if p.len() == n {
        Ok(p)
    } else {
        Err(Error::Argument(format!("malformed key {text:?}")))
    }
}

impl TableKey for JointKey {
    fn render(&self) -> String {
        format!("{}|{}", join(&self.0), join(&self.1))
    }
    fn parse(text: &str) -> Result<Self> {
        let p = parts(text, 2)?;
        Ok((split(p[0])?, split(p[1])?))
    }
}

impl TableKey for LocalKey {
    fn render(&self) -> String {
        format!("{}|{}", self.0, self.1)
    }
    fn parse(text: &str) -> Result<Self> {
        let p = parts(text, 2)?;
        let bad = |_| Error::Argument(format!("malformed key {text:?}"));
        Ok((p[0].parse().map_err(bad)?, p[1].parse().map_err(bad)?))
    }
}

impl TableKey for CommKey {
    fn render(&self) -> String {
        format!("{}|{}|{}", self.0, self.1, join(&self.2))
    }
    fn parse(text: &str) -> Result<Self> {
        let p = parts(text, 3)?;
        let bad = |_| Error::Argument(format!("malformed key {text:?}"));
        Ok((p[0].parse().map_err(bad)?, p[1].parse().map_err(bad)?, split(p[2])?))
    }
}

/// Zero-initialized table of Q-values.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable<K: TableKey> {
    values: HashMap<K, f64>,
}

pub type CentralizedQ = QTable<JointKey>;
pub type LocalQ = QTable<LocalKey>;
pub type CommQ = QTable<CommKey>;

impl<K: TableKey> Default for QTable<K> {
    fn default() -> Self {
        Self {
            values: HashMap::new(),
        }
    }
}

impl<K: TableKey> QTable<K> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &K) -> f64 {
        self.values.get(key).copied().unwrap_or(0.0)
    }

    pub fn contains(&self, key: &K) -> bool {
        self.values.contains_key(key)
    }

    pub fn set(&mut self, key: K, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("Q value for {}", key.render())));
        }
        self.values.insert(key, value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Entries in key order.
    pub fn sorted(&self) -> Vec<(&K, f64)> {
        let mut v: Vec<(&K, f64)> = self.values.iter().map(|(k, &q)| (k, q)).collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }

    /// Largest absolute difference over the union of both key sets.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .keys()
            .chain(other.values.keys())
            .map(|k| (self.get(k) - other.get(k)).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        let map: BTreeMap<String, f64> = self.values.iter().map(|(k, &v)| (k.render(), v)).collect();
        Ok(serde_json::to_string(&map)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, f64> = serde_json::from_str(text)?;
        let mut table = Self::new();
        for (k, v) in map {
            table.set(K::parse(&k)?, v)?;
        }
        Ok(table)
    }
}

/// One observed transition for a critic cell.
///
/// `next` lists the successor keys weighted by the acting policy; it is empty
/// for terminal transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<K> {
    pub key: K,
    pub reward: f64,
    pub next: Vec<(K, f64)>,
}

impl<K: TableKey> Transition<K> {
    pub fn target(&self, q: &QTable<K>, gamma: f64) -> Result<f64> {
        if !self.reward.is_finite() {
            return Err(Error::NonFinite("transition reward".into()));
        }
        let next: f64 = self.next.iter().map(|(k, w)| w * q.get(k)).sum();
        Ok(self.reward + gamma * next)
    }
}

/// Expected-SARSA update of one cell.
pub fn td_update<K: TableKey>(q: &mut QTable<K>, tr: &Transition<K>, lr: f64, gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lr) {
        return Err(Error::Argument(format!("critic learning rate {lr} outside [0, 1]")));
    }
    let target = tr.target(q, gamma)?;
    if lr == 0.0 {
        return Ok(());
    }
    let old = q.get(&tr.key);
    q.set(tr.key.clone(), old + lr * (target - old))
}

/// Probability-weighted transition used by expected (full-width) sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTransition<K> {
    pub prob: f64,
    pub transition: Transition<K>,
}

/// One synchronous sweep of expected TD updates: each cell moves toward the
/// probability-weighted mean target of all transitions starting there, with
/// every target evaluated on the table as it was before the sweep.
pub fn expected_td_sweep<K: TableKey>(
    q: &mut QTable<K>,
    atoms: &[WeightedTransition<K>],
    lr: f64,
    gamma: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&lr) {
        return Err(Error::Argument(format!("critic learning rate {lr} outside [0, 1]")));
    }
    let mut acc: HashMap<&K, (f64, f64)> = HashMap::new();
    for atom in atoms {
        let t = atom.transition.target(q, gamma)?;
        let e = acc.entry(&atom.transition.key).or_insert((0.0, 0.0));
        e.0 += atom.prob * t;
        e.1 += atom.prob;
    }
    let mut updates: Vec<(K, f64)> = acc
        .into_iter()
        .filter(|(_, (_, w))| *w > 0.0)
        .map(|(k, (s, w))| (k.clone(), s / w))
        .collect();
    updates.sort_by(|a, b| a.0.cmp(&b.0));
    for (k, target) in updates {
        let old = q.get(&k);
        q.set(k, old + lr * (target - old))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookups_default_to_zero_and_store() {
        let mut q = CommQ::new();
        assert_eq!(q.get(&(3, 1, vec![2])), 0.0);
        q.set((3, 1, vec![2]), 2.5).unwrap();
        assert_eq!(q.get(&(3, 1, vec![2])), 2.5);
        assert_eq!(q.get(&(3, 1, vec![4])), 0.0);
        assert!(q.set((0, 0, vec![]), f64::INFINITY).is_err());
    }

    #[test]
    fn terminal_update_and_zero_rate() {
        let mut q = LocalQ::new();
        let tr = Transition {
            key: (0, 1),
            reward: 1.0,
            next: vec![],
        };
        td_update(&mut q, &tr, 1.0, 0.9).unwrap();
        assert_eq!(q.get(&(0, 1)), 1.0);
        let before = q.clone();
        td_update(&mut q, &tr, 0.0, 0.9).unwrap();
        assert_eq!(q, before);
        let bad = Transition {
            key: (0, 1),
            reward: f64::NAN,
            next: vec![],
        };
        assert!(td_update(&mut q, &bad, 0.5, 0.9).is_err());
    }

    #[test]
    fn update_touches_only_its_cell() {
        let mut q = LocalQ::new();
        q.set((1, 0), 4.0).unwrap();
        let tr = Transition {
            key: (0, 0),
            reward: 0.0,
            next: vec![((1, 0), 1.0)],
        };
        td_update(&mut q, &tr, 0.5, 1.0).unwrap();
        assert_eq!(q.get(&(0, 0)), 2.0);
        assert_eq!(q.get(&(1, 0)), 4.0);
    }

    #[test]
    fn json_round_trips() {
        let mut c = CentralizedQ::new();
        c.set((vec![1, 2], vec![0, 1]), -0.125).unwrap();
        c.set((vec![0, 0], vec![1, 1]), 1.0 / 3.0).unwrap();
        assert_eq!(CentralizedQ::from_json(&c.to_json().unwrap()).unwrap(), c);
        let mut m = CommQ::new();
        m.set((7, 0, vec![]), 0.1).unwrap();
        m.set((7, 0, vec![3, 4]), 0.2).unwrap();
        assert_eq!(CommQ::from_json(&m.to_json().unwrap()).unwrap(), m);
    }
}
