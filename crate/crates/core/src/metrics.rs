//! Training logs, gradient-norm dispersion and seed-level summary statistics.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Formats a float with 17 significant digits so it parses back exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// One training iteration of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub seed: u64,
    pub iteration: usize,
    /// Training episodes completed so far.
    pub episodes: usize,
    /// Environment steps consumed so far, evaluation excluded.
    pub env_steps: u64,
    /// Per-agent L2 norm of the actor gradient.
    pub grad_norms: Vec<f64>,
    /// Success rate when an evaluation ran after this iteration.
    pub eval_rate: Option<f64>,
    pub mean_return: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub kl_loss: f64,
}

impl MetricsRow {
    /// Norm of the concatenated per-agent gradients.
    pub fn joint_grad_norm(&self) -> f64 {
        self.grad_norms.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

const FIXED_COLUMNS: [&str; 9] = [
    "seed",
    "iteration",
    "episodes",
    "env_steps",
    "eval_rate",
    "mean_return",
    "actor_loss",
    "critic_loss",
    "kl_loss",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Appends a row; `(seed, iteration)` must strictly increase and every
    /// row must report the same number of agents.
    pub fn push(&mut self, row: MetricsRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if (row.seed, row.iteration) <= (last.seed, last.iteration) {
                return Err(Error::Argument(format!(
                    "row ({}, {}) does not follow ({}, {})",
                    row.seed, row.iteration, last.seed, last.iteration
                )));
            }
            if row.grad_norms.len() != last.grad_norms.len() {
                return Err(Error::Argument("agent count changed between rows".into()));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    /// Rate of the last evaluation.
    pub fn final_eval_rate(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.eval_rate)
    }

    /// Mean joint gradient norm over iterations in `window`.
    pub fn mean_grad_norm(&self, window: Window) -> Option<f64> {
        let norms: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| window.contains(r.iteration))
            .map(MetricsRow::joint_grad_norm)
            .collect();
        if norms.is_empty() {
            None
        } else {
            Some(norms.iter().sum::<f64>() / norms.len() as f64)
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let agents = self.rows.first().map_or(0, |r| r.grad_norms.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend((0..agents).map(|i| format!("grad_norm_{i}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.seed.to_string(),
                r.iteration.to_string(),
                r.episodes.to_string(),
                r.env_steps.to_string(),
                r.eval_rate.map(fmt_f64).unwrap_or_default(),
                fmt_f64(r.mean_return),
                fmt_f64(r.actor_loss),
                fmt_f64(r.critic_loss),
                fmt_f64(r.kl_loss),
            ];
            rec.extend(r.grad_norms.iter().map(|&g| fmt_f64(g)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Encoding(e.to_string()))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header = rd.headers()?.clone();
        if header.len() < FIXED_COLUMNS.len() || FIXED_COLUMNS.iter().zip(header.iter()).any(|(a, b)| *a != b) {
            return Err(Error::Config("unexpected metrics header".into()));
        }
        let mut log = MetricsLog::new();
        for rec in rd.records() {
            let rec = rec?;
            let field = |k: usize| rec.get(k).unwrap_or("");
            let float = |k: usize| -> Result<f64> {
                field(k)
                    .parse()
                    .map_err(|_| Error::Config(format!("bad number {:?} in column {}", field(k), &header[k])))
            };
            let int = |k: usize| -> Result<u64> {
                field(k)
                    .parse()
                    .map_err(|_| Error::Config(format!("bad integer {:?} in column {}", field(k), &header[k])))
            };
            log.push(MetricsRow {
                seed: int(0)?,
                iteration: int(1)? as usize,
                episodes: int(2)? as usize,
                env_steps: int(3)?,
                eval_rate: if field(4).is_empty() { None } else { Some(float(4)?) },
                mean_return: float(5)?,
                actor_loss: float(6)?,
                critic_loss: float(7)?,
                kl_loss: float(8)?,
                grad_norms: (FIXED_COLUMNS.len()..rec.len()).map(float).collect::<Result<_>>()?,
            })?;
        }
        Ok(log)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(File::open(path)?)
    }
}

/// Half-open iteration range `[from, to)`; `to = None` runs to the end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Window {
    pub from: usize,
    pub to: Option<usize>,
}

impl Window {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn contains(&self, iteration: usize) -> bool {
        iteration >= self.from && self.to.is_none_or(|t| iteration < t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdConvention {
    /// `n - 1` denominator.
    #[default]
    Sample,
    Population,
}

pub fn standard_deviation(values: &[f64], convention: StdConvention) -> Result<f64> {
    let n = values.len();
    let denom = match convention {
        StdConvention::Sample if n >= 2 => (n - 1) as f64,
        StdConvention::Population if n >= 1 => n as f64,
        _ => return Err(Error::Argument(format!("{n} values are too few for a standard deviation"))),
    };
    let mean = values.iter().sum::<f64>() / n as f64;
    Ok((values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / denom).sqrt())
}

/// Standard deviation across seeds of each seed's mean gradient norm.
pub fn gradient_norm_std(logs: &[MetricsLog], window: Window, convention: StdConvention) -> Result<f64> {
    if logs.len() < 2 {
        return Err(Error::Argument(format!("need at least two seeds, got {}", logs.len())));
    }
    let means = logs
        .iter()
        .enumerate()
        .map(|(k, log)| {
            log.mean_grad_norm(window)
                .ok_or_else(|| Error::Argument(format!("seed log {k} has no rows in the window")))
        })
        .collect::<Result<Vec<_>>>()?;
    standard_deviation(&means, convention)
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Argument("median of no values".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("median input".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

/// Percentile bootstrap interval for the median at confidence `level`.
pub fn bootstrap_median_ci(values: &[f64], resamples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::Argument("bootstrap needs resamples > 0 and level in (0, 1)".into()));
    }
    let point = median(values)?;
    if values.len() == 1 {
        return Ok((point, point));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(resamples);
    let mut sample = vec![0.0; values.len()];
    for _ in 0..resamples {
        for s in sample.iter_mut() {
            *s = values[rng.random_range(0..values.len())];
        }
        stats.push(median(&sample)?);
    }
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let lo = ((tail * resamples as f64).floor() as usize).min(resamples - 1);
    let hi = (((1.0 - tail) * resamples as f64).ceil() as usize).saturating_sub(1).min(resamples - 1);
    Ok((stats[lo], stats[hi]))
}

/// Paired one-sided sign test of `a > b`; ties are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// `P(Binomial(wins + losses, 1/2) >= wins)`; 1 when every pair ties.
    pub p_value: f64,
}

pub fn sign_test_greater(a: &[f64], b: &[f64]) -> Result<SignTest> {
    if a.len() != b.len() {
        return Err(Error::Argument("sign test needs paired samples".into()));
    }
    let wins = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let losses = a.iter().zip(b).filter(|(x, y)| x < y).count();
    let ties = a.len() - wins - losses;
    let n = wins + losses;
    let mut p = 0.0;
    let mut binom = 1.0;
    for k in 0..=n {
        if k > 0 {
            binom = binom * (n - k + 1) as f64 / k as f64;
        }
        if k >= wins {
            p += binom;
        }
    }
    let p_value = if n == 0 { 1.0 } else { p / 2f64.powi(n as i32) };
    Ok(SignTest { wins, losses, ties, p_value })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, iteration: usize, norms: Vec<f64>, eval: Option<f64>) -> MetricsRow {
        MetricsRow {
            seed,
            iteration,
            episodes: iteration * 4,
            env_steps: iteration as u64 * 8,
            grad_norms: norms,
            eval_rate: eval,
            mean_return: 0.1 + iteration as f64 / 3.0,
            actor_loss: -1.0 / 7.0,
            critic_loss: 1e-300,
            kl_loss: 0.0,
        }
    }

    fn log_with_norm(seed: u64, norm: f64) -> MetricsLog {
        let mut log = MetricsLog::new();
        for it in 0..3 {
            log.push(row(seed, it, vec![norm], None)).unwrap();
        }
        log
    }

    #[test]
    fn gradient_norm_std_examples() {
        let same = [log_with_norm(0, 2.0), log_with_norm(1, 2.0)];
        assert_eq!(gradient_norm_std(&same, Window::full(), StdConvention::Sample).unwrap(), 0.0);
        let two = [log_with_norm(0, 1.0), log_with_norm(1, 3.0)];
        let s = gradient_norm_std(&two, Window::full(), StdConvention::Sample).unwrap();
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        let scaled = [log_with_norm(0, 0.01), log_with_norm(1, 0.03)];
        let t = gradient_norm_std(&scaled, Window::full(), StdConvention::Sample).unwrap();
        assert!((t - 0.01 * s).abs() < 1e-15);
        assert!(gradient_norm_std(&two[..1], Window::full(), StdConvention::Sample).is_err());
        let pop = gradient_norm_std(&two, Window::full(), StdConvention::Population).unwrap();
        assert!((pop - 1.0).abs() < 1e-15);
    }

    #[test]
    fn window_selects_iterations() {
        let mut log = MetricsLog::new();
        log.push(row(0, 0, vec![10.0], None)).unwrap();
        log.push(row(0, 1, vec![3.0], None)).unwrap();
        log.push(row(0, 2, vec![5.0], None)).unwrap();
        assert_eq!(log.mean_grad_norm(Window { from: 1, to: None }), Some(4.0));
        assert_eq!(log.mean_grad_norm(Window { from: 1, to: Some(2) }), Some(3.0));
        assert_eq!(log.mean_grad_norm(Window { from: 5, to: None }), None);
    }

    #[test]
    fn rows_must_increase() {
        let mut log = MetricsLog::new();
        log.push(row(0, 1, vec![1.0], None)).unwrap();
        assert!(log.push(row(0, 1, vec![1.0], None)).is_err());
        assert!(log.push(row(0, 2, vec![1.0, 2.0], None)).is_err());
        log.push(row(1, 0, vec![1.0], None)).unwrap();
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut log = MetricsLog::new();
        log.push(row(3, 0, vec![0.1, std::f64::consts::PI], None)).unwrap();
        log.push(row(3, 1, vec![1e-17, 2.0 / 3.0], Some(0.59375))).unwrap();
        let text = log.to_csv_string().unwrap();
        assert!(text.starts_with("seed,iteration,episodes,env_steps,eval_rate,"));
        let back = MetricsLog::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.to_csv_string().unwrap(), text);
        assert_eq!(back.final_eval_rate(), Some(0.59375));
    }

    #[test]
    fn bad_csv_is_rejected() {
        assert!(MetricsLog::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[0.2, 0.4, 0.6]).unwrap(), 0.4);
        assert_eq!(median(&[0.6, 0.2]).unwrap(), 0.4);
        assert!(median(&[]).is_err());
    }

    #[test]
    fn bootstrap_is_deterministic_and_brackets_median() {
        assert_eq!(bootstrap_median_ci(&[0.7], 100, 0.95, 1).unwrap(), (0.7, 0.7));
        let v = [0.1, 0.5, 0.3, 0.9, 0.4, 0.8];
        let a = bootstrap_median_ci(&v, BOOTSTRAP_RESAMPLES, 0.95, 5).unwrap();
        let b = bootstrap_median_ci(&v, BOOTSTRAP_RESAMPLES, 0.95, 5).unwrap();
        assert_eq!(a, b);
        let m = median(&v).unwrap();
        assert!(a.0 <= m && m <= a.1);
    }

    #[test]
    fn sign_test_counts() {
        let t = sign_test_greater(&[1.0; 8], &[0.0; 8]).unwrap();
        assert_eq!((t.wins, t.losses, t.ties), (8, 0, 0));
        assert!((t.p_value - 1.0 / 256.0).abs() < 1e-15);
        let t = sign_test_greater(&[1.0, 0.0, 0.5], &[0.0, 1.0, 0.5]).unwrap();
        assert_eq!((t.wins, t.losses, t.ties), (1, 1, 1));
        assert!((t.p_value - 0.75).abs() < 1e-15);
        assert_eq!(sign_test_greater(&[0.5], &[0.5]).unwrap().p_value, 1.0);
    }
}
