//! Experiment orchestration: the verification suite, multi-seed training,
//! temperature sweeps and run-directory reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{Channel, NoiseModel};
use crate::error::{Error, Result};
use crate::estimator::EstimatorKind;
use crate::metrics::{bootstrap_median_ci, gradient_norm_std, median, MetricsLog, StdConvention, Window, BOOTSTRAP_RESAMPLES};
use crate::model::bandit::coordination_bandit;
use crate::model::traffic::{traffic_junction_lite, TrafficConfig};
use crate::model::{make_random_decpomdp, RandomModelConfig, TabularDecPomdp};
use crate::oracle::verify::{self, BatchConfig, VerificationReport};
use crate::par::{map_range, map_slice, Execution};
use crate::trainer::{train, TrainConfig, TrainOutcome};

/// Environment a run trains on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvSpec {
    CoordinationBandit {
        #[serde(default = "half")]
        role_prob: f64,
        #[serde(default = "one")]
        gamma: f64,
    },
    TrafficJunction {
        config: TrafficConfig,
    },
    Tabular {
        model: TabularDecPomdp,
    },
    RandomTabular {
        config: RandomModelConfig,
        seed: u64,
    },
}

fn half() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

impl EnvSpec {
    pub fn train(&self, config: &TrainConfig) -> Result<TrainOutcome> {
        match self {
            EnvSpec::CoordinationBandit { role_prob, gamma } => {
                let model = coordination_bandit(*role_prob, *gamma);
                model.ensure_valid()?;
                train(&model, config)
            }
            EnvSpec::TrafficJunction { config: tc } => train(&traffic_junction_lite(tc.clone())?, config),
            EnvSpec::Tabular { model } => {
                model.ensure_valid()?;
                train(model, config)
            }
            EnvSpec::RandomTabular { config: rc, seed } => train(&make_random_decpomdp(rc, *seed)?, config),
        }
    }
}

/// Settings of the exact verification suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub batch: usize,
    pub seed: u64,
    pub tol: f64,
    /// Channel used by the consistency check; `action-only` is lossy and
    /// is expected to fail.
    pub consistency_channel: ConsistencyChannel,
    pub noise_rates: Vec<f64>,
    pub gradient_checks: usize,
    /// Samples per instance of the Monte-Carlo cross-check; zero skips it.
    pub mc_samples: usize,
    pub mc_instances: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConsistencyChannel {
    Perfect,
    ActionOnly,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            batch: 100,
            seed: 0,
            tol: 1e-9,
            consistency_channel: ConsistencyChannel::Perfect,
            noise_rates: vec![0.1, 0.25, 0.4],
            gradient_checks: 100,
            mc_samples: 0,
            mc_instances: 10,
        }
    }
}

/// Reports of one suite run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub reports: Vec<VerificationReport>,
}

impl SuiteOutcome {
    pub fn all_pass(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }

    pub fn exit_code(&self) -> i32 {
        if self.all_pass() {
            0
        } else {
            1
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28} {:>9} {:>12} {:>12}  result", "claim", "instances", "violation", "tolerance");
        for r in &self.reports {
            let _ = writeln!(
                out,
                "{:<28} {:>9} {:>12.3e} {:>12.3e}  {}",
                r.claim,
                r.instances,
                r.max_violation,
                r.tolerance,
                if r.pass { "pass" } else { "FAIL" }
            );
            if let Some(w) = &r.witness {
                let _ = writeln!(out, "    witness: {w}");
            }
        }
        out
    }
}

pub fn run_verification_suite(config: &VerifyConfig, exec: Execution) -> Result<SuiteOutcome> {
    if !(config.tol > 0.0) {
        return Err(Error::Argument(format!("tolerance must be positive, got {}", config.tol)));
    }
    let batch = verify::random_batch(&BatchConfig::new(config.batch, config.seed), exec)?;
    let mut binary_cfg = BatchConfig::new(config.batch, config.seed.wrapping_add(1));
    binary_cfg.binary_rewards = Some((1.0, 0.0));
    let binary = verify::random_batch(&binary_cfg, exec)?;
    let tol = config.tol;
    let mut reports = Vec::new();

    let consistency = map_slice(exec, &batch, |inst| {
        let channel = match config.consistency_channel {
            ConsistencyChannel::Perfect => inst.perfect_channel(),
            ConsistencyChannel::ActionOnly => Channel::ActionOnly,
        };
        verify::verify_consistency(inst, &channel, tol)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    reports.push(VerificationReport::merge("consistency", tol, consistency));
    reports.push(verify::verify_variance_ordering_batch(&batch, tol, exec)?);

    let noises = config
        .noise_rates
        .iter()
        .map(|&e| NoiseModel::with_rate(e, (1.0, 0.0)))
        .collect::<Result<Vec<_>>>()?;
    reports.push(verify::verify_surrogate_rewards(&noises, 1e-12)?);
    for &e in &config.noise_rates {
        let (mut unbiased, mut ordering) = verify::verify_noisy_critic_batch(&binary, e, tol, tol, exec)?;
        unbiased.claim = format!("noisy-critic-unbiased (e={e})");
        ordering.claim = format!("noisy-variance-ordering (e={e})");
        reports.push(unbiased);
        reports.push(ordering);
    }
    reports.extend(verify::verify_baseline_batch(&batch, tol, 1e-12, exec)?);
    if config.gradient_checks > 0 {
        reports.extend(verify::verify_gradients(config.gradient_checks, config.seed, 1e-6)?);
    }
    if config.mc_samples > 0 {
        let params = crate::estimator::HyperParams::default();
        let count = config.mc_instances.min(batch.len());
        let mc = (0..count)
            .map(|k| verify::verify_monte_carlo(&batch[k], config.mc_samples, config.seed.wrapping_add(k as u64), 4.0, &params, exec))
            .collect::<Result<Vec<_>>>()?;
        reports.push(VerificationReport::merge("monte-carlo-variance", 4.0, mc));
    }
    Ok(SuiteOutcome { reports })
}

/// A training experiment: several methods and seeds, or a temperature
/// sweep for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub env: EnvSpec,
    #[serde(default)]
    pub train: TrainConfig,
    /// Methods to train; empty means `train.estimator` alone.
    #[serde(default)]
    pub methods: Vec<EstimatorKind>,
    /// Seeds `train.seed, train.seed + 1, ...`.
    #[serde(default = "one_seed")]
    pub seeds: usize,
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub betas: Vec<f64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub window: Window,
    #[serde(default)]
    pub std_convention: StdConvention,
}

fn default_name() -> String {
    "run".into()
}

fn one_seed() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.train.validate()
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|k| self.train.seed.wrapping_add(k)).collect()
    }

    fn methods(&self) -> Vec<EstimatorKind> {
        if self.methods.is_empty() {
            vec![self.train.estimator]
        } else {
            self.methods.clone()
        }
    }
}

/// Metadata written next to the per-seed logs of one run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub label: String,
    pub method: EstimatorKind,
    pub alpha: f64,
    pub beta: f64,
    pub seeds: Vec<u64>,
    pub window: Window,
    pub std_convention: StdConvention,
}

pub const RUN_INFO: &str = "run.json";

pub fn seed_file(seed: u64) -> String {
    format!("seed_{seed}.csv")
}

/// Seed-level summary of one run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub method: EstimatorKind,
    pub alpha: f64,
    pub beta: f64,
    pub seeds: Vec<u64>,
    pub final_eval: Vec<f64>,
    pub median_eval: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `None` with a single seed.
    pub grad_norm_std: Option<f64>,
}

pub const REPORT_BOOTSTRAP_SEED: u64 = 0x5eed;

pub fn summarize(info: &RunInfo, logs: &[MetricsLog]) -> Result<RunSummary> {
    let final_eval = logs
        .iter()
        .zip(&info.seeds)
        .map(|(l, s)| {
            l.final_eval_rate()
                .ok_or_else(|| Error::Config(format!("{}: seed {s} has no evaluation", info.label)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (ci_low, ci_high) = bootstrap_median_ci(&final_eval, BOOTSTRAP_RESAMPLES, 0.95, REPORT_BOOTSTRAP_SEED)?;
    let grad_norm_std = if logs.len() >= 2 {
        Some(gradient_norm_std(logs, info.window, info.std_convention)?)
    } else {
        None
    };
    Ok(RunSummary {
        label: info.label.clone(),
        method: info.method,
        alpha: info.alpha,
        beta: info.beta,
        seeds: info.seeds.clone(),
        median_eval: median(&final_eval)?,
        final_eval,
        ci_low,
        ci_high,
        grad_norm_std,
    })
}

fn write_run(dir: &Path, info: &RunInfo, logs: &[MetricsLog]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (log, seed) in logs.iter().zip(&info.seeds) {
        log.save(&dir.join(seed_file(*seed)))?;
    }
    fs::write(dir.join(RUN_INFO), serde_json::to_string_pretty(info)? + "\n")?;
    Ok(())
}

/// Trains every `(cell, seed)` job, in parallel across jobs.
fn run_jobs(env: &EnvSpec, configs: &[TrainConfig], exec: Execution) -> Result<Vec<MetricsLog>> {
    map_slice(exec, configs, |c| env.train(c).map(|o| o.log))
        .into_iter()
        .collect()
}

/// Trains each method on every seed and writes one run directory per
/// method under `output_dir`.
pub fn run_training(config: &ExperimentConfig, exec: Execution) -> Result<Vec<RunSummary>> {
    config.validate()?;
    let seeds = config.seed_list();
    let methods = config.methods();
    let jobs: Vec<TrainConfig> = methods
        .iter()
        .flat_map(|&m| {
            seeds.iter().map(move |&s| TrainConfig {
                estimator: m,
                seed: s,
                ..config.train.clone()
            })
        })
        .collect();
    let logs = run_jobs(&config.env, &jobs, exec)?;
    let mut summaries = Vec::new();
    for (k, &method) in methods.iter().enumerate() {
        let chunk = &logs[k * seeds.len()..(k + 1) * seeds.len()];
        let info = RunInfo {
            label: format!("{}/{}", config.name, method),
            method,
            alpha: config.train.params.alpha,
            beta: config.train.params.beta,
            seeds: seeds.clone(),
            window: config.window,
            std_convention: config.std_convention,
        };
        write_run(&config.output_dir.join(method.name()), &info, chunk)?;
        summaries.push(summarize(&info, chunk)?);
    }
    Ok(summaries)
}

/// Directory name of one sweep cell.
pub fn cell_name(alpha: f64, beta: f64) -> String {
    format!("alpha_{alpha}_beta_{beta}")
}

pub const SWEEP_FILE: &str = "sweep.csv";

/// Full `(alpha, beta)` grid for `train.estimator`. Every cell writes its
/// own run directory; `sweep.csv` gathers one row per `(cell, seed)`.
pub fn run_sweep(config: &ExperimentConfig, exec: Execution) -> Result<Vec<RunSummary>> {
    config.validate()?;
    if config.alphas.is_empty() || config.betas.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    let seeds = config.seed_list();
    let cells: Vec<(f64, f64)> = config
        .alphas
        .iter()
        .flat_map(|&a| config.betas.iter().map(move |&b| (a, b)))
        .collect();
    let mut jobs = Vec::with_capacity(cells.len() * seeds.len());
    for &(alpha, beta) in &cells {
        for &seed in &seeds {
            let mut c = config.train.clone();
            c.params.alpha = alpha;
            c.params.beta = beta;
            c.seed = seed;
            c.validate()?;
            jobs.push(c);
        }
    }
    let logs = run_jobs(&config.env, &jobs, exec)?;
    fs::create_dir_all(&config.output_dir)?;
    let mut w = csv::Writer::from_path(config.output_dir.join(SWEEP_FILE))?;
    w.write_record(["alpha", "beta", "seed", "final_eval_rate", "grad_norm_std"])?;
    let mut summaries = Vec::new();
    for (k, &(alpha, beta)) in cells.iter().enumerate() {
        let chunk = &logs[k * seeds.len()..(k + 1) * seeds.len()];
        let info = RunInfo {
            label: format!("{}/{}", config.name, cell_name(alpha, beta)),
            method: config.train.estimator,
            alpha,
            beta,
            seeds: seeds.clone(),
            window: config.window,
            std_convention: config.std_convention,
        };
        write_run(&config.output_dir.join(cell_name(alpha, beta)), &info, chunk)?;
        let summary = summarize(&info, chunk)?;
        let std = summary.grad_norm_std.map(crate::metrics::fmt_f64).unwrap_or_default();
        for (seed, eval) in seeds.iter().zip(&summary.final_eval) {
            w.write_record([
                crate::metrics::fmt_f64(alpha),
                crate::metrics::fmt_f64(beta),
                seed.to_string(),
                crate::metrics::fmt_f64(*eval),
                std.clone(),
            ])?;
        }
        summaries.push(summary);
    }
    w.flush()?;
    Ok(summaries)
}

fn find_runs(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join(RUN_INFO).is_file() {
        found.push(dir.to_path_buf());
    }
    let mut children: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    children.sort();
    for child in children {
        if child.is_dir() {
            find_runs(&child, found)?;
        }
    }
    Ok(())
}

/// Summaries of every run directory below `dir`, in path order.
pub fn report(dir: &Path) -> Result<Vec<RunSummary>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", dir.display())));
    }
    let mut runs = Vec::new();
    find_runs(dir, &mut runs)?;
    if runs.is_empty() {
        return Err(Error::Config(format!("no runs found under {}", dir.display())));
    }
    runs.iter()
        .map(|run| {
            let info: RunInfo = serde_json::from_str(&fs::read_to_string(run.join(RUN_INFO))?)?;
            let logs = info
                .seeds
                .iter()
                .map(|&s| MetricsLog::load(&run.join(seed_file(s))))
                .collect::<Result<Vec<_>>>()?;
            summarize(&info, &logs)
        })
        .collect()
}

pub fn summary_table(summaries: &[RunSummary]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<36} {:>5} {:>8} {:>19} {:>14}",
        "run", "seeds", "median", "95% CI", "grad-norm std"
    );
    for s in summaries {
        let std = s.grad_norm_std.map_or("-".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(
            out,
            "{:<36} {:>5} {:>8.4} {:>19} {:>14}",
            s.label,
            s.seeds.len(),
            s.median_eval,
            format!("[{:.4}, {:.4}]", s.ci_low, s.ci_high),
            std
        );
    }
    out
}

/// Runs seeds in parallel for a list of fixed configs; used by callers that
/// need the full outcomes rather than files.
pub fn train_seeds(env: &EnvSpec, config: &TrainConfig, seeds: &[u64], exec: Execution) -> Result<Vec<TrainOutcome>> {
    map_range(exec, seeds.len(), |k| {
        env.train(&TrainConfig {
            seed: seeds[k],
            ..config.clone()
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            name: "tiny".into(),
            env: EnvSpec::CoordinationBandit { role_prob: 0.5, gamma: 1.0 },
            train: TrainConfig {
                iterations: 6,
                episodes_per_iteration: 4,
                eval_every: 8,
                eval_episodes: 8,
                final_eval_episodes: 8,
                ..TrainConfig::default()
            },
            methods: vec![],
            seeds: 1,
            alphas: vec![0.5],
            betas: vec![0.1],
            output_dir: dir.to_path_buf(),
            window: Window::full(),
            std_convention: StdConvention::Sample,
        }
    }

    #[test]
    fn sweep_row_counts() {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = tiny(tmp.path());
        run_sweep(&c, Execution::Sequential).unwrap();
        let text = fs::read_to_string(tmp.path().join(SWEEP_FILE)).unwrap();
        assert_eq!(text.lines().count(), 2);

        c.alphas = vec![0.5, 1.0];
        c.betas = vec![0.0, 0.1];
        c.seeds = 3;
        let out = tempfile::tempdir().unwrap();
        c.output_dir = out.path().to_path_buf();
        let summaries = run_sweep(&c, Execution::Parallel).unwrap();
        assert_eq!(summaries.len(), 4);
        let text = fs::read_to_string(out.path().join(SWEEP_FILE)).unwrap();
        assert_eq!(text.lines().count(), 13);
        assert!(out.path().join(cell_name(1.0, 0.1)).join(seed_file(2)).is_file());

        c.alphas.clear();
        assert!(run_sweep(&c, Execution::Sequential).is_err());
    }

    #[test]
    fn reruns_are_byte_identical_and_report_round_trips() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let mut c = tiny(a.path());
        c.methods = vec![EstimatorKind::Dccda, EstimatorKind::DccdaObKl];
        c.seeds = 2;
        let first = run_training(&c, Execution::Parallel).unwrap();
        c.output_dir = b.path().to_path_buf();
        run_training(&c, Execution::Sequential).unwrap();
        for m in ["dccda", "dccda-ob-kl"] {
            for s in [0, 1] {
                let x = fs::read(a.path().join(m).join(seed_file(s))).unwrap();
                let y = fs::read(b.path().join(m).join(seed_file(s))).unwrap();
                assert_eq!(x, y);
            }
        }
        let reported = report(a.path()).unwrap();
        assert_eq!(reported, first);
        assert!(summary_table(&reported).contains("tiny/dccda-ob-kl"));
    }

    #[test]
    fn report_errors() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(report(tmp.path()).is_err());
        assert!(report(&tmp.path().join("missing")).is_err());
        let c = tiny(tmp.path());
        run_training(&c, Execution::Sequential).unwrap();
        fs::remove_file(tmp.path().join("dccda").join(seed_file(0))).unwrap();
        assert!(report(tmp.path()).is_err());
    }

    #[test]
    fn single_seed_summary_degenerates() {
        let tmp = tempfile::tempdir().unwrap();
        let s = run_training(&tiny(tmp.path()), Execution::Sequential).unwrap();
        assert_eq!(s[0].ci_low, s[0].median_eval);
        assert_eq!(s[0].ci_high, s[0].median_eval);
        assert_eq!(s[0].grad_norm_std, None);
    }

    #[test]
    fn suite_passes_and_detects_lossy_channel() {
        let mut c = VerifyConfig {
            batch: 12,
            gradient_checks: 20,
            ..VerifyConfig::default()
        };
        let ok = run_verification_suite(&c, Execution::Sequential).unwrap();
        assert_eq!(ok.exit_code(), 0, "{}", ok.table());
        c.consistency_channel = ConsistencyChannel::ActionOnly;
        let bad = run_verification_suite(&c, Execution::Sequential).unwrap();
        assert_eq!(bad.exit_code(), 1);
        assert!(bad.reports[0].witness.is_some());
        assert!(bad.table().contains("witness"));
        c.batch = 0;
        assert!(run_verification_suite(&c, Execution::Sequential).is_err());
    }

    #[test]
    fn config_json() {
        let c = ExperimentConfig::from_json(
            r#"{"env": {"kind": "traffic-junction", "config": {"arm": 2, "num_agents": 4, "spawn_prob": 0.5, "horizon": 10}},
                "train": {"estimator": "dccda-ob-kl"}, "seeds": 3}"#,
        )
        .unwrap();
        assert_eq!(c.seed_list(), vec![0, 1, 2]);
        assert!(ExperimentConfig::from_json(r#"{"env": {"kind": "coordination-bandit"}, "seeds": 0}"#).is_err());
    }
}
