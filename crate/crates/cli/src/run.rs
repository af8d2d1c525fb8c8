//! Training runs, repeats and metric files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use relu_mhe::mhe_train::{
    self, AdamConfig, BatchSchedule, ConvergenceReport, Evaluation, MheTrainer, RecordPolicy, StepRecord,
    TrainRun, TrainerState,
};
use relu_mhe::relu_net::WeightState;
use serde::Serialize;

use crate::config::{ExperimentConfig, Method, Mode};
use crate::synthetic;
use crate::wine;

pub const TRAJECTORY_HEADER: &str = "repeat,step,epoch,method,train_loss,test_loss,estimation_error,wall_time";

/// Mean, sample standard deviation and range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            std,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceSummary {
    pub sigma: Vec<f64>,
    pub mu: f64,
    pub rho: f64,
    pub zeta: f64,
    pub bound: Option<f64>,
    pub per_step_obs_bound: Vec<f64>,
    pub non_pe_dataset: bool,
    pub k: usize,
    pub eps_bar: f64,
}

impl From<&ConvergenceReport<f64>> for ConvergenceSummary {
    fn from(r: &ConvergenceReport<f64>) -> Self {
        Self {
            sigma: r.sigma.clone(),
            mu: r.mu,
            rho: r.rho,
            zeta: r.zeta,
            bound: r.bound,
            per_step_obs_bound: r.per_step_obs_bound.clone(),
            non_pe_dataset: r.non_pe_dataset,
            k: r.k,
            eps_bar: r.eps_bar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodResult {
    pub method: Method,
    pub final_train_loss: f64,
    pub final_test_loss: Option<f64>,
    pub final_estimation_error: Option<f64>,
    /// Test RMSE in the original target units (wine runs).
    pub test_rmse: Option<f64>,
    /// First recorded step after the initial one whose estimation error is
    /// below the threshold.
    pub first_step_below_threshold: Option<usize>,
    /// Largest estimation error over the final `tail_epochs` epochs.
    pub tail_limsup_error: Option<f64>,
    pub retractions: usize,
    pub convergence: Option<ConvergenceSummary>,
    /// Steps with `‖P_o,t(ŵ_t − w)‖` above the per-step bound.
    pub obs_bound_violations: Option<usize>,
    /// `tail_limsup_error ≤ bound`, when both exist.
    pub bound_holds: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepeatResult {
    pub repeat: usize,
    pub seed: u64,
    pub methods: Vec<MethodResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub final_train_loss: Option<Stat>,
    pub final_test_loss: Option<Stat>,
    pub final_estimation_error: Option<Stat>,
    pub test_rmse: Option<Stat>,
    /// Repeats that reached the threshold within the first epoch.
    pub converged_within_one_epoch: usize,
    pub bound_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub mode: Mode,
    pub seed: u64,
    pub repeats: usize,
    pub epochs: usize,
    pub error_threshold: f64,
    pub methods: Vec<MethodSummary>,
    pub runs: Vec<RepeatResult>,
}

/// Trajectories and results of one repeat.
#[derive(Debug, Clone)]
pub struct RepeatOutput {
    pub result: RepeatResult,
    pub trajectories: Vec<(Method, Vec<StepRecord<f64>>)>,
}

fn policy(cfg: &ExperimentConfig) -> RecordPolicy {
    if cfg.record_every_step {
        RecordPolicy::EveryStep
    } else {
        RecordPolicy::EveryEpoch
    }
}

fn adam_config(cfg: &ExperimentConfig) -> AdamConfig<f64> {
    let o = &cfg.optimizers;
    AdamConfig {
        lr: o.adam_lr,
        beta1: o.adam_beta1,
        beta2: o.adam_beta2,
        eps: o.adam_eps,
    }
}

fn baseline(
    cfg: &ExperimentConfig,
    method: Method,
    schedule: &BatchSchedule<f64>,
    init: &WeightState<f64>,
    eval: &Evaluation<f64>,
) -> Result<TrainRun<f64>> {
    let epochs = cfg.epochs();
    let run = match method {
        Method::Gd => mhe_train::gd_baseline(schedule, init, cfg.optimizers.gd_lr, epochs, eval, policy(cfg))?,
        Method::Adam => mhe_train::adam_baseline(schedule, init, adam_config(cfg), epochs, eval, policy(cfg))?,
        Method::RegularizedMhe => {
            mhe_train::regularized_mhe(schedule, init, cfg.optimizers.reg_lambda, epochs, eval, policy(cfg))?
        }
        Method::Mhe => bail!("the constrained MHE is not a baseline"),
    };
    Ok(run)
}

fn result_from(cfg: &ExperimentConfig, method: Method, run: &TrainRun<f64>, k: usize) -> MethodResult {
    let last = run.records.last();
    let threshold = cfg.error_threshold;
    let epochs = cfg.epochs();
    let tail_start = epochs.saturating_sub(cfg.tail_epochs);
    let tail: Vec<f64> = run
        .records
        .iter()
        .filter(|r| r.step > 0 && r.step > tail_start * k)
        .filter_map(|r| r.estimation_error)
        .collect();
    MethodResult {
        method,
        final_train_loss: last.map_or(f64::NAN, |r| r.train_loss),
        final_test_loss: last.and_then(|r| r.test_loss),
        final_estimation_error: last.and_then(|r| r.estimation_error),
        test_rmse: None,
        first_step_below_threshold: run
            .records
            .iter()
            .find(|r| r.step > 0 && r.estimation_error.is_some_and(|e| e < threshold))
            .map(|r| r.step),
        tail_limsup_error: (!tail.is_empty()).then(|| tail.iter().copied().fold(0.0, f64::max)),
        retractions: run.retractions,
        convergence: None,
        obs_bound_violations: None,
        bound_holds: None,
    }
}

/// One synthetic repeat with seed `seed`.
pub fn synthetic_repeat(cfg: &ExperimentConfig, repeat: usize, seed: u64) -> Result<RepeatOutput> {
    let problem = synthetic::generate(&cfg.synthetic, seed)?;
    let schedule = BatchSchedule::from_index_sets(&problem.inputs, &problem.targets, problem.batch_sets.clone())?;
    let k = schedule.k();
    let eval = Evaluation {
        test: Some((problem.test_inputs.clone(), problem.test_targets.clone())),
        truth: Some(problem.teacher.clone()),
    };
    let mut methods = Vec::new();
    let mut trajectories = Vec::new();
    for &method in &cfg.methods {
        let (run, result) = if method == Method::Mhe {
            let trainer = MheTrainer::new(problem.neigh.clone(), schedule.clone())?;
            let run = trainer.run(TrainerState::new(problem.neigh.clone()), cfg.epochs(), &eval, policy(cfg))?;
            let report = trainer.convergence_report(cfg.synthetic.eps_bar);
            let mut result = result_from(cfg, method, &run, k);
            result.obs_bound_violations = Some(
                run.records
                    .iter()
                    .filter(|r| r.step > 0)
                    .filter(|r| r.observable_error.is_some_and(|e| e > report.per_step_obs_bound[(r.step - 1) % k]))
                    .count(),
            );
            result.bound_holds = match (report.bound, result.tail_limsup_error) {
                (Some(b), Some(e)) => Some(e <= b),
                _ => None,
            };
            result.convergence = Some(ConvergenceSummary::from(&report));
            (run, result)
        } else {
            let run = baseline(cfg, method, &schedule, &problem.init, &eval)?;
            let result = result_from(cfg, method, &run, k);
            (run, result)
        };
        methods.push(result);
        trajectories.push((method, run.records));
    }
    Ok(RepeatOutput {
        result: RepeatResult { repeat, seed, methods },
        trajectories,
    })
}

/// One wine repeat: split, initialization and batch order all follow `seed`.
pub fn wine_repeat(cfg: &ExperimentConfig, repeat: usize, seed: u64) -> Result<RepeatOutput> {
    let problem = wine::prepare(&cfg.wine, seed)?;
    let k = problem.schedule.k();
    let mut methods = Vec::new();
    let mut trajectories = Vec::new();
    for &method in &cfg.methods {
        let run = baseline(cfg, method, &problem.schedule, &problem.init, &problem.eval)?;
        let mut result = result_from(cfg, method, &run, k);
        result.test_rmse = Some(problem.test_rmse(&run.final_state)?);
        methods.push(result);
        trajectories.push((method, run.records));
    }
    Ok(RepeatOutput {
        result: RepeatResult { repeat, seed, methods },
        trajectories,
    })
}

pub fn run_repeat(cfg: &ExperimentConfig, repeat: usize) -> Result<RepeatOutput> {
    let seed = cfg.seed.wrapping_add(repeat as u64);
    match cfg.mode {
        Mode::Synthetic => synthetic_repeat(cfg, repeat, seed),
        Mode::Wine => wine_repeat(cfg, repeat, seed),
        Mode::ObservabilityAnalysis | Mode::InputDesign => {
            bail!("{:?} mode has no training runs; use analyze or design-input", cfg.mode)
        }
    }
    .with_context(|| format!("repeat {repeat} (seed {seed})"))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:e}")).unwrap_or_default()
}

/// Trajectory CSV rows of one repeat, without the header.
pub fn trajectory_rows(out: &RepeatOutput, wall_time: bool) -> String {
    let mut s = String::new();
    for (method, records) in &out.trajectories {
        for r in records {
            s.push_str(&format!(
                "{},{},{},{},{:e},{},{},{}\n",
                out.result.repeat,
                r.step,
                r.epoch,
                method.name(),
                r.train_loss,
                fmt_opt(r.test_loss),
                fmt_opt(r.estimation_error),
                if wall_time { format!("{:e}", r.wall_time) } else { String::new() },
            ));
        }
    }
    s
}

pub fn summarize(cfg: &ExperimentConfig, repeats: usize, runs: Vec<RepeatResult>) -> Summary {
    let k = match cfg.mode {
        Mode::Synthetic => cfg.synthetic.batches,
        _ => usize::MAX,
    };
    let methods = cfg
        .methods
        .iter()
        .map(|&method| {
            let results: Vec<&MethodResult> = runs
                .iter()
                .flat_map(|r| r.methods.iter().filter(move |m| m.method == method))
                .collect();
            let stat = |f: &dyn Fn(&MethodResult) -> Option<f64>| {
                Stat::of(&results.iter().filter_map(|m| f(m)).collect::<Vec<_>>())
            };
            MethodSummary {
                method,
                final_train_loss: stat(&|m| Some(m.final_train_loss)),
                final_test_loss: stat(&|m| m.final_test_loss),
                final_estimation_error: stat(&|m| m.final_estimation_error),
                test_rmse: stat(&|m| m.test_rmse),
                converged_within_one_epoch: results
                    .iter()
                    .filter(|m| m.first_step_below_threshold.is_some_and(|s| s <= k))
                    .count(),
                bound_failures: results.iter().filter(|m| m.bound_holds == Some(false)).count(),
            }
        })
        .collect();
    Summary {
        mode: cfg.mode,
        seed: cfg.seed,
        repeats,
        epochs: cfg.epochs(),
        error_threshold: cfg.error_threshold,
        methods,
        runs,
    }
}

/// Runs `repeats` repeats in parallel, writes one trajectory file per
/// repeat under `runs/`, merges them in repeat order into
/// `trajectory.csv` and writes `summary.json`.
pub fn execute(cfg: &ExperimentConfig, repeats: usize, out_dir: &Path) -> Result<Summary> {
    let runs_dir = out_dir.join("runs");
    fs::create_dir_all(&runs_dir).with_context(|| format!("creating {}", runs_dir.display()))?;
    let parts: Vec<(PathBuf, RepeatResult)> = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let out = run_repeat(cfg, r)?;
            let path = runs_dir.join(format!("repeat-{r:03}.csv"));
            let body = format!("{TRAJECTORY_HEADER}\n{}", trajectory_rows(&out, cfg.record_wall_time));
            fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
            Ok((path, out.result))
        })
        .collect::<Result<_>>()?;

    let mut merged = fs::File::create(out_dir.join("trajectory.csv")).context("creating trajectory.csv")?;
    writeln!(merged, "{TRAJECTORY_HEADER}")?;
    let mut results = Vec::with_capacity(parts.len());
    for (path, result) in parts {
        let text = fs::read_to_string(&path)?;
        for line in text.lines().skip(1) {
            writeln!(merged, "{line}")?;
        }
        results.push(result);
    }
    let summary = summarize(cfg, repeats, results);
    let json = serde_json::to_string_pretty(&summary)?;
    fs::write(out_dir.join("summary.json"), json + "\n").context("writing summary.json")?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_values() {
        let s = Stat::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std, s.min, s.max, s.count), (2.0, 1.0, 1.0, 3.0, 3));
        assert_eq!(Stat::of(&[4.0]).unwrap().std, 0.0);
        assert!(Stat::of(&[]).is_none());
    }

    #[test]
    fn short_synthetic_repeat() {
        let cfg = ExperimentConfig {
            epochs: Some(2),
            methods: vec![Method::Mhe, Method::Gd],
            ..ExperimentConfig::default()
        };
        let out = run_repeat(&cfg, 0).unwrap();
        assert_eq!(out.trajectories.len(), 2);
        // initial record plus 2 epochs of 5 steps
        assert_eq!(out.trajectories[0].1.len(), 11);
        let mhe = &out.result.methods[0];
        assert_eq!(mhe.obs_bound_violations, Some(0));
        assert!(mhe.convergence.as_ref().unwrap().bound.is_some());
        let rows = trajectory_rows(&out, false);
        assert_eq!(rows.lines().count(), 22);
        assert!(rows.lines().all(|l| l.ends_with(',')));
    }
}
