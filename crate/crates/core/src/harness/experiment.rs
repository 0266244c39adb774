use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::emit::ResultsWriter;
use super::task::Task;
use crate::diffusion::{run_denoising, Denoiser, Guidance, Trajectory};
use crate::error::{Error, FitnessError, Result};
use crate::guidance::GuidanceWindow;
use crate::rng::{mix_seed, RngStream, StreamLabel};
use crate::schedule::NoiseSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: String,
    pub x_init: Vec<f64>,
    pub x0: Vec<f64>,
    /// Task objective of `x0`; NaN if the arm failed.
    pub objective: f64,
    pub n_fitness_evals: usize,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<Vec<(usize, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedRunResult {
    pub run_index: usize,
    pub run_seed: u64,
    pub arms: Vec<ArmResult>,
}

impl PairedRunResult {
    pub fn failed(&self) -> bool {
        self.arms.iter().any(|a| a.error.is_some())
    }

    pub fn arm(&self, name: &str) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.arm == name)
    }
}

/// Built task, denoiser and schedule shared by every run of an experiment.
pub struct Prepared {
    pub task: Task,
    pub denoiser: Box<dyn Denoiser>,
    pub schedule: NoiseSchedule,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.schedule.build()?;
        let task = cfg.task.build()?;
        let denoiser = cfg.denoiser.build(&schedule, Some(&cfg.task))?;
        if denoiser.dim() != task.dim() {
            return Err(Error::Config(format!(
                "denoiser dimension {} does not match task '{}' dimension {}",
                denoiser.dim(),
                cfg.task.name(),
                task.dim()
            )));
        }
        Ok(Self { task, denoiser, schedule })
    }
}

/// Seed of the trajectory stream of run `k`, shared by all arms.
pub fn run_seed(base_seed: u64, k: usize) -> u64 {
    mix_seed(base_seed, k as u64)
}

/// Seed of the population stream of arm `arm_index` in a run.
pub fn population_seed(run_seed: u64, arm_index: usize) -> u64 {
    mix_seed(run_seed, arm_index as u64 + 1)
}

/// Runs processed between two appends to the results writer.
const CHUNK: usize = 16;

/// All runs of `cfg`; see [`run_paired_experiment_with`].
pub fn run_paired_experiment(cfg: &ExperimentConfig) -> Result<Vec<PairedRunResult>> {
    run_paired_experiment_with(cfg, None, |_, _| {})
}

/// Runs `k = 0..n_runs` in parallel chunks. Results are appended to
/// `writer` in run order as each chunk completes and `progress(done, total)`
/// is called after each chunk. A failing arm marks its run failed; the
/// experiment continues.
pub fn run_paired_experiment_with(
    cfg: &ExperimentConfig,
    mut writer: Option<&mut ResultsWriter>,
    mut progress: impl FnMut(usize, usize),
) -> Result<Vec<PairedRunResult>> {
    let prepared = Prepared::new(cfg)?;
    let mut results = Vec::with_capacity(cfg.n_runs);
    let mut start = 0;
    while start < cfg.n_runs {
        let end = (start + CHUNK).min(cfg.n_runs);
        let chunk: Vec<PairedRunResult> = (start..end).into_par_iter().map(|k| run_one(&prepared, cfg, k)).collect();
        if let Some(w) = writer.as_deref_mut() {
            for r in &chunk {
                w.append(r)?;
            }
            w.flush()?;
        }
        results.extend(chunk);
        progress(end, cfg.n_runs);
        start = end;
    }
    Ok(results)
}

/// Run `k` of the experiment, every arm on the same trajectory stream.
pub fn run_one(prepared: &Prepared, cfg: &ExperimentConfig, k: usize) -> PairedRunResult {
    let seed = run_seed(cfg.base_seed, k);
    let trajectory_rng = RngStream::new(seed, StreamLabel::Trajectory);
    let arms = cfg
        .arms
        .iter()
        .enumerate()
        .map(|(a, arm)| {
            let clock = Instant::now();
            let outcome = run_arm(prepared, cfg, &trajectory_rng, population_seed(seed, a), arm.guidance.as_ref());
            let wall_ms = if cfg.timing { clock.elapsed().as_millis() as u64 } else { 0 };
            match outcome {
                Ok((traj, objective, curve)) => ArmResult {
                    arm: arm.name.clone(),
                    x_init: traj.x_init,
                    x0: traj.x0,
                    objective,
                    n_fitness_evals: traj.fitness_evals,
                    wall_ms,
                    curve,
                    error: None,
                },
                Err(e) => ArmResult {
                    arm: arm.name.clone(),
                    x_init: Vec::new(),
                    x0: Vec::new(),
                    objective: f64::NAN,
                    n_fitness_evals: 0,
                    wall_ms,
                    curve: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    PairedRunResult { run_index: k, run_seed: seed, arms }
}

type ArmOutcome = (Trajectory, f64, Option<Vec<(usize, f64)>>);

fn run_arm(
    p: &Prepared,
    cfg: &ExperimentConfig,
    trajectory_rng: &RngStream,
    pop_seed: u64,
    guidance: Option<&crate::guidance::GuidanceConfig>,
) -> Result<ArmOutcome> {
    let g = guidance.map(|config| Guidance {
        config,
        fitness: p.task.fitness(),
        population_rng: RngStream::new(pop_seed, StreamLabel::Population),
    });
    let mut traj = run_denoising(p.denoiser.as_ref(), &p.schedule, g.as_ref(), trajectory_rng, cfg.record_curves)?;
    let objective = p
        .task
        .objective(&traj.x0)
        .map_err(|source| Error::Fitness { step: Some(0), sample: None, source })?;
    if !objective.is_finite() {
        return Err(Error::Fitness { step: Some(0), sample: None, source: FitnessError::NonFinite(objective) });
    }
    let curve = if cfg.record_curves {
        let c = objective_curve(&traj, &p.task, p.denoiser.as_ref(), &p.schedule, cfg.curve_window(), cfg.curve_stride)?;
        traj.objective_curve = c.clone();
        traj.states.clear();
        Some(c)
    } else {
        None
    };
    Ok((traj, objective, curve))
}

/// Objective of the denoiser's clean-state prediction for `x_t` at
/// `t = t_high, t_high − stride, …`, always ending at `t_low − 1`. At `t = 0`
/// the prediction is the sample itself.
pub fn objective_curve(
    traj: &Trajectory,
    task: &Task,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    window: GuidanceWindow,
    stride: usize,
) -> Result<Vec<(usize, f64)>> {
    if traj.states.is_empty() {
        return Err(Error::Config("objective curve needs a trajectory recorded with states".into()));
    }
    let stride = stride.max(1);
    let last = window.t_low - 1;
    let mut ts: Vec<usize> = (last..=window.t_high).rev().step_by(stride).collect();
    if ts.last() != Some(&last) {
        ts.push(last);
    }
    ts.into_iter()
        .map(|t| {
            let x = traj
                .states
                .iter()
                .find(|(s, _)| *s == t)
                .map(|(_, x)| x)
                .ok_or_else(|| Error::Config(format!("trajectory has no state at t={t}")))?;
            let x0_hat = denoiser.predict_x0(x, t, schedule)?;
            let v = task.objective(&x0_hat).map_err(|source| Error::Fitness { step: Some(t), sample: None, source })?;
            Ok((t, v))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoisers::GaussianMixturePrior;
    use crate::guidance::GuidanceConfig;
    use crate::harness::config::{ArmConfig, DenoiserSpec};
    use crate::harness::task::TaskSpec;

    fn toy(n_runs: usize) -> ExperimentConfig {
        let prior = GaussianMixturePrior::from_points(&[vec![-1.0, -1.0], vec![1.0, 1.0]], 0.05).unwrap();
        let mut cfg = ExperimentConfig::new(
            TaskSpec::GmmToy { target: vec![1.5, 1.5] },
            DenoiserSpec::Gmm { prior },
            vec![
                ArmConfig::unguided("UD-0"),
                ArmConfig::guided("CD-5", GuidanceConfig::new(5.0, 16, GuidanceWindow::last(50))),
            ],
            n_runs,
            11,
        );
        cfg.record_curves = true;
        cfg
    }

    #[test]
    fn arms_share_initial_noise() {
        let results = run_paired_experiment(&toy(4)).unwrap();
        assert_eq!(results.len(), 4);
        for r in &results {
            assert!(!r.failed());
            assert_eq!(r.arms[0].x_init, r.arms[1].x_init);
            assert_eq!(r.arms[0].n_fitness_evals, 0);
            assert_eq!(r.arms[1].n_fitness_evals, 50 * 16);
        }
        assert_ne!(results[0].arms[0].x_init, results[1].arms[0].x_init);
    }

    #[test]
    fn guidance_pulls_toward_target() {
        let results = run_paired_experiment(&toy(40)).unwrap();
        let better = results.iter().filter(|r| r.arms[1].objective <= r.arms[0].objective).count();
        assert!(better >= 36, "{better}/40");
    }

    #[test]
    fn curve_stride_equal_to_window_gives_two_points() {
        let mut cfg = toy(1);
        cfg.curve_stride = 50;
        let r = run_paired_experiment(&cfg).unwrap();
        let curve = r[0].arms[1].curve.as_ref().unwrap();
        assert_eq!(curve.iter().map(|p| p.0).collect::<Vec<_>>(), vec![50, 0]);
        assert_eq!(curve[1].1, r[0].arms[1].objective);
        let full = run_paired_experiment(&toy(1)).unwrap();
        assert_eq!(full[0].arms[0].curve.as_ref().unwrap().len(), 51);
    }

    #[test]
    fn failing_arm_marks_run_failed() {
        let mut cfg = toy(2);
        // wrong fitness dimension: every guided arm fails, unguided still runs
        cfg.task = TaskSpec::GmmToy { target: vec![0.0, 0.0, 0.0] };
        assert!(Prepared::new(&cfg).is_err());
        let mut cfg = toy(2);
        cfg.task = TaskSpec::GmmToy { target: vec![f64::NAN, 0.0] };
        let results = run_paired_experiment(&cfg).unwrap();
        assert!(results.iter().all(|r| r.failed()));
        assert!(results[0].arms[1].error.as_deref().unwrap().contains("step"));
    }
}
