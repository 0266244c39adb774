//! Denoising distributions, the reverse step and the outer sampling loop.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fitness::FitnessFunction;
use crate::guidance::{guide_step, DenoiserCtx, GuidanceConfig, StepDiagnostics};
use crate::rng::{RngStream, StreamLabel};
use crate::schedule::NoiseSchedule;

/// Isotropic Gaussian `N(mean, variance·I)` for one reverse step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoisingDistribution {
    pub mean: Vec<f64>,
    pub variance: f64,
    pub step: usize,
}

impl DenoisingDistribution {
    /// `variance == 0` is accepted as a degenerate zero-noise mode.
    pub fn new(mean: Vec<f64>, variance: f64, step: usize) -> Result<Self> {
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(Error::Numeric(format!("denoising variance must be finite and >= 0, got {variance}")));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Numeric(format!("non-finite denoising mean at step {step}")));
        }
        Ok(Self { mean, variance, step })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// A pre-trained unconditional denoiser predicting `(μ_θ, Σ_θ)`.
///
/// Implementations hold no mutable state: equal `(x_t, t)` give equal output.
pub trait Denoiser: Send + Sync {
    fn dim(&self) -> usize;

    /// Distribution of `x_{t-1}` given `x_t`.
    fn denoise(&self, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<DenoisingDistribution>;

    /// Estimate of the clean state `x_0` given `x_t`. At `t == 0` this is `x_t`.
    fn predict_x0(&self, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn denoise(&self, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<DenoisingDistribution> {
        (**self).denoise(x_t, t, schedule)
    }
    fn predict_x0(&self, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        (**self).predict_x0(x_t, t, schedule)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn denoise(&self, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<DenoisingDistribution> {
        (**self).denoise(x_t, t, schedule)
    }
    fn predict_x0(&self, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        (**self).predict_x0(x_t, t, schedule)
    }
}

/// `mean + √variance·ε` with `ε` taken from the trajectory stream at `(t, 0)`.
pub fn reverse_step(dist: &DenoisingDistribution, rng: &RngStream) -> Vec<f64> {
    if dist.variance == 0.0 {
        return dist.mean.clone();
    }
    let sd = dist.std();
    let eps = rng.at(dist.step as u64, 0).normals(dist.dim());
    dist.mean.iter().zip(&eps).map(|(m, e)| m + sd * e).collect()
}

/// Everything the loop needs to guide a run.
#[derive(Clone, Copy)]
pub struct Guidance<'a> {
    pub config: &'a GuidanceConfig,
    pub fitness: &'a dyn FitnessFunction,
    /// Population stream; sample `i` of step `t` is drawn at counter `(t, i)`.
    pub population_rng: RngStream,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `(t, x_t)` from `t = T` down to `t = 0`; empty unless states were recorded.
    pub states: Vec<(usize, Vec<f64>)>,
    pub x_init: Vec<f64>,
    pub x0: Vec<f64>,
    pub objective_curve: Vec<(usize, f64)>,
    /// Per guided step, in loop order.
    pub diagnostics: Vec<StepDiagnostics>,
    /// Trajectory-stream counters consumed, in loop order.
    pub noise_counters: Vec<(u64, u64)>,
    pub fitness_evals: usize,
}

/// Counter of the trajectory stream reserved for the `x_T` draw; reverse
/// steps use `(t, 0)` with `t >= 1`.
pub const INIT_COUNTER: (u64, u64) = (0, 0);

/// Guided or unguided ancestral sampling from `x_T ~ N(0, I)` down to `x_0`.
///
/// The trajectory stream is consumed identically whether or not guidance is
/// active, so a guided and an unguided run with the same stream share `x_T`
/// and every per-step noise vector.
pub fn run_denoising(
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    guidance: Option<&Guidance<'_>>,
    trajectory_rng: &RngStream,
    record_states: bool,
) -> Result<Trajectory> {
    let steps = schedule.steps();
    let dim = denoiser.dim();
    if trajectory_rng.label() != StreamLabel::Trajectory {
        return Err(Error::Config("run_denoising needs a trajectory-labelled stream".into()));
    }
    if let Some(g) = guidance {
        g.config.validate(steps)?;
        check_dim(dim, g.fitness.dim())?;
    }

    let mut traj = Trajectory::default();
    let init = trajectory_rng.at(INIT_COUNTER.0, INIT_COUNTER.1);
    let mut x = init.normals(dim);
    traj.noise_counters.push(INIT_COUNTER);
    traj.x_init = x.clone();

    for t in (1..=steps).rev() {
        if record_states {
            traj.states.push((t, x.clone()));
        }
        let mut dist = denoiser.denoise(&x, t, schedule)?;
        check_dim(dim, dist.dim())?;
        if let Some(g) = guidance.filter(|g| g.config.window.contains(t)) {
            let ctx = DenoiserCtx { denoiser, schedule };
            let step = guide_step(&dist, g.fitness, g.config, Some(&ctx), &g.population_rng).map_err(|e| e.at_step(t))?;
            traj.fitness_evals += step.population.samples.len();
            traj.diagnostics.push(step.diagnostics);
            dist = step.dist;
        }
        x = reverse_step(&dist, trajectory_rng);
        traj.noise_counters.push((t as u64, 0));
    }
    if record_states {
        traj.states.push((0, x.clone()));
    }
    traj.x0 = x;
    Ok(traj)
}

/// JSON export of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryExport {
    pub seed: u64,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<(usize, Vec<f64>)>>,
    pub x0: Vec<f64>,
    pub objective_curve: Vec<(usize, f64)>,
}

impl Trajectory {
    pub fn export(&self, seed: u64, config_hash: &str, include_states: bool) -> TrajectoryExport {
        TrajectoryExport {
            seed,
            config_hash: config_hash.to_string(),
            states: include_states.then(|| self.states.clone()),
            x0: self.x0.clone(),
            objective_curve: self.objective_curve.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleParams;

    /// Shrinks toward zero; enough to exercise the loop.
    struct Shrink(usize);

    impl Denoiser for Shrink {
        fn dim(&self) -> usize {
            self.0
        }
        fn denoise(&self, x_t: &[f64], t: usize, s: &NoiseSchedule) -> Result<DenoisingDistribution> {
            DenoisingDistribution::new(x_t.iter().map(|v| 0.9 * v).collect(), s.step_variance(t), t)
        }
        fn predict_x0(&self, x_t: &[f64], _t: usize, _s: &NoiseSchedule) -> Result<Vec<f64>> {
            Ok(x_t.to_vec())
        }
    }

    #[test]
    fn zero_variance_returns_mean() {
        let d = DenoisingDistribution::new(vec![1.0, -2.0], 0.0, 5).unwrap();
        assert_eq!(reverse_step(&d, &RngStream::new(1, StreamLabel::Trajectory)), vec![1.0, -2.0]);
    }

    #[test]
    fn negative_variance_rejected() {
        assert!(DenoisingDistribution::new(vec![0.0], -1.0, 1).is_err());
    }

    #[test]
    fn reverse_step_replays() {
        let d = DenoisingDistribution::new(vec![0.5; 3], 0.3, 9).unwrap();
        let rng = RngStream::new(77, StreamLabel::Trajectory);
        assert_eq!(reverse_step(&d, &rng), reverse_step(&d, &rng));
    }

    #[test]
    fn reverse_step_variance() {
        // 1e5 one-dimensional draws at variance 4; SE of the sample variance is
        // 4·sqrt(2/n) ≈ 0.018, so ±0.1 is more than 5 SE.
        let n = 100_000u64;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for k in 0..n {
            let d = DenoisingDistribution::new(vec![0.0], 4.0, 1).unwrap();
            let x = reverse_step(&d, &RngStream::new(k, StreamLabel::Trajectory))[0];
            sum += x;
            sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!((var - 4.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn loop_records_states_and_counters() {
        let s = ScheduleParams::scaled(10).build().unwrap();
        let rng = RngStream::new(3, StreamLabel::Trajectory);
        let tr = run_denoising(&Shrink(2), &s, None, &rng, true).unwrap();
        let ts: Vec<usize> = tr.states.iter().map(|(t, _)| *t).collect();
        assert_eq!(ts, (0..=10).rev().collect::<Vec<_>>());
        assert_eq!(tr.states[0].1, tr.x_init);
        assert_eq!(tr.states.last().unwrap().1, tr.x0);
        assert_eq!(tr.noise_counters.len(), 11);
        assert_eq!(tr.fitness_evals, 0);
        let again = run_denoising(&Shrink(2), &s, None, &rng, true).unwrap();
        assert_eq!(tr, again);
    }

    #[test]
    fn loop_requires_trajectory_stream() {
        let s = ScheduleParams::scaled(10).build().unwrap();
        let rng = RngStream::new(3, StreamLabel::Population);
        assert!(matches!(run_denoising(&Shrink(2), &s, None, &rng, false), Err(Error::Config(_))));
    }

    #[test]
    fn export_omits_states_unless_asked() {
        let tr = Trajectory { x0: vec![1.0], objective_curve: vec![(3, 0.5)], ..Default::default() };
        let json = serde_json::to_value(tr.export(4, "abc", false)).unwrap();
        assert!(json.get("states").is_none());
        assert_eq!(json["objective_curve"], serde_json::json!([[3, 0.5]]));
        let back: TrajectoryExport = serde_json::from_value(json).unwrap();
        assert_eq!(back.seed, 4);
    }
}
