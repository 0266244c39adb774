//! Noise schedules and the forward noising process.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::hash::config_hash;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Linear,
}

/// Which variance the reverse step uses for `Σ = σ_t² I`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceKind {
    /// DDPM posterior variance `β̃_t`.
    #[default]
    Posterior,
    /// Forward variance `β_t`.
    Beta,
}

/// Serializable description of a schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub kind: ScheduleKind,
    pub variance: VarianceKind,
}

impl ScheduleParams {
    /// DDPM's 1000-step range `(1e-4, 0.02)` rescaled by `1000 / steps`, which
    /// keeps `ᾱ_T` near zero for short chains.
    pub fn scaled(steps: usize) -> Self {
        let scale = 1000.0 / steps.max(1) as f64;
        Self {
            steps,
            beta_min: (1e-4 * scale).min(0.5),
            beta_max: (0.02 * scale).min(0.999),
            kind: ScheduleKind::Linear,
            variance: VarianceKind::Posterior,
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        let mut s = build_schedule(self.steps, self.beta_min, self.beta_max, self.kind)?;
        s.variance = self.variance;
        Ok(s)
    }
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self::scaled(100)
    }
}

/// Precomputed schedule quantities. Public accessors are 1-based in `t`;
/// `alpha_bar(0)` is defined as 1.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_vars: Vec<f64>,
    variance: VarianceKind,
}

pub fn build_schedule(steps: usize, beta_min: f64, beta_max: f64, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::Config(format!(
            "beta bounds must satisfy 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
        )));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear if steps == 1 => vec![beta_min],
        ScheduleKind::Linear => (0..steps)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64)
            .collect(),
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    let posterior_vars = (0..steps)
        .map(|i| {
            if i == 0 {
                betas[0]
            } else {
                betas[i] * (1.0 - alpha_bars[i - 1]) / (1.0 - alpha_bars[i])
            }
        })
        .collect();
    Ok(NoiseSchedule {
        params: ScheduleParams { steps, beta_min, beta_max, kind, variance: VarianceKind::Posterior },
        betas,
        alphas,
        alpha_bars,
        posterior_vars,
        variance: VarianceKind::Posterior,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn params(&self) -> ScheduleParams {
        ScheduleParams { variance: self.variance, ..self.params.clone() }
    }

    pub fn with_variance(mut self, variance: VarianceKind) -> Self {
        self.variance = variance;
        self
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t >= 1 && t <= self.steps() {
            Ok(())
        } else {
            Err(Error::StepOutOfRange { t, steps: self.steps() })
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn posterior_var(&self, t: usize) -> f64 {
        self.posterior_vars[t - 1]
    }

    /// Reverse-step variance `σ_t²` under the configured [`VarianceKind`].
    pub fn step_variance(&self, t: usize) -> f64 {
        match self.variance {
            VarianceKind::Posterior => self.posterior_var(t),
            VarianceKind::Beta => self.beta(t),
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn posterior_vars(&self) -> &[f64] {
        &self.posterior_vars
    }

    /// DDPM posterior mean `μ̃(x_t, x̂0)`.
    pub fn posterior_mean(&self, x0_hat: &[f64], x_t: &[f64], t: usize) -> Vec<f64> {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let c0 = ab_prev.sqrt() * self.beta(t) / (1.0 - ab);
        let ct = self.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        x0_hat.iter().zip(x_t).map(|(a, b)| c0 * a + ct * b).collect()
    }

    /// Stable identifier of the schedule parameters.
    pub fn hash(&self) -> String {
        config_hash(&self.params())
    }
}

/// `√ᾱ_t·x0 + √(1−ᾱ_t)·ε`, with `ε` drawn from `rng` at its current counters.
pub fn forward_noise(x0: &[f64], t: usize, schedule: &NoiseSchedule, rng: &RngStream) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    let ab = schedule.alpha_bar(t);
    let eps = rng.normals(x0.len());
    check_dim(x0.len(), eps.len())?;
    Ok(x0
        .iter()
        .zip(&eps)
        .map(|(x, e)| ab.sqrt() * x + (1.0 - ab).sqrt() * e)
        .collect())
}
