//! Derivative-free guidance of the denoising mean.
//!
//! Each guided step draws a population from the current denoising Gaussian,
//! scores it with a black-box fitness function, converts the scores into
//! zero-sum rank weights and moves the mean along the Monte-Carlo search
//! gradient
//!
//! ```text
//! ĝ = (1/N_s) Σ_i r_i (x_i − μ),      μ_c = μ + α ĝ.
//! ```
//!
//! For a Gaussian mean the inverse Fisher matrix is `Σ`, which cancels the
//! `Σ⁻¹` of the score, so `ĝ` is already the natural gradient and no
//! covariance factor appears. As `Σ → 0` with raw weights, `ĝ / σ²` tends to
//! `∇f(μ)`, i.e. the update coincides with gradient guidance
//! (see [`gradient_guidance_baseline`]).

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{Denoiser, DenoisingDistribution};
use crate::error::{check_dim, Error, FitnessError, Result};
use crate::fitness::FitnessFunction;
use crate::rng::RngStream;
use crate::schedule::NoiseSchedule;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shaping {
    #[default]
    RankZeroSum,
    Raw,
}

/// Where each population member is scored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// On the sample itself.
    #[default]
    Direct,
    /// On the denoiser's clean-state prediction for the sample.
    X0Predicted,
}

/// Inclusive range of steps `t_low..=t_high` during which guidance is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceWindow {
    pub t_high: usize,
    pub t_low: usize,
}

impl GuidanceWindow {
    /// The final `k` denoising steps, `t = k..=1`.
    pub fn last(k: usize) -> Self {
        Self { t_high: k, t_low: 1 }
    }

    pub fn contains(&self, t: usize) -> bool {
        t >= self.t_low && t <= self.t_high
    }

    pub fn len(&self) -> usize {
        self.t_high + 1 - self.t_low
    }

    pub fn is_empty(&self) -> bool {
        self.t_high < self.t_low
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    pub alpha: f64,
    pub n_samples: usize,
    pub window: GuidanceWindow,
    #[serde(default)]
    pub shaping: Shaping,
    #[serde(default)]
    pub eval_mode: EvalMode,
    #[serde(default = "default_parallel")]
    pub parallel_eval: bool,
}

fn default_parallel() -> bool {
    true
}

impl GuidanceConfig {
    pub fn new(alpha: f64, n_samples: usize, window: GuidanceWindow) -> Self {
        Self {
            alpha,
            n_samples,
            window,
            shaping: Shaping::RankZeroSum,
            eval_mode: EvalMode::Direct,
            parallel_eval: true,
        }
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("guidance alpha must be positive, got {}", self.alpha)));
        }
        let min_samples = match self.shaping {
            Shaping::RankZeroSum => 2,
            Shaping::Raw => 1,
        };
        if self.n_samples < min_samples {
            return Err(Error::Config(format!(
                "guidance needs at least {min_samples} samples, got {}",
                self.n_samples
            )));
        }
        let w = self.window;
        if !(w.t_low >= 1 && w.t_high >= w.t_low && w.t_high <= steps) {
            return Err(Error::Config(format!(
                "guidance window ({}, {}) must satisfy 1 <= t_low <= t_high <= {steps}",
                w.t_high, w.t_low
            )));
        }
        Ok(())
    }
}

/// One evaluated population: `samples[i]`, its raw `fitness[i]` and the
/// shaped `weights[i]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Population {
    pub samples: Vec<Vec<f64>>,
    pub fitness: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Per-step record, exported as one JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub t: usize,
    pub fitness: Vec<f64>,
    pub weights: Vec<f64>,
    pub update_norm: f64,
}

pub fn write_diagnostics_jsonl<W: Write>(mut out: W, diagnostics: &[StepDiagnostics]) -> std::io::Result<()> {
    for d in diagnostics {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Denoiser access for [`EvalMode::X0Predicted`].
#[derive(Clone, Copy)]
pub struct DenoiserCtx<'a> {
    pub denoiser: &'a dyn Denoiser,
    pub schedule: &'a NoiseSchedule,
}

pub struct GuidedStep {
    pub dist: DenoisingDistribution,
    pub population: Population,
    pub diagnostics: StepDiagnostics,
}

/// `n` draws from `dist`; draw `i` uses the population stream at
/// `(dist.step, i)` and is reproducible in isolation.
pub fn sample_population(dist: &DenoisingDistribution, n: usize, rng: &RngStream) -> Vec<Vec<f64>> {
    (0..n).map(|i| sample_member(dist, i, rng)).collect()
}

pub fn sample_member(dist: &DenoisingDistribution, i: usize, rng: &RngStream) -> Vec<f64> {
    if dist.variance == 0.0 {
        return dist.mean.clone();
    }
    let sd = dist.std();
    let eps = rng.at(dist.step as u64, i as u64).normals(dist.dim());
    dist.mean.iter().zip(&eps).map(|(m, e)| m + sd * e).collect()
}

/// Zero-sum rank weights.
///
/// Ascending average ranks (lowest fitness gets rank 1, ties share the mean
/// of their positions) mapped through `r = rank/N − (N+1)/(2N)`. Each weight
/// is computed as `(2·rank − N − 1) / (2N)`; the numerators are integers
/// summing to zero, and the weights lie in `(−1/2, 1/2]`.
pub fn fitness_shape(fitness: &[f64]) -> Result<Vec<f64>> {
    let n = fitness.len();
    if n < 2 {
        return Err(Error::Config(format!("fitness shaping needs at least 2 values, got {n}")));
    }
    if let Some(i) = fitness.iter().position(|f| !f.is_finite()) {
        return Err(Error::Fitness { step: None, sample: Some(i), source: FitnessError::NonFinite(fitness[i]) });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]));

    // twice the average rank, kept integral
    let mut twice_rank = vec![0i64; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && fitness[order[end]] == fitness[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let twice_avg = (start + 1 + end) as i64;
        for &k in &order[start..end] {
            twice_rank[k] = twice_avg;
        }
        start = end;
    }
    let denom = (2 * n) as f64;
    Ok(twice_rank.iter().map(|&r2| (r2 - n as i64 - 1) as f64 / denom).collect())
}

/// `(1/N_s) Σ_i w_i (x_i − μ)`.
pub fn estimate_natural_gradient(samples: &[Vec<f64>], weights: &[f64], mean: &[f64]) -> Result<Vec<f64>> {
    check_dim(samples.len(), weights.len())?;
    let n = samples.len();
    let mut g = vec![0.0; mean.len()];
    if n == 0 {
        return Ok(g);
    }
    for (x, &w) in samples.iter().zip(weights) {
        check_dim(mean.len(), x.len())?;
        if w == 0.0 {
            continue;
        }
        for ((gk, xk), mk) in g.iter_mut().zip(x).zip(mean) {
            *gk += w * (xk - mk);
        }
    }
    let inv = 1.0 / n as f64;
    g.iter_mut().for_each(|v| *v *= inv);
    Ok(g)
}

/// One guided update of the denoising mean. The variance is left unchanged.
pub fn guide_step(
    dist: &DenoisingDistribution,
    fitness_fn: &dyn FitnessFunction,
    cfg: &GuidanceConfig,
    ctx: Option<&DenoiserCtx<'_>>,
    rng: &RngStream,
) -> Result<GuidedStep> {
    check_dim(fitness_fn.dim(), dist.dim())?;
    if cfg.eval_mode == EvalMode::X0Predicted && ctx.is_none() {
        return Err(Error::Config("x0_predicted evaluation needs a denoiser context".into()));
    }
    let t = dist.step;
    let samples = sample_population(dist, cfg.n_samples, rng);

    let eval = |i: usize, x: &Vec<f64>| -> Result<f64> {
        let scored;
        let point: &[f64] = match (cfg.eval_mode, ctx) {
            (EvalMode::X0Predicted, Some(c)) => {
                // the sample lives at level t-1
                scored = c.denoiser.predict_x0(x, t.saturating_sub(1), c.schedule)?;
                &scored
            }
            _ => x,
        };
        let f = fitness_fn
            .evaluate(point)
            .map_err(|source| Error::Fitness { step: Some(t), sample: Some(i), source })?;
        if f.is_finite() {
            Ok(f)
        } else {
            Err(Error::Fitness { step: Some(t), sample: Some(i), source: FitnessError::NonFinite(f) })
        }
    };
    let outcomes: Vec<Result<f64>> = if cfg.parallel_eval && fitness_fn.concurrent_safe() {
        samples.par_iter().enumerate().map(|(i, x)| eval(i, x)).collect()
    } else {
        samples.iter().enumerate().map(|(i, x)| eval(i, x)).collect()
    };
    let fitness = outcomes.into_iter().collect::<Result<Vec<f64>>>()?;

    let weights = match cfg.shaping {
        Shaping::RankZeroSum => fitness_shape(&fitness).map_err(|e| e.at_step(t))?,
        Shaping::Raw => fitness.clone(),
    };
    let g = estimate_natural_gradient(&samples, &weights, &dist.mean)?;
    let mut mean = dist.mean.clone();
    let mut norm_sq = 0.0;
    for (m, gk) in mean.iter_mut().zip(&g) {
        let step = cfg.alpha * gk;
        *m += step;
        norm_sq += step * step;
    }
    let diagnostics = StepDiagnostics {
        t,
        fitness: fitness.clone(),
        weights: weights.clone(),
        update_norm: norm_sq.sqrt(),
    };
    Ok(GuidedStep {
        dist: DenoisingDistribution { mean, variance: dist.variance, step: t },
        population: Population { samples, fitness, weights },
        diagnostics,
    })
}

/// Gradient guidance `μ + α·Σ·∇f(μ)` with `Σ = variance·I`.
pub fn gradient_guidance_baseline(dist: &DenoisingDistribution, grad_at_mean: &[f64], alpha: f64) -> Result<DenoisingDistribution> {
    check_dim(dist.dim(), grad_at_mean.len())?;
    let scale = alpha * dist.variance;
    Ok(DenoisingDistribution {
        mean: dist.mean.iter().zip(grad_at_mean).map(|(m, g)| m + scale * g).collect(),
        variance: dist.variance,
        step: dist.step,
    })
}

/// Monte-Carlo Fisher information of the mean, `(1/n) Σ s_i s_iᵀ` with the
/// Gaussian score `s_i = (x_i − μ) / variance`. Row-major `dim × dim`.
pub fn empirical_fisher(dist: &DenoisingDistribution, n: usize, rng: &RngStream) -> Result<Vec<Vec<f64>>> {
    if dist.variance <= 0.0 {
        return Err(Error::Numeric("Fisher information needs a positive variance".into()));
    }
    if n == 0 {
        return Err(Error::Config("empirical Fisher needs at least one sample".into()));
    }
    let d = dist.dim();
    let partial = |range: std::ops::Range<usize>| {
        let mut acc = vec![0.0; d * d];
        for i in range {
            let x = sample_member(dist, i, rng);
            let s: Vec<f64> = x.iter().zip(&dist.mean).map(|(a, m)| (a - m) / dist.variance).collect();
            for r in 0..d {
                for c in 0..d {
                    acc[r * d + c] += s[r] * s[c];
                }
            }
        }
        acc
    };
    // Fixed chunking keeps the floating-point sum independent of thread count.
    const CHUNK: usize = 4096;
    let chunks: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| partial(c * CHUNK..((c + 1) * CHUNK).min(n)))
        .collect();
    let mut total = vec![0.0; d * d];
    for chunk in chunks {
        total.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
    }
    Ok(total.chunks(d).map(|row| row.iter().map(|v| v / n as f64).collect()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitness::{FnFitness, LinearFitness};
    use crate::rng::StreamLabel;

    fn pop_rng(seed: u64) -> RngStream {
        RngStream::new(seed, StreamLabel::Population)
    }

    #[test]
    fn shaping_examples() {
        assert_eq!(fitness_shape(&[2.0, 2.0, 2.0, 2.0]).unwrap(), vec![0.0; 4]);
        let w = fitness_shape(&[3.0, -1.0, 7.0]).unwrap();
        assert_eq!(w[0], 0.0);
        assert!((w[1] + 1.0 / 3.0).abs() < 1e-15);
        assert!((w[2] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn shaping_ties_share_average_rank() {
        // ranks 1.5, 1.5, 3, 4 for N = 4 → numerators −2, −2, 1, 3 over 8
        let w = fitness_shape(&[0.0, 0.0, 1.0, 5.0]).unwrap();
        assert_eq!(w, vec![-0.25, -0.25, 0.125, 0.375]);
    }

    #[test]
    fn shaping_rejects_bad_input() {
        assert!(fitness_shape(&[1.0]).is_err());
        match fitness_shape(&[1.0, f64::NAN, 2.0]) {
            Err(Error::Fitness { sample: Some(1), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shaping_is_rank_invariant() {
        let f = [0.3, -1.2, 2.5, 0.0, 1.7];
        let g: Vec<f64> = f.iter().map(|v: &f64| v.exp()).collect();
        assert_eq!(fitness_shape(&f).unwrap(), fitness_shape(&g).unwrap());
    }

    #[test]
    fn estimator_small_cases() {
        let mean = vec![1.0, 1.0];
        let samples = vec![vec![0.0, 2.0], vec![3.0, 5.0]];
        assert_eq!(estimate_natural_gradient(&samples, &[0.0, 0.0], &mean).unwrap(), vec![0.0, 0.0]);
        let w = 0.8;
        let g = estimate_natural_gradient(&samples, &[-w, w], &mean).unwrap();
        let expected: Vec<f64> = (0..2).map(|k| w / 2.0 * (samples[1][k] - samples[0][k])).collect();
        for k in 0..2 {
            assert!((g[k] - expected[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn population_members_are_independent_of_batch() {
        let d = DenoisingDistribution::new(vec![0.2, -0.1, 3.0], 0.5, 12).unwrap();
        let rng = pop_rng(9);
        let batch = sample_population(&d, 6, &rng);
        for (i, x) in batch.iter().enumerate() {
            assert_eq!(x, &sample_member(&d, i, &rng));
        }
        let zero = DenoisingDistribution::new(vec![1.0, 2.0], 0.0, 3).unwrap();
        assert!(sample_population(&zero, 4, &rng).iter().all(|x| x == &zero.mean));
    }

    #[test]
    fn population_mean_matches() {
        // n = 1e5, σ = 1: 4·SE = 0.0126
        let d = DenoisingDistribution::new(vec![0.7], 1.0, 4).unwrap();
        let xs = sample_population(&d, 100_000, &pop_rng(1));
        let m = xs.iter().map(|x| x[0]).sum::<f64>() / xs.len() as f64;
        assert!((m - 0.7).abs() <= 0.013);
    }

    #[test]
    fn constant_fitness_is_neutral() {
        let d = DenoisingDistribution::new(vec![0.3, -0.4, 1.1], 0.2, 8).unwrap();
        let f = FnFitness::new("const", 3, |_| Ok(4.2));
        let cfg = GuidanceConfig::new(5.0, 16, GuidanceWindow::last(10));
        let out = guide_step(&d, &f, &cfg, None, &pop_rng(2)).unwrap();
        assert_eq!(out.dist, d);
        assert_eq!(out.diagnostics.update_norm, 0.0);
    }

    #[test]
    fn monotone_transform_gives_identical_mean() {
        let d = DenoisingDistribution::new(vec![0.3, -0.4, 1.1], 0.2, 8).unwrap();
        let f = LinearFitness::new(vec![1.0, -2.0, 0.5]);
        let g = FnFitness::new("affine", 3, move |x| Ok(2.0 * (x[0] - 2.0 * x[1] + 0.5 * x[2]) + 7.0));
        let cfg = GuidanceConfig::new(3.0, 20, GuidanceWindow::last(10));
        let a = guide_step(&d, &f, &cfg, None, &pop_rng(5)).unwrap();
        let b = guide_step(&d, &g, &cfg, None, &pop_rng(5)).unwrap();
        assert_eq!(a.dist.mean, b.dist.mean);
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let d = DenoisingDistribution::new(vec![0.1; 5], 0.3, 2).unwrap();
        let f = FnFitness::new("wavy", 5, |x| Ok(x.iter().map(|v| (3.0 * v).sin()).sum()));
        let mut cfg = GuidanceConfig::new(2.0, 64, GuidanceWindow::last(5));
        let a = guide_step(&d, &f, &cfg, None, &pop_rng(3)).unwrap();
        cfg.parallel_eval = false;
        let b = guide_step(&d, &f, &cfg, None, &pop_rng(3)).unwrap();
        assert_eq!(a.dist, b.dist);
        assert_eq!(a.population, b.population);
    }

    #[test]
    fn fitness_failure_reports_sample() {
        let d = DenoisingDistribution::new(vec![0.0; 2], 1.0, 6).unwrap();
        let f = FnFitness::new("picky", 2, |x| {
            if x[0] > 0.0 {
                Err(FitnessError::Solver("refused".into()))
            } else {
                Ok(0.0)
            }
        });
        let cfg = GuidanceConfig::new(1.0, 32, GuidanceWindow::last(6));
        let err = guide_step(&d, &f, &cfg, None, &pop_rng(0)).err().unwrap();
        let first_positive = sample_population(&d, 32, &pop_rng(0)).iter().position(|x| x[0] > 0.0);
        match err {
            Error::Fitness { step: Some(6), sample, .. } => assert_eq!(sample, first_positive),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn x0_mode_requires_context() {
        let d = DenoisingDistribution::new(vec![0.0; 2], 1.0, 6).unwrap();
        let f = LinearFitness::new(vec![1.0, 0.0]);
        let mut cfg = GuidanceConfig::new(1.0, 4, GuidanceWindow::last(6));
        cfg.eval_mode = EvalMode::X0Predicted;
        assert!(matches!(guide_step(&d, &f, &cfg, None, &pop_rng(0)), Err(Error::Config(_))));
    }

    #[test]
    fn baseline_formula() {
        let d = DenoisingDistribution::new(vec![1.0, 1.0], 2.0, 1).unwrap();
        assert_eq!(gradient_guidance_baseline(&d, &[0.0, 0.0], 3.0).unwrap(), d);
        assert_eq!(gradient_guidance_baseline(&d, &[1.0, 0.0], 1.0).unwrap().mean, vec![3.0, 1.0]);
    }

    #[test]
    fn config_validation() {
        assert!(GuidanceConfig::new(1.0, 30, GuidanceWindow::last(50)).validate(100).is_ok());
        assert!(GuidanceConfig::new(0.0, 30, GuidanceWindow::last(50)).validate(100).is_err());
        assert!(GuidanceConfig::new(1.0, 1, GuidanceWindow::last(50)).validate(100).is_err());
        assert!(GuidanceConfig::new(1.0, 30, GuidanceWindow::last(150)).validate(100).is_err());
        assert!(GuidanceConfig::new(1.0, 30, GuidanceWindow { t_high: 3, t_low: 5 }).validate(100).is_err());
        let mut raw = GuidanceConfig::new(1.0, 1, GuidanceWindow::last(5));
        raw.shaping = Shaping::Raw;
        assert!(raw.validate(10).is_ok());
    }

    #[test]
    fn diagnostics_jsonl() {
        let d = StepDiagnostics { t: 3, fitness: vec![1.0, 2.0], weights: vec![-0.25, 0.25], update_norm: 0.5 };
        let mut buf = Vec::new();
        write_diagnostics_jsonl(&mut buf, &[d.clone(), d]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["t"], 3);
        assert_eq!(v["update_norm"], 0.5);
    }
}
