//! Exact denoiser for a diagonal Gaussian-mixture data prior.
//!
//! Under the forward process `x_t = √ᾱ x0 + √(1−ᾱ) ε`, component `k` with
//! mean `m_k` and diagonal covariance `S_k` has marginal
//! `N(√ᾱ m_k, ᾱ S_k + (1−ᾱ) I)`, and conditional clean mean
//! `m_k + S_k √ᾱ (x_t − √ᾱ m_k) / (ᾱ S_k + 1 − ᾱ)`. `E[x0 | x_t]` blends those
//! with responsibilities computed in log space.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{Denoiser, DenoisingDistribution};
use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;
use crate::schedule::NoiseSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMixturePrior {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Per-coordinate variances of each component.
    pub variances: Vec<Vec<f64>>,
}

impl GaussianMixturePrior {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let prior = Self { weights, means, variances };
        prior.validate()?;
        Ok(prior)
    }

    /// Equal-weight mixture with one isotropic component per data point.
    pub fn from_points(points: &[Vec<f64>], variance: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        let k = points.len();
        let dim = points[0].len();
        Self::new(vec![1.0 / k as f64; k], points.to_vec(), vec![vec![variance; dim]; k])
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if self.means.len() != k || self.variances.len() != k {
            return Err(Error::Config("mixture weights, means and variances differ in length".into()));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("mixture weights must be nonnegative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
        }
        let dim = self.means[0].len();
        for (m, v) in self.means.iter().zip(&self.variances) {
            check_dim(dim, m.len())?;
            check_dim(dim, v.len())?;
            if v.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(Error::Config("mixture variances must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Posterior component probabilities given `x_t`; sum to 1.
    pub fn responsibilities(&self, x_t: &[f64], ab: f64) -> Vec<f64> {
        let sab = ab.sqrt();
        let logs: Vec<f64> = (0..self.components())
            .map(|k| {
                if self.weights[k] == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let mut ll = self.weights[k].ln();
                // variances repeat across coordinates; reuse the log term
                let (mut last, mut log_term, mut inv_var) = (f64::NAN, 0.0, 1.0);
                for ((x, m), s) in x_t.iter().zip(&self.means[k]).zip(&self.variances[k]) {
                    if *s != last {
                        last = *s;
                        let var = ab * s + (1.0 - ab);
                        log_term = (2.0 * PI * var).ln();
                        inv_var = 1.0 / var;
                    }
                    let d = x - sab * m;
                    ll -= 0.5 * (log_term + d * d * inv_var);
                }
                ll
            })
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = unnorm.iter().sum();
        unnorm.into_iter().map(|u| u / z).collect()
    }

    /// `E[x0 | x_t]` when `x_t` was noised with cumulative signal `ab`.
    pub fn posterior_mean_at(&self, x_t: &[f64], ab: f64) -> Vec<f64> {
        if ab >= 1.0 {
            return x_t.to_vec();
        }
        let resp = self.responsibilities(x_t, ab);
        let sab = ab.sqrt();
        let mut out = vec![0.0; x_t.len()];
        for (k, r) in resp.iter().enumerate() {
            if *r == 0.0 {
                continue;
            }
            let (mut last, mut gain) = (f64::NAN, 0.0);
            for ((o, m), (s, x)) in out.iter_mut().zip(&self.means[k]).zip(self.variances[k].iter().zip(x_t)) {
                if *s != last {
                    last = *s;
                    gain = s * sab / (ab * s + 1.0 - ab);
                }
                *o += r * (m + gain * (x - sab * m));
            }
        }
        out
    }

    /// Direct draw from the mixture using a dataset stream.
    pub fn sample(&self, rng: &RngStream) -> Vec<f64> {
        let mut g = rng.generator();
        let u: f64 = g.gen();
        let mut acc = 0.0;
        let mut k = self.components() - 1;
        for (j, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = j;
                break;
            }
        }
        self.means[k]
            .iter()
            .zip(&self.variances[k])
            .map(|(m, s)| m + s.sqrt() * g.sample::<f64, _>(StandardNormal))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let prior: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        prior.validate()?;
        Ok(prior)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn gmm_posterior_x0_mean(prior: &GaussianMixturePrior, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    check_dim(prior.dim(), x_t.len())?;
    if t > schedule.steps() {
        return Err(Error::StepOutOfRange { t, steps: schedule.steps() });
    }
    Ok(prior.posterior_mean_at(x_t, schedule.alpha_bar(t)))
}

pub fn gmm_denoise(prior: &GaussianMixturePrior, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<DenoisingDistribution> {
    schedule.check_step(t)?;
    let x0 = gmm_posterior_x0_mean(prior, x_t, t, schedule)?;
    DenoisingDistribution::new(schedule.posterior_mean(&x0, x_t, t), schedule.step_variance(t), t)
}

#[derive(Clone, Debug)]
pub struct GmmDenoiser {
    pub prior: GaussianMixturePrior,
}

impl GmmDenoiser {
    pub fn new(prior: GaussianMixturePrior) -> Self {
        Self { prior }
    }
}

impl Denoiser for GmmDenoiser {
    fn dim(&self) -> usize {
        self.prior.dim()
    }
    fn denoise(&self, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<DenoisingDistribution> {
        gmm_denoise(&self.prior, x_t, t, schedule)
    }
    fn predict_x0(&self, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        gmm_posterior_x0_mean(&self.prior, x_t, t, schedule)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamLabel;
    use crate::schedule::ScheduleParams;

    fn schedule() -> NoiseSchedule {
        ScheduleParams::default().build().unwrap()
    }

    #[test]
    fn standard_normal_component() {
        let prior = GaussianMixturePrior::new(vec![1.0], vec![vec![0.0, 0.0]], vec![vec![1.0, 1.0]]).unwrap();
        let s = schedule();
        for t in [1, 20, 70, 100] {
            let x = [0.8, -1.3];
            let got = gmm_posterior_x0_mean(&prior, &x, t, &s).unwrap();
            let sab = s.alpha_bar(t).sqrt();
            for i in 0..2 {
                assert!((got[i] - sab * x[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn symmetric_pair_at_origin() {
        let prior = GaussianMixturePrior::new(
            vec![0.5, 0.5],
            vec![vec![2.0, -1.0], vec![-2.0, 1.0]],
            vec![vec![0.3, 0.3], vec![0.3, 0.3]],
        )
        .unwrap();
        let got = gmm_posterior_x0_mean(&prior, &[0.0, 0.0], 40, &schedule()).unwrap();
        assert!(got.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn responsibilities_survive_extreme_distances() {
        let prior = GaussianMixturePrior::new(
            vec![0.5, 0.5],
            vec![vec![50.0], vec![-50.0]],
            vec![vec![1e-4], vec![1e-4]],
        )
        .unwrap();
        let r = prior.responsibilities(&[49.0], 0.999);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r[0] > 1.0 - 1e-12);
    }

    #[test]
    fn far_basin_matches_single_component() {
        let s = schedule();
        let two = GaussianMixturePrior::new(
            vec![0.3, 0.7],
            vec![vec![3.0, 3.0], vec![-3.0, -3.0]],
            vec![vec![0.2, 0.5], vec![0.2, 0.2]],
        )
        .unwrap();
        let one = GaussianMixturePrior::new(vec![1.0], vec![vec![3.0, 3.0]], vec![vec![0.2, 0.5]]).unwrap();
        let t = 10;
        let x = [3.0 * s.alpha_bar(t).sqrt(), 3.0 * s.alpha_bar(t).sqrt()];
        assert!(two.responsibilities(&x, s.alpha_bar(t))[1] < 1e-12);
        let a = gmm_denoise(&two, &x, t, &s).unwrap();
        let b = gmm_denoise(&one, &x, t, &s).unwrap();
        for i in 0..2 {
            assert!((a.mean[i] - b.mean[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn first_step_mean_tracks_prediction() {
        let s = schedule();
        let prior = GaussianMixturePrior::new(vec![1.0], vec![vec![1.0]], vec![vec![0.5]]).unwrap();
        let x = [0.9];
        let d = gmm_denoise(&prior, &x, 1, &s).unwrap();
        let x0 = gmm_posterior_x0_mean(&prior, &x, 1, &s).unwrap();
        // at t = 1 the x̂0 coefficient is exactly 1 and the x_t coefficient 0
        assert!((d.mean[0] - x0[0]).abs() < 1e-12);
        assert_eq!(d.variance, s.posterior_var(1));
    }

    #[test]
    fn validation() {
        assert!(GaussianMixturePrior::new(vec![0.6, 0.6], vec![vec![0.0]; 2], vec![vec![1.0]; 2]).is_err());
        assert!(GaussianMixturePrior::new(vec![1.0], vec![vec![0.0]], vec![vec![0.0]]).is_err());
        assert!(GaussianMixturePrior::new(vec![-0.5, 1.5], vec![vec![0.0]; 2], vec![vec![1.0]; 2]).is_err());
        assert!(GaussianMixturePrior::new(vec![1.0], vec![vec![0.0, 1.0]], vec![vec![1.0]]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let prior = GaussianMixturePrior::from_points(&[vec![0.0, 1.0], vec![1.0, 0.0]], 0.05).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prior.json");
        prior.save(&path).unwrap();
        assert_eq!(GaussianMixturePrior::load(&path).unwrap(), prior);
    }

    #[test]
    fn direct_sampling_moments() {
        let prior = GaussianMixturePrior::new(vec![1.0], vec![vec![2.0]], vec![vec![0.25]]).unwrap();
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|i| prior.sample(&RngStream::new(1, StreamLabel::Dataset).at(0, i))[0]).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        assert!((m - 2.0).abs() < 4.0 * 0.5 / (n as f64).sqrt());
    }
}
