//! Normal-incidence transmission of a lossless dielectric multilayer.
//!
//! Characteristic-matrix method between vacuum half-spaces, in units where
//! `c = 1` and the default layer thickness is 1. For a layer of index
//! `n = √ε` and thickness `d` at frequency `f` the phase is `δ = 2π f n d` and
//!
//! ```text
//! M = [[cos δ, i sin δ / n], [i n sin δ, cos δ]].
//! ```
//!
//! With `M` the ordered product, `t = 2 / (M11 + M12 + M21 + M22)` and
//! `r = (M11 + M12 − M21 − M22) / (M11 + M12 + M21 + M22)`. The transmitted
//! phase is referenced to free propagation over the same total thickness,
//! so an all-vacuum stack gives `t = 1` exactly; magnitudes are unaffected.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{check_len, FitnessFunction};
use crate::error::FitnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StackParams {
    pub thickness: f64,
    pub eps_min: f64,
    pub eps_max: f64,
    /// Number of discrete permittivity levels; `None` keeps the map continuous.
    pub quantize: Option<u32>,
}

impl Default for StackParams {
    fn default() -> Self {
        Self { thickness: 1.0, eps_min: 1.0, eps_max: 4.0, quantize: Some(8) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayeredStack {
    pub values: Vec<f64>,
    pub params: StackParams,
}

impl LayeredStack {
    pub fn new(values: Vec<f64>, params: StackParams) -> Self {
        Self { values, params }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Clamped values mapped affinely onto `[eps_min, eps_max]`, snapped to
    /// the nearest of `quantize` levels when set.
    pub fn permittivities(&self) -> Vec<f64> {
        let p = &self.params;
        self.values
            .iter()
            .map(|v| {
                let mut u = v.clamp(0.0, 1.0);
                if let Some(q) = p.quantize.filter(|&q| q >= 2) {
                    let levels = (q - 1) as f64;
                    u = (u * levels).round() / levels;
                }
                p.eps_min + (p.eps_max - p.eps_min) * u
            })
            .collect()
    }
}

/// Complex reflection and transmission coefficients at one frequency.
pub fn tmm_coefficients(permittivities: &[f64], thickness: f64, freq: f64) -> (Complex64, Complex64) {
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let mut m = [[one, zero], [zero, one]];
    for &eps in permittivities {
        let n = eps.sqrt();
        let delta = 2.0 * PI * freq * n * thickness;
        let (s, c) = delta.sin_cos();
        let layer = [
            [Complex64::new(c, 0.0), Complex64::new(0.0, s / n)],
            [Complex64::new(0.0, n * s), Complex64::new(c, 0.0)],
        ];
        m = [
            [
                m[0][0] * layer[0][0] + m[0][1] * layer[1][0],
                m[0][0] * layer[0][1] + m[0][1] * layer[1][1],
            ],
            [
                m[1][0] * layer[0][0] + m[1][1] * layer[1][0],
                m[1][0] * layer[0][1] + m[1][1] * layer[1][1],
            ],
        ];
    }
    let denom = m[0][0] + m[0][1] + m[1][0] + m[1][1];
    let free_path = 2.0 * PI * freq * thickness * permittivities.len() as f64;
    let t = 2.0 / denom * Complex64::from_polar(1.0, free_path);
    let r = (m[0][0] + m[0][1] - m[1][0] - m[1][1]) / denom;
    (r, t)
}

/// Complex transmission `t(f)` for each frequency; `(Re t, Im t)` are the
/// real and imaginary transmission components.
pub fn tmm_transmission(stack: &LayeredStack, freqs: &[f64]) -> Vec<Complex64> {
    let eps = stack.permittivities();
    freqs.iter().map(|&f| tmm_coefficients(&eps, stack.params.thickness, f).1).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransmissionTarget {
    pub values: Vec<f64>,
}

impl TransmissionTarget {
    pub fn n_freq(&self) -> usize {
        self.values.len()
    }
}

/// `1 − 2(x − 0.5)²` sampled at `x_j = j / (n − 1)`.
pub fn parabola_target(n: usize) -> Result<TransmissionTarget, FitnessError> {
    if n < 2 {
        return Err(FitnessError::Solver(format!("target needs at least 2 points, got {n}")));
    }
    let values = (0..n)
        .map(|j| {
            let x = j as f64 / (n - 1) as f64;
            1.0 - 2.0 * (x - 0.5) * (x - 0.5)
        })
        .collect();
    Ok(TransmissionTarget { values })
}

/// How the complex transmission is compared with the target magnitudes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MagnitudeMode {
    /// `|t| = √(T_r² + T_i²)` against the target.
    #[default]
    Modulus,
    /// `|T_r|` and `|T_i|` each against the target, averaged.
    ComponentPair,
}

pub fn transmission_mae(
    stack: &LayeredStack,
    target: &TransmissionTarget,
    freqs: &[f64],
    mode: MagnitudeMode,
) -> Result<f64, FitnessError> {
    if freqs.len() != target.n_freq() {
        return Err(FitnessError::Dim { expected: target.n_freq(), got: freqs.len() });
    }
    let t = tmm_transmission(stack, freqs);
    let total: f64 = t
        .iter()
        .zip(&target.values)
        .map(|(tj, y)| match mode {
            MagnitudeMode::Modulus => (tj.norm() - y).abs(),
            MagnitudeMode::ComponentPair => 0.5 * ((tj.re.abs() - y).abs() + (tj.im.abs() - y).abs()),
        })
        .sum();
    Ok(total / freqs.len() as f64)
}

/// Evenly spaced frequencies `f_min..=f_max`.
pub fn frequency_grid(n: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    if n == 1 {
        return vec![f_min];
    }
    (0..n).map(|j| f_min + (f_max - f_min) * j as f64 / (n - 1) as f64).collect()
}

/// `−MAE` against a target profile.
#[derive(Clone, Debug)]
pub struct MetasurfaceFitness {
    pub layers: usize,
    pub params: StackParams,
    pub target: TransmissionTarget,
    pub freqs: Vec<f64>,
    pub mode: MagnitudeMode,
}

impl MetasurfaceFitness {
    pub fn mae(&self, x: &[f64]) -> Result<f64, FitnessError> {
        check_len(self.layers, x)?;
        let stack = LayeredStack::new(x.to_vec(), self.params.clone());
        transmission_mae(&stack, &self.target, &self.freqs, self.mode)
    }
}

impl FitnessFunction for MetasurfaceFitness {
    fn name(&self) -> &str {
        "metasurface"
    }
    fn dim(&self) -> usize {
        self.layers
    }
    fn evaluate(&self, x: &[f64]) -> Result<f64, FitnessError> {
        Ok(-self.mae(x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn continuous() -> StackParams {
        StackParams { quantize: None, ..Default::default() }
    }

    #[test]
    fn vacuum_is_transparent() {
        let stack = LayeredStack::new(vec![0.0; 5], continuous());
        for t in tmm_transmission(&stack, &[0.1, 0.37, 2.0]) {
            assert!((t - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
        let thin = LayeredStack::new(vec![1.0; 3], StackParams { thickness: 0.0, ..continuous() });
        for t in tmm_transmission(&thin, &[0.2, 0.9]) {
            assert!((t - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn half_wave_layer_is_transparent() {
        // ε = 4 → n = 2; δ = π at f = 1 / (2 n d) = 0.25
        let stack = LayeredStack::new(vec![1.0], continuous());
        let t = tmm_transmission(&stack, &[0.25])[0];
        assert!((t.norm() - 1.0).abs() < 1e-12);
        // quarter-wave is not
        assert!(tmm_transmission(&stack, &[0.125])[0].norm() < 0.99);
    }

    #[test]
    fn lossless_energy_balance() {
        let mut s = 12345u64;
        for _ in 0..50 {
            let eps: Vec<f64> = (0..20)
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                    1.0 + 3.0 * ((s >> 11) as f64 / (1u64 << 53) as f64)
                })
                .collect();
            for f in frequency_grid(16, 0.01, 0.5) {
                let (r, t) = tmm_coefficients(&eps, 1.0, f);
                assert!((r.norm_sqr() + t.norm_sqr() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn quantization_snaps_levels() {
        let stack = LayeredStack::new(vec![-1.0, 0.0, 0.5, 0.51, 1.0, 3.0], StackParams::default());
        let eps = stack.permittivities();
        assert_eq!(eps[0], 1.0);
        assert_eq!(eps[1], 1.0);
        assert_eq!(eps[4], 4.0);
        assert_eq!(eps[5], 4.0);
        // 8 levels → spacing 3/7
        for e in &eps {
            let k = (e - 1.0) / (3.0 / 7.0);
            assert!((k - k.round()).abs() < 1e-12);
        }
    }

    #[test]
    fn parabola_values() {
        let t = parabola_target(65).unwrap();
        assert_eq!(t.values[32], 1.0);
        assert_eq!(t.values[0], 0.5);
        for j in 0..65 {
            assert_eq!(t.values[j], t.values[64 - j]);
        }
        assert!(parabola_target(1).is_err());
    }

    #[test]
    fn vacuum_mae_against_parabola() {
        // Oracle: exact finite sum of 2(x_j − 1/2)² over x_j = j/63, j = 0..63,
        // equals (n+1)/(6(n−1)) = 65/378 for n = 64; it tends to 1/6.
        let n = 64;
        let target = parabola_target(n).unwrap();
        let stack = LayeredStack::new(vec![0.0; 4], continuous());
        let freqs = frequency_grid(n, 0.05, 0.3);
        let mae = transmission_mae(&stack, &target, &freqs, MagnitudeMode::Modulus).unwrap();
        assert!((mae - 65.0 / 378.0).abs() < 1e-12, "{mae}");
        assert!((mae - 1.0 / 6.0).abs() < 0.01);
    }

    #[test]
    fn perfect_match_and_permutation_invariance() {
        let stack = LayeredStack::new(vec![0.3, 0.9, 0.1], continuous());
        let freqs = frequency_grid(10, 0.05, 0.4);
        let exact = TransmissionTarget { values: tmm_transmission(&stack, &freqs).iter().map(|t| t.norm()).collect() };
        assert!(transmission_mae(&stack, &exact, &freqs, MagnitudeMode::Modulus).unwrap() < 1e-15);

        let target = parabola_target(10).unwrap();
        let base = transmission_mae(&stack, &target, &freqs, MagnitudeMode::Modulus).unwrap();
        let perm: Vec<usize> = vec![3, 7, 0, 9, 1, 5, 2, 8, 6, 4];
        let pf: Vec<f64> = perm.iter().map(|&k| freqs[k]).collect();
        let pt = TransmissionTarget { values: perm.iter().map(|&k| target.values[k]).collect() };
        let permuted = transmission_mae(&stack, &pt, &pf, MagnitudeMode::Modulus).unwrap();
        assert!((base - permuted).abs() < 1e-14);
        assert!(transmission_mae(&stack, &target, &freqs[..5], MagnitudeMode::Modulus).is_err());
    }

    #[test]
    fn component_pair_mode_differs() {
        let stack = LayeredStack::new(vec![0.7; 6], continuous());
        let freqs = frequency_grid(8, 0.05, 0.4);
        let target = parabola_target(8).unwrap();
        let a = transmission_mae(&stack, &target, &freqs, MagnitudeMode::Modulus).unwrap();
        let b = transmission_mae(&stack, &target, &freqs, MagnitudeMode::ComponentPair).unwrap();
        assert!(a.is_finite() && b.is_finite() && a != b);
    }
}
