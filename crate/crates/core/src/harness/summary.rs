use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::experiment::PairedRunResult;
use crate::error::{Error, Result};

/// Histogram of the paired differences `objective(arm_a) − objective(arm_b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramSummary {
    pub arm_a: String,
    pub arm_b: String,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub median: f64,
    pub mean: f64,
    /// Fraction of runs with a negative difference.
    pub fraction_improved: f64,
    pub n: usize,
}

/// Paired differences over successful runs, in run order.
pub fn paired_differences(results: &[PairedRunResult], arm_a: &str, arm_b: &str) -> Result<Vec<f64>> {
    let mut diffs = Vec::with_capacity(results.len());
    for r in results.iter().filter(|r| !r.failed()) {
        match (r.arm(arm_a), r.arm(arm_b)) {
            (Some(a), Some(b)) => diffs.push(a.objective - b.objective),
            _ => {
                return Err(Error::Config(format!(
                    "run {} lacks arm '{arm_a}' or '{arm_b}'; run sets do not match",
                    r.run_index
                )))
            }
        }
    }
    Ok(diffs)
}

pub fn summarize(results: &[PairedRunResult], arm_a: &str, arm_b: &str, bins: usize) -> Result<HistogramSummary> {
    let diffs = paired_differences(results, arm_a, arm_b)?;
    let (bin_edges, counts) = histogram(&diffs, bins)?;
    let improved = diffs.iter().filter(|d| **d < 0.0).count();
    Ok(HistogramSummary {
        arm_a: arm_a.to_string(),
        arm_b: arm_b.to_string(),
        bin_edges,
        counts,
        median: median(&diffs),
        mean: mean(&diffs),
        fraction_improved: if diffs.is_empty() { 0.0 } else { improved as f64 / diffs.len() as f64 },
        n: diffs.len(),
    })
}

/// Equal-width bins spanning `[min, max]`; the last bin is closed. A
/// constant sample gets the unit-width range centred on its value, an empty
/// one `[0, 1]`.
pub fn histogram(values: &[f64], bins: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("histogram of non-finite values".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if values.is_empty() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    };
    Ok(histogram_with_range(values, bins, lo, hi))
}

fn histogram_with_range(values: &[f64], bins: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<usize>) {
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
    let mut counts = vec![0usize; bins];
    for &v in values {
        let mut b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        // guard against rounding at the bin edges
        while b > 0 && v < edges[b] {
            b -= 1;
        }
        while b + 1 < bins && v >= edges[b + 1] {
            b += 1;
        }
        counts[b] += 1;
    }
    (edges, counts)
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Median; NaN for an empty sample.
pub fn median(values: &[f64]) -> f64 {
    let v = sorted(values);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Mean summed in sorted order, so it does not depend on row order.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    sorted(values).iter().sum::<f64>() / values.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bins {
    pub edges: Vec<f64>,
    /// Per arm, on the shared edges.
    pub counts: BTreeMap<String, Vec<usize>>,
}

/// Whole-experiment summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub arms: Vec<String>,
    pub medians: BTreeMap<String, f64>,
    pub means: BTreeMap<String, f64>,
    /// Keyed `"<arm_a> vs <arm_b>"`.
    pub fraction_improved: BTreeMap<String, f64>,
    pub bins: Bins,
    pub comparisons: Vec<HistogramSummary>,
    pub objective: String,
    pub n_runs: usize,
    pub failures: usize,
}

pub fn comparison_key(arm_a: &str, arm_b: &str) -> String {
    format!("{arm_a} vs {arm_b}")
}

pub fn summarize_experiment(
    results: &[PairedRunResult],
    arms: &[String],
    comparisons: &[(String, String)],
    bins: usize,
    objective: &str,
) -> Result<ExperimentSummary> {
    let ok: Vec<&PairedRunResult> = results.iter().filter(|r| !r.failed()).collect();
    let per_arm: Vec<(String, Vec<f64>)> = arms
        .iter()
        .map(|a| (a.clone(), ok.iter().filter_map(|r| r.arm(a).map(|x| x.objective)).collect()))
        .collect();
    let all: Vec<f64> = per_arm.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    let (edges, _) = histogram(&all, bins)?;
    let (lo, hi) = (edges[0], edges[bins]);
    let mut medians = BTreeMap::new();
    let mut means = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for (a, v) in &per_arm {
        medians.insert(a.clone(), median(v));
        means.insert(a.clone(), mean(v));
        counts.insert(a.clone(), histogram_with_range(v, bins, lo, hi).1);
    }
    let mut fraction_improved = BTreeMap::new();
    let mut hist = Vec::new();
    for (a, b) in comparisons {
        let s = summarize(results, a, b, bins)?;
        fraction_improved.insert(comparison_key(a, b), s.fraction_improved);
        hist.push(s);
    }
    Ok(ExperimentSummary {
        arms: arms.to_vec(),
        medians,
        means,
        fraction_improved,
        bins: Bins { edges, counts },
        comparisons: hist,
        objective: objective.to_string(),
        n_runs: results.len(),
        failures: results.len() - ok.len(),
    })
}

/// Least-squares slope of `objective` against `t`.
pub fn curve_slope(curve: &[(usize, f64)]) -> f64 {
    let n = curve.len() as f64;
    if curve.len() < 2 {
        return 0.0;
    }
    let mt = curve.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let my = curve.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = curve.iter().map(|p| (p.0 as f64 - mt) * (p.1 - my)).sum();
    let sxx: f64 = curve.iter().map(|p| (p.0 as f64 - mt).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Mean of the per-curve slopes with a two-sided 95% Student-t interval.
pub fn slope_confidence_interval(curves: &[Vec<(usize, f64)>]) -> Result<(f64, f64, f64)> {
    if curves.len() < 2 {
        return Err(Error::Config("slope interval needs at least two curves".into()));
    }
    let slopes: Vec<f64> = curves.iter().map(|c| curve_slope(c)).collect();
    let n = slopes.len() as f64;
    let m = mean(&slopes);
    let var = slopes.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (n - 1.0);
    let half = t_quantile_975(n - 1.0) * (var / n).sqrt();
    Ok((m, m - half, m + half))
}

/// 0.975 quantile of Student's t with `df` degrees of freedom
/// (Cornish-Fisher expansion about the normal quantile).
pub fn t_quantile_975(df: f64) -> f64 {
    let z: f64 = 1.959_963_984_540_054;
    let (z3, z5, z7) = (z.powi(3), z.powi(5), z.powi(7));
    z + (z3 + z) / (4.0 * df)
        + (5.0 * z5 + 16.0 * z3 + 3.0 * z) / (96.0 * df * df)
        + (3.0 * z7 + 19.0 * z5 + 17.0 * z3 - 15.0 * z) / (384.0 * df.powi(3))
}
