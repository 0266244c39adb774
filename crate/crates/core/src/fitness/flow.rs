//! Pressure drop of a 2-D channel layout under Darcy-type flow.
//!
//! The design grid is read as a binary mask (fluid iff the clamped value is
//! above 0.5). Each cell is a node of a resistor network: fluid cells carry
//! unit conductance and solid cells a small floor conductance, and adjacent
//! cells are joined by the harmonic mean of their conductances. A total flow
//! `Q` is injected uniformly into the inlet cells on the left edge and drawn
//! uniformly from the outlet cells on the right edge; the pressure field
//! solves the grounded graph-Laplacian system by Jacobi-preconditioned
//! conjugate gradient.

use serde::{Deserialize, Serialize};

use super::{check_len, FitnessFunction};
use crate::error::FitnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignGrid {
    pub width: usize,
    pub height: usize,
    /// Row-major, `values[y * width + x]`.
    pub values: Vec<f64>,
}

impl DesignGrid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, FitnessError> {
        check_len(width * height, &values)?;
        Ok(Self { width, height, values })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, values: vec![value; width * height] }
    }

    pub fn is_fluid(&self, x: usize, y: usize) -> bool {
        self.values[y * self.width + x].clamp(0.0, 1.0) > 0.5
    }

    pub fn mask(&self) -> Vec<bool> {
        self.values.iter().map(|v| v.clamp(0.0, 1.0) > 0.5).collect()
    }

    pub fn fluid_fraction(&self) -> f64 {
        self.mask().iter().filter(|&&m| m).count() as f64 / self.values.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowParams {
    pub solid_conductance_floor: f64,
    /// Half-open row span `[start, end)` of the inlet cells in the left
    /// column; `None` means the whole column.
    pub inlet_cols: Option<(usize, usize)>,
    /// Same for the outlet cells in the right column.
    pub outlet_cols: Option<(usize, usize)>,
    pub flow_rate: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub preconditioner: Preconditioner,
}

/// Preconditioner of the conjugate-gradient pressure solve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    /// Diagonal scaling only. Stalls on designs with fluid islands that are
    /// joined to the rest of the grid only through floor conductances.
    Jacobi,
    /// Banded Cholesky factor of the scaled operator; converges in a few
    /// iterations on every design.
    #[default]
    BandCholesky,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            solid_conductance_floor: 1e-6,
            inlet_cols: None,
            outlet_cols: None,
            flow_rate: 1.0,
            tolerance: 1e-10,
            max_iterations: 50_000,
            preconditioner: Preconditioner::BandCholesky,
        }
    }
}

/// Pressure field and solver statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSolution {
    pub pressure: Vec<f64>,
    pub delta_p: f64,
    pub iterations: usize,
    pub relative_residual: f64,
    /// Relative rounding floor `16ε·(‖b̂‖ + 2‖y‖)/‖b̂‖` at the solution.
    pub relative_floor: f64,
}

/// Grounded conductance network of a design.
#[derive(Clone, Debug)]
pub struct FlowSystem {
    width: usize,
    height: usize,
    /// Grounded 5-point stencil: `diag[i]` and the conductances to the west,
    /// east, north and south neighbours (zero across the boundary and into
    /// the ground column).
    diag: Vec<f64>,
    west: Vec<f64>,
    east: Vec<f64>,
    north: Vec<f64>,
    south: Vec<f64>,
    rhs: Vec<f64>,
    inlets: Vec<usize>,
    outlets: Vec<usize>,
}

fn span(spec: Option<(usize, usize)>, height: usize, which: &str) -> Result<(usize, usize), FitnessError> {
    let (a, b) = spec.unwrap_or((0, height));
    if a < b && b <= height {
        Ok((a, b))
    } else {
        Err(FitnessError::Solver(format!("{which} rows [{a}, {b}) invalid for height {height}")))
    }
}

impl FlowSystem {
    pub fn assemble(design: &DesignGrid, params: &FlowParams) -> Result<Self, FitnessError> {
        let (w, h) = (design.width, design.height);
        if w < 2 || h < 2 {
            return Err(FitnessError::Solver(format!("flow grid must be at least 2x2, got {w}x{h}")));
        }
        check_len(w * h, &design.values)?;
        if !(params.solid_conductance_floor > 0.0 && params.flow_rate > 0.0) {
            return Err(FitnessError::Solver("conductance floor and flow rate must be positive".into()));
        }
        let cell: Vec<f64> = design
            .mask()
            .into_iter()
            .map(|fluid| if fluid { 1.0 } else { params.solid_conductance_floor })
            .collect();
        let harmonic = |a: f64, b: f64| 2.0 * a * b / (a + b);
        let n = w * h;
        let (mut west, mut east, mut north, mut south) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    let c = harmonic(cell[i], cell[i + 1]);
                    east[i] = c;
                    west[i + 1] = c;
                }
                if y + 1 < h {
                    let c = harmonic(cell[i], cell[i + w]);
                    south[i] = c;
                    north[i + w] = c;
                }
            }
        }
        let (i0, i1) = span(params.inlet_cols, h, "inlet")?;
        let (o0, o1) = span(params.outlet_cols, h, "outlet")?;
        let inlets: Vec<usize> = (i0..i1).map(|y| y * w).collect();
        let outlets: Vec<usize> = (o0..o1).map(|y| y * w + w - 1).collect();
        let mut rhs = vec![0.0; w * h];
        let q_in = params.flow_rate / inlets.len() as f64;
        let q_out = params.flow_rate / outlets.len() as f64;
        for &i in &inlets {
            rhs[i] += q_in;
        }
        for &o in &outlets {
            rhs[o] -= q_out;
        }
        let ground = outlets[0];
        rhs[ground] = 0.0;
        let mut diag: Vec<f64> = (0..n).map(|i| west[i] + east[i] + north[i] + south[i]).collect();
        // identity row for the ground node, and its column dropped elsewhere
        diag[ground] = 1.0;
        for c in [&mut west, &mut east, &mut north, &mut south] {
            c[ground] = 0.0;
        }
        if ground % w > 0 {
            east[ground - 1] = 0.0;
        }
        if ground % w + 1 < w {
            west[ground + 1] = 0.0;
        }
        if ground >= w {
            south[ground - w] = 0.0;
        }
        if ground + w < n {
            north[ground + w] = 0.0;
        }
        Ok(Self { width: w, height: h, diag, west, east, north, south, rhs, inlets, outlets })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// Row `i` of the grounded operator: the ground node is an identity row
    /// and its column is dropped, which keeps the operator symmetric.
    pub fn apply(&self, p: &[f64], out: &mut [f64]) {
        let (w, n) = (self.width, self.len());
        for i in 0..n {
            let mut acc = self.diag[i] * p[i];
            if i >= 1 {
                acc -= self.west[i] * p[i - 1];
            }
            if i + 1 < n {
                acc -= self.east[i] * p[i + 1];
            }
            if i >= w {
                acc -= self.north[i] * p[i - w];
            }
            if i + w < n {
                acc -= self.south[i] * p[i + w];
            }
            out[i] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.diag.clone()
    }

    /// Dense copy of the grounded operator.
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut m = vec![vec![0.0; n]; n];
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            for i in 0..n {
                m[i][j] = col[i];
            }
            e[j] = 0.0;
        }
        m
    }

    pub fn delta_p(&self, pressure: &[f64]) -> f64 {
        let mean = |idx: &[usize]| idx.iter().map(|&i| pressure[i]).sum::<f64>() / idx.len() as f64;
        mean(&self.inlets) - mean(&self.outlets)
    }

    pub fn solve(&self, tolerance: f64, max_iterations: usize) -> Result<FlowSolution, FitnessError> {
        self.solve_with(tolerance, max_iterations, Preconditioner::Jacobi)
    }

    pub fn solve_with(
        &self,
        tolerance: f64,
        max_iterations: usize,
        preconditioner: Preconditioner,
    ) -> Result<FlowSolution, FitnessError> {
        let diagonal = self.diagonal();
        let apply = |p: &[f64], out: &mut [f64]| self.apply(p, out);
        let cg = match preconditioner {
            Preconditioner::Jacobi => conjugate_gradient(apply, &diagonal, &self.rhs, tolerance, max_iterations)?,
            Preconditioner::BandCholesky => {
                let factor = BandCholesky::factor_scaled(self)?;
                preconditioned_cg(apply, &diagonal, |r, z| factor.solve_into(r, z), &self.rhs, tolerance, max_iterations)?
            }
        };
        let delta_p = self.delta_p(&cg.x);
        Ok(FlowSolution {
            pressure: cg.x,
            delta_p,
            iterations: cg.iterations,
            relative_residual: cg.relative_residual,
            relative_floor: cg.relative_floor,
        })
    }
}

/// Cholesky factor `L` of the Jacobi-scaled grounded operator, stored as a
/// band of half-width `W` in row-major node order.
struct BandCholesky {
    n: usize,
    band: usize,
    /// `l[i * (band + 1) + (i − j)] = L[i][j]` for `i − band <= j <= i`.
    l: Vec<f64>,
}

impl BandCholesky {
    fn factor_scaled(system: &FlowSystem) -> Result<Self, FitnessError> {
        let (n, band) = (system.len(), system.width);
        let stride = band + 1;
        let inv_sqrt: Vec<f64> = system.diag.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut l = vec![0.0; n * stride];
        // lower triangle of the scaled operator: unit diagonal, west and north couplings
        for i in 0..n {
            l[i * stride] = 1.0;
            if i >= 1 {
                l[i * stride + 1] = -system.west[i] * inv_sqrt[i] * inv_sqrt[i - 1];
            }
            if i >= band {
                l[i * stride + band] = -system.north[i] * inv_sqrt[i] * inv_sqrt[i - band];
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(band);
            for j in lo..=i {
                let lo_k = lo.max(j.saturating_sub(band));
                let mut acc = l[i * stride + (i - j)];
                for k in lo_k..j {
                    acc -= l[i * stride + (i - k)] * l[j * stride + (j - k)];
                }
                if i == j {
                    if !(acc > 0.0) {
                        return Err(FitnessError::Solver(format!("pressure operator not positive definite at node {i}")));
                    }
                    l[i * stride] = acc.sqrt();
                } else {
                    l[i * stride + (i - j)] = acc / l[j * stride];
                }
            }
        }
        Ok(Self { n, band, l })
    }

    /// `z = (L Lᵀ)⁻¹ r`.
    fn solve_into(&self, r: &[f64], z: &mut [f64]) {
        let stride = self.band + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(self.band);
            let mut acc = r[i];
            for k in lo..i {
                acc -= self.l[i * stride + (i - k)] * z[k];
            }
            z[i] = acc / self.l[i * stride];
        }
        for i in (0..self.n).rev() {
            let hi = (i + self.band).min(self.n - 1);
            let mut acc = z[i];
            for k in i + 1..=hi {
                acc -= self.l[k * stride + (k - i)] * z[k];
            }
            z[i] = acc / self.l[i * stride];
        }
    }
}

/// Conjugate gradient on the symmetrically Jacobi-scaled system
/// `D^{-1/2} A D^{-1/2} y = D^{-1/2} b`, `x = D^{-1/2} y`.
///
/// This is Jacobi-preconditioned CG; iterating on the scaled variables keeps
/// the rounding floor of the residual independent of the conductance
/// contrast. The residual is recomputed from scratch before acceptance.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    diagonal: &[f64],
    b: &[f64],
    tolerance: f64,
    max_iterations: usize,
) -> Result<CgSolution, FitnessError> {
    preconditioned_cg(apply, diagonal, |r, z| z.copy_from_slice(r), b, tolerance, max_iterations)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖b̂ − Â y‖ / ‖b̂‖`, recomputed from scratch.
    pub relative_residual: f64,
    /// Rounding floor of the residual relative to `‖b̂‖`.
    pub relative_floor: f64,
}

/// Preconditioned CG on the Jacobi-scaled system of [`conjugate_gradient`];
/// `precondition(r, z)` applies an SPD approximation of the inverse of the
/// scaled operator.
///
/// Converged means `‖r‖ <= max(tolerance·‖b̂‖, 16ε·(‖b̂‖ + 2‖y‖))`. The
/// second term is the rounding floor of the residual: when pressures are
/// large (blocked designs) it exceeds `tolerance·‖b̂‖` and iterating past it
/// only amplifies rounding. `‖Â‖ <= 2` for the unit-diagonal, diagonally
/// dominant scaled operator.
pub fn preconditioned_cg(
    apply: impl Fn(&[f64], &mut [f64]),
    diagonal: &[f64],
    precondition: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    tolerance: f64,
    max_iterations: usize,
) -> Result<CgSolution, FitnessError> {
    let n = b.len();
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let inv_sqrt: Vec<f64> = diagonal.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut scratch = vec![0.0; n];
    let scaled_apply = |y: &[f64], out: &mut [f64], scratch: &mut Vec<f64>| {
        for k in 0..n {
            scratch[k] = y[k] * inv_sqrt[k];
        }
        apply(scratch, out);
        for k in 0..n {
            out[k] *= inv_sqrt[k];
        }
    };
    let b_hat: Vec<f64> = b.iter().zip(&inv_sqrt).map(|(v, s)| v * s).collect();
    let b_norm = dot(&b_hat, &b_hat).sqrt();
    let mut y = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(CgSolution { x: y, iterations: 0, relative_residual: 0.0, relative_floor: 0.0 });
    }
    let mut r = b_hat.clone();
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 1..=max_iterations {
        scaled_apply(&p, &mut ap, &mut scratch);
        let step = rz / dot(&p, &ap);
        for k in 0..n {
            y[k] += step * p[k];
            r[k] -= step * ap[k];
        }
        let floor = 16.0 * f64::EPSILON * (b_norm + 2.0 * dot(&y, &y).sqrt());
        let accept = (tolerance * b_norm).max(floor);
        if dot(&r, &r).sqrt() <= accept {
            // confirm against the true residual; the recurrence can drift
            scaled_apply(&y, &mut ap, &mut scratch);
            for k in 0..n {
                r[k] = b_hat[k] - ap[k];
            }
            let res = dot(&r, &r).sqrt();
            if res <= accept {
                return Ok(CgSolution {
                    x: y.iter().zip(&inv_sqrt).map(|(v, s)| v * s).collect(),
                    iterations: it,
                    relative_residual: res / b_norm,
                    relative_floor: floor / b_norm,
                });
            }
        }
        precondition(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(FitnessError::Solver(format!("conjugate gradient did not reach {tolerance:e} in {max_iterations} iterations")))
}

/// Inlet-minus-outlet mean pressure of `design`.
pub fn grid_flow_delta_p(design: &DesignGrid, params: &FlowParams) -> Result<f64, FitnessError> {
    let system = FlowSystem::assemble(design, params)?;
    Ok(system.solve_with(params.tolerance, params.max_iterations, params.preconditioner)?.delta_p)
}

/// `−ln(Δp) / 5`: larger for lower pressure drop.
pub fn flow_fitness(delta_p: f64) -> Result<f64, FitnessError> {
    if delta_p > 0.0 && delta_p.is_finite() {
        Ok(-delta_p.ln() / 5.0)
    } else {
        Err(FitnessError::Solver(format!("pressure drop must be positive, got {delta_p}")))
    }
}

/// Flow fitness on a fixed grid shape.
#[derive(Clone, Debug)]
pub struct FlowFitness {
    pub width: usize,
    pub height: usize,
    pub params: FlowParams,
}

impl FlowFitness {
    pub fn new(width: usize, height: usize, params: FlowParams) -> Self {
        Self { width, height, params }
    }

    pub fn delta_p(&self, x: &[f64]) -> Result<f64, FitnessError> {
        let design = DesignGrid::new(self.width, self.height, x.to_vec())?;
        grid_flow_delta_p(&design, &self.params)
    }
}

impl FitnessFunction for FlowFitness {
    fn name(&self) -> &str {
        "flow"
    }
    fn dim(&self) -> usize {
        self.width * self.height
    }
    fn evaluate(&self, x: &[f64]) -> Result<f64, FitnessError> {
        flow_fitness(self.delta_p(x)?)
    }
}
