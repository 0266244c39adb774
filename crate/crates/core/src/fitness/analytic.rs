use super::{check_len, FitnessFunction};
use crate::error::FitnessError;

/// `f(x) = g·x`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFitness {
    g: Vec<f64>,
}

impl LinearFitness {
    pub fn new(g: Vec<f64>) -> Self {
        Self { g }
    }

    pub fn gradient(&self, _x: &[f64]) -> Vec<f64> {
        self.g.clone()
    }
}

impl FitnessFunction for LinearFitness {
    fn name(&self) -> &str {
        "linear"
    }
    fn dim(&self) -> usize {
        self.g.len()
    }
    fn evaluate(&self, x: &[f64]) -> Result<f64, FitnessError> {
        check_len(self.g.len(), x)?;
        Ok(self.g.iter().zip(x).map(|(a, b)| a * b).sum())
    }
}

/// `f(x) = xᵀAx + b·x` with symmetric `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticFitness {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl QuadraticFitness {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self, FitnessError> {
        let n = b.len();
        if a.len() != n || a.iter().any(|row| row.len() != n) {
            return Err(FitnessError::Dim { expected: n, got: a.len() });
        }
        for i in 0..n {
            for j in 0..i {
                if a[i][j] != a[j][i] {
                    return Err(FitnessError::Solver(format!("A is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { a, b })
    }

    pub fn diagonal(diag: &[f64], b: Vec<f64>) -> Self {
        let n = diag.len();
        let a = (0..n)
            .map(|i| (0..n).map(|j| if i == j { diag[i] } else { 0.0 }).collect())
            .collect();
        Self { a, b }
    }

    /// `∇f(x) = 2Ax + b`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(row, bi)| 2.0 * row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + bi)
            .collect()
    }
}

impl FitnessFunction for QuadraticFitness {
    fn name(&self) -> &str {
        "quadratic"
    }
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn evaluate(&self, x: &[f64]) -> Result<f64, FitnessError> {
        check_len(self.b.len(), x)?;
        let quad: f64 = self
            .a
            .iter()
            .zip(x)
            .map(|(row, xi)| xi * row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
            .sum();
        Ok(quad + self.b.iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
    }
}

/// Adapter turning a closure into a fitness function.
pub struct FnFitness<F> {
    name: String,
    dim: usize,
    f: F,
}

impl<F> FnFitness<F>
where
    F: Fn(&[f64]) -> Result<f64, FitnessError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, dim: usize, f: F) -> Self {
        Self { name: name.into(), dim, f }
    }
}

impl<F> FitnessFunction for FnFitness<F>
where
    F: Fn(&[f64]) -> Result<f64, FitnessError> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn evaluate(&self, x: &[f64]) -> Result<f64, FitnessError> {
        check_len(self.dim, x)?;
        (self.f)(x)
    }
}
