//! Black-box fitness evaluators. Higher is better.

mod analytic;
pub mod flow;
pub mod tmm;

pub use analytic::{FnFitness, LinearFitness, QuadraticFitness};
pub use flow::{flow_fitness, grid_flow_delta_p, DesignGrid, FlowFitness, FlowParams, Preconditioner};
pub use tmm::{
    parabola_target, tmm_transmission, transmission_mae, LayeredStack, MagnitudeMode, MetasurfaceFitness,
    StackParams, TransmissionTarget,
};

use crate::error::FitnessError;

/// Design vector → scalar fitness to maximize.
///
/// `evaluate` must be pure. Evaluators that declare `concurrent_safe` may be
/// called from several threads at once.
pub trait FitnessFunction: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn concurrent_safe(&self) -> bool {
        true
    }
    fn evaluate(&self, x: &[f64]) -> Result<f64, FitnessError>;
}

pub(crate) fn check_len(expected: usize, x: &[f64]) -> Result<(), FitnessError> {
    if x.len() == expected {
        Ok(())
    } else {
        Err(FitnessError::Dim { expected, got: x.len() })
    }
}
