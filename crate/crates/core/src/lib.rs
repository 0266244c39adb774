//! Gradient-free guided diffusion.
//!
//! A DDPM reverse-process sampler whose per-step denoising mean can be nudged
//! toward higher values of a black-box fitness function. The nudge is a
//! Monte-Carlo natural-gradient estimate built from a small population drawn
//! out of the denoising Gaussian, with rank-based fitness shaping, so the
//! objective never needs to be differentiated.
//!
//! Layout:
//! - [`rng`]: counter-based named random streams.
//! - [`schedule`]: noise schedules and forward noising.
//! - [`diffusion`]: denoising distributions, reverse steps and the outer loop.
//! - [`denoisers`]: analytic Gaussian-mixture denoiser and a small MLP.
//! - [`guidance`]: population sampling, shaping, estimation and the guided step.
//! - [`fitness`]: analytic landscapes, a grid flow solver and a multilayer
//!   transmission solver.
//! - [`harness`]: paired experiments, summaries and report emitters.

pub mod denoisers;
pub mod diffusion;
pub mod error;
pub mod fitness;
pub mod guidance;
pub mod harness;
pub mod hash;
pub mod rng;
pub mod schedule;

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use diffusion::{
    reverse_step, run_denoising, Denoiser, DenoisingDistribution, Guidance, Trajectory,
};
pub use error::{Error, FitnessError, Result};
pub use fitness::FitnessFunction;
pub use guidance::{guide_step, EvalMode, GuidanceConfig, GuidanceWindow, Shaping};
pub use rng::{RngStream, StreamLabel};
pub use schedule::{build_schedule, forward_noise, NoiseSchedule, ScheduleKind, ScheduleParams};
