//! Paired guided/unguided studies and their reports.
//!
//! Every run `k` of an experiment owns a trajectory stream seeded from
//! `(base_seed, k)` that all arms share, so the arms start from the same
//! `x_T` and see the same per-step noise; only the guidance differs.

pub mod config;
pub mod design;
pub mod emit;
pub mod experiment;
pub mod summary;
pub mod synth;
pub mod task;

pub use config::{ArmConfig, DenoiserSpec, ExperimentConfig};
pub use design::{load_designs, Design, DesignKind};
pub use emit::{emit_csv, emit_json, emit_svg_histogram, load_json, ResultsWriter};
pub use experiment::{objective_curve, run_paired_experiment, ArmResult, PairedRunResult};
pub use summary::{summarize, summarize_experiment, ExperimentSummary, HistogramSummary};
pub use synth::{has_through_path, synth_stack_dataset, synth_topology_dataset};
pub use task::{Task, TaskSpec};
