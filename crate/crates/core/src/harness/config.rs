use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::{synth_stack_dataset, synth_topology_dataset_with, TopologyGenerator};
use super::task::TaskSpec;
use crate::denoisers::{GaussianMixturePrior, GmmDenoiser, MlpDenoiser};
use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::guidance::{GuidanceConfig, GuidanceWindow};
use crate::hash::config_hash;
use crate::rng::{RngStream, StreamLabel};
use crate::schedule::{NoiseSchedule, ScheduleParams};

/// Where the denoiser of an experiment comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DenoiserSpec {
    GmmFile { path: PathBuf },
    MlpFile { path: PathBuf },
    Gmm { prior: GaussianMixturePrior },
    /// Mixture with one component per generated channel layout.
    SynthTopology {
        width: usize,
        height: usize,
        components: usize,
        variance: f64,
        seed: u64,
        #[serde(default)]
        generator: TopologyGenerator,
    },
    /// Mixture with one component per generated layer stack.
    SynthStack {
        layers: usize,
        components: usize,
        variance: f64,
        seed: u64,
        #[serde(default = "default_levels")]
        levels: u32,
    },
}

fn default_levels() -> u32 {
    8
}

impl DenoiserSpec {
    /// Builds the denoiser; synthetic layouts take their ports from a flow `task`.
    pub fn build(&self, schedule: &NoiseSchedule, task: Option<&TaskSpec>) -> Result<Box<dyn Denoiser>> {
        Ok(match self {
            DenoiserSpec::GmmFile { path } => Box::new(GmmDenoiser::new(GaussianMixturePrior::load(path)?)),
            DenoiserSpec::MlpFile { path } => {
                let model = MlpDenoiser::load(path)?;
                if !model.schedule_hash.is_empty() && model.schedule_hash != schedule.hash() {
                    return Err(Error::Config(format!(
                        "model {} was trained under a different schedule",
                        path.display()
                    )));
                }
                Box::new(model)
            }
            DenoiserSpec::Gmm { prior } => {
                prior.validate()?;
                Box::new(GmmDenoiser::new(prior.clone()))
            }
            DenoiserSpec::SynthTopology { .. } | DenoiserSpec::SynthStack { .. } => {
                Box::new(GmmDenoiser::new(self.synth_prior(task)?.expect("synthetic spec")))
            }
        })
    }

    /// The mixture built from a synthetic dataset, if this spec describes one.
    pub fn synth_prior(&self, task: Option<&TaskSpec>) -> Result<Option<GaussianMixturePrior>> {
        let data = match self {
            DenoiserSpec::SynthTopology { width, height, components, seed, generator, .. } => {
                let mut generator = generator.clone();
                if let Some(TaskSpec::Flow { params, .. }) = task {
                    generator.inlet_rows = generator.inlet_rows.or(params.inlet_cols);
                    generator.outlet_rows = generator.outlet_rows.or(params.outlet_cols);
                }
                let rng = RngStream::new(*seed, StreamLabel::Dataset);
                synth_topology_dataset_with(*components, *width, *height, &generator, &rng)?
            }
            DenoiserSpec::SynthStack { layers, components, seed, levels, .. } => {
                synth_stack_dataset(*components, *layers, *levels, &RngStream::new(*seed, StreamLabel::Dataset))?
            }
            _ => return Ok(None),
        };
        let variance = match self {
            DenoiserSpec::SynthTopology { variance, .. } | DenoiserSpec::SynthStack { variance, .. } => *variance,
            _ => unreachable!(),
        };
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::Config(format!("component variance must be positive, got {variance}")));
        }
        GaussianMixturePrior::from_points(&data, variance).map(Some)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let DenoiserSpec::GmmFile { path } | DenoiserSpec::MlpFile { path } = self {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub name: String,
    /// `None` is plain unconditional sampling.
    #[serde(default)]
    pub guidance: Option<GuidanceConfig>,
}

impl ArmConfig {
    pub fn unguided(name: &str) -> Self {
        Self { name: name.to_string(), guidance: None }
    }

    pub fn guided(name: &str, guidance: GuidanceConfig) -> Self {
        Self { name: name.to_string(), guidance: Some(guidance) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub n_runs: usize,
    #[serde(default)]
    pub schedule: ScheduleParams,
    pub denoiser: DenoiserSpec,
    pub arms: Vec<ArmConfig>,
    pub base_seed: u64,
    /// Record per-step objective curves for every arm.
    #[serde(default)]
    pub record_curves: bool,
    #[serde(default = "default_stride")]
    pub curve_stride: usize,
    /// Steps covered by the curves; defaults to the first guided arm's window.
    #[serde(default)]
    pub curve_window: Option<GuidanceWindow>,
    /// Measure wall time per arm. Off by default so that results files are
    /// byte-reproducible.
    #[serde(default)]
    pub timing: bool,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// `(arm_a, arm_b)` pairs to summarize; defaults to every other arm
    /// against the first.
    #[serde(default)]
    pub comparisons: Option<Vec<(String, String)>>,
}

fn default_stride() -> usize {
    1
}

fn default_bins() -> usize {
    20
}

impl ExperimentConfig {
    pub fn new(task: TaskSpec, denoiser: DenoiserSpec, arms: Vec<ArmConfig>, n_runs: usize, base_seed: u64) -> Self {
        Self {
            task,
            n_runs,
            schedule: ScheduleParams::default(),
            denoiser,
            arms,
            base_seed,
            record_curves: false,
            curve_stride: 1,
            curve_window: None,
            timing: false,
            bins: 20,
            comparisons: None,
        }
    }

    /// Reads a config; relative model paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if let Some(dir) = path.parent() {
            cfg.denoiser.resolve_paths(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(Error::Config("experiment needs at least one arm".into()));
        }
        let mut seen = HashSet::new();
        for arm in &self.arms {
            if arm.name.is_empty() || !seen.insert(arm.name.as_str()) {
                return Err(Error::Config(format!("arm names must be unique and non-empty: '{}'", arm.name)));
            }
            if let Some(g) = &arm.guidance {
                g.validate(self.schedule.steps)
                    .map_err(|e| Error::Config(format!("arm '{}': {e}", arm.name)))?;
            }
        }
        if self.curve_stride == 0 {
            return Err(Error::Config("curve_stride must be at least 1".into()));
        }
        if self.bins == 0 {
            return Err(Error::Config("bins must be at least 1".into()));
        }
        if let Some(w) = self.curve_window {
            if !(w.t_low >= 1 && w.t_high >= w.t_low && w.t_high <= self.schedule.steps) {
                return Err(Error::Config("curve_window outside the schedule".into()));
            }
        }
        for (a, b) in self.comparisons() {
            for name in [&a, &b] {
                if !seen.contains(name.as_str()) {
                    return Err(Error::Config(format!("comparison names unknown arm '{name}'")));
                }
            }
        }
        Ok(())
    }

    pub fn comparisons(&self) -> Vec<(String, String)> {
        match &self.comparisons {
            Some(c) => c.clone(),
            None => {
                let first = &self.arms[0].name;
                self.arms[1..].iter().map(|a| (a.name.clone(), first.clone())).collect()
            }
        }
    }

    pub fn curve_window(&self) -> GuidanceWindow {
        self.curve_window
            .or_else(|| self.arms.iter().find_map(|a| a.guidance.as_ref().map(|g| g.window)))
            .unwrap_or(GuidanceWindow { t_high: self.schedule.steps, t_low: 1 })
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ExperimentConfig {
        let prior = GaussianMixturePrior::from_points(&[vec![-1.0, 0.0], vec![1.0, 0.0]], 0.05).unwrap();
        ExperimentConfig::new(
            TaskSpec::gmm_toy_default(),
            DenoiserSpec::Gmm { prior },
            vec![
                ArmConfig::unguided("UD-0"),
                ArmConfig::guided("CD-1", GuidanceConfig::new(1.0, 8, GuidanceWindow::last(50))),
            ],
            3,
            7,
        )
    }

    #[test]
    fn duplicate_arm_rejected() {
        let mut cfg = toy();
        cfg.validate().unwrap();
        cfg.arms.push(ArmConfig::unguided("UD-0"));
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn default_comparisons_against_first_arm() {
        assert_eq!(toy().comparisons(), vec![("CD-1".to_string(), "UD-0".to_string())]);
        assert_eq!(toy().curve_window(), GuidanceWindow::last(50));
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v = serde_json::to_value(toy()).unwrap();
        v["nruns"] = 5.into();
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
    }

    #[test]
    fn hash_tracks_values() {
        let a = toy();
        let mut b = toy();
        assert_eq!(a.hash(), b.hash());
        b.base_seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn synthetic_prior_dimension() {
        let spec = DenoiserSpec::SynthTopology {
            width: 8,
            height: 6,
            components: 5,
            variance: 0.01,
            seed: 1,
            generator: TopologyGenerator::default(),
        };
        let prior = spec.synth_prior(None).unwrap().unwrap();
        assert_eq!((prior.components(), prior.dim()), (5, 48));
        let ported = spec.synth_prior(Some(&TaskSpec::flow_with_ports(8, 6))).unwrap().unwrap();
        assert!(ported.means.iter().all(|m| m[2 * 8] == 1.0 && m[3 * 8] == 1.0));
    }
}
