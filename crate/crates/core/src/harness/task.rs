use serde::{Deserialize, Serialize};

use crate::error::{Error, FitnessError, Result};
use crate::fitness::tmm::frequency_grid;
use crate::fitness::{
    parabola_target, FitnessFunction, FlowFitness, FlowParams, MagnitudeMode, MetasurfaceFitness, StackParams,
};

/// A design task: what the guidance maximizes and what is reported.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    /// Minimize pressure drop of a `width × height` channel layout.
    Flow {
        width: usize,
        height: usize,
        #[serde(default)]
        params: FlowParams,
    },
    /// Match a parabolic transmission profile with a layered stack.
    Metasurface {
        layers: usize,
        n_freq: usize,
        f_min: f64,
        f_max: f64,
        #[serde(default)]
        stack: StackParams,
        #[serde(default)]
        magnitude: MagnitudeMode,
    },
    /// Pull samples toward a target point; no physics.
    GmmToy { target: Vec<f64> },
}

impl TaskSpec {
    /// 16×16 grid with centred inlet and outlet ports of a quarter of the height.
    pub fn flow_default() -> Self {
        Self::flow_with_ports(16, 16)
    }

    pub fn flow_with_ports(width: usize, height: usize) -> Self {
        let ports = centred_ports(height);
        TaskSpec::Flow {
            width,
            height,
            params: FlowParams { inlet_cols: Some(ports), outlet_cols: Some(ports), ..FlowParams::default() },
        }
    }

    /// Whole left and right edges as ports.
    pub fn flow_open(width: usize, height: usize) -> Self {
        TaskSpec::Flow { width, height, params: FlowParams::default() }
    }

    pub fn metasurface_default() -> Self {
        TaskSpec::Metasurface {
            layers: 32,
            n_freq: 64,
            f_min: METASURFACE_BAND.0,
            f_max: METASURFACE_BAND.1,
            stack: StackParams::default(),
            magnitude: MagnitudeMode::Modulus,
        }
    }

    pub fn gmm_toy_default() -> Self {
        TaskSpec::GmmToy { target: vec![2.0, 2.0] }
    }

    /// Registry of the named default tasks.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "flow" => Ok(Self::flow_default()),
            "flow_open" => Ok(Self::flow_open(16, 16)),
            "metasurface" => Ok(Self::metasurface_default()),
            "gmm_toy" => Ok(Self::gmm_toy_default()),
            other => Err(Error::Config(format!("unknown fitness '{other}' (known: flow, flow_open, metasurface, gmm_toy)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::Flow { .. } => "flow",
            TaskSpec::Metasurface { .. } => "metasurface",
            TaskSpec::GmmToy { .. } => "gmm_toy",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TaskSpec::Flow { width, height, .. } => width * height,
            TaskSpec::Metasurface { layers, .. } => *layers,
            TaskSpec::GmmToy { target } => target.len(),
        }
    }

    pub fn build(&self) -> Result<Task> {
        match self {
            TaskSpec::Flow { width, height, params } => {
                if *width < 2 || *height < 2 {
                    return Err(Error::Config(format!("flow grid must be at least 2x2, got {width}x{height}")));
                }
                Ok(Task::Flow(FlowFitness::new(*width, *height, params.clone())))
            }
            TaskSpec::Metasurface { layers, n_freq, f_min, f_max, stack, magnitude } => {
                if *layers == 0 || !(*f_min > 0.0 && f_max >= f_min) {
                    return Err(Error::Config("metasurface needs layers > 0 and 0 < f_min <= f_max".into()));
                }
                let target = parabola_target(*n_freq).map_err(|e| Error::Config(e.to_string()))?;
                Ok(Task::Metasurface(MetasurfaceFitness {
                    layers: *layers,
                    params: stack.clone(),
                    target,
                    freqs: frequency_grid(*n_freq, *f_min, *f_max),
                    mode: *magnitude,
                }))
            }
            TaskSpec::GmmToy { target } => {
                if target.is_empty() {
                    return Err(Error::Config("gmm_toy target must be non-empty".into()));
                }
                Ok(Task::GmmToy(ToyFitness { target: target.clone() }))
            }
        }
    }
}

/// Rows `[h/2 − q, h/2 + q)` with `q = max(1, h/8)`.
pub fn centred_ports(height: usize) -> (usize, usize) {
    let q = (height / 8).max(1);
    (height / 2 - q.min(height / 2), (height / 2 + q).min(height))
}

/// Default frequency band of the metasurface task.
pub const METASURFACE_BAND: (f64, f64) = (0.02, 0.1);

/// `−‖x − target‖²`.
#[derive(Clone, Debug)]
pub struct ToyFitness {
    pub target: Vec<f64>,
}

impl ToyFitness {
    pub fn distance_sq(&self, x: &[f64]) -> Result<f64, FitnessError> {
        crate::fitness::check_len(self.target.len(), x)?;
        Ok(x.iter().zip(&self.target).map(|(a, b)| (a - b).powi(2)).sum())
    }
}

impl FitnessFunction for ToyFitness {
    fn name(&self) -> &str {
        "gmm_toy"
    }
    fn dim(&self) -> usize {
        self.target.len()
    }
    fn evaluate(&self, x: &[f64]) -> Result<f64, FitnessError> {
        Ok(-self.distance_sq(x)?)
    }
}

pub enum Task {
    Flow(FlowFitness),
    Metasurface(MetasurfaceFitness),
    GmmToy(ToyFitness),
}

impl Task {
    pub fn fitness(&self) -> &dyn FitnessFunction {
        match self {
            Task::Flow(f) => f,
            Task::Metasurface(f) => f,
            Task::GmmToy(f) => f,
        }
    }

    pub fn dim(&self) -> usize {
        self.fitness().dim()
    }

    /// Reported objective, lower is better: `Δp`, MAE or squared distance.
    pub fn objective(&self, x: &[f64]) -> Result<f64, FitnessError> {
        match self {
            Task::Flow(f) => f.delta_p(x),
            Task::Metasurface(f) => f.mae(x),
            Task::GmmToy(f) => f.distance_sq(x),
        }
    }

    pub fn objective_name(&self) -> &'static str {
        match self {
            Task::Flow(_) => "delta_p",
            Task::Metasurface(_) => "mae",
            Task::GmmToy(_) => "distance_sq",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry() {
        assert_eq!(TaskSpec::by_name("flow").unwrap().dim(), 256);
        assert_eq!(TaskSpec::by_name("metasurface").unwrap().dim(), 32);
        assert!(matches!(TaskSpec::by_name("cfd"), Err(Error::Config(_))));
    }

    #[test]
    fn flow_objective_of_open_grid() {
        assert_eq!(centred_ports(16), (6, 10));
        assert_eq!(centred_ports(2), (0, 2));
        let full = TaskSpec::by_name("flow_open").unwrap();
        let dp = full.build().unwrap().objective(&vec![1.0; 256]).unwrap();
        assert!((dp - 15.0 / 16.0).abs() < 1e-8);
        let task = TaskSpec::flow_default().build().unwrap();
        let dp = task.objective(&vec![1.0; 256]).unwrap();
        assert!(dp > 15.0 / 16.0 && dp < 15.0 / 4.0);
        assert!((task.fitness().evaluate(&vec![1.0; 256]).unwrap() + dp.ln() / 5.0).abs() < 1e-15);
    }

    #[test]
    fn spec_json_shape() {
        let spec: TaskSpec = serde_json::from_str(r#"{"kind": "flow", "width": 8, "height": 6}"#).unwrap();
        assert_eq!(spec.dim(), 48);
        assert!(serde_json::from_str::<TaskSpec>(r#"{"kind": "flow", "width": 8, "height": 6, "typo": 1}"#).is_err());
        let toy = TaskSpec::gmm_toy_default();
        let back: TaskSpec = serde_json::from_str(&serde_json::to_string(&toy).unwrap()).unwrap();
        assert_eq!(back, toy);
    }
}
