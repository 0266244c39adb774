//! Design files: `{"kind": "grid" | "stack", "shape": [...], "values": [...]}`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::emit::{emit_json, load_json};
use super::task::TaskSpec;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    /// Row-major `[height, width]` grid.
    Grid,
    /// `[layers]` stack.
    Stack,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Design {
    pub kind: DesignKind,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Design {
    /// Wraps a design vector in the layout `task` expects.
    pub fn for_task(task: &TaskSpec, values: Vec<f64>) -> Self {
        let (kind, shape) = match task {
            TaskSpec::Flow { width, height, .. } => (DesignKind::Grid, vec![*height, *width]),
            _ => (DesignKind::Stack, vec![values.len()]),
        };
        Self { kind, shape, values }
    }

    pub fn validate(&self) -> Result<()> {
        let rank = match self.kind {
            DesignKind::Grid => 2,
            DesignKind::Stack => 1,
        };
        if self.shape.len() != rank {
            return Err(Error::Config(format!("{:?} design needs a rank-{rank} shape, got {:?}", self.kind, self.shape)));
        }
        let n: usize = self.shape.iter().product();
        if n != self.values.len() {
            return Err(Error::DimMismatch { expected: n, got: self.values.len() });
        }
        Ok(())
    }

    /// Whether the layout fits `task`. Non-flow tasks take any stack of the right length.
    pub fn matches(&self, task: &TaskSpec) -> bool {
        match task {
            TaskSpec::Flow { width, height, .. } => self.kind == DesignKind::Grid && self.shape == [*height, *width],
            _ => self.kind == DesignKind::Stack && self.values.len() == task.dim(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let d: Self = load_json(path)?;
        d.validate()?;
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        emit_json(self, path)
    }
}

/// Designs in a file, or in every `*.json` file of a directory in name order.
/// Files that hold a JSON array contribute each element.
pub fn load_designs(path: &Path) -> Result<Vec<(PathBuf, Design)>> {
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    let mut out = Vec::new();
    for file in files {
        let value: serde_json::Value = load_json(&file)?;
        let items = match value {
            serde_json::Value::Array(items) => items,
            one => vec![one],
        };
        for item in items {
            let d: Design = serde_json::from_value(item).map_err(|e| Error::json(&file, e))?;
            d.validate()?;
            out.push((file.clone(), d));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_layout_follows_task() {
        let d = Design::for_task(&TaskSpec::flow_with_ports(4, 3), vec![1.0; 12]);
        assert_eq!(d.shape, vec![3, 4]);
        d.validate().unwrap();
        assert!(d.matches(&TaskSpec::flow_with_ports(4, 3)));
        assert!(!d.matches(&TaskSpec::flow_with_ports(3, 4)));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let d = Design { kind: DesignKind::Grid, shape: vec![2, 2], values: vec![0.0; 5] };
        assert!(d.validate().is_err());
        let d = Design { kind: DesignKind::Stack, shape: vec![2, 2], values: vec![0.0; 4] };
        assert!(d.validate().is_err());
    }

    #[test]
    fn directory_and_array_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = Design { kind: DesignKind::Stack, shape: vec![2], values: vec![0.0, 1.0] };
        a.save(&dir.path().join("b.json")).unwrap();
        emit_json(&vec![a.clone(), a.clone()], &dir.path().join("a.json")).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let all = load_designs(dir.path()).unwrap();
        assert_eq!(all.len(), 3);
        assert!(all[0].0.ends_with("a.json") && all[2].0.ends_with("b.json"));
        let empty = tempfile::tempdir().unwrap();
        assert!(load_designs(empty.path()).unwrap().is_empty());
    }
}
