use std::collections::BTreeMap;
use std::path::Path;

use evodiff::harness::emit_json;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct Manifest<E: Serialize = ()> {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub extra: Option<E>,
}

impl<E: Serialize> Manifest<E> {
    pub fn new(command: &str, config_hash: String, seed: u64) -> Self {
        let versions = BTreeMap::from([
            ("evodiff".to_string(), evodiff::VERSION.to_string()),
            ("evodiff-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ]);
        Self { command: command.into(), config_hash, seed, versions, outputs: Vec::new(), extra: None }
    }

    pub fn write(&self, dir: &Path) -> evodiff::Result<()> {
        emit_json(self, &dir.join("manifest.json"))
    }
}
