//! Dataset manifest: the index of generated trajectory files with their
//! scene specs, seeds, and the hash of the generating configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use sdfsim_core::reference_sim::{SceneSpec, SphConfig};

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    /// FNV-1a hash of the dataset config section that produced the files.
    pub config_hash: String,
    pub oracle: SphConfig,
    pub n_frames: usize,
    pub substeps: usize,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub index: usize,
    /// File name relative to the manifest location; empty for failures.
    pub file: String,
    pub seed: u64,
    pub status: String,
    pub n_particles: usize,
    #[serde(default)]
    pub scene: Option<SceneSpec>,
}

impl DatasetManifest {
    pub fn ok_entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.status == "ok")
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Io(format!("serializing manifest: {e}")))?;
        std::fs::write(path, text)
            .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<DatasetManifest, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("parsing {}: {e}", path.display())))
    }
}
