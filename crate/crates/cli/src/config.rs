//! Experiment configuration: one versioned JSON document driving dataset
//! generation, training, evaluation, and design. Unknown keys are errors,
//! and every seed is explicit, so a config hash pins the whole pipeline.

use serde::{Deserialize, Serialize};

use sdfsim_core::design::{DesignScene, DesignTask};
use sdfsim_core::graph_net::ModelConfig;
use sdfsim_core::reference_sim::{DatasetConfig, SphConfig};
use sdfsim_core::training::TrainConfig;

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub dataset: DatasetSection,
    pub model: ModelConfig,
    pub training: TrainingSection,
    pub evaluation: EvalSection,
    #[serde(default)]
    pub design: Option<DesignSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub scenes: DatasetConfig,
    pub oracle: SphConfig,
    pub n_frames: usize,
    pub substeps: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub train: TrainConfig,
    /// Write a checkpoint every this many steps; 0 disables intermediate
    /// checkpoints.
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Held-out scene recipe evaluated against model rollouts.
    pub test_scenes: DatasetConfig,
    /// Near-surface threshold for the surface Chamfer metric.
    pub alpha: f64,
    /// Cap on predicted steps per scene; None rolls out to the full
    /// trajectory length.
    #[serde(default)]
    pub max_steps: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub scene: DesignScene,
    pub task: DesignTask,
    pub initial_opening: f64,
    pub initial_throat: f64,
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("parsing {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.dataset
            .oracle
            .validate()
            .map_err(|e| CliError::Config(format!("oracle: {e}")))?;
        self.model
            .validate()
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        self.training
            .train
            .validate()
            .map_err(|e| CliError::Config(format!("training: {e}")))?;
        if self.dataset.n_frames < self.model.history_len + 2 {
            return Err(CliError::Config(
                "dataset.n_frames must cover the history window plus a target".into(),
            ));
        }
        if self.dataset.substeps == 0 {
            return Err(CliError::Config("dataset.substeps must be >= 1".into()));
        }
        if self.evaluation.alpha.is_nan() || self.evaluation.alpha <= 0.0 {
            return Err(CliError::Config("evaluation.alpha must be positive".into()));
        }
        Ok(())
    }

    /// Stable 64-bit FNV-1a hash of the dataset section, recorded in
    /// manifests to detect config drift between generation and use.
    pub fn dataset_hash(&self) -> String {
        let canonical =
            serde_json::to_string(&self.dataset).expect("dataset section serializes");
        format!("{:016x}", fnv1a(canonical.as_bytes()))
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn sample_config_json() -> String {
        let cfg = crate::test_support::small_config();
        serde_json::to_string_pretty(&cfg).unwrap()
    }

    #[test]
    fn roundtrip_and_unknown_key_rejection() {
        let text = sample_config_json();
        let cfg: ExperimentConfig = serde_json::from_str(&text).unwrap();
        cfg.validate().unwrap();

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["dataset"]["scenes"]["surprise"] = serde_json::json!(1);
        let err = serde_json::from_value::<ExperimentConfig>(v).unwrap_err();
        assert!(err.to_string().contains("unknown field"));
    }

    #[test]
    fn dataset_hash_tracks_dataset_changes_only() {
        let mut a = crate::test_support::small_config();
        let mut b = a.clone();
        assert_eq!(a.dataset_hash(), b.dataset_hash());
        b.training.train.seed += 1;
        assert_eq!(a.dataset_hash(), b.dataset_hash());
        a.dataset.scenes.master_seed += 1;
        assert_ne!(a.dataset_hash(), b.dataset_hash());
    }
}
