//! `train`: next-step training with loss-curve CSV and resumable
//! checkpoints (parameters, optimizer state, and step counter).

use std::io::Write;
use std::path::Path;

use sdfsim_core::graph_net::ModelParams;
use sdfsim_core::reference_sim::Trajectory;
use sdfsim_core::training::{fit_normalizer, AdamState, Trainer};

use crate::config::ExperimentConfig;
use crate::manifest::DatasetManifest;
use crate::CliError;

#[derive(serde::Serialize, serde::Deserialize)]
struct TrainState {
    step: usize,
    config_hash: String,
}

pub fn load_dataset(manifest: &DatasetManifest, dir: &Path) -> Result<Vec<Trajectory>, CliError> {
    let mut dataset = Vec::new();
    for entry in manifest.ok_entries() {
        dataset.push(super::load_trajectory(&dir.join(&entry.file))?);
    }
    if dataset.is_empty() {
        return Err(CliError::Config("manifest has no usable trajectories".into()));
    }
    Ok(dataset)
}

pub fn write_checkpoint(dir: &Path, trainer: &Trainer, config_hash: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))?;
    let params_path = dir.join("params.gnnp");
    let mut f = std::fs::File::create(&params_path)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", params_path.display())))?;
    trainer
        .params
        .write_to(&mut f)
        .map_err(|e| CliError::Io(format!("writing params: {e}")))?;
    let opt_path = dir.join("optimizer.bin");
    let mut f = std::fs::File::create(&opt_path)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", opt_path.display())))?;
    trainer
        .opt
        .write_to(&mut f)
        .map_err(|e| CliError::Io(format!("writing optimizer: {e}")))?;
    let state = TrainState {
        step: trainer.step,
        config_hash: config_hash.to_string(),
    };
    std::fs::write(
        dir.join("state.json"),
        serde_json::to_string_pretty(&state).expect("state serializes"),
    )
    .map_err(|e| CliError::Io(format!("writing state: {e}")))
}

pub fn read_checkpoint_params(path: &Path) -> Result<ModelParams, CliError> {
    let candidate = if path.is_dir() {
        path.join("params.gnnp")
    } else {
        path.to_path_buf()
    };
    let mut f = std::fs::File::open(&candidate)
        .map_err(|e| CliError::Io(format!("opening {}: {e}", candidate.display())))?;
    ModelParams::read_from(&mut f)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", candidate.display())))
}

pub fn cmd_train(
    config: &ExperimentConfig,
    manifest_path: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<ModelParams, CliError> {
    let manifest = DatasetManifest::load(manifest_path)?;
    if manifest.config_hash != config.dataset_hash() {
        return Err(CliError::Config(format!(
            "dataset was generated from a different config (manifest hash {}, config hash {})",
            manifest.config_hash,
            config.dataset_hash()
        )));
    }
    let data_dir = manifest_path.parent().unwrap_or(Path::new("."));
    let dataset = load_dataset(&manifest, data_dir)?;

    let train_cfg = config.training.train.clone();
    let mut trainer = match resume {
        None => {
            let mut params = ModelParams::init(&config.model, train_cfg.seed);
            params.normalizer = fit_normalizer(&dataset, &config.model, 2_000)
                .map_err(|e| CliError::Config(e.to_string()))?;
            Trainer::new(params, train_cfg.clone())
        }
        Some(dir) => {
            let params = read_checkpoint_params(dir)?;
            if params.config != config.model {
                return Err(CliError::Config(
                    "checkpoint model config does not match the experiment config".into(),
                ));
            }
            let opt_path = dir.join("optimizer.bin");
            let mut f = std::fs::File::open(&opt_path)
                .map_err(|e| CliError::Io(format!("opening {}: {e}", opt_path.display())))?;
            let opt = AdamState::read_from(&mut f)
                .map_err(|e| CliError::Io(format!("reading optimizer: {e}")))?;
            let state: TrainState = serde_json::from_str(
                &std::fs::read_to_string(dir.join("state.json"))
                    .map_err(|e| CliError::Io(format!("reading state: {e}")))?,
            )
            .map_err(|e| CliError::Config(format!("parsing state: {e}")))?;
            Trainer::resume(params, opt, state.step, train_cfg.clone())
        }
    };

    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", out_dir.display())))?;
    let curve_path = out_dir.join("loss.csv");
    let mut curve = std::io::BufWriter::new(
        std::fs::File::create(&curve_path)
            .map_err(|e| CliError::Io(format!("creating {}: {e}", curve_path.display())))?,
    );
    writeln!(curve, "step,loss,near_surface_loss").map_err(|e| CliError::Io(e.to_string()))?;

    let hash = config.dataset_hash();
    let every = config.training.checkpoint_every;
    while trainer.step < train_cfg.total_steps {
        let stats = trainer
            .train_step(&dataset)
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        writeln!(
            curve,
            "{},{},{}",
            trainer.step - 1,
            stats.loss,
            stats.near_surface_loss
        )
        .map_err(|e| CliError::Io(e.to_string()))?;
        if every > 0 && trainer.step % every == 0 && trainer.step < train_cfg.total_steps {
            write_checkpoint(
                &out_dir.join(format!("checkpoints/step_{:06}", trainer.step)),
                &trainer,
                &hash,
            )?;
        }
    }
    curve.flush().map_err(|e| CliError::Io(e.to_string()))?;
    write_checkpoint(out_dir, &trainer, &hash)?;
    Ok(trainer.params)
}
