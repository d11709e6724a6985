//! `rollout`: prime the model with the first frames of an oracle
//! trajectory and write the predicted trajectory.

use std::path::Path;

use sdfsim_core::graph_net::{rollout, Variant};
use sdfsim_core::reference_sim::Trajectory;

use crate::CliError;

use super::train::read_checkpoint_params;

pub fn cmd_rollout(
    checkpoint: &Path,
    truth_path: &Path,
    out_path: &Path,
    max_steps: Option<usize>,
    projection: bool,
    expect_variant: Option<Variant>,
) -> Result<Trajectory, CliError> {
    let params = read_checkpoint_params(checkpoint)?;
    if let Some(v) = expect_variant {
        if params.config.variant != v {
            return Err(CliError::Config(format!(
                "checkpoint variant {:?} does not match requested {v:?}",
                params.config.variant
            )));
        }
    }
    let truth = super::load_trajectory(truth_path)?;
    let window_len = params.config.history_len + 1;
    if truth.frames.len() < window_len + 1 {
        return Err(CliError::Config(format!(
            "trajectory {} is too short to prime the model ({} frames)",
            truth_path.display(),
            truth.frames.len()
        )));
    }
    let steps = truth.frames.len() - window_len;
    let steps = max_steps.map_or(steps, |cap| steps.min(cap));
    let pred = rollout(
        &params,
        &truth.scene,
        &truth.frames[..window_len],
        steps,
        truth.dt,
        projection,
    )
    .map_err(|e| CliError::Numeric(e.to_string()))?;
    super::save_trajectory(out_path, &pred)?;
    Ok(pred)
}
