//! `design`: gradient-based refinement of the funnel radii through model
//! rollouts, logging one CSV row per optimizer step and emitting the final
//! shape as an SDF document.

use std::io::Write;
use std::path::Path;

use sdfsim_core::design::{optimize_design, DesignState};

use crate::config::ExperimentConfig;
use crate::CliError;

use super::train::read_checkpoint_params;

pub fn cmd_design(
    config: &ExperimentConfig,
    checkpoint: &Path,
    out_dir: &Path,
) -> Result<DesignState, CliError> {
    let section = config
        .design
        .as_ref()
        .ok_or_else(|| CliError::Config("config has no design section".into()))?;
    let params = read_checkpoint_params(checkpoint)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", out_dir.display())))?;

    let initial = DesignState::new(section.initial_opening, section.initial_throat);
    let state = optimize_design(&initial, &section.task, &params, &section.scene)
        .map_err(|e| CliError::Numeric(e.to_string()))?;

    let log_path = out_dir.join("design_log.csv");
    let mut f = std::fs::File::create(&log_path)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", log_path.display())))?;
    writeln!(f, "step,opening_radius,throat_radius,reward").map_err(|e| CliError::Io(e.to_string()))?;
    for (i, ((r1, r2), reward)) in state
        .param_history
        .iter()
        .zip(&state.reward_history)
        .enumerate()
    {
        writeln!(f, "{i},{r1},{r2},{reward}").map_err(|e| CliError::Io(e.to_string()))?;
    }

    let final_node = section
        .scene
        .funnel_node(state.opening_radius, state.throat_radius);
    std::fs::write(out_dir.join("final_design.json"), final_node.to_document())
        .map_err(|e| CliError::Io(e.to_string()))?;
    Ok(state)
}
