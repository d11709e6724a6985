//! `eval`: roll the model out over every test scene and score it against
//! the paired oracle trajectories.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use sdfsim_core::graph_net::{rollout, Variant};
use sdfsim_core::metrics::{evaluate, MetricReport};

use crate::manifest::DatasetManifest;
use crate::CliError;

use super::train::read_checkpoint_params;

#[derive(Serialize)]
struct SceneReport {
    scene_id: usize,
    file: String,
    report: MetricReport,
}

#[derive(Serialize)]
struct EvalSummary {
    alpha: f64,
    projection: bool,
    scenes: Vec<SceneReport>,
}

pub struct EvalOutcome {
    pub csv: String,
    pub mean_chamfer: f64,
    pub mean_chamfer_surface: f64,
    pub total_number_inside: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    checkpoint: &Path,
    manifest_path: &Path,
    out_dir: &Path,
    alpha: f64,
    max_steps: Option<usize>,
    projection: bool,
    expect_variant: Option<Variant>,
) -> Result<EvalOutcome, CliError> {
    let params = read_checkpoint_params(checkpoint)?;
    if let Some(v) = expect_variant {
        if params.config.variant != v {
            return Err(CliError::Config(format!(
                "checkpoint variant {:?} does not match requested {v:?}",
                params.config.variant
            )));
        }
    }
    let manifest = DatasetManifest::load(manifest_path)?;
    let data_dir = manifest_path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(out_dir.join("rollouts"))
        .map_err(|e| CliError::Io(format!("creating {}: {e}", out_dir.display())))?;

    let window_len = params.config.history_len + 1;
    let mut csv = String::from("scene_id,chamfer,chamfer_surface,number_inside,mean_sdf_inside\n");
    let mut scenes = Vec::new();
    let mut chamfer_sum = 0.0;
    let mut surface_sum = 0.0;
    let mut inside_total = 0usize;

    for entry in manifest.ok_entries() {
        let truth = super::load_trajectory(&data_dir.join(&entry.file))?;
        if truth.frames.len() < window_len + 1 {
            return Err(CliError::Config(format!(
                "scene {} is too short to evaluate",
                entry.index
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
        .map_err(|e| CliError::Numeric(format!("scene {}: {e}", entry.index)))?;
        super::save_trajectory(
            &out_dir.join(format!("rollouts/scene_{:04}.ftrj", entry.index)),
            &pred,
        )?;

        // Score only the predicted frames, not the priming window.
        let scene_sdf = truth.scene.scene_node();
        let pred_tail = super::tail_trajectory(&pred, window_len);
        let truth_tail = {
            let mut t = super::tail_trajectory(&truth, window_len);
            t.frames.truncate(steps);
            t
        };
        let report = evaluate(&pred_tail, &truth_tail, &scene_sdf, alpha)
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            entry.index,
            report.chamfer,
            report.chamfer_surface,
            report.number_inside,
            report.mean_sdf_inside
        ));
        chamfer_sum += report.chamfer;
        surface_sum += report.chamfer_surface;
        inside_total += report.number_inside;
        scenes.push(SceneReport {
            scene_id: entry.index,
            file: entry.file.clone(),
            report,
        });
    }
    if scenes.is_empty() {
        return Err(CliError::Config("no usable scenes in the manifest".into()));
    }

    let csv_path = out_dir.join("metrics.csv");
    let mut f = std::fs::File::create(&csv_path)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", csv_path.display())))?;
    f.write_all(csv.as_bytes())
        .map_err(|e| CliError::Io(e.to_string()))?;

    let summary = EvalSummary {
        alpha,
        projection,
        scenes,
    };
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )
    .map_err(|e| CliError::Io(e.to_string()))?;

    let n = summary.scenes.len() as f64;
    Ok(EvalOutcome {
        csv,
        mean_chamfer: chamfer_sum / n,
        mean_chamfer_surface: surface_sum / n,
        total_number_inside: inside_total,
    })
}
