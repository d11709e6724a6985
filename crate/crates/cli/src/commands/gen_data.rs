//! `gen-data`: sample scenes, run the oracle, write trajectory files and
//! the dataset manifest.

use std::path::Path;

use rayon::prelude::*;

use sdfsim_core::reference_sim::{generate_trajectory, sample_scene};

use crate::config::ExperimentConfig;
use crate::manifest::{DatasetManifest, ManifestEntry};
use crate::CliError;

pub fn cmd_gen_data(config: &ExperimentConfig, out_dir: &Path) -> Result<DatasetManifest, CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", out_dir.display())))?;
    let ds = &config.dataset;

    // Scenes are independent; generation parallelizes, outputs stay in
    // index order.
    let results: Vec<ManifestEntry> = (0..ds.scenes.count)
        .into_par_iter()
        .map(|index| match sample_scene(&ds.scenes, index) {
            Err(e) => ManifestEntry {
                index,
                file: String::new(),
                seed: 0,
                status: format!("failed: {e}"),
                n_particles: 0,
                scene: None,
            },
            Ok(scene) => match generate_trajectory(&scene, &ds.oracle, ds.n_frames, ds.substeps)
            {
                Err(e) => ManifestEntry {
                    index,
                    file: String::new(),
                    seed: scene.seed,
                    status: format!("failed: {e}"),
                    n_particles: 0,
                    scene: Some(scene),
                },
                Ok(traj) => {
                    let file = format!("traj_{index:04}.ftrj");
                    match super::save_trajectory(&out_dir.join(&file), &traj) {
                        Err(e) => ManifestEntry {
                            index,
                            file: String::new(),
                            seed: scene.seed,
                            status: format!("failed: {e}"),
                            n_particles: traj.n_particles(),
                            scene: Some(scene),
                        },
                        Ok(()) => ManifestEntry {
                            index,
                            file,
                            seed: scene.seed,
                            status: "ok".into(),
                            n_particles: traj.n_particles(),
                            scene: Some(scene),
                        },
                    }
                }
            },
        })
        .collect();

    let manifest = DatasetManifest {
        version: 1,
        config_hash: config.dataset_hash(),
        oracle: ds.oracle.clone(),
        n_frames: ds.n_frames,
        substeps: ds.substeps,
        entries: results,
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
