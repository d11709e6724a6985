//! Graph-growth efficiency report: how baseline graph size and step time
//! scale with the boundary sample count, against the constant-size
//! implicit-surface variant.
//!
//! With trained checkpoints the timings reflect the deployed models; left
//! unset, seeded random weights are used, which measure the same graph
//! sizes and kernel costs.

use std::path::PathBuf;

use glam::{DQuat, DVec3};

use sdfsim_core::efficiency::bench_graph_growth;
use sdfsim_core::geom::Aabb;
use sdfsim_core::graph_net::{ModelConfig, ModelParams, Variant};
use sdfsim_core::reference_sim::{generate_trajectory, FluidState, SceneSpec, SphConfig};
use sdfsim_core::sdf::SdfNode;

struct Args {
    out: Option<PathBuf>,
    surface_counts: Vec<usize>,
    steps: usize,
    repeats: usize,
    sdf_checkpoint: Option<PathBuf>,
    particles_checkpoint: Option<PathBuf>,
}

fn parse_args() -> Result<Args, String> {
    let mut args = Args {
        out: None,
        surface_counts: vec![500, 1000, 2000],
        steps: 20,
        repeats: 3,
        sdf_checkpoint: None,
        particles_checkpoint: None,
    };
    let mut it = std::env::args().skip(1);
    while let Some(flag) = it.next() {
        let mut value = || it.next().ok_or(format!("{flag} needs a value"));
        match flag.as_str() {
            "--out" => args.out = Some(PathBuf::from(value()?)),
            "--steps" => args.steps = value()?.parse().map_err(|e| format!("{e}"))?,
            "--repeats" => args.repeats = value()?.parse().map_err(|e| format!("{e}"))?,
            "--surface-counts" => {
                args.surface_counts = value()?
                    .split(',')
                    .map(|s| s.trim().parse().map_err(|e| format!("{e}")))
                    .collect::<Result<_, _>>()?;
            }
            "--sdf-checkpoint" => args.sdf_checkpoint = Some(PathBuf::from(value()?)),
            "--particles-checkpoint" => {
                args.particles_checkpoint = Some(PathBuf::from(value()?))
            }
            other => return Err(format!("unknown flag {other}")),
        }
    }
    Ok(args)
}

/// A contact-heavy scene: fluid resting on and around a box on the floor.
fn contact_scene() -> SceneSpec {
    SceneSpec {
        container: Aabb::new(DVec3::new(-0.5, -0.5, 0.0), DVec3::new(0.5, 0.5, 2.0)),
        object: Some(SdfNode::box3(DVec3::new(0.18, 0.18, 0.1))),
        object_rotation: DQuat::IDENTITY,
        object_translation: DVec3::new(0.0, 0.0, 0.1),
        fluid_block: Aabb::new(DVec3::new(-0.2, -0.2, 0.25), DVec3::new(0.2, 0.2, 0.5)),
        particle_spacing: 0.05,
        seed: 17,
    }
}

fn load_params(path: &PathBuf) -> ModelParams {
    let mut f = std::fs::File::open(path).expect("opening checkpoint");
    ModelParams::read_from(&mut f).expect("reading checkpoint")
}

fn main() {
    let args = match parse_args() {
        Ok(a) => a,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(2);
        }
    };
    let scene = contact_scene();
    let eps = 1.5 * scene.particle_spacing;

    let sdf_params = args.sdf_checkpoint.as_ref().map(load_params).unwrap_or_else(|| {
        ModelParams::init(&ModelConfig::desk_default(eps, Variant::SdfFeatures), 1)
    });
    let particle_params = args
        .particles_checkpoint
        .as_ref()
        .map(load_params)
        .unwrap_or_else(|| {
            ModelParams::init(&ModelConfig::desk_default(eps, Variant::BoundaryParticles), 1)
        });

    // Settle the fluid onto the box so the rollout stays in contact.
    let oracle = SphConfig::for_spacing(scene.particle_spacing);
    let settle = generate_trajectory(&scene, &oracle, 40, 5).expect("settling rollout");
    let window_len = sdf_params.config.history_len + 1;
    let window: Vec<FluidState> =
        settle.frames[settle.frames.len() - window_len..].to_vec();

    let report = bench_graph_growth(
        &sdf_params,
        &particle_params,
        &scene,
        &window,
        args.steps,
        &args.surface_counts,
        args.repeats,
    );
    let csv = report.to_csv();
    match &args.out {
        Some(path) => {
            std::fs::write(path, &csv).expect("writing report");
            eprintln!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
}
