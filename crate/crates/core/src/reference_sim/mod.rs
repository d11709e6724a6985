//! Ground-truth fluid oracle: weakly-compressible SPH with SDF boundary
//! handling, plus randomized scene sampling and trajectory generation.
//!
//! The oracle exists to produce consistent training and evaluation data at
//! desk scale; its scheme (cubic-spline kernel, state-equation pressure,
//! XSPH velocity smoothing, semi-implicit Euler) is the simplest that
//! settles and splashes plausibly. Pairwise pressure and smoothing terms
//! are antisymmetric, so internal forces conserve momentum exactly.

mod ftrj;
mod kernel;
mod scene;

pub use ftrj::{read_trajectory, write_trajectory};
pub use scene::{sample_scene, DatasetConfig, ShapeKind, SizeRange};

use glam::{DQuat, DVec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::Aabb;
use crate::graph_net::spatial::{neighbor_pairs, sender_offsets};
use crate::sdf::{self, SdfNode};

/// Positions and velocities of all fluid particles at one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FluidState {
    pub positions: Vec<DVec3>,
    pub velocities: Vec<DVec3>,
    pub time_index: usize,
}

impl FluidState {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().all(|p| p.is_finite())
            && self.velocities.iter().all(|v| v.is_finite())
    }
}

/// An ordered sequence of frames plus the scene they were simulated in.
/// `dt` is the frame interval (oracle substeps happen in between).
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub frames: Vec<FluidState>,
    pub dt: f64,
    pub scene: SceneSpec,
}

impl Trajectory {
    pub fn n_particles(&self) -> usize {
        self.frames.first().map_or(0, FluidState::len)
    }
}

/// Oracle integration parameters.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SphConfig {
    pub dt_oracle: f64,
    pub smoothing_radius: f64,
    pub rest_density: f64,
    pub stiffness: f64,
    /// XSPH velocity-smoothing coefficient.
    pub viscosity: f64,
    pub gravity: DVec3,
    /// Normal restitution at solid boundaries, in [0, 1].
    pub restitution: f64,
    pub particle_mass: f64,
}

impl SphConfig {
    /// Desk-scale defaults for a given lattice spacing: smoothing radius
    /// twice the spacing, stiffness sized for <5% density error under a
    /// half-meter column, inelastic walls.
    pub fn for_spacing(spacing: f64) -> SphConfig {
        assert!(spacing > 0.0);
        let rest_density = 1000.0;
        SphConfig {
            dt_oracle: 1e-3,
            smoothing_radius: 2.0 * spacing,
            rest_density,
            stiffness: 3e5,
            viscosity: 0.08,
            gravity: DVec3::new(0.0, 0.0, -9.81),
            restitution: 0.0,
            particle_mass: rest_density * spacing.powi(3),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.dt_oracle.is_nan() || self.dt_oracle <= 0.0 {
            return Err("dt_oracle must be positive".into());
        }
        if self.smoothing_radius.is_nan() || self.smoothing_radius <= 0.0 {
            return Err("smoothing_radius must be positive".into());
        }
        if self.rest_density.is_nan() || self.rest_density <= 0.0 {
            return Err("rest_density must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.restitution) {
            return Err("restitution must be in [0,1]".into());
        }
        if self.particle_mass.is_nan() || self.particle_mass <= 0.0 {
            return Err("particle_mass must be positive".into());
        }
        Ok(())
    }
}

/// One randomized simulation setup: a static object resting on the
/// container floor and a fluid block released above it.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub container: Aabb,
    pub object: Option<SdfNode>,
    #[serde(with = "crate::geom::quat_wxyz")]
    pub object_rotation: DQuat,
    pub object_translation: DVec3,
    pub fluid_block: Aabb,
    pub particle_spacing: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// The transformed object, if any.
    pub fn placed_object(&self) -> Option<SdfNode> {
        self.object.as_ref().map(|obj| {
            SdfNode::transformed(self.object_rotation, self.object_translation, obj.clone())
        })
    }

    /// The full scene SDF the fluid interacts with (object + walls + floor).
    pub fn scene_node(&self) -> SdfNode {
        sdf::scene_sdf(self.placed_object(), self.container)
    }

    /// Initial particle lattice inside the fluid block with seeded jitter.
    pub fn initial_state(&self) -> FluidState {
        let spacing = self.particle_spacing;
        let ext = self.fluid_block.extent();
        let count = |e: f64| ((e / spacing).floor() as usize).max(1);
        let (nx, ny, nz) = (count(ext.x), count(ext.y), count(ext.z));
        let offset = |n: usize, e: f64| (e - (n - 1) as f64 * spacing) * 0.5;
        let base = self.fluid_block.min
            + DVec3::new(offset(nx, ext.x), offset(ny, ext.y), offset(nz, ext.z));
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let jitter = 0.05 * spacing;
        let mut positions = Vec::with_capacity(nx * ny * nz);
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    let lattice =
                        base + DVec3::new(ix as f64, iy as f64, iz as f64) * spacing;
                    let j = DVec3::new(
                        rng.random_range(-jitter..jitter),
                        rng.random_range(-jitter..jitter),
                        rng.random_range(-jitter..jitter),
                    );
                    positions.push(lattice + j);
                }
            }
        }
        let n = positions.len();
        FluidState {
            positions,
            velocities: vec![DVec3::ZERO; n],
            time_index: 0,
        }
    }
}

#[derive(Debug)]
pub enum SimError {
    Diverged { frame: usize, substep: usize },
    Placement(String),
}

impl std::fmt::Display for SimError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SimError::Diverged { frame, substep } => {
                write!(f, "simulation diverged at frame {frame}, substep {substep}")
            }
            SimError::Placement(msg) => write!(f, "scene placement failed: {msg}"),
        }
    }
}

impl std::error::Error for SimError {}

/// Advances the fluid by one oracle step against the scene SDF.
///
/// Any particle ending the step inside the solid (`F < 0`) is projected
/// back to the surface and its inward normal velocity component reflected
/// scaled by `-restitution`. Returns `None` if the state went non-finite.
pub fn sph_step(state: &FluidState, scene: &SdfNode, cfg: &SphConfig) -> Option<FluidState> {
    let n = state.len();
    let h = cfg.smoothing_radius;
    let m = cfg.particle_mass;
    let dt = cfg.dt_oracle;
    let kernel = kernel::CubicSpline::new(h);

    let edges = neighbor_pairs(&state.positions, h);
    let offsets = sender_offsets(&edges, n);
    let neighbors = |i: usize| edges.receivers[offsets[i]..offsets[i + 1]].iter();

    let positions = &state.positions;
    let densities: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rho = m * kernel.w0();
            for &j in neighbors(i) {
                let r = (positions[i] - positions[j as usize]).length();
                rho += m * kernel.w(r);
            }
            rho
        })
        .collect();

    let pressures: Vec<f64> = densities
        .iter()
        .map(|&rho| cfg.stiffness * ((rho / cfg.rest_density) - 1.0).max(0.0))
        .collect();

    // Symmetric pressure acceleration plus gravity, then the velocity step.
    let velocities = &state.velocities;
    let half_step: Vec<DVec3> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut accel = cfg.gravity;
            let pi_term = pressures[i] / (densities[i] * densities[i]);
            for &j in neighbors(i) {
                let j = j as usize;
                let diff = positions[i] - positions[j];
                let r = diff.length();
                if r < 1e-12 {
                    continue;
                }
                let pj_term = pressures[j] / (densities[j] * densities[j]);
                accel -= diff * (m * (pi_term + pj_term) * kernel.dw(r) / r);
            }
            velocities[i] + accel * dt
        })
        .collect();

    // XSPH smoothing over post-force velocities; pairwise antisymmetric.
    let smoothed: Vec<DVec3> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut dv = DVec3::ZERO;
            for &j in neighbors(i) {
                let j = j as usize;
                let r = (positions[i] - positions[j]).length();
                let w = kernel.w(r);
                dv += (half_step[j] - half_step[i])
                    * (2.0 * m / (densities[i] + densities[j]) * w);
            }
            half_step[i] + dv * cfg.viscosity
        })
        .collect();

    let moved: Vec<(DVec3, DVec3)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut v = smoothed[i];
            let mut p = positions[i] + v * dt;
            if scene.eval(p) < 0.0 {
                let proj = sdf::project_to_surface(scene, p, 16);
                p = proj.point;
                let normal = scene.grad(p).gradient;
                let vn = v.dot(normal);
                if vn < 0.0 {
                    v -= normal * ((1.0 + cfg.restitution) * vn);
                }
            }
            (p, v)
        })
        .collect();

    let mut next = FluidState {
        positions: Vec::with_capacity(n),
        velocities: Vec::with_capacity(n),
        time_index: state.time_index + 1,
    };
    for (p, v) in moved {
        next.positions.push(p);
        next.velocities.push(v);
    }
    if next.is_finite() {
        Some(next)
    } else {
        None
    }
}

/// Rolls out the oracle and records every `substeps`-th state. Frame 0 is
/// the jittered initialization; the frame interval is `substeps * dt_oracle`.
pub fn generate_trajectory(
    scene: &SceneSpec,
    cfg: &SphConfig,
    n_frames: usize,
    substeps: usize,
) -> Result<Trajectory, SimError> {
    assert!(n_frames >= 2, "a trajectory needs at least 2 frames");
    assert!(substeps >= 1);
    let node = scene.scene_node();
    let mut state = scene.initial_state();
    let mut frames = Vec::with_capacity(n_frames);
    frames.push(state.clone());
    for frame in 1..n_frames {
        for substep in 0..substeps {
            state =
                sph_step(&state, &node, cfg).ok_or(SimError::Diverged { frame, substep })?;
        }
        state.time_index = frame;
        frames.push(state.clone());
    }
    Ok(Trajectory {
        frames,
        dt: cfg.dt_oracle * substeps as f64,
        scene: scene.clone(),
    })
}
