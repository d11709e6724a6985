//! Randomized scene sampling: one of the primitive shapes, rotated and
//! placed on the container floor, with a fluid block above it.

use glam::{DQuat, DVec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{SceneSpec, SimError};
use crate::geom::Aabb;
use crate::sdf::{sample_surface, SdfNode};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub enum ShapeKind {
    Sphere,
    Box,
    Cylinder,
    Cone,
    Torus,
    Funnel,
}

/// Inclusive range for the characteristic object radius, in meters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct SizeRange {
    pub min: f64,
    pub max: f64,
}

/// Deterministic recipe for a family of scenes.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub master_seed: u64,
    pub count: usize,
    pub container: Aabb,
    pub particle_spacing: f64,
    pub shapes: Vec<ShapeKind>,
    pub object_size: SizeRange,
    pub fluid_block_extent: DVec3,
    /// Preferred height of the fluid block bottom above the floor; raised
    /// further if the object reaches higher.
    pub drop_height: f64,
    pub max_retries: usize,
}

impl DatasetConfig {
    /// A small, fast default over the 1 x 1 x 2 m container.
    pub fn desk_default() -> DatasetConfig {
        DatasetConfig {
            master_seed: 7,
            count: 10,
            container: Aabb::new(DVec3::new(-0.5, -0.5, 0.0), DVec3::new(0.5, 0.5, 2.0)),
            particle_spacing: 0.05,
            shapes: vec![ShapeKind::Sphere, ShapeKind::Box, ShapeKind::Cylinder],
            object_size: SizeRange { min: 0.1, max: 0.18 },
            fluid_block_extent: DVec3::new(0.3, 0.3, 0.25),
            drop_height: 0.8,
            max_retries: 16,
        }
    }
}

use crate::geom::splitmix;

fn random_rotation(rng: &mut ChaCha8Rng) -> DQuat {
    loop {
        let q = DQuat::from_xyzw(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if q.length() > 1e-6 {
            return q.normalize();
        }
    }
}

fn build_shape(kind: ShapeKind, size: f64, rng: &mut ChaCha8Rng) -> (SdfNode, f64) {
    match kind {
        ShapeKind::Sphere => (SdfNode::sphere(size), size),
        ShapeKind::Box => {
            let half = DVec3::new(
                size * rng.random_range(0.6..1.0),
                size * rng.random_range(0.6..1.0),
                size * rng.random_range(0.6..1.0),
            );
            (SdfNode::box3(half), half.length())
        }
        ShapeKind::Cylinder => {
            let r = size * rng.random_range(0.7..1.0);
            let h = size * rng.random_range(1.2..2.4);
            (SdfNode::cylinder(r, h), (r * r + 0.25 * h * h).sqrt())
        }
        ShapeKind::Cone => {
            let r = size * rng.random_range(0.9..1.3);
            let h = size * rng.random_range(1.2..2.2);
            (SdfNode::cone(r, h), (r * r + 0.25 * h * h).sqrt())
        }
        ShapeKind::Torus => {
            let major = size * rng.random_range(0.8..1.0);
            let minor = major * rng.random_range(0.3..0.45);
            (SdfNode::torus(major, minor), major + minor)
        }
        ShapeKind::Funnel => {
            let outer = size * rng.random_range(1.0..1.3);
            let height = size * rng.random_range(1.0..1.6);
            let opening = outer * rng.random_range(0.6..0.85);
            let throat = opening * rng.random_range(0.15..0.4);
            (
                SdfNode::funnel(outer, height, opening, throat),
                (outer * outer + 0.25 * height * height).sqrt(),
            )
        }
    }
}

/// Derives the `index`-th scene of the dataset from the master seed.
///
/// Shape choice, parameters, rotation, and floor position are all drawn
/// from a per-index stream, so any scene can be regenerated independently.
pub fn sample_scene(cfg: &DatasetConfig, index: usize) -> Result<SceneSpec, SimError> {
    assert!(index < cfg.count, "scene index {index} out of {}", cfg.count);
    assert!(!cfg.shapes.is_empty(), "dataset shape list is empty");
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.master_seed, index as u64));
    let spacing = cfg.particle_spacing;
    let container = cfg.container;

    for _retry in 0..cfg.max_retries {
        let kind = cfg.shapes[rng.random_range(0..cfg.shapes.len())];
        let size = rng.random_range(cfg.object_size.min..=cfg.object_size.max);
        let (object, bound) = build_shape(kind, size, &mut rng);
        let rotation = random_rotation(&mut rng);
        let surface_seed = rng.random::<u64>();
        let jitter_seed = rng.random::<u64>();

        // xy placement must keep the object's bounding sphere inside.
        let margin = bound + 0.5 * spacing;
        if container.min.x + margin >= container.max.x - margin
            || container.min.y + margin >= container.max.y - margin
        {
            continue;
        }
        let cx = rng.random_range(container.min.x + margin..container.max.x - margin);
        let cy = rng.random_range(container.min.y + margin..container.max.y - margin);

        // Rest the rotated object on the floor using sampled surface extents.
        let rotated = SdfNode::transformed(rotation, DVec3::ZERO, object.clone());
        let sample_bounds = Aabb::new(DVec3::splat(-1.05 * bound), DVec3::splat(1.05 * bound));
        let Ok(surface) = sample_surface(&rotated, 96, sample_bounds, surface_seed) else {
            continue;
        };
        let min_z = surface.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        let max_z = surface.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
        let translation = DVec3::new(cx, cy, container.min.z - min_z);
        let object_top = translation.z + max_z;

        // Fluid block: centered over the object, clamped inside the walls,
        // raised above the object if needed.
        let half = 0.5 * cfg.fluid_block_extent;
        let wall = spacing;
        let lo_x = container.min.x + wall + half.x;
        let hi_x = container.max.x - wall - half.x;
        let lo_y = container.min.y + wall + half.y;
        let hi_y = container.max.y - wall - half.y;
        if lo_x > hi_x || lo_y > hi_y {
            continue;
        }
        let bx = cx.clamp(lo_x, hi_x);
        let by = cy.clamp(lo_y, hi_y);
        let bottom = (container.min.z + cfg.drop_height).max(object_top + 2.0 * spacing);
        let top = bottom + cfg.fluid_block_extent.z;
        if top > container.max.z - wall {
            continue;
        }
        let fluid_block = Aabb::new(
            DVec3::new(bx - half.x, by - half.y, bottom),
            DVec3::new(bx + half.x, by + half.y, top),
        );

        // Block must clear the placed object.
        let placed = SdfNode::transformed(rotation, translation, object.clone());
        let clear = fluid_block_corners(&fluid_block)
            .into_iter()
            .all(|p| placed.eval(p) > 0.5 * spacing);
        if !clear {
            continue;
        }

        return Ok(SceneSpec {
            container,
            object: Some(object),
            object_rotation: rotation,
            object_translation: translation,
            fluid_block,
            particle_spacing: spacing,
            seed: jitter_seed,
        });
    }
    Err(SimError::Placement(format!(
        "no valid placement for scene {index} after {} retries",
        cfg.max_retries
    )))
}

fn fluid_block_corners(block: &Aabb) -> Vec<DVec3> {
    let mut pts = Vec::with_capacity(9);
    for &x in &[block.min.x, block.max.x] {
        for &y in &[block.min.y, block.max.y] {
            for &z in &[block.min.z, block.max.z] {
                pts.push(DVec3::new(x, y, z));
            }
        }
    }
    pts.push(block.center());
    pts
}
