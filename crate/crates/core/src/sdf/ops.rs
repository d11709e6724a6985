//! Derived geometric operations on SDFs: surface projection, curvature,
//! grid baking, surface sampling, and scene composition.

use glam::DVec3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{fd_step, GridSdf, SdfNode, PROJ_TOL};
use crate::geom::Aabb;

/// Upper bound on baked grid cells.
pub const MAX_GRID_CELLS: usize = 1 << 24;

/// Result of marching a point onto the zero level set.
#[derive(Clone, Copy, Debug)]
pub struct Projection {
    pub point: DVec3,
    /// Signed distance at `point`.
    pub distance: f64,
    /// False when the iteration stalled; `point` is then the best iterate.
    pub converged: bool,
}

/// Marches `p` onto the surface by iterating `x <- x - F(x) g / |g|^2`.
///
/// Stops once `|F| < PROJ_TOL` or after `max_iters` steps. The returned
/// iterate never has larger `|F|` than the input.
pub fn project_to_surface(sdf: &SdfNode, p: DVec3, max_iters: usize) -> Projection {
    assert!(max_iters >= 1);
    let mut x = p;
    let mut f = sdf.eval(x);
    let mut best = (x, f);
    for _ in 0..max_iters {
        if f.abs() < PROJ_TOL {
            return Projection {
                point: x,
                distance: f,
                converged: true,
            };
        }
        let g = sdf.grad(x).gradient;
        let len2 = g.length_squared();
        if len2 < 1e-20 {
            break;
        }
        x -= g * (f / len2);
        let f_next = sdf.eval(x);
        if f_next.abs() >= f.abs() {
            // No progress this iteration; report the best point seen.
            if f_next.abs() < best.1.abs() {
                best = (x, f_next);
            }
            return Projection {
                point: best.0,
                distance: best.1,
                converged: best.1.abs() < PROJ_TOL,
            };
        }
        f = f_next;
        if f.abs() < best.1.abs() {
            best = (x, f);
        }
    }
    Projection {
        point: best.0,
        distance: best.1,
        converged: best.1.abs() < PROJ_TOL,
    }
}

/// Mean curvature `H = Tr(hessian)/2` estimated by central second
/// differences. Meaningful near the surface of an exact SDF.
pub fn mean_curvature(sdf: &SdfNode, p: DVec3) -> f64 {
    let h = fd_step(p);
    let f0 = sdf.eval(p);
    let mut trace = 0.0;
    for axis in 0..3 {
        let mut hi = p;
        let mut lo = p;
        hi[axis] += h;
        lo[axis] -= h;
        trace += (sdf.eval(hi) - 2.0 * f0 + sdf.eval(lo)) / (h * h);
    }
    0.5 * trace
}

#[derive(Debug, PartialEq, Eq)]
pub enum BakeError {
    CapacityExceeded { requested: usize, max: usize },
    BadDims([u32; 3]),
}

impl std::fmt::Display for BakeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BakeError::CapacityExceeded { requested, max } => {
                write!(f, "grid of {requested} cells exceeds the maximum of {max}")
            }
            BakeError::BadDims(d) => write!(f, "grid dims must be >= 2 per axis, got {d:?}"),
        }
    }
}

impl std::error::Error for BakeError {}

/// Samples `sdf` on a uniform lattice. `values[i,j,k] = F(origin + spacing*(i,j,k))`.
pub fn bake_grid(
    sdf: &SdfNode,
    origin: DVec3,
    spacing: f64,
    dims: [u32; 3],
) -> Result<GridSdf, BakeError> {
    if dims.iter().any(|&d| d < 2) {
        return Err(BakeError::BadDims(dims));
    }
    let [nx, ny, nz] = dims.map(|d| d as usize);
    let total = nx * ny * nz;
    if total > MAX_GRID_CELLS {
        return Err(BakeError::CapacityExceeded {
            requested: total,
            max: MAX_GRID_CELLS,
        });
    }
    let mut values = vec![0.0; total];
    values
        .par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(z, slab)| {
            for y in 0..ny {
                for x in 0..nx {
                    let p = origin + DVec3::new(x as f64, y as f64, z as f64) * spacing;
                    slab[x + nx * y] = sdf.eval(p);
                }
            }
        });
    Ok(GridSdf {
        origin,
        spacing,
        dims,
        values,
    })
}

#[derive(Debug)]
pub enum SampleError {
    SamplingFailed { requested: usize, found: usize, attempts: usize },
}

impl std::fmt::Display for SampleError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let SampleError::SamplingFailed {
            requested,
            found,
            attempts,
        } = self;
        write!(
            f,
            "found only {found}/{requested} surface points after {attempts} attempts"
        )
    }
}

impl std::error::Error for SampleError {}

/// Draws `n` points on the zero level set by seeding uniform samples in
/// `bounds` and projecting them onto the surface. Deterministic for a
/// fixed seed.
pub fn sample_surface(
    sdf: &SdfNode,
    n: usize,
    bounds: Aabb,
    seed: u64,
) -> Result<Vec<DVec3>, SampleError> {
    assert!(n >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_attempts = 50 * n;
    let mut points = Vec::with_capacity(n);
    for attempt in 0..max_attempts {
        let seed_point = bounds.sample(&mut rng);
        let proj = project_to_surface(sdf, seed_point, 32);
        if proj.converged && proj.distance.abs() < PROJ_TOL {
            points.push(proj.point);
            if points.len() == n {
                return Ok(points);
            }
        }
        let _ = attempt;
    }
    Err(SampleError::SamplingFailed {
        requested: n,
        found: points.len(),
        attempts: max_attempts,
    })
}

/// Composes the solid geometry a fluid interacts with: the optional object
/// plus the container walls (4 sides and the floor; the top stays open).
/// The fluid-reachable region is `{F > 0}` inside the container.
pub fn scene_sdf(object: Option<SdfNode>, container: Aabb) -> SdfNode {
    let lo = container.min;
    let hi = container.max;
    let walls = [
        SdfNode::half_space(DVec3::Z, lo.z),             // floor: solid below
        SdfNode::half_space(DVec3::X, lo.x),             // solid x < min.x
        SdfNode::half_space(-DVec3::X, -hi.x),           // solid x > max.x
        SdfNode::half_space(DVec3::Y, lo.y),             // solid y < min.y
        SdfNode::half_space(-DVec3::Y, -hi.y),           // solid y > max.y
    ];
    let mut node = walls
        .into_iter()
        .reduce(SdfNode::union)
        .expect("non-empty wall list");
    if let Some(obj) = object {
        node = SdfNode::union(obj, node);
    }
    node
}

/// Rejects points where the field is locally non-smooth, by comparing
/// central-difference gradients at two step sizes. Used to exclude medial
/// axes, edges, and CSG seams from property sampling.
pub fn is_smooth_at(sdf: &SdfNode, p: DVec3, tol: f64) -> bool {
    let h = fd_step(p);
    let g1 = sdf.fd_gradient_with_step(p, h);
    let g2 = sdf.fd_gradient_with_step(p, 2.0 * h);
    (g1 - g2).abs().max_element() < tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn projection_from_outside_and_inside() {
        let s = SdfNode::sphere(1.0);
        let out = project_to_surface(&s, DVec3::new(2.0, 0.0, 0.0), 8);
        assert!(out.converged);
        assert!((out.point - DVec3::X).length() < 1e-9);
        let inside = project_to_surface(&s, DVec3::new(0.5, 0.0, 0.0), 8);
        assert!(inside.converged);
        assert!((inside.point - DVec3::X).length() < 1e-9);
    }

    #[test]
    fn projection_on_union_reaches_surface() {
        let u = SdfNode::union(
            SdfNode::sphere(0.8),
            SdfNode::transformed(glam::DQuat::IDENTITY, DVec3::new(1.0, 0.0, 0.0), SdfNode::sphere(0.5)),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = DVec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            if u.eval(p) <= 0.0 {
                continue;
            }
            let proj = project_to_surface(&u, p, 40);
            assert!(proj.converged, "stalled from {p:?} at {}", proj.distance);
            assert!(proj.distance.abs() < 1e-6);
            assert!(proj.distance.abs() <= u.eval(p).abs());
        }
    }

    #[test]
    fn curvature_matches_known_shapes() {
        let sphere = SdfNode::sphere(1.0);
        let h = mean_curvature(&sphere, DVec3::new(1.0, 0.0, 0.0));
        assert!((h - 1.0).abs() < 1e-2, "sphere H = {h}");

        let plane = SdfNode::half_space(DVec3::Z, 0.0);
        let h = mean_curvature(&plane, DVec3::new(0.3, -0.2, 0.0));
        assert!(h.abs() < 1e-3, "plane H = {h}");

        // One principal curvature 1/r, the other 0, so H = 1/(2r) + 0 = 1.
        let cyl = SdfNode::cylinder(0.5, 4.0);
        let h = mean_curvature(&cyl, DVec3::new(0.5, 0.0, 0.0));
        assert!((h - 1.0).abs() < 5e-2, "cylinder H = {h}");
    }

    #[test]
    fn bake_grid_matches_analytic_inside() {
        let s = SdfNode::sphere(1.0);
        let origin = DVec3::splat(-1.5);
        let spacing = 3.0 / 32.0;
        let grid = bake_grid(&s, origin, spacing, [33, 33, 33]).unwrap();
        // Exact at lattice points.
        let p = origin + DVec3::new(4.0, 10.0, 17.0) * spacing;
        assert!((grid.eval(p) - s.eval(p)).abs() < 1e-12);

        let node = SdfNode::Grid { grid };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let p = DVec3::new(
                rng.random_range(-1.4..1.4),
                rng.random_range(-1.4..1.4),
                rng.random_range(-1.4..1.4),
            );
            worst = worst.max((node.eval(p) - s.eval(p)).abs());
        }
        assert!(worst < spacing, "max interpolation error {worst}");
    }

    #[test]
    fn grid_gradient_aligns_with_analytic() {
        let s = SdfNode::sphere(1.0);
        let grid = bake_grid(&s, DVec3::splat(-1.5), 3.0 / 32.0, [33, 33, 33]).unwrap();
        let node = SdfNode::Grid { grid };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut n_checked = 0;
        while n_checked < 200 {
            let p = DVec3::new(
                rng.random_range(-1.3..1.3),
                rng.random_range(-1.3..1.3),
                rng.random_range(-1.3..1.3),
            );
            if p.length() < 0.3 {
                continue; // medial point of the sphere
            }
            let ga = s.grad(p).gradient;
            let gg = node.grad(p).gradient;
            let cos = ga.dot(gg) / (ga.length() * gg.length());
            assert!(cos > 0.99, "cosine {cos} at {p:?}");
            n_checked += 1;
        }
    }

    #[test]
    fn bake_capacity_is_enforced() {
        let s = SdfNode::sphere(1.0);
        let err = bake_grid(&s, DVec3::ZERO, 0.1, [4096, 4096, 4096]).unwrap_err();
        assert!(matches!(err, BakeError::CapacityExceeded { .. }));
    }

    #[test]
    fn surface_sampling_examples() {
        let s = SdfNode::sphere(1.0);
        let bounds = Aabb::new(DVec3::splat(-1.5), DVec3::splat(1.5));
        let pts = sample_surface(&s, 100, bounds, 42).unwrap();
        assert_eq!(pts.len(), 100);
        for p in &pts {
            assert!((p.length() - 1.0).abs() < 1e-5);
        }
        let again = sample_surface(&s, 100, bounds, 42).unwrap();
        assert_eq!(pts, again);

        let b = SdfNode::box3(DVec3::new(0.4, 0.3, 0.5));
        let pts = sample_surface(&b, 500, bounds, 7).unwrap();
        for p in &pts {
            assert!(b.eval(*p).abs() < PROJ_TOL);
        }
    }

    #[test]
    fn scene_sdf_signs() {
        let container = Aabb::new(
            DVec3::new(-0.5, -0.5, 0.0),
            DVec3::new(0.5, 0.5, 2.0),
        );
        let empty = scene_sdf(None, container);
        assert!(empty.eval(DVec3::new(0.0, 0.0, 1.0)) > 0.0);
        assert!(empty.eval(DVec3::new(0.0, 0.0, -0.1)) < 0.0);
        assert!(empty.eval(DVec3::new(0.6, 0.0, 1.0)) < 0.0);
        // Open top: far above the container is still free space.
        assert!(empty.eval(DVec3::new(0.0, 0.0, 5.0)) > 0.0);

        let with_obj = scene_sdf(
            Some(SdfNode::sphere(0.2).translated(DVec3::new(0.0, 0.0, 0.2))),
            container,
        );
        assert!(with_obj.eval(DVec3::new(0.0, 0.0, 0.2)) < 0.0);
    }
}
