//! Signed distance functions: analytic primitives, rigid transforms,
//! CSG composition, and grid-sampled fields.
//!
//! The central type is [`SdfNode`], an immutable expression tree. `eval`
//! returns the signed distance (negative inside the solid), `grad` the
//! spatial gradient, which for an exact SDF is the unit vector pointing
//! from the query toward increasing distance. CSG composition uses the
//! min/max rules, which yield a distance *bound* near overlaps; the
//! gradient there follows the active branch.

pub mod checks;
mod grid;
mod ops;
mod primitives;

pub use grid::{GridError, GridSdf};
pub use ops::{
    bake_grid, is_smooth_at, mean_curvature, project_to_surface, sample_surface, scene_sdf,
    BakeError, Projection, SampleError,
};
pub use primitives::Frustum;

use glam::{DQuat, DVec3};
use serde::{Deserialize, Serialize};

/// Convergence threshold for surface projection, in meters.
pub const PROJ_TOL: f64 = 1e-6;

/// Tolerance under which a CSG min/max is considered tied and the gradient
/// is flagged as a subgradient choice.
pub const TIE_EPS: f64 = 1e-9;

/// Central-difference step, scaled with the query magnitude so the step
/// stays meaningful for large scenes.
pub fn fd_step(p: DVec3) -> f64 {
    1e-5 * p.abs().max_element().max(1.0)
}

/// The carved cavity of a funnel, extended past the shell faces along its
/// own slope so the subtraction leaves no phantom zero-level caps across
/// the opening (and across an open throat). Returns the frustum and the z
/// offset of its center. A zero throat radius keeps the bottom cap on the
/// face: the bowl limit is genuinely closed.
pub fn funnel_cavity(height: f64, opening_radius: f64, throat_radius: f64) -> (Frustum, f64) {
    let slope = (opening_radius - throat_radius) / height;
    let m_top = 0.5 * height;
    let m_bot = if throat_radius > 0.0 {
        (0.5 * height).min(0.999 * throat_radius / slope)
    } else {
        0.0
    };
    let frustum = Frustum {
        r_bottom: throat_radius - m_bot * slope,
        r_top: opening_radius + m_top * slope,
        height: height + m_top + m_bot,
    };
    (frustum, 0.5 * (m_top - m_bot))
}

/// An immutable CSG expression tree of signed distance functions.
///
/// Primitives are centered at the origin (axis on +z where applicable);
/// placement happens through [`SdfNode::Transformed`].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum SdfNode {
    Sphere {
        radius: f64,
    },
    Box {
        half_extents: DVec3,
    },
    Cylinder {
        radius: f64,
        height: f64,
    },
    /// Cone with base radius at z = -height/2 and apex at z = +height/2.
    Cone {
        radius: f64,
        height: f64,
    },
    Torus {
        major_radius: f64,
        minor_radius: f64,
    },
    /// Cylinder of radius `outer_radius` and height `height` with a conical
    /// cavity carved out: opening radius `opening_radius` at the top face,
    /// narrowing to `throat_radius` at the bottom face. A zero throat radius
    /// closes the bottom, turning the funnel into a bowl.
    Funnel {
        outer_radius: f64,
        height: f64,
        opening_radius: f64,
        throat_radius: f64,
    },
    /// Solid half space `{ p : dot(p, normal) < offset }`.
    HalfSpace {
        normal: DVec3,
        offset: f64,
    },
    Transformed {
        #[serde(with = "crate::geom::quat_wxyz")]
        rotation: DQuat,
        translation: DVec3,
        child: std::boxed::Box<SdfNode>,
    },
    Union {
        a: std::boxed::Box<SdfNode>,
        b: std::boxed::Box<SdfNode>,
    },
    Intersection {
        a: std::boxed::Box<SdfNode>,
        b: std::boxed::Box<SdfNode>,
    },
    Difference {
        a: std::boxed::Box<SdfNode>,
        b: std::boxed::Box<SdfNode>,
    },
    Grid {
        grid: GridSdf,
    },
}

/// Result of a gradient query.
#[derive(Clone, Copy, Debug)]
pub struct SurfaceQuery {
    /// Signed distance at the query point.
    pub distance: f64,
    /// SDF gradient; unit norm wherever the field is differentiable.
    pub gradient: DVec3,
    /// False exactly when a CSG combinator was tied within [`TIE_EPS`] and
    /// the gradient is an arbitrary-but-deterministic subgradient choice.
    pub valid_gradient: bool,
}

#[derive(Debug)]
pub enum InvalidSdf {
    NonPositiveLength(&'static str),
    FunnelRadii { opening: f64, throat: f64, outer: f64 },
    NonUnitRotation(f64),
    NonUnitNormal(f64),
    NonFinite(&'static str),
    Grid(GridError),
}

impl std::fmt::Display for InvalidSdf {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InvalidSdf::NonPositiveLength(what) => {
                write!(f, "{what} must be strictly positive and finite")
            }
            InvalidSdf::FunnelRadii {
                opening,
                throat,
                outer,
            } => write!(
                f,
                "funnel radii must satisfy opening > throat >= 0 and opening <= outer \
                 (got opening={opening}, throat={throat}, outer={outer})"
            ),
            InvalidSdf::NonUnitRotation(n) => write!(f, "rotation norm {n} deviates from 1"),
            InvalidSdf::NonUnitNormal(n) => write!(f, "half-space normal norm {n} deviates from 1"),
            InvalidSdf::NonFinite(what) => write!(f, "{what} must be finite"),
            InvalidSdf::Grid(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for InvalidSdf {}

impl SdfNode {
    pub fn sphere(radius: f64) -> Self {
        let node = SdfNode::Sphere { radius };
        node.validate().expect("invalid sphere");
        node
    }

    pub fn box3(half_extents: DVec3) -> Self {
        let node = SdfNode::Box { half_extents };
        node.validate().expect("invalid box");
        node
    }

    pub fn cylinder(radius: f64, height: f64) -> Self {
        let node = SdfNode::Cylinder { radius, height };
        node.validate().expect("invalid cylinder");
        node
    }

    pub fn cone(radius: f64, height: f64) -> Self {
        let node = SdfNode::Cone { radius, height };
        node.validate().expect("invalid cone");
        node
    }

    pub fn torus(major_radius: f64, minor_radius: f64) -> Self {
        let node = SdfNode::Torus {
            major_radius,
            minor_radius,
        };
        node.validate().expect("invalid torus");
        node
    }

    pub fn funnel(outer_radius: f64, height: f64, opening_radius: f64, throat_radius: f64) -> Self {
        let node = SdfNode::Funnel {
            outer_radius,
            height,
            opening_radius,
            throat_radius,
        };
        node.validate().expect("invalid funnel");
        node
    }

    pub fn half_space(normal: DVec3, offset: f64) -> Self {
        let node = SdfNode::HalfSpace {
            normal: normal.normalize(),
            offset,
        };
        node.validate().expect("invalid half space");
        node
    }

    pub fn transformed(rotation: DQuat, translation: DVec3, child: SdfNode) -> Self {
        let node = SdfNode::Transformed {
            rotation: rotation.normalize(),
            translation,
            child: child.into(),
        };
        node.validate().expect("invalid transform");
        node
    }

    pub fn translated(self, translation: DVec3) -> Self {
        SdfNode::transformed(DQuat::IDENTITY, translation, self)
    }

    pub fn union(a: SdfNode, b: SdfNode) -> Self {
        SdfNode::Union {
            a: a.into(),
            b: b.into(),
        }
    }

    pub fn intersection(a: SdfNode, b: SdfNode) -> Self {
        SdfNode::Intersection {
            a: a.into(),
            b: b.into(),
        }
    }

    pub fn difference(a: SdfNode, b: SdfNode) -> Self {
        SdfNode::Difference {
            a: a.into(),
            b: b.into(),
        }
    }

    /// Checks the structural invariants of the whole tree. Deserialized
    /// documents must be validated before use.
    pub fn validate(&self) -> Result<(), InvalidSdf> {
        let pos = |v: f64, what: &'static str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(InvalidSdf::NonPositiveLength(what))
            }
        };
        match self {
            SdfNode::Sphere { radius } => pos(*radius, "sphere radius"),
            SdfNode::Box { half_extents } => {
                pos(half_extents.x, "box half extent x")?;
                pos(half_extents.y, "box half extent y")?;
                pos(half_extents.z, "box half extent z")
            }
            SdfNode::Cylinder { radius, height } => {
                pos(*radius, "cylinder radius")?;
                pos(*height, "cylinder height")
            }
            SdfNode::Cone { radius, height } => {
                pos(*radius, "cone radius")?;
                pos(*height, "cone height")
            }
            SdfNode::Torus {
                major_radius,
                minor_radius,
            } => {
                pos(*major_radius, "torus major radius")?;
                pos(*minor_radius, "torus minor radius")
            }
            SdfNode::Funnel {
                outer_radius,
                height,
                opening_radius,
                throat_radius,
            } => {
                pos(*outer_radius, "funnel outer radius")?;
                pos(*height, "funnel height")?;
                pos(*opening_radius, "funnel opening radius")?;
                if !throat_radius.is_finite() {
                    return Err(InvalidSdf::NonFinite("funnel throat radius"));
                }
                if *throat_radius < 0.0
                    || opening_radius <= throat_radius
                    || opening_radius > outer_radius
                {
                    return Err(InvalidSdf::FunnelRadii {
                        opening: *opening_radius,
                        throat: *throat_radius,
                        outer: *outer_radius,
                    });
                }
                Ok(())
            }
            SdfNode::HalfSpace { normal, offset } => {
                if !offset.is_finite() || !normal.is_finite() {
                    return Err(InvalidSdf::NonFinite("half space"));
                }
                let n = normal.length();
                if (n - 1.0).abs() > 1e-9 {
                    return Err(InvalidSdf::NonUnitNormal(n));
                }
                Ok(())
            }
            SdfNode::Transformed {
                rotation,
                translation,
                child,
            } => {
                if !translation.is_finite() {
                    return Err(InvalidSdf::NonFinite("translation"));
                }
                let n = rotation.length();
                if (n - 1.0).abs() > 1e-9 {
                    return Err(InvalidSdf::NonUnitRotation(n));
                }
                child.validate()
            }
            SdfNode::Union { a, b } | SdfNode::Intersection { a, b } | SdfNode::Difference { a, b } => {
                a.validate()?;
                b.validate()
            }
            SdfNode::Grid { grid } => grid.validate().map_err(InvalidSdf::Grid),
        }
    }

    /// Signed distance at `p`: negative inside the solid, positive outside.
    pub fn eval(&self, p: DVec3) -> f64 {
        match self {
            SdfNode::Sphere { radius } => primitives::sphere_distance(*radius, p),
            SdfNode::Box { half_extents } => primitives::box_distance(*half_extents, p),
            SdfNode::Cylinder { radius, height } => {
                primitives::cylinder_distance(*radius, *height, p)
            }
            SdfNode::Cone { radius, height } => primitives::cone_distance(*radius, *height, p),
            SdfNode::Torus {
                major_radius,
                minor_radius,
            } => primitives::torus_distance(*major_radius, *minor_radius, p),
            SdfNode::Funnel {
                outer_radius,
                height,
                opening_radius,
                throat_radius,
            } => {
                let shell = primitives::cylinder_distance(*outer_radius, *height, p);
                let (cavity, z_off) = funnel_cavity(*height, *opening_radius, *throat_radius);
                shell.max(-cavity.distance(p - DVec3::new(0.0, 0.0, z_off)))
            }
            SdfNode::HalfSpace { normal, offset } => {
                primitives::half_space_distance(*normal, *offset, p)
            }
            SdfNode::Transformed {
                rotation,
                translation,
                child,
            } => child.eval(rotation.inverse() * (p - *translation)),
            SdfNode::Union { a, b } => a.eval(p).min(b.eval(p)),
            SdfNode::Intersection { a, b } => a.eval(p).max(b.eval(p)),
            SdfNode::Difference { a, b } => a.eval(p).max(-b.eval(p)),
            SdfNode::Grid { grid } => grid.eval(p),
        }
    }

    /// Signed distance and gradient at `p`.
    ///
    /// Gradients are analytic for primitives and transforms; combinators
    /// select the active branch of their min/max. Grids and degenerate loci
    /// (e.g. a symmetry axis) fall back to central differences.
    pub fn grad(&self, p: DVec3) -> SurfaceQuery {
        let (distance, gradient, valid) = self.grad_impl(p);
        SurfaceQuery {
            distance,
            gradient,
            valid_gradient: valid,
        }
    }

    fn grad_impl(&self, p: DVec3) -> (f64, DVec3, bool) {
        let analytic = |d: f64, g: Option<DVec3>| -> (f64, DVec3, bool) {
            match g {
                Some(g) => (d, g, true),
                None => (d, self.fd_gradient(p), true),
            }
        };
        match self {
            SdfNode::Sphere { radius } => analytic(
                primitives::sphere_distance(*radius, p),
                primitives::sphere_gradient(*radius, p),
            ),
            SdfNode::Box { half_extents } => analytic(
                primitives::box_distance(*half_extents, p),
                primitives::box_gradient(*half_extents, p),
            ),
            SdfNode::Cylinder { radius, height } => analytic(
                primitives::cylinder_distance(*radius, *height, p),
                primitives::cylinder_gradient(*radius, *height, p),
            ),
            SdfNode::Cone { radius, height } => analytic(
                primitives::cone_distance(*radius, *height, p),
                primitives::cone_gradient(*radius, *height, p),
            ),
            SdfNode::Torus {
                major_radius,
                minor_radius,
            } => analytic(
                primitives::torus_distance(*major_radius, *minor_radius, p),
                primitives::torus_gradient(*major_radius, *minor_radius, p),
            ),
            SdfNode::Funnel {
                outer_radius,
                height,
                opening_radius,
                throat_radius,
            } => {
                let (cavity, z_off) = funnel_cavity(*height, *opening_radius, *throat_radius);
                let local = p - DVec3::new(0.0, 0.0, z_off);
                let ds = primitives::cylinder_distance(*outer_radius, *height, p);
                let dc = cavity.distance(local);
                let tied = (ds + dc).abs() < TIE_EPS;
                if ds >= -dc {
                    let g = primitives::cylinder_gradient(*outer_radius, *height, p)
                        .unwrap_or_else(|| self.fd_gradient(p));
                    (ds, g, !tied)
                } else {
                    let g = cavity.gradient(local).unwrap_or_else(|| self.fd_gradient(p));
                    (-dc, -g, !tied)
                }
            }
            SdfNode::HalfSpace { normal, offset } => (
                primitives::half_space_distance(*normal, *offset, p),
                primitives::half_space_gradient(*normal),
                true,
            ),
            SdfNode::Transformed {
                rotation,
                translation,
                child,
            } => {
                let (d, g, valid) = child.grad_impl(rotation.inverse() * (p - *translation));
                (d, *rotation * g, valid)
            }
            SdfNode::Union { a, b } => {
                let (da, ga, va) = a.grad_impl(p);
                let (db, gb, vb) = b.grad_impl(p);
                let tied = (da - db).abs() < TIE_EPS;
                if da <= db {
                    (da, ga, va && !tied)
                } else {
                    (db, gb, vb && !tied)
                }
            }
            SdfNode::Intersection { a, b } => {
                let (da, ga, va) = a.grad_impl(p);
                let (db, gb, vb) = b.grad_impl(p);
                let tied = (da - db).abs() < TIE_EPS;
                if da >= db {
                    (da, ga, va && !tied)
                } else {
                    (db, gb, vb && !tied)
                }
            }
            SdfNode::Difference { a, b } => {
                let (da, ga, va) = a.grad_impl(p);
                let (db, gb, vb) = b.grad_impl(p);
                let tied = (da + db).abs() < TIE_EPS;
                if da >= -db {
                    (da, ga, va && !tied)
                } else {
                    (-db, -gb, vb && !tied)
                }
            }
            SdfNode::Grid { .. } => (self.eval(p), self.fd_gradient(p), true),
        }
    }

    /// Central-difference gradient with step [`fd_step`].
    pub fn fd_gradient(&self, p: DVec3) -> DVec3 {
        self.fd_gradient_with_step(p, fd_step(p))
    }

    pub fn fd_gradient_with_step(&self, p: DVec3, h: f64) -> DVec3 {
        let mut g = DVec3::ZERO;
        for axis in 0..3 {
            let mut hi = p;
            let mut lo = p;
            hi[axis] += h;
            lo[axis] -= h;
            g[axis] = (self.eval(hi) - self.eval(lo)) / (2.0 * h);
        }
        g
    }

    /// Serializes the tree as a JSON document.
    pub fn to_document(&self) -> String {
        serde_json::to_string_pretty(self).expect("SdfNode serialization cannot fail")
    }

    /// Parses and validates a JSON document produced by [`Self::to_document`].
    pub fn from_document(doc: &str) -> Result<Self, Box<dyn std::error::Error>> {
        let node: SdfNode = serde_json::from_str(doc)?;
        node.validate()?;
        Ok(node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_point(rng: &mut StdRng, scale: f64) -> DVec3 {
        DVec3::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    }

    fn random_unit_quat(rng: &mut StdRng) -> DQuat {
        let q = DQuat::from_xyzw(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if q.length() < 1e-3 {
            DQuat::IDENTITY
        } else {
            q.normalize()
        }
    }

    #[test]
    fn sphere_eval_examples() {
        let s = SdfNode::sphere(1.0);
        assert_eq!(s.eval(DVec3::ZERO), -1.0);
        assert_eq!(s.eval(DVec3::new(2.0, 0.0, 0.0)), 1.0);
    }

    #[test]
    fn union_takes_min_of_operands() {
        // min(-0.1, 0.4) at (0.9, 0, 0): inside the sphere, outside the box.
        let u = SdfNode::union(SdfNode::sphere(1.0), SdfNode::box3(DVec3::splat(0.5)));
        let d = u.eval(DVec3::new(0.9, 0.0, 0.0));
        assert!((d + 0.1).abs() < 1e-12, "got {d}");
    }

    #[test]
    fn csg_rules_are_exact_min_max() {
        let a = SdfNode::sphere(0.8);
        let b = SdfNode::box3(DVec3::new(0.5, 0.4, 0.9));
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..500 {
            let p = random_point(&mut rng, 2.0);
            let da = a.eval(p);
            let db = b.eval(p);
            assert_eq!(SdfNode::union(a.clone(), b.clone()).eval(p), da.min(db));
            assert_eq!(
                SdfNode::intersection(a.clone(), b.clone()).eval(p),
                da.max(db)
            );
            assert_eq!(
                SdfNode::difference(a.clone(), b.clone()).eval(p),
                da.max(-db)
            );
        }
    }

    #[test]
    fn transformed_gradient_examples() {
        let t = SdfNode::transformed(DQuat::IDENTITY, DVec3::X, SdfNode::sphere(1.0));
        let q = t.grad(DVec3::new(3.0, 0.0, 0.0));
        assert!((q.distance - 1.0).abs() < 1e-12);
        assert!((q.gradient - DVec3::X).length() < 1e-12);
    }

    #[test]
    fn torus_gradient_example() {
        let t = SdfNode::torus(0.5, 0.2);
        let q = t.grad(DVec3::new(0.9, 0.0, 0.0));
        assert!((q.distance - 0.2).abs() < 1e-12);
        assert!((q.gradient - DVec3::X).length() < 1e-9);
        let fd = t.fd_gradient_with_step(DVec3::new(0.9, 0.0, 0.0), 1e-5);
        assert!((q.gradient - fd).abs().max_element() < 1e-7);
    }

    #[test]
    fn transform_invariance_random_rigid() {
        let shapes = [
            SdfNode::sphere(0.7),
            SdfNode::box3(DVec3::new(0.3, 0.5, 0.2)),
            SdfNode::cone(0.4, 0.8),
        ];
        let mut rng = StdRng::seed_from_u64(11);
        for shape in &shapes {
            for _ in 0..200 {
                let q = random_unit_quat(&mut rng);
                let t = random_point(&mut rng, 1.5);
                let p = random_point(&mut rng, 2.0);
                let node = SdfNode::transformed(q, t, shape.clone());
                let lhs = node.eval(q * p + t);
                let rhs = shape.eval(p);
                assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn union_tie_flags_subgradient() {
        // Two identical spheres: every point is a tie.
        let u = SdfNode::union(SdfNode::sphere(1.0), SdfNode::sphere(1.0));
        let q = u.grad(DVec3::new(2.0, 0.0, 0.0));
        assert!(!q.valid_gradient);
        assert!((q.gradient - DVec3::X).length() < 1e-12);
    }

    #[test]
    fn funnel_shell_and_cavity() {
        let f = SdfNode::funnel(1.0, 1.0, 0.8, 0.2);
        // Deep inside the wall material near the outer shell.
        assert!(f.eval(DVec3::new(0.95, 0.0, -0.4)) < 0.0);
        // Inside the cavity (open space).
        assert!(f.eval(DVec3::new(0.0, 0.0, 0.3)) > 0.0);
        // Through the throat below center.
        assert!(f.eval(DVec3::new(0.0, 0.0, -0.4)) > 0.0);
        // Outside entirely.
        assert!(f.eval(DVec3::new(2.0, 0.0, 0.0)) > 0.0);
    }

    #[test]
    fn document_roundtrip_with_wxyz_rotation() {
        let node = SdfNode::transformed(
            DQuat::from_axis_angle(DVec3::Z, 0.7),
            DVec3::new(0.1, -0.2, 0.3),
            SdfNode::funnel(1.0, 1.0, 0.8, 0.2),
        );
        let doc = node.to_document();
        assert!(doc.contains("\"type\""));
        let back = SdfNode::from_document(&doc).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..100 {
            let p = random_point(&mut rng, 2.0);
            assert!((node.eval(p) - back.eval(p)).abs() < 1e-12);
        }
        // Quaternion is stored w-first: identity must serialize as [1,0,0,0].
        let ident = SdfNode::transformed(DQuat::IDENTITY, DVec3::ZERO, SdfNode::sphere(1.0));
        let v: serde_json::Value = serde_json::from_str(&ident.to_document()).unwrap();
        assert_eq!(v["rotation"][0], 1.0);
        assert_eq!(v["rotation"][1], 0.0);
    }

    #[test]
    fn invalid_trees_are_rejected() {
        assert!(SdfNode::Sphere { radius: -1.0 }.validate().is_err());
        assert!(SdfNode::Funnel {
            outer_radius: 1.0,
            height: 1.0,
            opening_radius: 0.2,
            throat_radius: 0.3,
        }
        .validate()
        .is_err());
        assert!(SdfNode::HalfSpace {
            normal: DVec3::new(0.0, 0.0, 2.0),
            offset: 0.0,
        }
        .validate()
        .is_err());
    }
}
