//! Reusable property suites over an SDF: eikonal norm, analytic-vs-FD
//! gradient agreement, and CSG sign membership. Shared by the test
//! suites and the `sdf-check` command.

use glam::DVec3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{is_smooth_at, SdfNode};
use crate::geom::Aabb;

/// Smoothness rejection threshold for property sampling; points where
/// two-scale FD gradients disagree more than this are near kinks.
pub const SMOOTHNESS_TOL: f64 = 1e-3;

/// Outcome of one sampled property check.
#[derive(Clone, Debug, Serialize)]
pub struct CheckSummary {
    pub name: String,
    pub samples_requested: usize,
    pub samples_checked: usize,
    pub samples_excluded: usize,
    pub worst_error: f64,
    pub tolerance: f64,
    pub violations: usize,
    /// First few violating points, for diagnosis.
    pub violation_examples: Vec<([f64; 3], f64)>,
    pub passed: bool,
}

impl CheckSummary {
    fn new(name: &str, requested: usize, tolerance: f64) -> Self {
        CheckSummary {
            name: name.to_string(),
            samples_requested: requested,
            samples_checked: 0,
            samples_excluded: 0,
            worst_error: 0.0,
            tolerance,
            violations: 0,
            violation_examples: Vec::new(),
            passed: true,
        }
    }

    fn record(&mut self, p: DVec3, err: f64) {
        self.samples_checked += 1;
        if err > self.worst_error {
            self.worst_error = err;
        }
        if err >= self.tolerance {
            self.violations += 1;
            if self.violation_examples.len() < 8 {
                self.violation_examples.push((p.to_array(), err));
            }
        }
    }

    fn finish(mut self) -> Self {
        self.passed = self.violations == 0;
        self
    }
}

/// `| |grad F| - 1 |` at `n` smooth sample points in `bounds`.
pub fn eikonal_check(
    sdf: &SdfNode,
    bounds: Aabb,
    n: usize,
    seed: u64,
    tolerance: f64,
) -> CheckSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = CheckSummary::new("eikonal", n, tolerance);
    while summary.samples_checked < n {
        let p = bounds.sample(&mut rng);
        let q = sdf.grad(p);
        if !q.valid_gradient || !is_smooth_at(sdf, p, SMOOTHNESS_TOL) {
            summary.samples_excluded += 1;
            continue;
        }
        summary.record(p, (q.gradient.length() - 1.0).abs());
    }
    summary.finish()
}

/// Max component difference between the analytic gradient and central
/// differences with step `h` at `n` smooth sample points.
pub fn gradient_consistency_check(
    sdf: &SdfNode,
    bounds: Aabb,
    n: usize,
    seed: u64,
    h: f64,
    tolerance: f64,
) -> CheckSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = CheckSummary::new("gradient_consistency", n, tolerance);
    while summary.samples_checked < n {
        let p = bounds.sample(&mut rng);
        let q = sdf.grad(p);
        if !q.valid_gradient || !is_smooth_at(sdf, p, SMOOTHNESS_TOL) {
            summary.samples_excluded += 1;
            continue;
        }
        let fd = sdf.fd_gradient_with_step(p, h);
        summary.record(p, (q.gradient - fd).abs().max_element());
    }
    summary.finish()
}

/// Checks that the sign of a CSG composition matches brute-force boolean
/// membership computed from the operand signs.
pub fn csg_sign_check(
    combined: &SdfNode,
    membership: impl Fn(DVec3) -> bool,
    bounds: Aabb,
    n: usize,
    seed: u64,
) -> CheckSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = CheckSummary::new("csg_sign", n, 0.5);
    while summary.samples_checked < n {
        let p = bounds.sample(&mut rng);
        let d = combined.eval(p);
        if d.abs() < super::TIE_EPS {
            summary.samples_excluded += 1;
            continue;
        }
        let inside = d < 0.0;
        let expected = membership(p);
        summary.record(p, if inside == expected { 0.0 } else { 1.0 });
    }
    summary.finish()
}

/// Boolean solid membership computed recursively from operand signs, which
/// are exact for primitives. The independent oracle for CSG sign checks.
pub fn boolean_membership(node: &SdfNode, p: DVec3) -> bool {
    match node {
        SdfNode::Union { a, b } => boolean_membership(a, p) || boolean_membership(b, p),
        SdfNode::Intersection { a, b } => boolean_membership(a, p) && boolean_membership(b, p),
        SdfNode::Difference { a, b } => boolean_membership(a, p) && !boolean_membership(b, p),
        SdfNode::Transformed {
            rotation,
            translation,
            child,
        } => boolean_membership(child, rotation.inverse() * (p - *translation)),
        other => other.eval(p) < 0.0,
    }
}

/// Sign agreement of a composite node against [`boolean_membership`].
pub fn csg_sign_check_node(node: &SdfNode, bounds: Aabb, n: usize, seed: u64) -> CheckSummary {
    csg_sign_check(node, |p| boolean_membership(node, p), bounds, n, seed)
}

/// The five training primitives at representative parameters, plus the
/// funnel, with sampling bounds for property checks.
pub fn standard_shapes() -> Vec<(&'static str, SdfNode, Aabb)> {
    let wide = |s: f64| Aabb::new(DVec3::splat(-s), DVec3::splat(s));
    vec![
        ("sphere", SdfNode::sphere(0.7), wide(1.6)),
        (
            "box",
            SdfNode::box3(DVec3::new(0.5, 0.35, 0.6)),
            wide(1.4),
        ),
        ("cylinder", SdfNode::cylinder(0.45, 0.9), wide(1.4)),
        ("cone", SdfNode::cone(0.55, 0.85), wide(1.4)),
        ("torus", SdfNode::torus(0.5, 0.18), wide(1.4)),
        ("funnel", SdfNode::funnel(0.5, 0.5, 0.4, 0.12), wide(1.2)),
    ]
}
