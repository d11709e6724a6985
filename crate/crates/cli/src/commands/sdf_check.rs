//! `sdf-check`: run the eikonal, gradient-consistency, and CSG sign suites
//! on a user-supplied SDF document or baked grid.

use std::path::Path;

use glam::DVec3;
use serde::Serialize;

use sdfsim_core::geom::Aabb;
use sdfsim_core::sdf::checks::{
    csg_sign_check_node, eikonal_check, gradient_consistency_check, CheckSummary,
};
use sdfsim_core::sdf::{GridSdf, SdfNode};

use crate::CliError;

#[derive(Serialize)]
pub struct SdfCheckReport {
    pub source: String,
    pub samples: usize,
    pub checks: Vec<CheckSummary>,
    pub passed: bool,
}

/// Loads `.gsdf` blobs as grid nodes, anything else as an SDF document.
fn load_node(path: &Path) -> Result<SdfNode, CliError> {
    if path.extension().is_some_and(|e| e == "gsdf") {
        let file = std::fs::File::open(path)
            .map_err(|e| CliError::Io(format!("opening {}: {e}", path.display())))?;
        let grid = GridSdf::read_from(&mut std::io::BufReader::new(file))
            .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        Ok(SdfNode::Grid { grid })
    } else {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        SdfNode::from_document(&text)
            .map_err(|e| CliError::Config(format!("parsing {}: {e}", path.display())))
    }
}

/// Sampling bounds: the grid lattice box, or a generic region scaled to
/// contain the desk-size shapes this toolkit builds.
fn check_bounds(node: &SdfNode) -> Aabb {
    match node {
        SdfNode::Grid { grid } => Aabb::new(grid.origin, grid.max_corner()),
        _ => Aabb::new(DVec3::splat(-1.5), DVec3::splat(1.5)),
    }
}

pub fn run_checks(node: &SdfNode, samples: usize, seed_base: u64) -> Vec<CheckSummary> {
    let bounds = check_bounds(node);
    // Grid fields interpolate, so their gradient norms are only accurate to
    // the lattice resolution; analytic trees are held to the tight bars.
    let (eik_tol, grad_tol) = match node {
        SdfNode::Grid { grid } => (0.5 * grid.spacing.max(1e-3), 0.5 * grid.spacing.max(1e-3)),
        _ => (1e-4, 1e-4),
    };
    let mut checks = vec![
        eikonal_check(node, bounds, samples, seed_base + 1, eik_tol),
        gradient_consistency_check(node, bounds, samples, seed_base + 2, 1e-5, grad_tol),
    ];
    if matches!(
        node,
        SdfNode::Union { .. } | SdfNode::Intersection { .. } | SdfNode::Difference { .. }
    ) {
        checks.push(csg_sign_check_node(node, bounds, samples, seed_base + 3));
    }
    checks
}

pub fn cmd_sdf_check(
    sdf_path: &Path,
    out_path: Option<&Path>,
    samples: usize,
) -> Result<SdfCheckReport, CliError> {
    let node = load_node(sdf_path)?;
    node.validate()
        .map_err(|e| CliError::Config(format!("invalid SDF: {e}")))?;
    let checks = run_checks(&node, samples, 1000);
    let report = SdfCheckReport {
        source: sdf_path.display().to_string(),
        samples,
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    match out_path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError::Io(format!("writing {}: {e}", p.display())))?,
        None => println!("{text}"),
    }
    Ok(report)
}
