//! Rollout evaluation metrics: Chamfer distance, its near-surface variant,
//! and surface penetration statistics.
//!
//! Nearest-neighbor queries run on a uniform grid with ring widening and
//! are exact (a ring is only accepted once no farther cell can hold a
//! closer point), so every metric is deterministic and checkable against
//! the O(N^2) brute force.

use std::collections::HashMap;

use glam::DVec3;
use serde::Serialize;

use crate::reference_sim::Trajectory;
use crate::sdf::SdfNode;

/// Exact nearest-neighbor structure over a fixed point set.
pub struct NearestNeighbors {
    cell: f64,
    buckets: HashMap<(i64, i64, i64), Vec<u32>>,
    points: Vec<DVec3>,
}

impl NearestNeighbors {
    pub fn build(points: &[DVec3]) -> NearestNeighbors {
        assert!(!points.is_empty(), "nearest-neighbor set must be non-empty");
        let mut lo = DVec3::splat(f64::INFINITY);
        let mut hi = DVec3::splat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.min(*p);
            hi = hi.max(*p);
        }
        let extent = (hi - lo).max_element().max(1e-9);
        // Aim for a handful of points per cell.
        let cell = (extent / (points.len() as f64).cbrt().max(1.0)).max(1e-9);
        let mut buckets: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(key_of(*p, cell)).or_default().push(i as u32);
        }
        NearestNeighbors {
            cell,
            buckets,
            points: points.to_vec(),
        }
    }

    fn brute(&self, q: DVec3) -> f64 {
        self.points
            .iter()
            .map(|&p| (p - q).length())
            .fold(f64::INFINITY, f64::min)
    }

    /// Euclidean distance from `q` to the closest stored point. Exact: the
    /// ring sweep only stops once no unscanned cell can hold a closer
    /// point, and falls back to the linear scan when the sweep would touch
    /// more cells than there are points (distant or degenerate queries).
    pub fn distance(&self, q: DVec3) -> f64 {
        let (cx, cy, cz) = key_of(q, self.cell);
        let budget = (8 * self.points.len()).max(64) as i64;
        let mut best = f64::INFINITY;
        let mut ring = 0i64;
        loop {
            let cells_scanned = (2 * ring + 1).pow(3);
            if cells_scanned > budget {
                return self.brute(q).min(best);
            }
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        if let Some(bucket) = self.buckets.get(&(cx + dx, cy + dy, cz + dz)) {
                            for &i in bucket {
                                let d = (self.points[i as usize] - q).length();
                                if d < best {
                                    best = d;
                                }
                            }
                        }
                    }
                }
            }
            // Any point beyond ring r sits at least r * cell away.
            if best <= ring as f64 * self.cell {
                return best;
            }
            ring += 1;
        }
    }
}

fn key_of(p: DVec3, cell: f64) -> (i64, i64, i64) {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}

/// Symmetric Chamfer distance: the two directed mean nearest-neighbor
/// distances, averaged.
pub fn chamfer(p: &[DVec3], g: &[DVec3]) -> f64 {
    assert!(!p.is_empty() && !g.is_empty(), "chamfer of an empty set");
    let to_g = NearestNeighbors::build(g);
    let to_p = NearestNeighbors::build(p);
    let mean_p: f64 = p.iter().map(|&q| to_g.distance(q)).sum::<f64>() / p.len() as f64;
    let mean_g: f64 = g.iter().map(|&q| to_p.distance(q)).sum::<f64>() / g.len() as f64;
    0.5 * (mean_p + mean_g)
}

/// Near-surface Chamfer: particles within `alpha` of the surface on either
/// side, *summed* (not averaged) nearest-neighbor distances to the full
/// opposite cloud, so the value scales with how much fluid misbehaves near
/// the solid. Zero when both filtered sets are empty.
pub fn chamfer_surface(p: &[DVec3], g: &[DVec3], sdf: &SdfNode, alpha: f64) -> f64 {
    let p_near: Vec<DVec3> = p.iter().copied().filter(|&q| sdf.eval(q) < alpha).collect();
    let g_near: Vec<DVec3> = g.iter().copied().filter(|&q| sdf.eval(q) < alpha).collect();
    let mut total = 0.0;
    if !p_near.is_empty() && !g.is_empty() {
        let to_g = NearestNeighbors::build(g);
        total += p_near.iter().map(|&q| to_g.distance(q)).sum::<f64>();
    }
    if !g_near.is_empty() && !p.is_empty() {
        let to_p = NearestNeighbors::build(p);
        total += g_near.iter().map(|&q| to_p.distance(q)).sum::<f64>();
    }
    total
}

/// Counts (frame, particle) incidences inside the solid and their mean
/// signed distance; `(0, 0.0)` when nothing penetrates.
pub fn penetration_stats(traj: &Trajectory, sdf: &SdfNode) -> (usize, f64) {
    let mut count = 0usize;
    let mut sum = 0.0;
    for frame in &traj.frames {
        for &p in &frame.positions {
            let f = sdf.eval(p);
            if f < 0.0 {
                count += 1;
                sum += f;
            }
        }
    }
    if count == 0 {
        (0, 0.0)
    } else {
        (count, sum / count as f64)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FrameMetrics {
    pub chamfer: f64,
    pub chamfer_surface: f64,
    pub number_inside: usize,
    pub mean_sdf_inside: f64,
}

/// Rollout-level metric summary; scalar fields are per-frame averages
/// except the penetration counters, which follow their own reductions
/// (count summed over frames, mean SDF over penetrating incidences).
#[derive(Clone, Debug, Serialize)]
pub struct MetricReport {
    pub chamfer: f64,
    pub chamfer_surface: f64,
    pub number_inside: usize,
    pub mean_sdf_inside: f64,
    pub per_frame: Vec<FrameMetrics>,
}

#[derive(Debug)]
pub enum MetricError {
    FrameMismatch { pred: usize, truth: usize },
    DtMismatch { pred: f64, truth: f64 },
}

impl std::fmt::Display for MetricError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricError::FrameMismatch { pred, truth } => {
                write!(f, "frame count mismatch: predicted {pred}, truth {truth}")
            }
            MetricError::DtMismatch { pred, truth } => {
                write!(f, "frame interval mismatch: predicted {pred}, truth {truth}")
            }
        }
    }
}

impl std::error::Error for MetricError {}

/// Evaluates a predicted rollout against the paired ground truth.
pub fn evaluate(
    pred: &Trajectory,
    truth: &Trajectory,
    sdf: &SdfNode,
    alpha: f64,
) -> Result<MetricReport, MetricError> {
    if pred.frames.len() != truth.frames.len() {
        return Err(MetricError::FrameMismatch {
            pred: pred.frames.len(),
            truth: truth.frames.len(),
        });
    }
    if (pred.dt - truth.dt).abs() > 1e-12 {
        return Err(MetricError::DtMismatch {
            pred: pred.dt,
            truth: truth.dt,
        });
    }
    let mut per_frame = Vec::with_capacity(pred.frames.len());
    let mut pen_count = 0usize;
    let mut pen_sum = 0.0;
    for (fp, ft) in pred.frames.iter().zip(&truth.frames) {
        let c = chamfer(&fp.positions, &ft.positions);
        let cs = chamfer_surface(&fp.positions, &ft.positions, sdf, alpha);
        let mut count = 0usize;
        let mut sum = 0.0;
        for &p in &fp.positions {
            let f = sdf.eval(p);
            if f < 0.0 {
                count += 1;
                sum += f;
            }
        }
        pen_count += count;
        pen_sum += sum;
        per_frame.push(FrameMetrics {
            chamfer: c,
            chamfer_surface: cs,
            number_inside: count,
            mean_sdf_inside: if count == 0 { 0.0 } else { sum / count as f64 },
        });
    }
    let n = per_frame.len() as f64;
    Ok(MetricReport {
        chamfer: per_frame.iter().map(|m| m.chamfer).sum::<f64>() / n,
        chamfer_surface: per_frame.iter().map(|m| m.chamfer_surface).sum::<f64>() / n,
        number_inside: pen_count,
        mean_sdf_inside: if pen_count == 0 {
            0.0
        } else {
            pen_sum / pen_count as f64
        },
        per_frame,
    })
}
