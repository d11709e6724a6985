//! Graph-size and step-time instrumentation comparing the implicit-surface
//! variant against boundary-particle baselines of growing resolution.
//!
//! Edge counts are measured on the graphs actually built during a rollout,
//! never estimated. Wall times are medians over warm repeats and are only
//! reported, never asserted against reference numbers.

use std::rc::Rc;
use std::time::Instant;

use serde::Serialize;

use crate::autodiff::sdf_ops::{ParamSdf, StaticSdf};
use crate::autodiff::{Tape, Tensor};
use crate::graph_net::{
    build_graph, forward_t, positions_tensor, ModelParams, Variant,
};
use crate::reference_sim::{FluidState, SceneSpec};
use crate::sdf::sample_surface;

#[derive(Clone, Debug, Serialize)]
pub struct EfficiencyRow {
    pub variant: Variant,
    /// Boundary sample count; zero for the implicit variant.
    pub surface_count: usize,
    pub max_edges: usize,
    pub peak_nodes: usize,
    pub mean_step_ms: f64,
    pub median_step_ms: f64,
    /// Set when the per-repeat medians spread by more than 20%.
    pub timing_flagged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EfficiencyReport {
    pub rollout_steps: usize,
    pub repeats: usize,
    pub rows: Vec<EfficiencyRow>,
}

impl EfficiencyReport {
    /// CSV columns: variant, surface_count, max_edges, median_step_ms.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,surface_count,max_edges,median_step_ms\n");
        for row in &self.rows {
            let name = match row.variant {
                Variant::SdfFeatures => "sdf",
                Variant::BoundaryParticles => "particles",
            };
            out.push_str(&format!(
                "{name},{},{},{:.4}\n",
                row.surface_count, row.max_edges, row.median_step_ms
            ));
        }
        out
    }
}

struct RolloutProbe {
    max_edges: usize,
    peak_nodes: usize,
    step_ms: Vec<f64>,
}

fn probe_rollout(
    params: &ModelParams,
    scene: &SceneSpec,
    window: &[FluidState],
    steps: usize,
    surface: Option<&[glam::DVec3]>,
) -> RolloutProbe {
    let cfg = &params.config;
    let tape = Tape::new();
    let staged = params.stage(&tape, false);
    let family: Rc<dyn ParamSdf> = Rc::new(StaticSdf(scene.scene_node()));
    let mut history: Vec<Tensor> = window
        .iter()
        .map(|s| positions_tensor(&s.positions))
        .collect();
    let mut probe = RolloutProbe {
        max_edges: 0,
        peak_nodes: 0,
        step_ms: Vec::with_capacity(steps),
    };
    for _ in 0..steps {
        let t0 = Instant::now();
        let graph = build_graph(&tape, &history, &family, &[], surface, cfg, 0.005)
            .expect("window sized by caller");
        probe.max_edges = probe.max_edges.max(graph.n_edges());
        probe.peak_nodes = probe.peak_nodes.max(graph.n_nodes());
        let accel = forward_t(&tape, &staged, &graph);
        let cur = &history[history.len() - 1];
        let prev = &history[history.len() - 2];
        let next = tape.add(
            &tape.add(cur, &tape.sub(cur, prev)),
            &tape.scale(&accel, 0.005 * 0.005),
        );
        probe.step_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        history.remove(0);
        history.push(next);
    }
    probe
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Rolls out both variants over the same scene, recording the maximum graph
/// size and step timings: one row for the implicit variant, then one per
/// boundary sample count.
pub fn bench_graph_growth(
    sdf_params: &ModelParams,
    particle_params: &ModelParams,
    scene: &SceneSpec,
    window: &[FluidState],
    steps: usize,
    surface_counts: &[usize],
    repeats: usize,
) -> EfficiencyReport {
    assert_eq!(sdf_params.config.variant, Variant::SdfFeatures);
    assert_eq!(particle_params.config.variant, Variant::BoundaryParticles);
    let repeats = repeats.max(1);

    let mut rows = Vec::with_capacity(surface_counts.len() + 1);
    let mut run = |params: &ModelParams, surface: Option<&[glam::DVec3]>, count: usize| {
        let mut all_ms: Vec<f64> = Vec::new();
        let mut repeat_medians = Vec::with_capacity(repeats);
        let mut max_edges = 0;
        let mut peak_nodes = 0;
        for _ in 0..repeats {
            let probe = probe_rollout(params, scene, window, steps, surface);
            max_edges = max_edges.max(probe.max_edges);
            peak_nodes = peak_nodes.max(probe.peak_nodes);
            let mut ms = probe.step_ms.clone();
            repeat_medians.push(median(&mut ms));
            all_ms.extend(probe.step_ms);
        }
        let mean = all_ms.iter().sum::<f64>() / all_ms.len().max(1) as f64;
        let med = median(&mut all_ms);
        let spread = {
            let lo = repeat_medians.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = repeat_medians
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            let mid = median(&mut repeat_medians);
            if mid > 0.0 {
                (hi - lo) / mid
            } else {
                0.0
            }
        };
        rows.push(EfficiencyRow {
            variant: params.config.variant,
            surface_count: count,
            max_edges,
            peak_nodes,
            mean_step_ms: mean,
            median_step_ms: med,
            timing_flagged: spread > 0.2,
        });
    };

    run(sdf_params, None, 0);
    for &count in surface_counts {
        let bounds = scene.container.inflate(0.5 * scene.particle_spacing);
        let samples = sample_surface(&scene.scene_node(), count, bounds, scene.seed ^ 0x51FACE)
            .expect("scene surface sampling");
        let mut params = particle_params.clone();
        params.config.boundary_particle_count = count;
        run(&params, Some(&samples), count);
    }

    EfficiencyReport {
        rollout_steps: steps,
        repeats,
        rows,
    }
}
