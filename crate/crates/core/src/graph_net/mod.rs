//! The learned simulator: graph construction, encode-process-decode
//! message passing, integration, and autoregressive rollout.
//!
//! Two ways of telling the network about solids:
//! - `SdfFeatures`: every fluid node carries the signed distance (clamped
//!   to the connectivity radius) and its gradient; no solid nodes exist.
//! - `BoundaryParticles`: static surface samples are appended as extra
//!   nodes with a particle-type one-hot and no SDF features.
//!
//! Node features never include absolute positions, only velocity history
//! and (relative) surface information, so the architecture is exactly
//! translation invariant.

mod params;
pub mod spatial;

pub use params::{Mlp, MlpTensors, ModelParams, StagedParams};
pub use spatial::{neighbor_pairs, EdgeList};

use std::rc::Rc;

use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::autodiff::sdf_ops::{self, ParamSdf, StaticSdf};
use crate::autodiff::{Tape, Tensor};
use crate::reference_sim::{FluidState, SceneSpec, Trajectory};
use crate::sdf;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub enum Variant {
    SdfFeatures,
    BoundaryParticles,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Connectivity radius for graph edges, in meters.
    pub connectivity_radius: f64,
    /// Number of velocity history steps C (the window holds C+1 positions).
    pub history_len: usize,
    pub hidden_dim: usize,
    /// Message-passing blocks M.
    pub num_blocks: usize,
    /// Hidden layers per MLP.
    pub mlp_hidden_layers: usize,
    pub variant: Variant,
    /// Static surface samples appended in the BoundaryParticles variant.
    pub boundary_particle_count: usize,
}

impl ModelConfig {
    pub const EDGE_FEATURE_DIM: usize = 4;

    /// Desk-scale defaults: 5 blocks of width 32 with 3 velocity steps.
    pub fn desk_default(connectivity_radius: f64, variant: Variant) -> ModelConfig {
        ModelConfig {
            connectivity_radius,
            history_len: 3,
            hidden_dim: 32,
            num_blocks: 5,
            mlp_hidden_layers: 2,
            variant,
            boundary_particle_count: if variant == Variant::BoundaryParticles {
                500
            } else {
                0
            },
        }
    }

    pub fn node_feature_dim(&self) -> usize {
        match self.variant {
            // C velocities, F(p) clamped, grad F(p).
            Variant::SdfFeatures => 3 * self.history_len + 4,
            // C velocities plus a fluid/boundary one-hot.
            Variant::BoundaryParticles => 3 * self.history_len + 2,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.connectivity_radius.is_nan() || self.connectivity_radius <= 0.0 {
            return Err("connectivity_radius must be positive".into());
        }
        if self.history_len < 1 {
            return Err("history_len must be >= 1".into());
        }
        if self.num_blocks < 1 {
            return Err("num_blocks must be >= 1".into());
        }
        if self.hidden_dim < 1 || self.mlp_hidden_layers < 1 {
            return Err("hidden_dim and mlp_hidden_layers must be >= 1".into());
        }
        Ok(())
    }
}

/// The encoded state fed to message passing.
#[derive(Debug)]
pub struct ParticleGraph {
    pub node_features: Tensor,
    pub edge_features: Tensor,
    pub senders: Vec<u32>,
    pub receivers: Vec<u32>,
    /// Node rows holding fluid particles, in input order. Boundary nodes
    /// (BoundaryParticles variant) are the remaining rows.
    pub fluid_index: Vec<u32>,
    /// Raw (unclamped) signed distance per fluid particle, for loss
    /// weighting and diagnostics.
    pub sdf_values: Vec<f64>,
}

impl ParticleGraph {
    pub fn n_nodes(&self) -> usize {
        self.node_features.shape()[0]
    }

    pub fn n_edges(&self) -> usize {
        self.senders.len()
    }

    pub fn n_fluid(&self) -> usize {
        self.fluid_index.len()
    }
}

/// Combines graphs into one disjoint batch graph (constant features only).
pub fn merge_graphs(graphs: Vec<ParticleGraph>) -> ParticleGraph {
    assert!(!graphs.is_empty());
    if graphs.len() == 1 {
        return graphs.into_iter().next().unwrap();
    }
    let d_node = graphs[0].node_features.shape()[1];
    let d_edge = graphs[0].edge_features.shape()[1];
    let mut node_data = Vec::new();
    let mut edge_data = Vec::new();
    let mut senders = Vec::new();
    let mut receivers = Vec::new();
    let mut fluid_index = Vec::new();
    let mut sdf_values = Vec::new();
    let mut node_offset = 0u32;
    for g in graphs {
        assert!(
            !g.node_features.requires_grad() && !g.edge_features.requires_grad(),
            "merge_graphs is for constant (training) graphs"
        );
        node_data.extend_from_slice(g.node_features.data());
        edge_data.extend_from_slice(g.edge_features.data());
        senders.extend(g.senders.iter().map(|&s| s + node_offset));
        receivers.extend(g.receivers.iter().map(|&r| r + node_offset));
        fluid_index.extend(g.fluid_index.iter().map(|&i| i + node_offset));
        sdf_values.extend_from_slice(&g.sdf_values);
        node_offset += g.n_nodes() as u32;
    }
    let n_nodes = node_offset as usize;
    let n_edges = senders.len();
    ParticleGraph {
        node_features: Tensor::constant(node_data, &[n_nodes, d_node]),
        edge_features: Tensor::constant(edge_data, &[n_edges, d_edge]),
        senders,
        receivers,
        fluid_index,
        sdf_values,
    }
}

#[derive(Debug)]
pub enum GraphError {
    HistoryTooShort { needed: usize, got: usize },
}

impl std::fmt::Display for GraphError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GraphError::HistoryTooShort { needed, got } => {
                write!(f, "history window needs {needed} frames, got {got}")
            }
        }
    }
}

impl std::error::Error for GraphError {}

pub fn positions_tensor(positions: &[DVec3]) -> Tensor {
    let mut data = Vec::with_capacity(positions.len() * 3);
    for p in positions {
        data.extend_from_slice(&[p.x, p.y, p.z]);
    }
    Tensor::constant(data, &[positions.len(), 3])
}

pub fn tensor_positions(t: &Tensor) -> Vec<DVec3> {
    t.data()
        .chunks_exact(3)
        .map(|c| DVec3::new(c[0], c[1], c[2]))
        .collect()
}

/// Static boundary samples for the BoundaryParticles variant, drawn once
/// per scene from the full scene surface.
pub fn boundary_samples(scene: &SceneSpec, count: usize) -> Vec<DVec3> {
    let bounds = scene.container.inflate(0.5 * scene.particle_spacing);
    sdf::sample_surface(&scene.scene_node(), count, bounds, scene.seed ^ 0x51FACE)
        .expect("container walls always intersect the sampling bounds")
}

/// Builds the particle graph from a position history window.
///
/// `window` holds C+1 position tensors `[N, 3]`, oldest first. Velocity
/// features are finite differences over `frame_dt`. In the SdfFeatures
/// variant the surface enters through `[F(p) clamped to +-eps, grad F(p)]`
/// computed by recorded ops, so both positions and shape parameters can be
/// differentiated through the features.
#[allow(clippy::too_many_arguments)]
pub fn build_graph(
    tape: &Tape,
    window: &[Tensor],
    family: &Rc<dyn ParamSdf>,
    shape_params: &[Tensor],
    surface_samples: Option<&[DVec3]>,
    cfg: &ModelConfig,
    frame_dt: f64,
) -> Result<ParticleGraph, GraphError> {
    let needed = cfg.history_len + 1;
    if window.len() != needed {
        return Err(GraphError::HistoryTooShort {
            needed,
            got: window.len(),
        });
    }
    let current = window.last().unwrap();
    let n_fluid = current.shape()[0];
    let eps = cfg.connectivity_radius;
    let fluid_positions = tensor_positions(current);
    let theta: Vec<f64> = shape_params.iter().map(Tensor::item).collect();
    let scene = family.build(&theta);
    let sdf_values: Vec<f64> = fluid_positions.iter().map(|&p| scene.eval(p)).collect();

    match cfg.variant {
        Variant::SdfFeatures => {
            let edges = neighbor_pairs(&fluid_positions, eps);

            let mut parts: Vec<Tensor> = Vec::with_capacity(cfg.history_len + 2);
            for k in 1..window.len() {
                parts.push(tape.scale(&tape.sub(&window[k], &window[k - 1]), 1.0 / frame_dt));
            }
            let f_raw = sdf_ops::sdf_values(tape, family, shape_params, current);
            parts.push(tape.clamp(&f_raw, -eps, eps));
            parts.push(sdf_ops::sdf_gradients(tape, family, shape_params, current));
            let part_refs: Vec<&Tensor> = parts.iter().collect();
            let node_features = tape.concat_cols(&part_refs);

            let edge_features = edge_feature_tensor(tape, current, &edges, eps);
            Ok(ParticleGraph {
                node_features,
                edge_features,
                senders: edges.senders,
                receivers: edges.receivers,
                fluid_index: (0..n_fluid as u32).collect(),
                sdf_values,
            })
        }
        Variant::BoundaryParticles => {
            assert!(
                window.iter().all(|t| !t.requires_grad())
                    && shape_params.iter().all(|t| !t.requires_grad()),
                "the BoundaryParticles variant is not differentiable"
            );
            let surface = surface_samples.unwrap_or(&[]);
            let mut all_positions = fluid_positions.clone();
            all_positions.extend_from_slice(surface);
            let n_all = all_positions.len();
            let edges = neighbor_pairs(&all_positions, eps);

            let d_node = cfg.node_feature_dim();
            let mut feats = vec![0.0; n_all * d_node];
            let inv_dt = 1.0 / frame_dt;
            for i in 0..n_fluid {
                let row = &mut feats[i * d_node..(i + 1) * d_node];
                for k in 1..window.len() {
                    let prev = &window[k - 1].data()[i * 3..i * 3 + 3];
                    let cur = &window[k].data()[i * 3..i * 3 + 3];
                    for axis in 0..3 {
                        row[(k - 1) * 3 + axis] = (cur[axis] - prev[axis]) * inv_dt;
                    }
                }
                row[d_node - 2] = 1.0; // fluid type
            }
            for s in 0..surface.len() {
                feats[(n_fluid + s) * d_node + d_node - 1] = 1.0; // boundary type
            }
            let node_features = Tensor::constant(feats, &[n_all, d_node]);
            let all_t = positions_tensor(&all_positions);
            let edge_features = edge_feature_tensor(tape, &all_t, &edges, eps);
            Ok(ParticleGraph {
                node_features,
                edge_features,
                senders: edges.senders,
                receivers: edges.receivers,
                fluid_index: (0..n_fluid as u32).collect(),
                sdf_values,
            })
        }
    }
}

/// Edge features: relative displacement (sender minus receiver) and its
/// norm, both scaled by the connectivity radius.
fn edge_feature_tensor(tape: &Tape, positions: &Tensor, edges: &EdgeList, eps: f64) -> Tensor {
    let ps = tape.gather_rows(positions, &edges.senders);
    let pr = tape.gather_rows(positions, &edges.receivers);
    let disp = tape.scale(&tape.sub(&ps, &pr), 1.0 / eps);
    let ones = Tensor::constant(vec![1.0; 3], &[3, 1]);
    // The epsilon keeps the sqrt backward finite should two particles
    // ever coincide exactly.
    let sq = tape.add_scalar(&tape.matmul(&tape.square(&disp), &ones), 1e-24);
    let norm = tape.sqrt(&sq);
    tape.concat_cols(&[&disp, &norm])
}

/// Normalized-space forward pass: encode, M message-passing blocks with
/// residual connections, decode. Output is `[n_fluid, 3]` in normalized
/// acceleration units; boundary nodes are masked out.
pub fn forward_normalized(tape: &Tape, staged: &StagedParams, graph: &ParticleGraph) -> Tensor {
    let n_nodes = graph.n_nodes();
    let nf = {
        let centered = tape.sub(
            &graph.node_features,
            &tape.broadcast_rows(&staged.node_mean, n_nodes),
        );
        tape.mul(&centered, &tape.broadcast_rows(&staged.node_inv_std, n_nodes))
    };
    let n_edges = graph.n_edges();
    let ef = {
        let centered = tape.sub(
            &graph.edge_features,
            &tape.broadcast_rows(&staged.edge_mean, n_edges),
        );
        tape.mul(&centered, &tape.broadcast_rows(&staged.edge_inv_std, n_edges))
    };

    let mut v = staged.node_encoder.apply(tape, &nf);
    let mut e = staged.edge_encoder.apply(tape, &ef);
    for (f_e, f_n) in &staged.blocks {
        let vs = tape.gather_rows(&v, &graph.senders);
        let vr = tape.gather_rows(&v, &graph.receivers);
        let e_in = tape.concat_cols(&[&vs, &vr, &e]);
        e = tape.add(&e, &f_e.apply(tape, &e_in));
        let agg = tape.scatter_add_rows(&e, &graph.receivers, n_nodes);
        let n_in = tape.concat_cols(&[&v, &agg]);
        v = tape.add(&v, &f_n.apply(tape, &n_in));
    }
    let decoded = staged.decoder.apply(tape, &v);
    let identity = graph.n_fluid() == n_nodes
        && graph.fluid_index.iter().enumerate().all(|(i, &r)| i as u32 == r);
    if identity {
        decoded
    } else {
        tape.gather_rows(&decoded, &graph.fluid_index)
    }
}

/// Physical-space accelerations `[n_fluid, 3]`.
pub fn forward_t(tape: &Tape, staged: &StagedParams, graph: &ParticleGraph) -> Tensor {
    let norm = forward_normalized(tape, staged, graph);
    let n = norm.shape()[0];
    tape.add(
        &tape.mul(&norm, &tape.broadcast_rows(&staged.accel_std, n)),
        &tape.broadcast_rows(&staged.accel_mean, n),
    )
}

/// Convenience forward pass on plain states.
pub fn forward(params: &ModelParams, graph: &ParticleGraph) -> Vec<DVec3> {
    let tape = Tape::new();
    let staged = params.stage(&tape, false);
    tensor_positions(&forward_t(&tape, &staged, graph))
}

/// Semi-implicit Euler: `v' = v + a dt`, `p' = p + v' dt`.
pub fn euler_integrate(state: &FluidState, accel: &[DVec3], dt: f64) -> FluidState {
    assert_eq!(state.len(), accel.len());
    let mut velocities = Vec::with_capacity(state.len());
    let mut positions = Vec::with_capacity(state.len());
    for ((&v0, &p0), &a) in state.velocities.iter().zip(&state.positions).zip(accel) {
        let v = v0 + a * dt;
        velocities.push(v);
        positions.push(p0 + v * dt);
    }
    FluidState {
        positions,
        velocities,
        time_index: state.time_index + 1,
    }
}

#[derive(Debug)]
pub enum RolloutError {
    Diverged { step: usize },
    Graph(GraphError),
}

impl std::fmt::Display for RolloutError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RolloutError::Diverged { step } => write!(f, "rollout diverged at step {step}"),
            RolloutError::Graph(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for RolloutError {}

impl From<GraphError> for RolloutError {
    fn from(e: GraphError) -> Self {
        RolloutError::Graph(e)
    }
}

/// Differentiable autoregressive rollout. Returns the predicted position
/// tensors, one per step (the priming window is not included).
///
/// `projection` moves penetrating particles back to the surface after each
/// step; it breaks the gradient chain, so it is rejected when any input is
/// on the tape.
#[allow(clippy::too_many_arguments)]
pub fn rollout_t(
    tape: &Tape,
    staged: &StagedParams,
    family: &Rc<dyn ParamSdf>,
    shape_params: &[Tensor],
    surface_samples: Option<&[DVec3]>,
    cfg: &ModelConfig,
    window: &[Tensor],
    steps: usize,
    frame_dt: f64,
    projection: bool,
) -> Result<Vec<Tensor>, RolloutError> {
    assert!(steps >= 1);
    let on_tape = window.iter().chain(shape_params).any(Tensor::requires_grad)
        || staged.leaves.iter().any(Tensor::requires_grad);
    assert!(
        !(projection && on_tape),
        "surface projection is not differentiable; run it off-tape"
    );
    let mut history: Vec<Tensor> = window.to_vec();
    let mut outputs = Vec::with_capacity(steps);
    let scene = if projection {
        let theta: Vec<f64> = shape_params.iter().map(Tensor::item).collect();
        Some(family.build(&theta))
    } else {
        None
    };
    for step in 0..steps {
        let graph = build_graph(
            tape,
            &history,
            family,
            shape_params,
            surface_samples,
            cfg,
            frame_dt,
        )?;
        let accel = forward_t(tape, staged, &graph);
        let p_cur = &history[history.len() - 1];
        let p_prev = &history[history.len() - 2];
        // p' = p + (p - p_prev) + a dt^2  (semi-implicit Euler on the
        // finite-difference velocity).
        let mut p_next = tape.add(
            &tape.add(p_cur, &tape.sub(p_cur, p_prev)),
            &tape.scale(&accel, frame_dt * frame_dt),
        );
        if !p_next.data().iter().all(|v| v.is_finite()) {
            return Err(RolloutError::Diverged { step });
        }
        if let Some(scene) = &scene {
            let mut data = p_next.data().to_vec();
            for chunk in data.chunks_exact_mut(3) {
                let p = DVec3::new(chunk[0], chunk[1], chunk[2]);
                if scene.eval(p) < 0.0 {
                    let proj = sdf::project_to_surface(scene, p, 16);
                    chunk.copy_from_slice(&[proj.point.x, proj.point.y, proj.point.z]);
                }
            }
            p_next = Tensor::constant(data, p_next.shape());
        }
        history.remove(0);
        history.push(p_next.clone());
        outputs.push(p_next);
    }
    Ok(outputs)
}

/// Autoregressive rollout from a priming window of states. The returned
/// trajectory starts with the window frames and appends `steps` predicted
/// frames; velocities are finite differences over `frame_dt`.
pub fn rollout(
    params: &ModelParams,
    scene: &SceneSpec,
    window: &[FluidState],
    steps: usize,
    frame_dt: f64,
    projection: bool,
) -> Result<Trajectory, RolloutError> {
    let cfg = &params.config;
    let tape = Tape::new();
    let staged = params.stage(&tape, false);
    let family: Rc<dyn ParamSdf> = Rc::new(StaticSdf(scene.scene_node()));
    let surface = match cfg.variant {
        Variant::BoundaryParticles => Some(boundary_samples(scene, cfg.boundary_particle_count)),
        Variant::SdfFeatures => None,
    };
    let window_t: Vec<Tensor> = window.iter().map(|s| positions_tensor(&s.positions)).collect();
    let predicted = rollout_t(
        &tape,
        &staged,
        &family,
        &[],
        surface.as_deref(),
        cfg,
        &window_t,
        steps,
        frame_dt,
        projection,
    )?;

    let mut frames: Vec<FluidState> = window.to_vec();
    for t in predicted {
        let positions = tensor_positions(&t);
        let prev = &frames.last().unwrap().positions;
        let velocities: Vec<DVec3> = positions
            .iter()
            .zip(prev)
            .map(|(p, q)| (*p - *q) / frame_dt)
            .collect();
        frames.push(FluidState {
            positions,
            velocities,
            time_index: frames.len() - 1,
        });
    }
    for (i, f) in frames.iter_mut().enumerate() {
        f.time_index = i;
    }
    Ok(Trajectory {
        frames,
        dt: frame_dt,
        scene: scene.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Aabb;
    use crate::sdf::SdfNode;
    use glam::DQuat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_scene() -> SceneSpec {
        SceneSpec {
            container: Aabb::new(DVec3::new(-0.5, -0.5, 0.0), DVec3::new(0.5, 0.5, 2.0)),
            object: Some(SdfNode::sphere(0.15)),
            object_rotation: DQuat::IDENTITY,
            object_translation: DVec3::new(0.0, 0.0, 0.15),
            fluid_block: Aabb::new(DVec3::new(-0.155, -0.155, 0.6), DVec3::new(0.155, 0.155, 0.85)),
            particle_spacing: 0.06,
            seed: 3,
        }
    }

    fn window_from(positions: &[DVec3], c: usize) -> Vec<Tensor> {
        (0..=c).map(|_| positions_tensor(positions)).collect()
    }

    fn static_family(scene: &SceneSpec) -> Rc<dyn ParamSdf> {
        Rc::new(StaticSdf(scene.scene_node()))
    }

    #[test]
    fn node_features_at_rest_far_from_surface() {
        let scene = test_scene();
        let cfg = ModelConfig::desk_default(0.09, Variant::SdfFeatures);
        let tape = Tape::new();
        // One particle far from every surface, at rest.
        let pts = [DVec3::new(0.3, 0.3, 1.5)];
        let window = window_from(&pts, cfg.history_len);
        let graph = build_graph(
            &tape,
            &window,
            &static_family(&scene),
            &[],
            None,
            &cfg,
            0.005,
        )
        .unwrap();
        let row = graph.node_features.data();
        for (k, &v) in row.iter().take(3 * cfg.history_len).enumerate() {
            assert_eq!(v, 0.0, "velocity feature {k} must be zero at rest");
        }
        // F is clamped to +eps far away.
        assert_eq!(row[3 * cfg.history_len], cfg.connectivity_radius);
        assert_eq!(graph.n_edges(), 0);
    }

    #[test]
    fn sdf_feature_is_raw_distance_before_clamp() {
        let scene = test_scene();
        let cfg = ModelConfig::desk_default(0.09, Variant::SdfFeatures);
        let node = scene.scene_node();
        // Place a particle at F about 0.3 eps above the object.
        let target = 0.3 * cfg.connectivity_radius;
        let p = DVec3::new(0.0, 0.0, 0.30 + target);
        let f = node.eval(p);
        assert!((f - target).abs() < 1e-9, "setup: F = {f}");
        let tape = Tape::new();
        let window = window_from(&[p], cfg.history_len);
        let graph =
            build_graph(&tape, &window, &static_family(&scene), &[], None, &cfg, 0.005).unwrap();
        let feat = graph.node_features.data()[3 * cfg.history_len];
        assert!((feat - target).abs() < 1e-9);
        assert!((graph.sdf_values[0] - target).abs() < 1e-9);
    }

    #[test]
    fn boundary_variant_appends_flagged_surface_nodes() {
        let scene = test_scene();
        let mut cfg = ModelConfig::desk_default(0.09, Variant::BoundaryParticles);
        cfg.boundary_particle_count = 200;
        let samples = boundary_samples(&scene, cfg.boundary_particle_count);
        assert_eq!(samples.len(), 200);
        let tape = Tape::new();
        let pts: Vec<DVec3> = (0..40)
            .map(|i| DVec3::new(0.01 * i as f64 - 0.2, 0.0, 1.0))
            .collect();
        let window = window_from(&pts, cfg.history_len);
        let graph = build_graph(
            &tape,
            &window,
            &static_family(&scene),
            &[],
            Some(&samples),
            &cfg,
            0.005,
        )
        .unwrap();
        assert_eq!(graph.n_nodes(), 40 + 200);
        assert_eq!(graph.n_fluid(), 40);
        let d = cfg.node_feature_dim();
        let feats = graph.node_features.data();
        for i in 0..40 {
            assert_eq!(feats[i * d + d - 2], 1.0);
            assert_eq!(feats[i * d + d - 1], 0.0);
        }
        for s in 40..240 {
            assert_eq!(feats[s * d + d - 2], 0.0);
            assert_eq!(feats[s * d + d - 1], 1.0);
        }
    }

    #[test]
    fn history_too_short_is_reported() {
        let scene = test_scene();
        let cfg = ModelConfig::desk_default(0.09, Variant::SdfFeatures);
        let tape = Tape::new();
        let window = window_from(&[DVec3::ZERO], 1); // needs C+1 = 4
        let err = build_graph(&tape, &window, &static_family(&scene), &[], None, &cfg, 0.005)
            .unwrap_err();
        assert!(matches!(err, GraphError::HistoryTooShort { needed: 4, got: 2 }));
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        let scene = test_scene();
        let cfg = ModelConfig::desk_default(0.12, Variant::SdfFeatures);
        let params = ModelParams::init(&cfg, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for case in 0..50 {
            let n = rng.random_range(4..24);
            let pts: Vec<DVec3> = (0..n)
                .map(|_| {
                    DVec3::new(
                        rng.random_range(-0.3..0.3),
                        rng.random_range(-0.3..0.3),
                        rng.random_range(0.3..0.9),
                    )
                })
                .collect();
            let hist: Vec<Vec<DVec3>> = (0..=cfg.history_len)
                .map(|k| {
                    pts.iter()
                        .map(|p| *p + DVec3::splat(0.001) * k as f64)
                        .collect()
                })
                .collect();

            let run = |order: &[usize]| -> Vec<DVec3> {
                let tape = Tape::new();
                let staged = params.stage(&tape, false);
                let window: Vec<Tensor> = hist
                    .iter()
                    .map(|frame| {
                        let reordered: Vec<DVec3> = order.iter().map(|&i| frame[i]).collect();
                        positions_tensor(&reordered)
                    })
                    .collect();
                let graph = build_graph(
                    &tape,
                    &window,
                    &static_family(&scene),
                    &[],
                    None,
                    &cfg,
                    0.005,
                )
                .unwrap();
                tensor_positions(&forward_t(&tape, &staged, &graph))
            };

            let identity: Vec<usize> = (0..n).collect();
            let mut perm = identity.clone();
            // Deterministic shuffle.
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            let base = run(&identity);
            let permuted = run(&perm);
            for (k, &src) in perm.iter().enumerate() {
                let diff = (permuted[k] - base[src]).abs().max_element();
                assert!(diff < 1e-9, "case {case}: deviation {diff}");
            }
        }
    }

    #[test]
    fn forward_is_translation_invariant_when_scene_moves_too() {
        // Features exclude absolute positions, so translating fluid and
        // surface together must not change the output.
        let cfg = ModelConfig::desk_default(0.12, Variant::SdfFeatures);
        let params = ModelParams::init(&cfg, 5);
        let shift = DVec3::new(0.37, -0.21, 0.45);
        let base_obj = SdfNode::sphere(0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<DVec3> = (0..30)
            .map(|_| {
                DVec3::new(
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(0.1..0.5),
                )
            })
            .collect();

        let run = |offset: DVec3| -> Vec<DVec3> {
            let tape = Tape::new();
            let staged = params.stage(&tape, false);
            let family: Rc<dyn ParamSdf> =
                Rc::new(StaticSdf(base_obj.clone().translated(offset)));
            let moved: Vec<DVec3> = pts.iter().map(|p| *p + offset).collect();
            let window: Vec<Tensor> = (0..=cfg.history_len)
                .map(|k| {
                    let drifted: Vec<DVec3> = moved
                        .iter()
                        .map(|p| *p + DVec3::new(0.002, 0.0, -0.003) * k as f64)
                        .collect();
                    positions_tensor(&drifted)
                })
                .collect();
            let graph = build_graph(&tape, &window, &family, &[], None, &cfg, 0.005).unwrap();
            tensor_positions(&forward_t(&tape, &staged, &graph))
        };

        let a = run(DVec3::ZERO);
        let b = run(shift);
        for (x, y) in a.iter().zip(&b) {
            assert!((*x - *y).abs().max_element() < 1e-9);
        }
    }

    #[test]
    fn euler_integration_examples() {
        let state = FluidState {
            positions: vec![DVec3::ZERO],
            velocities: vec![DVec3::new(1.0, 0.0, 0.0)],
            time_index: 4,
        };
        // a = 0: uniform motion.
        let next = euler_integrate(&state, &[DVec3::ZERO], 0.5);
        assert_eq!(next.positions[0], DVec3::new(0.5, 0.0, 0.0));
        assert_eq!(next.time_index, 5);
        // v = 0, a = g: p' = g dt^2.
        let rest = FluidState {
            positions: vec![DVec3::ZERO],
            velocities: vec![DVec3::ZERO],
            time_index: 0,
        };
        let g = DVec3::new(0.0, 0.0, -9.81);
        let next = euler_integrate(&rest, &[g], 0.1);
        assert!((next.positions[0] - g * 0.01).length() < 1e-15);
        // Matches closed-form constant-acceleration kinematics for one step:
        // p' = p + v dt + a dt^2 (semi-implicit).
        let both = FluidState {
            positions: vec![DVec3::new(0.1, 0.2, 0.3)],
            velocities: vec![DVec3::new(0.4, -0.5, 0.6)],
            time_index: 0,
        };
        let a = DVec3::new(0.7, 0.8, -0.9);
        let dt = 0.05;
        let next = euler_integrate(&both, &[a], dt);
        let expect = both.positions[0] + both.velocities[0] * dt + a * dt * dt;
        assert!((next.positions[0] - expect).length() < 1e-15);
    }

    #[test]
    fn rollout_smoke_with_random_params() {
        let scene = test_scene();
        let cfg = ModelConfig {
            num_blocks: 2,
            ..ModelConfig::desk_default(0.12, Variant::SdfFeatures)
        };
        let params = ModelParams::init(&cfg, 21);
        let init = scene.initial_state();
        let window: Vec<FluidState> = (0..=cfg.history_len)
            .map(|k| FluidState {
                positions: init.positions.clone(),
                velocities: vec![DVec3::ZERO; init.len()],
                time_index: k,
            })
            .collect();
        assert_eq!(init.len(), 100, "smoke scene should hold 100 particles");

        let traj = rollout(&params, &scene, &window, 20, 0.005, false).unwrap();
        assert_eq!(traj.frames.len(), window.len() + 20);
        for f in &traj.frames {
            assert!(f.is_finite());
        }
        // T=1 equals one forward + integrate.
        let one = rollout(&params, &scene, &window, 1, 0.005, false).unwrap();
        let tape = Tape::new();
        let staged = params.stage(&tape, false);
        let window_t: Vec<Tensor> =
            window.iter().map(|s| positions_tensor(&s.positions)).collect();
        let graph = build_graph(
            &tape,
            &window_t,
            &static_family(&scene),
            &[],
            None,
            &cfg,
            0.005,
        )
        .unwrap();
        let accel = tensor_positions(&forward_t(&tape, &staged, &graph));
        let last = window.last().unwrap();
        let manual = euler_integrate(
            &FluidState {
                positions: last.positions.clone(),
                velocities: vec![DVec3::ZERO; last.len()], // rest priming window
                time_index: 0,
            },
            &accel,
            0.005,
        );
        for (p, q) in one.frames.last().unwrap().positions.iter().zip(&manual.positions) {
            assert!((*p - *q).length() < 1e-12);
        }

        // Projection ON leaves no particle inside the solid.
        let proj = rollout(&params, &scene, &window, 20, 0.005, true).unwrap();
        let node = scene.scene_node();
        for f in &proj.frames {
            for &p in &f.positions {
                assert!(node.eval(p) >= -1e-6);
            }
        }
    }

    #[test]
    fn forward_with_zero_edges_uses_node_features_only() {
        let scene = test_scene();
        let cfg = ModelConfig::desk_default(0.05, Variant::SdfFeatures);
        let params = ModelParams::init(&cfg, 2);
        let tape = Tape::new();
        let staged = params.stage(&tape, false);
        // Two particles farther apart than the radius.
        let pts = [DVec3::new(-0.3, 0.0, 1.0), DVec3::new(0.3, 0.0, 1.0)];
        let window = window_from(&pts, cfg.history_len);
        let graph =
            build_graph(&tape, &window, &static_family(&scene), &[], None, &cfg, 0.005).unwrap();
        assert_eq!(graph.n_edges(), 0);
        let out = forward_t(&tape, &staged, &graph);
        assert_eq!(out.shape(), &[2, 3]);
        assert!(out.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let scene = test_scene();
        let cfg = ModelConfig::desk_default(0.12, Variant::SdfFeatures);
        let params = ModelParams::init(&cfg, 9);
        let run = || {
            let tape = Tape::new();
            let staged = params.stage(&tape, false);
            let pts: Vec<DVec3> = (0..60)
                .map(|i| {
                    DVec3::new(
                        -0.25 + 0.013 * (i % 5) as f64,
                        -0.25 + 0.017 * ((i / 5) % 5) as f64,
                        0.4 + 0.02 * (i / 25) as f64,
                    )
                })
                .collect();
            let window = window_from(&pts, cfg.history_len);
            let graph = build_graph(
                &tape,
                &window,
                &static_family(&scene),
                &[],
                None,
                &cfg,
                0.005,
            )
            .unwrap();
            forward_t(&tape, &staged, &graph).data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
