//! Supervised next-step training on oracle trajectory pairs with a
//! surface-weighted loss.
//!
//! Residuals of particles within `alpha` of the surface are weighted by
//! `lambda` (default 5), which teaches surface interactions faster without
//! hurting bulk accuracy. Targets are the discrete accelerations implied by
//! the integrator: `a = (p[t+1] - 2 p[t] + p[t-1]) / dt^2`. Input histories
//! get accumulated random-walk position noise and the targets are
//! recomputed from the noisy history, so the model learns to correct its
//! own drift during rollouts.
//!
//! Every step derives its RNG stream from `(seed, step)`, so resuming from
//! a checkpoint reproduces the uninterrupted run bit for bit.

use glam::DVec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::sdf_ops::{ParamSdf, StaticSdf};
use crate::autodiff::{Tape, Tensor};
use crate::geom::splitmix;
use crate::graph_net::{
    build_graph, forward_normalized, merge_graphs, positions_tensor, ModelConfig, ModelParams,
    ParticleGraph, Variant,
};
use crate::reference_sim::Trajectory;
use std::io::{self, Read, Write};
use std::rc::Rc;

/// Smallest allowed feature standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// The learning rate decays exponentially to `learning_rate * lr_decay`
    /// by the final step.
    pub lr_decay: f64,
    /// Graphs per optimizer step.
    pub batch_size: usize,
    pub total_steps: usize,
    /// Random-walk noise velocity; per-frame position increments have
    /// standard deviation `noise_std * dt`.
    pub noise_std: f64,
    /// Surface weighting threshold (distance units).
    pub alpha: f64,
    /// Weight on residuals of particles with `F <= alpha`; >= 1.
    pub lambda: f64,
    /// Sum reduction reproduces the literal loss; the default divides by
    /// the particle count so the learning rate is independent of scene size.
    pub sum_mode: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn desk_default(alpha: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-3,
            lr_decay: 0.1,
            batch_size: 2,
            total_steps: 20_000,
            noise_std: 0.06,
            alpha,
            lambda: 5.0,
            sum_mode: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.lambda < 1.0 {
            return Err("lambda must be >= 1".into());
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err("alpha must be positive".into());
        }
        if self.noise_std < 0.0 {
            return Err("noise_std must be non-negative".into());
        }
        if self.batch_size == 0 || self.total_steps == 0 {
            return Err("batch_size and total_steps must be positive".into());
        }
        Ok(())
    }
}

/// Per-feature normalization statistics stored inside model checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizerStats {
    pub node_mean: Vec<f64>,
    pub node_std: Vec<f64>,
    pub edge_mean: Vec<f64>,
    pub edge_std: Vec<f64>,
    pub accel_mean: Vec<f64>,
    pub accel_std: Vec<f64>,
    pub sample_count: u64,
}

impl NormalizerStats {
    pub fn identity(d_node: usize, d_edge: usize) -> NormalizerStats {
        NormalizerStats {
            node_mean: vec![0.0; d_node],
            node_std: vec![1.0; d_node],
            edge_mean: vec![0.0; d_edge],
            edge_std: vec![1.0; d_edge],
            accel_mean: vec![0.0; 3],
            accel_std: vec![1.0; 3],
            sample_count: 0,
        }
    }
}

/// Streaming mean/variance accumulator over feature rows.
#[derive(Clone, Debug, Default)]
pub struct MomentAccumulator {
    pub count: u64,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> MomentAccumulator {
        MomentAccumulator {
            count: 0,
            sum: vec![0.0; dim],
            sum_sq: vec![0.0; dim],
        }
    }

    pub fn push_rows(&mut self, data: &[f64], dim: usize) {
        assert_eq!(data.len() % dim, 0);
        for row in data.chunks_exact(dim) {
            self.count += 1;
            for (i, &v) in row.iter().enumerate() {
                self.sum[i] += v;
                self.sum_sq[i] += v * v;
            }
        }
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        assert_eq!(self.sum.len(), other.sum.len());
        self.count += other.count;
        for i in 0..self.sum.len() {
            self.sum[i] += other.sum[i];
            self.sum_sq[i] += other.sum_sq[i];
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.sum.iter().map(|s| s / n).collect()
    }

    /// Population standard deviation, floored at [`STD_FLOOR`].
    pub fn std(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(&s, &sq)| {
                let var = (sq / n - (s / n) * (s / n)).max(0.0);
                var.sqrt().max(STD_FLOOR)
            })
            .collect()
    }
}

#[derive(Debug)]
pub enum TrainError {
    InsufficientData { needed: usize, got: usize },
    Diverged { step: usize },
}

impl std::fmt::Display for TrainError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainError::InsufficientData { needed, got } => {
                write!(f, "normalizer needs {needed} frames, got {got}")
            }
            TrainError::Diverged { step } => write!(f, "training loss went non-finite at step {step}"),
        }
    }
}

impl std::error::Error for TrainError {}

/// Discrete acceleration targets implied by the integrator.
fn target_accel(prev: &[DVec3], cur: &[DVec3], next: &[DVec3], dt: f64) -> Vec<DVec3> {
    let inv = 1.0 / (dt * dt);
    (0..cur.len())
        .map(|i| (next[i] - cur[i] * 2.0 + prev[i]) * inv)
        .collect()
}

/// Fits feature and target statistics by streaming over dataset frames.
/// Requires at least 100 sampled frames.
pub fn fit_normalizer(
    dataset: &[Trajectory],
    cfg: &ModelConfig,
    max_frames: usize,
) -> Result<NormalizerStats, TrainError> {
    let c = cfg.history_len;
    let mut frames: Vec<(usize, usize)> = Vec::new();
    for (ti, traj) in dataset.iter().enumerate() {
        for t in c..traj.frames.len().saturating_sub(1) {
            frames.push((ti, t));
        }
    }
    if frames.len() < 100 {
        return Err(TrainError::InsufficientData {
            needed: 100,
            got: frames.len(),
        });
    }
    // Deterministic stride subsample down to the frame budget.
    let stride = (frames.len() / max_frames.max(1)).max(1);
    let sampled: Vec<(usize, usize)> = frames.into_iter().step_by(stride).collect();

    let d_node = cfg.node_feature_dim();
    let d_edge = ModelConfig::EDGE_FEATURE_DIM;
    let mut node_acc = MomentAccumulator::new(d_node);
    let mut edge_acc = MomentAccumulator::new(d_edge);
    let mut accel_acc = MomentAccumulator::new(3);

    let mut boundary_cache = std::collections::HashMap::new();
    for (ti, t) in sampled {
        let traj = &dataset[ti];
        let boundary = cached_boundary(&mut boundary_cache, traj, cfg).map(<[DVec3]>::to_vec);
        let graph = training_graph(traj, t, cfg, None, boundary.as_deref())?;
        node_acc.push_rows(graph.node_features.data(), d_node);
        edge_acc.push_rows(graph.edge_features.data(), d_edge);
        let targets = target_accel(
            &traj.frames[t - 1].positions,
            &traj.frames[t].positions,
            &traj.frames[t + 1].positions,
            traj.dt,
        );
        let flat: Vec<f64> = targets.iter().flat_map(|a| [a.x, a.y, a.z]).collect();
        accel_acc.push_rows(&flat, 3);
    }

    Ok(NormalizerStats {
        node_mean: node_acc.mean(),
        node_std: node_acc.std(),
        edge_mean: edge_acc.mean(),
        edge_std: edge_acc.std(),
        accel_mean: accel_acc.mean(),
        accel_std: accel_acc.std(),
        sample_count: node_acc.count,
    })
}

/// Builds the (constant) training graph for frame `t` of a trajectory,
/// optionally with pre-noised window positions and pre-sampled boundary
/// nodes.
fn training_graph(
    traj: &Trajectory,
    t: usize,
    cfg: &ModelConfig,
    window_override: Option<&[Vec<DVec3>]>,
    boundary: Option<&[DVec3]>,
) -> Result<ParticleGraph, TrainError> {
    let c = cfg.history_len;
    assert!(t >= c && t + 1 < traj.frames.len());
    let window_t: Vec<Tensor> = match window_override {
        Some(frames) => frames.iter().map(|p| positions_tensor(p)).collect(),
        None => (t - c..=t)
            .map(|k| positions_tensor(&traj.frames[k].positions))
            .collect(),
    };
    let family: Rc<dyn ParamSdf> = Rc::new(StaticSdf(traj.scene.scene_node()));
    let owned;
    let surface = match (cfg.variant, boundary) {
        (Variant::SdfFeatures, _) => None,
        (Variant::BoundaryParticles, Some(b)) => Some(b),
        (Variant::BoundaryParticles, None) => {
            owned = crate::graph_net::boundary_samples(&traj.scene, cfg.boundary_particle_count);
            Some(owned.as_slice())
        }
    };
    let tape = Tape::new();
    build_graph(&tape, &window_t, &family, &[], surface, cfg, traj.dt).map_err(|_| {
        TrainError::InsufficientData {
            needed: c + 1,
            got: traj.frames.len(),
        }
    })
}

/// Boundary samples are deterministic per scene; cache them across steps.
fn cached_boundary<'a>(
    cache: &'a mut std::collections::HashMap<u64, Vec<DVec3>>,
    traj: &Trajectory,
    cfg: &ModelConfig,
) -> Option<&'a [DVec3]> {
    if cfg.variant != Variant::BoundaryParticles {
        return None;
    }
    Some(
        cache
            .entry(traj.scene.seed)
            .or_insert_with(|| {
                crate::graph_net::boundary_samples(&traj.scene, cfg.boundary_particle_count)
            })
            .as_slice(),
    )
}

/// The surface-weighted residual: plain squared error away from the
/// surface, weighted by `lambda` where `F <= alpha`. Mean reduction
/// divides by the particle count; sum mode keeps the raw sums.
pub fn weighted_loss(
    pred: &[DVec3],
    target: &[DVec3],
    sdf_values: &[f64],
    alpha: f64,
    lambda: f64,
    sum_mode: bool,
) -> f64 {
    assert_eq!(pred.len(), target.len(), "weighted_loss: length mismatch");
    assert_eq!(pred.len(), sdf_values.len(), "weighted_loss: length mismatch");
    let mut total = 0.0;
    for i in 0..pred.len() {
        let w = if sdf_values[i] <= alpha { lambda } else { 1.0 };
        total += w * (pred[i] - target[i]).length_squared();
    }
    if sum_mode {
        total
    } else {
        total / pred.len() as f64
    }
}

/// Adam optimizer state over the trainable arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(params: &ModelParams) -> AdamState {
        let shapes: Vec<usize> = {
            let mut p = params.clone();
            p.trainable_arrays_mut().iter().map(|a| a.len()).collect()
        };
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn update(&mut self, arrays: &mut [&mut Vec<f64>], grads: &[Vec<f64>], lr: f64) {
        assert_eq!(arrays.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (k, arr) in arrays.iter_mut().enumerate() {
            let g = &grads[k];
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for i in 0..arr.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                arr[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(b"ADAM")?;
        w.write_all(&self.t.to_le_bytes())?;
        w.write_all(&(self.m.len() as u32).to_le_bytes())?;
        for (m, v) in self.m.iter().zip(&self.v) {
            w.write_all(&(m.len() as u32).to_le_bytes())?;
            for x in m.iter().chain(v.iter()) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> io::Result<AdamState> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"ADAM" {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "bad ADAM magic"));
        }
        let mut t8 = [0u8; 8];
        r.read_exact(&mut t8)?;
        let t = u64::from_le_bytes(t8);
        let mut n4 = [0u8; 4];
        r.read_exact(&mut n4)?;
        let n = u32::from_le_bytes(n4) as usize;
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut n4)?;
            let len = u32::from_le_bytes(n4) as usize;
            let mut buf = vec![0u8; len * 16];
            r.read_exact(&mut buf)?;
            let vals: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            m.push(vals[..len].to_vec());
            v.push(vals[len..].to_vec());
        }
        Ok(AdamState { m, v, t })
    }
}

/// Per-step diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    pub loss: f64,
    /// Unweighted mean squared error over the near-surface subset
    /// (`F <= alpha`); zero when the batch had no such particles.
    pub near_surface_loss: f64,
}

/// Incremental trainer; owns the parameters and optimizer state so runs
/// can be checkpointed and resumed without replaying.
pub struct Trainer {
    pub params: ModelParams,
    pub opt: AdamState,
    pub step: usize,
    pub cfg: TrainConfig,
    boundary_cache: std::collections::HashMap<u64, Vec<DVec3>>,
}

impl Trainer {
    pub fn new(params: ModelParams, cfg: TrainConfig) -> Trainer {
        let opt = AdamState::new(&params);
        Trainer {
            params,
            opt,
            step: 0,
            cfg,
            boundary_cache: std::collections::HashMap::new(),
        }
    }

    /// Reconstructs a trainer mid-run from checkpointed state.
    pub fn resume(params: ModelParams, opt: AdamState, step: usize, cfg: TrainConfig) -> Trainer {
        Trainer {
            params,
            opt,
            step,
            cfg,
            boundary_cache: std::collections::HashMap::new(),
        }
    }

    fn lr_at(&self, step: usize) -> f64 {
        let frac = step as f64 / self.cfg.total_steps.max(1) as f64;
        self.cfg.learning_rate * self.cfg.lr_decay.powf(frac)
    }

    /// Runs one optimizer step on a sampled mini-batch. The RNG stream is
    /// derived from `(seed, step)` alone.
    pub fn train_step(&mut self, dataset: &[Trajectory]) -> Result<StepStats, TrainError> {
        assert!(!dataset.is_empty(), "empty dataset");
        let cfg = &self.cfg;
        let model_cfg = self.params.config.clone();
        let c = model_cfg.history_len;
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.seed, self.step as u64));

        let mut graphs = Vec::with_capacity(cfg.batch_size);
        let mut targets: Vec<DVec3> = Vec::new();
        for _ in 0..cfg.batch_size {
            let traj = &dataset[rng.random_range(0..dataset.len())];
            assert!(
                traj.frames.len() >= c + 2,
                "trajectory shorter than history window + target"
            );
            let t = rng.random_range(c..traj.frames.len() - 1);

            // Random-walk noise accumulated over the history window.
            let n = traj.frames[t].positions.len();
            let sigma = cfg.noise_std * traj.dt;
            let mut window: Vec<Vec<DVec3>> = Vec::with_capacity(c + 1);
            let mut offsets = vec![DVec3::ZERO; n];
            for (k, frame) in (t - c..=t).enumerate() {
                if k > 0 && sigma > 0.0 {
                    for off in offsets.iter_mut() {
                        *off += DVec3::new(
                            rng.sample::<f64, _>(StandardNormal) * sigma,
                            rng.sample::<f64, _>(StandardNormal) * sigma,
                            rng.sample::<f64, _>(StandardNormal) * sigma,
                        );
                    }
                }
                window.push(
                    traj.frames[frame]
                        .positions
                        .iter()
                        .zip(&offsets)
                        .map(|(p, o)| *p + *o)
                        .collect(),
                );
            }
            targets.extend(target_accel(
                &window[c - 1],
                &window[c],
                &traj.frames[t + 1].positions,
                traj.dt,
            ));
            let boundary =
                cached_boundary(&mut self.boundary_cache, traj, &model_cfg).map(<[DVec3]>::to_vec);
            graphs.push(training_graph(
                traj,
                t,
                &model_cfg,
                Some(&window),
                boundary.as_deref(),
            )?);
        }
        let graph = merge_graphs(graphs);

        let tape = Tape::new();
        let staged = self.params.stage(&tape, true);
        let pred_norm = forward_normalized(&tape, &staged, &graph);

        // Loss in normalized target space.
        let stats = &self.params.normalizer;
        let n_fluid = graph.n_fluid();
        assert_eq!(targets.len(), n_fluid);
        let mut target_norm = Vec::with_capacity(n_fluid * 3);
        for a in &targets {
            for (axis, v) in [a.x, a.y, a.z].into_iter().enumerate() {
                target_norm.push((v - stats.accel_mean[axis]) / stats.accel_std[axis]);
            }
        }
        let target_t = Tensor::constant(target_norm, &[n_fluid, 3]);
        let weights: Vec<f64> = graph
            .sdf_values
            .iter()
            .map(|&f| if f <= cfg.alpha { cfg.lambda } else { 1.0 })
            .collect();
        let w_t = Tensor::constant(weights.clone(), &[n_fluid, 1]);
        let ones3 = Tensor::constant(vec![1.0; 3], &[3, 1]);
        let diff = tape.sub(&pred_norm, &target_t);
        let row_sq = tape.matmul(&tape.square(&diff), &ones3);
        let weighted = tape.sum(&tape.mul(&row_sq, &w_t));
        let loss = if cfg.sum_mode {
            weighted
        } else {
            tape.scale(&weighted, 1.0 / n_fluid as f64)
        };

        let loss_value = loss.item();
        if !loss_value.is_finite() {
            return Err(TrainError::Diverged { step: self.step });
        }

        // Near-surface diagnostic (unweighted MSE over F <= alpha rows).
        let near_surface_loss = {
            let pred = pred_norm.data();
            let target = target_t.data();
            let mut total = 0.0;
            let mut count = 0usize;
            for i in 0..n_fluid {
                if graph.sdf_values[i] <= cfg.alpha {
                    for axis in 0..3 {
                        let d = pred[i * 3 + axis] - target[i * 3 + axis];
                        total += d * d;
                    }
                    count += 1;
                }
            }
            if count == 0 {
                0.0
            } else {
                total / count as f64
            }
        };

        let grads = tape.backward(&loss).expect("scalar loss");
        let grad_vecs: Vec<Vec<f64>> = staged.leaves.iter().map(|l| grads.get(l)).collect();
        let lr = self.lr_at(self.step);
        let mut arrays = self.params.trainable_arrays_mut();
        self.opt.update(&mut arrays, &grad_vecs, lr);
        self.step += 1;

        Ok(StepStats {
            loss: loss_value,
            near_surface_loss,
        })
    }
}

/// Trains from scratch: fits the normalizer, then runs `total_steps`
/// optimizer steps. Returns the final parameters and the per-step losses.
pub fn train(
    dataset: &[Trajectory],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<StepStats>), TrainError> {
    let mut params = ModelParams::init(model_cfg, train_cfg.seed);
    params.normalizer = fit_normalizer(dataset, model_cfg, 2_000)?;
    let mut trainer = Trainer::new(params, train_cfg.clone());
    let mut curve = Vec::with_capacity(train_cfg.total_steps);
    for _ in 0..train_cfg.total_steps {
        curve.push(trainer.train_step(dataset)?);
    }
    Ok((trainer.params, curve))
}

/// Unweighted next-step validation loss in normalized space, averaged over
/// up to `max_frames` evenly spaced (trajectory, frame) pairs, without
/// input noise. `near_surface_only` restricts to particles with
/// `F <= alpha`.
pub fn next_step_loss(
    params: &ModelParams,
    dataset: &[Trajectory],
    max_frames: usize,
    alpha: f64,
    near_surface_only: bool,
) -> f64 {
    let cfg = &params.config;
    let c = cfg.history_len;
    let mut frames: Vec<(usize, usize)> = Vec::new();
    for (ti, traj) in dataset.iter().enumerate() {
        for t in c..traj.frames.len().saturating_sub(1) {
            frames.push((ti, t));
        }
    }
    let stride = (frames.len() / max_frames.max(1)).max(1);
    let mut total = 0.0;
    let mut count = 0usize;
    let mut boundary_cache = std::collections::HashMap::new();
    for (ti, t) in frames.into_iter().step_by(stride) {
        let traj = &dataset[ti];
        let boundary = cached_boundary(&mut boundary_cache, traj, cfg).map(<[DVec3]>::to_vec);
        let graph =
            training_graph(traj, t, cfg, None, boundary.as_deref()).expect("validation graph");
        let tape = Tape::new();
        let staged = params.stage(&tape, false);
        let pred = forward_normalized(&tape, &staged, &graph);
        let targets = target_accel(
            &traj.frames[t - 1].positions,
            &traj.frames[t].positions,
            &traj.frames[t + 1].positions,
            traj.dt,
        );
        let stats = &params.normalizer;
        let pd = pred.data();
        for (i, a) in targets.iter().enumerate() {
            if near_surface_only && graph.sdf_values[i] > alpha {
                continue;
            }
            for (axis, v) in [a.x, a.y, a.z].into_iter().enumerate() {
                let tn = (v - stats.accel_mean[axis]) / stats.accel_std[axis];
                let d = pd[i * 3 + axis] - tn;
                total += d * d;
            }
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}
