//! Inverse shape design: gradient ascent on funnel radii through
//! differentiable model rollouts.
//!
//! The funnel is parametrized by its opening radius r1 (how much falling
//! water it captures) and throat radius r2 (how much it lets through to
//! the ground). Rewards are Gaussian log-densities at a target location:
//! the bowl task wants water held at the cavity bottom (r2 -> 0), the
//! funnel task wants water concentrated on a ground point below. Shape
//! parameters reach the reward through the SDF features of every rollout
//! step, so reverse mode delivers d(reward)/d(r1, r2) directly.

use std::rc::Rc;

use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::autodiff::sdf_ops::ParamSdf;
use crate::autodiff::{Tape, Tensor};
use crate::geom::Aabb;
use crate::graph_net::{positions_tensor, rollout_t, ModelParams, RolloutError};
use crate::sdf::{scene_sdf, SdfNode};

/// Reward of the hard (evaluation-mode) funnel gate when no particle has
/// reached the ground.
pub const EMPTY_GROUND_SENTINEL: f64 = -1e6;

/// Minimum gap kept between the opening and throat radii.
pub const MIN_RADIUS_GAP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    Bowl,
    Funnel,
}

/// A parametrized design problem over a fixed funnel shell.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DesignTask {
    pub kind: TaskKind,
    /// Gaussian center. The funnel task only uses x and y.
    pub target: DVec3,
    /// Diagonal standard deviations of the reward Gaussian.
    pub sigma: DVec3,
    pub rollout_steps: usize,
    pub optimizer_steps: usize,
    pub learning_rate: f64,
    /// Per-component gradient clip applied before the ascent step.
    pub grad_clip: f64,
    /// Particles below this height count as grounded (funnel task).
    pub ground_z: f64,
    /// Sigmoid temperature of the smooth grounding gate.
    pub gate_temperature: f64,
}

/// Geometry shared by every candidate design: the container, the fixed
/// funnel shell (outer radius and height, raised above the floor), and
/// the fluid block dropped onto it.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DesignScene {
    pub container: Aabb,
    pub outer_radius: f64,
    pub height: f64,
    /// Height of the funnel center above the container floor.
    pub center_z: f64,
    pub fluid_block: Aabb,
    pub particle_spacing: f64,
    pub seed: u64,
}

impl DesignScene {
    pub fn desk_default() -> DesignScene {
        DesignScene {
            container: Aabb::new(DVec3::new(-0.5, -0.5, 0.0), DVec3::new(0.5, 0.5, 2.0)),
            outer_radius: 0.3,
            height: 0.3,
            center_z: 0.5,
            fluid_block: Aabb::new(DVec3::new(-0.09, -0.09, 0.78), DVec3::new(0.09, 0.09, 0.93)),
            particle_spacing: 0.045,
            seed: 0,
        }
    }

    /// The funnel resting height of its cavity bottom (throat plane).
    pub fn throat_z(&self) -> f64 {
        self.center_z - 0.5 * self.height
    }

    pub fn funnel_node(&self, opening: f64, throat: f64) -> SdfNode {
        SdfNode::funnel(self.outer_radius, self.height, opening, throat)
            .translated(DVec3::new(0.0, 0.0, self.center_z))
    }

    pub fn scene_node(&self, opening: f64, throat: f64) -> SdfNode {
        scene_sdf(Some(self.funnel_node(opening, throat)), self.container)
    }

    /// Initial fluid positions: a resting lattice in the fluid block with
    /// seeded jitter (same convention as the oracle).
    pub fn initial_positions(&self) -> Vec<DVec3> {
        let spec = crate::reference_sim::SceneSpec {
            container: self.container,
            object: None,
            object_rotation: glam::DQuat::IDENTITY,
            object_translation: DVec3::ZERO,
            fluid_block: self.fluid_block,
            particle_spacing: self.particle_spacing,
            seed: self.seed,
        };
        spec.initial_state().positions
    }
}

/// SDF family with parameters `[opening_radius, throat_radius]`.
pub struct FunnelFamily(pub DesignScene);

impl ParamSdf for FunnelFamily {
    fn build(&self, params: &[f64]) -> SdfNode {
        // A throat radius of exactly zero is a valid bowl; keep the node
        // invariant opening > throat by construction.
        let opening = params[0].max(2.0 * MIN_RADIUS_GAP);
        let throat = params[1].clamp(0.0, opening - MIN_RADIUS_GAP);
        self.0.scene_node(opening, throat)
    }
}

impl DesignTask {
    /// Contain the fluid at the cavity bottom: 3D Gaussian reward on the
    /// final frame, 50 rollout steps.
    pub fn bowl(scene: &DesignScene) -> DesignTask {
        DesignTask {
            kind: TaskKind::Bowl,
            target: DVec3::new(0.0, 0.0, scene.throat_z() + 0.05),
            sigma: DVec3::splat(0.05),
            rollout_steps: 50,
            optimizer_steps: 100,
            learning_rate: 1e-2,
            grad_clip: 1.0,
            ground_z: 2.0 * scene.particle_spacing,
            gate_temperature: scene.particle_spacing,
        }
    }

    /// Concentrate water on a ground point: 2D Gaussian on grounded
    /// particles across frames, 75 rollout steps.
    pub fn funnel(scene: &DesignScene) -> DesignTask {
        DesignTask {
            kind: TaskKind::Funnel,
            target: DVec3::ZERO,
            sigma: DVec3::splat(0.05),
            rollout_steps: 75,
            optimizer_steps: 100,
            learning_rate: 1e-2,
            grad_clip: 1.0,
            ground_z: 2.0 * scene.particle_spacing,
            gate_temperature: scene.particle_spacing,
        }
    }
}

/// One optimization run: the current radii plus per-step history.
#[derive(Clone, Debug, Serialize)]
pub struct DesignState {
    pub opening_radius: f64,
    pub throat_radius: f64,
    pub reward_history: Vec<f64>,
    pub param_history: Vec<(f64, f64)>,
}

impl DesignState {
    pub fn new(opening_radius: f64, throat_radius: f64) -> DesignState {
        DesignState {
            opening_radius,
            throat_radius,
            reward_history: Vec::new(),
            param_history: Vec::new(),
        }
    }
}

#[derive(Debug)]
pub enum DesignError {
    Rollout(RolloutError),
    ConstraintCollapse { opening: f64, throat: f64 },
}

impl std::fmt::Display for DesignError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DesignError::Rollout(e) => write!(f, "{e}"),
            DesignError::ConstraintCollapse { opening, throat } => {
                write!(f, "projection collapsed the design: opening={opening}, throat={throat}")
            }
        }
    }
}

impl std::error::Error for DesignError {}

impl From<RolloutError> for DesignError {
    fn from(e: RolloutError) -> Self {
        DesignError::Rollout(e)
    }
}

/// Projects radii onto the feasible set
/// `{0 <= throat <= opening - MIN_RADIUS_GAP, opening <= outer}`.
/// Idempotent; clamps one coordinate at a time so the result never moves
/// farther from the feasible set.
pub fn project_constraints(
    opening: f64,
    throat: f64,
    outer_radius: f64,
) -> Result<(f64, f64), DesignError> {
    if outer_radius < 2.0 * MIN_RADIUS_GAP {
        return Err(DesignError::ConstraintCollapse { opening, throat });
    }
    let throat = throat.clamp(0.0, outer_radius - MIN_RADIUS_GAP);
    let opening = opening.clamp(throat + MIN_RADIUS_GAP, outer_radius);
    Ok((opening, throat))
}

/// Evaluation-mode (hard-gated) reward on plain positions.
///
/// Bowl: mean 3D Gaussian log-density over all particles of the final
/// frame. Funnel: mean 2D log-density over grounded particles pooled
/// across frames, or [`EMPTY_GROUND_SENTINEL`] when none grounded.
pub fn gaussian_logprob_reward(frames: &[Vec<DVec3>], task: &DesignTask) -> f64 {
    assert!(!frames.is_empty());
    match task.kind {
        TaskKind::Bowl => {
            let last = frames.last().unwrap();
            assert!(!last.is_empty());
            let norm = log_norm_const(&[task.sigma.x, task.sigma.y, task.sigma.z]);
            let mean: f64 = last
                .iter()
                .map(|p| {
                    let d = (*p - task.target) / task.sigma;
                    -0.5 * d.length_squared()
                })
                .sum::<f64>()
                / last.len() as f64;
            mean - norm
        }
        TaskKind::Funnel => {
            let norm = log_norm_const(&[task.sigma.x, task.sigma.y]);
            let mut total = 0.0;
            let mut count = 0usize;
            for frame in frames {
                for p in frame {
                    if p.z < task.ground_z {
                        let dx = (p.x - task.target.x) / task.sigma.x;
                        let dy = (p.y - task.target.y) / task.sigma.y;
                        total += -0.5 * (dx * dx + dy * dy);
                        count += 1;
                    }
                }
            }
            if count == 0 {
                EMPTY_GROUND_SENTINEL
            } else {
                total / count as f64 - norm
            }
        }
    }
}

fn log_norm_const(sigmas: &[f64]) -> f64 {
    0.5 * sigmas
        .iter()
        .map(|s| (2.0 * std::f64::consts::PI * s * s).ln())
        .sum::<f64>()
}

/// Differentiable reward over rollout position tensors.
///
/// The funnel task gates particles by a sigmoid in height rather than a
/// hard mask, so gradients flow to almost-grounded particles; dividing by
/// the summed gate (plus a small epsilon) recovers the mean as the gate
/// hardens.
pub fn reward_t(tape: &Tape, frames: &[Tensor], task: &DesignTask) -> Tensor {
    assert!(!frames.is_empty());
    match task.kind {
        TaskKind::Bowl => {
            let last = frames.last().unwrap();
            let n = last.shape()[0];
            let target = Tensor::constant(task.target.to_array().to_vec(), &[1, 3]);
            let inv_sigma = Tensor::constant(
                vec![1.0 / task.sigma.x, 1.0 / task.sigma.y, 1.0 / task.sigma.z],
                &[1, 3],
            );
            let diff = tape.sub(last, &tape.broadcast_rows(&target, n));
            let scaled = tape.mul(&diff, &tape.broadcast_rows(&inv_sigma, n));
            let ones = Tensor::constant(vec![1.0; 3], &[3, 1]);
            let row = tape.matmul(&tape.square(&scaled), &ones);
            let mean = tape.mean(&row);
            tape.add_scalar(
                &tape.scale(&mean, -0.5),
                -log_norm_const(&[task.sigma.x, task.sigma.y, task.sigma.z]),
            )
        }
        TaskKind::Funnel => {
            let project_xy = Tensor::constant(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0], &[3, 2]);
            let project_z = Tensor::constant(vec![0.0, 0.0, 1.0], &[3, 1]);
            let inv_sigma2 = Tensor::constant(
                vec![1.0 / task.sigma.x, 1.0 / task.sigma.y],
                &[1, 2],
            );
            let target2 = Tensor::constant(vec![task.target.x, task.target.y], &[1, 2]);
            let ones2 = Tensor::constant(vec![1.0; 2], &[2, 1]);
            let mut weighted_sum: Option<Tensor> = None;
            let mut gate_sum: Option<Tensor> = None;
            for frame in frames {
                let n = frame.shape()[0];
                let z = tape.matmul(frame, &project_z);
                // gate = sigmoid((ground_z - z) / temperature)
                let gate = tape.sigmoid(&tape.scale(
                    &tape.add_scalar(&tape.neg(&z), task.ground_z),
                    1.0 / task.gate_temperature,
                ));
                let xy = tape.matmul(frame, &project_xy);
                let diff = tape.sub(&xy, &tape.broadcast_rows(&target2, n));
                let scaled = tape.mul(&diff, &tape.broadcast_rows(&inv_sigma2, n));
                let logp = tape.scale(&tape.matmul(&tape.square(&scaled), &ones2), -0.5);
                let contrib = tape.sum(&tape.mul(&gate, &logp));
                let gate_total = tape.sum(&gate);
                weighted_sum = Some(match weighted_sum {
                    Some(acc) => tape.add(&acc, &contrib),
                    None => contrib,
                });
                gate_sum = Some(match gate_sum {
                    Some(acc) => tape.add(&acc, &gate_total),
                    None => gate_total,
                });
            }
            let num = weighted_sum.unwrap();
            let den = tape.add_scalar(&gate_sum.unwrap(), 1e-6);
            tape.add_scalar(
                &tape.div(&num, &den),
                -log_norm_const(&[task.sigma.x, task.sigma.y]),
            )
        }
    }
}

/// Reward and its gradient with respect to `(opening, throat)` for one
/// differentiable rollout of the trained model.
pub fn rollout_reward_and_grad(
    params: &ModelParams,
    scene: &DesignScene,
    task: &DesignTask,
    opening: f64,
    throat: f64,
    steps: usize,
) -> Result<(f64, f64, f64), DesignError> {
    let tape = Tape::new();
    let staged = params.stage(&tape, false);
    let family: Rc<dyn ParamSdf> = Rc::new(FunnelFamily(scene.clone()));
    let r1 = tape.leaf(vec![opening], &[1]);
    let r2 = tape.leaf(vec![throat], &[1]);
    let init = positions_tensor(&scene.initial_positions());
    let window: Vec<Tensor> = (0..=params.config.history_len).map(|_| init.clone()).collect();
    let frames = rollout_t(
        &tape,
        &staged,
        &family,
        &[r1.clone(), r2.clone()],
        None,
        &params.config,
        &window,
        steps,
        0.005,
        false,
    )?;
    let reward = reward_t(&tape, &frames, task);
    let value = reward.item();
    let grads = tape.backward(&reward).expect("scalar reward");
    Ok((value, grads.get(&r1)[0], grads.get(&r2)[0]))
}

/// Evaluation-mode reward of a design without gradients.
pub fn rollout_reward(
    params: &ModelParams,
    scene: &DesignScene,
    task: &DesignTask,
    opening: f64,
    throat: f64,
) -> Result<f64, DesignError> {
    let tape = Tape::new();
    let staged = params.stage(&tape, false);
    let family: Rc<dyn ParamSdf> = Rc::new(FunnelFamily(scene.clone()));
    let init = positions_tensor(&scene.initial_positions());
    let window: Vec<Tensor> = (0..=params.config.history_len).map(|_| init.clone()).collect();
    let frames = rollout_t(
        &tape,
        &staged,
        &family,
        &[Tensor::scalar(opening), Tensor::scalar(throat)],
        None,
        &params.config,
        &window,
        task.rollout_steps,
        0.005,
        false,
    )?;
    let plain: Vec<Vec<DVec3>> = frames
        .iter()
        .map(crate::graph_net::tensor_positions)
        .collect();
    Ok(gaussian_logprob_reward(&plain, task))
}

/// Gradient-ascent refinement of `(opening, throat)` through rollouts of
/// the trained model. Each outer step rolls out, backpropagates the reward
/// into the radii, takes a clipped ascent step, and projects back onto the
/// constraint set. Deterministic for fixed inputs.
pub fn optimize_design(
    initial: &DesignState,
    task: &DesignTask,
    params: &ModelParams,
    scene: &DesignScene,
) -> Result<DesignState, DesignError> {
    let (mut opening, mut throat) =
        project_constraints(initial.opening_radius, initial.throat_radius, scene.outer_radius)?;
    let mut state = DesignState::new(opening, throat);
    for _ in 0..task.optimizer_steps {
        let (reward, g1, g2) =
            rollout_reward_and_grad(params, scene, task, opening, throat, task.rollout_steps)?;
        state.param_history.push((opening, throat));
        state.reward_history.push(reward);
        let clip = task.grad_clip;
        opening += task.learning_rate * g1.clamp(-clip, clip);
        throat += task.learning_rate * g2.clamp(-clip, clip);
        let projected = project_constraints(opening, throat, scene.outer_radius)?;
        opening = projected.0;
        throat = projected.1;
    }
    state.opening_radius = opening;
    state.throat_radius = throat;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_net::{ModelConfig, Variant};

    fn tiny_scene() -> DesignScene {
        DesignScene {
            fluid_block: Aabb::new(DVec3::new(-0.07, -0.07, 0.78), DVec3::new(0.07, 0.07, 0.88)),
            ..DesignScene::desk_default()
        }
    }

    #[test]
    fn reward_at_target_equals_normalization_constant() {
        let scene = tiny_scene();
        let task = DesignTask::bowl(&scene);
        let frames = vec![vec![task.target; 5]];
        let expect = -log_norm_const(&[task.sigma.x, task.sigma.y, task.sigma.z]);
        let got = gaussian_logprob_reward(&frames, &task);
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn moving_away_from_target_decreases_reward() {
        let scene = tiny_scene();
        let task = DesignTask::bowl(&scene);
        let near = vec![vec![task.target + DVec3::new(0.01, 0.0, 0.0); 4]];
        let far = vec![vec![task.target + DVec3::new(0.05, 0.0, 0.0); 4]];
        assert!(
            gaussian_logprob_reward(&near, &task) > gaussian_logprob_reward(&far, &task)
        );
    }

    #[test]
    fn three_particle_hand_case_matches_closed_form() {
        let scene = tiny_scene();
        let mut task = DesignTask::bowl(&scene);
        task.sigma = DVec3::ONE;
        task.target = DVec3::ZERO;
        let pts = vec![
            DVec3::new(1.0, 0.0, 0.0),
            DVec3::new(0.0, 2.0, 0.0),
            DVec3::new(0.0, 0.0, -1.0),
        ];
        // mean of -0.5 * |p|^2 minus the 3D standard-normal constant.
        let expect = -0.5 * (1.0 + 4.0 + 1.0) / 3.0
            - 1.5 * (2.0 * std::f64::consts::PI).ln();
        let got = gaussian_logprob_reward(&[pts], &task);
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn funnel_reward_sentinel_when_nothing_grounded() {
        let scene = tiny_scene();
        let task = DesignTask::funnel(&scene);
        let airborne = vec![vec![DVec3::new(0.0, 0.0, 1.0); 6]];
        assert_eq!(gaussian_logprob_reward(&airborne, &task), EMPTY_GROUND_SENTINEL);
    }

    #[test]
    fn tensor_reward_matches_plain_bowl_reward() {
        let scene = tiny_scene();
        let task = DesignTask::bowl(&scene);
        let pts = vec![
            DVec3::new(0.02, -0.01, scene.throat_z() + 0.04),
            DVec3::new(-0.03, 0.05, scene.throat_z() + 0.09),
        ];
        let tape = Tape::new();
        let frames_t = vec![positions_tensor(&pts)];
        let r = reward_t(&tape, &frames_t, &task).item();
        let expect = gaussian_logprob_reward(&[pts], &task);
        assert!((r - expect).abs() < 1e-12);
    }

    #[test]
    fn reward_is_permutation_invariant() {
        let scene = tiny_scene();
        let task = DesignTask::bowl(&scene);
        let pts = vec![
            DVec3::new(0.1, 0.0, 0.4),
            DVec3::new(-0.2, 0.1, 0.5),
            DVec3::new(0.0, -0.1, 0.45),
        ];
        let swapped = vec![pts[2], pts[0], pts[1]];
        let a = gaussian_logprob_reward(&[pts], &task);
        let b = gaussian_logprob_reward(&[swapped], &task);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn constraint_projection_is_idempotent() {
        for (r1, r2) in [(0.5, 0.6), (-0.1, -0.2), (0.25, 0.1), (0.9, 0.0)] {
            let (a1, a2) = project_constraints(r1, r2, 0.3).unwrap();
            let (b1, b2) = project_constraints(a1, a2, 0.3).unwrap();
            assert_eq!((a1, a2), (b1, b2));
            assert!(a2 >= 0.0 && a1 <= 0.3 && a1 >= a2 + MIN_RADIUS_GAP - 1e-12);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let scene = tiny_scene();
        let mut task = DesignTask::bowl(&scene);
        task.learning_rate = 0.0;
        task.optimizer_steps = 2;
        task.rollout_steps = 2;
        let cfg = ModelConfig {
            num_blocks: 1,
            hidden_dim: 8,
            ..ModelConfig::desk_default(1.5 * scene.particle_spacing, Variant::SdfFeatures)
        };
        let params = ModelParams::init(&cfg, 1);
        let initial = DesignState::new(0.24, 0.09);
        let out = optimize_design(&initial, &task, &params, &scene).unwrap();
        assert_eq!(out.opening_radius, 0.24);
        assert_eq!(out.throat_radius, 0.09);
        assert_eq!(out.param_history.len(), 2);
    }

    #[test]
    fn design_gradient_matches_finite_differences() {
        // 5-step rollout on a small block with random (seeded) weights.
        let scene = tiny_scene();
        let mut task = DesignTask::bowl(&scene);
        task.rollout_steps = 5;
        let cfg = ModelConfig {
            num_blocks: 2,
            hidden_dim: 16,
            ..ModelConfig::desk_default(1.5 * scene.particle_spacing, Variant::SdfFeatures)
        };
        let params = ModelParams::init(&cfg, 13);
        let n = scene.initial_positions().len();
        assert!((12..=30).contains(&n), "test block has {n} particles");

        let (_, g1, g2) =
            rollout_reward_and_grad(&params, &scene, &task, 0.24, 0.09, 5).unwrap();
        let h = 1e-5;
        let fd = |r1: f64, r2: f64| -> f64 {
            let tape = Tape::new();
            let staged = params.stage(&tape, false);
            let family: Rc<dyn ParamSdf> = Rc::new(FunnelFamily(scene.clone()));
            let init = positions_tensor(&scene.initial_positions());
            let window: Vec<Tensor> =
                (0..=cfg.history_len).map(|_| init.clone()).collect();
            let frames = rollout_t(
                &tape,
                &staged,
                &family,
                &[Tensor::scalar(r1), Tensor::scalar(r2)],
                None,
                &cfg,
                &window,
                5,
                0.005,
                false,
            )
            .unwrap();
            reward_t(&tape, &frames, &task).item()
        };
        let fd1 = (fd(0.24 + h, 0.09) - fd(0.24 - h, 0.09)) / (2.0 * h);
        let fd2 = (fd(0.24, 0.09 + h) - fd(0.24, 0.09 - h)) / (2.0 * h);
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
        assert!(rel(g1, fd1) < 1e-2, "opening: ad {g1} vs fd {fd1}");
        assert!(rel(g2, fd2) < 1e-2, "throat: ad {g2} vs fd {fd2}");
    }
}
