//! Particle-based fluid simulation with implicitly represented solids.
//!
//! The crate provides:
//! - [`sdf`]: signed distance functions for primitives, CSG compositions,
//!   rigid transforms, and grid-sampled fields,
//! - [`reference_sim`]: a weakly-compressible SPH oracle that generates
//!   ground-truth trajectories against SDF boundaries,
//! - [`autodiff`]: a reverse-mode tape over dense tensors,
//! - [`graph_net`]: the learned simulator (encode-process-decode message
//!   passing with SDF features or boundary particles),
//! - [`training`]: next-step supervised training with surface-weighted loss,
//! - [`metrics`]: Chamfer and penetration rollout metrics,
//! - [`design`]: gradient-based inverse shape design through rollouts,
//! - [`efficiency`]: graph-size and step-time instrumentation.

pub mod autodiff;
pub mod design;
pub mod efficiency;
pub mod geom;
pub mod graph_net;
pub mod metrics;
pub mod reference_sim;
pub mod sdf;
pub mod training;

pub use geom::Aabb;
pub use graph_net::{ModelConfig, ModelParams, ParticleGraph, Variant};
pub use reference_sim::{FluidState, SceneSpec, SphConfig, Trajectory};
pub use sdf::{GridSdf, SdfNode, SurfaceQuery};
