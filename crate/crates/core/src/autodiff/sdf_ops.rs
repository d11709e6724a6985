//! SDF evaluation as recorded tape operations.
//!
//! The field value op backpropagates through positions with the closed-form
//! spatial gradient. The field gradient op is itself a recorded forward op
//! (no double backward); its backward applies the Hessian and the parameter
//! Jacobian by central differences of the closed-form gradient. Shape
//! parameters enter through a [`ParamSdf`] family, so design variables can
//! flow into both features.

use std::rc::Rc;

use glam::DVec3;

use super::{Tape, Tensor};
use crate::sdf::SdfNode;

/// A family of scenes indexed by scalar design parameters.
pub trait ParamSdf {
    fn build(&self, params: &[f64]) -> SdfNode;
}

/// A fixed scene with no free parameters.
pub struct StaticSdf(pub SdfNode);

impl ParamSdf for StaticSdf {
    fn build(&self, _params: &[f64]) -> SdfNode {
        self.0.clone()
    }
}

/// Central-difference step for shape parameters.
const PARAM_H: f64 = 1e-6;
/// Direction step for Hessian-vector products.
const HESS_H: f64 = 1e-5;

fn positions_from(t: &Tensor) -> Vec<DVec3> {
    assert_eq!(t.shape().len(), 2, "positions must be [n,3]");
    assert_eq!(t.shape()[1], 3, "positions must be [n,3]");
    t.data()
        .chunks_exact(3)
        .map(|c| DVec3::new(c[0], c[1], c[2]))
        .collect()
}

fn param_values(params: &[Tensor]) -> Vec<f64> {
    params
        .iter()
        .map(|p| {
            assert_eq!(p.len(), 1, "shape parameters must be scalars");
            p.item()
        })
        .collect()
}

/// `F(p_i)` for every row of `positions`, shape [n,1].
pub fn sdf_values(
    tape: &Tape,
    family: &Rc<dyn ParamSdf>,
    params: &[Tensor],
    positions: &Tensor,
) -> Tensor {
    let pts = positions_from(positions);
    let theta = param_values(params);
    let node = family.build(&theta);
    let values: Vec<f64> = pts.iter().map(|&p| node.eval(p)).collect();

    let pos_node = positions.node;
    let param_nodes: Vec<Option<usize>> = params.iter().map(|p| p.node).collect();
    let on_tape = pos_node.is_some() || param_nodes.iter().any(Option::is_some);
    let n = pts.len();
    let family = Rc::clone(family);

    tape.emit(values, vec![n, 1], on_tape, move |out| {
        Box::new(move |g| {
            let Some(go) = g.take(out) else { return };
            if let Some(pn) = pos_node {
                g.accum(pn, n * 3, |gp| {
                    for (i, &p) in pts.iter().enumerate() {
                        let grad = node.grad(p).gradient;
                        gp[i * 3] += go[i] * grad.x;
                        gp[i * 3 + 1] += go[i] * grad.y;
                        gp[i * 3 + 2] += go[i] * grad.z;
                    }
                });
            }
            for (j, pnode) in param_nodes.iter().enumerate() {
                let Some(pnode) = pnode else { continue };
                let mut hi = theta.clone();
                let mut lo = theta.clone();
                hi[j] += PARAM_H;
                lo[j] -= PARAM_H;
                let node_hi = family.build(&hi);
                let node_lo = family.build(&lo);
                let mut acc = 0.0;
                for (i, &p) in pts.iter().enumerate() {
                    acc += go[i] * (node_hi.eval(p) - node_lo.eval(p)) / (2.0 * PARAM_H);
                }
                g.accum(*pnode, 1, |gt| gt[0] += acc);
            }
        })
    })
}

/// `grad F(p_i)` for every row of `positions`, shape [n,3].
pub fn sdf_gradients(
    tape: &Tape,
    family: &Rc<dyn ParamSdf>,
    params: &[Tensor],
    positions: &Tensor,
) -> Tensor {
    let pts = positions_from(positions);
    let theta = param_values(params);
    let node = family.build(&theta);
    let mut values = Vec::with_capacity(pts.len() * 3);
    for &p in &pts {
        let grad = node.grad(p).gradient;
        values.extend_from_slice(&[grad.x, grad.y, grad.z]);
    }

    let pos_node = positions.node;
    let param_nodes: Vec<Option<usize>> = params.iter().map(|p| p.node).collect();
    let on_tape = pos_node.is_some() || param_nodes.iter().any(Option::is_some);
    let n = pts.len();
    let family = Rc::clone(family);

    tape.emit(values, vec![n, 3], on_tape, move |out| {
        Box::new(move |g| {
            let Some(go) = g.take(out) else { return };
            if let Some(pn) = pos_node {
                g.accum(pn, n * 3, |gp| {
                    for (i, &p) in pts.iter().enumerate() {
                        let u = DVec3::new(go[i * 3], go[i * 3 + 1], go[i * 3 + 2]);
                        let norm = u.length();
                        if norm < 1e-300 {
                            continue;
                        }
                        // Hessian is symmetric: H u = d/dh grad F(p + h u).
                        let dir = u / norm;
                        let ghi = node.grad(p + dir * HESS_H).gradient;
                        let glo = node.grad(p - dir * HESS_H).gradient;
                        let hu = (ghi - glo) * (norm / (2.0 * HESS_H));
                        gp[i * 3] += hu.x;
                        gp[i * 3 + 1] += hu.y;
                        gp[i * 3 + 2] += hu.z;
                    }
                });
            }
            for (j, pnode) in param_nodes.iter().enumerate() {
                let Some(pnode) = pnode else { continue };
                let mut hi = theta.clone();
                let mut lo = theta.clone();
                hi[j] += PARAM_H;
                lo[j] -= PARAM_H;
                let node_hi = family.build(&hi);
                let node_lo = family.build(&lo);
                let mut acc = 0.0;
                for (i, &p) in pts.iter().enumerate() {
                    let dg = (node_hi.grad(p).gradient - node_lo.grad(p).gradient)
                        / (2.0 * PARAM_H);
                    acc += go[i * 3] * dg.x + go[i * 3 + 1] * dg.y + go[i * 3 + 2] * dg.z;
                }
                g.accum(*pnode, 1, |gt| gt[0] += acc);
            }
        })
    })
}
