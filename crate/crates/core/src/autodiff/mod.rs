//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] records operations define-by-run. Tensors are immutable
//! buffers; an operation's output carries a tape node only when one of its
//! inputs does, so code paths running on constants pay no recording cost.
//! [`Tape::backward`] walks the recorded ops once in reverse order, which
//! makes gradients deterministic for identical tapes.
//!
//! Tapes are not shared across threads; within an op, parallel kernels only
//! split work over independent output rows, so results are bit-stable
//! regardless of thread count.

mod check;
mod kernels;
pub mod sdf_ops;

pub use check::grad_check;

use std::cell::RefCell;
use std::rc::Rc;

/// Dense row-major tensor, rank 1 or 2.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    node: Option<usize>,
}

impl Tensor {
    /// A tensor that does not participate in differentiation.
    pub fn constant(data: Vec<f64>, shape: &[usize]) -> Tensor {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "constant: data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            shape: shape.to_vec(),
            data: Rc::new(data),
            node: None,
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::constant(vec![v], &[1])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::constant(vec![0.0; shape.iter().product()], shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            n => panic!("rank-{n} tensor where a matrix was expected"),
        }
    }

    fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[1],
            n => panic!("rank-{n} tensor where a matrix was expected"),
        }
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("node", &self.node)
            .finish()
    }
}

type BackwardFn = Box<dyn FnOnce(&mut GradBuffers)>;

#[derive(Default)]
struct TapeInner {
    node_sizes: Vec<usize>,
    ops: Vec<BackwardFn>,
}

/// Records operations for one backward pass.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<TapeInner>,
}

/// Per-node gradient buffers populated during the backward sweep.
pub struct GradBuffers {
    bufs: Vec<Option<Vec<f64>>>,
}

impl GradBuffers {
    /// Removes and returns the accumulated gradient of an op output.
    /// `None` means the node does not influence the loss.
    fn take(&mut self, node: usize) -> Option<Vec<f64>> {
        self.bufs[node].take()
    }

    /// Accumulates into a node's gradient, allocating zeros on first touch.
    fn accum(&mut self, node: usize, size: usize, f: impl FnOnce(&mut [f64])) {
        let buf = self.bufs[node].get_or_insert_with(|| vec![0.0; size]);
        f(buf);
    }
}

/// Gradient of the loss with respect to every leaf, after [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    bufs: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for a tensor created with [`Tape::leaf`]. Leaves untouched
    /// by the graph get zeros.
    pub fn get(&self, leaf: &Tensor) -> Vec<f64> {
        let node = leaf
            .node
            .expect("gradient requested for a tensor that is not on the tape");
        match &self.bufs[node] {
            Some(g) => g.clone(),
            None => vec![0.0; leaf.len()],
        }
    }
}

#[derive(Debug, PartialEq, Eq)]
pub enum AutodiffError {
    NotScalar(Vec<usize>),
}

impl std::fmt::Display for AutodiffError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AutodiffError::NotScalar(shape) => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
        }
    }
}

impl std::error::Error for AutodiffError {}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    /// Creates a differentiable leaf on this tape.
    pub fn leaf(&self, data: Vec<f64>, shape: &[usize]) -> Tensor {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "leaf: data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        let node = self.new_node(data.len());
        Tensor {
            shape: shape.to_vec(),
            data: Rc::new(data),
            node: Some(node),
        }
    }

    fn new_node(&self, size: usize) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.node_sizes.push(size);
        inner.node_sizes.len() - 1
    }

    /// Wraps computed data into an output tensor and records `backward`
    /// if any input was on the tape. `backward` receives the output
    /// gradient after all downstream ops have contributed to it.
    pub(crate) fn emit(
        &self,
        data: Vec<f64>,
        shape: Vec<usize>,
        any_input_on_tape: bool,
        make_backward: impl FnOnce(usize) -> BackwardFn,
    ) -> Tensor {
        if !any_input_on_tape {
            return Tensor {
                shape,
                data: Rc::new(data),
                node: None,
            };
        }
        let node = self.new_node(data.len());
        let backward = make_backward(node);
        self.inner.borrow_mut().ops.push(backward);
        Tensor {
            shape,
            data: Rc::new(data),
            node: Some(node),
        }
    }

    /// Runs the backward sweep from a scalar loss, consuming the tape's
    /// recorded ops. Returns gradients for every leaf.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients, AutodiffError> {
        if loss.len() != 1 {
            return Err(AutodiffError::NotScalar(loss.shape.clone()));
        }
        let (ops, n_nodes) = {
            let mut inner = self.inner.borrow_mut();
            let ops = std::mem::take(&mut inner.ops);
            (ops, inner.node_sizes.len())
        };
        let mut grads = GradBuffers {
            bufs: vec![None; n_nodes],
        };
        if let Some(node) = loss.node {
            grads.bufs[node] = Some(vec![1.0]);
        }
        for op in ops.into_iter().rev() {
            op(&mut grads);
        }
        Ok(Gradients { bufs: grads.bufs })
    }

    /// Number of recorded ops, mainly to assert that constant-only paths
    /// record nothing.
    pub fn recorded_ops(&self) -> usize {
        self.inner.borrow().ops.len()
    }
}

// ---------------------------------------------------------------------------
// Elementwise and structural operations
// ---------------------------------------------------------------------------

macro_rules! binary_elementwise {
    ($name:ident, $fwd:expr, $bwd_a:expr, $bwd_b:expr) => {
        pub fn $name(&self, a: &Tensor, b: &Tensor) -> Tensor {
            assert_eq!(
                a.shape, b.shape,
                concat!(stringify!($name), ": shape mismatch {:?} vs {:?}"),
                a.shape, b.shape
            );
            let fwd: fn(f64, f64) -> f64 = $fwd;
            let data: Vec<f64> = a
                .data
                .iter()
                .zip(b.data.iter())
                .map(|(&x, &y)| fwd(x, y))
                .collect();
            let (an, bn) = (a.node, b.node);
            let (ad, bd) = (Rc::clone(&a.data), Rc::clone(&b.data));
            let size = data.len();
            self.emit(data, a.shape.clone(), an.is_some() || bn.is_some(), |out| {
                Box::new(move |g| {
                    let Some(go) = g.take(out) else { return };
                    let bwd_a: fn(f64, f64, f64) -> f64 = $bwd_a;
                    let bwd_b: fn(f64, f64, f64) -> f64 = $bwd_b;
                    if let Some(an) = an {
                        g.accum(an, size, |ga| {
                            for i in 0..size {
                                ga[i] += bwd_a(go[i], ad[i], bd[i]);
                            }
                        });
                    }
                    if let Some(bn) = bn {
                        g.accum(bn, size, |gb| {
                            for i in 0..size {
                                gb[i] += bwd_b(go[i], ad[i], bd[i]);
                            }
                        });
                    }
                })
            })
        }
    };
}

macro_rules! unary_elementwise {
    ($name:ident, $fwd:expr, $bwd:expr) => {
        /// Elementwise op; the backward rule receives (upstream, input, output).
        pub fn $name(&self, a: &Tensor) -> Tensor {
            let fwd: fn(f64) -> f64 = $fwd;
            let data: Vec<f64> = a.data.iter().map(|&x| fwd(x)).collect();
            let an = a.node;
            let ad = Rc::clone(&a.data);
            let out_data = Rc::new(data);
            let out_for_bwd = Rc::clone(&out_data);
            let size = ad.len();
            let tensor = if an.is_some() {
                let node = self.new_node(size);
                let backward: BackwardFn = Box::new(move |g| {
                    let Some(go) = g.take(node) else { return };
                    let bwd: fn(f64, f64, f64) -> f64 = $bwd;
                    let an = an.unwrap();
                    g.accum(an, size, |ga| {
                        for i in 0..size {
                            ga[i] += bwd(go[i], ad[i], out_for_bwd[i]);
                        }
                    });
                });
                self.inner.borrow_mut().ops.push(backward);
                Tensor {
                    shape: a.shape.clone(),
                    data: out_data,
                    node: Some(node),
                }
            } else {
                Tensor {
                    shape: a.shape.clone(),
                    data: out_data,
                    node: None,
                }
            };
            tensor
        }
    };
}

impl Tape {
    binary_elementwise!(add, |x, y| x + y, |go, _a, _b| go, |go, _a, _b| go);
    binary_elementwise!(sub, |x, y| x - y, |go, _a, _b| go, |go, _a, _b| -go);
    binary_elementwise!(mul, |x, y| x * y, |go, _a, b| go * b, |go, a, _b| go * a);
    binary_elementwise!(
        div,
        |x, y| x / y,
        |go, _a, b| go / b,
        |go, a, b| -go * a / (b * b)
    );

    unary_elementwise!(neg, |x| -x, |go, _x, _y| -go);
    unary_elementwise!(relu, |x| x.max(0.0), |go, x, _y| if x > 0.0 { go } else { 0.0 });
    unary_elementwise!(tanh, |x| x.tanh(), |go, _x, y| go * (1.0 - y * y));
    unary_elementwise!(sigmoid, |x| 1.0 / (1.0 + (-x).exp()), |go, _x, y| go * y * (1.0 - y));
    unary_elementwise!(square, |x| x * x, |go, x, _y| go * 2.0 * x);
    unary_elementwise!(sqrt, |x| x.sqrt(), |go, _x, y| go * 0.5 / y);
    unary_elementwise!(exp, |x| x.exp(), |go, _x, y| go * y);
    unary_elementwise!(log, |x| x.ln(), |go, x, _y| go / x);

    /// Multiplies by a compile-time-known constant.
    pub fn scale(&self, a: &Tensor, c: f64) -> Tensor {
        let data: Vec<f64> = a.data.iter().map(|&x| x * c).collect();
        let an = a.node;
        let size = data.len();
        self.emit(data, a.shape.clone(), an.is_some(), |out| {
            Box::new(move |g| {
                let Some(go) = g.take(out) else { return };
                if let Some(an) = an {
                    g.accum(an, size, |ga| {
                        for i in 0..size {
                            ga[i] += go[i] * c;
                        }
                    });
                }
            })
        })
    }

    /// Adds a constant to every element.
    pub fn add_scalar(&self, a: &Tensor, c: f64) -> Tensor {
        let data: Vec<f64> = a.data.iter().map(|&x| x + c).collect();
        let an = a.node;
        let size = data.len();
        self.emit(data, a.shape.clone(), an.is_some(), |out| {
            Box::new(move |g| {
                let Some(go) = g.take(out) else { return };
                if let Some(an) = an {
                    g.accum(an, size, |ga| {
                        for i in 0..size {
                            ga[i] += go[i];
                        }
                    });
                }
            })
        })
    }

    /// Clamps to `[lo, hi]` with pass-through gradient strictly inside.
    pub fn clamp(&self, a: &Tensor, lo: f64, hi: f64) -> Tensor {
        let data: Vec<f64> = a.data.iter().map(|&x| x.clamp(lo, hi)).collect();
        let an = a.node;
        let ad = Rc::clone(&a.data);
        let size = data.len();
        self.emit(data, a.shape.clone(), an.is_some(), |out| {
            Box::new(move |g| {
                let Some(go) = g.take(out) else { return };
                if let Some(an) = an {
                    g.accum(an, size, |ga| {
                        for i in 0..size {
                            if ad[i] > lo && ad[i] < hi {
                                ga[i] += go[i];
                            }
                        }
                    });
                }
            })
        })
    }

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = (a.rows(), a.cols());
        let (kb, n) = (b.rows(), b.cols());
        assert_eq!(
            k, kb,
            "matmul: inner dims {:?} x {:?}",
            a.shape, b.shape
        );
        let mut data = vec![0.0; m * n];
        kernels::matmul_nn(&a.data, &b.data, m, k, n, &mut data);
        let (an, bn) = (a.node, b.node);
        let (ad, bd) = (Rc::clone(&a.data), Rc::clone(&b.data));
        self.emit(data, vec![m, n], an.is_some() || bn.is_some(), |out| {
            Box::new(move |g| {
                let Some(go) = g.take(out) else { return };
                if let Some(an) = an {
                    g.accum(an, m * k, |ga| {
                        kernels::matmul_nt_accum(&go, &bd, m, n, k, ga);
                    });
                }
                if let Some(bn) = bn {
                    g.accum(bn, k * n, |gb| {
                        kernels::matmul_tn_accum(&ad, &go, m, k, n, gb);
                    });
                }
            })
        })
    }

    pub fn sum(&self, a: &Tensor) -> Tensor {
        let total: f64 = a.data.iter().sum();
        let an = a.node;
        let size = a.len();
        self.emit(vec![total], vec![1], an.is_some(), |out| {
            Box::new(move |g| {
                let Some(go) = g.take(out) else { return };
                if let Some(an) = an {
                    g.accum(an, size, |ga| {
                        for v in ga.iter_mut() {
                            *v += go[0];
                        }
                    });
                }
            })
        })
    }

    pub fn mean(&self, a: &Tensor) -> Tensor {
        assert!(!a.is_empty(), "mean of empty tensor");
        let inv = 1.0 / a.len() as f64;
        let total: f64 = a.data.iter().sum::<f64>() * inv;
        let an = a.node;
        let size = a.len();
        self.emit(vec![total], vec![1], an.is_some(), |out| {
            Box::new(move |g| {
                let Some(go) = g.take(out) else { return };
                if let Some(an) = an {
                    g.accum(an, size, |ga| {
                        for v in ga.iter_mut() {
                            *v += go[0] * inv;
                        }
                    });
                }
            })
        })
    }

    /// Selects rows of a matrix by index; rows may repeat.
    pub fn gather_rows(&self, a: &Tensor, idx: &[u32]) -> Tensor {
        let (rows, cols) = (a.rows(), a.cols());
        let mut data = vec![0.0; idx.len() * cols];
        for (i, &r) in idx.iter().enumerate() {
            let r = r as usize;
            assert!(r < rows, "gather_rows: index {r} out of {rows}");
            data[i * cols..(i + 1) * cols].copy_from_slice(&a.data[r * cols..(r + 1) * cols]);
        }
        let an = a.node;
        let idx_owned: Rc<Vec<u32>> = Rc::new(idx.to_vec());
        self.emit(data, vec![idx.len(), cols], an.is_some(), |out| {
            Box::new(move |g| {
                let Some(go) = g.take(out) else { return };
                if let Some(an) = an {
                    g.accum(an, rows * cols, |ga| {
                        for (i, &r) in idx_owned.iter().enumerate() {
                            let r = r as usize;
                            for c in 0..cols {
                                ga[r * cols + c] += go[i * cols + c];
                            }
                        }
                    });
                }
            })
        })
    }

    /// Sums rows of `a` into `n_rows` output rows selected by `idx`,
    /// accumulating in input order (fixed reduction order).
    pub fn scatter_add_rows(&self, a: &Tensor, idx: &[u32], n_rows: usize) -> Tensor {
        let (rows, cols) = (a.rows(), a.cols());
        assert_eq!(rows, idx.len(), "scatter_add_rows: {} rows vs {} indices", rows, idx.len());
        let mut data = vec![0.0; n_rows * cols];
        for (i, &r) in idx.iter().enumerate() {
            let r = r as usize;
            assert!(r < n_rows, "scatter_add_rows: index {r} out of {n_rows}");
            for c in 0..cols {
                data[r * cols + c] += a.data[i * cols + c];
            }
        }
        let an = a.node;
        let idx_owned: Rc<Vec<u32>> = Rc::new(idx.to_vec());
        self.emit(data, vec![n_rows, cols], an.is_some(), |out| {
            Box::new(move |g| {
                let Some(go) = g.take(out) else { return };
                if let Some(an) = an {
                    g.accum(an, rows * cols, |ga| {
                        for (i, &r) in idx_owned.iter().enumerate() {
                            let r = r as usize;
                            for c in 0..cols {
                                ga[i * cols + c] += go[r * cols + c];
                            }
                        }
                    });
                }
            })
        })
    }

    /// Repeats a row vector into `m` rows.
    pub fn broadcast_rows(&self, row: &Tensor, m: usize) -> Tensor {
        let cols = row.cols();
        assert_eq!(row.rows(), 1, "broadcast_rows expects a row vector, got {:?}", row.shape);
        let mut data = Vec::with_capacity(m * cols);
        for _ in 0..m {
            data.extend_from_slice(&row.data);
        }
        let rn = row.node;
        self.emit(data, vec![m, cols], rn.is_some(), |out| {
            Box::new(move |g| {
                let Some(go) = g.take(out) else { return };
                if let Some(rn) = rn {
                    g.accum(rn, cols, |gr| {
                        for r in 0..m {
                            for c in 0..cols {
                                gr[c] += go[r * cols + c];
                            }
                        }
                    });
                }
            })
        })
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&self, parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let rows = parts[0].rows();
        for p in parts {
            assert_eq!(p.rows(), rows, "concat_cols: row mismatch {:?}", p.shape);
        }
        let widths: Vec<usize> = parts.iter().map(|p| p.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&p.data[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let nodes: Vec<Option<usize>> = parts.iter().map(|p| p.node).collect();
        let any = nodes.iter().any(Option::is_some);
        self.emit(data, vec![rows, total], any, |out| {
            Box::new(move |g| {
                let Some(go) = g.take(out) else { return };
                let mut offset = 0;
                for (node, &w) in nodes.iter().zip(&widths) {
                    if let Some(n) = node {
                        g.accum(*n, rows * w, |gp| {
                            for r in 0..rows {
                                for c in 0..w {
                                    gp[r * w + c] += go[r * total + offset + c];
                                }
                            }
                        });
                    }
                    offset += w;
                }
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_gradients() {
        let tape = Tape::new();
        let x = tape.leaf(vec![2.0], &[1]);
        let y = tape.leaf(vec![3.0], &[1]);
        let loss = tape.mul(&x, &y);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&x), vec![3.0]);
        assert_eq!(grads.get(&y), vec![2.0]);
    }

    #[test]
    fn sum_backward_is_ones() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, -2.0, 5.0], &[3]);
        let loss = tape.sum(&x);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&x), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn disconnected_leaf_gets_zeros() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0], &[2]);
        let unused = tape.leaf(vec![5.0], &[1]);
        let loss = tape.sum(&x);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&unused), vec![0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0], &[2]);
        assert_eq!(
            tape.backward(&x).unwrap_err(),
            AutodiffError::NotScalar(vec![2])
        );
    }

    #[test]
    fn constants_record_nothing() {
        let tape = Tape::new();
        let a = Tensor::constant(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = Tensor::constant(vec![0.5; 4], &[2, 2]);
        let c = tape.matmul(&a, &b);
        let _ = tape.tanh(&c);
        assert_eq!(tape.recorded_ops(), 0);
    }

    #[test]
    fn matmul_forward_known_case() {
        let tape = Tape::new();
        let a = Tensor::constant(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = Tensor::constant(vec![5.0, 6.0, 7.0, 8.0], &[2, 2]);
        let c = tape.matmul(&a, &b);
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_grad_is_g_bt() {
        // loss = sum(A @ B); dA = ones @ B^T.
        let tape = Tape::new();
        let a = tape.leaf(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let b = Tensor::constant(vec![1.0, -1.0, 0.5, 2.0, 0.0, 1.0], &[3, 2]);
        let loss = tape.sum(&tape.matmul(&a, &b));
        let grads = tape.backward(&loss).unwrap();
        let ga = grads.get(&a);
        // Row gradient = row sums of B: [0, 2.5, 1].
        assert_eq!(ga, vec![0.0, 2.5, 1.0, 0.0, 2.5, 1.0]);
    }

    #[test]
    fn scatter_then_backward_gathers() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3, 2]);
        let idx = [1u32, 1, 0];
        let scattered = tape.scatter_add_rows(&x, &idx, 2);
        assert_eq!(scattered.data(), &[5.0, 6.0, 4.0, 6.0]);
        let w = Tensor::constant(vec![1.0, 10.0, 100.0, 1000.0], &[2, 2]);
        let loss = tape.sum(&tape.mul(&scattered, &w));
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&x), vec![100.0, 1000.0, 100.0, 1000.0, 1.0, 10.0]);
    }

    #[test]
    fn gradients_do_not_leak_across_tapes() {
        for _ in 0..2 {
            let tape = Tape::new();
            let x = tape.leaf(vec![3.0], &[1]);
            let loss = tape.square(&x);
            let grads = tape.backward(&loss).unwrap();
            assert_eq!(grads.get(&x), vec![6.0]);
        }
    }
}
