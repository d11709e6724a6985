//! Finite-difference verification of reverse-mode gradients.

use super::{Tape, Tensor};

/// Compares the reverse-mode gradient of a scalar-valued function against
/// central differences, component by component, and returns the worst
/// relative error.
///
/// The denominator uses the larger of the two gradient magnitudes, floored
/// at `1e-3` of the overall gradient scale so that near-zero components do
/// not dominate the ratio.
pub fn grad_check<F>(f: F, inputs: &[(Vec<f64>, Vec<usize>)], h: f64) -> f64
where
    F: Fn(&Tape, &[Tensor]) -> Tensor,
{
    let eval = |values: &[Vec<f64>]| -> f64 {
        let tape = Tape::new();
        let tensors: Vec<Tensor> = values
            .iter()
            .zip(inputs)
            .map(|(v, (_, shape))| Tensor::constant(v.clone(), shape))
            .collect();
        f(&tape, &tensors).item()
    };

    // Reverse-mode gradients.
    let tape = Tape::new();
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|(data, shape)| tape.leaf(data.clone(), shape))
        .collect();
    let loss = f(&tape, &leaves);
    let grads = tape.backward(&loss).expect("grad_check loss must be scalar");
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|l| grads.get(l)).collect();

    // Central differences per component.
    let base: Vec<Vec<f64>> = inputs.iter().map(|(d, _)| d.clone()).collect();
    let mut fd: Vec<Vec<f64>> = base.iter().map(|d| vec![0.0; d.len()]).collect();
    for (i, data) in base.iter().enumerate() {
        for j in 0..data.len() {
            let mut hi = base.clone();
            let mut lo = base.clone();
            hi[i][j] += h;
            lo[i][j] -= h;
            fd[i][j] = (eval(&hi) - eval(&lo)) / (2.0 * h);
        }
    }

    let scale = analytic
        .iter()
        .chain(fd.iter())
        .flat_map(|v| v.iter())
        .fold(0.0f64, |acc, &x| acc.max(x.abs()));
    let mut worst = 0.0f64;
    for (ga, gf) in analytic.iter().zip(&fd) {
        for (&a, &b) in ga.iter().zip(gf) {
            let denom = a.abs().max(b.abs()).max(1e-3 * scale).max(1e-12);
            worst = worst.max((a - b).abs() / denom);
        }
    }
    worst
}
