//! Dense f64 matrix kernels used by the tape. Parallelism only ever splits
//! independent output rows, so results do not depend on thread count.

use rayon::prelude::*;

/// Work threshold below which the sequential path is faster than forking.
const PAR_FLOPS: usize = 64 * 1024;

/// Widest output row kept in a stack accumulator; wider rows use a chunked
/// path.
const ACC_WIDTH: usize = 128;

/// `out = a @ b`, a is m x k, b is k x n, all row-major.
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    // Accumulating into a local buffer frees the compiler from aliasing
    // hazards between `out` and `b`, which roughly doubles throughput.
    let row = |a_row: &[f64], out_row: &mut [f64]| {
        let mut col = 0;
        while col < n {
            let width = (n - col).min(ACC_WIDTH);
            let mut acc = [0.0f64; ACC_WIDTH];
            for (kk, &aik) in a_row.iter().enumerate() {
                let b_row = &b[kk * n + col..kk * n + col + width];
                for (av, &bv) in acc[..width].iter_mut().zip(b_row) {
                    *av += aik * bv;
                }
            }
            out_row[col..col + width].copy_from_slice(&acc[..width]);
            col += width;
        }
    };
    if m * k * n >= PAR_FLOPS {
        out.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(out_row, a_row)| row(a_row, out_row));
    } else {
        for (out_row, a_row) in out.chunks_mut(n).zip(a.chunks(k)) {
            row(a_row, out_row);
        }
    }
}

/// `out += g @ b^T`, g is m x n, b is k x n, out is m x k.
pub fn matmul_nt_accum(g: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    let row = |g_row: &[f64], out_row: &mut [f64]| {
        for (kk, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            let mut acc = 0.0;
            for (gv, bv) in g_row.iter().zip(b_row) {
                acc += gv * bv;
            }
            *o += acc;
        }
    };
    if m * k * n >= PAR_FLOPS {
        out.par_chunks_mut(k)
            .zip(g.par_chunks(n))
            .for_each(|(out_row, g_row)| row(g_row, out_row));
    } else {
        for (out_row, g_row) in out.chunks_mut(k).zip(g.chunks(n)) {
            row(g_row, out_row);
        }
    }
}

/// `out += a^T @ g`, a is m x k, g is m x n, out is k x n.
pub fn matmul_tn_accum(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    let row = |kk: usize, out_row: &mut [f64]| {
        let mut col = 0;
        while col < n {
            let width = (n - col).min(ACC_WIDTH);
            let mut acc = [0.0f64; ACC_WIDTH];
            for i in 0..m {
                let coef = a[i * k + kk];
                if coef != 0.0 {
                    let g_row = &g[i * n + col..i * n + col + width];
                    for (av, &gv) in acc[..width].iter_mut().zip(g_row) {
                        *av += coef * gv;
                    }
                }
            }
            for (o, &av) in out_row[col..col + width].iter_mut().zip(&acc[..width]) {
                *o += av;
            }
            col += width;
        }
    };
    if m * k * n >= PAR_FLOPS {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(kk, out_row)| row(kk, out_row));
    } else {
        for (kk, out_row) in out.chunks_mut(n).enumerate() {
            row(kk, out_row);
        }
    }
}
