//! Dense row-major kernels with sequential and rayon-parallel variants.
//!
//! Both variants partition work over disjoint output rows and keep the
//! inner accumulation order fixed, so results are bit-identical whether
//! the `parallel` feature is enabled or not, and for any thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many multiply-adds the rayon dispatch overhead dominates.
const PAR_FLOP_THRESHOLD: usize = 64 * 1024;

/// `out = A (m x k) * B (k x n)`, sequential.
pub fn matmul_nn_seq(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// `out = A (m x k) * B^T` where B is stored `n x k`, sequential.
pub fn matmul_nt_seq(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *o = acc;
        }
    }
}

/// `out = A^T * B` where A is stored `k x m` and B is `k x n`, sequential.
pub fn matmul_tn_seq(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

#[cfg(feature = "parallel")]
pub fn matmul_nn_par(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.par_chunks_mut(n).enumerate().for_each(|(i, out_row)| {
        out_row.fill(0.0);
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    });
}

#[cfg(feature = "parallel")]
pub fn matmul_nt_par(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    out.par_chunks_mut(n).enumerate().for_each(|(i, out_row)| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *o = acc;
        }
    });
}

#[cfg(feature = "parallel")]
pub fn matmul_tn_par(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    // Each output row i reads column i of A; accumulation over p stays in
    // ascending order, matching the sequential kernel exactly.
    out.par_chunks_mut(n).enumerate().for_each(|(i, out_row)| {
        out_row.fill(0.0);
        for p in 0..k {
            let av = a[p * m + i];
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
}

pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    #[cfg(feature = "parallel")]
    if m * k * n >= PAR_FLOP_THRESHOLD && m > 1 {
        return matmul_nn_par(a, b, m, k, n, out);
    }
    matmul_nn_seq(a, b, m, k, n, out);
}

pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    #[cfg(feature = "parallel")]
    if m * k * n >= PAR_FLOP_THRESHOLD && m > 1 {
        return matmul_nt_par(a, b, m, k, n, out);
    }
    matmul_nt_seq(a, b, m, k, n, out);
}

pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    #[cfg(feature = "parallel")]
    if m * k * n >= PAR_FLOP_THRESHOLD && m > 1 {
        return matmul_tn_par(a, b, m, k, n, out);
    }
    matmul_tn_seq(a, b, m, k, n, out);
}

/// Runs `op` over disjoint output rows, in parallel when the feature is on
/// and the batch is large enough. `op` must depend only on the row index
/// and its own output slice, which keeps results order-independent.
pub fn for_each_row<F>(out: &mut [f64], cols: usize, min_par_rows: usize, op: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert_eq!(out.len() % cols.max(1), 0);
    #[cfg(feature = "parallel")]
    {
        if cols > 0 && out.len() / cols >= min_par_rows {
            out.par_chunks_mut(cols)
                .enumerate()
                .for_each(|(i, row)| op(i, row));
            return;
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = min_par_rows;
    for (i, row) in out.chunks_mut(cols).enumerate() {
        op(i, row);
    }
}
