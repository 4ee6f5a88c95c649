//! Batch-parallel matrix products with deterministic results.
//!
//! Work is split along fixed row/k chunks (independent of worker count) and
//! partial results are combined in chunk order, so outputs are bit-identical
//! whether one thread or many execute the chunks.

use ndarray::{s, Array2, ArrayView2, CowArray, Ix2};
use rayon::prelude::*;

use crate::real::Real;

/// Fixed row-chunk size: results are combined in chunk order, so outputs are
/// bit-identical for any worker count.
const ROW_CHUNK: usize = 16384;

fn std_input<'a, F: Real>(a: ArrayView2<'a, F>) -> CowArray<'a, F, Ix2> {
    if a.is_standard_layout() {
        CowArray::from(a)
    } else {
        // strided operands fall off the fast multiply kernels; copy once
        CowArray::from(a.as_standard_layout().into_owned())
    }
}

fn standardize<F: Real>(m: Array2<F>) -> Array2<F> {
    if m.is_standard_layout() {
        m
    } else {
        // the (n,1)x(1,m) special case comes back with col-major strides
        m.as_standard_layout().into_owned()
    }
}

/// a (n x k) * b (k x m), row-chunked across workers.
pub fn matmul<F: Real>(a: ArrayView2<'_, F>, b: ArrayView2<'_, F>) -> Array2<F> {
    let a = std_input(a);
    let b = std_input(b);
    let n = a.nrows();
    if n <= ROW_CHUNK || rayon::current_num_threads() <= 2 {
        return standardize(a.dot(&b));
    }
    let starts: Vec<usize> = (0..n).step_by(ROW_CHUNK).collect();
    let parts: Vec<Array2<F>> = starts
        .par_iter()
        .map(|&s0| {
            crate::alloc_tuning::ensure();
            let s1 = (s0 + ROW_CHUNK).min(n);
            a.slice(s![s0..s1, ..]).dot(&b)
        })
        .collect();
    let mut out = Array2::zeros((n, b.ncols()));
    for (&s0, part) in starts.iter().zip(parts) {
        let s1 = (s0 + ROW_CHUNK).min(n);
        out.slice_mut(s![s0..s1, ..]).assign(&part);
    }
    out
}

/// a^T (k x n)^T * b (n x m); the contraction is split over fixed chunks and
/// partials are summed in chunk order.
pub fn matmul_tn<F: Real>(a: ArrayView2<'_, F>, b: ArrayView2<'_, F>) -> Array2<F> {
    assert_eq!(a.nrows(), b.nrows());
    let b = std_input(b);
    let n = a.nrows();
    if n <= ROW_CHUNK || rayon::current_num_threads() <= 2 {
        return standardize(a.t().dot(&b));
    }
    let starts: Vec<usize> = (0..n).step_by(ROW_CHUNK).collect();
    let parts: Vec<Array2<F>> = starts
        .par_iter()
        .map(|&s0| {
            crate::alloc_tuning::ensure();
            let s1 = (s0 + ROW_CHUNK).min(n);
            a.slice(s![s0..s1, ..]).t().dot(&b.slice(s![s0..s1, ..]))
        })
        .collect();
    let mut out = Array2::zeros((a.ncols(), b.ncols()));
    for part in parts {
        out += &part;
    }
    out
}

/// Elementwise sine over a contiguous slice.
pub fn sin_inplace<F: Real>(buf: &mut [F]) {
    F::act_sin_inplace(buf);
}

/// Elementwise cosine: out[i] = cos(z[i]).
pub fn cos_into<F: Real>(z: &[F], out: &mut [F]) {
    F::act_cos_slice(z, out);
}
