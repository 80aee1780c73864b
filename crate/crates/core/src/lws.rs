//! Local weighted smoothing: a node vector is repeatedly pulled toward
//! the weighted sum of its (fixed) neighbor vectors, where each weight is
//! the inner product between the current center and the neighbor, and the
//! result is passed through a norm-bounding map that keeps the output
//! norm in [0, 1) without changing direction.
//!
//! There is no softmax and no neighbor sampling: every neighbor in the
//! list contributes, duplicates contribute twice, and weights may be
//! negative. Within one smoothing call the neighbor vectors never change;
//! only the center is updated across iterations. All accumulation is in
//! `f64`.

use crate::matrix::{axpy, dot, norm2, Matrix};

/// Propagation weight between a center and one neighbor: plain inner
/// product, unnormalized and possibly negative or zero.
#[inline]
pub fn propagation_weight(center: &[f64], neighbor: &[f64]) -> f64 {
    dot(center, neighbor)
}

/// Scale factor of the norm-bounding map: `n / (n^2 + 1)` for input norm
/// `n`, with the zero vector mapping to zero.
#[inline]
pub fn norm_bound_factor(norm: f64) -> f64 {
    if norm == 0.0 {
        0.0
    } else {
        norm / (norm * norm + 1.0)
    }
}

/// `u -> u * ||u|| / (||u||^2 + 1)`: keeps direction, maps the norm to
/// `||u||^2 / (||u||^2 + 1)` in [0, 1), and sends zero to zero.
pub fn norm_bound(u: &[f64]) -> Vec<f64> {
    let mut out = u.to_vec();
    norm_bound_in_place(&mut out);
    out
}

pub fn norm_bound_in_place(u: &mut [f64]) {
    let factor = norm_bound_factor(norm2(u));
    for v in u.iter_mut() {
        *v *= factor;
    }
}

/// One smoothing step: `norm_bound(center + sum_t pi(center, x_t) * x_t)`
/// over the (possibly empty) neighbor multiset. Writes the result to
/// `out`, which must have the embedding dimension.
pub fn aggregate_once_into(
    center: &[f64],
    neighbor_ids: &[u32],
    neighbors: &Matrix,
    out: &mut [f64],
) {
    out.copy_from_slice(center);
    for &t in neighbor_ids {
        let row = neighbors.row(t as usize);
        let w = dot(center, row);
        axpy(w, row, out);
    }
    norm_bound_in_place(out);
}

pub fn aggregate_once(center: &[f64], neighbor_ids: &[u32], neighbors: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; center.len()];
    aggregate_once_into(center, neighbor_ids, neighbors, &mut out);
    out
}

/// Q-fold smoothing: the weights are recomputed from the current center
/// at every iteration while the neighbor vectors stay fixed.
pub fn lws_smooth(
    center: &[f64],
    neighbor_ids: &[u32],
    neighbors: &Matrix,
    iterations: usize,
) -> Vec<f64> {
    let mut cur = center.to_vec();
    let mut next = vec![0.0; center.len()];
    for _ in 0..iterations {
        aggregate_once_into(&cur, neighbor_ids, neighbors, &mut next);
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Like [`lws_smooth`] but records every intermediate center
/// `c^(0) .. c^(Q)` for the backward sweep. Reuses the buffers already in
/// `trace` when their sizes fit.
pub fn lws_smooth_trace_into(
    center: &[f64],
    neighbor_ids: &[u32],
    neighbors: &Matrix,
    iterations: usize,
    trace: &mut Vec<Vec<f64>>,
) {
    trace.resize_with(iterations + 1, Vec::new);
    trace[0].clear();
    trace[0].extend_from_slice(center);
    for q in 1..=iterations {
        let (before, after) = trace.split_at_mut(q);
        let prev = &before[q - 1];
        let cur = &mut after[0];
        cur.resize(center.len(), 0.0);
        aggregate_once_into(prev, neighbor_ids, neighbors, cur);
    }
}

/// Reusable buffers for the backward sweep.
pub struct LwsScratch {
    s: Vec<f64>,
    s_bar: Vec<f64>,
    g: Vec<f64>,
    g_next: Vec<f64>,
    weights: Vec<f64>,
    pub trace: Vec<Vec<f64>>,
}

impl LwsScratch {
    pub fn new(dim: usize) -> Self {
        LwsScratch {
            s: vec![0.0; dim],
            s_bar: vec![0.0; dim],
            g: vec![0.0; dim],
            g_next: vec![0.0; dim],
            weights: Vec::new(),
            trace: Vec::new(),
        }
    }
}

/// Adjoint of the norm-bounding map. For `y = sigma(n) u` with
/// `sigma(n) = n / (n^2 + 1)`:
/// `u_bar = sigma(n) y_bar + sigma'(n) (y_bar . u) / n * u`,
/// and zero input yields a zero adjoint (the Jacobian vanishes at 0).
fn norm_bound_backward_into(u: &[f64], y_bar: &[f64], out: &mut [f64]) {
    let n = norm2(u);
    if n == 0.0 {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let denom = n * n + 1.0;
    let sigma = n / denom;
    let sigma_prime = (1.0 - n * n) / (denom * denom);
    let coupling = sigma_prime * dot(y_bar, u) / n;
    for i in 0..u.len() {
        out[i] = sigma * y_bar[i] + coupling * u[i];
    }
}

/// Backward sweep through a recorded smoothing chain.
///
/// `trace` must hold `c^(0) .. c^(Q)` as produced by
/// [`lws_smooth_trace_into`] for the same neighbors and matrix.
/// `out_adjoint` is dL/d c^(Q). The center adjoint dL/d c^(0) is ADDED to
/// `center_adjoint`. For every neighbor occurrence the sink receives
/// `(id, a, s_bar, b, c_prev)` meaning `adj[id] += a * s_bar + b * c_prev`.
pub fn lws_smooth_backward(
    neighbor_ids: &[u32],
    neighbors: &Matrix,
    out_adjoint: &[f64],
    scratch: &mut LwsScratch,
    center_adjoint: &mut [f64],
    mut neighbor_sink: impl FnMut(u32, f64, &[f64], f64, &[f64]),
) {
    let iterations = scratch.trace.len() - 1;
    scratch.g.copy_from_slice(out_adjoint);
    scratch.weights.resize(neighbor_ids.len(), 0.0);
    for q in (1..=iterations).rev() {
        // Recompute the pre-norm sum s_q and the weights from c^(q-1).
        let (s, s_bar, g, g_next, weights, trace) = (
            &mut scratch.s,
            &mut scratch.s_bar,
            &mut scratch.g,
            &mut scratch.g_next,
            &mut scratch.weights,
            &scratch.trace,
        );
        let c_prev = &trace[q - 1];
        s.copy_from_slice(c_prev);
        for (j, &t) in neighbor_ids.iter().enumerate() {
            let row = neighbors.row(t as usize);
            let w = dot(c_prev, row);
            weights[j] = w;
            axpy(w, row, s);
        }
        norm_bound_backward_into(s, g, s_bar);
        // d s / d x_t = w_t I + x_t c_prev^T
        for (j, &t) in neighbor_ids.iter().enumerate() {
            let row = neighbors.row(t as usize);
            neighbor_sink(t, weights[j], s_bar, dot(row, s_bar), c_prev);
        }
        // d s / d c = I + sum_t x_t x_t^T
        g_next.copy_from_slice(s_bar);
        for &t in neighbor_ids {
            let row = neighbors.row(t as usize);
            axpy(dot(row, s_bar), row, g_next);
        }
        std::mem::swap(g, g_next);
    }
    axpy(1.0, &scratch.g, center_adjoint);
}
