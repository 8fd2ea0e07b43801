//! Continuous piecewise-linear transform of max-shifted logits.
//!
//! The range `[-100, 0]` is cut into `z` equal segments with slopes
//! `exp(param)`. The transform is pinned at `f(0) = 0`; logits below `-100`
//! continue along the first segment.

use ndarray::{Array2, ArrayView2};

use super::{shift_by_row_max, softmax_vjp, unshift_grad, PIECEWISE_RANGE};
use crate::dataset::softmax_into;

#[derive(Debug, Clone)]
pub(crate) struct Cache {
    shifted: Array2<f64>,
    argmax: Vec<usize>,
}

pub(super) fn init(z: usize) -> Vec<f64> {
    vec![0.0; z]
}

fn segment_width(z: usize) -> f64 {
    PIECEWISE_RANGE / z as f64
}

fn segment_of(z: usize, x: f64) -> usize {
    let k = ((x + PIECEWISE_RANGE) / segment_width(z)).floor();
    if k < 0.0 {
        0
    } else {
        (k as usize).min(z - 1)
    }
}

/// Right edge of segment `k`.
fn right_edge(z: usize, k: usize) -> f64 {
    -PIECEWISE_RANGE + (k + 1) as f64 * segment_width(z)
}

/// `f` at every right edge, from segment 0 up; the last entry is `f(0) = 0`.
fn edge_values(z: usize, slopes: &[f64]) -> Vec<f64> {
    let w = segment_width(z);
    let mut f = vec![0.0; z];
    for k in (0..z - 1).rev() {
        f[k] = f[k + 1] - slopes[k + 1] * w;
    }
    f
}

/// `(f(x), segment)` for a single shifted logit.
pub(super) fn transform(z: usize, params: &[f64], x: f64) -> (f64, usize) {
    let slopes: Vec<f64> = params.iter().map(|p| p.exp()).collect();
    let edges = edge_values(z, &slopes);
    let k = segment_of(z, x);
    (edges[k] - slopes[k] * (right_edge(z, k) - x), k)
}

pub(super) fn forward(z: usize, params: &[f64], logits: &Array2<f64>) -> (Cache, Array2<f64>) {
    let slopes: Vec<f64> = params.iter().map(|p| p.exp()).collect();
    let edges = edge_values(z, &slopes);
    let (shifted, argmax) = shift_by_row_max(logits);
    let (n, l) = logits.dim();
    let mut out = Array2::<f64>::zeros((n, l));
    let mut f = vec![0.0; l];
    for (x, mut orow) in shifted.rows().into_iter().zip(out.rows_mut()) {
        for (fj, &xj) in f.iter_mut().zip(x) {
            let k = segment_of(z, xj);
            *fj = edges[k] - slopes[k] * (right_edge(z, k) - xj);
        }
        softmax_into(&f, orow.as_slice_mut().expect("contiguous"));
    }
    (Cache { shifted, argmax }, out)
}

pub(super) fn backward(
    z: usize,
    params: &[f64],
    cache: &Cache,
    out: &ArrayView2<'_, f64>,
    upstream: &ArrayView2<'_, f64>,
) -> (Vec<f64>, Array2<f64>) {
    let slopes: Vec<f64> = params.iter().map(|p| p.exp()).collect();
    let w = segment_width(z);
    let (n, l) = out.dim();
    // df/ds_k is -w for segments right of x's segment and -(edge - x) for its own
    let mut suffix = vec![0.0; z + 1];
    let mut own = vec![0.0; z];
    let mut gshift = Array2::<f64>::zeros((n, l));
    let mut q = vec![0.0; l];
    for i in 0..n {
        let s = out.row(i);
        let g = upstream.row(i);
        softmax_vjp(
            s.as_slice().expect("contiguous"),
            g.as_slice().expect("contiguous"),
            &mut q,
        );
        let x = cache.shifted.row(i);
        let mut grow = gshift.row_mut(i);
        for j in 0..l {
            let k = segment_of(z, x[j]);
            suffix[k + 1] -= q[j] * w;
            own[k] -= q[j] * (right_edge(z, k) - x[j]);
            grow[j] = q[j] * slopes[k];
        }
    }
    let mut grad = vec![0.0; z];
    let mut acc = 0.0;
    for k in 0..z {
        acc += suffix[k];
        // chain through s_k = exp(param_k)
        grad[k] = slopes[k] * (acc + own[k]);
    }
    (grad, unshift_grad(gshift, &cache.argmax))
}
