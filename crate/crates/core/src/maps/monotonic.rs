//! Min-max monotone network applied elementwise to max-shifted logits.
//!
//! `f(x) = min_g max_u (exp(a[g,u]) * x + b[g,u])`. Parameters: the
//! `groups * units` log-slopes, then the same number of intercepts. Ties in
//! the max or the min go to the lowest index.
//!
//! At initialisation every piece passes through a point `(t, t)` of the
//! identity, with anchors `t` spread evenly over `[-100, 0]` and slopes
//! within 0.1% of one, so the network starts as (almost) the identity with
//! each piece active somewhere.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{shift_by_row_max, softmax_vjp, unshift_grad, PIECEWISE_RANGE};
use crate::dataset::softmax_into;

const INIT_LOG_SLOPE_SPREAD: f64 = 1e-3;

#[derive(Debug, Clone)]
pub(crate) struct Cache {
    shifted: Array2<f64>,
    argmax: Vec<usize>,
    /// Flat index `g * units + u` of the piece that produced each output.
    active: Vec<u32>,
}

pub(super) fn init(groups: usize, units: usize, seed: u64) -> Vec<f64> {
    let n = groups * units;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![0.0; 2 * n];
    for g in 0..groups {
        for u in 0..units {
            let idx = g * units + u;
            let a = rng.random_range(-INIT_LOG_SLOPE_SPREAD..=INIT_LOG_SLOPE_SPREAD);
            let rank = (u * groups + g) as f64 + 0.5;
            let anchor = -PIECEWISE_RANGE * (1.0 - rank / n as f64);
            params[idx] = a;
            params[n + idx] = anchor * (1.0 - a.exp());
        }
    }
    params
}

/// `(f(x), active piece)`.
pub(super) fn transform(groups: usize, units: usize, params: &[f64], x: f64) -> (f64, usize) {
    let n = groups * units;
    let slopes: Vec<f64> = params[..n].iter().map(|a| a.exp()).collect();
    transform_with(&slopes, &params[n..], groups, units, x)
}

fn transform_with(slopes: &[f64], biases: &[f64], groups: usize, units: usize, x: f64) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for g in 0..groups {
        let base = g * units;
        let mut top = (f64::NEG_INFINITY, 0);
        for idx in base..base + units {
            let v = slopes[idx] * x + biases[idx];
            if v > top.0 {
                top = (v, idx);
            }
        }
        if top.0 < best.0 {
            best = top;
        }
    }
    best
}

pub(super) fn forward(
    groups: usize,
    units: usize,
    params: &[f64],
    logits: &Array2<f64>,
) -> (Cache, Array2<f64>) {
    let n_pieces = groups * units;
    let slopes: Vec<f64> = params[..n_pieces].iter().map(|a| a.exp()).collect();
    let biases = &params[n_pieces..];
    let (shifted, argmax) = shift_by_row_max(logits);
    let (n, l) = logits.dim();
    let mut out = Array2::<f64>::zeros((n, l));
    let mut active = Vec::with_capacity(n * l);
    let mut f = vec![0.0; l];
    for (x, mut orow) in shifted.rows().into_iter().zip(out.rows_mut()) {
        for (fj, &xj) in f.iter_mut().zip(x) {
            let (v, idx) = transform_with(&slopes, biases, groups, units, xj);
            *fj = v;
            active.push(idx as u32);
        }
        softmax_into(&f, orow.as_slice_mut().expect("contiguous"));
    }
    (
        Cache {
            shifted,
            argmax,
            active,
        },
        out,
    )
}

pub(super) fn backward(
    groups: usize,
    units: usize,
    params: &[f64],
    cache: &Cache,
    out: &ArrayView2<'_, f64>,
    upstream: &ArrayView2<'_, f64>,
) -> (Vec<f64>, Array2<f64>) {
    let n_pieces = groups * units;
    let slopes: Vec<f64> = params[..n_pieces].iter().map(|a| a.exp()).collect();
    let (n, l) = out.dim();
    let mut grad = vec![0.0; 2 * n_pieces];
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
            let idx = cache.active[i * l + j] as usize;
            grad[idx] += q[j] * slopes[idx] * x[j];
            grad[n_pieces + idx] += q[j];
            grow[j] = q[j] * slopes[idx];
        }
    }
    (grad, unshift_grad(gshift, &cache.argmax))
}
