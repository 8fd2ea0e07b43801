//! Weighted average of `m` temperature-scaled softmaxes.
//!
//! Parameters: `m` log-temperatures followed by `m` mixture-weight logits.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::softmax_vjp;
use crate::dataset::softmax_into;

/// Half-width of the seeded spread of initial log-temperatures. Identical
/// temperatures receive identical gradients forever, so the components are
/// spread just enough to tell them apart.
const INIT_SPREAD: f64 = 0.05;

#[derive(Debug, Clone)]
pub(crate) struct Cache {
    /// Per-component softmax outputs, each N x L.
    components: Vec<Array2<f64>>,
}

pub(super) fn init(m: usize, seed: u64) -> Vec<f64> {
    let mut params = vec![0.0; 2 * m];
    if m > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut params[..m] {
            *p = rng.random_range(-INIT_SPREAD..=INIT_SPREAD);
        }
    }
    params
}

pub(super) fn components(m: usize, params: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let temps = params[..m].iter().map(|t| t.exp()).collect();
    let mut weights = vec![0.0; m];
    softmax_into(&params[m..], &mut weights);
    (temps, weights)
}

pub(super) fn forward(m: usize, params: &[f64], logits: &Array2<f64>) -> (Cache, Array2<f64>) {
    let (temps, weights) = components(m, params);
    let (n, l) = logits.dim();
    let mut out = Array2::<f64>::zeros((n, l));
    let mut comps = Vec::with_capacity(m);
    let mut scaled = vec![0.0; l];
    for (&t, &w) in temps.iter().zip(&weights) {
        let mut s = Array2::<f64>::zeros((n, l));
        for ((x, mut srow), mut orow) in logits.rows().into_iter().zip(s.rows_mut()).zip(out.rows_mut()) {
            for (z, &v) in scaled.iter_mut().zip(x) {
                *z = v / t;
            }
            let srow = srow.as_slice_mut().expect("contiguous");
            softmax_into(&scaled, srow);
            for (o, &p) in orow.iter_mut().zip(srow.iter()) {
                *o += w * p;
            }
        }
        comps.push(s);
    }
    (Cache { components: comps }, out)
}

pub(super) fn backward(
    m: usize,
    params: &[f64],
    cache: &Cache,
    logits: &Array2<f64>,
    upstream: &ArrayView2<'_, f64>,
) -> (Vec<f64>, Array2<f64>) {
    let (temps, weights) = components(m, params);
    let (n, l) = logits.dim();
    let mut grad = vec![0.0; 2 * m];
    let mut dweight = vec![0.0; m];
    let mut gx = Array2::<f64>::zeros((n, l));
    let mut u = vec![0.0; l];
    let mut dz = vec![0.0; l];
    for k in 0..m {
        let (t, w) = (temps[k], weights[k]);
        let s = &cache.components[k];
        let mut dtau = 0.0;
        let mut dw = 0.0;
        for i in 0..n {
            let srow = s.row(i);
            let srow = srow.as_slice().expect("contiguous");
            let g = upstream.row(i);
            let g = g.as_slice().expect("contiguous");
            let x = logits.row(i);
            dw += srow.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
            for (ui, &gi) in u.iter_mut().zip(g) {
                *ui = w * gi;
            }
            softmax_vjp(srow, &u, &mut dz);
            let mut gxrow = gx.row_mut(i);
            for j in 0..l {
                // z = x / T with T = exp(tau): dz/dtau = -z, dz/dx = 1/T
                dtau -= dz[j] * x[j] / t;
                gxrow[j] += dz[j] / t;
            }
        }
        grad[k] = dtau;
        dweight[k] = dw;
    }
    let mean: f64 = weights.iter().zip(&dweight).map(|(w, d)| w * d).sum();
    for k in 0..m {
        grad[m + k] = weights[k] * (dweight[k] - mean);
    }
    (grad, gx)
}
