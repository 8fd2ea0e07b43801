//! Canonical (full probability vector) kernel calibration errors.

use ndarray::{s, Array2, Axis};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::dataset::ProbMatrix;
use crate::error::{HcalError, Result};

pub const DKDE_BANDWIDTH: f64 = 1.0;
pub const DKDE_ORDER: i32 = 2;
pub const SKCE_BANDWIDTH: f64 = 1.0;
const DKDE_FLOOR: f64 = 1e-12;
const BLOCK: usize = 256;

fn check(metric: &'static str, probs: &ProbMatrix, labels: &[usize], bandwidth: f64) -> Result<()> {
    if labels.len() != probs.n_samples() {
        return Err(HcalError::Shape(format!(
            "{} probability rows but {} labels",
            probs.n_samples(),
            labels.len()
        )));
    }
    if labels.len() < 2 {
        return Err(HcalError::metric(metric, "needs at least 2 samples"));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(HcalError::metric(metric, "bandwidth must be positive"));
    }
    Ok(())
}

/// Leave-one-out Dirichlet-kernel calibration error.
///
/// Sample `i` contributes the kernel `Dir(z; p_i / h + 1)`; the estimate of
/// the label distribution at `p_j` is the kernel-weighted mean of the other
/// samples' one-hot labels, and the result is `mean_j ||est_j - p_j||_r^r`.
/// Kernels are evaluated in the log domain on probabilities floored at
/// `1e-12` and renormalised.
pub fn dkde_ce(probs: &ProbMatrix, labels: &[usize], bandwidth: f64, order: i32) -> Result<f64> {
    check("dkde_ce", probs, labels, bandwidth)?;
    if order < 1 {
        return Err(HcalError::metric("dkde_ce", "order must be at least 1"));
    }
    let (n, l) = (probs.n_samples(), probs.n_classes());
    let mut clamped = probs.view().mapv(|p| p.max(DKDE_FLOOR));
    for mut row in clamped.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    let log_p = clamped.mapv(f64::ln);
    let alpha = clamped.mapv(|p| p / bandwidth);
    // log normaliser of each sample's kernel
    let norm: Vec<f64> = alpha
        .rows()
        .into_iter()
        .map(|a| ln_gamma(a.sum() + l as f64) - a.iter().map(|&v| ln_gamma(v + 1.0)).sum::<f64>())
        .collect();

    let per_block: Vec<f64> = (0..n.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let (start, end) = (b * BLOCK, ((b + 1) * BLOCK).min(n));
            // log K[j, i] = norm_i + sum_k (alpha_ik) ln p_jk
            let logk: Array2<f64> = log_p.slice(s![start..end, ..]).dot(&alpha.t());
            let mut total = 0.0;
            let mut est = vec![0.0; l];
            for (r, row) in logk.axis_iter(Axis(0)).enumerate() {
                let j = start + r;
                let mut max = f64::NEG_INFINITY;
                for (i, &v) in row.iter().enumerate() {
                    if i != j {
                        max = max.max(v + norm[i]);
                    }
                }
                est.fill(0.0);
                let mut mass = 0.0;
                for (i, &v) in row.iter().enumerate() {
                    if i != j {
                        let w = (v + norm[i] - max).exp();
                        mass += w;
                        est[labels[i]] += w;
                    }
                }
                let p = probs.row(j);
                total += est
                    .iter()
                    .zip(p.iter())
                    .map(|(&e, &pj)| (e / mass - pj).abs().powi(order))
                    .sum::<f64>();
            }
            total
        })
        .collect();
    Ok(per_block.iter().sum::<f64>() / n as f64)
}

/// Unbiased squared kernel calibration error with the matrix kernel
/// `exp(-||p - p'||_1 / bw) * I`; can be negative.
pub fn skce(probs: &ProbMatrix, labels: &[usize], bandwidth: f64) -> Result<f64> {
    check("skce", probs, labels, bandwidth)?;
    let n = probs.n_samples();
    let view = probs.view();
    // residual e_y - p per sample
    let mut resid = view.to_owned().mapv(|p| -p);
    for (i, &y) in labels.iter().enumerate() {
        resid[[i, y]] += 1.0;
    }
    let per_row: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let pi = view.row(i);
            let ri = resid.row(i);
            let mut acc = 0.0;
            for j in i + 1..n {
                let pj = view.row(j);
                let dist: f64 = pi.iter().zip(pj.iter()).map(|(a, b)| (a - b).abs()).sum();
                let dot: f64 = ri.iter().zip(resid.row(j).iter()).map(|(a, b)| a * b).sum();
                acc += (-dist / bandwidth).exp() * dot;
            }
            acc
        })
        .collect();
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(per_row.iter().sum::<f64>() / pairs)
}
