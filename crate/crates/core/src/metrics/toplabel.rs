//! Top-label calibration errors: the scored item per sample is the largest
//! probability, and its outcome is whether that class is the label.

use super::binning::{
    self, bin_stats, check_items, confidence_order, equal_mass_bounds, equal_mass_sorted,
    equal_width, BinStats, Binning, Order,
};
use crate::dataset::ProbMatrix;
use crate::error::{HcalError, Result};

pub const DEFAULT_BINS: usize = 15;
pub const MMCE_BANDWIDTH: f64 = 0.4;
pub const KDE_GRID: usize = 1024;

/// `(confidence, correct)` per sample.
pub fn top_label_items(probs: &ProbMatrix, labels: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    if labels.len() != probs.n_samples() {
        return Err(HcalError::Shape(format!(
            "{} probability rows but {} labels",
            probs.n_samples(),
            labels.len()
        )));
    }
    let (conf, pred) = probs.top_label();
    let correct = pred
        .iter()
        .zip(labels)
        .map(|(p, y)| if p == y { 1.0 } else { 0.0 })
        .collect();
    Ok((conf, correct))
}

pub fn ece(
    probs: &ProbMatrix,
    labels: &[usize],
    binning: Binning,
    bins: usize,
    order: Order,
) -> Result<f64> {
    let (conf, correct) = top_label_items(probs, labels)?;
    check_items("ece", &conf, &correct)?;
    Ok(bin_stats(&conf, &correct, binning, bins).weighted_gap(order))
}

/// Debiased equal-mass calibration error (order 2): per bin the squared gap
/// minus the plug-in variance `A (1 - A) / (|B| - 1)`, mass-weighted, floored
/// at zero, square-rooted.
pub fn dece(probs: &ProbMatrix, labels: &[usize], bins: usize) -> Result<f64> {
    let (conf, correct) = top_label_items(probs, labels)?;
    check_items("dece", &conf, &correct)?;
    let stats = binning::equal_mass(&conf, &correct, bins);
    let n = conf.len() as f64;
    let mut total = 0.0;
    for b in &stats.bins {
        if b.count < 2 {
            return Err(HcalError::metric(
                "dece",
                format!("every bin needs at least 2 samples ({} samples, {bins} bins)", conf.len()),
            ));
        }
        let d = b.confidence - b.accuracy;
        let var = b.accuracy * (1.0 - b.accuracy) / (b.count as f64 - 1.0);
        total += b.count as f64 / n * (d * d - var);
    }
    Ok(total.max(0.0).sqrt())
}

/// Mean gap over nonempty equal-width bins.
pub fn ace(probs: &ProbMatrix, labels: &[usize], bins: usize) -> Result<f64> {
    let (conf, correct) = top_label_items(probs, labels)?;
    check_items("ace", &conf, &correct)?;
    let stats = equal_width(&conf, &correct, bins);
    let (sum, k) = stats
        .nonempty()
        .fold((0.0, 0usize), |(s, k), b| (s + (b.accuracy - b.confidence).abs(), k + 1));
    Ok(sum / k as f64)
}

/// Equal-mass bin count for the sweep: grow `b` from 1 while the bin
/// accuracies stay non-decreasing and keep the last monotone `b`. Items are
/// already sorted by confidence.
fn sweep_bins(sorted_correct: &[f64]) -> usize {
    let n = sorted_correct.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &c in sorted_correct {
        acc += c;
        prefix.push(acc);
    }
    let mut best = 1;
    for b in 2..=n {
        let bounds = equal_mass_bounds(n, b);
        let monotone = bounds
            .windows(3)
            .all(|w| {
                let left = (prefix[w[1]] - prefix[w[0]]) / (w[1] - w[0]) as f64;
                let right = (prefix[w[2]] - prefix[w[1]]) / (w[2] - w[1]) as f64;
                left <= right
            });
        if !monotone {
            break;
        }
        best = b;
    }
    best
}

/// Equal-mass calibration error at the sweep-selected bin count.
pub fn sweep_ece(probs: &ProbMatrix, labels: &[usize], order: Order) -> Result<f64> {
    let (conf, correct) = top_label_items(probs, labels)?;
    check_items("sweep_ece", &conf, &correct)?;
    let sorted_order = confidence_order(&conf);
    let sorted_correct: Vec<f64> = sorted_order.iter().map(|&i| correct[i]).collect();
    let bins = sweep_bins(&sorted_correct);
    Ok(equal_mass_sorted(&conf, &correct, &sorted_order, bins).weighted_gap(order))
}

/// The bin count [`sweep_ece`] settles on.
pub fn sweep_bin_count(probs: &ProbMatrix, labels: &[usize]) -> Result<usize> {
    let (conf, correct) = top_label_items(probs, labels)?;
    check_items("sweep_ece", &conf, &correct)?;
    let sorted_correct: Vec<f64> = confidence_order(&conf).iter().map(|&i| correct[i]).collect();
    Ok(sweep_bins(&sorted_correct))
}

/// Largest gap between cumulative correctness and cumulative confidence
/// over samples sorted by confidence; only evaluated where the confidence
/// changes, so the order inside a tie does not matter.
pub fn ks_error(probs: &ProbMatrix, labels: &[usize]) -> Result<f64> {
    let (conf, correct) = top_label_items(probs, labels)?;
    check_items("ks", &conf, &correct)?;
    let order = confidence_order(&conf);
    let n = conf.len() as f64;
    let (mut h, mut g, mut best) = (0.0, 0.0, 0.0f64);
    for (pos, &i) in order.iter().enumerate() {
        h += correct[i];
        g += conf[i];
        let group_end = order.get(pos + 1).is_none_or(|&j| conf[j] != conf[i]);
        if group_end {
            best = best.max((h - g).abs() / n);
        }
    }
    Ok(best)
}

/// Kernel calibration error with a Laplacian kernel on confidences.
///
/// On sorted confidences `sum_j d_j exp(-|c_i - c_j| / bw)` splits into a
/// forward and a backward running sum, so the double sum costs `O(N log N)`.
pub fn mmce(probs: &ProbMatrix, labels: &[usize], bandwidth: f64) -> Result<f64> {
    let (conf, correct) = top_label_items(probs, labels)?;
    check_items("mmce", &conf, &correct)?;
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(HcalError::metric("mmce", "bandwidth must be positive"));
    }
    let order = confidence_order(&conf);
    let c: Vec<f64> = order.iter().map(|&i| conf[i]).collect();
    let d: Vec<f64> = order.iter().map(|&i| correct[i] - conf[i]).collect();
    let n = c.len();
    let mut fwd = vec![0.0; n];
    let mut bwd = vec![0.0; n];
    for i in 0..n {
        fwd[i] = d[i] + if i > 0 { (-(c[i] - c[i - 1]) / bandwidth).exp() * fwd[i - 1] } else { 0.0 };
    }
    for i in (0..n).rev() {
        bwd[i] = d[i]
            + if i + 1 < n {
                (-(c[i + 1] - c[i]) / bandwidth).exp() * bwd[i + 1]
            } else {
                0.0
            };
    }
    let total: f64 = (0..n).map(|i| d[i] * (fwd[i] + bwd[i] - d[i])).sum();
    let nf = n as f64;
    Ok((total / (nf * nf)).max(0.0).sqrt())
}

/// Rule-of-thumb Gaussian bandwidth `1.06 sd N^(-1/5)`.
pub fn kde_bandwidth(conf: &[f64]) -> f64 {
    let n = conf.len() as f64;
    let mean = conf.iter().sum::<f64>() / n;
    let var = conf.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    1.06 * var.sqrt() * n.powf(-0.2)
}

/// Kernel-density calibration error: Gaussian Nadaraya-Watson accuracy
/// estimate, integrated against the confidence density on a grid over
/// `[1/L, 1]`. `bandwidth = None` uses [`kde_bandwidth`]; when every
/// confidence is equal the rule gives zero, the density is a point mass and
/// the result is the plain gap.
pub fn kde_ece(probs: &ProbMatrix, labels: &[usize], bandwidth: Option<f64>) -> Result<f64> {
    kde_ece_grid(probs, labels, bandwidth, KDE_GRID)
}

pub fn kde_ece_grid(
    probs: &ProbMatrix,
    labels: &[usize],
    bandwidth: Option<f64>,
    grid: usize,
) -> Result<f64> {
    let (conf, correct) = top_label_items(probs, labels)?;
    check_items("kde_ece", &conf, &correct)?;
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(HcalError::metric("kde_ece", format!("bandwidth {h} is not positive"))),
        None => {
            if conf.iter().all(|&c| c == conf[0]) {
                let n = conf.len() as f64;
                return Ok((correct.iter().sum::<f64>() / n - conf[0]).abs());
            }
            kde_bandwidth(&conf)
        }
    };
    if grid < 2 {
        return Err(HcalError::metric("kde_ece", "grid needs at least 2 points"));
    }
    let lo = 1.0 / probs.n_classes() as f64;
    let step = (1.0 - lo) / (grid - 1) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for g in 0..grid {
        let z = lo + g as f64 * step;
        let (mut dens, mut hit) = (0.0, 0.0);
        for (&c, &e) in conf.iter().zip(&correct) {
            let u = (z - c) / h;
            let k = (-0.5 * u * u).exp();
            dens += k;
            hit += k * e;
        }
        let trap = if g == 0 || g == grid - 1 { 0.5 } else { 1.0 };
        if dens > 0.0 {
            num += trap * (z - hit / dens).abs() * dens;
        }
        den += trap * dens;
    }
    if den == 0.0 {
        return Err(HcalError::metric("kde_ece", "bandwidth too small for the grid"));
    }
    Ok(num / den)
}

/// Equal-width top-label bins plus the overall averages.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityData {
    pub stats: BinStats,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

pub fn reliability_data(probs: &ProbMatrix, labels: &[usize], bins: usize) -> Result<ReliabilityData> {
    let (conf, correct) = top_label_items(probs, labels)?;
    check_items("reliability", &conf, &correct)?;
    let n = conf.len() as f64;
    Ok(ReliabilityData {
        stats: equal_width(&conf, &correct, bins),
        mean_confidence: conf.iter().sum::<f64>() / n,
        accuracy: correct.iter().sum::<f64>() / n,
    })
}

pub fn accuracy(probs: &ProbMatrix, labels: &[usize]) -> Result<f64> {
    let (_, correct) = top_label_items(probs, labels)?;
    check_items("accuracy", &correct, &correct)?;
    Ok(correct.iter().sum::<f64>() / correct.len() as f64)
}
