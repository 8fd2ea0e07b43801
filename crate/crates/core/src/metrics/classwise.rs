//! Classwise calibration errors: every `(sample, class)` entry is scored
//! against the indicator that the sample's label is that class.

use super::binning::{equal_width, equal_width_index, Bin};
use crate::dataset::ProbMatrix;
use crate::error::{HcalError, Result};
use crate::kmeans::{kmeans_1d, DEFAULT_MAX_ITER};

pub const CWECE_BINS: usize = 15;
pub const TCWECE_K: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CwVariant {
    /// Mean over classes of the per-class ECE.
    A,
    /// Sum over classes of the per-class ECE.
    S,
    /// Root of the class-averaged, mass-weighted squared gap.
    R2,
}

impl CwVariant {
    /// Bin count used with the standard 15-bin setting.
    pub fn default_bins(self) -> usize {
        match self {
            CwVariant::S => CWECE_BINS - 1,
            CwVariant::A | CwVariant::R2 => CWECE_BINS,
        }
    }
}

fn check(metric: &'static str, probs: &ProbMatrix, labels: &[usize]) -> Result<()> {
    if labels.len() != probs.n_samples() {
        return Err(HcalError::Shape(format!(
            "{} probability rows but {} labels",
            probs.n_samples(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(HcalError::metric(metric, "no items to score"));
    }
    Ok(())
}

/// Column `l` of the probabilities and its event indicators.
fn class_items(probs: &ProbMatrix, labels: &[usize], l: usize) -> (Vec<f64>, Vec<f64>) {
    let col = probs.view().column(l).to_vec();
    let hit = labels.iter().map(|&y| if y == l { 1.0 } else { 0.0 }).collect();
    (col, hit)
}

/// Equal-width bin statistics for every class.
pub fn classwise_bins(probs: &ProbMatrix, labels: &[usize], bins: usize) -> Vec<Vec<Bin>> {
    (0..probs.n_classes())
        .map(|l| {
            let (c, h) = class_items(probs, labels, l);
            equal_width(&c, &h, bins).bins
        })
        .collect()
}

pub fn cwece(probs: &ProbMatrix, labels: &[usize], variant: CwVariant, bins: usize) -> Result<f64> {
    check("cwece", probs, labels)?;
    let n = probs.n_samples() as f64;
    let l = probs.n_classes() as f64;
    let mut total = 0.0;
    for class_bins in classwise_bins(probs, labels, bins) {
        for b in class_bins.iter().filter(|b| b.count > 0) {
            let d = (b.accuracy - b.confidence).abs();
            let w = b.count as f64 / n;
            total += match variant {
                CwVariant::A | CwVariant::S => w * d,
                CwVariant::R2 => w * d * d,
            };
        }
    }
    Ok(match variant {
        CwVariant::A => total / l,
        CwVariant::S => total,
        CwVariant::R2 => (total / l).sqrt(),
    })
}

/// Default threshold: the uniform probability `1/L`.
pub fn default_threshold(n_classes: usize) -> f64 {
    1.0 / n_classes as f64
}

fn check_threshold(metric: &'static str, threshold: f64) -> Result<()> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(HcalError::metric(metric, format!("threshold {threshold} outside [0, 1)")));
    }
    Ok(())
}

/// `sum |B| |A - C|` over `(count, sum p, sum hit)` cells.
fn accumulate(cells: &[(f64, f64, f64)]) -> f64 {
    cells
        .iter()
        .map(|&(count, conf_sum, hit_sum)| if count > 0.0 { (hit_sum - conf_sum).abs() } else { 0.0 })
        .sum()
}

/// Classwise ECE restricted to entries with `p > threshold`. Each class
/// keeps its own equal-width bins; the result is
/// `sum |B| |A - C| / (retained entries)`, so `threshold = 0` gives cwece (a).
pub fn tcwece(probs: &ProbMatrix, labels: &[usize], threshold: f64, bins: usize) -> Result<f64> {
    check("tcwece", probs, labels)?;
    check_threshold("tcwece", threshold)?;
    let mut retained = 0usize;
    let mut err = 0.0;
    for l in 0..probs.n_classes() {
        let mut cells = vec![(0.0, 0.0, 0.0); bins];
        let (c, h) = class_items(probs, labels, l);
        for (&p, &e) in c.iter().zip(&h) {
            if p > threshold {
                let cell = &mut cells[equal_width_index(p, bins)];
                cell.0 += 1.0;
                cell.1 += p;
                cell.2 += e;
                retained += 1;
            }
        }
        err += accumulate(&cells);
    }
    if retained == 0 {
        return Err(HcalError::metric("tcwece", "no entries retained above the threshold"));
    }
    Ok(err / retained as f64)
}

/// As [`tcwece`], but the bins are the `k` clusters of 1-D k-means over all
/// retained probabilities pooled across classes.
pub fn tcwece_k(probs: &ProbMatrix, labels: &[usize], k: usize, threshold: f64) -> Result<f64> {
    check("tcwece_k", probs, labels)?;
    check_threshold("tcwece_k", threshold)?;
    if k == 0 {
        return Err(HcalError::metric("tcwece_k", "k must be at least 1"));
    }
    let l = probs.n_classes();
    let view = probs.view();
    let mut values = Vec::new();
    let mut keys = Vec::new();
    for (i, row) in view.rows().into_iter().enumerate() {
        for (c, &p) in row.iter().enumerate() {
            if p > threshold {
                values.push(p);
                keys.push((c, labels[i] == c));
            }
        }
    }
    if values.is_empty() {
        return Err(HcalError::metric("tcwece_k", "no entries retained above the threshold"));
    }
    let km = kmeans_1d(&values, k, DEFAULT_MAX_ITER);
    let mut cells = vec![(0.0, 0.0, 0.0); l * k];
    for ((&p, &(c, hit)), &a) in values.iter().zip(&keys).zip(&km.assignments) {
        let cell = &mut cells[c * k + a];
        cell.0 += 1.0;
        cell.1 += p;
        cell.2 += if hit { 1.0 } else { 0.0 };
    }
    Ok(accumulate(&cells) / values.len() as f64)
}
