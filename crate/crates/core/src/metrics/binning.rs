//! Histogram binning of scored items `(confidence, outcome)`.

use crate::error::{HcalError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean confidence, 0 for an empty bin.
    pub confidence: f64,
    /// Mean outcome, 0 for an empty bin.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinStats {
    pub bins: Vec<Bin>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binning {
    EqualWidth,
    EqualMass,
}

/// Order of the gap norm: `r = 1` sums `|A - C|`, `r = 2` is the root of
/// the weighted mean squared gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    R1,
    R2,
}

impl BinStats {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn nonempty(&self) -> impl Iterator<Item = &Bin> {
        self.bins.iter().filter(|b| b.count > 0)
    }

    /// `sum |B| / N * |A - C|^r`, rooted for `r = 2`.
    pub fn weighted_gap(&self, order: Order) -> f64 {
        let n = self.total() as f64;
        let s: f64 = self
            .nonempty()
            .map(|b| b.count as f64 / n * gap(b, order))
            .sum();
        match order {
            Order::R1 => s,
            Order::R2 => s.sqrt(),
        }
    }
}

fn gap(b: &Bin, order: Order) -> f64 {
    let d = (b.accuracy - b.confidence).abs();
    match order {
        Order::R1 => d,
        Order::R2 => d * d,
    }
}

/// Index of the equal-width bin holding `c`; `c = 1` goes to the last bin.
pub fn equal_width_index(c: f64, bins: usize) -> usize {
    ((c * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

pub(crate) fn check_items(metric: &'static str, conf: &[f64], outcome: &[f64]) -> Result<()> {
    if conf.is_empty() {
        return Err(HcalError::metric(metric, "no items to score"));
    }
    if conf.len() != outcome.len() {
        return Err(HcalError::Shape(format!(
            "{} confidences but {} outcomes",
            conf.len(),
            outcome.len()
        )));
    }
    Ok(())
}

fn stats_from_sums(lower: f64, upper: f64, count: usize, conf_sum: f64, out_sum: f64) -> Bin {
    let (confidence, accuracy) = if count == 0 {
        (0.0, 0.0)
    } else {
        (conf_sum / count as f64, out_sum / count as f64)
    };
    Bin {
        lower,
        upper,
        count,
        confidence,
        accuracy,
    }
}

/// `bins` equal-width bins over `[0, 1]`.
pub fn equal_width(conf: &[f64], outcome: &[f64], bins: usize) -> BinStats {
    assert!(bins > 0, "at least one bin");
    let mut count = vec![0usize; bins];
    let mut cs = vec![0.0; bins];
    let mut os = vec![0.0; bins];
    for (&c, &o) in conf.iter().zip(outcome) {
        let k = equal_width_index(c, bins);
        count[k] += 1;
        cs[k] += c;
        os[k] += o;
    }
    let w = 1.0 / bins as f64;
    BinStats {
        bins: (0..bins)
            .map(|k| stats_from_sums(k as f64 * w, (k + 1) as f64 * w, count[k], cs[k], os[k]))
            .collect(),
    }
}

/// Item indices sorted by confidence, ties in index order.
pub fn confidence_order(conf: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..conf.len()).collect();
    order.sort_by(|&a, &b| conf[a].total_cmp(&conf[b]).then(a.cmp(&b)));
    order
}

/// Bin `k` of `bins` equal-mass bins over `n` sorted items covers sorted
/// positions `floor(k n / bins) .. floor((k + 1) n / bins)`.
pub fn equal_mass_bounds(n: usize, bins: usize) -> Vec<usize> {
    (0..=bins).map(|k| k * n / bins).collect()
}

/// `bins` equal-mass bins; bin edges are the smallest and largest member.
pub fn equal_mass(conf: &[f64], outcome: &[f64], bins: usize) -> BinStats {
    assert!(bins > 0, "at least one bin");
    let order = confidence_order(conf);
    equal_mass_sorted(conf, outcome, &order, bins)
}

pub(crate) fn equal_mass_sorted(
    conf: &[f64],
    outcome: &[f64],
    order: &[usize],
    bins: usize,
) -> BinStats {
    let bounds = equal_mass_bounds(order.len(), bins);
    BinStats {
        bins: bounds
            .windows(2)
            .map(|w| {
                let members = &order[w[0]..w[1]];
                let cs: f64 = members.iter().map(|&i| conf[i]).sum();
                let os: f64 = members.iter().map(|&i| outcome[i]).sum();
                let (lower, upper) = match (members.first(), members.last()) {
                    (Some(&a), Some(&b)) => (conf[a], conf[b]),
                    _ => (f64::NAN, f64::NAN),
                };
                stats_from_sums(lower, upper, members.len(), cs, os)
            })
            .collect(),
    }
}

pub fn bin_stats(conf: &[f64], outcome: &[f64], binning: Binning, bins: usize) -> BinStats {
    match binning {
        Binning::EqualWidth => equal_width(conf, outcome, bins),
        Binning::EqualMass => equal_mass(conf, outcome, bins),
    }
}
