//! Calibration metrics at top-label, classwise and canonical level, plus
//! NLL and accuracy.

pub mod binning;
pub mod classwise;
pub mod kernel;
pub mod toplabel;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

pub use binning::{Bin, BinStats, Binning, Order};
pub use classwise::{cwece, tcwece, tcwece_k, CwVariant};
pub use kernel::{dkde_ce, skce};
pub use toplabel::{
    accuracy, ace, dece, ece, kde_ece, ks_error, mmce, reliability_data, sweep_ece,
    ReliabilityData,
};

use crate::dataset::ProbMatrix;
use crate::error::{HcalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricId {
    EceEw,
    EceEm,
    EceEwR2,
    EceS,
    EceSR2,
    Dece,
    Ace,
    Ks,
    Mmce,
    KdeEce,
    CweceA,
    CweceS,
    CweceR2,
    Tcwece,
    TcweceK,
    DkdeCe,
    Skce,
    Nll,
    Accuracy,
}

impl MetricId {
    pub const ALL: [MetricId; 19] = [
        MetricId::EceEw,
        MetricId::EceEm,
        MetricId::EceEwR2,
        MetricId::EceS,
        MetricId::EceSR2,
        MetricId::Dece,
        MetricId::Ace,
        MetricId::Ks,
        MetricId::Mmce,
        MetricId::KdeEce,
        MetricId::CweceA,
        MetricId::CweceS,
        MetricId::CweceR2,
        MetricId::Tcwece,
        MetricId::TcweceK,
        MetricId::DkdeCe,
        MetricId::Skce,
        MetricId::Nll,
        MetricId::Accuracy,
    ];

    /// The metrics that stay cheap at tens of thousands of samples.
    pub const FAST: [MetricId; 13] = [
        MetricId::EceEw,
        MetricId::EceEm,
        MetricId::EceEwR2,
        MetricId::EceS,
        MetricId::EceSR2,
        MetricId::Dece,
        MetricId::Ace,
        MetricId::Ks,
        MetricId::CweceA,
        MetricId::CweceS,
        MetricId::Tcwece,
        MetricId::Nll,
        MetricId::Accuracy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricId::EceEw => "ece_ew",
            MetricId::EceEm => "ece_em",
            MetricId::EceEwR2 => "ece_ew_r2",
            MetricId::EceS => "ece_s",
            MetricId::EceSR2 => "ece_s_r2",
            MetricId::Dece => "dece",
            MetricId::Ace => "ace",
            MetricId::Ks => "ks",
            MetricId::Mmce => "mmce",
            MetricId::KdeEce => "kde_ece",
            MetricId::CweceA => "cwece_a",
            MetricId::CweceS => "cwece_s",
            MetricId::CweceR2 => "cwece_r2",
            MetricId::Tcwece => "tcwece",
            MetricId::TcweceK => "tcwece_k",
            MetricId::DkdeCe => "dkde_ce",
            MetricId::Skce => "skce",
            MetricId::Nll => "nll",
            MetricId::Accuracy => "accuracy",
        }
    }

    /// Higher is better only for accuracy.
    pub fn lower_is_better(self) -> bool {
        self != MetricId::Accuracy
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricId {
    type Err = HcalError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        MetricId::ALL
            .into_iter()
            .find(|m| m.name() == t)
            .ok_or_else(|| HcalError::config("metric", format!("unknown metric `{s}`")))
    }
}

/// Parse a comma-separated metric list; `all` and `fast` name the presets.
pub fn parse_metric_list(s: &str) -> Result<Vec<MetricId>> {
    match s.trim() {
        "all" => return Ok(MetricId::ALL.to_vec()),
        "fast" => return Ok(MetricId::FAST.to_vec()),
        _ => {}
    }
    let ids = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(MetricId::from_str)
        .collect::<Result<Vec<_>>>()?;
    if ids.is_empty() {
        return Err(HcalError::config("metrics", "empty metric list"));
    }
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSettings {
    pub bins: usize,
    pub mmce_bandwidth: f64,
    /// `None` uses the rule-of-thumb bandwidth.
    pub kde_bandwidth: Option<f64>,
    pub skce_bandwidth: f64,
    pub dkde_bandwidth: f64,
    pub dkde_order: i32,
    /// `None` uses `1/L`.
    pub tcwece_threshold: Option<f64>,
    pub tcwece_k: usize,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            bins: toplabel::DEFAULT_BINS,
            mmce_bandwidth: toplabel::MMCE_BANDWIDTH,
            kde_bandwidth: None,
            skce_bandwidth: kernel::SKCE_BANDWIDTH,
            dkde_bandwidth: kernel::DKDE_BANDWIDTH,
            dkde_order: kernel::DKDE_ORDER,
            tcwece_threshold: None,
            tcwece_k: classwise::TCWECE_K,
        }
    }
}

/// Evaluate one metric.
pub fn compute(id: MetricId, probs: &ProbMatrix, labels: &[usize], s: &MetricSettings) -> Result<f64> {
    let b = s.bins;
    let threshold = s
        .tcwece_threshold
        .unwrap_or_else(|| classwise::default_threshold(probs.n_classes()));
    match id {
        MetricId::EceEw => ece(probs, labels, Binning::EqualWidth, b, Order::R1),
        MetricId::EceEm => ece(probs, labels, Binning::EqualMass, b, Order::R1),
        MetricId::EceEwR2 => ece(probs, labels, Binning::EqualWidth, b, Order::R2),
        MetricId::EceS => sweep_ece(probs, labels, Order::R1),
        MetricId::EceSR2 => sweep_ece(probs, labels, Order::R2),
        MetricId::Dece => dece(probs, labels, b),
        MetricId::Ace => ace(probs, labels, b),
        MetricId::Ks => ks_error(probs, labels),
        MetricId::Mmce => mmce(probs, labels, s.mmce_bandwidth),
        MetricId::KdeEce => kde_ece(probs, labels, s.kde_bandwidth),
        MetricId::CweceA => cwece(probs, labels, CwVariant::A, b),
        MetricId::CweceS => cwece(probs, labels, CwVariant::S, b.saturating_sub(1).max(1)),
        MetricId::CweceR2 => cwece(probs, labels, CwVariant::R2, b),
        MetricId::Tcwece => tcwece(probs, labels, threshold, b),
        MetricId::TcweceK => tcwece_k(probs, labels, s.tcwece_k, threshold),
        MetricId::DkdeCe => dkde_ce(probs, labels, s.dkde_bandwidth, s.dkde_order),
        MetricId::Skce => skce(probs, labels, s.skce_bandwidth),
        MetricId::Nll => crate::loss::nll_loss(probs, labels).map(|o| o.value),
        MetricId::Accuracy => accuracy(probs, labels),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub dataset: String,
    pub calibrator: String,
    pub settings: MetricSettings,
    pub values: Vec<(MetricId, f64)>,
}

impl MetricReport {
    pub fn get(&self, id: MetricId) -> Option<f64> {
        self.values.iter().find(|(m, _)| *m == id).map(|&(_, v)| v)
    }

    /// One row per metric: `dataset,calibrator,metric,value,bins`.
    pub fn write_csv<W: Write>(&self, out: W, header: bool) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        let err = |e: csv::Error| HcalError::Shape(format!("writing metric table: {e}"));
        if header {
            w.write_record(["dataset", "calibrator", "metric", "value", "bins"])
                .map_err(err)?;
        }
        for (id, v) in &self.values {
            w.write_record([
                self.dataset.as_str(),
                self.calibrator.as_str(),
                id.name(),
                &v.to_string(),
                &self.settings.bins.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush()
            .map_err(|e| HcalError::Shape(format!("writing metric table: {e}")))
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} / {} ({} bins)", self.dataset, self.calibrator, self.settings.bins)?;
        let width = self.values.iter().map(|(m, _)| m.name().len()).max().unwrap_or(6);
        for (m, v) in &self.values {
            writeln!(f, "  {:<width$}  {v:>12.6}", m.name())?;
        }
        Ok(())
    }
}

/// Evaluate `ids` (concurrently, results in request order).
pub fn evaluate(
    probs: &ProbMatrix,
    labels: &[usize],
    ids: &[MetricId],
    settings: &MetricSettings,
    dataset: &str,
    calibrator: &str,
) -> Result<MetricReport> {
    let values = ids
        .par_iter()
        .map(|&id| compute(id, probs, labels, settings).map(|v| (id, v)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        dataset: dataset.to_string(),
        calibrator: calibrator.to_string(),
        settings: settings.clone(),
        values,
    })
}

/// Bin table as CSV: `lower,upper,count,confidence,accuracy`.
pub fn write_bins_csv<W: Write>(stats: &BinStats, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| HcalError::Shape(format!("writing bin table: {e}"));
    w.write_record(["lower", "upper", "count", "confidence", "accuracy"])
        .map_err(err)?;
    for b in &stats.bins {
        w.write_record([
            b.lower.to_string(),
            b.upper.to_string(),
            b.count.to_string(),
            b.confidence.to_string(),
            b.accuracy.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()
        .map_err(|e| HcalError::Shape(format!("writing bin table: {e}")))
}
