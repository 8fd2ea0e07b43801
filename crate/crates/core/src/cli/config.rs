//! Run configuration: built-in defaults, then a flat key-value file, then
//! command-line flags.

use std::path::Path;

use clap::{Args, ValueEnum};
use serde::Deserialize;

use crate::error::{HcalError, Result};
use crate::loss::{HCalConfig, Norm, Weighting};
use crate::maps::{
    standard_grid, Family, Hyper, ENSEMBLE_GRID, MONOTONIC_GRID, PIECEWISE_GRID,
};
use crate::metrics::{parse_metric_list, MetricId, MetricSettings};
use crate::optim::{default_selector, BatchSize, LossKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossChoice {
    Hcal,
    Nll,
    Brier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormChoice {
    Abs,
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingChoice {
    Adaptive,
    Uniform,
}

/// Every overridable setting. The same keys are accepted in the config file
/// (snake_case) and as flags (kebab-case).
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Flat key = value settings file; flags win over it.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tolerance inside the hinge.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Window length M.
    #[arg(long)]
    pub window: Option<usize>,
    /// Loss multiplier r.
    #[arg(long)]
    pub multiplier: Option<f64>,
    /// k-means clusters for window weights.
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long, value_enum)]
    pub norm: Option<NormChoice>,
    #[arg(long, value_enum)]
    pub weighting: Option<WeightingChoice>,
    #[arg(long)]
    pub freeze_weights: Option<bool>,
    #[arg(long, value_enum)]
    pub loss: Option<LossChoice>,
    /// ensemble_temp, piecewise_linear, monotonic_net or grid.
    #[arg(long)]
    pub family: Option<String>,
    /// Ensemble size.
    #[arg(long)]
    pub m: Option<usize>,
    /// Piecewise segment count.
    #[arg(long)]
    pub z: Option<usize>,
    /// Monotonic network width (groups = units).
    #[arg(long)]
    pub units: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub scheduler_patience: Option<usize>,
    #[arg(long)]
    pub scheduler_factor: Option<f64>,
    #[arg(long)]
    pub early_stop_patience: Option<usize>,
    /// `full` or a number of samples.
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub monitor: Option<String>,
    #[arg(long)]
    pub selector: Option<String>,
    /// Selector default: dece when true, cwece_a when false.
    #[arg(long)]
    pub top_label: Option<bool>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Comma-separated metric ids, or `all` / `fast`.
    #[arg(long)]
    pub metrics: Option<String>,
    #[arg(long)]
    pub tcwece_threshold: Option<f64>,
}

macro_rules! merge {
    ($dst:ident, $src:ident, $($field:ident),*) => {
        $( if $src.$field.is_some() { $dst.$field = $src.$field.clone(); } )*
    };
}

impl Overrides {
    /// Fields set in `other` replace ours.
    pub fn layer(&mut self, other: &Overrides) {
        merge!(self, other, seed, epsilon, window, multiplier, clusters, norm, weighting,
            freeze_weights, loss, family, m, z, units, max_epochs, lr, scheduler_patience,
            scheduler_factor, early_stop_patience, batch_size, monitor, selector, top_label,
            bins, metrics, tcwece_threshold);
    }

    pub fn from_file(path: &Path) -> Result<Overrides> {
        let text = std::fs::read_to_string(path).map_err(|e| HcalError::io(path, e))?;
        toml::from_str(&text).map_err(|e| HcalError::Config {
            key: path.display().to_string(),
            msg: e.message().to_string(),
        })
    }

    /// Defaults, then the file named by `--config` (if any), then `self`.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut merged = match &self.config {
            Some(p) => Overrides::from_file(p)?,
            None => Overrides::default(),
        };
        merged.layer(self);
        RunConfig::from_overrides(&merged)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FamilyChoice {
    Grid,
    Family(Family),
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub hcal: HCalConfig,
    pub loss: LossChoice,
    pub family: FamilyChoice,
    pub m: Option<usize>,
    pub z: Option<usize>,
    pub units: Option<usize>,
    pub train: TrainConfig,
    pub metrics: Vec<MetricId>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_overrides(&Overrides::default()).expect("defaults are valid")
    }
}

impl RunConfig {
    pub fn from_overrides(o: &Overrides) -> Result<RunConfig> {
        let mut hcal = HCalConfig::default();
        if let Some(v) = o.epsilon {
            hcal.epsilon = v;
        }
        if let Some(v) = o.window {
            hcal.window = v;
        }
        if let Some(v) = o.multiplier {
            hcal.multiplier = v;
        }
        if let Some(v) = o.clusters {
            hcal.clusters = v;
        }
        if let Some(v) = o.norm {
            hcal.norm = match v {
                NormChoice::Abs => Norm::Abs,
                NormChoice::Squared => Norm::Squared,
            };
        }
        if let Some(v) = o.weighting {
            hcal.weighting = match v {
                WeightingChoice::Adaptive => Weighting::Adaptive,
                WeightingChoice::Uniform => Weighting::Uniform,
            };
        }
        if let Some(v) = o.freeze_weights {
            hcal.freeze_weights = v;
        }
        hcal.validate()?;

        let loss = o.loss.unwrap_or(LossChoice::Hcal);
        let family = match o.family.as_deref() {
            None | Some("grid") => FamilyChoice::Grid,
            Some(f) => FamilyChoice::Family(f.parse()?),
        };

        let mut train = TrainConfig::default();
        if let Some(v) = o.seed {
            train.seed = v;
        }
        if let Some(v) = o.max_epochs {
            train.max_epochs = v;
        }
        if let Some(v) = o.lr {
            train.lr = v;
        }
        if let Some(v) = o.scheduler_patience {
            train.scheduler_patience = v;
        }
        if let Some(v) = o.scheduler_factor {
            train.scheduler_factor = v;
        }
        if let Some(v) = o.early_stop_patience {
            train.early_stop_patience = v;
        }
        if let Some(v) = &o.batch_size {
            train.batch_size = match v.trim() {
                "full" => BatchSize::Full,
                n => BatchSize::Size(n.parse().map_err(|_| {
                    HcalError::config("batch_size", format!("expected `full` or a count, got `{n}`"))
                })?),
            };
        }
        if let Some(v) = &o.monitor {
            train.monitor = v.parse()?;
        }
        let loss_kind_stub = match loss {
            LossChoice::Nll => LossKind::Nll,
            LossChoice::Brier => LossKind::Brier,
            LossChoice::Hcal => LossKind::Hcal(hcal.clone()),
        };
        train.selector = match &o.selector {
            Some(v) => v.parse()?,
            None => default_selector(&loss_kind_stub, o.top_label.unwrap_or(true)),
        };
        let mut settings = MetricSettings::default();
        if let Some(b) = o.bins {
            if b == 0 {
                return Err(HcalError::config("bins", "must be at least 1"));
            }
            settings.bins = b;
        }
        if let Some(t) = o.tcwece_threshold {
            settings.tcwece_threshold = Some(t);
        }
        train.metric_settings = settings;
        train.validate()?;

        let metrics = match &o.metrics {
            Some(list) => parse_metric_list(list)?,
            None => MetricId::ALL.to_vec(),
        };
        Ok(RunConfig {
            hcal,
            loss,
            family,
            m: o.m,
            z: o.z,
            units: o.units,
            train,
            metrics,
        })
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.loss {
            LossChoice::Hcal => LossKind::Hcal(self.hcal.clone()),
            LossChoice::Nll => LossKind::Nll,
            LossChoice::Brier => LossKind::Brier,
        }
    }

    /// Candidate maps: the full grid, one family's grid, or a single size.
    pub fn candidates(&self) -> Result<Vec<Hyper>> {
        let out = match self.family {
            FamilyChoice::Grid => standard_grid(),
            FamilyChoice::Family(Family::EnsembleTemp) => match self.m {
                Some(m) => vec![Hyper::Ensemble { m }],
                None => ENSEMBLE_GRID.iter().map(|&m| Hyper::Ensemble { m }).collect(),
            },
            FamilyChoice::Family(Family::PiecewiseLinear) => match self.z {
                Some(z) => vec![Hyper::Piecewise { z }],
                None => PIECEWISE_GRID.iter().map(|&z| Hyper::Piecewise { z }).collect(),
            },
            FamilyChoice::Family(Family::MonotonicNet) => match self.units {
                Some(n) => vec![Hyper::Monotonic { groups: n, units: n }],
                None => MONOTONIC_GRID
                    .iter()
                    .map(|&n| Hyper::Monotonic { groups: n, units: n })
                    .collect(),
            },
        };
        for h in &out {
            h.validate()?;
        }
        Ok(out)
    }
}
