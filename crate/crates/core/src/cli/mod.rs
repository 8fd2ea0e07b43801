//! Command-line front end: `train`, `eval`, `diagram` and `compare`.

pub mod config;
pub mod svg;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use crate::dataset::{softmax_rows, Format, LogitDataset, ProbMatrix};
use crate::maps::{load_map, save_map, CalibrationMap, Hyper};
use crate::metrics::{evaluate, reliability_data, MetricId, MetricReport};
use crate::optim::{select_model, train_one, LossKind, TrainConfig, TrainHistory};
pub use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "hcal", version, about = "Post-hoc recalibration of classifier logits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a calibration map (selecting over the configured candidates).
    Train {
        /// Training logits (.csv or binary).
        train: PathBuf,
        /// Where to write the fitted map.
        model: PathBuf,
        /// Also write the per-epoch run log here.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Apply a map (or `uncal`) and report metrics.
    Eval {
        /// Model file, or `uncal` for the raw softmax.
        model: String,
        data: PathBuf,
        /// CSV destination; the table is printed either way.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Reliability diagram as SVG.
    Diagram {
        /// Model file, or `uncal` for the raw softmax.
        model: String,
        data: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train several calibrators and compare them on a test set.
    Compare {
        train: PathBuf,
        test: PathBuf,
        /// Comma-separated: hcal, nll_ts, brier_ts, uncal.
        #[arg(long, default_value = "hcal,nll_ts,brier_ts,uncal")]
        calibrators: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn load(path: &Path) -> anyhow::Result<LogitDataset> {
    LogitDataset::load(path, Format::from_path(path))
        .with_context(|| format!("loading {}", path.display()))
}

fn probabilities(model: &str, data: &LogitDataset) -> anyhow::Result<(ProbMatrix, String)> {
    if model == "uncal" {
        return Ok((softmax_rows(data.logits()), "uncal".to_string()));
    }
    let map = load_map(model).with_context(|| format!("loading model {model}"))?;
    let probs = map
        .apply(data.logits())
        .with_context(|| format!("applying {} to {}", map.hyper(), data.name()))?;
    Ok((probs, map.hyper().to_string()))
}

fn history_csv(history: &TrainHistory, path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["epoch", "loss", history.monitor.name(), "lr"])?;
    for r in &history.records {
        w.write_record([
            r.epoch.to_string(),
            r.loss.to_string(),
            r.metric.to_string(),
            r.lr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn history_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".history.csv");
    PathBuf::from(s)
}

pub fn cmd_train(train: &Path, model: &Path, log: Option<&Path>, cfg: &RunConfig) -> anyhow::Result<()> {
    let data = load(train)?;
    let candidates = cfg.candidates()?;
    let loss = cfg.loss_kind();
    let sel = select_model(&data, &candidates, &loss, &cfg.train)?;
    let mut out = io::stdout().lock();
    for (i, c) in sel.candidates.iter().enumerate() {
        let mark = if i == sel.best_index { "*" } else { " " };
        match (&c.selector_value, &c.history) {
            (Some(v), Some(h)) => writeln!(out, "{mark} {:<36} {}={v:.6}  {h}", c.hyper.to_string(), sel.selector)?,
            _ => writeln!(out, "{mark} {:<36} failed: {}", c.hyper.to_string(), c.error.as_deref().unwrap_or("?"))?,
        }
    }
    save_map(&sel.best, model)?;
    let history = sel.candidates[sel.best_index]
        .history
        .as_ref()
        .expect("winner has a history");
    history_csv(history, &history_path(model))?;
    if let Some(p) = log {
        let f = File::create(p).with_context(|| format!("writing {}", p.display()))?;
        history.write_log(BufWriter::new(f))?;
    }
    writeln!(out, "saved {} to {}", sel.best.hyper(), model.display())?;
    Ok(())
}

fn write_report(report: &MetricReport, out: Option<&Path>) -> anyhow::Result<()> {
    print!("{report}");
    if let Some(p) = out {
        let f = File::create(p).with_context(|| format!("writing {}", p.display()))?;
        report.write_csv(BufWriter::new(f), true)?;
    }
    Ok(())
}

pub fn cmd_eval(model: &str, data: &Path, out: Option<&Path>, cfg: &RunConfig) -> anyhow::Result<MetricReport> {
    let ds = load(data)?;
    let (probs, name) = probabilities(model, &ds)?;
    let report = evaluate(&probs, ds.labels(), &cfg.metrics, &cfg.train.metric_settings, ds.name(), &name)?;
    write_report(&report, out)?;
    Ok(report)
}

pub fn cmd_diagram(model: &str, data: &Path, out: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    let ds = load(data)?;
    let (probs, name) = probabilities(model, &ds)?;
    let rel = reliability_data(&probs, ds.labels(), cfg.train.metric_settings.bins)?;
    let doc = svg::reliability_svg(&rel, &format!("{} / {name}", ds.name()));
    std::fs::write(out, doc).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

/// Calibrators known to `compare`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Calibrator {
    Hcal,
    NllTs,
    BrierTs,
    Uncal,
}

impl Calibrator {
    pub fn parse_list(s: &str) -> anyhow::Result<Vec<Calibrator>> {
        let list = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| match t {
                "hcal" => Ok(Calibrator::Hcal),
                "nll_ts" => Ok(Calibrator::NllTs),
                "brier_ts" => Ok(Calibrator::BrierTs),
                "uncal" => Ok(Calibrator::Uncal),
                other => bail!("unknown calibrator `{other}` (expected hcal, nll_ts, brier_ts, uncal)"),
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        if list.is_empty() {
            bail!("no calibrators given");
        }
        Ok(list)
    }

    pub fn name(self) -> &'static str {
        match self {
            Calibrator::Hcal => "hcal",
            Calibrator::NllTs => "nll_ts",
            Calibrator::BrierTs => "brier_ts",
            Calibrator::Uncal => "uncal",
        }
    }
}

/// Fit one calibrator on `train`; `None` means the raw softmax. The NLL
/// baseline monitors NLL, the others the configured metric.
pub fn fit_calibrator(c: Calibrator, train: &LogitDataset, cfg: &RunConfig) -> anyhow::Result<Option<CalibrationMap>> {
    let temperature = |loss: LossKind, monitor: MetricId| -> anyhow::Result<Option<CalibrationMap>> {
        let tc = TrainConfig {
            monitor,
            ..cfg.train.clone()
        };
        let map = CalibrationMap::init(Hyper::Ensemble { m: 1 }, tc.seed)?;
        Ok(Some(train_one(map, train, &loss, &tc)?.0))
    };
    match c {
        Calibrator::Uncal => Ok(None),
        Calibrator::NllTs => temperature(LossKind::Nll, MetricId::Nll),
        Calibrator::BrierTs => temperature(LossKind::Brier, cfg.train.monitor),
        Calibrator::Hcal => {
            let sel = select_model(train, &cfg.candidates()?, &LossKind::Hcal(cfg.hcal.clone()), &cfg.train)?;
            Ok(Some(sel.best))
        }
    }
}

/// Rows `dataset,calibrator,metric,value,relative_to_uncal`.
pub fn write_comparison<W: Write>(reports: &[MetricReport], baseline: &MetricReport, out: W) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dataset", "calibrator", "metric", "value", "relative_to_uncal"])?;
    for r in reports {
        for &(id, v) in &r.values {
            let base = baseline.get(id).unwrap_or(f64::NAN);
            w.write_record([
                r.dataset.clone(),
                r.calibrator.clone(),
                id.name().to_string(),
                v.to_string(),
                (v / base).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_compare(
    train: &Path,
    test: &Path,
    calibrators: &[Calibrator],
    out: Option<&Path>,
    cfg: &RunConfig,
) -> anyhow::Result<Vec<MetricReport>> {
    let tr = load(train)?;
    let te = load(test)?;
    if tr.n_classes() != te.n_classes() {
        bail!("{} has {} classes but {} has {}", train.display(), tr.n_classes(), test.display(), te.n_classes());
    }
    let settings = &cfg.train.metric_settings;
    let raw = softmax_rows(te.logits());
    let baseline = evaluate(&raw, te.labels(), &cfg.metrics, settings, te.name(), "uncal")?;
    let mut reports = Vec::with_capacity(calibrators.len());
    for &c in calibrators {
        let report = match fit_calibrator(c, &tr, cfg).with_context(|| format!("fitting {}", c.name()))? {
            None => baseline.clone(),
            Some(map) => {
                let probs = map.apply(te.logits())?;
                evaluate(&probs, te.labels(), &cfg.metrics, settings, te.name(), c.name())?
            }
        };
        print!("{report}");
        reports.push(report);
    }
    match out {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("writing {}", p.display()))?;
            write_comparison(&reports, &baseline, BufWriter::new(f))?;
        }
        None => write_comparison(&reports, &baseline, io::stdout().lock())?,
    }
    Ok(reports)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { train, model, log, overrides } => {
            cmd_train(&train, &model, log.as_deref(), &overrides.resolve()?)
        }
        Command::Eval { model, data, out, overrides } => {
            cmd_eval(&model, &data, out.as_deref(), &overrides.resolve()?).map(|_| ())
        }
        Command::Diagram { model, data, out, overrides } => {
            cmd_diagram(&model, &data, &out, &overrides.resolve()?)
        }
        Command::Compare { train, test, calibrators, out, overrides } => {
            let list = Calibrator::parse_list(&calibrators)?;
            cmd_compare(&train, &test, &list, out.as_deref(), &overrides.resolve()?).map(|_| ())
        }
    }
}
