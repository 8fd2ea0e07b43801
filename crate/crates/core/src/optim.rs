//! Adam training of calibration maps, with a plateau learning-rate schedule,
//! early stopping on a training-set metric, and selection over candidates.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::time::{Duration, Instant};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{LogitDataset, ProbMatrix};
use crate::error::{HcalError, Result};
use crate::loss::{self, HCalConfig, LossOutput, WindowPlan};
use crate::maps::{CalibrationMap, Hyper};
use crate::metrics::{self, MetricId, MetricSettings};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// A monitored value must fall by at least this much to count as progress.
pub const MIN_DELTA: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(HcalError::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    Hcal(HCalConfig),
    Nll,
    Brier,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Hcal(_) => "hcal",
            LossKind::Nll => "nll",
            LossKind::Brier => "brier",
        }
    }

    fn min_events(&self) -> usize {
        match self {
            LossKind::Hcal(c) => c.window,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSize {
    Full,
    Size(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub lr: f64,
    pub scheduler_patience: usize,
    pub scheduler_factor: f64,
    pub early_stop_patience: usize,
    pub batch_size: BatchSize,
    pub monitor: MetricId,
    pub selector: MetricId,
    pub metric_settings: MetricSettings,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 2000,
            lr: 0.005,
            scheduler_patience: 20,
            scheduler_factor: 0.5,
            early_stop_patience: 160,
            batch_size: BatchSize::Full,
            monitor: MetricId::EceEw,
            selector: MetricId::Dece,
            metric_settings: MetricSettings::default(),
            seed: 0,
        }
    }
}

/// Selector used when none is given: NLL for NLL-trained maps, dECE for
/// top-label evaluation, classwise ECE otherwise.
pub fn default_selector(loss: &LossKind, top_label: bool) -> MetricId {
    match (loss, top_label) {
        (LossKind::Nll, _) => MetricId::Nll,
        (_, true) => MetricId::Dece,
        (_, false) => MetricId::CweceA,
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(HcalError::config("lr", "must be positive"));
        }
        if !(self.scheduler_factor > 0.0 && self.scheduler_factor < 1.0) {
            return Err(HcalError::config("scheduler_factor", "must lie in (0, 1)"));
        }
        if self.scheduler_patience == 0 {
            return Err(HcalError::config("scheduler_patience", "must be at least 1"));
        }
        if self.early_stop_patience == 0 {
            return Err(HcalError::config("early_stop_patience", "must be at least 1"));
        }
        if self.batch_size == BatchSize::Size(0) {
            return Err(HcalError::config("batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches, before the update.
    pub loss: f64,
    /// Monitored metric on the training set after the epoch.
    pub metric: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub monitor: MetricId,
    pub records: Vec<EpochRecord>,
    /// Epoch of the returned snapshot; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub wall_time: Duration,
}

impl TrainHistory {
    pub fn best_metric(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.records[e - 1].metric)
    }

    pub fn write_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            writeln!(
                out,
                "epoch={} loss={} {}={} lr={}",
                r.epoch, r.loss, self.monitor, r.metric, r.lr
            )?;
        }
        Ok(())
    }
}

impl fmt::Display for TrainHistory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.best_epoch {
            Some(e) => write!(
                f,
                "{} epochs, best {} = {:.6} at epoch {e} ({:.2?})",
                self.records.len(),
                self.monitor,
                self.records[e - 1].metric,
                self.wall_time
            ),
            None => write!(f, "no epochs run"),
        }
    }
}

/// Caches k-means window weights by window count when they are frozen.
struct LossEvaluator<'a> {
    kind: &'a LossKind,
    frozen: HashMap<usize, Vec<f64>>,
}

impl<'a> LossEvaluator<'a> {
    fn new(kind: &'a LossKind) -> Self {
        LossEvaluator {
            kind,
            frozen: HashMap::new(),
        }
    }

    fn eval(&mut self, probs: &ProbMatrix, labels: &[usize]) -> Result<LossOutput> {
        match self.kind {
            LossKind::Nll => loss::nll_loss(probs, labels),
            LossKind::Brier => loss::brier_loss(probs, labels),
            LossKind::Hcal(cfg) => {
                let plan = if cfg.freeze_weights {
                    let n_windows = probs.n_samples() * probs.n_classes() + 1 - cfg.window;
                    match self.frozen.get(&n_windows) {
                        Some(w) => WindowPlan {
                            perm: loss::sort_events(probs),
                            weights: w.clone(),
                        },
                        None => {
                            let plan = loss::plan_windows(probs, cfg)?;
                            self.frozen.insert(n_windows, plan.weights.clone());
                            plan
                        }
                    }
                } else {
                    loss::plan_windows(probs, cfg)?
                };
                loss::hcal_loss_with_plan(probs, labels, cfg, &plan)
            }
        }
    }
}

/// Gradient of the loss with respect to the map parameters at `logits`.
fn loss_and_grad(
    map: &CalibrationMap,
    evaluator: &mut LossEvaluator<'_>,
    logits: &Array2<f64>,
    labels: &[usize],
    trace: Option<crate::maps::ForwardTrace>,
) -> Result<(f64, Vec<f64>)> {
    let trace = match trace {
        Some(t) => t,
        None => map.forward(logits.view())?,
    };
    let out = evaluator.eval(trace.output(), labels)?;
    if !out.value.is_finite() {
        return Err(HcalError::Diverged(format!("{} loss", evaluator.kind.name())));
    }
    let (grad, _) = map.backward(&trace, out.prob_grad.view())?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(HcalError::Diverged(format!("{} gradient", evaluator.kind.name())));
    }
    Ok((out.value, grad))
}

/// Split a shuffled index list into batches; a tail shorter than `min_len`
/// joins the previous batch.
fn batches(mut order: Vec<usize>, size: usize, min_len: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    while !order.is_empty() {
        let rest = order.split_off(size.min(order.len()));
        out.push(order);
        order = rest;
    }
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < min_len) {
        let tail = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").extend(tail);
    }
    out
}

/// Train `map` on `train`; returns the snapshot with the lowest monitored
/// training metric.
pub fn train_one(
    map: CalibrationMap,
    train: &LogitDataset,
    loss_kind: &LossKind,
    cfg: &TrainConfig,
) -> Result<(CalibrationMap, TrainHistory)> {
    cfg.validate()?;
    if let LossKind::Hcal(c) = loss_kind {
        c.validate()?;
    }
    let started = Instant::now();
    let logits = train.logits().to_owned();
    let labels = train.labels();
    let available = train.n_samples() * train.n_classes();
    if available < loss_kind.min_events() {
        return Err(HcalError::WindowTooLarge {
            window: loss_kind.min_events(),
            available,
        });
    }
    let mut history = TrainHistory {
        monitor: cfg.monitor,
        records: Vec::new(),
        best_epoch: None,
        wall_time: Duration::ZERO,
    };
    if cfg.max_epochs == 0 {
        history.wall_time = started.elapsed();
        return Ok((map, history));
    }

    let mut evaluator = LossEvaluator::new(loss_kind);
    let mut map = map;
    let mut params = map.params().to_vec();
    let mut state = AdamState::new(params.len());
    let mut lr = cfg.lr;
    let mut best = (f64::INFINITY, map.clone());
    let mut reference = f64::INFINITY;
    let (mut sched_wait, mut stop_wait) = (0usize, 0usize);
    let mut trace = None;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sign = if cfg.monitor.lower_is_better() { 1.0 } else { -1.0 };

    for epoch in 1..=cfg.max_epochs {
        let loss_value = match cfg.batch_size {
            BatchSize::Size(b) if b < train.n_samples() => {
                let mut order: Vec<usize> = (0..train.n_samples()).collect();
                order.shuffle(&mut rng);
                let min_rows = loss_kind.min_events().div_ceil(train.n_classes());
                let mut total = 0.0;
                let parts = batches(order, b, min_rows);
                for idx in &parts {
                    let sub = logits.select(Axis(0), idx);
                    let sub_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                    let (v, g) = loss_and_grad(&map, &mut evaluator, &sub, &sub_labels, None)?;
                    adam_step(&mut params, &g, &mut state, lr)?;
                    map.set_params(&params);
                    total += v;
                }
                total / parts.len() as f64
            }
            _ => {
                let (v, g) = loss_and_grad(&map, &mut evaluator, &logits, labels, trace.take())?;
                adam_step(&mut params, &g, &mut state, lr)?;
                map.set_params(&params);
                v
            }
        };

        let t = map.forward(logits.view())?;
        let metric = metrics::compute(cfg.monitor, t.output(), labels, &cfg.metric_settings)?;
        trace = Some(t);
        history.records.push(EpochRecord {
            epoch,
            loss: loss_value,
            metric,
            lr,
        });

        let score = sign * metric;
        if score < best.0 {
            best = (score, map.clone());
            history.best_epoch = Some(epoch);
        }
        if score < reference - MIN_DELTA {
            reference = score;
            sched_wait = 0;
            stop_wait = 0;
        } else {
            sched_wait += 1;
            stop_wait += 1;
            if stop_wait >= cfg.early_stop_patience {
                break;
            }
            if sched_wait >= cfg.scheduler_patience {
                lr *= cfg.scheduler_factor;
                sched_wait = 0;
            }
        }
    }
    history.wall_time = started.elapsed();
    Ok((best.1, history))
}

#[derive(Debug, Clone)]
pub struct CandidateReport {
    pub hyper: Hyper,
    /// Selector value on the training set; `None` if training failed.
    pub selector_value: Option<f64>,
    pub history: Option<TrainHistory>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub best: CalibrationMap,
    pub best_index: usize,
    pub selector: MetricId,
    pub candidates: Vec<CandidateReport>,
}

/// Train every candidate (concurrently) and keep the one with the best
/// selector value on the training set; ties go to the earlier candidate.
pub fn select_model(
    train: &LogitDataset,
    candidates: &[Hyper],
    loss_kind: &LossKind,
    cfg: &TrainConfig,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(HcalError::config("families", "no candidate maps"));
    }
    cfg.validate()?;
    let outcomes: Vec<Result<(CalibrationMap, TrainHistory, f64)>> = candidates
        .par_iter()
        .map(|&hyper| {
            let map = CalibrationMap::init(hyper, cfg.seed)?;
            let (trained, history) = train_one(map, train, loss_kind, cfg)?;
            let probs = trained.apply(train.logits())?;
            let v = metrics::compute(cfg.selector, &probs, train.labels(), &cfg.metric_settings)?;
            Ok((trained, history, v))
        })
        .collect();

    let sign = if cfg.selector.lower_is_better() { 1.0 } else { -1.0 };
    let mut best: Option<(usize, f64, CalibrationMap)> = None;
    let mut reports = Vec::with_capacity(candidates.len());
    for (i, (outcome, &hyper)) in outcomes.into_iter().zip(candidates).enumerate() {
        match outcome {
            Ok((map, history, v)) => {
                if best.as_ref().is_none_or(|(_, b, _)| sign * v < *b) && v.is_finite() {
                    best = Some((i, sign * v, map));
                }
                reports.push(CandidateReport {
                    hyper,
                    selector_value: Some(v),
                    history: Some(history),
                    error: None,
                });
            }
            Err(e) => reports.push(CandidateReport {
                hyper,
                selector_value: None,
                history: None,
                error: Some(e.to_string()),
            }),
        }
    }
    match best {
        Some((best_index, _, best)) => Ok(Selection {
            best,
            best_index,
            selector: cfg.selector,
            candidates: reports,
        }),
        None => Err(HcalError::Diverged(format!(
            "all {} candidates: {}",
            reports.len(),
            reports
                .iter()
                .filter_map(|r| r.error.as_deref())
                .collect::<Vec<_>>()
                .join("; ")
        ))),
    }
}
