//! Training objectives over calibrated probabilities.
//!
//! The windowed calibration loss pools every atomic event `(sample, class)`
//! into one vector of predicted probabilities, sorts it, and slides a window
//! of `M` consecutive entries over it. Inside a window the summed
//! `(1 - p) * 1{Y = l}` and `p * 1{Y != l}` must agree up to `M * epsilon`,
//! which is the same as saying the window's event frequency matches its mean
//! predicted probability within `epsilon`. Violations are hinged, weighted
//! per window, summed and scaled by the multiplier `r`.
//!
//! The sort permutation and the window weights are treated as constants when
//! differentiating, so they live in a [`WindowPlan`] that can be reused to
//! evaluate the loss at nearby probabilities.

use ndarray::Array2;

use crate::dataset::ProbMatrix;
use crate::error::{HcalError, Result};
use crate::kmeans::{kmeans_1d, DEFAULT_MAX_ITER};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    /// `max(|V1 - V2| / M - epsilon, 0)` per window.
    Abs,
    /// `((V1 - V2) / M)^2` per window; epsilon is ignored.
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// `1 / (C * size of the window's k-means cluster)`.
    Adaptive,
    /// `1 / number of windows`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HCalConfig {
    pub epsilon: f64,
    pub window: usize,
    pub multiplier: f64,
    pub clusters: usize,
    pub norm: Norm,
    pub weighting: Weighting,
    /// Reuse the first computed window weights instead of re-clustering every step.
    pub freeze_weights: bool,
}

impl Default for HCalConfig {
    fn default() -> Self {
        HCalConfig {
            epsilon: 1e-20,
            window: 200,
            multiplier: 1e5,
            clusters: 15,
            norm: Norm::Abs,
            weighting: Weighting::Adaptive,
            freeze_weights: false,
        }
    }
}

impl HCalConfig {
    /// The configuration under which the loss reduces to `r` times the Brier score.
    pub fn brier_degenerate(multiplier: f64) -> Self {
        HCalConfig {
            epsilon: 0.0,
            window: 1,
            multiplier,
            clusters: 1,
            norm: Norm::Squared,
            weighting: Weighting::Uniform,
            freeze_weights: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(HcalError::config("epsilon", "must lie in [0, 1)"));
        }
        if self.window == 0 {
            return Err(HcalError::config("window", "must be at least 1"));
        }
        if !(self.multiplier > 0.0 && self.multiplier.is_finite()) {
            return Err(HcalError::config("multiplier", "must be positive"));
        }
        if self.clusters == 0 {
            return Err(HcalError::config("clusters", "must be at least 1"));
        }
        Ok(())
    }
}

/// Value, gradient with respect to every probability, and window diagnostics.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub prob_grad: Array2<f64>,
    pub active_windows: usize,
    /// Largest `|V1 - V2| / M - epsilon` over windows (NaN for non-window losses).
    pub max_violation: f64,
}

/// Atomic events sorted by predicted probability.
#[derive(Debug, Clone)]
pub struct WindowSet {
    pub sorted_values: Vec<f64>,
    /// Flat `(sample * L + class)` index of each sorted position.
    pub perm: Vec<usize>,
    /// `(1 - p) * 1{Y = l}` at each sorted position.
    pub a: Vec<f64>,
    /// `p * 1{Y != l}` at each sorted position.
    pub b: Vec<f64>,
}

fn check_labels(probs: &ProbMatrix, labels: &[usize]) -> Result<()> {
    if labels.len() != probs.n_samples() {
        return Err(HcalError::Shape(format!(
            "{} probability rows but {} labels",
            probs.n_samples(),
            labels.len()
        )));
    }
    if let Some(row) = labels.iter().position(|&y| y >= probs.n_classes()) {
        return Err(HcalError::LabelOutOfRange {
            row,
            label: labels[row] as u64,
            n_classes: probs.n_classes(),
        });
    }
    Ok(())
}

/// Sort all `N * L` event probabilities; ties keep `(sample, class)` order.
pub fn sort_events(probs: &ProbMatrix) -> Vec<usize> {
    let flat = probs.view();
    let flat = flat.as_slice().expect("row-major probabilities");
    let mut perm: Vec<usize> = (0..flat.len()).collect();
    perm.sort_unstable_by(|&i, &j| flat[i].total_cmp(&flat[j]).then(i.cmp(&j)));
    perm
}

fn gather(probs: &ProbMatrix, labels: &[usize], perm: &[usize]) -> WindowSet {
    let l = probs.n_classes();
    let view = probs.view();
    let flat = view.as_slice().expect("row-major probabilities");
    let n = perm.len();
    let (mut sorted_values, mut a, mut b) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for &k in perm {
        let p = flat[k];
        sorted_values.push(p);
        if labels[k / l] == k % l {
            a.push(1.0 - p);
            b.push(0.0);
        } else {
            a.push(0.0);
            b.push(p);
        }
    }
    WindowSet {
        sorted_values,
        perm: perm.to_vec(),
        a,
        b,
    }
}

/// Sort the atomic events and lay out the per-position summands.
pub fn build_windows(probs: &ProbMatrix, labels: &[usize], window: usize) -> Result<WindowSet> {
    check_labels(probs, labels)?;
    let available = probs.n_samples() * probs.n_classes();
    if window == 0 || window > available {
        return Err(HcalError::WindowTooLarge { window, available });
    }
    Ok(gather(probs, labels, &sort_events(probs)))
}

/// Sums of every length-`m` run of `values` (stride 1), `len - m + 1` entries.
///
/// Uses compensated prefix sums so each result carries only a few ulps of
/// its own magnitude, even deep into a long vector.
///
/// # Panics
/// If `m == 0` or `m > values.len()`.
pub fn window_sums(values: &[f64], m: usize) -> Vec<f64> {
    assert!(m >= 1 && m <= values.len(), "window {m} vs length {}", values.len());
    let n = values.len();
    let mut hi = Vec::with_capacity(n + 1);
    let mut lo = Vec::with_capacity(n + 1);
    hi.push(0.0f64);
    lo.push(0.0f64);
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for &v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
        hi.push(s);
        lo.push(c);
    }
    (0..=n - m)
        .map(|j| (hi[j + m] - hi[j]) + (lo[j + m] - lo[j]))
        .collect()
}

/// Window weights from clustering the window centroids (the mean of the
/// sorted probabilities each window covers).
///
/// Every window gets `1 / (C * N_R)` where `N_R` counts the windows in its
/// cluster, so the weights sum to `(nonempty clusters) / C`.
pub fn kmeans_weights(window_centroids: &[f64], clusters: usize) -> Vec<f64> {
    assert!(!window_centroids.is_empty(), "no windows to weight");
    let km = kmeans_1d(window_centroids, clusters, DEFAULT_MAX_ITER);
    let c = clusters as f64;
    km.assignments
        .iter()
        .map(|&a| 1.0 / (c * km.sizes[a] as f64))
        .collect()
}

/// Frozen pieces of the loss: sort order and per-window weights.
#[derive(Debug, Clone)]
pub struct WindowPlan {
    pub perm: Vec<usize>,
    pub weights: Vec<f64>,
}

impl WindowPlan {
    pub fn n_windows(&self) -> usize {
        self.weights.len()
    }
}

/// Sort the events of `probs` and compute window weights for `cfg`.
pub fn plan_windows(probs: &ProbMatrix, cfg: &HCalConfig) -> Result<WindowPlan> {
    cfg.validate()?;
    let available = probs.n_samples() * probs.n_classes();
    if cfg.window > available {
        return Err(HcalError::WindowTooLarge {
            window: cfg.window,
            available,
        });
    }
    let perm = sort_events(probs);
    let n_windows = available - cfg.window + 1;
    let weights = match cfg.weighting {
        Weighting::Uniform => vec![1.0 / n_windows as f64; n_windows],
        Weighting::Adaptive => {
            let view = probs.view();
            let flat = view.as_slice().expect("row-major probabilities");
            let sorted: Vec<f64> = perm.iter().map(|&k| flat[k]).collect();
            let m = cfg.window as f64;
            let centroids: Vec<f64> = window_sums(&sorted, cfg.window)
                .into_iter()
                .map(|s| s / m)
                .collect();
            kmeans_weights(&centroids, cfg.clusters)
        }
    };
    Ok(WindowPlan { perm, weights })
}

/// Evaluate the loss and its probability gradient under a fixed plan.
pub fn hcal_loss_with_plan(
    probs: &ProbMatrix,
    labels: &[usize],
    cfg: &HCalConfig,
    plan: &WindowPlan,
) -> Result<LossOutput> {
    check_labels(probs, labels)?;
    let (n, l) = (probs.n_samples(), probs.n_classes());
    let m = cfg.window;
    if plan.perm.len() != n * l || plan.n_windows() + m != n * l + 1 {
        return Err(HcalError::Shape(format!(
            "window plan for {} events / {} windows does not fit N*L = {} with M = {m}",
            plan.perm.len(),
            plan.n_windows(),
            n * l
        )));
    }
    let ws = gather(probs, labels, &plan.perm);
    let v1 = window_sums(&ws.a, m);
    let v2 = window_sums(&ws.b, m);
    let mf = m as f64;
    let r = cfg.multiplier;

    // per-window derivative of the loss with respect to (V1 - V2)
    let mut coef = vec![0.0; v1.len()];
    let mut value = 0.0;
    let mut active = 0;
    let mut max_violation = f64::NEG_INFINITY;
    for (j, ((&s1, &s2), &w)) in v1.iter().zip(&v2).zip(&plan.weights).enumerate() {
        let d = s1 - s2;
        match cfg.norm {
            Norm::Abs => {
                let violation = d.abs() / mf - cfg.epsilon;
                max_violation = max_violation.max(violation);
                if violation > 0.0 {
                    active += 1;
                    value += w * violation;
                    coef[j] = r * w * d.signum() / mf;
                }
            }
            Norm::Squared => {
                let u = d / mf;
                max_violation = max_violation.max(u.abs());
                if d != 0.0 {
                    active += 1;
                }
                value += w * u * u;
                coef[j] = r * w * 2.0 * u / mf;
            }
        }
    }
    value *= r;

    // a - b = 1{Y = l} - p, so d(V1 - V2)/dp = -1 for every covered position;
    // position k is covered by windows max(0, k-M+1) ..= min(k, W-1).
    let n_windows = coef.len();
    let mut cum = Vec::with_capacity(n_windows + 1);
    cum.push(0.0);
    let mut acc = 0.0;
    for &c in &coef {
        acc += c;
        cum.push(acc);
    }
    let mut grad = Array2::<f64>::zeros((n, l));
    let g = grad.as_slice_mut().expect("contiguous");
    for (k, &flat) in plan.perm.iter().enumerate() {
        let first = (k + 1).saturating_sub(m);
        let last = k.min(n_windows - 1);
        if first <= last {
            g[flat] = -(cum[last + 1] - cum[first]);
        }
    }

    Ok(LossOutput {
        value,
        prob_grad: grad,
        active_windows: active,
        max_violation,
    })
}

/// The windowed calibration loss with freshly computed sort order and weights.
pub fn hcal_loss(probs: &ProbMatrix, labels: &[usize], cfg: &HCalConfig) -> Result<LossOutput> {
    check_labels(probs, labels)?;
    let plan = plan_windows(probs, cfg)?;
    hcal_loss_with_plan(probs, labels, cfg, &plan)
}

/// Probabilities are clamped below at this value before taking logs.
pub const NLL_CLAMP: f64 = 1e-12;

/// Mean negative log-likelihood of the true class.
pub fn nll_loss(probs: &ProbMatrix, labels: &[usize]) -> Result<LossOutput> {
    check_labels(probs, labels)?;
    let (n, l) = (probs.n_samples(), probs.n_classes());
    let nf = n as f64;
    let mut grad = Array2::<f64>::zeros((n, l));
    let mut value = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let p = probs.row(i)[y];
        let pc = p.max(NLL_CLAMP);
        value -= pc.ln();
        // the clamp is flat below the floor
        grad[[i, y]] = if p > NLL_CLAMP { -1.0 / (nf * p) } else { 0.0 };
    }
    Ok(LossOutput {
        value: value / nf,
        prob_grad: grad,
        active_windows: 0,
        max_violation: f64::NAN,
    })
}

/// Brier score averaged over all `N * L` entries.
pub fn brier_loss(probs: &ProbMatrix, labels: &[usize]) -> Result<LossOutput> {
    check_labels(probs, labels)?;
    let (n, l) = (probs.n_samples(), probs.n_classes());
    let scale = 1.0 / (n * l) as f64;
    let mut grad = Array2::<f64>::zeros((n, l));
    let mut value = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        for (c, &p) in probs.row(i).iter().enumerate() {
            let d = p - if c == y { 1.0 } else { 0.0 };
            value += d * d;
            grad[[i, c]] = 2.0 * d * scale;
        }
    }
    Ok(LossOutput {
        value: value * scale,
        prob_grad: grad,
        active_windows: 0,
        max_violation: f64::NAN,
    })
}
