//! Learnable monotone logit-to-probability maps.
//!
//! Every family transforms logits so that their order within a row is kept,
//! then produces a row-stochastic output; the predicted class never changes.
//! Parameters are unconstrained reals: positive quantities (temperatures,
//! slopes) are stored as logs and mixture weights as softmax logits.

mod ensemble;
mod io;
mod monotonic;
mod piecewise;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};

use crate::dataset::ProbMatrix;
use crate::error::{HcalError, Result};

pub use io::{load_map, save_map};

/// Lower end of the range covered by the piecewise-linear map.
pub const PIECEWISE_RANGE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    EnsembleTemp,
    PiecewiseLinear,
    MonotonicNet,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::EnsembleTemp => "ensemble_temp",
            Family::PiecewiseLinear => "piecewise_linear",
            Family::MonotonicNet => "monotonic_net",
        }
    }

    pub const ALL: [Family; 3] = [
        Family::EnsembleTemp,
        Family::PiecewiseLinear,
        Family::MonotonicNet,
    ];
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = HcalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ensemble_temp" | "ensemble" => Ok(Family::EnsembleTemp),
            "piecewise_linear" | "piecewise" => Ok(Family::PiecewiseLinear),
            "monotonic_net" | "monotonic" => Ok(Family::MonotonicNet),
            other => Err(HcalError::config("family", format!("unknown family `{other}`"))),
        }
    }
}

/// Family plus its size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hyper {
    /// `m` temperature-scaled softmaxes averaged with learned weights.
    Ensemble { m: usize },
    /// `z` equal segments over `[-100, 0]` of max-shifted logits.
    Piecewise { z: usize },
    /// Min over `groups` of max over `units` affine pieces.
    Monotonic { groups: usize, units: usize },
}

impl Hyper {
    pub fn family(&self) -> Family {
        match self {
            Hyper::Ensemble { .. } => Family::EnsembleTemp,
            Hyper::Piecewise { .. } => Family::PiecewiseLinear,
            Hyper::Monotonic { .. } => Family::MonotonicNet,
        }
    }

    pub fn n_params(&self) -> usize {
        match *self {
            Hyper::Ensemble { m } => 2 * m,
            Hyper::Piecewise { z } => z,
            Hyper::Monotonic { groups, units } => 2 * groups * units,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Hyper::Ensemble { m } => m > 0,
            Hyper::Piecewise { z } => z > 0,
            Hyper::Monotonic { groups, units } => groups > 0 && units > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(HcalError::InvalidHyper(format!("{self} has a zero size")))
        }
    }

    /// Whether the size is one of the standard search-grid values.
    pub fn on_grid(&self) -> bool {
        match *self {
            Hyper::Ensemble { m } => ENSEMBLE_GRID.contains(&m),
            Hyper::Piecewise { z } => PIECEWISE_GRID.contains(&z),
            Hyper::Monotonic { groups, units } => {
                groups == units && MONOTONIC_GRID.contains(&groups)
            }
        }
    }

    /// The two size fields as stored in model files.
    pub(crate) fn sizes(&self) -> (usize, usize) {
        match *self {
            Hyper::Ensemble { m } => (m, 0),
            Hyper::Piecewise { z } => (z, 0),
            Hyper::Monotonic { groups, units } => (groups, units),
        }
    }

    pub(crate) fn from_sizes(family: Family, a: usize, b: usize) -> Hyper {
        match family {
            Family::EnsembleTemp => Hyper::Ensemble { m: a },
            Family::PiecewiseLinear => Hyper::Piecewise { z: a },
            Family::MonotonicNet => Hyper::Monotonic {
                groups: a,
                units: b,
            },
        }
    }
}

impl fmt::Display for Hyper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Hyper::Ensemble { m } => write!(f, "ensemble_temp(m={m})"),
            Hyper::Piecewise { z } => write!(f, "piecewise_linear(z={z})"),
            Hyper::Monotonic { groups, units } => {
                write!(f, "monotonic_net(groups={groups},units={units})")
            }
        }
    }
}

pub const ENSEMBLE_GRID: [usize; 4] = [16, 32, 64, 128];
pub const PIECEWISE_GRID: [usize; 4] = [1, 10, 100, 500];
pub const MONOTONIC_GRID: [usize; 4] = [2, 10, 20, 50];

/// The twelve standard candidates, in declaration order.
pub fn standard_grid() -> Vec<Hyper> {
    let mut grid: Vec<Hyper> = ENSEMBLE_GRID.iter().map(|&m| Hyper::Ensemble { m }).collect();
    grid.extend(PIECEWISE_GRID.iter().map(|&z| Hyper::Piecewise { z }));
    grid.extend(
        MONOTONIC_GRID
            .iter()
            .map(|&n| Hyper::Monotonic { groups: n, units: n }),
    );
    grid
}

/// A monotone calibration map: family, sizes and a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationMap {
    hyper: Hyper,
    params: Vec<f64>,
    seed: u64,
}

/// Family-specific values kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub(crate) enum Cache {
    Ensemble(ensemble::Cache),
    Piecewise(piecewise::Cache),
    Monotonic(monotonic::Cache),
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    inputs: Array2<f64>,
    cache: Cache,
    output: ProbMatrix,
}

impl ForwardTrace {
    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn output(&self) -> &ProbMatrix {
        &self.output
    }

    pub fn into_output(self) -> ProbMatrix {
        self.output
    }
}

impl CalibrationMap {
    /// Near-identity initialisation; see each family for details.
    pub fn init(hyper: Hyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let params = match hyper {
            Hyper::Ensemble { m } => ensemble::init(m, seed),
            Hyper::Piecewise { z } => piecewise::init(z),
            Hyper::Monotonic { groups, units } => monotonic::init(groups, units, seed),
        };
        Ok(CalibrationMap {
            hyper,
            params,
            seed,
        })
    }

    pub fn from_params(hyper: Hyper, params: Vec<f64>, seed: u64) -> Result<Self> {
        hyper.validate()?;
        if params.len() != hyper.n_params() {
            return Err(HcalError::Shape(format!(
                "{hyper} takes {} parameters, got {}",
                hyper.n_params(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(HcalError::Diverged("map parameters".into()));
        }
        Ok(CalibrationMap {
            hyper,
            params,
            seed,
        })
    }

    pub fn hyper(&self) -> Hyper {
        self.hyper
    }

    pub fn family(&self) -> Family {
        self.hyper.family()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn set_params(&mut self, params: &[f64]) {
        self.params.copy_from_slice(params);
    }

    /// Apply the map to a logit matrix and keep what backward needs.
    pub fn forward(&self, logits: ArrayView2<'_, f64>) -> Result<ForwardTrace> {
        if logits.ncols() < 2 {
            return Err(HcalError::Shape("need at least 2 classes".into()));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(HcalError::Diverged("input logits".into()));
        }
        let inputs = logits.as_standard_layout().into_owned();
        let (cache, output) = match self.hyper {
            Hyper::Ensemble { m } => {
                let (c, out) = ensemble::forward(m, &self.params, &inputs);
                (Cache::Ensemble(c), out)
            }
            Hyper::Piecewise { z } => {
                let (c, out) = piecewise::forward(z, &self.params, &inputs);
                (Cache::Piecewise(c), out)
            }
            Hyper::Monotonic { groups, units } => {
                let (c, out) = monotonic::forward(groups, units, &self.params, &inputs);
                (Cache::Monotonic(c), out)
            }
        };
        if output.iter().any(|v| !v.is_finite()) {
            return Err(HcalError::Diverged(format!("{} output", self.hyper)));
        }
        Ok(ForwardTrace {
            inputs,
            cache,
            output: ProbMatrix::from_raw(output),
        })
    }

    /// Calibrated probabilities only.
    pub fn apply(&self, logits: ArrayView2<'_, f64>) -> Result<ProbMatrix> {
        self.forward(logits).map(ForwardTrace::into_output)
    }

    /// Gradients of `sum(upstream * output)` with respect to the parameters
    /// and to the input logits.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<(Vec<f64>, Array2<f64>)> {
        if upstream.dim() != trace.inputs.dim() {
            return Err(HcalError::Shape(format!(
                "upstream gradient {:?} vs trace {:?}",
                upstream.dim(),
                trace.inputs.dim()
            )));
        }
        let upstream = upstream.as_standard_layout();
        let out = trace.output.view();
        match (&self.hyper, &trace.cache) {
            (Hyper::Ensemble { m }, Cache::Ensemble(c)) => Ok(ensemble::backward(
                *m,
                &self.params,
                c,
                &trace.inputs,
                &upstream.view(),
            )),
            (Hyper::Piecewise { z }, Cache::Piecewise(c)) => Ok(piecewise::backward(
                *z,
                &self.params,
                c,
                &out,
                &upstream.view(),
            )),
            (Hyper::Monotonic { groups, units }, Cache::Monotonic(c)) => Ok(monotonic::backward(
                *groups,
                *units,
                &self.params,
                c,
                &out,
                &upstream.view(),
            )),
            _ => Err(HcalError::Shape(format!(
                "trace was not produced by a {} map",
                self.family()
            ))),
        }
    }

    /// The scalar logit transform for families that have one, applied to a
    /// max-shifted logit (`x <= 0`). `None` for the ensemble.
    pub fn scalar_transform(&self, x: f64) -> Option<f64> {
        match self.hyper {
            Hyper::Ensemble { .. } => None,
            Hyper::Piecewise { z } => Some(piecewise::transform(z, &self.params, x).0),
            Hyper::Monotonic { groups, units } => {
                Some(monotonic::transform(groups, units, &self.params, x).0)
            }
        }
    }

    /// Temperatures and mixture weights of an ensemble map.
    pub fn ensemble_components(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self.hyper {
            Hyper::Ensemble { m } => Some(ensemble::components(m, &self.params)),
            _ => None,
        }
    }
}

/// `out = S * (g - <g, S>)` per row: the softmax Jacobian applied to `g`.
pub(crate) fn softmax_vjp(s: &[f64], g: &[f64], out: &mut [f64]) {
    let dot: f64 = s.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((o, &si), &gi) in out.iter_mut().zip(s).zip(g) {
        *o = si * (gi - dot);
    }
}

/// Subtract each row's maximum; also return the (lowest) argmax per row.
pub(crate) fn shift_by_row_max(logits: &Array2<f64>) -> (Array2<f64>, Vec<usize>) {
    let mut shifted = logits.clone();
    let mut argmax = Vec::with_capacity(logits.nrows());
    for mut row in shifted.rows_mut() {
        let k = crate::dataset::argmax(row.as_slice().expect("row-major"));
        let max = row[k];
        row.mapv_inplace(|v| v - max);
        argmax.push(k);
    }
    (shifted, argmax)
}

/// Logit gradient through the per-row max shift, given `dL/d(shifted)`.
pub(crate) fn unshift_grad(mut grad: Array2<f64>, argmax: &[usize]) -> Array2<f64> {
    for (mut row, &k) in grad.rows_mut().into_iter().zip(argmax) {
        let total: f64 = row.sum();
        row[k] -= total;
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{argmax, softmax_rows};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_map(hyper: Hyper, rng: &mut ChaCha8Rng) -> CalibrationMap {
        let params = match hyper {
            Hyper::Ensemble { m } => (0..2 * m).map(|_| rng.random_range(-1.5..1.5)).collect(),
            Hyper::Piecewise { z } => (0..z).map(|_| rng.random_range(-2.0..2.0)).collect(),
            Hyper::Monotonic { groups, units } => {
                let n = groups * units;
                let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
                p.extend((0..n).map(|_| rng.random_range(-20.0..20.0)));
                p
            }
        };
        CalibrationMap::from_params(hyper, params, 0).unwrap()
    }

    fn small_hypers() -> Vec<Hyper> {
        vec![
            Hyper::Ensemble { m: 1 },
            Hyper::Ensemble { m: 4 },
            Hyper::Piecewise { z: 1 },
            Hyper::Piecewise { z: 7 },
            Hyper::Monotonic { groups: 2, units: 3 },
            Hyper::Monotonic { groups: 3, units: 2 },
        ]
    }

    #[test]
    fn param_counts() {
        let map = CalibrationMap::init(Hyper::Ensemble { m: 16 }, 0).unwrap();
        assert_eq!(map.params().len(), 32);
        assert_eq!(
            CalibrationMap::init(Hyper::Piecewise { z: 10 }, 0).unwrap().params().len(),
            10
        );
        assert_eq!(
            CalibrationMap::init(Hyper::Monotonic { groups: 2, units: 10 }, 0)
                .unwrap()
                .params()
                .len(),
            40
        );
    }

    #[test]
    fn zero_sizes_rejected() {
        for h in [
            Hyper::Ensemble { m: 0 },
            Hyper::Piecewise { z: 0 },
            Hyper::Monotonic { groups: 0, units: 3 },
            Hyper::Monotonic { groups: 2, units: 0 },
        ] {
            assert!(matches!(CalibrationMap::init(h, 0), Err(HcalError::InvalidHyper(_))));
        }
        assert!(CalibrationMap::from_params(Hyper::Piecewise { z: 2 }, vec![0.0], 0).is_err());
    }

    #[test]
    fn grid_has_twelve_on_grid_candidates() {
        let grid = standard_grid();
        assert_eq!(grid.len(), 12);
        assert!(grid.iter().all(Hyper::on_grid));
        assert!(!Hyper::Ensemble { m: 1 }.on_grid());
    }

    #[test]
    fn identity_parameters_reproduce_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = Array2::from_shape_fn((20, 5), |_| rng.random_range(-10.0..10.0));
        let plain = softmax_rows(logits.view());

        let ens = CalibrationMap::from_params(Hyper::Ensemble { m: 3 }, vec![0.0; 6], 0).unwrap();
        let pw = CalibrationMap::init(Hyper::Piecewise { z: 1 }, 0).unwrap();
        for map in [ens, pw] {
            let out = map.apply(logits.view()).unwrap();
            for (a, b) in out.view().iter().zip(plain.view().iter()) {
                assert!((a - b).abs() < 1e-13, "{}: {a} vs {b}", map.hyper());
            }
        }
    }

    #[test]
    fn equal_slopes_are_temperature_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits = Array2::from_shape_fn((30, 4), |_| rng.random_range(-30.0..30.0));
        let s: f64 = 0.37;
        let map = CalibrationMap::from_params(Hyper::Piecewise { z: 10 }, vec![s.ln(); 10], 0)
            .unwrap();
        let out = map.apply(logits.view()).unwrap();
        let expected = softmax_rows(logits.mapv(|v| s * v).view());
        for (a, b) in out.view().iter().zip(expected.view().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn init_is_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = Array2::from_shape_fn((50, 10), |_| rng.random_range(-8.0..8.0));
        let plain = softmax_rows(logits.view());
        for hyper in standard_grid() {
            let out = CalibrationMap::init(hyper, 0).unwrap().apply(logits.view()).unwrap();
            let worst = out
                .view()
                .iter()
                .zip(plain.view().iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst < 0.05, "{hyper}: {worst}");
        }
    }

    #[test]
    fn monotonic_net_init_is_monotone_on_probes() {
        let map = CalibrationMap::init(Hyper::Monotonic { groups: 2, units: 10 }, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let a = rng.random_range(-150.0..0.0);
            let b = rng.random_range(-150.0..0.0);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            assert!(map.scalar_transform(lo).unwrap() <= map.scalar_transform(hi).unwrap());
        }
    }

    #[test]
    fn scalar_transforms_are_monotone_under_random_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for hyper in small_hypers().into_iter().filter(|h| h.family() != Family::EnsembleTemp) {
            for _ in 0..50 {
                let map = random_map(hyper, &mut rng);
                for _ in 0..200 {
                    let a = rng.random_range(-200.0..0.0);
                    let b = rng.random_range(-200.0..0.0);
                    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                    assert!(map.scalar_transform(lo).unwrap() < map.scalar_transform(hi).unwrap());
                }
            }
        }
    }

    #[test]
    fn ensemble_keeps_probability_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let map = random_map(Hyper::Ensemble { m: 5 }, &mut rng);
            let logits = Array2::from_shape_fn((5, 6), |_| rng.random_range(-5.0..5.0));
            let p = map.apply(logits.view()).unwrap();
            for i in 0..5 {
                for a in 0..6 {
                    for b in 0..6 {
                        if logits[[i, a]] < logits[[i, b]] {
                            assert!(p.row(i)[a] <= p.row(i)[b]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn argmax_and_unit_measure_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for hyper in small_hypers() {
            for _ in 0..20 {
                let map = random_map(hyper, &mut rng);
                let logits = Array2::from_shape_fn((50, 6), |_| rng.random_range(-20.0..20.0));
                let p = map.apply(logits.view()).unwrap();
                for i in 0..50 {
                    let row = logits.row(i).to_vec();
                    let s: f64 = p.row(i).sum();
                    assert!((s - 1.0).abs() < 1e-9);
                    assert_eq!(argmax(&row), argmax(p.row(i).as_slice().unwrap()), "{hyper}");
                }
            }
        }
    }

    /// Central differences of `sum(w * forward(params))`.
    fn fd_param_grad(map: &CalibrationMap, logits: &Array2<f64>, w: &Array2<f64>, h: f64) -> Vec<f64> {
        let f = |params: &[f64]| {
            let m = CalibrationMap::from_params(map.hyper(), params.to_vec(), 0).unwrap();
            let p = m.apply(logits.view()).unwrap();
            (p.view().to_owned() * w).sum()
        };
        let mut params = map.params().to_vec();
        (0..params.len())
            .map(|k| {
                let orig = params[k];
                params[k] = orig + h;
                let up = f(&params);
                params[k] = orig - h;
                let down = f(&params);
                params[k] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for hyper in small_hypers() {
            let map = random_map(hyper, &mut rng);
            let logits = Array2::from_shape_fn((4, 3), |_| rng.random_range(-5.0..5.0));
            let trace = map.forward(logits.view()).unwrap();
            let (gp, gx) = map.backward(&trace, Array2::zeros((4, 3)).view()).unwrap();
            assert!(gp.iter().all(|&g| g == 0.0));
            assert!(gx.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn backward_rejects_bad_shapes() {
        let map = CalibrationMap::init(Hyper::Piecewise { z: 3 }, 0).unwrap();
        let trace = map.forward(Array2::zeros((2, 3)).view()).unwrap();
        assert!(map.backward(&trace, Array2::zeros((3, 3)).view()).is_err());
        let other = CalibrationMap::init(Hyper::Ensemble { m: 2 }, 0).unwrap();
        assert!(other.backward(&trace, Array2::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn single_temperature_logit_grad_is_softmax_jacobian() {
        let map = CalibrationMap::from_params(Hyper::Ensemble { m: 1 }, vec![0.0, 0.0], 0).unwrap();
        let logits = ndarray::array![[0.3, -1.2, 2.0]];
        let g = ndarray::array![[0.5, -0.25, 1.5]];
        let trace = map.forward(logits.view()).unwrap();
        let (_, gx) = map.backward(&trace, g.view()).unwrap();
        let s = softmax_rows(logits.view());
        let s = s.row(0);
        for j in 0..3 {
            let mut expected = 0.0;
            for i in 0..3 {
                let jac = s[i] * (if i == j { 1.0 } else { 0.0 } - s[j]);
                expected += g[[0, i]] * jac;
            }
            assert!((gx[[0, j]] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn logit_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for hyper in small_hypers() {
            for _ in 0..10 {
                let map = random_map(hyper, &mut rng);
                let logits = Array2::from_shape_fn((3, 4), |_| rng.random_range(-5.0..5.0));
                let w = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
                let trace = map.forward(logits.view()).unwrap();
                let (_, gx) = map.backward(&trace, w.view()).unwrap();
                let h = 1e-6;
                for idx in 0..12 {
                    let eval = |d: f64| {
                        let mut x = logits.clone();
                        x.as_slice_mut().unwrap()[idx] += d;
                        (map.apply(x.view()).unwrap().view().to_owned() * &w).sum()
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    let a = gx.as_slice().unwrap()[idx];
                    // kinks of the piecewise pieces can sit between the probes
                    if hyper.family() == Family::EnsembleTemp {
                        assert!((a - fd).abs() < 1e-6 * (1.0 + fd.abs()), "{hyper}: {a} vs {fd}");
                    } else if (a - fd).abs() > 1e-6 * (1.0 + fd.abs()) {
                        let far = (eval(10.0 * h) - eval(-10.0 * h)) / (20.0 * h);
                        assert!((far - fd).abs() > 1e-7, "{hyper}: {a} vs {fd}");
                    }
                }
            }
        }
    }

    #[test]
    fn param_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for hyper in small_hypers() {
            for _ in 0..20 {
                let map = random_map(hyper, &mut rng);
                let logits = Array2::from_shape_fn((5, 4), |_| rng.random_range(-6.0..6.0));
                let w = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
                let trace = map.forward(logits.view()).unwrap();
                let (gp, _) = map.backward(&trace, w.view()).unwrap();
                let fd = fd_param_grad(&map, &logits, &w, 1e-5);
                let num: f64 = gp.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let den: f64 = gp.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
                assert!(num / den < 1e-5, "{hyper}: rel err {}", num / den);
            }
        }
    }

    #[test]
    fn forward_rejects_non_finite() {
        let map = CalibrationMap::init(Hyper::Piecewise { z: 3 }, 0).unwrap();
        let bad = ndarray::array![[0.0, f64::NAN]];
        assert!(matches!(map.forward(bad.view()), Err(HcalError::Diverged(_))));
    }
}
