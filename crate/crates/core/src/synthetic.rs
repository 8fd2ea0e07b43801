//! Synthetic logit datasets with known ground-truth probabilities.
//!
//! True logits are i.i.d. normal, labels are drawn from their softmax, and
//! the published logits are the true ones divided by a temperature (below 1
//! means overconfident).

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{softmax_rows, LogitDataset, ProbMatrix};
use crate::error::{HcalError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_classes: usize,
    /// Standard deviation of the true logits.
    pub logit_scale: f64,
    /// Published logits are `true / temperature`.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_samples: 5000,
            n_classes: 10,
            logit_scale: 2.0,
            temperature: 0.4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub data: LogitDataset,
    pub true_probs: ProbMatrix,
}

/// Draw an index from a probability row.
fn sample_class(row: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    row.len() - 1
}

pub fn generate(spec: &SyntheticSpec) -> Result<Synthetic> {
    if spec.n_samples == 0 || spec.n_classes < 2 {
        return Err(HcalError::Empty(
            "synthetic data needs samples and at least 2 classes".into(),
        ));
    }
    if spec.temperature.is_nan() || spec.temperature <= 0.0 || spec.logit_scale.is_nan() || spec.logit_scale <= 0.0 {
        return Err(HcalError::config("temperature", "temperature and scale must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.logit_scale).expect("positive scale");
    let z = Array2::from_shape_simple_fn((spec.n_samples, spec.n_classes), || normal.sample(&mut rng));
    let true_probs = softmax_rows(z.view());
    let labels: Vec<usize> = true_probs
        .view()
        .rows()
        .into_iter()
        .map(|r| sample_class(r.as_slice().expect("row-major"), &mut rng))
        .collect();
    let distorted = z.mapv(|v| v / spec.temperature);
    let name = format!("synthetic-T{}-s{}", spec.temperature, spec.seed);
    Ok(Synthetic {
        data: LogitDataset::new(distorted, labels, name)?,
        true_probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let spec = SyntheticSpec {
            n_samples: 50,
            ..SyntheticSpec::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.data.logits(), b.data.logits());
        assert_eq!(a.data.labels(), b.data.labels());
        assert_eq!(a.data.n_classes(), 10);
        // undoing the temperature recovers the truth
        let back = softmax_rows(a.data.logits().mapv(|v| v * 0.4).view());
        for (x, y) in back.view().iter().zip(a.true_probs.view().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
