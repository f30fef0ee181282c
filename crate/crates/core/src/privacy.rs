//! Defenses applied to the active→passive gradient messages: i.i.d.
//! Gaussian perturbation and per-row top-k magnitude compression.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::numcore::Tensor;
use crate::Result;

/// Mechanism applied to every backward gradient message.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "snake_case", deny_unknown_fields)]
pub enum PrivacyConfig {
    #[default]
    None,
    GaussianNoise { variance: f64 },
    TopKCompression { ratio: f64 },
}

impl PrivacyConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PrivacyConfig::None => {}
            PrivacyConfig::GaussianNoise { variance } => {
                ensure!(variance >= 0.0 && variance.is_finite(), Contract, "noise variance must be ≥ 0, got {}", variance)
            }
            PrivacyConfig::TopKCompression { ratio } => {
                ensure!(ratio > 0.0 && ratio <= 1.0, Contract, "compression ratio must lie in (0, 1], got {}", ratio)
            }
        }
        Ok(())
    }

    /// Applies the mechanism to a `[rows × d]` gradient message.
    pub fn apply<R: Rng + ?Sized>(&self, grad: &Tensor, rng: &mut R) -> Result<Tensor> {
        match *self {
            PrivacyConfig::None => Ok(grad.clone()),
            PrivacyConfig::GaussianNoise { variance } => dp_perturb(grad, variance, rng),
            PrivacyConfig::TopKCompression { ratio } => {
                let mut out = grad.clone();
                let c = out.cols();
                for row in out.data_mut().chunks_mut(c.max(1)) {
                    let kept = compress_topk(row, ratio)?;
                    row.copy_from_slice(&kept);
                }
                Ok(out)
            }
        }
    }
}

/// Adds i.i.d. `N(0, variance)` noise to every entry.
pub fn dp_perturb<R: Rng + ?Sized>(grad: &Tensor, variance: f64, rng: &mut R) -> Result<Tensor> {
    ensure!(variance >= 0.0 && variance.is_finite(), Contract, "noise variance must be ≥ 0, got {}", variance);
    if variance == 0.0 {
        return Ok(grad.clone());
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite positive std");
    let mut out = grad.clone();
    for x in out.data_mut() {
        *x += normal.sample(rng);
    }
    Ok(out)
}

/// Keeps the `⌈ratio·d⌉` largest-magnitude entries of `row`, zeroing the
/// rest. Among equal magnitudes the lower index wins.
pub fn compress_topk(row: &[f64], ratio: f64) -> Result<Vec<f64>> {
    ensure!(ratio > 0.0 && ratio <= 1.0, Contract, "compression ratio must lie in (0, 1], got {}", ratio);
    let d = row.len();
    let keep = ((ratio * d as f64).ceil() as usize).min(d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| row[b].abs().total_cmp(&row[a].abs()).then(a.cmp(&b)));
    let mut out = vec![0.0; d];
    for &i in &order[..keep] {
        out[i] = row[i];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn topk_examples() {
        assert_eq!(compress_topk(&[3.0, -1.0, 0.5, 2.0], 0.5).unwrap(), vec![3.0, 0.0, 0.0, 2.0]);
        assert_eq!(compress_topk(&[1.0, -1.0], 0.5).unwrap(), vec![1.0, 0.0]);
        assert_eq!(compress_topk(&[1.0, -7.0, 2.0], 1.0).unwrap(), vec![1.0, -7.0, 2.0]);
        assert!(compress_topk(&[1.0], 0.0).is_err());
        assert!(compress_topk(&[1.0], -0.5).is_err());
    }

    #[test]
    fn zero_variance_is_identity() {
        let g = Tensor::matrix(1, 3, vec![1.0, -2.0, 3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(dp_perturb(&g, 0.0, &mut rng).unwrap(), g);
        assert!(dp_perturb(&g, -1.0, &mut rng).is_err());
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let g = Tensor::zeros(vec![4, 4]);
        let a = dp_perturb(&g, 1e-2, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = dp_perturb(&g, 1e-2, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_moments_match() {
        // sample variance over 10^6 entries within 2% of σ², mean within 4 standard errors of 0
        let variance = 1e-4;
        let n = 1_000_000;
        let g = Tensor::matrix(1000, 1000, (0..n).map(|i| (i % 7) as f64 * 0.1).collect()).unwrap();
        let out = dp_perturb(&g, variance, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let diff: Vec<f64> = out.data().iter().zip(g.data()).map(|(a, b)| a - b).collect();
        let mean = diff.iter().sum::<f64>() / n as f64;
        let var = diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - variance).abs() / variance < 0.02, "variance {var}");
        assert!(mean.abs() < 4.0 * (variance / n as f64).sqrt(), "mean {mean}");
    }

    proptest! {
        #[test]
        fn topk_idempotent_and_exact_count(
            row in prop::collection::vec(-10.0f64..10.0, 1..40),
            ratio in 0.01f64..=1.0,
        ) {
            let once = compress_topk(&row, ratio).unwrap();
            let twice = compress_topk(&once, ratio).unwrap();
            prop_assert_eq!(&once, &twice);
            let keep = ((ratio * row.len() as f64).ceil() as usize).min(row.len());
            let nonzero_in = row.iter().filter(|&&x| x != 0.0).count();
            if nonzero_in >= keep {
                prop_assert_eq!(once.iter().filter(|&&x| x != 0.0).count(), keep);
            }
        }
    }
}
