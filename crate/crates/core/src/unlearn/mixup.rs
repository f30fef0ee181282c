use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::numcore::Tensor;
use crate::{Error, Result};

/// `λ·a + (1 − λ)·b`, elementwise.
pub fn mix(a: &[f64], b: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    ensure!(a.len() == b.len(), Shape, "mixing rows of length {} and {}", a.len(), b.len());
    Ok(a.iter().zip(b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect())
}

fn check_lambda(lambda: f64) -> Result<()> {
    ensure!(
        (0.0..=1.0).contains(&lambda),
        Contract,
        "mixing coefficient {} outside [0, 1]",
        lambda
    );
    Ok(())
}

/// How `λ` is drawn for each pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaSampler {
    /// `λ ~ U(0, 1)` per pair per epoch.
    Uniform01,
    Fixed { value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairScope {
    /// All `n_p²` ordered pairs, self-pairs included.
    WithinProbeAllPairs,
    /// `pairs_per_epoch` pairs drawn uniformly with replacement.
    SampledPairs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    pub lambda: LambdaSampler,
    pub pair_scope: PairScope,
    /// Used only by [`PairScope::SampledPairs`].
    pub pairs_per_epoch: usize,
    /// Only pair probe rows that share a label.
    pub same_class_only: bool,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            lambda: LambdaSampler::Uniform01,
            pair_scope: PairScope::WithinProbeAllPairs,
            pairs_per_epoch: 1600,
            same_class_only: false,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if let LambdaSampler::Fixed { value } = self.lambda {
            check_lambda(value)?;
        }
        if self.pair_scope == PairScope::SampledPairs {
            ensure!(self.pairs_per_epoch >= 1, Contract, "pairs_per_epoch must be at least 1");
        }
        Ok(())
    }

    /// Draws one epoch's pairs and coefficients over probe rows with the
    /// given labels. Pair order is shuffled.
    pub fn plan<R: Rng + ?Sized>(&self, labels: &[usize], rng: &mut R) -> Result<MixPlan> {
        self.validate()?;
        let n = labels.len();
        ensure!(n >= 1, Contract, "empty probe set");
        let mut pairs = Vec::new();
        match self.pair_scope {
            PairScope::WithinProbeAllPairs => {
                for i in 0..n {
                    for j in 0..n {
                        if !self.same_class_only || labels[i] == labels[j] {
                            pairs.push((i, j));
                        }
                    }
                }
            }
            PairScope::SampledPairs => {
                for _ in 0..self.pairs_per_epoch {
                    let i = rng.gen_range(0..n);
                    let j = if self.same_class_only {
                        let same: Vec<usize> = (0..n).filter(|&j| labels[j] == labels[i]).collect();
                        same[rng.gen_range(0..same.len())]
                    } else {
                        rng.gen_range(0..n)
                    };
                    pairs.push((i, j));
                }
            }
        }
        let lambdas = pairs
            .iter()
            .map(|_| match self.lambda {
                LambdaSampler::Uniform01 => rng.gen::<f64>(),
                LambdaSampler::Fixed { value } => value,
            })
            .collect::<Vec<_>>();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(rng);
        MixPlan::new(
            order.iter().map(|&o| pairs[o]).collect(),
            order.iter().map(|&o| lambdas[o]).collect(),
        )
    }
}

/// A fixed linear map from `n` source rows to `m` mixed rows: mixed row `r`
/// is `λ_r·src[i_r] + (1 − λ_r)·src[j_r]`. Shared by every party and the
/// soft labels of a round, so all of them see the same `λ` per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    pairs: Vec<(usize, usize)>,
    lambdas: Vec<f64>,
}

impl MixPlan {
    pub fn new(pairs: Vec<(usize, usize)>, lambdas: Vec<f64>) -> Result<Self> {
        ensure!(
            pairs.len() == lambdas.len(),
            Shape,
            "{} pairs with {} coefficients",
            pairs.len(),
            lambdas.len()
        );
        for &l in &lambdas {
            check_lambda(l)?;
        }
        Ok(Self { pairs, lambdas })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Checks every pair indexes into `n_rows` source rows.
    pub fn validate(&self, n_rows: usize) -> Result<()> {
        ensure!(!self.pairs.is_empty(), Contract, "empty mix plan");
        for &(i, j) in &self.pairs {
            let bad = i.max(j);
            if bad >= n_rows {
                return Err(Error::Bounds { index: bad, len: n_rows });
            }
        }
        Ok(())
    }

    /// Mixed rows `[m × d]` from source rows `[n × d]`.
    pub fn apply(&self, src: &Tensor) -> Result<Tensor> {
        self.validate(src.rows())?;
        let d = src.cols();
        let mut out = Vec::with_capacity(self.len() * d);
        for (&(i, j), &l) in self.pairs.iter().zip(&self.lambdas) {
            out.extend(src.row(i).iter().zip(src.row(j)).map(|(a, b)| l * a + (1.0 - l) * b));
        }
        Tensor::matrix(self.len(), d, out)
    }

    /// Transpose of [`MixPlan::apply`]: source row `i` accumulates `λ·g_r`
    /// from every mixed row with `i_r = i` and `(1 − λ)·g_r` from every row
    /// with `j_r = i`.
    pub fn route_back(&self, grad: &Tensor, n_rows: usize) -> Result<Tensor> {
        self.validate(n_rows)?;
        ensure!(
            grad.rows() == self.len(),
            Shape,
            "{} gradient rows for {} mixed rows",
            grad.rows(),
            self.len()
        );
        let d = grad.cols();
        let mut out = Tensor::zeros(vec![n_rows, d]);
        for (r, (&(i, j), &l)) in self.pairs.iter().zip(&self.lambdas).enumerate() {
            let g = grad.row(r);
            for (o, &x) in out.row_mut(i).iter_mut().zip(g) {
                *o += l * x;
            }
            for (o, &x) in out.row_mut(j).iter_mut().zip(g) {
                *o += (1.0 - l) * x;
            }
        }
        Ok(out)
    }

    /// Soft labels `Mix_λ(e_{y_i}, e_{y_j})` per mixed row.
    pub fn soft_labels(&self, labels: &[usize], num_classes: usize) -> Result<Tensor> {
        self.validate(labels.len())?;
        let mut out = vec![0.0; self.len() * num_classes];
        for (r, (&(i, j), &l)) in self.pairs.iter().zip(&self.lambdas).enumerate() {
            let (yi, yj) = (labels[i], labels[j]);
            ensure!(yi < num_classes && yj < num_classes, Contract, "label out of range");
            out[r * num_classes + yi] += l;
            out[r * num_classes + yj] += 1.0 - l;
        }
        Tensor::matrix(self.len(), num_classes, out)
    }

    /// Consecutive sub-plans of at most `size` mixed rows.
    pub fn chunks(&self, size: usize) -> Vec<MixPlan> {
        self.pairs
            .chunks(size.max(1))
            .zip(self.lambdas.chunks(size.max(1)))
            .map(|(p, l)| MixPlan {
                pairs: p.to_vec(),
                lambdas: l.to_vec(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn endpoints_and_midpoint() {
        let a = [2.0, 4.0];
        let b = [4.0, 8.0];
        assert_eq!(mix(&a, &b, 1.0).unwrap(), a);
        assert_eq!(mix(&a, &b, 0.0).unwrap(), b);
        assert_eq!(mix(&a, &b, 0.5).unwrap(), vec![3.0, 6.0]);
        assert!(matches!(mix(&a, &b, 1.5), Err(Error::Contract(_))));
        assert!(matches!(mix(&a, &b, -0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn soft_label_example() {
        let plan = MixPlan::new(vec![(0, 1)], vec![0.3]).unwrap();
        let y = plan.soft_labels(&[2, 7], 10).unwrap();
        let mut want = vec![0.0; 10];
        want[2] = 0.3;
        want[7] = 0.7;
        assert_eq!(y.row(0), &want[..]);
    }

    #[test]
    fn all_pairs_count_includes_self_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plan = MixConfig::default().plan(&[0, 0], &mut rng).unwrap();
        assert_eq!(plan.len(), 4);
        let mut pairs = plan.pairs().to_vec();
        pairs.sort_unstable();
        assert_eq!(pairs, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn same_class_only_filters_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = MixConfig {
            same_class_only: true,
            ..MixConfig::default()
        };
        let labels = [0, 1, 0];
        let plan = cfg.plan(&labels, &mut rng).unwrap();
        assert_eq!(plan.len(), 5);
        assert!(plan.pairs().iter().all(|&(i, j)| labels[i] == labels[j]));
        let sampled = MixConfig {
            pair_scope: PairScope::SampledPairs,
            pairs_per_epoch: 50,
            ..cfg
        };
        let plan = sampled.plan(&labels, &mut rng).unwrap();
        assert_eq!(plan.len(), 50);
        assert!(plan.pairs().iter().all(|&(i, j)| labels[i] == labels[j]));
    }

    #[test]
    fn route_back_out_of_range() {
        let plan = MixPlan::new(vec![(0, 3)], vec![0.5]).unwrap();
        assert!(matches!(plan.validate(2), Err(Error::Bounds { index: 3, len: 2 })));
    }

    fn row(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0..100.0f64, len)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn mix_identities(a in row(6), b in row(6), l in 0.0..=1.0f64) {
            prop_assert_eq!(mix(&a, &b, 1.0).unwrap(), a.clone());
            prop_assert_eq!(mix(&a, &b, 0.0).unwrap(), b.clone());
            for (m, x) in mix(&a, &a, l).unwrap().iter().zip(&a) {
                prop_assert!((m - x).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn mix_is_homogeneous(a in row(6), b in row(6), l in 0.0..=1.0f64, s in -10.0..10.0f64) {
            let sa: Vec<f64> = a.iter().map(|x| s * x).collect();
            let sb: Vec<f64> = b.iter().map(|x| s * x).collect();
            let lhs = mix(&sa, &sb, l).unwrap();
            let rhs = mix(&a, &b, l).unwrap();
            for (x, y) in lhs.iter().zip(&rhs) {
                prop_assert!((x - s * y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn soft_labels_are_two_sparse_distributions(
            labels in prop::collection::vec(0usize..10, 1..8),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let plan = MixConfig::default().plan(&labels, &mut rng).unwrap();
            let y = plan.soft_labels(&labels, 10).unwrap();
            for r in y.iter_rows() {
                let sum: f64 = r.iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-12);
                prop_assert!(r.iter().filter(|&&v| v != 0.0).count() <= 2);
                prop_assert!(r.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }

        #[test]
        fn route_back_is_adjoint_of_apply(
            seed in any::<u64>(),
            n in 1usize..6,
            m in 1usize..10,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pairs: Vec<(usize, usize)> = (0..m).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect();
            let lambdas: Vec<f64> = (0..m).map(|_| rng.gen()).collect();
            let plan = MixPlan::new(pairs, lambdas).unwrap();
            let x = Tensor::matrix(n, 3, (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let g = Tensor::matrix(m, 3, (0..m * 3).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let lhs: f64 = plan.apply(&x).unwrap().data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(plan.route_back(&g, n).unwrap().data()).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-10);
        }
    }
}
