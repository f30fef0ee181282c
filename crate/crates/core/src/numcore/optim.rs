use serde::{Deserialize, Serialize};

use super::{Mlp, MlpGrads, Tensor};
use crate::error::ensure;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `p ← p − η·v`
    Descent,
    /// `p ← p + η·v`
    Ascent,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Descent => -1.0,
            Direction::Ascent => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub direction: Direction,
}

impl SgdConfig {
    pub fn descent(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            momentum: 0.0,
            weight_decay: 0.0,
            direction: Direction::Descent,
        }
    }

    pub fn ascent(learning_rate: f64) -> Self {
        Self {
            direction: Direction::Ascent,
            ..Self::descent(learning_rate)
        }
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn validate(&self) -> Result<()> {
        // η = 0 is accepted as a no-op step.
        ensure!(
            self.learning_rate >= 0.0 && self.learning_rate.is_finite(),
            Contract,
            "learning rate must be non-negative and finite, got {}",
            self.learning_rate
        );
        ensure!(
            (0.0..1.0).contains(&self.momentum),
            Contract,
            "momentum must lie in [0, 1), got {}",
            self.momentum
        );
        ensure!(
            self.weight_decay >= 0.0,
            Contract,
            "weight decay must be non-negative, got {}",
            self.weight_decay
        );
        Ok(())
    }
}

/// One signed SGD update over a flat parameter block.
///
/// Weight decay always pulls toward zero: the effective gradient is
/// `g + wd·p` when descending and `g − wd·p` when ascending. The momentum
/// buffer accumulates `v ← m·v + g_eff` and the step is `p ± η·v`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], velocity: &mut [f64], cfg: &SgdConfig) -> Result<()> {
    ensure!(
        params.len() == grads.len() && params.len() == velocity.len(),
        Shape,
        "params {} / grads {} / velocity {}",
        params.len(),
        grads.len(),
        velocity.len()
    );
    let sign = cfg.direction.sign();
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let g_eff = g - sign * cfg.weight_decay * *p;
        *v = cfg.momentum * *v + g_eff;
        *p += sign * cfg.learning_rate * *v;
    }
    Ok(())
}

/// SGD optimizer state for one model.
#[derive(Clone, Debug, Default)]
pub struct Sgd {
    velocity: Option<Vec<Tensor>>,
}

impl Sgd {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops the momentum buffers.
    pub fn reset(&mut self) {
        self.velocity = None;
    }

    pub fn step(&mut self, model: &mut Mlp, grads: &MlpGrads, cfg: &SgdConfig) -> Result<()> {
        cfg.validate()?;
        ensure!(
            grads.layers.len() == model.layers().len(),
            Shape,
            "{} gradient layers for {} model layers",
            grads.layers.len(),
            model.layers().len()
        );
        let velocity = self
            .velocity
            .get_or_insert_with(|| grads.blocks().map(|g| Tensor::zeros(g.shape().to_vec())).collect());
        for ((p, g), v) in model.params_mut().zip(grads.blocks()).zip(velocity.iter_mut()) {
            ensure!(p.shape() == g.shape(), Shape, "param {:?} vs grad {:?}", p.shape(), g.shape());
            sgd_step(p.data_mut(), g.data(), v.data_mut(), cfg)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_once(p: f64, g: f64, cfg: SgdConfig) -> f64 {
        let mut ps = [p];
        let mut v = [0.0];
        sgd_step(&mut ps, &[g], &mut v, &cfg).unwrap();
        ps[0]
    }

    #[test]
    fn plain_ascent_and_descent() {
        assert!((step_once(1.0, 2.0, SgdConfig::ascent(0.1)) - 1.2).abs() < 1e-15);
        assert!((step_once(1.0, 2.0, SgdConfig::descent(0.1)) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_two_steps() {
        // v1 = 1, v2 = 0.9 + 1 = 1.9 → p0 − 0.1 − 0.19
        let cfg = SgdConfig::descent(0.1).with_momentum(0.9);
        let mut p = [5.0];
        let mut v = [0.0];
        sgd_step(&mut p, &[1.0], &mut v, &cfg).unwrap();
        sgd_step(&mut p, &[1.0], &mut v, &cfg).unwrap();
        assert!((p[0] - (5.0 - 0.29)).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_shrinks_in_both_directions() {
        let wd = SgdConfig::descent(0.1).with_weight_decay(0.5);
        assert!(step_once(2.0, 0.0, wd) < 2.0);
        let wa = SgdConfig::ascent(0.1).with_weight_decay(0.5);
        assert!(step_once(2.0, 0.0, wa) < 2.0);
        assert!(step_once(-2.0, 0.0, wa) > -2.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = [1.0, 2.0];
        let mut v = [0.0, 0.0];
        assert!(sgd_step(&mut p, &[1.0], &mut v, &SgdConfig::descent(0.1)).is_err());
    }
}
