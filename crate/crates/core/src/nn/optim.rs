use serde::{Deserialize, Serialize};

use super::Parameterized;
use crate::error::{bail, Result};

/// Hyperparameters of SGD with momentum and a step schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// `(step, multiplier)`: from `step` on the rate is scaled by `multiplier`
    /// (cumulatively with earlier entries).
    #[serde(default)]
    pub schedule: Vec<(usize, f64)>,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    1e-4
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.5,
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            schedule: Vec::new(),
        }
    }
}

impl SgdConfig {
    /// Tenfold drops at 60% and 80% of `iterations`, the 24K/32K-of-40K shape.
    pub fn step_drops(iterations: usize) -> Vec<(usize, f64)> {
        vec![(iterations * 6 / 10, 0.1), (iterations * 8 / 10, 0.1)]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            bail!(InvalidArgument, "learning rate must be finite and non-negative, got {}", self.learning_rate);
        }
        if !(0.0..1.0).contains(&self.momentum) {
            bail!(InvalidArgument, "momentum must lie in [0, 1), got {}", self.momentum);
        }
        if !(self.weight_decay >= 0.0) {
            bail!(InvalidArgument, "weight decay must be non-negative, got {}", self.weight_decay);
        }
        Ok(())
    }
}

/// Optimizer state: `v ← μ·v + (g + λ·w)`, `w ← w − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub config: SgdConfig,
    pub step_count: usize,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Sgd { config, step_count: 0 })
    }

    /// Learning rate used by the next call to [`step`](Self::step).
    pub fn current_lr(&self) -> f64 {
        self.config
            .schedule
            .iter()
            .filter(|(s, _)| *s <= self.step_count)
            .fold(self.config.learning_rate, |lr, (_, m)| lr * m)
    }

    /// Apply one update to every trainable parameter and clear all
    /// gradients. Fails without touching anything if a trainable parameter
    /// has no gradient.
    pub fn step<M: Parameterized + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        let mut missing = Vec::new();
        model.visit_params(&mut |name, p| {
            if p.trainable && p.grad.is_none() {
                missing.push(name.to_string());
            }
        });
        if !missing.is_empty() {
            bail!(InvalidState, "no gradient for {}", missing.join(", "));
        }
        let lr = self.current_lr();
        let SgdConfig { momentum, weight_decay, .. } = self.config;
        model.visit_params(&mut |_, p| {
            if let Some(g) = p.grad.take() {
                if !p.trainable {
                    return;
                }
                let w = p.value.data_mut();
                let v = p.momentum.data_mut();
                for ((wi, vi), gi) in w.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                    *vi = momentum * *vi + (gi + weight_decay * *wi);
                    *wi -= lr * *vi;
                }
            }
        });
        self.step_count += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Param, ValueGrid};

    struct Scalar(Param);

    impl Parameterized for Scalar {
        fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
            f("w", &mut self.0);
        }
    }

    fn scalar(v: f64) -> Scalar {
        Scalar(Param::new(ValueGrid::filled(&[1], v)))
    }

    fn value(s: &Scalar) -> f64 {
        s.0.value.data()[0]
    }

    #[test]
    fn plain_step() {
        let mut s = scalar(1.0);
        let mut opt = Sgd::new(SgdConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
            schedule: vec![],
        })
        .unwrap();
        s.0.accumulate(&[1.0]);
        opt.step(&mut s).unwrap();
        assert!((value(&s) - 0.9).abs() < 1e-15);
        assert!(s.0.grad.is_none());
    }

    #[test]
    fn momentum_recurrence() {
        let mut s = scalar(0.0);
        let mut opt = Sgd::new(SgdConfig {
            learning_rate: 1.0,
            momentum: 0.9,
            weight_decay: 0.0,
            schedule: vec![],
        })
        .unwrap();
        s.0.accumulate(&[1.0]);
        opt.step(&mut s).unwrap();
        assert!((value(&s) + 1.0).abs() < 1e-12);
        s.0.accumulate(&[1.0]);
        opt.step(&mut s).unwrap();
        assert!((value(&s) + 2.9).abs() < 1e-12);
    }

    #[test]
    fn defaults_match_recipe() {
        let c: SgdConfig = toml::from_str("learning_rate = 0.5").unwrap();
        assert_eq!(c.momentum, 0.9);
        assert_eq!(c.weight_decay, 0.0001);
    }

    #[test]
    fn missing_grad_is_invalid_state() {
        let mut s = scalar(1.0);
        let mut opt = Sgd::new(SgdConfig::default()).unwrap();
        assert!(matches!(opt.step(&mut s), Err(crate::Error::InvalidState(_))));
        assert_eq!(value(&s), 1.0);
    }

    #[test]
    fn schedule_drops() {
        let mut opt = Sgd::new(SgdConfig {
            learning_rate: 0.5,
            schedule: SgdConfig::step_drops(40_000),
            ..SgdConfig::default()
        })
        .unwrap();
        assert_eq!(opt.config.schedule, vec![(24_000, 0.1), (32_000, 0.1)]);
        opt.step_count = 23_999;
        assert_eq!(opt.current_lr(), 0.5);
        opt.step_count = 24_000;
        assert!((opt.current_lr() - 0.05).abs() < 1e-15);
        opt.step_count = 32_000;
        assert!((opt.current_lr() - 0.005).abs() < 1e-15);
    }

    #[test]
    fn bad_hyperparameters() {
        let bad = SgdConfig { momentum: 1.0, ..SgdConfig::default() };
        assert!(Sgd::new(bad).is_err());
    }
}
