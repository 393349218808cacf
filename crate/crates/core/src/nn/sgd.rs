use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the learning rate behaves once decay has started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RestartMode {
    /// Every `restart_interval_epochs` the rate jumps back to `lr0` and the
    /// decay starts over.
    Warm,
    /// No restarts: the rate keeps decaying (floored at a tiny positive value).
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay_abs_per_epoch: f64,
    pub decay_start_epoch: usize,
    pub restart_interval_epochs: usize,
    pub restart: RestartMode,
    pub focal_gamma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            lr0: 5e-4,
            lr_decay_abs_per_epoch: 5e-6,
            decay_start_epoch: 15,
            restart_interval_epochs: 10,
            restart: RestartMode::Warm,
            focal_gamma: 2.0,
            seed: 0,
        }
    }
}

const LR_FLOOR: f64 = 1e-12;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return bad("lr0 must be positive");
        }
        if !(self.lr_decay_abs_per_epoch.is_finite() && self.lr_decay_abs_per_epoch >= 0.0) {
            return bad("lr_decay_abs_per_epoch must be non-negative");
        }
        if self.restart == RestartMode::Warm && self.restart_interval_epochs == 0 {
            return bad("restart_interval_epochs must be positive");
        }
        if !(self.focal_gamma.is_finite() && self.focal_gamma >= 0.0) {
            return bad("focal_gamma must be non-negative");
        }
        if self.restart == RestartMode::Warm {
            let worst =
                self.lr0 - self.lr_decay_abs_per_epoch * (self.restart_interval_epochs - 1) as f64;
            if worst <= 0.0 {
                return bad("learning rate would reach zero before a restart");
            }
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if epoch < self.decay_start_epoch {
            return self.lr0;
        }
        let since = epoch - self.decay_start_epoch;
        let steps = match self.restart {
            RestartMode::Warm => since % self.restart_interval_epochs,
            RestartMode::None => since,
        };
        (self.lr0 - self.lr_decay_abs_per_epoch * steps as f64).max(LR_FLOOR)
    }
}

/// Models that can take a plain gradient step.
pub trait Steppable {
    fn is_finite(&self) -> bool;
    fn axpy(&mut self, a: f64, g: &Self);
}

/// `θ ← θ − lr(epoch)·g`. Non-finite gradients abort without touching `model`.
pub fn sgd_step<M: Steppable>(
    model: &mut M,
    grads: &M,
    epoch: usize,
    config: &TrainConfig,
) -> Result<f64> {
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient(format!(
            "gradient has non-finite entries at epoch {epoch}"
        )));
    }
    let lr = config.learning_rate(epoch);
    model.axpy(-lr, grads);
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, Mlp, Parameterized};

    #[test]
    fn constant_before_decay() {
        let c = TrainConfig::default();
        for e in 0..15 {
            assert_eq!(c.learning_rate(e), 5e-4);
        }
    }

    #[test]
    fn decays_then_restarts() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate(15), 5e-4);
        assert_eq!(c.learning_rate(16), 5e-4 - 5e-6);
        assert_eq!(c.learning_rate(24), 5e-4 - 9.0 * 5e-6);
        assert_eq!(c.learning_rate(25), 5e-4);
        let none = TrainConfig {
            restart: RestartMode::None,
            ..c
        };
        assert_eq!(none.learning_rate(40), 5e-4 - 25.0 * 5e-6);
        assert!((0..1000).all(|e| none.learning_rate(e) > 0.0));
    }

    fn tiny() -> Mlp {
        Mlp {
            layers: vec![Dense::identity(3)],
            mid_layer: 0,
            relu_output: false,
        }
    }

    #[test]
    fn zero_gradient_leaves_model_unchanged() {
        let mut m = tiny();
        let before = m.params();
        let zeros = m.zeros_like();
        sgd_step(&mut m, &zeros, 3, &TrainConfig::default()).unwrap();
        assert_eq!(m.params(), before);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut m = tiny();
        let mut g = m.zeros_like();
        g.layers[0].bias[1] = f64::NAN;
        let before = m.params();
        assert!(matches!(
            sgd_step(&mut m, &g, 0, &TrainConfig::default()),
            Err(Error::NonFiniteGradient(_))
        ));
        assert_eq!(m.params(), before);
    }
}
