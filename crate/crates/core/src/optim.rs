use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// SGD with heavy-ball momentum and L2 weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 0.01,
            batch_size: 16,
            epochs: 30,
        }
    }
}

impl OptimConfig {
    /// Checks each field; the error names the first offending one.
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, why: &str| Err(Error::Config(alloc::format!("{field}: {why}")));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            // zero is allowed: it freezes the parameters
            return fail("learning_rate", "must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum", "must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return fail("weight_decay", "must be a finite non-negative number");
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1");
        }
        if self.epochs == 0 {
            return fail("epochs", "must be at least 1");
        }
        Ok(())
    }
}

/// One update:
///
/// ```text
/// g = mean_grad + weight_decay * params
/// velocity = momentum * velocity + g
/// params -= learning_rate * velocity
/// ```
pub fn sgd_step(
    params: &mut [f64],
    mean_grad: &[f64],
    velocity: &mut [f64],
    cfg: &OptimConfig,
) -> Result<()> {
    check_dim(params.len(), mean_grad.len())?;
    check_dim(params.len(), velocity.len())?;
    for ((p, g), v) in params.iter_mut().zip(mean_grad).zip(velocity.iter_mut()) {
        let g_eff = g + cfg.weight_decay * *p;
        *v = cfg.momentum * *v + g_eff;
        *p -= cfg.learning_rate * *v;
    }
    Ok(())
}
