//! Training hyperparameters.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the real-source translation loss.
    pub lambda1: f64,
    /// Weight of the synthetic-source translation loss. Must satisfy
    /// `lambda1 + lambda2 = 1`, so a target sentence occurs once in total.
    pub lambda2: f64,
    /// Step at which the KL weight starts ramping from zero.
    pub gamma_ramp_start: u64,
    /// Steps over which the KL weight rises linearly to one.
    pub gamma_ramp_steps: u64,
    /// Width used by the inverse-sqrt learning-rate schedule.
    pub lr_d_model: usize,
    pub warmup_steps: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Approximate source+target tokens per mini-batch.
    pub batch_tokens: usize,
    pub max_steps: u64,
    /// Steps between mid-run checkpoints; zero writes only the final one.
    pub checkpoint_every: u64,
    pub label_smoothing: f64,
    /// Optimizer updates are applied every `grad_accum` batches.
    pub grad_accum: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 0.5,
            lambda2: 0.5,
            gamma_ramp_start: 0,
            gamma_ramp_steps: 1000,
            lr_d_model: 64,
            warmup_steps: 400,
            adam_beta1: 0.9,
            adam_beta2: 0.998,
            adam_eps: 1e-9,
            batch_tokens: 1024,
            max_steps: 2000,
            checkpoint_every: 0,
            label_smoothing: 0.1,
            grad_accum: 1,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.lambda1 + self.lambda2 - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "lambda1 + lambda2 must equal 1.0, got {} + {} = {}",
                self.lambda1,
                self.lambda2,
                self.lambda1 + self.lambda2
            )));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Config("lambda weights must be non-negative".into()));
        }
        if self.gamma_ramp_steps < 1 {
            return Err(Error::Config("gamma_ramp_steps must be >= 1".into()));
        }
        if self.warmup_steps < 1 {
            return Err(Error::Config("warmup_steps must be >= 1".into()));
        }
        if self.batch_tokens < 1 {
            return Err(Error::Config("batch_tokens must be >= 1".into()));
        }
        if self.grad_accum < 1 {
            return Err(Error::Config("grad_accum must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label_smoothing must be in [0, 1), got {}",
                self.label_smoothing
            )));
        }
        Ok(())
    }

    /// Set `lambda1` and derive `lambda2 = 1 - lambda1`.
    pub fn set_lambda1(&mut self, lambda1: f64) {
        self.lambda1 = lambda1;
        self.lambda2 = 1.0 - lambda1;
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: TrainConfig = serde_json::from_str(&body)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn lambda_sum_must_be_one_at_load() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"lambda1": 0.7, "lambda2": 0.7}"#).unwrap();
        assert!(matches!(TrainConfig::load(&path), Err(Error::Config(_))));

        std::fs::write(&path, r#"{"lambda1": 0.7, "lambda2": 0.3}"#).unwrap();
        let cfg = TrainConfig::load(&path).unwrap();
        assert_eq!(cfg.lambda1, 0.7);
    }

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }
}
