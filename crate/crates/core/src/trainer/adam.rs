//! Bias-corrected Adam with the inverse-square-root warmup schedule.

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::params::Parameters;
use indexmap::IndexMap;

/// `lr = d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`, 1-based steps.
pub fn learning_rate(cfg: &TrainConfig, step: u64) -> f64 {
    let s = step.max(1) as f64;
    let w = cfg.warmup_steps as f64;
    (cfg.lr_d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
}

/// First/second moment buffers, keyed by parameter name.
#[derive(Debug, Default)]
pub struct AdamState {
    m: IndexMap<String, Vec<f64>>,
    v: IndexMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One optimizer update over every parameter that carries a gradient.
/// `step` is the 1-based update count shared by bias correction and the
/// learning-rate schedule.
pub fn adam_step(
    params: &mut Parameters,
    state: &mut AdamState,
    cfg: &TrainConfig,
    step: u64,
) -> Result<()> {
    let lr = learning_rate(cfg, step);
    let (b1, b2, eps) = (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let bc1 = 1.0 - b1.powi(step as i32);
    let bc2 = 1.0 - b2.powi(step as i32);
    for (name, tensor) in params.iter_mut() {
        let grad = match &tensor.grad {
            Some(g) => g,
            None => continue,
        };
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; tensor.data.len()]);
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; tensor.data.len()]);
        if m.len() != tensor.data.len() || grad.len() != tensor.data.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                detail: format!(
                    "parameter `{name}`: data {}, grad {}, state {}",
                    tensor.data.len(),
                    grad.len(),
                    m.len()
                ),
            });
        }
        for i in 0..tensor.data.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            tensor.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn cfg() -> TrainConfig {
        TrainConfig {
            lr_d_model: 64,
            warmup_steps: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut p = Parameters::new();
        p.insert("w", Tensor::from_vec(vec![1.5, -2.0]));
        p.zero_grads();
        let mut state = AdamState::new();
        adam_step(&mut p, &mut state, &cfg(), 1).unwrap();
        assert_eq!(p.expect("w").data, vec![1.5, -2.0]);
    }

    #[test]
    fn one_step_on_a_parabola_descends() {
        // f(w) = w^2, gradient at w=1 is 2.
        let mut p = Parameters::new();
        p.insert("w", Tensor::from_vec(vec![1.0]));
        p.get_mut("w").unwrap().grad = Some(vec![2.0]);
        let mut state = AdamState::new();
        adam_step(&mut p, &mut state, &cfg(), 1).unwrap();
        let w = p.expect("w").data[0];
        assert!(w < 1.0, "w should move toward 0, got {w}");
    }

    #[test]
    fn ten_steps_match_a_scalar_reference_trace() {
        // Quadratic f(w) = 0.5 * (3 w0^2 + w1^2); grad = (3 w0, w1).
        let c = cfg();
        let mut p = Parameters::new();
        p.insert("w", Tensor::from_vec(vec![1.0, -2.0]));
        let mut state = AdamState::new();

        // Independent scalar reimplementation.
        let mut w_ref = [1.0f64, -2.0];
        let mut m_ref = [0.0f64; 2];
        let mut v_ref = [0.0f64; 2];

        for step in 1..=10u64 {
            let grad = {
                let w = &p.expect("w").data;
                vec![3.0 * w[0], w[1]]
            };
            p.get_mut("w").unwrap().grad = Some(grad);
            adam_step(&mut p, &mut state, &c, step).unwrap();

            let lr = (c.lr_d_model as f64).powf(-0.5)
                * ((step as f64).powf(-0.5)).min(step as f64 * (c.warmup_steps as f64).powf(-1.5));
            let g = [3.0 * w_ref[0], w_ref[1]];
            for i in 0..2 {
                m_ref[i] = c.adam_beta1 * m_ref[i] + (1.0 - c.adam_beta1) * g[i];
                v_ref[i] = c.adam_beta2 * v_ref[i] + (1.0 - c.adam_beta2) * g[i] * g[i];
                let m_hat = m_ref[i] / (1.0 - c.adam_beta1.powi(step as i32));
                let v_hat = v_ref[i] / (1.0 - c.adam_beta2.powi(step as i32));
                w_ref[i] -= lr * m_hat / (v_hat.sqrt() + c.adam_eps);
            }
            for i in 0..2 {
                let w = p.expect("w").data[i];
                assert!(
                    (w - w_ref[i]).abs() < 1e-12,
                    "step {step} coord {i}: {w} vs {}",
                    w_ref[i]
                );
            }
        }
    }

    #[test]
    fn warmup_then_decay() {
        let c = cfg();
        let peak = learning_rate(&c, c.warmup_steps);
        assert!(learning_rate(&c, 1) < peak);
        assert!(learning_rate(&c, 100 * c.warmup_steps) < peak);
    }
}
