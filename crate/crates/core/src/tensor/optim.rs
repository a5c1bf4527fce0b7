//! AdamW with decoupled weight decay and a cosine-annealed learning rate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ParameterStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub initial_lr: f64,
    pub total_steps: usize,
}

/// `lr₀ · ½(1 + cos(π·step/total))` for `0 ≤ step ≤ total`.
pub fn cosine_lr(step: usize, schedule: &CosineSchedule) -> Result<f64> {
    if step > schedule.total_steps {
        return Err(Error::contract(format!(
            "step {step} outside cosine schedule of {} steps",
            schedule.total_steps
        )));
    }
    if schedule.total_steps == 0 {
        return Ok(schedule.initial_lr);
    }
    let frac = step as f64 / schedule.total_steps as f64;
    Ok(schedule.initial_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

#[derive(Clone, Debug)]
struct Moments<S> {
    first: Vec<S>,
    second: Vec<S>,
}

/// Optimizer state: per-parameter moment buffers and the step counter.
#[derive(Clone, Debug)]
pub struct AdamW<S> {
    config: AdamWConfig,
    schedule: CosineSchedule,
    steps: usize,
    moments: BTreeMap<String, Moments<S>>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(config: AdamWConfig, schedule: CosineSchedule) -> Self {
        AdamW { config, schedule, steps: 0, moments: BTreeMap::new() }
    }

    /// Completed update steps.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Learning rate the next call to [`AdamW::step`] will use.
    pub fn current_lr(&self) -> Result<f64> {
        cosine_lr(self.steps, &self.schedule)
    }

    /// Apply one update to every parameter and return the learning rate used.
    /// Every parameter must carry a gradient.
    pub fn step(&mut self, params: &mut ParameterStore<S>) -> Result<f64> {
        if let Some(name) = params.iter().find(|(_, t)| t.grad().is_none()).map(|(n, _)| n) {
            return Err(Error::contract(format!("parameter `{name}` has no gradient")));
        }
        let lr = self.current_lr()?;
        self.steps += 1;
        let t = self.steps as i32;
        let c = &self.config;
        let (b1, b2) = (S::of(c.beta1), S::of(c.beta2));
        let bias1 = S::one() - S::of(c.beta1.powi(t));
        let bias2 = S::one() - S::of(c.beta2.powi(t));
        let (lr_s, eps, decay) = (S::of(lr), S::of(c.eps), S::of(c.weight_decay));
        for (name, tensor) in params.iter_mut() {
            let n = tensor.numel();
            let state = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| Moments { first: vec![S::zero(); n], second: vec![S::zero(); n] });
            if state.first.len() != n {
                return Err(Error::dim("adamw", format!("moment buffers of `{name}` do not match its shape")));
            }
            let grad = tensor.grad().expect("checked above").to_vec();
            let data = tensor.data_mut();
            for i in 0..n {
                let g = grad[i];
                state.first[i] = b1 * state.first[i] + (S::one() - b1) * g;
                state.second[i] = b2 * state.second[i] + (S::one() - b2) * g * g;
                let m_hat = state.first[i] / bias1;
                let v_hat = state.second[i] / bias2;
                data[i] -= lr_s * decay * data[i];
                data[i] -= lr_s * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Init, Tensor};

    fn scalar_store(w: f64, g: f64) -> ParameterStore<f64> {
        let mut p = ParameterStore::new(0);
        p.set("w", Tensor::scalar(w));
        p.get_mut("w").unwrap().accumulate_grad(&[g]).unwrap();
        p
    }

    #[test]
    fn cosine_endpoints() {
        let s = CosineSchedule { initial_lr: 0.4, total_steps: 100 };
        assert_eq!(cosine_lr(0, &s).unwrap(), 0.4);
        assert!(cosine_lr(100, &s).unwrap().abs() < 1e-15);
        assert!((cosine_lr(50, &s).unwrap() - 0.2).abs() < 1e-15);
        assert!(cosine_lr(101, &s).is_err());
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = ParameterStore::<f64>::new(1);
        p.register("m", &[3, 2], Init::Xavier).unwrap();
        let before = p.get("m").unwrap().clone();
        p.get_mut("m").unwrap().accumulate_grad(&[0.0; 6]).unwrap();
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::new(cfg, CosineSchedule { initial_lr: 0.1, total_steps: 10 });
        opt.step(&mut p).unwrap();
        assert_eq!(p.get("m").unwrap().data(), before.data());
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_store(1.0, 1.0);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::new(cfg, CosineSchedule { initial_lr: 0.1, total_steps: 10 });
        let lr = opt.step(&mut p).unwrap();
        assert_eq!(lr, 0.1);
        assert!((p.get("w").unwrap().data()[0] - 0.9).abs() < 1e-6);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn decay_shrinks_magnitude_under_zero_gradient() {
        for w in [2.5, -1.5] {
            let mut p = scalar_store(w, 0.0);
            let mut opt = AdamW::new(AdamWConfig::default(), CosineSchedule { initial_lr: 0.1, total_steps: 10 });
            opt.step(&mut p).unwrap();
            let after = p.get("w").unwrap().data()[0];
            assert!(after.abs() < w.abs());
            assert_eq!(after.signum(), w.signum());
        }
    }

    #[test]
    fn missing_gradient_names_the_parameter() {
        let mut p = ParameterStore::<f64>::new(0);
        p.register("enc.emb", &[2, 2], Init::Xavier).unwrap();
        let mut opt = AdamW::new(AdamWConfig::default(), CosineSchedule { initial_lr: 0.1, total_steps: 1 });
        let msg = opt.step(&mut p).unwrap_err().to_string();
        assert!(msg.contains("enc.emb"), "{msg}");
    }
}
