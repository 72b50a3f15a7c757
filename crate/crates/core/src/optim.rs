//! Adam with bias correction and the warmup-plus-cosine learning-rate
//! schedule. The optimizer is keyed by parameter name, so its state
//! survives independent forward passes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Default)]
pub struct Adam {
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new() -> Self {
        Adam::default()
    }

    /// One update over every entry in `grads`. Parameters without a
    /// gradient entry stay untouched.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &BTreeMap<String, Vec<f64>>,
        lr: f64,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            if p.data.len() != g.len() {
                return Err(Error::Dimension(format!(
                    "gradient for `{name}` has {} values, parameter has {}",
                    g.len(),
                    p.data.len()
                )));
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

/// Linear warmup into a half-cosine decay.
///
/// Epochs in `[0, warmup_epochs)` ramp linearly from
/// `warmup_factor * eta_max` up to `eta_max`; from `warmup_epochs` onward
/// the rate follows `eta_min + (eta_max - eta_min) (1 + cos(pi t / T)) / 2`
/// with `t = epoch - warmup_epochs` and `T = total_epochs - warmup_epochs`.
/// The limiting epoch `total_epochs` is a valid query and yields `eta_min`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LrSchedule {
    pub eta_max: f64,
    pub eta_min: f64,
    pub warmup_epochs: usize,
    pub warmup_factor: f64,
    pub total_epochs: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            eta_max: 1e-3,
            eta_min: 3.4e-4,
            warmup_epochs: 2,
            warmup_factor: 0.2,
            total_epochs: 16,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.total_epochs <= self.warmup_epochs {
            return Err(Error::Config(
                "schedule needs total_epochs > warmup_epochs".into(),
            ));
        }
        if !(self.eta_max > 0.0 && self.eta_min >= 0.0 && self.eta_min <= self.eta_max) {
            return Err(Error::Config("schedule needs 0 <= eta_min <= eta_max".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        self.validate()?;
        if epoch > self.total_epochs {
            return Err(Error::Domain(format!(
                "epoch {epoch} outside schedule of {} epochs",
                self.total_epochs
            )));
        }
        if epoch < self.warmup_epochs {
            let frac = epoch as f64 / self.warmup_epochs as f64;
            return Ok(self.eta_max * (self.warmup_factor + (1.0 - self.warmup_factor) * frac));
        }
        let t = (epoch - self.warmup_epochs) as f64;
        let span = (self.total_epochs - self.warmup_epochs) as f64;
        Ok(self.eta_min
            + 0.5 * (self.eta_max - self.eta_min) * (1.0 + (std::f64::consts::PI * t / span).cos()))
    }

    /// Schedule with the same shape stretched over a different run length.
    pub fn with_total(&self, total_epochs: usize) -> Self {
        LrSchedule {
            total_epochs,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RawTensor;

    #[test]
    fn adam_single_step_from_unit_gradient() {
        // p=1, g=1, lr=0.1: bias correction makes m_hat = v_hat = 1,
        // so the update is lr / (1 + eps) and p lands at ~0.9
        let mut params = ModelParams::new();
        params
            .insert("p", RawTensor::new(vec![1.0], vec![1]).unwrap())
            .unwrap();
        let mut opt = Adam::new();
        let grads = BTreeMap::from([("p".to_string(), vec![1.0])]);
        opt.step(&mut params, &grads, 0.1).unwrap();
        let p = params.get("p").unwrap().data[0];
        assert!((p - 0.9).abs() < 1e-7, "p = {p}");
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut params = ModelParams::new();
        params
            .insert("p", RawTensor::new(vec![0.5, -0.25], vec![2]).unwrap())
            .unwrap();
        let mut opt = Adam::new();
        let grads = BTreeMap::from([("p".to_string(), vec![0.0, 0.0])]);
        opt.step(&mut params, &grads, 0.1).unwrap();
        assert_eq!(params.get("p").unwrap().data, vec![0.5, -0.25]);
    }

    #[test]
    fn schedule_hits_published_anchors() {
        let s = LrSchedule::default();
        assert!((s.lr_at(0).unwrap() - 2e-4).abs() < 1e-12);
        assert!((s.lr_at(2).unwrap() - 1e-3).abs() < 1e-12);
        // cosine midpoint: warmup 2 + half of the 14 remaining epochs
        assert!((s.lr_at(9).unwrap() - (1e-3 + 3.4e-4) / 2.0).abs() < 1e-12);
        assert!((s.lr_at(16).unwrap() - 3.4e-4).abs() < 1e-12);
    }

    #[test]
    fn schedule_warmup_is_linear() {
        let s = LrSchedule::default();
        let mid = s.lr_at(1).unwrap();
        assert!((mid - (2e-4 + 1e-3) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn schedule_rejects_out_of_range() {
        let s = LrSchedule::default();
        assert!(s.lr_at(17).is_err());
    }

    #[test]
    fn schedule_rejects_degenerate_config() {
        let s = LrSchedule {
            total_epochs: 2,
            warmup_epochs: 2,
            ..LrSchedule::default()
        };
        assert!(s.lr_at(0).is_err());
    }

    #[test]
    fn schedule_is_monotone_after_warmup() {
        let s = LrSchedule::default();
        let mut prev = s.lr_at(2).unwrap();
        for e in 3..=16 {
            let lr = s.lr_at(e).unwrap();
            assert!(lr < prev);
            prev = lr;
        }
    }
}
