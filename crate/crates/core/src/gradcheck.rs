//! Central-difference gradient verification.
//!
//! A loss function is evaluated through the same code path twice: once
//! asking for analytic gradients off the tape, then entry by entry with
//! each parameter nudged ±h. The relative error
//! `|analytic - central| / max(1, |central|)` must stay tiny for the
//! backward rules to be trusted.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ModelParams;

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

/// Result of one loss evaluation; gradients only when requested.
pub struct LossEval {
    pub loss: f64,
    pub grads: Option<BTreeMap<String, Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    /// worst relative error per parameter name
    pub per_param: BTreeMap<String, f64>,
    pub max_rel_err: f64,
}

impl CheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

pub fn relative_error(analytic: f64, central: f64) -> f64 {
    (analytic - central).abs() / central.abs().max(1.0)
}

/// Checks d(loss)/d(param) for every entry of every parameter.
///
/// `f(params, want_grads)` must be a pure function of the parameter
/// values; any internal randomness has to be frozen across calls.
pub fn grad_check<F>(params: &ModelParams, f: F, step: f64) -> Result<CheckReport>
where
    F: Fn(&ModelParams, bool) -> Result<LossEval>,
{
    let analytic = f(params, true)?
        .grads
        .ok_or_else(|| Error::Numeric("loss function returned no gradients".into()))?;
    let mut work = params.clone();
    let mut per_param = BTreeMap::new();
    let mut max_rel_err: f64 = 0.0;
    for (name, tensor) in params.iter() {
        let zero = vec![0.0; tensor.len()];
        let g = analytic.get(name).unwrap_or(&zero);
        if g.len() != tensor.len() {
            return Err(Error::Dimension(format!(
                "gradient length mismatch for `{name}`"
            )));
        }
        let mut worst: f64 = 0.0;
        for i in 0..tensor.len() {
            let orig = tensor.data[i];
            work.get_mut(name)?.data[i] = orig + step;
            let up = f(&work, false)?.loss;
            work.get_mut(name)?.data[i] = orig - step;
            let down = f(&work, false)?.loss;
            work.get_mut(name)?.data[i] = orig;
            let central = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(g[i], central));
        }
        max_rel_err = max_rel_err.max(worst);
        per_param.insert(name.clone(), worst);
    }
    Ok(CheckReport {
        per_param,
        max_rel_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use crate::tensor::RawTensor;

    fn quadratic_params() -> ModelParams {
        let mut p = ModelParams::new();
        p.insert("x", RawTensor::new(vec![0.7, -1.3, 2.1], vec![3]).unwrap())
            .unwrap();
        p
    }

    fn quadratic_loss(params: &ModelParams, want_grads: bool) -> Result<LossEval> {
        let mut t = Tape::new();
        let x = t.param("x", params.get("x")?)?;
        let sq = t.mul(x, x)?;
        let loss = t.sum(sq);
        let value = t.scalar(loss);
        let grads = if want_grads {
            t.backward(loss)?;
            Some(t.param_grads())
        } else {
            None
        };
        Ok(LossEval { loss: value, grads })
    }

    #[test]
    fn correct_backward_passes() {
        let report = grad_check(&quadratic_params(), quadratic_loss, DEFAULT_STEP).unwrap();
        assert!(report.passed(DEFAULT_TOLERANCE), "max {}", report.max_rel_err);
    }

    #[test]
    fn corrupted_backward_is_detected() {
        // negative control: report a wrong analytic gradient on purpose
        let broken = |params: &ModelParams, want_grads: bool| -> Result<LossEval> {
            let mut out = quadratic_loss(params, want_grads)?;
            if let Some(grads) = out.grads.as_mut() {
                grads.get_mut("x").unwrap()[1] += 0.5;
            }
            Ok(out)
        };
        let report = grad_check(&quadratic_params(), broken, DEFAULT_STEP).unwrap();
        assert!(!report.passed(DEFAULT_TOLERANCE));
        assert!(report.per_param["x"] > 0.1);
    }

    #[test]
    fn nonlinear_chain_matches_central_difference() {
        let mut params = ModelParams::new();
        params.insert_weight("w", 3, 4, 11).unwrap();
        params.insert_zeros("b", vec![3]).unwrap();
        let f = |p: &ModelParams, want: bool| -> Result<LossEval> {
            let mut t = Tape::new();
            let w = t.param("w", p.get("w")?)?;
            let b = t.param("b", p.get("b")?)?;
            let x = t.constant_vec(vec![0.2, -0.4, 0.6, 0.8]);
            let h = t.affine(w, x, b)?;
            let a = t.tanh(h);
            let sm = t.softmax(a)?;
            let p0 = t.index(sm, 1)?;
            let lg = t.log(p0)?;
            let loss = t.neg(lg);
            let value = t.scalar(loss);
            let grads = if want {
                t.backward(loss)?;
                Some(t.param_grads())
            } else {
                None
            };
            Ok(LossEval { loss: value, grads })
        };
        let report = grad_check(&params, f, DEFAULT_STEP).unwrap();
        assert!(report.passed(DEFAULT_TOLERANCE), "max {}", report.max_rel_err);
    }
}
