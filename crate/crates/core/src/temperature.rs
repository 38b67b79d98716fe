//! Temperature-scaled soft targets from probability-only responses.
//!
//! A black-box API returns `p = softmax(z)` but never `z`. Because softmax is
//! invariant to adding a constant, `log p = z - logsumexp(z)` is a valid
//! stand-in for the logits, so `softmax(log(p) / t) == softmax(z / t)` for any
//! temperature `t > 0`. [`soften`] applies exactly that.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::{LogitVector, ProbError, ProbabilityVector};

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemperatureError {
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("target has {target} classes but student logits have {student}")]
    LengthMismatch { target: usize, student: usize },
    #[error("target was softened at temperature {target}, loss requested at {requested}")]
    TemperatureMismatch { target: f64, requested: f64 },
    #[error(transparent)]
    Prob(#[from] ProbError),
}

/// How the distillation KL is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossScale {
    /// Multiply by `t^2` so gradient magnitudes do not shrink as `1/t^2`.
    #[default]
    TauSquared,
    None,
}

impl LossScale {
    pub fn factor(self, tau: f64) -> f64 {
        match self {
            LossScale::TauSquared => tau * tau,
            LossScale::None => 1.0,
        }
    }
}

/// A victim response re-expressed at temperature `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftTarget {
    values: ProbabilityVector,
    tau: f64,
}

impl SoftTarget {
    pub fn values(&self) -> &ProbabilityVector {
        &self.values
    }

    pub fn temperature(&self) -> f64 {
        self.tau
    }
}

fn check_tau(tau: f64) -> Result<(), TemperatureError> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(TemperatureError::InvalidTemperature(tau))
    }
}

/// `softmax(log(max(p, floor)) / tau)`.
pub fn soften(p: &ProbabilityVector, tau: f64) -> Result<SoftTarget, TemperatureError> {
    check_tau(tau)?;
    let scaled: Vec<f64> = p
        .values()
        .iter()
        .map(|&v| v.max(PROB_FLOOR).ln() / tau)
        .collect();
    let values = ProbabilityVector::new(softmax(&scaled))?;
    Ok(SoftTarget { values, tau })
}

/// Slice form of [`soften`] used on the training hot path.
pub fn soften_into(p: &[f64], tau: f64, out: &mut [f64]) {
    debug_assert_eq!(p.len(), out.len());
    for (o, &v) in out.iter_mut().zip(p) {
        *o = v.max(PROB_FLOOR).ln() / tau;
    }
    softmax_in_place(out);
}

/// `scale * KL(target || softmax(z_s / tau))`.
pub fn distill_loss(
    target: &SoftTarget,
    student_logits: &LogitVector,
    tau: f64,
    scale: LossScale,
) -> Result<f64, TemperatureError> {
    check_tau(tau)?;
    if target.tau != tau {
        return Err(TemperatureError::TemperatureMismatch {
            target: target.tau,
            requested: tau,
        });
    }
    let q = target.values.values();
    if q.len() != student_logits.len() {
        return Err(TemperatureError::LengthMismatch {
            target: q.len(),
            student: student_logits.len(),
        });
    }
    let scaled: Vec<f64> = student_logits.values().iter().map(|z| z / tau).collect();
    let log_s = log_softmax(&scaled);
    Ok(scale.factor(tau) * kl_from_log(q, &log_s))
}

/// KL(q || s) given `log s`. Terms with `q == 0` contribute nothing.
pub fn kl_from_log(q: &[f64], log_s: &[f64]) -> f64 {
    let kl: f64 = q
        .iter()
        .zip(log_s)
        .filter(|(&qi, _)| qi > 0.0)
        .map(|(&qi, &ls)| qi * (qi.ln() - ls))
        .sum();
    kl.max(0.0)
}

/// Loss and logit gradient for one sample, writing the gradient into `grad`.
///
/// `target` must already be softened at `tau`. The gradient of
/// `KL(q || softmax(z / tau))` with respect to `z` is `(softmax(z / tau) - q) / tau`.
pub fn distill_loss_grad(
    target: &[f64],
    logits: &[f32],
    tau: f64,
    scale: LossScale,
    grad: &mut [f32],
) -> f64 {
    let scaled: Vec<f64> = logits.iter().map(|&z| z as f64 / tau).collect();
    let log_s = log_softmax(&scaled);
    let factor = scale.factor(tau);
    for ((g, &ls), &q) in grad.iter_mut().zip(&log_s).zip(target) {
        *g = (factor * (ls.exp() - q) / tau) as f32;
    }
    factor * kl_from_log(target, &log_s)
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    out
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Softmax of an `f32` logit row, computed in `f64`, as a validated vector.
pub fn probabilities(logits: &[f32]) -> ProbabilityVector {
    let z: Vec<f64> = logits.iter().map(|&v| v as f64).collect();
    ProbabilityVector::from_response(softmax(&z)).expect("softmax output lies on the simplex")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn uniform_is_fixed_point() {
        for tau in [0.5, 1.0, 10.0, 1000.0] {
            let s = soften(&ProbabilityVector::uniform(7), tau).unwrap();
            for v in s.values().values() {
                assert!((v - 1.0 / 7.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unit_temperature_is_identity() {
        let p = pv(&[0.6, 0.3, 0.1]);
        let s = soften(&p, 1.0).unwrap();
        for (a, b) in s.values().values().iter().zip(p.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn matches_logit_space_oracle() {
        // Oracle: softmax(z / 10) computed directly from the logits.
        let z = [2.0f64, 1.0, 0.0];
        let direct: Vec<f64> = {
            let e: Vec<f64> = z.iter().map(|v| (v / 10.0).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        };
        let p = ProbabilityVector::new(softmax(&z)).unwrap();
        let s = soften(&p, 10.0).unwrap();
        for (a, b) in s.values().values().iter().zip(&direct) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn high_temperature_flattens() {
        let p = pv(&[0.99, 0.009, 0.001]);
        let s = soften(&p, 100.0).unwrap();
        assert!(s.values().entropy() > p.entropy());
        assert_eq!(s.values().argmax(), 0);
    }

    #[test]
    fn zero_entries_are_clamped() {
        let p = pv(&[1.0, 0.0, 0.0]);
        let s = soften(&p, 1000.0).unwrap();
        assert!(s.values().values().iter().all(|v| v.is_finite() && *v > 0.0));
        assert_eq!(s.values().argmax(), 0);
    }

    #[test]
    fn rejects_bad_temperature() {
        let p = pv(&[0.5, 0.5]);
        for tau in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                soften(&p, tau),
                Err(TemperatureError::InvalidTemperature(_))
            ));
        }
    }

    #[test]
    fn kl_hand_value() {
        // 0.7 ln(0.7/0.5) + 0.3 ln(0.3/0.5), evaluated independently.
        let expected = 0.7f64 * (0.7f64 / 0.5).ln() + 0.3 * (0.3f64 / 0.5).ln();
        assert!((expected - 0.082_283_4).abs() < 1e-6);
        // Equal student logits give softmax(z/10) = (0.5, 0.5) at any temperature.
        let target = SoftTarget {
            values: pv(&[0.7, 0.3]),
            tau: 10.0,
        };
        let z = LogitVector::new(vec![3.0, 3.0]).unwrap();
        let none = distill_loss(&target, &z, 10.0, LossScale::None).unwrap();
        assert!((none - expected).abs() < 1e-12);
        let scaled = distill_loss(&target, &z, 10.0, LossScale::TauSquared).unwrap();
        assert!((scaled - 100.0 * expected).abs() < 1e-9);
        assert!((scaled - 8.228).abs() < 1e-3);
    }

    #[test]
    fn zero_loss_at_match() {
        let z = vec![1.5, -0.5, 0.25];
        let tau = 4.0;
        let p = ProbabilityVector::new(softmax(&z)).unwrap();
        let target = soften(&p, tau).unwrap();
        let loss = distill_loss(&target, &LogitVector::new(z).unwrap(), tau, LossScale::TauSquared)
            .unwrap();
        assert!(loss.abs() < 1e-10);
    }

    #[test]
    fn loss_errors() {
        let target = soften(&pv(&[0.5, 0.5]), 2.0).unwrap();
        let z3 = LogitVector::new(vec![0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            distill_loss(&target, &z3, 2.0, LossScale::None),
            Err(TemperatureError::LengthMismatch { .. })
        ));
        let z2 = LogitVector::new(vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            distill_loss(&target, &z2, 3.0, LossScale::None),
            Err(TemperatureError::TemperatureMismatch { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let q = soften(&pv(&[0.6, 0.3, 0.1]), 3.0).unwrap();
        let q = q.values().values().to_vec();
        let z = [0.4f32, -1.2, 2.0];
        for scale in [LossScale::None, LossScale::TauSquared] {
            let mut grad = [0f32; 3];
            distill_loss_grad(&q, &z, 3.0, scale, &mut grad);
            for i in 0..3 {
                let h = 1e-3f32;
                let mut zp = z;
                zp[i] += h;
                let mut zm = z;
                zm[i] -= h;
                let mut scratch = [0f32; 3];
                let lp = distill_loss_grad(&q, &zp, 3.0, scale, &mut scratch);
                let lm = distill_loss_grad(&q, &zm, 3.0, scale, &mut scratch);
                let fd = (lp - lm) / (2.0 * h as f64);
                assert!((fd - grad[i] as f64).abs() < 1e-4, "{fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn stable_for_sharp_temperatures() {
        let p = pv(&[0.5, 0.3, 0.2]);
        let s = soften(&p, 1e-3).unwrap();
        assert!((s.values().values()[0] - 1.0).abs() < 1e-12);
    }
}
