// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to this floor before loss evaluation inside
/// training and scoring, so a zero target probability never yields an
/// infinite loss or gradient.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    #[default]
    Ce,
    Gce,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Ce => "ce",
            LossMode::Gce => "gce",
        })
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ce" => Ok(LossMode::Ce),
            "gce" => Ok(LossMode::Gce),
            other => Err(Error::InvalidParameter(format!("unknown loss mode {other:?}"))),
        }
    }
}

pub fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("q = {q} outside (0, 1]")))
    }
}

fn target_prob(probs: &[f64], target: usize) -> Result<f64> {
    if target >= probs.len() {
        return Err(Error::InvalidParameter(format!(
            "target {target} out of range for {} classes",
            probs.len()
        )));
    }
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!("not a probability vector (sum {sum})")));
    }
    let p = probs[target];
    if p <= 0.0 {
        return Err(Error::Domain(
            "target probability is zero: loss gradient is unbounded".into(),
        ));
    }
    Ok(p)
}

/// Generalized cross-entropy `(1 − p_y^q) / q`.
///
/// Evaluated as `−expm1(q·ln p_y)/q`, which stays accurate as `q → 0`
/// where it approaches `−ln p_y`. At `q = 1` the result is `1 − p_y`
/// exactly.
pub fn gce_loss(probs: &[f64], target: usize, q: f64) -> Result<f64> {
    check_q(q)?;
    let p = target_prob(probs, target)?;
    Ok(gce_of(p, q))
}

pub fn ce_loss(probs: &[f64], target: usize) -> Result<f64> {
    Ok(-target_prob(probs, target)?.ln())
}

pub(crate) fn gce_of(p: f64, q: f64) -> f64 {
    if q == 1.0 {
        1.0 - p
    } else {
        -(q * p.ln()).exp_m1() / q
    }
}

/// Loss of an already-normalized probability vector with the target
/// probability clamped to [`PROB_FLOOR`].
pub fn loss_value(mode: LossMode, probs: &[f64], target: usize, q: f64) -> f64 {
    let p = probs[target].max(PROB_FLOOR);
    match mode {
        LossMode::Ce => -p.ln(),
        LossMode::Gce => gce_of(p, q),
    }
}

/// Gradient of the loss with respect to the logits.
///
/// For CE this is `p − e_y`; for GCE the chain rule through the softmax
/// gives `p_y^q · (p − e_y)`.
pub fn logit_grad(mode: LossMode, probs: &[f64], target: usize, q: f64) -> Vec<f64> {
    let mut g = probs.to_vec();
    g[target] -= 1.0;
    if mode == LossMode::Gce {
        let scale = probs[target].max(PROB_FLOOR).powf(q);
        g.iter_mut().for_each(|v| *v *= scale);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_values() {
        assert_eq!(gce_loss(&[1.0, 0.0], 0, 0.7).unwrap(), 0.0);
        assert_eq!(gce_loss(&[0.3, 0.7], 0, 1.0).unwrap(), 0.7);
        assert_eq!(gce_loss(&[0.3, 0.7], 1, 1.0).unwrap(), 1.0 - 0.7);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(gce_loss(&[0.0, 1.0], 0, 0.7), Err(Error::Domain(_))));
        assert!(matches!(gce_loss(&[0.5, 0.5], 0, 0.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(gce_loss(&[0.5, 0.5], 0, 1.5), Err(Error::InvalidParameter(_))));
        assert!(gce_loss(&[0.5, 0.6], 0, 0.7).is_err());
        assert!(gce_loss(&[0.5, 0.5], 2, 0.7).is_err());
    }

    #[test]
    fn clamped_loss_is_finite_at_zero_probability() {
        let l = loss_value(LossMode::Ce, &[0.0, 1.0], 0, 0.7);
        assert!(l.is_finite() && l > 27.0);
        let g = logit_grad(LossMode::Gce, &[0.0, 1.0], 0, 0.7);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn bounded_by_inverse_q() {
        for q in [0.1, 0.5, 0.7, 1.0] {
            let l = gce_loss(&[1e-300, 1.0 - 1e-300], 0, q).unwrap();
            assert!(l <= 1.0 / q + 1e-12);
        }
    }
}
