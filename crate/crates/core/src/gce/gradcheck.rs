// SPDX-License-Identifier: Apache-2.0

//! Per-sample check that the GCE parameter gradient equals the CE
//! parameter gradient scaled by `p_y^q`.

use crate::error::{Error, Result};
use crate::gce::loss::{check_q, gce_of};
use crate::nn::{softmax, Network};

/// How the GCE side of the comparison is computed. The CE side is always
/// analytic backprop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GradRoute {
    /// Backprop through the explicit softmax Jacobian `∂p_y/∂z`.
    Jacobian,
    /// Central finite differences of the GCE loss in parameter space.
    FiniteDifference { step: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Relative deviation per sample: `‖g_gce − p_y^q·g_ce‖_∞ / ‖p_y^q·g_ce‖_∞`.
    pub per_sample: Vec<f64>,
    pub num_params: usize,
}

impl GradCheckReport {
    pub fn max_relative_deviation(&self) -> f64 {
        self.per_sample.iter().cloned().fold(0.0, f64::max)
    }
}

/// Denominator floor so samples with vanishing gradients do not dominate.
const SCALE_FLOOR: f64 = 1e-8;

pub fn gce_grad_check(net: &Network, batch: &[(Vec<f64>, usize)], q: f64, route: GradRoute) -> Result<GradCheckReport> {
    check_q(q)?;
    if let GradRoute::FiniteDifference { step } = route {
        if !net.arch.is_smooth() {
            return Err(Error::Domain(format!(
                "non-differentiable model configuration: {} has ReLU/max-pool kinks",
                net.arch
            )));
        }
        if !(step > 0.0) {
            return Err(Error::InvalidParameter(format!("finite-difference step {step}")));
        }
    }
    if batch.is_empty() {
        return Err(Error::Empty("gradient-check batch"));
    }

    let mut per_sample = Vec::with_capacity(batch.len());
    for (x, y) in batch {
        let y = *y;
        if y >= net.num_classes {
            return Err(Error::InvalidParameter(format!("target {y} out of range")));
        }
        let (logits, cache) = net.forward(x);
        let p = softmax(&logits);
        let py = p[y];
        if py <= 0.0 {
            return Err(Error::Domain("target probability underflowed to zero".into()));
        }

        let mut ce_dlogits = p.clone();
        ce_dlogits[y] -= 1.0;
        let mut g_ce = net.zero_grads();
        net.backward(&cache, &ce_dlogits, &mut g_ce);
        let scale = py.powf(q);
        let expected: Vec<f64> = g_ce.flat().into_iter().map(|g| scale * g).collect();

        let g_gce = match route {
            GradRoute::Jacobian => {
                let dl_dpy = -py.powf(q - 1.0);
                let dlogits: Vec<f64> = (0..p.len())
                    .map(|k| {
                        let kron = if k == y { 1.0 } else { 0.0 };
                        dl_dpy * py * (kron - p[k])
                    })
                    .collect();
                let mut g = net.zero_grads();
                net.backward(&cache, &dlogits, &mut g);
                g.flat()
            }
            GradRoute::FiniteDifference { step } => finite_difference_gce(net, x, y, q, step),
        };

        let diff = g_gce
            .iter()
            .zip(&expected)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let norm = expected.iter().map(|v| v.abs()).fold(0.0, f64::max);
        per_sample.push(diff / norm.max(SCALE_FLOOR));
    }
    Ok(GradCheckReport {
        per_sample,
        num_params: net.num_parameters(),
    })
}

fn finite_difference_gce(net: &Network, x: &[f64], y: usize, q: f64, step: f64) -> Vec<f64> {
    let mut probe = net.clone();
    let theta = net.flat_params();
    let loss = |n: &Network| gce_of(softmax(&n.logits(x))[y], q);
    let mut out = Vec::with_capacity(theta.len());
    let mut t = theta.clone();
    for i in 0..theta.len() {
        t[i] = theta[i] + step;
        probe.set_flat_params(&t);
        let up = loss(&probe);
        t[i] = theta[i] - step;
        probe.set_flat_params(&t);
        let down = loss(&probe);
        t[i] = theta[i];
        out.push((up - down) / (2.0 * step));
    }
    out
}
