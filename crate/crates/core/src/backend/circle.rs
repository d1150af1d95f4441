//! Circle loss for one anchor, with analytic gradients.
//!
//! `L = log(1 + sum_j exp(s*((s_n_j)^2 - m^2) - s*(m^2 - (1 - s_p)^2)))`,
//! evaluated through log-sum-exp.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleLossParams {
    pub m: f64,
    pub s: f64,
}

impl Default for CircleLossParams {
    fn default() -> Self {
        CircleLossParams { m: 0.35, s: 60.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircleLoss {
    pub loss: f64,
    pub grad_sp: f64,
    pub grad_sn: Vec<f64>,
}

pub fn circle_loss(s_p: f64, s_n: &[f64], params: &CircleLossParams) -> Result<CircleLoss> {
    let CircleLossParams { m, s } = *params;
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::param("m", "must lie in (0, 1)"));
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::param("s", "must be positive"));
    }
    if s_n.is_empty() {
        return Ok(CircleLoss {
            loss: 0.0,
            grad_sp: 0.0,
            grad_sn: Vec::new(),
        });
    }
    let a = s * (m * m - (1.0 - s_p) * (1.0 - s_p));
    let z: Vec<f64> = s_n.iter().map(|&x| s * (x * x - m * m) - a).collect();
    // log(1 + sum e^z) = log(e^0 + sum e^z), stabilized by the largest term.
    let top = z.iter().copied().fold(0.0f64, f64::max);
    let rest: f64 = z.iter().map(|&v| (v - top).exp()).sum();
    let denom = (-top).exp() + rest;
    // With every z negative the loss is log1p of a possibly tiny sum.
    let loss = if top == 0.0 {
        rest.ln_1p()
    } else {
        top + denom.ln()
    };
    let p: Vec<f64> = z.iter().map(|&v| (v - top).exp() / denom).collect();
    let total: f64 = p.iter().sum();
    Ok(CircleLoss {
        loss,
        grad_sp: -total * 2.0 * s * (1.0 - s_p),
        grad_sn: p.iter().zip(s_n).map(|(pj, &x)| pj * 2.0 * s * x).collect(),
    })
}
