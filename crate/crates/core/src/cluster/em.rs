//! Two-component 1-D Gaussian mixture fitted by expectation-maximization.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 200;
pub const TOLERANCE: f64 = 1e-8;

/// Component 1 is the higher-mean ("max") Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoGaussianFit {
    pub mu1: f64,
    pub sigma1: f64,
    pub w1: f64,
    pub mu2: f64,
    pub sigma2: f64,
    pub w2: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// All scores were identical; no mixture was fitted.
    pub degenerate: bool,
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn log_normal(x: f64, mu: f64, var: f64) -> f64 {
    let d = x - mu;
    -0.5 * d * d / var - 0.5 * var.ln() - LN_SQRT_2PI
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mu = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    (mu, var.max(VARIANCE_FLOOR))
}

/// Fits the mixture; `trace` receives the log-likelihood evaluated at the
/// start of every iteration (and once more at the final parameters).
pub fn fit_two_gaussian_traced(scores: &[f64], trace: &mut Vec<f64>) -> Result<TwoGaussianFit> {
    if scores.len() < 2 {
        return Err(Error::Insufficient(format!(
            "two-Gaussian fit needs at least 2 scores, got {}",
            scores.len()
        )));
    }
    if scores.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite score in mixture fit".into()));
    }
    let first = scores[0];
    if scores.iter().all(|&x| x == first) {
        return Ok(TwoGaussianFit {
            mu1: first,
            sigma1: VARIANCE_FLOOR.sqrt(),
            w1: 0.5,
            mu2: first,
            sigma2: VARIANCE_FLOOR.sqrt(),
            w2: 0.5,
            log_likelihood: 0.0,
            iterations: 0,
            degenerate: true,
        });
    }

    // Median split initialization.
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let half = sorted.len() / 2;
    let (lo, hi) = sorted.split_at(half);
    let (mut mu_hi, mut var_hi) = mean_var(hi);
    let (mut mu_lo, mut var_lo) = mean_var(lo);
    let (mut w_hi, mut w_lo) = (0.5f64, 0.5f64);

    let n = scores.len() as f64;
    let mut resp_hi = vec![0.0; scores.len()];
    let mut prev_ll = f64::NEG_INFINITY;
    let mut iterations = 0;
    let mut ll;
    loop {
        // E-step.
        ll = 0.0;
        let (lw_hi, lw_lo) = (w_hi.ln(), w_lo.ln());
        for (r, &x) in resp_hi.iter_mut().zip(scores) {
            let a = lw_hi + log_normal(x, mu_hi, var_hi);
            let b = lw_lo + log_normal(x, mu_lo, var_lo);
            let total = log_add(a, b);
            ll += total;
            *r = (a - total).exp();
        }
        trace.push(ll);
        debug_assert!(
            ll >= prev_ll - 1e-9 * (1.0 + ll.abs()),
            "EM log-likelihood decreased: {prev_ll} -> {ll}"
        );
        if iterations > 0 && (ll - prev_ll).abs() < TOLERANCE {
            break;
        }
        if iterations == MAX_ITERATIONS {
            break;
        }
        prev_ll = ll;
        iterations += 1;

        // M-step; a component with no responsibility keeps its location.
        let n_hi: f64 = resp_hi.iter().sum();
        let n_lo = n - n_hi;
        if n_hi > 1e-12 {
            mu_hi = resp_hi.iter().zip(scores).map(|(r, x)| r * x).sum::<f64>() / n_hi;
            var_hi = (resp_hi
                .iter()
                .zip(scores)
                .map(|(r, x)| r * (x - mu_hi) * (x - mu_hi))
                .sum::<f64>()
                / n_hi)
                .max(VARIANCE_FLOOR);
        }
        if n_lo > 1e-12 {
            mu_lo = resp_hi
                .iter()
                .zip(scores)
                .map(|(r, x)| (1.0 - r) * x)
                .sum::<f64>()
                / n_lo;
            var_lo = (resp_hi
                .iter()
                .zip(scores)
                .map(|(r, x)| (1.0 - r) * (x - mu_lo) * (x - mu_lo))
                .sum::<f64>()
                / n_lo)
                .max(VARIANCE_FLOOR);
        }
        w_hi = n_hi / n;
        w_lo = 1.0 - w_hi;
    }

    let (mut c1, mut c2) = ((mu_hi, var_hi.sqrt(), w_hi), (mu_lo, var_lo.sqrt(), w_lo));
    if c2.0 > c1.0 {
        std::mem::swap(&mut c1, &mut c2);
    }
    Ok(TwoGaussianFit {
        mu1: c1.0,
        sigma1: c1.1,
        w1: c1.2,
        mu2: c2.0,
        sigma2: c2.1,
        w2: c2.2,
        log_likelihood: ll,
        iterations,
        degenerate: false,
    })
}

pub fn fit_two_gaussian(scores: &[f64]) -> Result<TwoGaussianFit> {
    fit_two_gaussian_traced(scores, &mut Vec::new())
}
