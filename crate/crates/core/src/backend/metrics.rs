//! Equal error rate and minimum detection cost.
//!
//! A trial is accepted when its score is at or above the threshold. Both
//! metrics sweep every distinct score plus `+inf` (accept nothing), so they
//! depend on the score order only.

use serde::{Deserialize, Serialize};

use crate::model::{ScoreSet, Trial, TrialKey};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    pub p_target: f64,
    pub c_fa: f64,
    pub c_miss: f64,
    pub normalized: bool,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            p_target: 0.05,
            c_fa: 1.0,
            c_miss: 1.0,
            normalized: true,
        }
    }
}

impl MetricParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(Error::param("p_target", "must lie in (0, 1)"));
        }
        if !(self.c_fa > 0.0 && self.c_miss > 0.0) {
            return Err(Error::param("costs", "must be positive"));
        }
        Ok(())
    }
}

/// Splits aligned scores into target and nontarget values.
pub fn split_by_key(scores: &ScoreSet, trials: &[Trial]) -> Result<(Vec<f64>, Vec<f64>)> {
    scores.check_aligned(trials)?;
    let (mut tar, mut non) = (Vec::new(), Vec::new());
    for (s, t) in scores.scores.iter().zip(trials) {
        match t.key {
            TrialKey::Target => tar.push(s.score),
            TrialKey::Nontarget => non.push(s.score),
            TrialKey::Unknown => {
                return Err(Error::param(
                    "trials",
                    format!("trial ({}, {}) has no key", t.enroll, t.test),
                ))
            }
        }
    }
    Ok((tar, non))
}

/// (P_miss, P_fa) at every threshold, thresholds ascending.
pub fn operating_points(targets: &[f64], nontargets: &[f64]) -> Result<Vec<(f64, f64)>> {
    if targets.is_empty() || nontargets.is_empty() {
        return Err(Error::Insufficient(
            "metrics need at least one target and one nontarget".into(),
        ));
    }
    if targets.iter().chain(nontargets).any(|x| x.is_nan()) {
        return Err(Error::Numerical("NaN score".into()));
    }
    let mut all: Vec<(f64, bool)> = targets
        .iter()
        .map(|&s| (s, true))
        .chain(nontargets.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nt, nn) = (targets.len() as f64, nontargets.len() as f64);
    let mut points = Vec::new();
    // Counts of scores strictly below the current threshold.
    let (mut miss, mut below_non) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        points.push((miss as f64 / nt, (nontargets.len() - below_non) as f64 / nn));
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                miss += 1;
            } else {
                below_non += 1;
            }
            i += 1;
        }
    }
    points.push((1.0, 0.0));
    Ok(points)
}

/// Crossing of the miss and false-alarm curves, linearly interpolated
/// between the two operating points that bracket it.
pub fn eer_from_points(points: &[(f64, f64)]) -> f64 {
    let mut prev = points[0];
    for &(pm, pf) in points {
        if pm >= pf {
            if pm == pf {
                return pm;
            }
            let d0 = prev.1 - prev.0;
            let d1 = pf - pm;
            let a = d0 / (d0 - d1);
            return prev.0 + a * (pm - prev.0);
        }
        prev = (pm, pf);
    }
    unreachable!("the last operating point always has P_miss = 1")
}

pub fn compute_eer(targets: &[f64], nontargets: &[f64]) -> Result<f64> {
    Ok(eer_from_points(&operating_points(targets, nontargets)?))
}

pub fn mindcf_from_points(points: &[(f64, f64)], params: &MetricParams) -> f64 {
    let w_miss = params.c_miss * params.p_target;
    let w_fa = params.c_fa * (1.0 - params.p_target);
    let best = points
        .iter()
        .map(|&(pm, pf)| w_miss * pm + w_fa * pf)
        .fold(f64::INFINITY, f64::min);
    if params.normalized {
        best / w_miss.min(w_fa)
    } else {
        best
    }
}

pub fn compute_mindcf(targets: &[f64], nontargets: &[f64], params: &MetricParams) -> Result<f64> {
    params.validate()?;
    Ok(mindcf_from_points(
        &operating_points(targets, nontargets)?,
        params,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eer_cases() {
        assert_eq!(compute_eer(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 0.0);
        let e = compute_eer(&[0.9, 0.8, 0.3], &[0.7, 0.2, 0.1]).unwrap();
        assert!((e - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(compute_eer(&[0.4; 5], &[0.4; 7]).unwrap(), 0.5);
        assert_eq!(compute_eer(&[0.1], &[0.9]).unwrap(), 1.0);
        assert!(compute_eer(&[], &[0.2]).is_err());
    }

    #[test]
    fn mindcf_cases() {
        let p = MetricParams::default();
        assert_eq!(compute_mindcf(&[0.9, 0.8], &[0.1, 0.2], &p).unwrap(), 0.0);
        assert_eq!(compute_mindcf(&[0.1, 0.2], &[0.8, 0.9], &p).unwrap(), 1.0);
        let raw = MetricParams {
            normalized: false,
            ..p
        };
        assert!((compute_mindcf(&[0.1, 0.2], &[0.8, 0.9], &raw).unwrap() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn split_requires_keys() {
        let mut s = ScoreSet::new();
        s.push("a", "b", 0.3);
        s.push("a", "c", 0.1);
        let trials = vec![
            Trial::new("a", "b", TrialKey::Target),
            Trial::new("a", "c", TrialKey::Nontarget),
        ];
        assert_eq!(split_by_key(&s, &trials).unwrap(), (vec![0.3], vec![0.1]));
        let unkeyed = vec![trials[0].clone(), Trial::new("a", "c", TrialKey::Unknown)];
        assert!(split_by_key(&s, &unkeyed).is_err());
    }
}
