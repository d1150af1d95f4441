//! Cosine trial scoring and adaptive score normalization.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{EmbeddingSet, ScoreSet, Trial};
use crate::vecops::{cosine, dot, normalize, to_f64, UnitRows};
use crate::{Error, Result};

fn lookup<'a>(set: &'a EmbeddingSet, id: &str) -> Result<&'a [f32]> {
    set.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))
}

pub fn cosine_score(
    trials: &[Trial],
    enroll: &EmbeddingSet,
    test: &EmbeddingSet,
) -> Result<ScoreSet> {
    if enroll.dim() != test.dim() {
        return Err(Error::DimMismatch {
            expected: enroll.dim(),
            found: test.dim(),
        });
    }
    let values: Vec<f64> = trials
        .par_iter()
        .map(|t| {
            let e = to_f64(lookup(enroll, &t.enroll)?);
            let s = to_f64(lookup(test, &t.test)?);
            Ok(cosine(&e, &s))
        })
        .collect::<Result<_>>()?;
    let mut out = ScoreSet::new();
    for (t, v) in trials.iter().zip(values) {
        out.push(t.enroll.clone(), t.test.clone(), v);
    }
    Ok(out)
}

/// Mean of the full enroll × test cosine matrix.
pub fn cross_segment_score(enroll: &[Vec<f64>], test: &[Vec<f64>]) -> Result<f64> {
    if enroll.is_empty() || test.is_empty() {
        return Err(Error::Empty("segment list"));
    }
    let mut total = 0.0;
    for e in enroll {
        for t in test {
            if e.len() != t.len() {
                return Err(Error::DimMismatch {
                    expected: e.len(),
                    found: t.len(),
                });
            }
            total += cosine(e, t);
        }
    }
    Ok(total / (enroll.len() * test.len()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsNormConfig {
    pub top_n: usize,
    /// Subtract the imposter means only, without dividing by their spread.
    pub remove_variance: bool,
}

impl Default for AsNormConfig {
    fn default() -> Self {
        AsNormConfig {
            top_n: 400,
            remove_variance: true,
        }
    }
}

fn top_stats(cohort_scores: &[f64], top_n: usize) -> Result<(f64, f64)> {
    if top_n == 0 {
        return Err(Error::param("top_n", "must be positive"));
    }
    if top_n > cohort_scores.len() {
        return Err(Error::param(
            "top_n",
            format!("{} exceeds cohort size {}", top_n, cohort_scores.len()),
        ));
    }
    let mut s = cohort_scores.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let top = &s[..top_n];
    let mu = top.iter().sum::<f64>() / top_n as f64;
    let var = top.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / top_n as f64;
    Ok((mu, var.sqrt()))
}

/// Normalizes one raw score given the cohort scores of each trial side.
pub fn adaptive_norm(
    score: f64,
    enroll_cohort: &[f64],
    test_cohort: &[f64],
    cfg: &AsNormConfig,
) -> Result<f64> {
    let (mu_e, sd_e) = top_stats(enroll_cohort, cfg.top_n)?;
    let (mu_t, sd_t) = top_stats(test_cohort, cfg.top_n)?;
    if cfg.remove_variance {
        return Ok(score - (mu_e + mu_t) / 2.0);
    }
    if sd_e == 0.0 || sd_t == 0.0 {
        return Err(Error::Numerical("imposter scores have zero spread".into()));
    }
    Ok(((score - mu_e) / sd_e + (score - mu_t) / sd_t) / 2.0)
}

/// AS-norm against a cohort of (speaker-averaged) embeddings. The cohort is
/// assumed disjoint from trial speakers.
pub fn as_norm(
    scores: &ScoreSet,
    enroll: &EmbeddingSet,
    test: &EmbeddingSet,
    cohort: &EmbeddingSet,
    cfg: &AsNormConfig,
) -> Result<ScoreSet> {
    if cfg.top_n > cohort.len() {
        return Err(Error::param(
            "top_n",
            format!("{} exceeds cohort size {}", cfg.top_n, cohort.len()),
        ));
    }
    for set in [enroll, test] {
        if set.dim() != cohort.dim() {
            return Err(Error::DimMismatch {
                expected: cohort.dim(),
                found: set.dim(),
            });
        }
    }
    let rows = UnitRows::from_set(cohort);
    let cohort_scores = |v: &[f32]| -> Vec<f64> {
        let mut x = to_f64(v);
        normalize(&mut x);
        (0..rows.len())
            .map(|c| dot(&x, rows.row(c)).clamp(-1.0, 1.0))
            .collect()
    };

    // Each distinct side is scored against the cohort once.
    let mut enroll_ids: Vec<&str> = scores.scores.iter().map(|s| s.enroll.as_str()).collect();
    enroll_ids.sort_unstable();
    enroll_ids.dedup();
    let mut test_ids: Vec<&str> = scores.scores.iter().map(|s| s.test.as_str()).collect();
    test_ids.sort_unstable();
    test_ids.dedup();
    let side = |set: &EmbeddingSet, ids: &[&str]| -> Result<HashMap<String, Vec<f64>>> {
        ids.par_iter()
            .map(|id| Ok((id.to_string(), cohort_scores(lookup(set, id)?))))
            .collect()
    };
    let e_cache = side(enroll, &enroll_ids)?;
    let t_cache = side(test, &test_ids)?;

    let values: Vec<f64> = scores
        .scores
        .par_iter()
        .map(|s| adaptive_norm(s.score, &e_cache[&s.enroll], &t_cache[&s.test], cfg))
        .collect::<Result<_>>()?;
    let mut out = ScoreSet::new();
    for (s, v) in scores.scores.iter().zip(values) {
        out.push(s.enroll.clone(), s.test.clone(), v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TrialKey;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(rows: &[(&str, &[f32])]) -> EmbeddingSet {
        let mut s = EmbeddingSet::new(rows[0].1.len()).unwrap();
        for (id, v) in rows {
            s.push(*id, v).unwrap();
        }
        s
    }

    #[test]
    fn cosine_cases() {
        let r = std::f32::consts::FRAC_1_SQRT_2;
        let e = set(&[("a", &[1.0, 0.0]), ("b", &[r, r])]);
        let t = set(&[("x", &[1.0, 0.0]), ("y", &[0.0, 1.0])]);
        let trials = vec![
            Trial::new("a", "x", TrialKey::Target),
            Trial::new("a", "y", TrialKey::Nontarget),
            Trial::new("b", "x", TrialKey::Unknown),
        ];
        let s = cosine_score(&trials, &e, &t).unwrap();
        assert_eq!(s.scores[0].score, 1.0);
        assert_eq!(s.scores[1].score, 0.0);
        assert!((s.scores[2].score - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(cosine_score(&[Trial::new("zz", "x", TrialKey::Unknown)], &e, &t).is_err());
    }

    #[test]
    fn cross_segment_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut draw = || -> Vec<Vec<f64>> {
            (0..10)
                .map(|_| (0..16).map(|_| rng.random::<f64>() - 0.5).collect())
                .collect()
        };
        let (a, b) = (draw(), draw());
        let mut oracle = 0.0;
        for x in &a {
            for y in &b {
                let d: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
                let nx = x.iter().map(|p| p * p).sum::<f64>().sqrt();
                let ny = y.iter().map(|p| p * p).sum::<f64>().sqrt();
                oracle += d / (nx * ny);
            }
        }
        oracle /= 100.0;
        assert!((cross_segment_score(&a, &b).unwrap() - oracle).abs() < 1e-9);

        let same = vec![vec![0.6, 0.8]; 10];
        assert!((cross_segment_score(&same, &same).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            cross_segment_score(&a[..1], &b[..1]).unwrap(),
            cosine(&a[0], &b[0])
        );
        assert!(cross_segment_score(&[], &b).is_err());
    }

    #[test]
    fn adaptive_norm_hand_case() {
        let cfg = AsNormConfig {
            top_n: 2,
            remove_variance: true,
        };
        let s = adaptive_norm(0.8, &[0.4, 0.2, -0.1], &[0.2, 0.0, -0.3], &cfg).unwrap();
        assert!((s - 0.6).abs() < 1e-12);

        let standard = AsNormConfig {
            top_n: 2,
            remove_variance: false,
        };
        // sd_e = sd_t = 0.1
        let s = adaptive_norm(0.8, &[0.4, 0.2, -0.1], &[0.2, 0.0, -0.3], &standard).unwrap();
        assert!((s - (5.0 + 7.0) / 2.0).abs() < 1e-9);
        assert!(adaptive_norm(0.8, &[0.4], &[0.2], &cfg).is_err());
    }

    #[test]
    fn orthogonal_cohort_leaves_scores() {
        let e = set(&[("a", &[1.0, 0.0, 0.0, 0.0])]);
        let t = set(&[("x", &[0.6, 0.8, 0.0, 0.0])]);
        let cohort = set(&[("c1", &[0.0, 0.0, 1.0, 0.0]), ("c2", &[0.0, 0.0, 0.0, 1.0])]);
        let trials = vec![Trial::new("a", "x", TrialKey::Target)];
        let raw = cosine_score(&trials, &e, &t).unwrap();
        let cfg = AsNormConfig {
            top_n: 2,
            remove_variance: true,
        };
        let n = as_norm(&raw, &e, &t, &cohort, &cfg).unwrap();
        assert!((n.scores[0].score - raw.scores[0].score).abs() < 1e-12);
        let too_many = AsNormConfig { top_n: 3, ..cfg };
        assert!(as_norm(&raw, &e, &t, &cohort, &too_many).is_err());
    }
}
