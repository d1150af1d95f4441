//! Logistic regression for calibration (QMF) and fusion.

use serde::{Deserialize, Serialize};

use crate::model::ScoreSet;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogRegModel {
    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim];
        if dim > 0 {
            weights[0] = 1.0;
        }
        LogRegModel { weights, bias: 0.0 }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::param("weights", "model has no weights"));
        }
        if self
            .weights
            .iter()
            .chain([&self.bias])
            .any(|x| !x.is_finite())
        {
            return Err(Error::Numerical("non-finite model parameter".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub l2: f64,
    pub lr: f64,
    pub iters: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2: 1e-4,
            lr: 0.5,
            iters: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: LogRegModel,
    /// Loss before training and after every iteration.
    pub loss_trace: Vec<f64>,
    pub warnings: Vec<String>,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean cross-entropy plus `l2/2 * |w|^2` (the bias is not penalized).
pub fn logreg_loss(model: &LogRegModel, x: &[Vec<f64>], y: &[bool], l2: f64) -> f64 {
    let ce: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &t)| {
            let z = model.logit(row);
            if t {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum::<f64>()
        / x.len() as f64;
    ce + 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>()
}

fn gradient(model: &LogRegModel, x: &[Vec<f64>], y: &[bool], l2: f64) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut gw = vec![0.0; model.weights.len()];
    let mut gb = 0.0;
    for (row, &t) in x.iter().zip(y) {
        let r = sigmoid(model.logit(row)) - if t { 1.0 } else { 0.0 };
        for (g, v) in gw.iter_mut().zip(row) {
            *g += r * v;
        }
        gb += r;
    }
    for (g, w) in gw.iter_mut().zip(&model.weights) {
        *g = *g / n + l2 * w;
    }
    (gw, gb / n)
}

/// Full-batch gradient descent from zero weights. A step that would raise
/// the loss is halved until it does not, so the trace never increases.
pub fn train_logreg(x: &[Vec<f64>], y: &[bool], cfg: &LogRegConfig) -> Result<TrainReport> {
    if x.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if x.len() != y.len() {
        return Err(Error::param(
            "labels",
            format!("{} rows but {} labels", x.len(), y.len()),
        ));
    }
    let dim = x[0].len();
    if dim == 0 {
        return Err(Error::ZeroDim);
    }
    if let Some(r) = x.iter().find(|r| r.len() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            found: r.len(),
        });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite feature".into()));
    }
    if !(cfg.lr > 0.0 && cfg.l2 >= 0.0) {
        return Err(Error::param(
            "lr",
            "lr must be positive and l2 non-negative",
        ));
    }
    let mut warnings = Vec::new();
    for d in 0..dim {
        let first = x[0][d];
        if x.iter().all(|r| r[d] == first) {
            let msg = format!("feature {d} has zero variance");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }

    let mut model = LogRegModel {
        weights: vec![0.0; dim],
        bias: 0.0,
    };
    let mut loss = logreg_loss(&model, x, y, cfg.l2);
    let mut trace = vec![loss];
    for _ in 0..cfg.iters {
        let (gw, gb) = gradient(&model, x, y, cfg.l2);
        let mut step = cfg.lr;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = LogRegModel {
                weights: model
                    .weights
                    .iter()
                    .zip(&gw)
                    .map(|(w, g)| w - step * g)
                    .collect(),
                bias: model.bias - step * gb,
            };
            let l = logreg_loss(&cand, x, y, cfg.l2);
            if l <= loss {
                accepted = Some((cand, l));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((m, l)) => {
                model = m;
                loss = l;
                trace.push(l);
            }
            None => break,
        }
    }
    Ok(TrainReport {
        model,
        loss_trace: trace,
        warnings,
    })
}

/// Calibrated score `w . [score, quality...] + b`.
pub fn apply_qmf(scores: &ScoreSet, quality: &[Vec<f64>], model: &LogRegModel) -> Result<ScoreSet> {
    model.validate()?;
    if !quality.is_empty() && quality.len() != scores.len() {
        return Err(Error::param(
            "quality",
            format!("{} quality rows for {} scores", quality.len(), scores.len()),
        ));
    }
    let mut out = ScoreSet::new();
    let mut x = Vec::with_capacity(model.weights.len());
    for (i, s) in scores.scores.iter().enumerate() {
        x.clear();
        x.push(s.score);
        if let Some(q) = quality.get(i) {
            x.extend_from_slice(q);
        }
        if x.len() != model.weights.len() {
            return Err(Error::DimMismatch {
                expected: model.weights.len(),
                found: x.len(),
            });
        }
        out.push(s.enroll.clone(), s.test.clone(), model.logit(&x));
    }
    Ok(out)
}

fn check_systems(sets: &[ScoreSet], n_weights: usize) -> Result<()> {
    if sets.is_empty() {
        return Err(Error::Empty("no score sets to fuse"));
    }
    if sets.len() != n_weights {
        return Err(Error::param(
            "weights",
            format!("{} weights for {} systems", n_weights, sets.len()),
        ));
    }
    let first = &sets[0];
    for other in &sets[1..] {
        if other.len() != first.len()
            || other
                .scores
                .iter()
                .zip(&first.scores)
                .any(|(a, b)| a.enroll != b.enroll || a.test != b.test)
        {
            return Err(Error::param("scores", "score sets are not aligned"));
        }
    }
    Ok(())
}

pub fn fuse(sets: &[ScoreSet], weights: &[f64]) -> Result<ScoreSet> {
    check_systems(sets, weights.len())?;
    let mut out = ScoreSet::new();
    for i in 0..sets[0].len() {
        let v = sets
            .iter()
            .zip(weights)
            .map(|(s, w)| w * s.scores[i].score)
            .sum();
        let r = &sets[0].scores[i];
        out.push(r.enroll.clone(), r.test.clone(), v);
    }
    Ok(out)
}

/// Fusion with trained LR weights and bias.
pub fn fuse_with_model(sets: &[ScoreSet], model: &LogRegModel) -> Result<ScoreSet> {
    model.validate()?;
    let b = model.bias;
    Ok(fuse(sets, &model.weights)?.map(|v| v + b))
}

/// Per-trial feature rows `[s_1, ..., s_n]` from aligned systems.
pub fn stack_scores(sets: &[ScoreSet]) -> Result<Vec<Vec<f64>>> {
    check_systems(sets, sets.len())?;
    Ok((0..sets[0].len())
        .map(|i| sets.iter().map(|s| s.scores[i].score).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn separable_1d() {
        let x: Vec<Vec<f64>> = [-2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0]
            .iter()
            .map(|&v| vec![v])
            .collect();
        let y: Vec<bool> = x.iter().map(|r| r[0] > 0.0).collect();
        let rep = train_logreg(&x, &y, &LogRegConfig::default()).unwrap();
        assert!(rep.model.weights[0] > 0.0);
        let acc = x
            .iter()
            .zip(&y)
            .filter(|(r, &t)| (rep.model.logit(r) > 0.0) == t)
            .count();
        assert_eq!(acc, x.len());
        for w in rep.loss_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn constant_labels_give_small_weights() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![(i as f64 - 10.0) / 10.0]).collect();
        let y = vec![true; 20];
        let cfg = LogRegConfig {
            l2: 0.1,
            ..LogRegConfig::default()
        };
        let rep = train_logreg(&x, &y, &cfg).unwrap();
        assert!(rep.model.weights[0].abs() < 0.05, "{:?}", rep.model);
        assert!(rep.model.bias > 1.0);
    }

    #[test]
    fn zero_variance_warns() {
        let x = vec![vec![1.0, 0.0], vec![1.0, 1.0]];
        let rep = train_logreg(&x, &[false, true], &LogRegConfig::default()).unwrap();
        assert_eq!(rep.warnings.len(), 1);
    }

    #[test]
    fn matches_plain_gradient_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..400 {
            let t = i % 2 == 0;
            let shift = if t { 1.0 } else { -1.0 };
            x.push(vec![
                n.sample(&mut rng) + shift,
                n.sample(&mut rng) - 0.5 * shift,
            ]);
            y.push(t);
        }
        let cfg = LogRegConfig {
            l2: 1e-3,
            lr: 0.1,
            iters: 200,
        };
        let rep = train_logreg(&x, &y, &cfg).unwrap();

        // reference: fixed-step descent written out directly
        let (mut w0, mut w1, mut b) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..cfg.iters {
            let (mut g0, mut g1, mut gb) = (0.0, 0.0, 0.0);
            for (r, &t) in x.iter().zip(&y) {
                let p = 1.0 / (1.0 + (-(w0 * r[0] + w1 * r[1] + b)).exp());
                let e = p - if t { 1.0 } else { 0.0 };
                g0 += e * r[0];
                g1 += e * r[1];
                gb += e;
            }
            let m = x.len() as f64;
            w0 -= cfg.lr * (g0 / m + cfg.l2 * w0);
            w1 -= cfg.lr * (g1 / m + cfg.l2 * w1);
            b -= cfg.lr * gb / m;
        }
        let mut reference = 0.0;
        for (r, &t) in x.iter().zip(&y) {
            let p = 1.0 / (1.0 + (-(w0 * r[0] + w1 * r[1] + b)).exp());
            reference -= if t { p.ln() } else { (1.0 - p).ln() };
        }
        reference = reference / x.len() as f64 + 0.5 * cfg.l2 * (w0 * w0 + w1 * w1);
        assert!((rep.loss_trace.last().unwrap() - reference).abs() < 1e-3);
    }

    #[test]
    fn qmf_and_fusion() {
        let mut s = ScoreSet::new();
        s.push("a", "b", 0.6);
        s.push("a", "c", -0.2);
        let id = apply_qmf(&s, &[], &LogRegModel::identity(1)).unwrap();
        assert_eq!(id, s);
        let m = LogRegModel {
            weights: vec![2.0],
            bias: -1.0,
        };
        assert!((apply_qmf(&s, &[], &m).unwrap().scores[0].score - 0.2).abs() < 1e-12);
        assert!(apply_qmf(&s, &[vec![1.0], vec![2.0]], &m).is_err());

        assert_eq!(fuse(&[s.clone()], &[1.0]).unwrap(), s);
        assert_eq!(fuse(&[s.clone(), s.clone()], &[0.5, 0.5]).unwrap(), s);
        let mut other = ScoreSet::new();
        other.push("a", "x", 0.1);
        other.push("a", "c", 0.1);
        assert!(fuse(&[s.clone(), other], &[0.5, 0.5]).is_err());
        assert!(fuse(&[s], &[0.5, 0.5]).is_err());
    }
}
