//! Embedding-space domain adaptation: mean alignment and CORAL
//! (correlation alignment) whitening/recoloring.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::model::EmbeddingSet;
use crate::{Error, Result};

/// Eigenvalues below this are clamped before taking square roots.
pub const EIGEN_FLOOR: f64 = 1e-10;
pub const DEFAULT_RIDGE: f64 = 1e-4;

/// First and second moments of a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStats {
    pub mean: Vec<f64>,
    /// Row-major `dim × dim`, unbiased (n - 1) estimate.
    pub covariance: Vec<f64>,
    pub count: usize,
}

impl DomainStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.covariance)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || self.covariance.len() != d * d {
            return Err(Error::param(
                "stats",
                "covariance shape does not match mean",
            ));
        }
        if self.count == 0 {
            return Err(Error::param("stats", "count must be positive"));
        }
        Ok(())
    }
}

pub fn compute_stats(set: &EmbeddingSet) -> Result<DomainStats> {
    let n = set.len();
    if n == 0 {
        return Err(Error::Empty("embedding set"));
    }
    let d = set.dim();
    let mut mean = vec![0.0; d];
    for (_, row) in set.iter() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = vec![0.0; d * d];
    if n >= 2 {
        let mut centered = vec![0.0; d];
        for (_, row) in set.iter() {
            for ((c, &x), m) in centered.iter_mut().zip(row).zip(&mean) {
                *c = x as f64 - m;
            }
            for a in 0..d {
                let ca = centered[a];
                for b in a..d {
                    cov[a * d + b] += ca * centered[b];
                }
            }
        }
        let denom = (n - 1) as f64;
        for a in 0..d {
            for b in a..d {
                let v = cov[a * d + b] / denom;
                cov[a * d + b] = v;
                cov[b * d + a] = v;
            }
        }
    }
    Ok(DomainStats {
        mean,
        covariance: cov,
        count: n,
    })
}

fn check_dims(set: &EmbeddingSet, stats: &[&DomainStats]) -> Result<()> {
    for s in stats {
        s.validate()?;
        if s.dim() != set.dim() {
            return Err(Error::DimMismatch {
                expected: set.dim(),
                found: s.dim(),
            });
        }
    }
    Ok(())
}

/// Shifts every vector by `source_mean - target_mean`.
pub fn mean_align(
    target: &EmbeddingSet,
    target_stats: &DomainStats,
    source_stats: &DomainStats,
) -> Result<EmbeddingSet> {
    check_dims(target, &[target_stats, source_stats])?;
    target.map_rows(|row| {
        row.iter()
            .zip(&target_stats.mean)
            .zip(&source_stats.mean)
            .map(|((&x, mt), ms)| x as f64 - mt + ms)
            .collect()
    })
}

/// Symmetric matrix power via eigendecomposition with eigenvalue floor.
fn sym_power(m: &DMatrix<f64>, power: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::try_new(m.clone(), 1e-14, 10_000)
        .ok_or_else(|| Error::Numerical("symmetric eigendecomposition did not converge".into()))?;
    let vals = eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR).powf(power));
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&vals) * v.transpose())
}

/// Linear map taking the target second moments onto the source ones:
/// `(C_s + rI)^{1/2} (C_t + rI)^{-1/2}`.
pub fn coral_matrix(
    target_stats: &DomainStats,
    source_stats: &DomainStats,
    ridge: f64,
) -> Result<DMatrix<f64>> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::param("ridge", "must be finite and non-negative"));
    }
    let d = target_stats.dim();
    if source_stats.dim() != d {
        return Err(Error::DimMismatch {
            expected: d,
            found: source_stats.dim(),
        });
    }
    let eye = DMatrix::<f64>::identity(d, d) * ridge;
    let ct = target_stats.covariance_matrix() + &eye;
    let cs = source_stats.covariance_matrix() + &eye;
    Ok(sym_power(&cs, 0.5)? * sym_power(&ct, -0.5)?)
}

/// Centers on the target mean, whitens by the target covariance, recolors by
/// the source covariance and re-adds the source mean.
pub fn coral_transform(
    target: &EmbeddingSet,
    target_stats: &DomainStats,
    source_stats: &DomainStats,
    ridge: f64,
) -> Result<EmbeddingSet> {
    check_dims(target, &[target_stats, source_stats])?;
    let a = coral_matrix(target_stats, source_stats, ridge)?;
    let mt = DVector::from_column_slice(&target_stats.mean);
    let ms = DVector::from_column_slice(&source_stats.mean);
    target.map_rows(|row| {
        let x = DVector::from_iterator(row.len(), row.iter().map(|&v| v as f64));
        let y = &a * (x - &mt) + &ms;
        y.as_slice().to_vec()
    })
}
