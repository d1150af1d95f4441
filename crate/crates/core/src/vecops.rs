//! Small dense-vector helpers shared across modules.

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unit-normalizes in place. Zero vectors stay zero.
pub(crate) fn normalize(a: &mut [f64]) {
    let n = norm(a);
    if n > 0.0 {
        a.iter_mut().for_each(|x| *x /= n);
    }
}

pub(crate) fn to_f64(row: &[f32]) -> Vec<f64> {
    row.iter().map(|&x| x as f64).collect()
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Row-major matrix of unit-normalized rows, stored in f64.
#[derive(Debug, Clone)]
pub(crate) struct UnitRows {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl UnitRows {
    pub fn from_set(set: &crate::EmbeddingSet) -> Self {
        let dim = set.dim();
        let mut data = Vec::with_capacity(set.len() * dim);
        for i in 0..set.len() {
            let mut row = to_f64(set.row(i));
            normalize(&mut row);
            data.extend_from_slice(&row);
        }
        UnitRows { dim, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim.max(1)
    }
}
