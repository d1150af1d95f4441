//! Core data types and their on-disk formats.

mod binary;
mod dedup;
mod text;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use binary::{read_embeddings, write_embeddings, MAGIC, VERSION};
pub use dedup::{dedup_by_content_hash, dedup_embeddings, dedup_files, DedupOutcome};
pub use text::{
    parse_labels, parse_scores, parse_trials, write_labels, write_scores, write_trials,
};

/// Ordered collection of `(utterance id, vector)` records of a fixed dimension.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDim);
        }
        Ok(EmbeddingSet {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn with_capacity(dim: usize, n: usize) -> Result<Self> {
        let mut set = Self::new(dim)?;
        set.ids.reserve(n);
        set.data.reserve(n * dim);
        set.index.reserve(n);
        Ok(set)
    }

    /// Appends a record, enforcing dimension, finiteness and id uniqueness.
    pub fn push(&mut self, id: impl Into<String>, vector: &[f32]) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        if id.is_empty() || id.len() > u16::MAX as usize {
            return Err(Error::IdLength(id));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { id });
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    /// Appends a record given in f64; components are rounded to f32.
    pub fn push_f64(&mut self, id: impl Into<String>, vector: &[f64]) -> Result<()> {
        let v: Vec<f32> = vector.iter().map(|&x| x as f32).collect();
        self.push(id, &v)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index_of(id).map(|i| self.row(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .enumerate()
            .map(move |(i, id)| (id.as_str(), self.row(i)))
    }

    /// New set holding the records at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut out = Self::with_capacity(self.dim, indices.len())?;
        for &i in indices {
            out.push(self.ids[i].clone(), self.row(i))?;
        }
        Ok(out)
    }

    /// Same ids, every vector replaced through `f` (f64 in, rounded to f32).
    pub fn map_rows(&self, mut f: impl FnMut(&[f32]) -> Vec<f64>) -> Result<Self> {
        let mut out = Self::with_capacity(self.dim, self.len())?;
        for (id, row) in self.iter() {
            out.push_f64(id, &f(row))?;
        }
        Ok(out)
    }

    /// Copy with every vector scaled to unit length (zero vectors unchanged).
    pub fn normalized(&self) -> Result<Self> {
        self.map_rows(|row| {
            let mut v = crate::vecops::to_f64(row);
            crate::vecops::normalize(&mut v);
            v
        })
    }
}

impl PartialEq for EmbeddingSet {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.ids == other.ids
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// One embedding set per extractor model, all over the same utterances in the
/// same order.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewBundle {
    views: Vec<EmbeddingSet>,
}

impl ViewBundle {
    pub fn new(views: Vec<EmbeddingSet>) -> Result<Self> {
        let Some(first) = views.first() else {
            return Err(Error::Empty("view bundle"));
        };
        for (t, v) in views.iter().enumerate().skip(1) {
            if v.ids() != first.ids() {
                return Err(Error::ViewMismatch(t));
            }
        }
        Ok(ViewBundle { views })
    }

    pub fn views(&self) -> &[EmbeddingSet] {
        &self.views
    }

    pub fn view(&self, t: usize) -> &EmbeddingSet {
        &self.views[t]
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn len(&self) -> usize {
        self.views[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> &[String] {
        self.views[0].ids()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.views[0].index_of(id)
    }

    pub fn into_views(self) -> Vec<EmbeddingSet> {
        self.views
    }
}

/// Label assigned to utterances that were filtered out or discarded.
pub const UNASSIGNED: i64 = -1;

/// Mapping from utterance id to class label; `-1` means discarded.
///
/// Insertion order is preserved so that label files round-trip line by line.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    assignments: IndexMap<String, i64>,
}

impl Partition {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or overwrites a label. Labels below -1 are rejected.
    pub fn insert(&mut self, id: impl Into<String>, label: i64) -> Result<()> {
        if label < UNASSIGNED {
            return Err(Error::param("label", format!("{label} is below -1")));
        }
        self.assignments.insert(id.into(), label);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<i64> {
        self.assignments.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, i64)> {
        self.assignments.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.assignments.keys().map(String::as_str)
    }

    /// Distinct labels other than -1.
    pub fn labels(&self) -> BTreeSet<i64> {
        self.assignments
            .values()
            .copied()
            .filter(|&l| l != UNASSIGNED)
            .collect()
    }

    /// Members of every class other than -1, in insertion order.
    pub fn classes(&self) -> BTreeMap<i64, Vec<String>> {
        let mut out: BTreeMap<i64, Vec<String>> = BTreeMap::new();
        for (id, l) in self.iter() {
            if l != UNASSIGNED {
                out.entry(l).or_default().push(id.to_string());
            }
        }
        out
    }

    pub fn num_classes(&self) -> usize {
        self.labels().len()
    }

    pub fn retained(&self) -> usize {
        self.assignments
            .values()
            .filter(|&&l| l != UNASSIGNED)
            .count()
    }

    /// Relabels classes to 0..N-1 in order of first appearance.
    pub fn compacted(&self) -> Partition {
        let mut remap: HashMap<i64, i64> = HashMap::new();
        let mut out = Partition::new();
        for (id, l) in self.iter() {
            let nl = if l == UNASSIGNED {
                UNASSIGNED
            } else {
                let next = remap.len() as i64;
                *remap.entry(l).or_insert(next)
            };
            out.assignments.insert(id.to_string(), nl);
        }
        out
    }
}

impl FromIterator<(String, i64)> for Partition {
    fn from_iter<I: IntoIterator<Item = (String, i64)>>(iter: I) -> Self {
        Partition {
            assignments: iter
                .into_iter()
                .map(|(k, v)| (k, v.max(UNASSIGNED)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialKey {
    Target,
    Nontarget,
    Unknown,
}

impl fmt::Display for TrialKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrialKey::Target => "target",
            TrialKey::Nontarget => "nontarget",
            TrialKey::Unknown => "unknown",
        })
    }
}

impl FromStr for TrialKey {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "target" => Ok(TrialKey::Target),
            "nontarget" => Ok(TrialKey::Nontarget),
            "unknown" => Ok(TrialKey::Unknown),
            other => Err(format!("unknown trial key '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub key: TrialKey,
}

impl Trial {
    pub fn new(enroll: impl Into<String>, test: impl Into<String>, key: TrialKey) -> Self {
        Trial {
            enroll: enroll.into(),
            test: test.into(),
            key,
        }
    }
}

pub type TrialSet = Vec<Trial>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub enroll: String,
    pub test: String,
    pub score: f64,
}

/// Scores aligned 1:1 by position with a trial list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub scores: Vec<Score>,
}

impl ScoreSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, enroll: impl Into<String>, test: impl Into<String>, score: f64) {
        self.scores.push(Score {
            enroll: enroll.into(),
            test: test.into(),
            score,
        });
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.score).collect()
    }

    /// Same pairs with every score replaced by `f(score)`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScoreSet {
        ScoreSet {
            scores: self
                .scores
                .iter()
                .map(|s| Score {
                    enroll: s.enroll.clone(),
                    test: s.test.clone(),
                    score: f(s.score),
                })
                .collect(),
        }
    }

    /// Checks that this set lines up with `trials` position by position.
    pub fn check_aligned(&self, trials: &[Trial]) -> Result<()> {
        if self.len() != trials.len() {
            return Err(Error::param(
                "scores",
                format!("{} scores for {} trials", self.len(), trials.len()),
            ));
        }
        for (i, (s, t)) in self.scores.iter().zip(trials).enumerate() {
            if s.enroll != t.enroll || s.test != t.test {
                return Err(Error::param(
                    "scores",
                    format!(
                        "row {} pairs ({}, {}) but trial is ({}, {})",
                        i + 1,
                        s.enroll,
                        s.test,
                        t.enroll,
                        t.test
                    ),
                ));
            }
        }
        Ok(())
    }
}
