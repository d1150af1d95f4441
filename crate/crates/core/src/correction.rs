//! Pseudo-label correction by class-center confidence and multi-view merge
//! voting.
//!
//! Per view, every utterance is scored against all class centers and lands in
//! a confidence band from its two best center similarities. Median-band
//! utterances whose two best classes agree are evidence that those classes
//! are one speaker; class pairs proposed by enough views are merged. Low-band
//! utterances are dropped and the rest are reassigned to their best class.
//!
//! The pair-proposal statistic is a support count: a view proposes `(a, b)`
//! when at least `min_support` median-band utterances have `{a, b}` as their
//! two best classes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::graph::DisjointSet;
use crate::model::{EmbeddingSet, Partition, ViewBundle, UNASSIGNED};
use crate::vecops::{dot, normalize, to_f64};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteRule {
    Unanimous,
    Majority,
}

impl std::str::FromStr for VoteRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "unanimous" => Ok(VoteRule::Unanimous),
            "majority" => Ok(VoteRule::Majority),
            _ => Err(format!(
                "unknown vote rule '{s}' (expected unanimous|majority)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CenterMode {
    /// Length-normalized mean of members.
    Normalized,
    /// Plain mean of members.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionConfig {
    pub th_top1: f64,
    pub th_top2: f64,
    pub vote: VoteRule,
    pub min_support: usize,
    /// Fraction of views in which an utterance must be low-band to be dropped.
    pub low_fraction: f64,
    pub centers: CenterMode,
    /// Inverse temperature of the softmax posterior reported in the audit.
    pub posterior_scale: f64,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        CorrectionConfig {
            th_top1: 0.5,
            th_top2: 0.4,
            vote: VoteRule::Unanimous,
            min_support: 3,
            low_fraction: 1.0,
            centers: CenterMode::Normalized,
            posterior_scale: 30.0,
        }
    }
}

impl CorrectionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("th_top1", self.th_top1), ("th_top2", self.th_top2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::param(name, "must lie in (0, 1)"));
            }
        }
        if self.min_support == 0 {
            return Err(Error::param("min_support", "must be positive"));
        }
        if !(self.low_fraction > 0.0 && self.low_fraction <= 1.0) {
            return Err(Error::param("low_fraction", "must lie in (0, 1]"));
        }
        if !(self.posterior_scale.is_finite() && self.posterior_scale > 0.0) {
            return Err(Error::param("posterior_scale", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    High,
    Median,
    Low,
}

/// `top1 > th1 ∧ top2 < th2` is high, `top1 > th1 ∧ top2 >= th2` is median,
/// anything with `top1 <= th1` is low.
pub fn band_for(sim_top1: f64, sim_top2: f64, cfg: &CorrectionConfig) -> Band {
    if sim_top1 <= cfg.th_top1 {
        Band::Low
    } else if sim_top2 >= cfg.th_top2 {
        Band::Median
    } else {
        Band::High
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub utt_id: String,
    pub top1_label: i64,
    pub top2_label: i64,
    pub sim_top1: f64,
    pub sim_top2: f64,
    pub band: Band,
}

pub fn class_centers(
    set: &EmbeddingSet,
    partition: &Partition,
    mode: CenterMode,
) -> Result<BTreeMap<i64, Vec<f64>>> {
    for id in partition.ids() {
        if set.index_of(id).is_none() {
            return Err(Error::UnknownId(id.to_string()));
        }
    }
    let mut sums: BTreeMap<i64, (Vec<f64>, usize)> = BTreeMap::new();
    for (id, label) in partition.iter() {
        if label == UNASSIGNED {
            continue;
        }
        let row = set.get(id).expect("checked above");
        let e = sums
            .entry(label)
            .or_insert_with(|| (vec![0.0; set.dim()], 0));
        for (s, &x) in e.0.iter_mut().zip(row) {
            *s += x as f64;
        }
        e.1 += 1;
    }
    if sums.is_empty() {
        return Err(Error::Empty("partition has no assigned classes"));
    }
    Ok(sums
        .into_iter()
        .map(|(l, (mut v, n))| {
            v.iter_mut().for_each(|x| *x /= n as f64);
            if mode == CenterMode::Normalized {
                normalize(&mut v);
            }
            (l, v)
        })
        .collect())
}

/// Similarities of every utterance of one view to every class center.
#[derive(Debug, Clone)]
pub struct ViewConfidence {
    /// Center labels, ascending; the column order of `sims`.
    pub labels: Vec<i64>,
    /// One row per utterance of the set, in set order.
    pub sims: Vec<Vec<f64>>,
    pub records: Vec<ConfidenceRecord>,
}

pub fn confidence_split(
    set: &EmbeddingSet,
    centers: &BTreeMap<i64, Vec<f64>>,
    cfg: &CorrectionConfig,
) -> Result<ViewConfidence> {
    if centers.len() < 2 {
        return Err(Error::Insufficient(
            "confidence split needs at least two classes".into(),
        ));
    }
    let labels: Vec<i64> = centers.keys().copied().collect();
    let unit_centers: Vec<Vec<f64>> = centers
        .values()
        .map(|c| {
            let mut c = c.clone();
            normalize(&mut c);
            c
        })
        .collect();
    let mut sims = Vec::with_capacity(set.len());
    let mut records = Vec::with_capacity(set.len());
    for (id, row) in set.iter() {
        let mut v = to_f64(row);
        normalize(&mut v);
        let s: Vec<f64> = unit_centers
            .iter()
            .map(|c| dot(&v, c).clamp(-1.0, 1.0))
            .collect();
        // Best two; ties go to the smaller label.
        let (mut b1, mut b2) = (0usize, usize::MAX);
        for j in 1..s.len() {
            if s[j] > s[b1] {
                b2 = b1;
                b1 = j;
            } else if b2 == usize::MAX || s[j] > s[b2] {
                b2 = j;
            }
        }
        if b2 == usize::MAX {
            b2 = if b1 == 0 { 1 } else { 0 };
        }
        records.push(ConfidenceRecord {
            utt_id: id.to_string(),
            top1_label: labels[b1],
            top2_label: labels[b2],
            sim_top1: s[b1],
            sim_top2: s[b2],
            band: band_for(s[b1], s[b2], cfg),
        });
        sims.push(s);
    }
    Ok(ViewConfidence {
        labels,
        sims,
        records,
    })
}

/// Class pairs `(a, b)`, `a < b`, supported by at least `min_support`
/// median-band utterances of one view.
pub fn merge_evidence(records: &[ConfidenceRecord], min_support: usize) -> BTreeSet<(i64, i64)> {
    let mut counts: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    for r in records.iter().filter(|r| r.band == Band::Median) {
        let key = (
            r.top1_label.min(r.top2_label),
            r.top1_label.max(r.top2_label),
        );
        *counts.entry(key).or_default() += 1;
    }
    counts
        .into_iter()
        .filter(|&(_, c)| c >= min_support)
        .map(|(k, _)| k)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum CorrectionAudit {
    Merge {
        classes: (i64, i64),
        votes: usize,
        views: usize,
    },
    Assign {
        utt: String,
        from: i64,
        to: i64,
        low_views: usize,
        high_views: usize,
        /// Softmax posterior of the assigned class; absent for dropped
        /// utterances.
        posterior: Option<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct CorrectionOutcome {
    pub partition: Partition,
    pub merges: Vec<(i64, i64)>,
    pub audit: Vec<CorrectionAudit>,
}

pub fn correct_labels(
    partition: &Partition,
    proposals: &[BTreeSet<(i64, i64)>],
    views: &[ViewConfidence],
    ids: &[String],
    cfg: &CorrectionConfig,
) -> Result<CorrectionOutcome> {
    cfg.validate()?;
    let n_views = views.len();
    if n_views == 0 {
        return Err(Error::Empty("no views supplied"));
    }
    if proposals.len() != n_views {
        return Err(Error::param(
            "proposals",
            format!("{} proposal sets for {} views", proposals.len(), n_views),
        ));
    }
    let labels = &views[0].labels;
    if views
        .iter()
        .any(|v| &v.labels != labels || v.sims.len() != ids.len())
    {
        return Err(Error::param(
            "views",
            "views disagree on classes or utterances",
        ));
    }
    let pos: BTreeMap<i64, usize> = labels.iter().enumerate().map(|(p, &l)| (l, p)).collect();

    // Votes.
    let mut votes: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    for p in proposals {
        for &pair in p {
            if !pos.contains_key(&pair.0) || !pos.contains_key(&pair.1) {
                return Err(Error::param(
                    "proposals",
                    format!("pair {pair:?} references an unknown class"),
                ));
            }
            *votes.entry(pair).or_default() += 1;
        }
    }
    let approved = |c: usize| match cfg.vote {
        VoteRule::Unanimous => c == n_views,
        VoteRule::Majority => 2 * c > n_views,
    };
    let mut audit = Vec::new();
    let mut ds = DisjointSet::new(labels.len());
    let mut merges = Vec::new();
    for (&pair, &c) in &votes {
        if approved(c) {
            ds.union(pos[&pair.0], pos[&pair.1]);
            merges.push(pair);
            audit.push(CorrectionAudit::Merge {
                classes: pair,
                votes: c,
                views: n_views,
            });
        }
    }
    // Each merged group is named by its smallest label.
    let mut group_of = vec![0usize; labels.len()];
    let mut group_label: BTreeMap<usize, i64> = BTreeMap::new();
    for (p, &l) in labels.iter().enumerate() {
        let root = ds.find(p);
        group_of[p] = root;
        group_label.entry(root).or_insert(l);
    }
    let groups: Vec<usize> = group_label.keys().copied().collect();

    let index: BTreeMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let low_needed = ((cfg.low_fraction * n_views as f64).ceil() as usize).max(1);
    let mut out = Partition::new();
    for (id, current) in partition.iter() {
        let &u = index
            .get(id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))?;
        let bands: Vec<Band> = views.iter().map(|v| v.records[u].band).collect();
        let low_views = bands.iter().filter(|&&b| b == Band::Low).count();
        let high_views = bands.iter().filter(|&&b| b == Band::High).count();

        let drop = low_views >= low_needed || (current == UNASSIGNED && high_views < n_views);
        let (to, posterior) = if drop {
            (UNASSIGNED, None)
        } else {
            // Group score: per-view max over member classes, averaged.
            let scores: Vec<f64> = groups
                .iter()
                .map(|&g| {
                    views
                        .iter()
                        .map(|v| {
                            (0..labels.len())
                                .filter(|&p| group_of[p] == g)
                                .map(|p| v.sims[u][p])
                                .fold(f64::NEG_INFINITY, f64::max)
                        })
                        .sum::<f64>()
                        / n_views as f64
                })
                .collect();
            let best = (0..groups.len()).fold(0, |b, j| if scores[j] > scores[b] { j } else { b });
            let m = scores[best];
            let z: f64 = scores
                .iter()
                .map(|s| (cfg.posterior_scale * (s - m)).exp())
                .sum();
            (group_label[&groups[best]], Some(1.0 / z))
        };
        out.insert(id, to)?;
        audit.push(CorrectionAudit::Assign {
            utt: id.to_string(),
            from: current,
            to,
            low_views,
            high_views,
            posterior,
        });
    }
    Ok(CorrectionOutcome {
        partition: out,
        merges,
        audit,
    })
}

/// Runs the whole correction over a multi-view bundle.
pub fn correct_bundle(
    bundle: &ViewBundle,
    partition: &Partition,
    cfg: &CorrectionConfig,
) -> Result<CorrectionOutcome> {
    cfg.validate()?;
    let mut views = Vec::with_capacity(bundle.num_views());
    let mut proposals = Vec::with_capacity(bundle.num_views());
    for set in bundle.views() {
        let centers = class_centers(set, partition, cfg.centers)?;
        let conf = confidence_split(set, &centers, cfg)?;
        proposals.push(merge_evidence(&conf.records, cfg.min_support));
        views.push(conf);
    }
    correct_labels(partition, &proposals, &views, bundle.ids(), cfg)
}
