//! Merge gate and the two class-combination passes of the progressive loop.
//!
//! Labels are carried as a dense `Vec<i64>` over bundle indices, `-1` for
//! utterances that are not part of the partition.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::em::{fit_two_gaussian, TwoGaussianFit};
use crate::graph::{components_by_key, EdgeSet};
use crate::model::{ViewBundle, UNASSIGNED};
use crate::vecops::{dot, UnitRows};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombineConfig {
    /// Lower-mode mean above which a set is considered one speaker.
    pub th_nm: f64,
    pub epsilon: f64,
    /// Per-side cap on utterances entering the pairwise scoring; `None`
    /// disables subsampling.
    pub max_per_side: Option<usize>,
    pub seed: u64,
}

impl Default for CombineConfig {
    fn default() -> Self {
        CombineConfig {
            th_nm: 0.5,
            epsilon: 0.05,
            max_per_side: Some(200),
            seed: 0,
        }
    }
}

impl CombineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.th_nm > -1.0 && self.th_nm < 1.0) {
            return Err(Error::param("th_nm", "must lie in (-1, 1)"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::param("epsilon", "must be finite and non-negative"));
        }
        if self.max_per_side == Some(0) {
            return Err(Error::param("max_per_side", "must be positive"));
        }
        Ok(())
    }
}

/// Which condition decided a merge test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clause {
    /// `mu2 > th_nm`
    LowerMean,
    /// `w1 >= 0.5`
    UpperWeight,
    /// `mu1 - sigma1 <= mu2 + sigma2 + epsilon`
    Overlap,
    /// All scores identical (or a single score); merged iff above `th_nm`.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombineDecision {
    pub merge: bool,
    /// First clause that fired, or `Degenerate` for the no-fit path.
    pub clause: Option<Clause>,
    pub fit: Option<TwoGaussianFit>,
    pub n_scores: usize,
}

/// Unit-normalized copies of every view; pairwise similarity is the mean of
/// per-view cosines.
#[derive(Debug, Clone)]
pub struct ViewSimilarity {
    views: Vec<UnitRows>,
}

impl ViewSimilarity {
    pub fn new(bundle: &ViewBundle) -> Self {
        ViewSimilarity {
            views: bundle.views().iter().map(UnitRows::from_set).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.views[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sim(&self, i: usize, j: usize) -> f64 {
        let s: f64 = self
            .views
            .iter()
            .map(|v| dot(v.row(i), v.row(j)).clamp(-1.0, 1.0))
            .sum();
        s / self.views.len() as f64
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn group_seed(base: u64, group: &[usize]) -> u64 {
    group
        .iter()
        .fold(splitmix(base ^ group.len() as u64), |h, &x| {
            splitmix(h ^ x as u64)
        })
}

fn cap_group(group: &[usize], cfg: &CombineConfig) -> Vec<usize> {
    let mut g = group.to_vec();
    g.sort_unstable();
    match cfg.max_per_side {
        Some(cap) if g.len() > cap => {
            let mut rng = ChaCha8Rng::seed_from_u64(group_seed(cfg.seed, &g));
            let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, g.len(), cap)
                .into_iter()
                .map(|p| g[p])
                .collect();
            picked.sort_unstable();
            picked
        }
        _ => g,
    }
}

/// Evaluates the merge gate on the union of `groups` (each side capped
/// separately). Fails if fewer than two distinct utterances are given.
pub fn check_combine(
    groups: &[&[usize]],
    sims: &ViewSimilarity,
    cfg: &CombineConfig,
) -> Result<CombineDecision> {
    let mut members: BTreeSet<usize> = BTreeSet::new();
    for g in groups {
        if let Some(&bad) = g.iter().find(|&&i| i >= sims.len()) {
            return Err(Error::param("utt_set", format!("index {bad} out of range")));
        }
        members.extend(cap_group(g, cfg));
    }
    let members: Vec<usize> = members.into_iter().collect();
    if members.len() < 2 {
        return Err(Error::Insufficient(
            "merge test needs at least two utterances".into(),
        ));
    }
    let mut scores = Vec::with_capacity(members.len() * (members.len() - 1) / 2);
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            scores.push(sims.sim(i, j));
        }
    }
    decide(&scores, cfg)
}

/// Applies the gate to precomputed pairwise scores.
pub fn decide(scores: &[f64], cfg: &CombineConfig) -> Result<CombineDecision> {
    let n_scores = scores.len();
    let all_equal = scores.windows(2).all(|w| w[0] == w[1]);
    if n_scores == 0 {
        return Err(Error::Insufficient("no pairwise scores".into()));
    }
    if n_scores == 1 || all_equal {
        return Ok(CombineDecision {
            merge: scores[0] > cfg.th_nm,
            clause: Some(Clause::Degenerate),
            fit: None,
            n_scores,
        });
    }
    let fit = fit_two_gaussian(scores)?;
    let clause = if fit.mu2 > cfg.th_nm {
        Some(Clause::LowerMean)
    } else if fit.w1 >= 0.5 {
        Some(Clause::UpperWeight)
    } else if fit.mu1 - fit.sigma1 <= fit.mu2 + fit.sigma2 + cfg.epsilon {
        Some(Clause::Overlap)
    } else {
        None
    };
    Ok(CombineDecision {
        merge: clause.is_some(),
        clause,
        fit: Some(fit),
        n_scores,
    })
}

/// One merge test performed by [`subspk_combine`] or [`cb_new_old`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeTest {
    /// Representative edge that triggered the test.
    pub edge: (usize, usize),
    /// Number of edges covered by this test.
    pub edges: usize,
    /// Old classes involved.
    pub classes: Vec<i64>,
    /// New utterance under test, for new-to-old attachment.
    pub utt: Option<usize>,
    pub decision: CombineDecision,
}

fn members_by_label(labels: &[i64]) -> BTreeMap<i64, Vec<usize>> {
    let mut out: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        if l != UNASSIGNED {
            out.entry(l).or_default().push(i);
        }
    }
    out
}

/// Tests every cross-class edge against the union of its two classes and
/// merges the classes joined by surviving edges. Each class keeps the
/// smallest label of its merged group, so the result coarsens `labels`.
pub fn subspk_combine(
    edges_old_old: &EdgeSet,
    labels: &[i64],
    sims: &ViewSimilarity,
    cfg: &CombineConfig,
) -> Result<(Vec<i64>, Vec<MergeTest>)> {
    let classes = members_by_label(labels);
    // Class pair → (representative edge, edge count).
    let mut pairs: BTreeMap<(i64, i64), ((usize, usize), usize)> = BTreeMap::new();
    for &(i, j) in edges_old_old {
        let (li, lj) = (labels[i], labels[j]);
        if li == UNASSIGNED || lj == UNASSIGNED {
            return Err(Error::param(
                "edges_old_old",
                format!("edge ({i}, {j}) has an unlabeled endpoint"),
            ));
        }
        if li == lj {
            continue;
        }
        let key = (li.min(lj), li.max(lj));
        pairs.entry(key).or_insert(((i, j), 0)).1 += 1;
    }
    let pairs: Vec<_> = pairs.into_iter().collect();
    let tests = pairs
        .par_iter()
        .map(|&((a, b), (edge, edges))| {
            let decision = check_combine(&[&classes[&a], &classes[&b]], sims, cfg)?;
            Ok(MergeTest {
                edge,
                edges,
                classes: vec![a, b],
                utt: None,
                decision,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let class_ids: Vec<usize> = (0..classes.len()).collect();
    let label_list: Vec<i64> = classes.keys().copied().collect();
    let pos: HashMap<i64, usize> = label_list
        .iter()
        .enumerate()
        .map(|(p, &l)| (l, p))
        .collect();
    let merged_edges: Vec<(usize, usize)> = tests
        .iter()
        .filter(|t| t.decision.merge)
        .map(|t| (pos[&t.classes[0]], pos[&t.classes[1]]))
        .collect();
    // label_list is sorted, so the component key picks the smallest label.
    let comp = components_by_key(&class_ids, merged_edges, |p| p as u64)?;
    let mut group_label: HashMap<usize, i64> = HashMap::new();
    for (p, &l) in label_list.iter().enumerate() {
        group_label.entry(comp[&p]).or_insert(l);
    }
    let out = labels
        .iter()
        .map(|&l| {
            if l == UNASSIGNED {
                l
            } else {
                group_label[&comp[&pos[&l]]]
            }
        })
        .collect();
    Ok((out, tests))
}

/// Attaches newly reached utterances to existing classes.
///
/// For every new utterance with edges into the old partition, the union of
/// the old classes it touches plus the utterance itself is tested; on a
/// negative result the utterance and its new-to-old edges are dropped.
/// Classes are then re-derived over old classes, new classes and the
/// surviving edges. Old classes keep the smallest old label of their group;
/// groups of only new utterances get fresh labels above every old label.
pub fn cb_new_old(
    new_labels: &[i64],
    old_labels: &[i64],
    edges_new_old: &EdgeSet,
    sims: &ViewSimilarity,
    cfg: &CombineConfig,
) -> Result<(Vec<i64>, Vec<MergeTest>)> {
    if new_labels.len() != old_labels.len() {
        return Err(Error::param(
            "labels",
            "new and old label vectors differ in length",
        ));
    }
    if let Some(i) =
        (0..new_labels.len()).find(|&i| new_labels[i] != UNASSIGNED && old_labels[i] != UNASSIGNED)
    {
        return Err(Error::param(
            "partition_new",
            format!("utterance {i} is labeled in both partitions"),
        ));
    }
    let old_classes = members_by_label(old_labels);

    // New utterance → (old neighbors, representative edge, count).
    type Attachment = (BTreeSet<usize>, (usize, usize), usize);
    let mut attach: BTreeMap<usize, Attachment> = BTreeMap::new();
    for &(a, b) in edges_new_old {
        let (new, old) = match (new_labels[a] != UNASSIGNED, old_labels[b] != UNASSIGNED) {
            (true, true) => (a, b),
            _ if new_labels[b] != UNASSIGNED && old_labels[a] != UNASSIGNED => (b, a),
            _ => {
                return Err(Error::param(
                    "edges_new_old",
                    format!("edge ({a}, {b}) does not join a new and an old utterance"),
                ))
            }
        };
        let e = attach
            .entry(new)
            .or_insert_with(|| (BTreeSet::new(), (a, b), 0));
        e.0.insert(old);
        e.2 += 1;
    }
    let attach: Vec<_> = attach.into_iter().collect();
    let tests = attach
        .par_iter()
        .map(|(u, (olds, edge, edges))| {
            let touched: BTreeSet<i64> = olds.iter().map(|&o| old_labels[o]).collect();
            let single = [*u];
            let mut groups: Vec<&[usize]> =
                touched.iter().map(|l| old_classes[l].as_slice()).collect();
            groups.push(&single);
            let decision = check_combine(&groups, sims, cfg)?;
            Ok(MergeTest {
                edge: *edge,
                edges: *edges,
                classes: touched.into_iter().collect(),
                utt: Some(*u),
                decision,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let rejected: BTreeSet<usize> = tests
        .iter()
        .filter(|t| !t.decision.merge)
        .filter_map(|t| t.utt)
        .collect();

    // Class-level graph: old classes first (sorted by label), then new ones.
    let max_old = old_classes.keys().copied().max().unwrap_or(-1);
    let mut node_of: HashMap<(bool, i64), usize> = HashMap::new();
    let mut node_label: Vec<(bool, i64)> = Vec::new();
    for &l in old_classes.keys() {
        node_of.insert((false, l), node_label.len());
        node_label.push((false, l));
    }
    let new_classes = members_by_label(new_labels);
    for (&l, members) in &new_classes {
        if members.iter().any(|m| !rejected.contains(m)) {
            node_of.insert((true, l), node_label.len());
            node_label.push((true, l));
        }
    }
    let mut links = Vec::new();
    for &(a, b) in edges_new_old {
        let (new, old) = if new_labels[a] != UNASSIGNED {
            (a, b)
        } else {
            (b, a)
        };
        if rejected.contains(&new) {
            continue;
        }
        links.push((
            node_of[&(true, new_labels[new])],
            node_of[&(false, old_labels[old])],
        ));
    }
    let nodes: Vec<usize> = (0..node_label.len()).collect();
    let comp = components_by_key(&nodes, links, |p| p as u64)?;

    // Old-containing groups keep their smallest old label; the rest get
    // fresh labels in node order.
    let mut group_label: HashMap<usize, i64> = HashMap::new();
    let mut next = max_old + 1;
    for (p, &(is_new, l)) in node_label.iter().enumerate() {
        let c = comp[&p];
        if !is_new {
            group_label.entry(c).or_insert(l);
        }
    }
    for (p, _) in node_label.iter().enumerate() {
        let c = comp[&p];
        group_label.entry(c).or_insert_with(|| {
            let l = next;
            next += 1;
            l
        });
    }

    let out = (0..old_labels.len())
        .map(|i| {
            if old_labels[i] != UNASSIGNED {
                group_label[&comp[&node_of[&(false, old_labels[i])]]]
            } else if new_labels[i] != UNASSIGNED && !rejected.contains(&i) {
                group_label[&comp[&node_of[&(true, new_labels[i])]]]
            } else {
                UNASSIGNED
            }
        })
        .collect();
    Ok((out, tests))
}
