//! Development trial list generation from pseudo-labels.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Partition, Trial, TrialKey, TrialSet, UNASSIGNED};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialGenConfig {
    pub total: usize,
    /// Pseudo classes kept, highest purity first.
    pub speakers: usize,
    pub segments: usize,
    /// Sampling weight of pairs that involve a labeled speaker.
    pub labeled_weight: f64,
    pub seed: u64,
}

impl Default for TrialGenConfig {
    fn default() -> Self {
        TrialGenConfig {
            total: 40_000,
            speakers: 70,
            segments: 20,
            labeled_weight: 2.0,
            seed: 0,
        }
    }
}

/// Weighted sampling of `need` items. Every item is taken `need / len`
/// times, and the remainder is drawn without replacement with
/// exponential-key weighting.
fn weighted_draw(weights: &[f64], need: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(need);
    for _ in 0..need / n {
        out.extend(0..n);
    }
    let rest = need % n;
    if rest > 0 {
        let mut keys: Vec<(f64, usize)> = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                (u.ln() / w, i)
            })
            .collect();
        keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        out.extend(keys[..rest].iter().map(|&(_, i)| i));
    }
    out
}

/// Picks the top-purity pseudo classes plus every labeled speaker, takes
/// `segments` utterances of each, and samples `total` trials split evenly
/// between target and nontarget pairs. `total` must be even.
pub fn generate_dev_trials(
    labels: &Partition,
    purity: &BTreeMap<i64, f64>,
    labeled_ids: &BTreeSet<String>,
    cfg: &TrialGenConfig,
) -> Result<TrialSet> {
    if cfg.total == 0 || !cfg.total.is_multiple_of(2) {
        return Err(Error::param("total", "must be a positive even number"));
    }
    if cfg.segments < 2 {
        return Err(Error::param(
            "segments",
            "need at least 2 segments per speaker",
        ));
    }
    if !(cfg.labeled_weight > 0.0 && cfg.labeled_weight.is_finite()) {
        return Err(Error::param("labeled_weight", "must be positive"));
    }
    for id in labeled_ids {
        if labels.get(id).is_none() {
            return Err(Error::UnknownId(id.clone()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let classes = labels.classes();

    // A class is a labeled speaker when any of its members is labeled.
    let is_labeled = |members: &Vec<String>| members.iter().any(|m| labeled_ids.contains(m));
    let mut pseudo: Vec<(i64, f64)> = classes
        .iter()
        .filter(|(&l, m)| l != UNASSIGNED && !is_labeled(m) && m.len() >= cfg.segments)
        .map(|(&l, _)| (l, purity.get(&l).copied().unwrap_or(0.0)))
        .collect();
    pseudo.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if pseudo.len() < cfg.speakers {
        return Err(Error::Insufficient(format!(
            "{} pseudo classes with at least {} segments, {} requested",
            pseudo.len(),
            cfg.segments,
            cfg.speakers
        )));
    }
    let mut chosen: Vec<(Vec<String>, bool)> = Vec::new();
    for &(l, _) in &pseudo[..cfg.speakers] {
        chosen.push((classes[&l].clone(), false));
    }
    for (&l, members) in &classes {
        if l != UNASSIGNED && is_labeled(members) {
            let kept: Vec<String> = members
                .iter()
                .filter(|m| labeled_ids.contains(*m))
                .cloned()
                .collect();
            if kept.len() >= 2 {
                chosen.push((kept, true));
            }
        }
    }
    if chosen.len() < 2 {
        return Err(Error::Insufficient("need at least two speakers".into()));
    }
    let mut groups: Vec<(Vec<String>, bool)> = Vec::with_capacity(chosen.len());
    for (mut members, labeled) in chosen {
        members.shuffle(&mut rng);
        members.truncate(cfg.segments);
        members.sort();
        groups.push((members, labeled));
    }

    let weight = |a: bool, b: bool| if a || b { cfg.labeled_weight } else { 1.0 };
    let mut tar_pairs = Vec::new();
    let mut tar_w = Vec::new();
    for (g, (m, lab)) in groups.iter().enumerate() {
        for i in 0..m.len() {
            for j in i + 1..m.len() {
                tar_pairs.push(((g, i), (g, j)));
                tar_w.push(weight(*lab, *lab));
            }
        }
    }
    let mut non_pairs = Vec::new();
    let mut non_w = Vec::new();
    for g in 0..groups.len() {
        for h in g + 1..groups.len() {
            for i in 0..groups[g].0.len() {
                for j in 0..groups[h].0.len() {
                    non_pairs.push(((g, i), (h, j)));
                    non_w.push(weight(groups[g].1, groups[h].1));
                }
            }
        }
    }
    let half = cfg.total / 2;
    let mut trials = Vec::with_capacity(cfg.total);
    let name = |(g, i): (usize, usize)| groups[g].0[i].clone();
    for k in weighted_draw(&tar_w, half, &mut rng) {
        let (a, b) = tar_pairs[k];
        trials.push(Trial::new(name(a), name(b), TrialKey::Target));
    }
    for k in weighted_draw(&non_w, half, &mut rng) {
        let (a, b) = non_pairs[k];
        trials.push(Trial::new(name(a), name(b), TrialKey::Nontarget));
    }
    trials.shuffle(&mut rng);
    Ok(trials)
}
