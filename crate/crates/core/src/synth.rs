//! Seeded synthetic multi-view corpora with ground truth, and partition
//! quality metrics.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::model::{EmbeddingSet, Partition, ViewBundle, UNASSIGNED};
use crate::vecops::{dot, normalize};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub speakers: usize,
    /// Utterances per speaker, drawn uniformly from `utts_min..=utts_max`.
    pub utts_min: usize,
    pub utts_max: usize,
    /// Utterance counts of extra speakers appended after the regular ones.
    pub extra_speakers: Vec<usize>,
    pub dim: usize,
    pub views: usize,
    /// Expected norm of the per-view noise added to a unit prototype.
    pub intra_noise: f64,
    /// Offset added after the optional transform.
    pub domain_shift: Option<Vec<f64>>,
    /// Row-major `dim x dim` matrix applied to every vector.
    pub transform: Option<Vec<f64>>,
    pub duplicate_fraction: f64,
    pub split_speaker_fraction: f64,
    pub max_prototype_cosine: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            speakers: 100,
            utts_min: 30,
            utts_max: 30,
            extra_speakers: Vec::new(),
            dim: 128,
            views: 3,
            intra_noise: 0.05,
            domain_shift: None,
            transform: None,
            duplicate_fraction: 0.0,
            split_speaker_fraction: 0.0,
            max_prototype_cosine: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.speakers + self.extra_speakers.len() == 0 {
            return Err(Error::param("speakers", "must be positive"));
        }
        if self.utts_min == 0 || self.utts_min > self.utts_max {
            return Err(Error::param("utts", "need 1 <= utts_min <= utts_max"));
        }
        if self.extra_speakers.contains(&0) {
            return Err(Error::param("extra_speakers", "counts must be positive"));
        }
        if self.dim < 2 {
            return Err(Error::param("dim", "must be at least 2"));
        }
        if self.views == 0 {
            return Err(Error::param("views", "must be positive"));
        }
        if !(self.intra_noise >= 0.0 && self.intra_noise.is_finite()) {
            return Err(Error::param("intra_noise", "must be non-negative"));
        }
        for (name, f) in [
            ("duplicate_fraction", self.duplicate_fraction),
            ("split_speaker_fraction", self.split_speaker_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::param(name, "must lie in [0, 1]"));
            }
        }
        if let Some(s) = &self.domain_shift {
            if s.len() != self.dim || s.iter().any(|x| !x.is_finite()) {
                return Err(Error::param("domain_shift", "needs dim finite entries"));
            }
        }
        if let Some(t) = &self.transform {
            if t.len() != self.dim * self.dim || t.iter().any(|x| !x.is_finite()) {
                return Err(Error::param("transform", "needs dim*dim finite entries"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthMeta {
    pub max_prototype_cosine: f64,
    /// Pseudo-labels equal to the truth except that the chosen speakers are
    /// split in two classes.
    pub split_labels: Partition,
    pub split_speakers: Vec<i64>,
    /// `(duplicate, original)` id pairs.
    pub duplicates: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub bundle: ViewBundle,
    pub truth: Partition,
    pub meta: SynthMeta,
}

/// Random unit prototypes, orthogonalized within consecutive blocks of
/// `dim` speakers.
fn prototypes(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let block_start = i - i % dim;
        loop {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            for p in &out[block_start..] {
                let d = dot(&v, p);
                v.iter_mut().zip(p).for_each(|(x, y)| *x -= d * y);
            }
            let n2 = dot(&v, &v);
            if n2 > 1e-12 {
                normalize(&mut v);
                out.push(v);
                break;
            }
        }
    }
    out
}

pub fn gen_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sizes: Vec<usize> = (0..cfg.speakers)
        .map(|_| rng.random_range(cfg.utts_min..=cfg.utts_max))
        .collect();
    sizes.extend_from_slice(&cfg.extra_speakers);
    if sizes.iter().sum::<usize>() < 2 {
        return Err(Error::param(
            "speakers",
            "corpus needs at least 2 utterances",
        ));
    }
    let n_spk = sizes.len();
    let protos = prototypes(n_spk, cfg.dim, &mut rng);
    let mut max_cos = f64::NEG_INFINITY;
    for i in 0..n_spk {
        for j in i + 1..n_spk {
            max_cos = max_cos.max(dot(&protos[i], &protos[j]));
        }
    }
    if n_spk > 1 && max_cos > cfg.max_prototype_cosine {
        return Err(Error::Infeasible(format!(
            "{} prototypes in dim {} reach cosine {:.3} > {}",
            n_spk, cfg.dim, max_cos, cfg.max_prototype_cosine
        )));
    }

    let sd = cfg.intra_noise / (cfg.dim as f64).sqrt();
    let project = |mut v: Vec<f64>| -> Vec<f64> {
        if let Some(t) = &cfg.transform {
            v = (0..cfg.dim)
                .map(|r| dot(&t[r * cfg.dim..(r + 1) * cfg.dim], &v))
                .collect();
        }
        if let Some(s) = &cfg.domain_shift {
            v.iter_mut().zip(s).for_each(|(x, y)| *x += y);
        }
        v
    };

    let mut ids = Vec::new();
    let mut speaker_of = Vec::new();
    let mut utt_of = Vec::new();
    let mut rows: Vec<Vec<Vec<f64>>> = vec![Vec::new(); cfg.views];
    for (s, &n) in sizes.iter().enumerate() {
        for u in 0..n {
            ids.push(format!("spk{s:04}-utt{u:04}"));
            speaker_of.push(s);
            utt_of.push(u);
            for view in rows.iter_mut() {
                let v: Vec<f64> = protos[s]
                    .iter()
                    .map(|&p| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        p + sd * z
                    })
                    .collect();
                view.push(project(v));
            }
        }
    }

    let n_utt = ids.len();
    let n_dup = (cfg.duplicate_fraction * n_utt as f64).round() as usize;
    let mut dup_src: Vec<usize> = sample(&mut rng, n_utt, n_dup).into_vec();
    dup_src.sort_unstable();

    let mut sets: Vec<EmbeddingSet> = (0..cfg.views)
        .map(|_| EmbeddingSet::with_capacity(cfg.dim, n_utt + n_dup))
        .collect::<Result<_>>()?;
    let mut truth = Partition::new();
    let mut duplicates = Vec::new();
    // Position in the speaker's utterance list, per truth entry.
    let mut utt_index = Vec::with_capacity(n_utt + n_dup);
    let mut next_dup = dup_src.iter().peekable();
    for i in 0..n_utt {
        for (set, view) in sets.iter_mut().zip(&rows) {
            set.push_f64(ids[i].clone(), &view[i])?;
        }
        truth.insert(ids[i].clone(), speaker_of[i] as i64)?;
        utt_index.push(utt_of[i]);
        if next_dup.peek() == Some(&&i) {
            next_dup.next();
            let dup_id = format!("{}-dup", ids[i]);
            for set in sets.iter_mut() {
                let row = set.row(set.len() - 1).to_vec();
                set.push(dup_id.clone(), &row)?;
            }
            truth.insert(dup_id.clone(), speaker_of[i] as i64)?;
            utt_index.push(utt_of[i]);
            duplicates.push((dup_id, ids[i].clone()));
        }
    }

    // Split speakers: the second half of each chosen speaker gets a new label.
    let n_split = (cfg.split_speaker_fraction * n_spk as f64).round() as usize;
    let mut split_speakers: Vec<i64> = sample(&mut rng, n_spk, n_split)
        .into_iter()
        .filter(|&s| sizes[s] >= 2)
        .map(|s| s as i64)
        .collect();
    split_speakers.sort_unstable();
    let mut split_labels = Partition::new();
    let new_label: HashMap<i64, i64> = split_speakers
        .iter()
        .enumerate()
        .map(|(j, &s)| (s, (n_spk + j) as i64))
        .collect();
    for (i, (id, l)) in truth.iter().enumerate() {
        let label = match new_label.get(&l) {
            Some(&nl) if utt_index[i] >= sizes[l as usize] / 2 => nl,
            _ => l,
        };
        split_labels.insert(id, label)?;
    }

    Ok(SynthCorpus {
        bundle: ViewBundle::new(sets)?,
        truth,
        meta: SynthMeta {
            max_prototype_cosine: if n_spk > 1 { max_cos } else { 0.0 },
            split_labels,
            split_speakers,
            duplicates,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionMetrics {
    pub purity: f64,
    pub ari: f64,
    pub nmi: f64,
    pub retained_fraction: f64,
    pub retained: usize,
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Compares over utterances that are labeled in both partitions. Ids of
/// `truth` missing from `predicted` count as not retained.
pub fn eval_partition(predicted: &Partition, truth: &Partition) -> Result<PartitionMetrics> {
    for id in predicted.ids() {
        if truth.get(id).is_none() {
            return Err(Error::UnknownId(id.to_string()));
        }
    }
    let mut table: BTreeMap<(i64, i64), u64> = BTreeMap::new();
    let mut n = 0u64;
    for (id, t) in truth.iter() {
        let p = predicted.get(id).unwrap_or(UNASSIGNED);
        if p == UNASSIGNED || t == UNASSIGNED {
            continue;
        }
        *table.entry((p, t)).or_default() += 1;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("no retained utterances"));
    }
    let mut rows: BTreeMap<i64, u64> = BTreeMap::new();
    let mut cols: BTreeMap<i64, u64> = BTreeMap::new();
    let mut best: BTreeMap<i64, u64> = BTreeMap::new();
    for (&(p, t), &c) in &table {
        *rows.entry(p).or_default() += c;
        *cols.entry(t).or_default() += c;
        let b = best.entry(p).or_default();
        *b = (*b).max(c);
    }
    let nf = n as f64;
    let purity = best.values().sum::<u64>() as f64 / nf;

    let sum_ij: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    let expected = if total > 0.0 {
        sum_a * sum_b / total
    } else {
        0.0
    };
    let max_index = 0.5 * (sum_a + sum_b);
    let ari = if max_index == expected {
        // Both partitions trivial (one class or all singletons).
        if rows.len() == cols.len() && table.len() == rows.len() {
            1.0
        } else {
            0.0
        }
    } else {
        (sum_ij - expected) / (max_index - expected)
    };

    let entropy = |m: &BTreeMap<i64, u64>| -> f64 {
        m.values()
            .map(|&c| {
                let p = c as f64 / nf;
                -p * p.ln()
            })
            .sum()
    };
    let (hu, hv) = (entropy(&rows), entropy(&cols));
    let mi: f64 = table
        .iter()
        .map(|(&(p, t), &c)| {
            let pij = c as f64 / nf;
            pij * (pij * nf * nf / (rows[&p] as f64 * cols[&t] as f64)).ln()
        })
        .sum();
    let nmi = if hu + hv == 0.0 {
        1.0
    } else {
        (2.0 * mi / (hu + hv)).clamp(0.0, 1.0)
    };

    Ok(PartitionMetrics {
        purity,
        ari,
        nmi,
        retained_fraction: nf / truth.len() as f64,
        retained: n as usize,
    })
}
