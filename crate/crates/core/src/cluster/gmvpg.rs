//! The progressive sub-graph clustering loop.
//!
//! 1. Hub filter on the K-th similarity, then voted edges at `k_init` and
//!    connected components as the initial classes.
//! 2. For `k = k_init, k_init + step, …` up to `k_final`: split the edges
//!    gained at the larger k by whether their endpoints are already placed,
//!    label the newcomers from new-to-new edges alone, merge old classes
//!    through gated old-to-old edges, and attach newcomers through gated
//!    new-to-old edges.
//! 3. Classes smaller than `min_class_size` are discarded to `-1`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::combine::{cb_new_old, subspk_combine, CombineConfig, MergeTest, ViewSimilarity};
use crate::graph::{
    build_neighbor_tables, components_by_key, edge_nodes, hub_filter, lexicographic_ranks,
    voting_edges, EdgeSet, GraphConfig,
};
use crate::model::{Partition, ViewBundle, UNASSIGNED};
use crate::{Error, Result};

/// Stage of the loop a merge test belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeStage {
    OldOld,
    NewOld,
}

/// One line of the JSON-lines audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    Init {
        utterances: usize,
        survivors: usize,
        k: usize,
        edges: usize,
        placed: usize,
        classes: usize,
    },
    MergeTest {
        k: usize,
        stage: MergeStage,
        edge: (String, String),
        edges: usize,
        classes: Vec<i64>,
        utt: Option<String>,
        #[serde(flatten)]
        decision: super::combine::CombineDecision,
    },
    Step {
        k_from: usize,
        k_to: usize,
        added_edges: usize,
        old_old: usize,
        new_old: usize,
        new_new: usize,
        new_utts: usize,
        rejected_utts: usize,
        placed: usize,
        classes: usize,
        /// Old classes whose members ended up under different labels.
        split_events: usize,
    },
    Discard {
        class: i64,
        size: usize,
    },
    Final {
        classes: usize,
        retained: usize,
        discarded: usize,
    },
}

/// Labels over bundle indices after one step of the loop (before the
/// small-class discard).
#[derive(Debug, Clone, PartialEq)]
pub struct StepSnapshot {
    pub k: usize,
    pub labels: Vec<i64>,
}

#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub partition: Partition,
    pub audit: Vec<AuditEvent>,
    pub snapshots: Vec<StepSnapshot>,
    /// Effective configuration after capping K and k at `n - 1`.
    pub graph_cfg: GraphConfig,
}

/// Number of classes of `before` whose members are not all under one label
/// in `after`, plus one for every placed utterance that became unplaced.
pub fn count_split_events(before: &[i64], after: &[i64]) -> usize {
    let mut seen: BTreeMap<i64, BTreeSet<i64>> = BTreeMap::new();
    let mut lost = 0;
    for (&b, &a) in before.iter().zip(after) {
        if b == UNASSIGNED {
            continue;
        }
        if a == UNASSIGNED {
            lost += 1;
        }
        seen.entry(b).or_default().insert(a);
    }
    lost + seen.values().filter(|s| s.len() > 1).count()
}

fn k_schedule(cfg: &GraphConfig) -> Vec<usize> {
    let mut ks = vec![cfg.k_init];
    let mut k = cfg.k_init;
    while k < cfg.k_final {
        k = (k + cfg.k_step).min(cfg.k_final);
        ks.push(k);
    }
    ks
}

struct Ctx<'a> {
    ids: &'a [String],
    audit: Vec<AuditEvent>,
}

impl Ctx<'_> {
    fn record(&mut self, k: usize, stage: MergeStage, tests: Vec<MergeTest>) {
        for t in tests {
            self.audit.push(AuditEvent::MergeTest {
                k,
                stage,
                edge: (self.ids[t.edge.0].clone(), self.ids[t.edge.1].clone()),
                edges: t.edges,
                classes: t.classes,
                utt: t.utt.map(|u| self.ids[u].clone()),
                decision: t.decision,
            });
        }
    }
}

pub fn gmvpg_cluster(
    bundle: &ViewBundle,
    graph_cfg: &GraphConfig,
    combine_cfg: &CombineConfig,
) -> Result<ClusterOutcome> {
    graph_cfg.validate()?;
    combine_cfg.validate()?;
    let n = bundle.len();
    if n < 2 {
        return Err(Error::Insufficient(format!(
            "clustering needs at least 2 utterances, got {n}"
        )));
    }
    let cfg = graph_cfg.capped_for(n);
    let ids = bundle.ids();
    let ranks = lexicographic_ranks(ids);
    let sims = ViewSimilarity::new(bundle);
    let mut ctx = Ctx {
        ids,
        audit: Vec::new(),
    };

    let tables = build_neighbor_tables(bundle, cfg.big_k)?;
    let survivors = hub_filter(&tables, cfg.th_high);
    let schedule = k_schedule(&cfg);

    let mut edges = voting_edges(&tables, schedule[0], &survivors, cfg.rule)?;
    let placed_nodes: Vec<usize> = edge_nodes(&edges).into_iter().collect();
    let comp = components_by_key(&placed_nodes, edges.iter().copied(), |i| ranks[i] as u64)?;
    let mut labels = vec![UNASSIGNED; n];
    for (&node, &c) in &comp {
        labels[node] = c as i64;
    }
    ctx.audit.push(AuditEvent::Init {
        utterances: n,
        survivors: survivors.iter().filter(|&&s| s).count(),
        k: schedule[0],
        edges: edges.len(),
        placed: placed_nodes.len(),
        classes: num_classes(&labels),
    });
    let mut snapshots = vec![StepSnapshot {
        k: schedule[0],
        labels: labels.clone(),
    }];

    for w in schedule.windows(2) {
        let (k_from, k_to) = (w[0], w[1]);
        let next_edges = voting_edges(&tables, k_to, &survivors, cfg.rule)?;
        let placed = |i: usize| labels[i] != UNASSIGNED;

        let added: EdgeSet = next_edges.difference(&edges).copied().collect();
        let old_old: EdgeSet = added
            .iter()
            .copied()
            .filter(|&(a, b)| placed(a) && placed(b))
            .collect();
        // Edges touching an unplaced utterance are taken from the whole
        // graph, so utterances rejected at an earlier step are re-tested.
        let new_new: EdgeSet = next_edges
            .iter()
            .copied()
            .filter(|&(a, b)| !placed(a) && !placed(b))
            .collect();
        let new_old: EdgeSet = next_edges
            .iter()
            .copied()
            .filter(|&(a, b)| placed(a) != placed(b))
            .collect();
        let new_utts: Vec<usize> = edge_nodes(&next_edges)
            .into_iter()
            .filter(|&i| !placed(i))
            .collect();

        // Newcomer classes from new-to-new edges only; isolated newcomers
        // become singletons.
        let new_comp = components_by_key(&new_utts, new_new.iter().copied(), |i| ranks[i] as u64)?;
        let mut new_labels = vec![UNASSIGNED; n];
        for (&node, &c) in &new_comp {
            new_labels[node] = c as i64;
        }

        let (old_labels, tests) = subspk_combine(&old_old, &labels, &sims, combine_cfg)?;
        ctx.record(k_to, MergeStage::OldOld, tests);
        let (next_labels, tests) =
            cb_new_old(&new_labels, &old_labels, &new_old, &sims, combine_cfg)?;
        let rejected = tests.iter().filter(|t| !t.decision.merge).count();
        ctx.record(k_to, MergeStage::NewOld, tests);

        let split_events = count_split_events(&labels, &next_labels);
        ctx.audit.push(AuditEvent::Step {
            k_from,
            k_to,
            added_edges: added.len(),
            old_old: old_old.len(),
            new_old: new_old.len(),
            new_new: new_new.len(),
            new_utts: new_utts.len(),
            rejected_utts: rejected,
            placed: next_labels.iter().filter(|&&l| l != UNASSIGNED).count(),
            classes: num_classes(&next_labels),
            split_events,
        });
        labels = next_labels;
        edges = next_edges;
        snapshots.push(StepSnapshot {
            k: k_to,
            labels: labels.clone(),
        });
    }

    // Discard small classes, then relabel 0..N-1 by smallest member id.
    let mut members: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        if l != UNASSIGNED {
            members.entry(l).or_default().push(i);
        }
    }
    let mut kept: Vec<(u32, i64)> = Vec::new();
    for (&l, m) in &members {
        if m.len() < cfg.min_class_size {
            ctx.audit.push(AuditEvent::Discard {
                class: l,
                size: m.len(),
            });
            for &i in m {
                labels[i] = UNASSIGNED;
            }
        } else {
            kept.push((m.iter().map(|&i| ranks[i]).min().unwrap(), l));
        }
    }
    kept.sort_unstable();
    let relabel: BTreeMap<i64, i64> = kept
        .iter()
        .enumerate()
        .map(|(new, &(_, old))| (old, new as i64))
        .collect();

    let mut partition = Partition::new();
    for (i, id) in ids.iter().enumerate() {
        let l = labels[i];
        partition.insert(id.clone(), if l == UNASSIGNED { l } else { relabel[&l] })?;
    }
    let retained = partition.retained();
    ctx.audit.push(AuditEvent::Final {
        classes: relabel.len(),
        retained,
        discarded: n - retained,
    });
    Ok(ClusterOutcome {
        partition,
        audit: ctx.audit,
        snapshots,
        graph_cfg: cfg,
    })
}

fn num_classes(labels: &[i64]) -> usize {
    labels
        .iter()
        .filter(|&&l| l != UNASSIGNED)
        .collect::<BTreeSet<_>>()
        .len()
}
