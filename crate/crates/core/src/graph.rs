//! KNN affinity graph construction, hub filtering, multi-view voted edges and
//! connected sub-graph search.
//!
//! Utterances are addressed by their index in the [`ViewBundle`]; ties between
//! equal similarities are always broken by lexicographic utterance id.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Partition, ViewBundle};
use crate::vecops::UnitRows;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeRule {
    /// Keep `{i, j}` if the vote holds from either endpoint.
    Or,
    /// Keep `{i, j}` only if the vote holds from both endpoints.
    And,
}

impl std::str::FromStr for EdgeRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "or" => Ok(EdgeRule::Or),
            "and" => Ok(EdgeRule::And),
            _ => Err(format!("unknown edge rule '{s}' (expected or|and)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Neighbor list length used for hub filtering.
    pub big_k: usize,
    pub k_init: usize,
    pub k_step: usize,
    pub k_final: usize,
    pub th_high: f64,
    pub min_class_size: usize,
    pub rule: EdgeRule,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            big_k: 500,
            k_init: 10,
            k_step: 5,
            k_final: 50,
            th_high: 0.7,
            min_class_size: 10,
            rule: EdgeRule::Or,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.big_k == 0 {
            return Err(Error::param("K", "must be positive"));
        }
        if self.k_init == 0 {
            return Err(Error::param("k_init", "must be positive"));
        }
        if self.k_step == 0 {
            return Err(Error::param("k_step", "must be positive"));
        }
        if self.min_class_size == 0 {
            return Err(Error::param("min_class_size", "must be positive"));
        }
        if self.k_init > self.k_final {
            return Err(Error::param(
                "k_init",
                format!("k_init {} exceeds k_final {}", self.k_init, self.k_final),
            ));
        }
        if self.k_final > self.big_k {
            return Err(Error::param(
                "k_final",
                format!("k_final {} exceeds K {}", self.k_final, self.big_k),
            ));
        }
        if !(self.th_high > 0.0 && self.th_high <= 1.0) {
            return Err(Error::param("th_high", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Copy with K and all k values capped at `n - 1` for an `n`-utterance corpus.
    pub fn capped_for(&self, n: usize) -> GraphConfig {
        let cap = n.saturating_sub(1).max(1);
        GraphConfig {
            big_k: self.big_k.min(cap),
            k_init: self.k_init.min(cap),
            k_final: self.k_final.min(cap),
            ..self.clone()
        }
    }
}

/// Rank of every id in lexicographic order; used as the tie-break key.
pub fn lexicographic_ranks(ids: &[String]) -> Vec<u32> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    let mut ranks = vec![0u32; ids.len()];
    for (r, i) in order.into_iter().enumerate() {
        ranks[i] = r as u32;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: u32,
    pub sim: f64,
}

/// Top-K cosine neighbors of every utterance in one view, strongest first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    k: usize,
    rows: Vec<Vec<Neighbor>>,
}

impl NeighborTable {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[Neighbor] {
        &self.rows[i]
    }

    /// Similarity of the `k`-th strongest neighbor (1-based).
    pub fn kth_sim(&self, i: usize, k: usize) -> f64 {
        self.rows[i][k - 1].sim
    }

    /// Neighbors whose similarity is at least the `k`-th similarity; ties at
    /// the boundary are included.
    pub fn top(&self, i: usize, k: usize) -> &[Neighbor] {
        let row = &self.rows[i];
        let thr = row[k - 1].sim;
        let mut end = k;
        while end < row.len() && row[end].sim >= thr {
            end += 1;
        }
        &row[..end]
    }
}

fn neighbor_order(ranks: &[u32]) -> impl Fn(&Neighbor, &Neighbor) -> Ordering + '_ {
    move |a, b| {
        b.sim
            .total_cmp(&a.sim)
            .then_with(|| ranks[a.index as usize].cmp(&ranks[b.index as usize]))
    }
}

/// Exact brute-force top-K tables, one per view.
pub fn build_neighbor_tables(bundle: &ViewBundle, k: usize) -> Result<Vec<NeighborTable>> {
    let n = bundle.len();
    if k == 0 {
        return Err(Error::param("K", "must be positive"));
    }
    if k >= n {
        return Err(Error::param(
            "K",
            format!("K = {k} must be smaller than the number of utterances ({n})"),
        ));
    }
    let ranks = lexicographic_ranks(bundle.ids());
    let cmp = neighbor_order(&ranks);
    let tables = bundle
        .views()
        .iter()
        .map(|view| {
            let unit = UnitRows::from_set(view);
            let rows = (0..n)
                .into_par_iter()
                .map(|i| {
                    let qi = unit.row(i);
                    let mut cand: Vec<Neighbor> = (0..n)
                        .filter(|&j| j != i)
                        .map(|j| Neighbor {
                            index: j as u32,
                            sim: crate::vecops::dot(qi, unit.row(j)).clamp(-1.0, 1.0),
                        })
                        .collect();
                    if k < cand.len() {
                        cand.select_nth_unstable_by(k - 1, &cmp);
                        cand.truncate(k);
                    }
                    cand.sort_by(&cmp);
                    cand
                })
                .collect();
            NeighborTable { k, rows }
        })
        .collect();
    Ok(tables)
}

/// Survivor mask: an utterance is dropped when its K-th similarity exceeds
/// `th_high` in any view.
pub fn hub_filter(tables: &[NeighborTable], th_high: f64) -> Vec<bool> {
    let Some(first) = tables.first() else {
        return Vec::new();
    };
    (0..first.len())
        .map(|i| !tables.iter().any(|t| t.kth_sim(i, t.k()) > th_high))
        .collect()
}

/// Undirected edge set over utterance indices, canonicalized `i < j`.
pub type EdgeSet = BTreeSet<(usize, usize)>;

pub fn canonical(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Voted edges at neighborhood size `k`: `j` votes for `i` when it lies within
/// `i`'s top-k in every view. Both endpoints must be survivors.
pub fn voting_edges(
    tables: &[NeighborTable],
    k: usize,
    survivors: &[bool],
    rule: EdgeRule,
) -> Result<EdgeSet> {
    let Some(first) = tables.first() else {
        return Err(Error::Empty("neighbor tables"));
    };
    if k == 0 || k > first.k() {
        return Err(Error::param(
            "k",
            format!("k = {k} must lie in 1..={}", first.k()),
        ));
    }
    if survivors.len() != first.len() {
        return Err(Error::param(
            "survivors",
            "mask length does not match tables",
        ));
    }
    let directed: Vec<Vec<usize>> = (0..first.len())
        .into_par_iter()
        .map(|i| {
            if !survivors[i] {
                return Vec::new();
            }
            let others: Vec<HashSet<u32>> = tables[1..]
                .iter()
                .map(|t| t.top(i, k).iter().map(|nb| nb.index).collect())
                .collect();
            first
                .top(i, k)
                .iter()
                .map(|nb| nb.index)
                .filter(|&j| survivors[j as usize] && others.iter().all(|s| s.contains(&j)))
                .map(|j| j as usize)
                .collect()
        })
        .collect();

    let mut edges = EdgeSet::new();
    match rule {
        EdgeRule::Or => {
            for (i, js) in directed.iter().enumerate() {
                edges.extend(js.iter().map(|&j| canonical(i, j)));
            }
        }
        EdgeRule::And => {
            let set: HashSet<(usize, usize)> = directed
                .iter()
                .enumerate()
                .flat_map(|(i, js)| js.iter().map(move |&j| (i, j)))
                .collect();
            for &(i, j) in &set {
                if i < j && set.contains(&(j, i)) {
                    edges.insert((i, j));
                }
            }
        }
    }
    Ok(edges)
}

/// Endpoints of an edge set.
pub fn edge_nodes(edges: &EdgeSet) -> BTreeSet<usize> {
    edges.iter().flat_map(|&(a, b)| [a, b]).collect()
}

#[derive(Debug, Clone)]
pub(crate) struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.rank[a] < self.rank[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        if self.rank[a] == self.rank[b] {
            self.rank[a] += 1;
        }
    }
}

/// Connected components over `nodes` (sparse ids with an ordering key).
/// Returns `node → component`, components numbered by their smallest key.
pub(crate) fn components_by_key(
    nodes: &[usize],
    edges: impl IntoIterator<Item = (usize, usize)>,
    key: impl Fn(usize) -> u64,
) -> Result<HashMap<usize, usize>> {
    let pos: HashMap<usize, usize> = nodes.iter().enumerate().map(|(p, &n)| (n, p)).collect();
    let mut ds = DisjointSet::new(nodes.len());
    for (a, b) in edges {
        let (Some(&pa), Some(&pb)) = (pos.get(&a), pos.get(&b)) else {
            return Err(Error::param(
                "edges",
                format!("edge ({a}, {b}) references a node outside the node set"),
            ));
        };
        ds.union(pa, pb);
    }
    let mut min_key: HashMap<usize, u64> = HashMap::new();
    for (p, &n) in nodes.iter().enumerate() {
        let root = ds.find(p);
        let k = key(n);
        min_key
            .entry(root)
            .and_modify(|m| *m = (*m).min(k))
            .or_insert(k);
    }
    let mut roots: Vec<(u64, usize)> = min_key.into_iter().map(|(r, k)| (k, r)).collect();
    roots.sort_unstable();
    let label_of_root: HashMap<usize, usize> = roots
        .into_iter()
        .enumerate()
        .map(|(l, (_, r))| (r, l))
        .collect();
    Ok(nodes
        .iter()
        .enumerate()
        .map(|(p, &n)| (n, label_of_root[&ds.find(p)]))
        .collect())
}

/// One class per connected component; labels `0..N-1` in order of each
/// component's lexicographically smallest member id. Nodes without edges
/// form singleton classes.
pub fn connected_subgraphs(nodes: &[String], edges: &[(String, String)]) -> Result<Partition> {
    let mut sorted: Vec<&String> = nodes.iter().collect();
    sorted.sort();
    sorted.dedup();
    let idx: BTreeMap<&str, usize> = sorted
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut pairs = Vec::with_capacity(edges.len());
    for (a, b) in edges {
        let ia = *idx
            .get(a.as_str())
            .ok_or_else(|| Error::UnknownId(a.clone()))?;
        let ib = *idx
            .get(b.as_str())
            .ok_or_else(|| Error::UnknownId(b.clone()))?;
        pairs.push((ia, ib));
    }
    let dense: Vec<usize> = (0..sorted.len()).collect();
    let comp = components_by_key(&dense, pairs, |n| n as u64)?;
    let mut out = Partition::new();
    for id in nodes {
        out.insert(id.clone(), comp[&idx[id.as_str()]] as i64)?;
    }
    Ok(out)
}
