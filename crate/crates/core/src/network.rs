//! Global-threshold selection, event graphs and the network metric suite.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::WeightMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
    /// Lag in steps that produced `weight`.
    pub delay: usize,
}

/// Undirected simple graph over the nodes of one event.
#[derive(Debug, Clone, PartialEq)]
pub struct EventGraph {
    pub event_id: u64,
    pub n: usize,
    /// Node positions `(lat, lon)`, when attached.
    pub positions: Vec<(f64, f64)>,
    pub edges: Vec<Edge>,
    pub gt: f64,
}

impl EventGraph {
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for e in &self.edges {
            adj[e.a].push(e.b);
            adj[e.b].push(e.a);
        }
        for list in adj.iter_mut() {
            list.sort_unstable();
        }
        adj
    }
}

/// Keeps every defined pair with weight `>= gt`; isolated nodes stay.
pub fn threshold_graph(weights: &WeightMatrix, gt: f64) -> EventGraph {
    let edges = weights
        .entries()
        .filter(|&(_, _, w, _)| w >= gt)
        .map(|(a, b, weight, delay)| Edge { a, b, weight, delay })
        .collect();
    EventGraph {
        event_id: 0,
        n: weights.n(),
        positions: Vec::new(),
        edges,
        gt,
    }
}

/// How candidate thresholds are scanned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GtScan {
    /// Every distinct weight.
    Exact,
    /// `k` evenly spaced quantiles of the distinct weights; approximate.
    Quantile(usize),
}

impl std::fmt::Display for GtScan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GtScan::Exact => write!(f, "exact"),
            GtScan::Quantile(k) => write!(f, "quantile-{k}"),
        }
    }
}

impl std::str::FromStr for GtScan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "exact" {
            return Ok(GtScan::Exact);
        }
        s.strip_prefix("quantile-")
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k >= 2)
            .map(GtScan::Quantile)
            .ok_or_else(|| Error::Invalid(format!("unknown gt scan mode {s:?}")))
    }
}

/// Dense bitset adjacency with components tracked by union-find.
struct IncrementalGraph {
    n: usize,
    words: usize,
    rows: Vec<u64>,
    parent: Vec<usize>,
    size: Vec<usize>,
    min_node: Vec<usize>,
    /// Giant component root: largest, ties to the smallest member index.
    giant: usize,
}

impl IncrementalGraph {
    fn new(n: usize) -> Self {
        let words = n.div_ceil(64);
        IncrementalGraph {
            n,
            words,
            rows: vec![0; n * words],
            parent: (0..n).collect(),
            size: vec![1; n],
            min_node: (0..n).collect(),
            giant: 0,
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn beats(&self, a: usize, b: usize) -> bool {
        (self.size[a], std::cmp::Reverse(self.min_node[a]))
            > (self.size[b], std::cmp::Reverse(self.min_node[b]))
    }

    fn add_edge(&mut self, a: usize, b: usize) {
        self.rows[a * self.words + b / 64] |= 1 << (b % 64);
        self.rows[b * self.words + a / 64] |= 1 << (a % 64);
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        self.min_node[big] = self.min_node[big].min(self.min_node[small]);
        let giant = self.find(self.giant);
        self.giant = if giant == big || self.beats(big, giant) { big } else { giant };
    }

    /// `(smallest member, size)`; identifies the member set since components only grow.
    fn giant_signature(&mut self) -> (usize, usize) {
        let g = self.find(self.giant);
        (self.min_node[g], self.size[g])
    }

    fn giant_members(&mut self) -> Vec<usize> {
        let g = self.find(self.giant);
        (0..self.n).filter(|&v| self.find(v) == g).collect()
    }

    /// Largest eccentricity over the giant component, by bitset BFS.
    fn giant_diameter(&mut self) -> usize {
        let members = self.giant_members();
        let words = self.words;
        let rows = &self.rows;
        members
            .par_iter()
            .map(|&src| {
                let mut visited = vec![0u64; words];
                let mut frontier = vec![0u64; words];
                let mut next = vec![0u64; words];
                visited[src / 64] |= 1 << (src % 64);
                frontier[src / 64] |= 1 << (src % 64);
                let mut depth = 0;
                loop {
                    next.iter_mut().for_each(|w| *w = 0);
                    for (wi, &word) in frontier.iter().enumerate() {
                        let mut bits = word;
                        while bits != 0 {
                            let v = wi * 64 + bits.trailing_zeros() as usize;
                            bits &= bits - 1;
                            let row = &rows[v * words..(v + 1) * words];
                            for k in 0..words {
                                next[k] |= row[k];
                            }
                        }
                    }
                    let mut any = false;
                    for k in 0..words {
                        next[k] &= !visited[k];
                        visited[k] |= next[k];
                        any |= next[k] != 0;
                    }
                    if !any {
                        break depth;
                    }
                    depth += 1;
                    std::mem::swap(&mut frontier, &mut next);
                }
            })
            .max()
            .unwrap_or(0)
    }
}

/// Sorted descending distinct weights, with entries grouped per weight.
fn descending_weight_groups(weights: &WeightMatrix) -> Vec<(f64, Vec<(usize, usize)>)> {
    let mut entries: Vec<(f64, usize, usize)> =
        weights.entries().map(|(a, b, w, _)| (w, a, b)).collect();
    entries.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut groups: Vec<(f64, Vec<(usize, usize)>)> = Vec::new();
    for (w, a, b) in entries {
        match groups.last_mut() {
            Some((gw, list)) if *gw == w => list.push((a, b)),
            _ => groups.push((w, vec![(a, b)])),
        }
    }
    groups
}

/// Threshold at which the giant component's diameter peaks, and that diameter.
///
/// Candidates are the distinct defined weights; ties go to the largest
/// threshold. Scanning runs from the top weight down, adding edges as it goes.
/// While the giant component keeps the same members, adding edges can only
/// shorten paths, so its diameter is only recomputed when the membership changes.
pub fn select_global_threshold(weights: &WeightMatrix) -> Result<(f64, usize)> {
    select_global_threshold_with(weights, GtScan::Exact)
}

pub fn select_global_threshold_with(weights: &WeightMatrix, scan: GtScan) -> Result<(f64, usize)> {
    let groups = descending_weight_groups(weights);
    if groups.is_empty() {
        return Err(Error::Invalid("weight matrix has no defined weights".into()));
    }
    match scan {
        GtScan::Exact => Ok(exact_scan(weights.n(), &groups)),
        GtScan::Quantile(k) => Ok(quantile_scan(weights.n(), &groups, k)),
    }
}

fn exact_scan(n: usize, groups: &[(f64, Vec<(usize, usize)>)]) -> (f64, usize) {
    let mut graph = IncrementalGraph::new(n);
    let mut best: Option<(f64, usize)> = None;
    let mut last_signature = None;
    for (w, edges) in groups {
        for &(a, b) in edges {
            graph.add_edge(a, b);
        }
        let signature = graph.giant_signature();
        if last_signature == Some(signature) {
            continue;
        }
        last_signature = Some(signature);
        let d = graph.giant_diameter();
        if best.is_none_or(|(_, best_d)| d > best_d) {
            best = Some((*w, d));
        }
    }
    best.expect("at least one candidate")
}

fn quantile_scan(n: usize, groups: &[(f64, Vec<(usize, usize)>)], k: usize) -> (f64, usize) {
    let m = groups.len();
    // Positions in the descending list; the top weight is always a candidate.
    let mut picks: Vec<usize> = (0..k.max(1))
        .map(|q| {
            if k <= 1 {
                0
            } else {
                (q * (m - 1) + (k - 1) / 2) / (k - 1)
            }
        })
        .collect();
    picks.dedup();
    let mut graph = IncrementalGraph::new(n);
    let mut best: Option<(f64, usize)> = None;
    let mut next_pick = 0;
    for (pos, (w, edges)) in groups.iter().enumerate() {
        for &(a, b) in edges {
            graph.add_edge(a, b);
        }
        if next_pick < picks.len() && picks[next_pick] == pos {
            next_pick += 1;
            let d = graph.giant_diameter();
            if best.is_none_or(|(_, best_d)| d > best_d) {
                best = Some((*w, d));
            }
        }
    }
    best.expect("at least one candidate")
}

/// Topological summary of one event graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetMetrics {
    pub event_id: u64,
    pub n: usize,
    #[serde(rename = "l_edges")]
    pub l: usize,
    pub k_avg: f64,
    pub c_avg: f64,
    pub diameter: usize,
    pub l_avg: f64,
    pub nc: usize,
    pub gc: usize,
    pub st: usize,
    #[serde(rename = "t_delay_min")]
    pub t_delay: f64,
    pub gt: f64,
}

impl NetMetrics {
    pub const COLUMNS: [&'static str; 11] = [
        "n",
        "l_edges",
        "k_avg",
        "c_avg",
        "diameter",
        "l_avg",
        "nc",
        "gc",
        "st",
        "t_delay_min",
        "gt",
    ];

    /// Values in [`Self::COLUMNS`] order.
    pub fn values(&self) -> [f64; 11] {
        [
            self.n as f64,
            self.l as f64,
            self.k_avg,
            self.c_avg,
            self.diameter as f64,
            self.l_avg,
            self.nc as f64,
            self.gc as f64,
            self.st as f64,
            self.t_delay,
            self.gt,
        ]
    }
}

fn bfs(adj: &[Vec<usize>], src: usize, dist: &mut [usize], queue: &mut VecDeque<usize>) {
    dist.iter_mut().for_each(|d| *d = usize::MAX);
    dist[src] = 0;
    queue.clear();
    queue.push_back(src);
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
}

/// Component label per node, labels assigned in order of smallest member.
pub fn components(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        label[s] = next;
        stack.push(s);
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if label[u] == usize::MAX {
                    label[u] = next;
                    stack.push(u);
                }
            }
        }
        next += 1;
    }
    label
}

/// Computes the metric suite.
///
/// The diameter is taken over the giant component (largest; ties go to the
/// one holding the smallest node index). The average shortest path covers
/// every connected pair of distinct nodes across all components.
pub fn network_metrics(graph: &EventGraph, timestep_minutes: u32) -> NetMetrics {
    let n = graph.n;
    let adj = graph.adjacency();
    let l = graph.edges.len();

    let mut linked = vec![false; n * n];
    for e in &graph.edges {
        linked[e.a * n + e.b] = true;
        linked[e.b * n + e.a] = true;
    }
    let c_sum: f64 = adj
        .iter()
        .map(|nb| {
            let k = nb.len();
            if k < 2 {
                return 0.0;
            }
            let mut tri = 0usize;
            for x in 0..k {
                for y in x + 1..k {
                    if linked[nb[x] * n + nb[y]] {
                        tri += 1;
                    }
                }
            }
            tri as f64 / (k * (k - 1) / 2) as f64
        })
        .sum();

    let label = components(&adj);
    let nc = label.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; nc];
    for &c in &label {
        sizes[c] += 1;
    }
    let gc = sizes.iter().copied().max().unwrap_or(0);
    let giant = sizes.iter().position(|&s| s == gc);
    let st = sizes.iter().filter(|&&s| s == 1).count();

    let per_source: Vec<(usize, u64, u64)> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0usize; n], VecDeque::new()),
            |(dist, queue), src| {
                bfs(&adj, src, dist, queue);
                let (mut ecc, mut sum, mut pairs) = (0usize, 0u64, 0u64);
                for (v, &d) in dist.iter().enumerate() {
                    if v > src && d != usize::MAX {
                        sum += d as u64;
                        pairs += 1;
                    }
                    if d != usize::MAX {
                        ecc = ecc.max(d);
                    }
                }
                (ecc, sum, pairs)
            },
        )
        .collect();
    let diameter = per_source
        .iter()
        .enumerate()
        .filter(|&(v, _)| Some(label[v]) == giant)
        .map(|(_, s)| s.0)
        .max()
        .unwrap_or(0);
    let (sum, pairs) = per_source
        .iter()
        .fold((0u64, 0u64), |(s, p), x| (s + x.1, p + x.2));

    let t_delay = if l == 0 {
        0.0
    } else {
        graph.edges.iter().map(|e| e.delay as f64).sum::<f64>() / l as f64
            * f64::from(timestep_minutes)
    };

    NetMetrics {
        event_id: graph.event_id,
        n,
        l,
        k_avg: if n == 0 { 0.0 } else { 2.0 * l as f64 / n as f64 },
        c_avg: if n == 0 { 0.0 } else { c_sum / n as f64 },
        diameter,
        l_avg: if pairs == 0 { 0.0 } else { sum as f64 / pairs as f64 },
        nc,
        gc,
        st,
        t_delay,
        gt: graph.gt,
    }
}
