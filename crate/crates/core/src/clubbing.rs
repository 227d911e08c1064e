//! Graph clubbing (GCH): repeated partial weighted matching and contraction
//! of the shed graph. Contracted nodes become critical; their target class
//! is re-evaluated and their edges to other critical nodes are re-weighted
//! with the re-assessment constants, so original heavy edges are consumed
//! before re-assessed ones. Union-find components of the contracted graph
//! are the partitions.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusteringResult;
use crate::error::{Error, Result};
use crate::knitting::{edge_weight, HeuristicParams, PatternGraph};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
}

impl Matching {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Greedy matching over edges with `w >= edge_cut`, heaviest first; ties
/// go to the lexicographically smaller `(u, v)` with `u < v`.
pub fn pwm(g: &PatternGraph, edge_cut: f64) -> Matching {
    let mut edges: Vec<(usize, usize, f64)> = g.edges().into_iter().filter(|e| e.2 >= edge_cut).collect();
    edges.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let mut visited = vec![false; g.len()];
    let mut pairs = Vec::new();
    for (u, v, _) in edges {
        if !visited[u] && !visited[v] {
            visited[u] = true;
            visited[v] = true;
            pairs.push((u, v));
        }
    }
    Matching { pairs }
}

/// Sum of edge weights strictly above `edge_cut`.
pub fn graph_cost(g: &PatternGraph, edge_cut: f64) -> f64 {
    g.edges().iter().filter(|e| e.2 > edge_cut).map(|e| e.2).sum()
}

/// Backward-difference kink test: the latest cost change is less than
/// `theta` times the previous one.
pub fn kink_detected(prev_cost: f64, prev_prev_cost: f64, curr_cost: f64, theta: f64) -> bool {
    (curr_cost - prev_cost).abs() < theta * (prev_cost - prev_prev_cost).abs()
}

#[derive(Debug, Clone)]
pub struct CoarsenState {
    /// Current graph. Contracted-away nodes are inactive; a supernode keeps
    /// the minimum original id of its component.
    pub graph: PatternGraph,
    parent: Vec<usize>,
    pub critical: Vec<bool>,
    /// Nodes that took part in at least one contraction.
    pub contracted: Vec<bool>,
    pub cost_history: Vec<f64>,
}

impl CoarsenState {
    pub fn new(graph: PatternGraph) -> Self {
        let n = graph.len();
        Self {
            graph,
            parent: (0..n).collect(),
            critical: vec![false; n],
            contracted: vec![false; n],
            cost_history: Vec::new(),
        }
    }

    /// Supernode containing original node `x`.
    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    pub fn critical_nodes(&self) -> Vec<usize> {
        (0..self.critical.len()).filter(|&i| self.critical[i]).collect()
    }

    pub fn active_nodes(&self) -> usize {
        self.graph.active.iter().filter(|&&a| a).count()
    }

    fn merge(&mut self, keep: usize, gone: usize) {
        let g = &mut self.graph;
        let (a, b) = (&g.nodes[keep], &g.nodes[gone]);
        let size = a.size + b.size;
        let tc = (a.tc * a.size as f64 + b.tc * b.size as f64) / size as f64;
        let center: Vec<f64> = a
            .center
            .iter()
            .zip(&b.center)
            .map(|(x, y)| (x * a.size as f64 + y * b.size as f64) / size as f64)
            .collect();
        g.nodes[keep].size = size;
        g.nodes[keep].tc = tc;
        g.nodes[keep].center = center;

        let moved = std::mem::take(&mut g.adjacency[gone]);
        for (x, w) in moved {
            let adj = &mut g.adjacency[x];
            if let Ok(pos) = adj.binary_search_by_key(&gone, |e| e.0) {
                adj.remove(pos);
            }
            if x == keep {
                continue;
            }
            // Parallel edges keep the heavier weight until re-assessed.
            let w = g.weight(keep, x).map_or(w, |old| old.max(w));
            g.set_weight(keep, x, w);
        }
        g.active[gone] = false;
        self.parent[gone] = keep;
        self.critical[gone] = false;
        self.critical[keep] = true;
        self.contracted[keep] = true;
        self.contracted[gone] = true;
    }
}

/// Contracts every matched pair into `min(i, j)`, re-evaluates the target
/// class as the size-weighted mean and re-weights edges between the new
/// critical nodes and all critical nodes with the re-assessment constants,
/// never above their current weight.
pub fn contract(state: &mut CoarsenState, m: &Matching, params: &HeuristicParams) -> Result<()> {
    let n = state.graph.len();
    let mut seen = vec![false; n];
    for &(i, j) in &m.pairs {
        if i >= n || j >= n || i == j {
            return Err(Error::StaleMatching(format!("pair ({i}, {j}) is not a node pair")));
        }
        if !state.graph.active[i] || !state.graph.active[j] {
            return Err(Error::StaleMatching(format!("pair ({i}, {j}) has a contracted endpoint")));
        }
        if seen[i] || seen[j] {
            return Err(Error::StaleMatching(format!("node repeated in pair ({i}, {j})")));
        }
        if state.graph.weight(i, j).is_none() {
            return Err(Error::StaleMatching(format!("no edge between {i} and {j}")));
        }
        seen[i] = true;
        seen[j] = true;
    }

    let mut new_critical = Vec::with_capacity(m.len());
    for &(i, j) in &m.pairs {
        let (keep, gone) = (i.min(j), i.max(j));
        state.merge(keep, gone);
        new_critical.push(keep);
    }
    for &i in &new_critical {
        let neighbors: Vec<usize> = state.graph.adjacency[i].iter().map(|e| e.0).collect();
        for j in neighbors {
            if state.critical[j] {
                let w = edge_weight(
                    state.graph.nodes[i].tc,
                    state.graph.nodes[j].tc,
                    params.ci_reassess,
                    params.ce_reassess,
                );
                // Re-assessment only ever demotes an edge; otherwise an
                // impure pair could climb back above the cut and raise the
                // graph cost.
                let old = state.graph.weight(i, j).unwrap_or(w);
                state.graph.set_weight(i, j, w.min(old));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub id: usize,
    pub cluster_ids: Vec<usize>,
    pub point_ids: Vec<usize>,
    /// `[negatives, positives]`
    pub per_class_counts: [usize; 2],
}

impl Partition {
    pub fn size(&self) -> usize {
        self.point_ids.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PartitionSet {
    pub partitions: Vec<Partition>,
}

impl PartitionSet {
    pub fn len(&self) -> usize {
        self.partitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partitions.is_empty()
    }

    /// Builds partitions from groups of cluster ids.
    pub fn from_groups(groups: Vec<Vec<usize>>, clustering: &ClusteringResult) -> Self {
        let partitions = groups
            .into_iter()
            .enumerate()
            .map(|(id, mut cluster_ids)| {
                cluster_ids.sort_unstable();
                let mut point_ids: Vec<usize> = cluster_ids
                    .iter()
                    .flat_map(|&c| clustering.clusters[c].members.iter().copied())
                    .collect();
                point_ids.sort_unstable();
                let pos: usize = cluster_ids
                    .iter()
                    .map(|&c| {
                        let cl = &clustering.clusters[c];
                        (cl.size as f64 * (1.0 + cl.tc) / 2.0).round() as usize
                    })
                    .sum();
                Partition {
                    id,
                    per_class_counts: [point_ids.len() - pos, pos],
                    cluster_ids,
                    point_ids,
                }
            })
            .collect();
        Self { partitions }
    }

    /// One partition per line: id, cluster ids, point ids, class counts.
    pub fn write_jsonl(&self, path: impl AsRef<Path>, header: Option<&serde_json::Value>) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        if let Some(h) = header {
            writeln!(out, "{}", serde_json::json!({ "config": h }))?;
        }
        for p in &self.partitions {
            serde_json::to_writer(&mut out, p)?;
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut partitions = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(&line)?;
            if value.get("config").is_some() {
                continue;
            }
            partitions.push(serde_json::from_value(value)?);
        }
        Ok(Self { partitions })
    }
}

#[derive(Debug, Clone)]
pub struct ClubOutcome {
    pub partitions: PartitionSet,
    /// Graph cost before coarsening, then after every iteration.
    pub cost_history: Vec<f64>,
    pub iterations_run: usize,
    pub stopped_on_kink: bool,
    /// Active node count before each iteration's matching.
    pub candidates_per_iteration: Vec<usize>,
}

pub fn write_cost_csv(history: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "iteration,cost")?;
    for (i, c) in history.iter().enumerate() {
        writeln!(out, "{i},{c}")?;
    }
    out.flush()?;
    Ok(())
}

/// Iterates PWM and contraction on a shed graph (inactive nodes are
/// ignored). Stops after `max_coarsen_iters`, when no edge qualifies for
/// matching, or, with `kink_termination`, when the cost curve flattens.
/// Every contracted component becomes a partition and every relevant
/// cluster that was never matched becomes a singleton partition.
pub fn club(g: &PatternGraph, clustering: &ClusteringResult, params: &HeuristicParams) -> Result<ClubOutcome> {
    params.validate()?;
    let mut state = CoarsenState::new(g.clone());
    state.cost_history.push(graph_cost(&state.graph, params.gc_edge_cut));
    let mut iterations_run = 0;
    let mut stopped_on_kink = false;
    let mut candidates_per_iteration = Vec::new();

    while iterations_run < params.max_coarsen_iters {
        candidates_per_iteration.push(state.active_nodes());
        let m = pwm(&state.graph, params.gc_edge_cut);
        if m.is_empty() {
            break;
        }
        contract(&mut state, &m, params)?;
        iterations_run += 1;
        state.cost_history.push(graph_cost(&state.graph, params.gc_edge_cut));
        let h = &state.cost_history;
        if params.kink_termination && h.len() >= 3 {
            let t = h.len() - 1;
            if kink_detected(h[t - 1], h[t - 2], h[t], params.kink_theta) {
                stopped_on_kink = true;
                break;
            }
        }
    }

    let relevant: Vec<usize> = (0..g.len()).filter(|&i| g.active[i]).collect();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; g.len()];
    for &i in &relevant {
        let root = state.find(i);
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(g.nodes[i].cluster_id);
    }
    groups.sort_by_key(|grp| grp.iter().copied().min());
    Ok(ClubOutcome {
        partitions: PartitionSet::from_groups(groups, clustering),
        cost_history: state.cost_history,
        iterations_run,
        stopped_on_kink,
        candidates_per_iteration,
    })
}
