//! Graph knitting: the class-pattern weighted neighbor graph over cluster
//! centers.
//!
//! Construction happens in three stages. A superficial neighbor search (SNS)
//! links each node to its nearest centers while capping same-class links and
//! accumulating the node's reach. Exclusive neighbor searches (ENS) then let
//! nodes whose reach extends across the class boundary pick up opposite-class
//! neighbors, and after every ENS iteration nodes that were chosen too often
//! leave the search space. Finally the directed neighbor lists are
//! symmetrized and every edge is weighted by [`edge_weight`].

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ann::{NNIndex, SearchMode};
use crate::clustering::Cluster;
use crate::error::{Error, Result};

/// Tunables of the knitting, shedding and clubbing stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicParams {
    /// Desired neighbor count per node.
    pub nn: usize,
    /// Scaling constant applied to the summed same-class distances.
    pub reach_scale: f64,
    pub max_same_class_neigh: usize,
    /// How many ENS edges a node may accept as a candidate.
    pub neigh_limit: usize,
    pub ci_init: f64,
    pub ce_init: f64,
    pub ci_reassess: f64,
    pub ce_reassess: f64,
    pub gs_edge_cut: f64,
    pub gc_edge_cut: f64,
    pub max_coarsen_iters: usize,
    pub ens_iters: usize,
    /// Stop coarsening early when the graph cost curve flattens.
    pub kink_termination: bool,
    pub kink_theta: f64,
}

impl Default for HeuristicParams {
    fn default() -> Self {
        Self {
            nn: 4,
            reach_scale: 1.0,
            max_same_class_neigh: 3,
            neigh_limit: 4,
            ci_init: std::f64::consts::E,
            ce_init: 4f64.exp(),
            ci_reassess: 1.5f64.exp(),
            ce_reassess: 1.0,
            gs_edge_cut: 3.01,
            gc_edge_cut: 3.20,
            max_coarsen_iters: 10,
            ens_iters: 0,
            kink_termination: false,
            kink_theta: 0.2,
        }
    }
}

impl HeuristicParams {
    pub fn validate(&self) -> Result<()> {
        if self.nn == 0 {
            return Err(Error::invalid("nn must be >= 1"));
        }
        if self.max_same_class_neigh > self.nn {
            return Err(Error::invalid("max_same_class_neigh must not exceed nn"));
        }
        for (name, v) in [
            ("ci_init", self.ci_init),
            ("ce_init", self.ce_init),
            ("ci_reassess", self.ci_reassess),
            ("ce_reassess", self.ce_reassess),
        ] {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.reach_scale >= 0.0) {
            return Err(Error::invalid("reach_scale must be >= 0"));
        }
        if !(self.kink_theta > 0.0 && self.kink_theta < 1.0) {
            return Err(Error::invalid("kink_theta must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// `C_I^(1-|tc_i|) + C_I^(1-|tc_j|) + C_E^|tc_i - tc_j|`
pub fn edge_weight(tc_i: f64, tc_j: f64, c_internal: f64, c_external: f64) -> f64 {
    c_internal.powf(1.0 - tc_i.abs()) + c_internal.powf(1.0 - tc_j.abs()) + c_external.powf((tc_i - tc_j).abs())
}

/// `R * sum(distances)` over a node's accepted same-class neighbors.
pub fn compute_reach(dists_to_same_class_neighbors: &[f64], reach_scale: f64) -> f64 {
    reach_scale * dists_to_same_class_neighbors.iter().sum::<f64>()
}

/// Class index of a fractional target: 0 for negative, 1 otherwise.
pub fn class_of(tc: f64) -> usize {
    usize::from(tc >= 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub cluster_id: usize,
    pub center: Vec<f64>,
    pub tc: f64,
    pub size: usize,
}

/// Node ids equal positions in `nodes`, and for graphs built from a
/// clustering they equal cluster ids.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternGraph {
    pub nodes: Vec<GraphNode>,
    /// Undirected weighted adjacency, sorted by neighbor id. Filled by
    /// [`PatternGraph::finalize`].
    pub adjacency: Vec<Vec<(usize, f64)>>,
    /// Directed neighbor lists built during knitting.
    pub neigh_list: Vec<Vec<usize>>,
    pub reach: Vec<f64>,
    pub neigh_finished: Vec<bool>,
    pub no_tot_neigh: Vec<usize>,
    /// ENS edges accepted with this node as the candidate.
    pub node_neigh: Vec<usize>,
    /// Per-class node ids still available to ENS.
    pub search_space: [Vec<usize>; 2],
    /// Nodes still part of the graph view (shedding deactivates nodes).
    pub active: Vec<bool>,
}

impl PatternGraph {
    fn empty(nodes: Vec<GraphNode>) -> Self {
        let n = nodes.len();
        let mut search_space = [Vec::new(), Vec::new()];
        for (i, node) in nodes.iter().enumerate() {
            search_space[class_of(node.tc)].push(i);
        }
        Self {
            nodes,
            adjacency: vec![Vec::new(); n],
            neigh_list: vec![Vec::new(); n],
            reach: vec![0.0; n],
            neigh_finished: vec![false; n],
            no_tot_neigh: vec![0; n],
            node_neigh: vec![0; n],
            search_space,
            active: vec![true; n],
        }
    }

    /// Builds a graph directly from nodes and undirected weighted edges.
    pub fn from_edges(nodes: Vec<GraphNode>, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut g = Self::empty(nodes);
        let n = g.nodes.len();
        for &(u, v, w) in edges {
            if u >= n || v >= n || u == v {
                return Err(Error::invalid(format!("bad edge ({u}, {v})")));
            }
            g.neigh_list[u].push(v);
            g.set_weight(u, v, w);
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Symmetrizes the directed lists and weighs every edge.
    pub fn finalize(&mut self, c_internal: f64, c_external: f64) {
        let mut edges = BTreeSet::new();
        for (i, list) in self.neigh_list.iter().enumerate() {
            for &j in list {
                if i != j {
                    edges.insert((i.min(j), i.max(j)));
                }
            }
        }
        for adj in &mut self.adjacency {
            adj.clear();
        }
        for (u, v) in edges {
            let w = edge_weight(self.nodes[u].tc, self.nodes[v].tc, c_internal, c_external);
            self.adjacency[u].push((v, w));
            self.adjacency[v].push((u, w));
        }
        for adj in &mut self.adjacency {
            adj.sort_by_key(|e| e.0);
        }
    }

    /// Inserts or overwrites the undirected edge `(u, v)`.
    pub fn set_weight(&mut self, u: usize, v: usize, w: f64) {
        for (a, b) in [(u, v), (v, u)] {
            let adj = &mut self.adjacency[a];
            match adj.binary_search_by_key(&b, |e| e.0) {
                Ok(pos) => adj[pos].1 = w,
                Err(pos) => adj.insert(pos, (b, w)),
            }
        }
    }

    pub fn weight(&self, u: usize, v: usize) -> Option<f64> {
        let adj = &self.adjacency[u];
        adj.binary_search_by_key(&v, |e| e.0).ok().map(|p| adj[p].1)
    }

    /// Undirected edges `(u, v, w)` with `u < v` between active nodes.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (u, adj) in self.adjacency.iter().enumerate() {
            if !self.active[u] {
                continue;
            }
            for &(v, w) in adj {
                if u < v && self.active[v] {
                    out.push((u, v, w));
                }
            }
        }
        out
    }

    /// Node records followed by edge records, one JSON object per line.
    pub fn write_jsonl(&self, path: impl AsRef<Path>, header: Option<&serde_json::Value>) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        if let Some(h) = header {
            writeln!(out, "{}", serde_json::json!({ "config": h }))?;
        }
        for (i, node) in self.nodes.iter().enumerate() {
            let rec = serde_json::json!({
                "type": "node",
                "id": i,
                "cluster_id": node.cluster_id,
                "center": node.center,
                "tc": node.tc,
                "size": node.size,
                "reach": self.reach[i],
                "neigh_finished": self.neigh_finished[i],
                "no_tot_neigh": self.no_tot_neigh[i],
                "node_neigh": self.node_neigh[i],
                "active": self.active[i],
            });
            writeln!(out, "{rec}")?;
        }
        for (u, adj) in self.adjacency.iter().enumerate() {
            for &(v, w) in adj {
                if u < v {
                    writeln!(out, "{}", serde_json::json!({ "type": "edge", "u": u, "v": v, "w": w }))?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct NodeRec {
            id: usize,
            cluster_id: usize,
            center: Vec<f64>,
            tc: f64,
            size: usize,
            reach: f64,
            neigh_finished: bool,
            no_tot_neigh: usize,
            node_neigh: usize,
            active: bool,
        }
        #[derive(Deserialize)]
        struct EdgeRec {
            u: usize,
            v: usize,
            w: f64,
        }

        let reader = BufReader::new(fs::File::open(path)?);
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for (row, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(&line)?;
            match value.get("type").and_then(|t| t.as_str()) {
                Some("node") => nodes.push(serde_json::from_value::<NodeRec>(value)?),
                Some("edge") => edges.push(serde_json::from_value::<EdgeRec>(value)?),
                _ if value.get("config").is_some() => {}
                _ => return Err(Error::parse(row + 1, "unknown record")),
            }
        }
        for (i, rec) in nodes.iter().enumerate() {
            if rec.id != i {
                return Err(Error::invalid(format!("node record {i} has id {}", rec.id)));
            }
        }
        let mut g = Self::empty(
            nodes
                .iter()
                .map(|r| GraphNode {
                    cluster_id: r.cluster_id,
                    center: r.center.clone(),
                    tc: r.tc,
                    size: r.size,
                })
                .collect(),
        );
        for (i, r) in nodes.iter().enumerate() {
            g.reach[i] = r.reach;
            g.neigh_finished[i] = r.neigh_finished;
            g.no_tot_neigh[i] = r.no_tot_neigh;
            g.node_neigh[i] = r.node_neigh;
            g.active[i] = r.active;
        }
        for e in edges {
            if e.u >= g.len() || e.v >= g.len() || e.u == e.v {
                return Err(Error::invalid(format!("bad edge ({}, {})", e.u, e.v)));
            }
            g.neigh_list[e.u].push(e.v);
            g.set_weight(e.u, e.v, e.w);
        }
        Ok(g)
    }
}

pub fn nodes_from_clusters(clusters: &[Cluster]) -> Vec<GraphNode> {
    clusters
        .iter()
        .map(|c| GraphNode {
            cluster_id: c.id,
            center: c.center.clone(),
            tc: c.tc,
            size: c.size,
        })
        .collect()
}

/// Superficial neighbor search over all nodes.
pub fn sns(clusters: &[Cluster], params: &HeuristicParams, mode: SearchMode) -> Result<PatternGraph> {
    params.validate()?;
    if clusters.len() < 2 {
        return Err(Error::invalid("graph knitting needs at least two clusters"));
    }
    let mut g = PatternGraph::empty(nodes_from_clusters(clusters));
    let centers: Vec<Vec<f64>> = g.nodes.iter().map(|n| n.center.clone()).collect();
    let index = NNIndex::build(&centers, mode)?;
    let k = (params.nn + 1).min(g.len());

    for i in 0..g.len() {
        let (mut ids, mut dists) = index.knn_one(&centers[i], k)?;
        // Drop the node itself; if a duplicate center displaced it, drop the farthest.
        let own = ids.iter().position(|&j| j == i).unwrap_or(ids.len() - 1);
        ids.remove(own);
        dists.remove(own);
        ids.truncate(params.nn);

        let class_i = class_of(g.nodes[i].tc);
        let mut same = 0usize;
        let mut same_dists = Vec::new();
        for (&j, &d) in ids.iter().zip(&dists) {
            if class_of(g.nodes[j].tc) == class_i {
                if same < params.max_same_class_neigh {
                    g.neigh_list[i].push(j);
                    same_dists.push(d);
                    g.no_tot_neigh[i] += 1;
                    same += 1;
                }
            } else {
                g.neigh_list[i].push(j);
                g.no_tot_neigh[i] += 1;
            }
        }
        g.reach[i] = compute_reach(&same_dists, params.reach_scale);
        if g.no_tot_neigh[i] >= params.nn {
            g.neigh_finished[i] = true;
        }
    }
    Ok(g)
}

/// Keeps the nodes that were accepted as an ENS candidate fewer than
/// `neigh_limit` times.
pub fn reduce_search_space(nodes: &[usize], node_neigh: &[usize], neigh_limit: usize) -> Vec<usize> {
    nodes
        .iter()
        .copied()
        .filter(|&i| node_neigh[i] < neigh_limit)
        .collect()
}

/// One ENS iteration: negative-class queries against the positive search
/// space, then the reverse, then search-space reduction on both classes.
pub fn ens_iteration(g: &mut PatternGraph, params: &HeuristicParams, mode: SearchMode) -> Result<()> {
    for (from, to) in [(0usize, 1usize), (1, 0)] {
        ens_pass(g, params, mode, from, to)?;
    }
    for class in 0..2 {
        g.search_space[class] = reduce_search_space(&g.search_space[class], &g.node_neigh, params.neigh_limit);
    }
    Ok(())
}

fn ens_pass(g: &mut PatternGraph, params: &HeuristicParams, mode: SearchMode, from: usize, to: usize) -> Result<()> {
    let space = g.search_space[to].clone();
    if space.is_empty() {
        return Ok(());
    }
    let centers: Vec<Vec<f64>> = space.iter().map(|&j| g.nodes[j].center.clone()).collect();
    let index = NNIndex::build(&centers, mode)?;
    let queries: Vec<usize> = g.search_space[from]
        .iter()
        .copied()
        .filter(|&i| !g.neigh_finished[i] && g.no_tot_neigh[i] < params.nn)
        .collect();

    for i in queries {
        let remainder = params.nn - g.no_tot_neigh[i];
        // Opposite-class neighbors from SNS come back first; look past them.
        let known = g.neigh_list[i].iter().filter(|j| space.contains(j)).count();
        let k = (remainder + known).min(space.len());
        let (local, dists) = index.knn_one(&g.nodes[i].center, k)?;
        let mut added = 0;
        for (&l, &d) in local.iter().zip(&dists) {
            let j = space[l];
            let fresh = !g.neigh_list[i].contains(&j);
            if fresh && added < remainder && g.node_neigh[j] < params.neigh_limit && g.reach[i] > d {
                g.neigh_list[i].push(j);
                g.no_tot_neigh[i] += 1;
                g.node_neigh[j] += 1;
                added += 1;
            }
            if d > g.reach[i] {
                // Not on the class's convex hull facing the boundary.
                g.neigh_finished[i] = true;
            }
        }
        if g.no_tot_neigh[i] >= params.nn {
            g.neigh_finished[i] = true;
        }
    }
    Ok(())
}

/// SNS, `ens_iters` ENS iterations, then symmetrization with the initial
/// edge weight constants.
pub fn knit(clusters: &[Cluster], params: &HeuristicParams, mode: SearchMode) -> Result<PatternGraph> {
    let mut g = sns(clusters, params, mode)?;
    for _ in 0..params.ens_iters {
        ens_iteration(&mut g, params, mode)?;
    }
    g.finalize(params.ci_init, params.ce_init);
    Ok(g)
}
