//! Graph shedding (GSH): keep the clusters that have at least one
//! significant incident edge and expand them into the reduced training set.

use serde::{Deserialize, Serialize};

use crate::clustering::ClusteringResult;
use crate::data::Dataset;
use crate::knitting::PatternGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevantSet {
    pub cluster_ids: Vec<usize>,
    pub point_ids: Vec<usize>,
    /// `[negatives, positives]` among `point_ids`.
    pub per_class_counts: [usize; 2],
}

impl RelevantSet {
    pub fn is_empty(&self) -> bool {
        self.cluster_ids.is_empty()
    }
}

/// Ids of active nodes with an incident edge of weight `>= edge_cut`.
pub fn shed(g: &PatternGraph, edge_cut: f64) -> Vec<usize> {
    (0..g.len())
        .filter(|&i| {
            g.active[i]
                && g.adjacency[i]
                    .iter()
                    .any(|&(j, w)| g.active[j] && w >= edge_cut)
        })
        .collect()
}

/// Copy of `g` in which only `keep` stays active. Edges to inactive nodes
/// are dropped from the adjacency.
pub fn restrict(g: &PatternGraph, keep: &[usize]) -> PatternGraph {
    let mut out = g.clone();
    out.active.iter_mut().for_each(|a| *a = false);
    for &i in keep {
        out.active[i] = true;
    }
    for i in 0..out.len() {
        if out.active[i] {
            let active = &out.active;
            let adj: Vec<(usize, f64)> = out.adjacency[i].iter().copied().filter(|&(j, _)| active[j]).collect();
            out.adjacency[i] = adj;
        } else {
            out.adjacency[i].clear();
        }
    }
    out
}

/// Sorted union of the member lists of `cluster_ids`.
pub fn expand(cluster_ids: &[usize], clustering: &ClusteringResult) -> Vec<usize> {
    let mut ids: Vec<usize> = cluster_ids
        .iter()
        .flat_map(|&c| clustering.clusters[c].members.iter().copied())
        .collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.is_empty() {
        log::warn!("no relevant clusters: the reduced training set is empty");
    }
    ids
}

/// Sheds `g` and expands the surviving clusters against `ds`.
pub fn relevant_set(g: &PatternGraph, edge_cut: f64, clustering: &ClusteringResult, ds: &Dataset) -> RelevantSet {
    let cluster_ids = shed(g, edge_cut);
    let point_ids = expand(&cluster_ids, clustering);
    let pos = point_ids.iter().filter(|&&i| ds.point(i).target > 0).count();
    RelevantSet {
        per_class_counts: [point_ids.len() - pos, pos],
        cluster_ids,
        point_ids,
    }
}

/// Population standard deviation of the two class counts, `|c1 - c2| / 2`.
pub fn imbalance_sd(counts: [usize; 2]) -> f64 {
    (counts[0] as f64 - counts[1] as f64).abs() / 2.0
}
