//! Nearest hypothesis search: route each test point to the partition of its
//! nearest relevant cluster center, then predict with that partition's model.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ann::{NNIndex, SearchMode};
use crate::clubbing::PartitionSet;
use crate::clustering::ClusteringResult;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::pipeline::EnsembleModel;

#[derive(Debug, Clone)]
pub struct Router {
    index: NNIndex,
    /// Cluster id of each indexed center, ascending.
    center_ids: Vec<usize>,
    /// Partition position (index into the partition list) of each center.
    center_to_partition: Vec<usize>,
    n_partitions: usize,
}

impl Router {
    pub fn len(&self) -> usize {
        self.center_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center_ids.is_empty()
    }

    pub fn n_partitions(&self) -> usize {
        self.n_partitions
    }

    pub fn center_ids(&self) -> &[usize] {
        &self.center_ids
    }

    pub fn partition_of_center(&self, k: usize) -> usize {
        self.center_to_partition[k]
    }

    pub fn route_one(&self, x: &[f64]) -> Result<usize> {
        let (idx, _) = self.index.nearest(x)?;
        Ok(self.center_to_partition[idx])
    }

    /// Partition position for every point.
    pub fn route(&self, points: &[Vec<f64>]) -> Result<Vec<usize>> {
        points.iter().map(|p| self.route_one(p)).collect()
    }
}

/// Indexes the centers of all clusters belonging to `parts`, in ascending
/// cluster id order so that distance ties go to the lower center id.
pub fn build_router(parts: &PartitionSet, clustering: &ClusteringResult, mode: SearchMode) -> Result<Router> {
    if parts.is_empty() {
        return Err(Error::invalid("cannot route over an empty partition set"));
    }
    let mut labeled: Vec<(usize, usize)> = Vec::new();
    for (p, part) in parts.partitions.iter().enumerate() {
        for &c in &part.cluster_ids {
            if c >= clustering.clusters.len() {
                return Err(Error::invalid(format!("partition {} names unknown cluster {c}", part.id)));
            }
            labeled.push((c, p));
        }
    }
    labeled.sort_unstable();
    if labeled.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid("a cluster belongs to more than one partition"));
    }
    if labeled.is_empty() {
        return Err(Error::invalid("partitions contain no clusters"));
    }
    let centers: Vec<Vec<f64>> = labeled.iter().map(|&(c, _)| clustering.clusters[c].center.clone()).collect();
    Ok(Router {
        index: NNIndex::build(&centers, mode)?,
        center_ids: labeled.iter().map(|&(c, _)| c).collect(),
        center_to_partition: labeled.iter().map(|&(_, p)| p).collect(),
        n_partitions: parts.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionAccuracy {
    pub partition: usize,
    pub n_points: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub partitions: Vec<PartitionAccuracy>,
    pub n_points: usize,
    pub correct: usize,
    /// Size-weighted mean of the per-partition accuracies.
    pub weighted_accuracy: f64,
    pub routing_ms: f64,
    pub predict_ms: f64,
    /// Routing time as a fraction of the whole test phase.
    pub routing_fraction: f64,
}

impl AccuracyReport {
    pub fn from_rows(rows: Vec<PartitionAccuracy>, routing_ms: f64, predict_ms: f64) -> Self {
        let n_points = rows.iter().map(|r| r.n_points).sum();
        let correct = rows.iter().map(|r| r.correct).sum();
        let weighted_accuracy = if n_points == 0 {
            0.0
        } else {
            rows.iter().map(|r| r.accuracy * r.n_points as f64).sum::<f64>() / n_points as f64
        };
        let total = routing_ms + predict_ms;
        Self {
            partitions: rows,
            n_points,
            correct,
            weighted_accuracy,
            routing_ms,
            predict_ms,
            routing_fraction: if total > 0.0 { routing_ms / total } else { 0.0 },
        }
    }
}

/// Routes and predicts every test point. Returns labels in input order.
pub fn ensemble_predict(ens: &EnsembleModel, router: &Router, test: &Dataset) -> Result<(Vec<i8>, AccuracyReport)> {
    if router.n_partitions() != ens.models.len() {
        return Err(Error::invalid(format!(
            "router has {} partitions but the ensemble has {} models",
            router.n_partitions(),
            ens.models.len()
        )));
    }
    let t0 = Instant::now();
    let mut routes = Vec::with_capacity(test.n());
    for p in test.points() {
        routes.push(router.route_one(&p.features)?);
    }
    let routing_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t1 = Instant::now();
    let labels: Vec<i8> = test
        .points()
        .iter()
        .zip(&routes)
        .map(|(p, &r)| ens.models[r].predict_one(&p.features))
        .collect();
    let predict_ms = t1.elapsed().as_secs_f64() * 1e3;

    let mut counts = vec![(0usize, 0usize); ens.models.len()];
    for ((p, &r), &l) in test.points().iter().zip(&routes).zip(&labels) {
        counts[r].0 += 1;
        if l == p.target {
            counts[r].1 += 1;
        }
    }
    let rows = counts
        .iter()
        .enumerate()
        .filter(|(_, c)| c.0 > 0)
        .map(|(i, &(n, correct))| PartitionAccuracy {
            partition: ens.partition_ids[i],
            n_points: n,
            correct,
            accuracy: correct as f64 / n as f64,
        })
        .collect();
    Ok((labels, AccuracyReport::from_rows(rows, routing_ms, predict_ms)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clubbing::Partition;
    use crate::clustering::Cluster;

    fn clustering(centers: &[f64]) -> ClusteringResult {
        let clusters = centers
            .iter()
            .enumerate()
            .map(|(i, &c)| Cluster { id: i, center: vec![c, 0.0], tc: 1.0, size: 1, members: vec![i] })
            .collect();
        ClusteringResult::from_clusters(clusters).unwrap()
    }

    fn parts(groups: &[&[usize]]) -> PartitionSet {
        PartitionSet {
            partitions: groups
                .iter()
                .enumerate()
                .map(|(i, g)| Partition {
                    id: i,
                    cluster_ids: g.to_vec(),
                    point_ids: g.to_vec(),
                    per_class_counts: [0, g.len()],
                })
                .collect(),
        }
    }

    #[test]
    fn tie_goes_to_lower_center() {
        let cr = clustering(&[0.0, 1.0, 5.0]);
        let r = build_router(&parts(&[&[1], &[0, 2]]), &cr, SearchMode::Exact).unwrap();
        assert_eq!(r.route_one(&[0.5, 0.0]).unwrap(), 1);
        assert_eq!(r.route_one(&[1.0, 0.0]).unwrap(), 0);
        assert_eq!(r.route_one(&[4.0, 0.0]).unwrap(), 1);
    }

    #[test]
    fn single_partition_is_constant() {
        let cr = clustering(&[0.0, 1.0]);
        let r = build_router(&parts(&[&[0, 1]]), &cr, SearchMode::Exact).unwrap();
        for x in [-3.0, 0.4, 9.0] {
            assert_eq!(r.route_one(&[x, x]).unwrap(), 0);
        }
    }

    #[test]
    fn empty_partition_set_is_an_error() {
        let cr = clustering(&[0.0]);
        assert!(build_router(&PartitionSet { partitions: vec![] }, &cr, SearchMode::Exact).is_err());
    }

    #[test]
    fn weighted_average() {
        let rows = vec![
            PartitionAccuracy { partition: 0, n_points: 300, correct: 270, accuracy: 0.9 },
            PartitionAccuracy { partition: 1, n_points: 700, correct: 560, accuracy: 0.8 },
        ];
        let rep = AccuracyReport::from_rows(rows, 1.0, 9.0);
        assert!((rep.weighted_accuracy - 0.83).abs() < 1e-12);
        assert!((rep.weighted_accuracy - rep.correct as f64 / rep.n_points as f64).abs() < 1e-12);
        assert!((rep.routing_fraction - 0.1).abs() < 1e-12);
    }
}
