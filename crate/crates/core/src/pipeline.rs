//! End-to-end training pipelines: full, GSH-reduced and serial GCH.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ann::SearchMode;
use crate::clubbing::{club, PartitionSet};
use crate::clustering::{cluster, ClusteringResult};
use crate::data::{Dataset, LabeledPoint};
use crate::error::{Error, Result};
use crate::knitting::{knit, HeuristicParams, PatternGraph};
use crate::predict::{build_router, Router};
use crate::shedding::{imbalance_sd, relevant_set, RelevantSet};
use crate::svm::{train, Classifier, ClassifierSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub n_clusters: usize,
    pub cluster_iters: usize,
    pub seed: u64,
    pub mode: SearchMode,
    pub heuristic: HeuristicParams,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            n_clusters: 300,
            cluster_iters: 5,
            seed: 0,
            mode: SearchMode::Exact,
            heuristic: HeuristicParams::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub cluster_ms: f64,
    pub knit_ms: f64,
    pub shed_ms: f64,
    pub club_ms: f64,
    pub train_ms: f64,
}

impl StageTimings {
    /// Time spent before any classifier training.
    pub fn heuristic_ms(&self) -> f64 {
        self.cluster_ms + self.knit_ms + self.shed_ms + self.club_ms
    }

    pub fn total_ms(&self) -> f64 {
        self.heuristic_ms() + self.train_ms
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub n_original: usize,
    pub n_reduced: usize,
    pub per_class_original: [usize; 2],
    pub per_class_reduced: [usize; 2],
    pub sd_original: f64,
    pub sd_reduced: f64,
    pub n_clusters: usize,
    pub n_relevant_clusters: usize,
    pub partition_sizes: Vec<usize>,
    pub coarsen_iterations: usize,
    pub cost_history: Vec<f64>,
    pub timings: StageTimings,
}

impl ReductionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// One classifier per partition, in partition order.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub partition_ids: Vec<usize>,
    pub models: Vec<Classifier>,
}

impl EnsembleModel {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

/// Everything the heuristic produced before training.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub clustering: ClusteringResult,
    pub graph: PatternGraph,
    pub relevant: RelevantSet,
    pub report: ReductionReport,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Cluster, knit and shed `ds`.
pub fn reduce(ds: &Dataset, params: &PipelineParams) -> Result<Reduction> {
    params.heuristic.validate()?;
    let t = Instant::now();
    let clustering = cluster(ds, params.n_clusters.min(ds.n()), params.cluster_iters, params.seed)?;
    let cluster_ms = ms(t);

    let t = Instant::now();
    let graph = knit(&clustering.clusters, &params.heuristic, params.mode)?;
    let knit_ms = ms(t);

    let t = Instant::now();
    let cut = params.heuristic.gs_edge_cut;
    let relevant = if cut == f64::NEG_INFINITY {
        // No cut at all: every cluster is relevant, including isolated ones.
        let cluster_ids: Vec<usize> = (0..clustering.clusters.len()).collect();
        RelevantSet {
            cluster_ids,
            point_ids: (0..ds.n()).collect(),
            per_class_counts: ds.class_counts(),
        }
    } else {
        relevant_set(&graph, cut, &clustering, ds)
    };
    let shed_ms = ms(t);
    if relevant.point_ids.is_empty() {
        return Err(Error::EmptyReducedSet(format!(
            "no edge reaches gs_edge_cut = {cut}; lower gs_edge_cut"
        )));
    }

    let per_class_original = ds.class_counts();
    let report = ReductionReport {
        n_original: ds.n(),
        n_reduced: relevant.point_ids.len(),
        per_class_original,
        per_class_reduced: relevant.per_class_counts,
        sd_original: imbalance_sd(per_class_original),
        sd_reduced: imbalance_sd(relevant.per_class_counts),
        n_clusters: clustering.clusters.len(),
        n_relevant_clusters: relevant.cluster_ids.len(),
        timings: StageTimings {
            cluster_ms,
            knit_ms,
            shed_ms,
            ..Default::default()
        },
        ..Default::default()
    };
    Ok(Reduction {
        clustering,
        graph,
        relevant,
        report,
    })
}

/// Points of `ds` at `ids`, in the given order.
pub fn gather(ds: &Dataset, ids: &[usize]) -> Vec<LabeledPoint> {
    ids.iter().map(|&i| ds.point(i).clone()).collect()
}

pub fn train_full(ds: &Dataset, spec: &ClassifierSpec) -> Result<Classifier> {
    Ok(Classifier::Svm(train(ds.points(), spec)?))
}

pub fn train_gsh(ds: &Dataset, params: &PipelineParams, spec: &ClassifierSpec) -> Result<(Classifier, ReductionReport)> {
    let red = reduce(ds, params)?;
    let mut report = red.report;
    let t = Instant::now();
    let model = Classifier::Svm(train(&gather(ds, &red.relevant.point_ids), spec)?);
    report.timings.train_ms = ms(t);
    Ok((model, report))
}

/// Trains one partition on its points in ascending id order. Single-class
/// partitions become constant predictors.
pub fn train_partition(points: &[LabeledPoint], spec: &ClassifierSpec) -> Result<Classifier> {
    Classifier::fit(points, spec)
}

#[derive(Debug, Clone)]
pub struct GchOutcome {
    pub ensemble: EnsembleModel,
    pub router: Router,
    pub partitions: PartitionSet,
    pub clustering: ClusteringResult,
    pub report: ReductionReport,
}

/// Cluster, knit, shed and club `ds` without training.
pub fn partition(ds: &Dataset, params: &PipelineParams) -> Result<(Reduction, PartitionSet)> {
    let mut red = reduce(ds, params)?;
    let t = Instant::now();
    let g = crate::shedding::restrict(&red.graph, &red.relevant.cluster_ids);
    let outcome = club(&g, &red.clustering, &params.heuristic)?;
    red.report.timings.club_ms = ms(t);
    red.report.partition_sizes = outcome.partitions.partitions.iter().map(|p| p.size()).collect();
    red.report.coarsen_iterations = outcome.iterations_run;
    red.report.cost_history = outcome.cost_history;
    Ok((red, outcome.partitions))
}

/// Trains every partition of `parts` in sequence.
pub fn train_partitions(ds: &Dataset, parts: &PartitionSet, spec: &ClassifierSpec) -> Result<EnsembleModel> {
    let mut models = Vec::with_capacity(parts.len());
    for p in &parts.partitions {
        models.push(train_partition(&gather(ds, &p.point_ids), spec)?);
    }
    Ok(EnsembleModel {
        partition_ids: parts.partitions.iter().map(|p| p.id).collect(),
        models,
    })
}

pub fn train_gch_serial(ds: &Dataset, params: &PipelineParams, spec: &ClassifierSpec) -> Result<GchOutcome> {
    let (red, parts) = partition(ds, params)?;
    let mut report = red.report;
    let t = Instant::now();
    let ensemble = train_partitions(ds, &parts, spec)?;
    report.timings.train_ms = ms(t);
    let router = build_router(&parts, &red.clustering, params.mode)?;
    Ok(GchOutcome {
        ensemble,
        router,
        partitions: parts,
        clustering: red.clustering,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_dataset_one;

    fn small() -> (Dataset, PipelineParams) {
        let ds = gen_dataset_one(1500, 2, 0.05, 3).unwrap();
        let params = PipelineParams {
            n_clusters: 60,
            ..Default::default()
        };
        (ds, params)
    }

    #[test]
    fn identity_reduction_matches_full() {
        let (ds, mut params) = small();
        params.heuristic.gs_edge_cut = f64::NEG_INFINITY;
        let spec = ClassifierSpec::default();
        let full = train_full(&ds, &spec).unwrap();
        let (gsh, report) = train_gsh(&ds, &params, &spec).unwrap();
        assert_eq!(report.n_reduced, ds.n());
        assert_eq!(full, gsh);
    }

    #[test]
    fn cut_above_all_weights_is_empty() {
        let (ds, mut params) = small();
        params.heuristic.gs_edge_cut = 1e12;
        let err = train_gsh(&ds, &params, &ClassifierSpec::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyReducedSet(_)));
        assert!(err.to_string().contains("empty reduced set"));
    }

    #[test]
    fn gch_partitions_cover_relevant_set() {
        let (ds, params) = small();
        let out = train_gch_serial(&ds, &params, &ClassifierSpec::default()).unwrap();
        let total: usize = out.partitions.partitions.iter().map(|p| p.size()).sum();
        assert_eq!(total, out.report.n_reduced);
        assert_eq!(out.ensemble.len(), out.partitions.len());
        assert!(out.report.n_reduced < ds.n());
    }

    #[test]
    fn single_partition_equals_gsh() {
        let (ds, mut params) = small();
        let spec = ClassifierSpec::default();
        let (red, _) = partition(&ds, &params).unwrap();
        let one = PartitionSet::from_groups(vec![red.relevant.cluster_ids.clone()], &red.clustering);
        let ens = train_partitions(&ds, &one, &spec).unwrap();
        params.heuristic.max_coarsen_iters = 0;
        let (gsh, _) = train_gsh(&ds, &params, &spec).unwrap();
        assert_eq!(ens.models[0], gsh);
    }
}
