//! Independent oracles for nearest-neighbor search, matching, routing and
//! the SMO solution. Each check panics on a mismatch.

#![allow(dead_code)]

use std::collections::HashMap;

use graphclub::ann::{NNIndex, SearchMode};
use graphclub::clubbing::{pwm, PartitionSet};
use graphclub::clustering::{Cluster, ClusteringResult};
use graphclub::data::{gen_dataset_one, gen_dataset_two, LabeledPoint};
use graphclub::knitting::{GraphNode, PatternGraph};
use graphclub::predict::build_router;
use graphclub::svm::{train_with_stats, ClassifierSpec, Kernel, TrainedModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn brute_knn(points: &[Vec<f64>], q: &[f64], k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (sq(p, q), i)).collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, i)| i).collect()
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize, grid: bool) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..d)
                .map(|_| if grid { rng.random_range(0..5) as f64 } else { rng.random::<f64>() })
                .collect()
        })
        .collect()
}

pub fn exact_knn_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for instance in 0..40 {
        let d = 1 + instance % 5;
        // Every fourth instance sits on an integer grid to force distance ties.
        let points = random_cloud(&mut rng, 100, d, instance % 4 == 0);
        let index = NNIndex::build(&points, SearchMode::Exact).unwrap();
        for k in 1..=10 {
            for _ in 0..10 {
                let q: Vec<f64> = if rng.random_bool(0.3) {
                    points[rng.random_range(0..points.len())].clone()
                } else {
                    (0..d).map(|_| rng.random::<f64>() * 4.0).collect()
                };
                let (ids, dists) = index.knn_one(&q, k).unwrap();
                assert_eq!(ids, brute_knn(&points, &q, k), "instance {instance} k {k}");
                for (i, dist) in ids.iter().zip(&dists) {
                    assert!((dist - sq(&points[*i], &q).sqrt()).abs() < 1e-12);
                }
            }
        }
    }
}

pub fn nearest_agrees_with_knn_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let points = random_cloud(&mut rng, 100, 3, true);
    let index = NNIndex::build(&points, SearchMode::Exact).unwrap();
    for _ in 0..500 {
        let q: Vec<f64> = (0..3).map(|_| rng.random_range(0..5) as f64).collect();
        let (i, _) = index.nearest(&q).unwrap();
        assert_eq!(vec![i], brute_knn(&points, &q, 1));
    }
}

pub fn approximate_knn_recall_is_high_on_small_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points = random_cloud(&mut rng, 100, 2, false);
    let index = NNIndex::build(&points, SearchMode::Approximate).unwrap();
    let mut hits = 0;
    let mut total = 0;
    for _ in 0..200 {
        let q: Vec<f64> = (0..2).map(|_| rng.random::<f64>()).collect();
        let (ids, _) = index.knn_one(&q, 5).unwrap();
        let truth = brute_knn(&points, &q, 5);
        hits += ids.iter().filter(|i| truth.contains(i)).count();
        total += 5;
    }
    assert!(hits as f64 / total as f64 >= 0.9, "recall {hits}/{total}");
}

fn node(i: usize) -> GraphNode {
    GraphNode {
        cluster_id: i,
        center: vec![i as f64],
        tc: 0.0,
        size: 1,
    }
}

/// Sorts by a packed integer key (weights are positive, so their bit
/// patterns order like the values) and scans once.
fn sort_and_scan(n: usize, edges: &[(usize, usize, f64)], cut: f64) -> Vec<(usize, usize)> {
    let mut keyed: Vec<(u64, usize, usize)> = edges
        .iter()
        .filter(|e| e.2 >= cut)
        .map(|&(u, v, w)| (u64::MAX - w.to_bits(), u.min(v), u.max(v)))
        .collect();
    keyed.sort_unstable();
    let mut used = vec![false; n];
    let mut out = Vec::new();
    for (_, u, v) in keyed {
        if !used[u] && !used[v] {
            used[u] = true;
            used[v] = true;
            out.push((u, v));
        }
    }
    out
}

pub fn pwm_matches_sort_and_scan_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for graph in 0..100 {
        let n = rng.random_range(2..60);
        let mut edges = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..rng.random_range(1..4 * n) {
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            if u == v || !seen.insert((u.min(v), u.max(v))) {
                continue;
            }
            // Half the graphs draw from a few discrete weights to exercise ties.
            let w = if graph % 2 == 0 {
                [3.0, 3.5, 4.0, 9.0][rng.random_range(0..4)]
            } else {
                rng.random_range(2.0..60.0)
            };
            edges.push((u, v, w));
        }
        let cut = [0.0, 3.2, 5.0][graph % 3];
        let g = PatternGraph::from_edges((0..n).map(node).collect(), &edges).unwrap();
        let got = pwm(&g, cut);
        assert_eq!(got.pairs, sort_and_scan(n, &edges, cut), "graph {graph}");
    }
}

pub fn router_matches_nearest_center_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let d = 3;
    let n_clusters = 80;
    let clusters: Vec<Cluster> = (0..n_clusters)
        .map(|i| Cluster {
            id: i,
            center: (0..d).map(|_| rng.random::<f64>()).collect(),
            tc: 1.0,
            size: 1,
            members: vec![i],
        })
        .collect();
    let clustering = ClusteringResult::from_clusters(clusters).unwrap();
    // Relevant clusters only: roughly two thirds, spread over five partitions.
    let mut groups = vec![Vec::new(); 5];
    for c in 0..n_clusters {
        if rng.random_bool(0.66) {
            groups[rng.random_range(0..5)].push(c);
        }
    }
    groups.retain(|g| !g.is_empty());
    let parts = PartitionSet::from_groups(groups, &clustering);
    let router = build_router(&parts, &clustering, SearchMode::Exact).unwrap();

    let owner: HashMap<usize, usize> = parts
        .partitions
        .iter()
        .enumerate()
        .flat_map(|(pos, p)| p.cluster_ids.iter().map(move |&c| (c, pos)))
        .collect();
    for _ in 0..1000 {
        let q: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 1.2 - 0.1).collect();
        let best = owner
            .keys()
            .copied()
            .min_by(|&a, &b| {
                sq(&clustering.clusters[a].center, &q)
                    .partial_cmp(&sq(&clustering.clusters[b].center, &q))
                    .unwrap()
                    .then(a.cmp(&b))
            })
            .unwrap();
        assert_eq!(router.route_one(&q).unwrap(), owner[&best]);
    }
}

fn key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Largest KKT violation, with the dual variables recovered from the
/// support vectors and zero everywhere else.
fn kkt_check(model: &TrainedModel, points: &[LabeledPoint]) -> f64 {
    let alpha_of: HashMap<Vec<u64>, f64> = model
        .support_vectors
        .iter()
        .zip(&model.alphas)
        .map(|(sv, &a)| (key(sv), a))
        .collect();
    assert_eq!(alpha_of.len(), model.support_vectors.len(), "duplicate support vectors");
    let c = model.c;
    let mut worst: f64 = 0.0;
    let mut balance = 0.0;
    for p in points {
        let a = alpha_of.get(&key(&p.features)).copied().unwrap_or(0.0);
        assert!((0.0..=c).contains(&a), "alpha {a} outside [0, {c}]");
        balance += a * p.target as f64;
        let yf = p.target as f64 * model.decision_value(&p.features);
        if a < c {
            worst = worst.max(1.0 - yf);
        }
        if a > 0.0 {
            worst = worst.max(yf - 1.0);
        }
    }
    assert!(balance.abs() < 1e-9 * points.len() as f64, "sum alpha_i y_i = {balance}");
    worst
}

pub fn smo_solution_satisfies_kkt() {
    let cases: Vec<(Vec<LabeledPoint>, Kernel, f64)> = vec![
        (gen_dataset_one(300, 2, 0.2, 1).unwrap().into_points(), Kernel::Linear, 1.0),
        (gen_dataset_one(300, 4, 0.3, 2).unwrap().into_points(), Kernel::Linear, 10.0),
        (gen_dataset_two(300, 2, 0.3, 3).unwrap().into_points(), Kernel::Rbf { gamma: 2.0 }, 1.0),
        (gen_dataset_two(250, 3, 0.35, 4).unwrap().into_points(), Kernel::Rbf { gamma: 0.0 }, 5.0),
        (
            gen_dataset_two(200, 2, 0.3, 5).unwrap().into_points(),
            Kernel::Polynomial { degree: 2, gamma: 1.0, coef0: 1.0 },
            1.0,
        ),
    ];
    for (i, (points, kernel, c)) in cases.into_iter().enumerate() {
        let spec = ClassifierSpec { kernel, c, ..Default::default() };
        let (model, stats) = train_with_stats(&points, &spec).unwrap();
        assert!(stats.converged, "case {i} did not converge: {stats:?}");
        assert!(stats.violation <= spec.tol);
        let worst = kkt_check(&model, &points);
        // Kernel rows are cached in single precision; the decision value
        // here is recomputed in double precision.
        assert!(worst <= spec.tol + 1e-5, "case {i}: KKT violation {worst}");
    }
}
