//! K-means++ seeded Lloyd clustering. Every cluster carries a fractional
//! target class `tc`, the mean of its members' targets, so the clustered
//! representation keeps the class pattern of the data it replaces.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ann::{NNIndex, SearchMode};
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    pub center: Vec<f64>,
    pub tc: f64,
    pub size: usize,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub clusters: Vec<Cluster>,
    /// Point id to cluster id.
    pub assignment: Vec<usize>,
    pub iterations_run: usize,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub inertia_history: Vec<f64>,
}

impl ClusteringResult {
    pub fn n_points(&self) -> usize {
        self.assignment.len()
    }

    /// Rebuilds a result from cluster records, e.g. after reading a checkpoint.
    pub fn from_clusters(clusters: Vec<Cluster>) -> Result<Self> {
        let n: usize = clusters.iter().map(|c| c.members.len()).sum();
        let mut assignment = vec![usize::MAX; n];
        for (i, c) in clusters.iter().enumerate() {
            if c.id != i {
                return Err(Error::invalid(format!("cluster at position {i} has id {}", c.id)));
            }
            for &m in &c.members {
                if m >= n || assignment[m] != usize::MAX {
                    return Err(Error::invalid(format!("point {m} is not assigned exactly once")));
                }
                assignment[m] = i;
            }
        }
        Ok(Self {
            clusters,
            assignment,
            iterations_run: 0,
            inertia_history: Vec::new(),
        })
    }

    /// One JSON object per cluster: id, center, tc, size, members.
    pub fn write_jsonl(&self, path: impl AsRef<Path>, header: Option<&serde_json::Value>) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        if let Some(h) = header {
            writeln!(out, "{}", serde_json::json!({ "config": h }))?;
        }
        for c in &self.clusters {
            serde_json::to_writer(&mut out, c)?;
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut clusters = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(&line)?;
            if value.get("config").is_some() {
                continue;
            }
            clusters.push(serde_json::from_value(value)?);
        }
        Self::from_clusters(clusters)
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// D²-weighted seeding. Returns `n_c` centers taken from distinct points.
pub fn kmeanspp_seed(ds: &Dataset, n_c: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let n = ds.n();
    if n_c == 0 || n_c > n {
        return Err(Error::invalid(format!("n_c = {n_c} must lie in [1, {n}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = ds.points();
    let mut chosen = vec![false; n];
    let mut centers = Vec::with_capacity(n_c);

    let first = rng.random_range(0..n);
    chosen[first] = true;
    centers.push(points[first].features.clone());
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(&p.features, &centers[0]))
        .collect();

    while centers.len() < n_c {
        let total: f64 = d2.iter().zip(&chosen).filter(|(_, &c)| !c).map(|(d, _)| d).sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for i in 0..n {
                if chosen[i] || d2[i] <= 0.0 {
                    continue;
                }
                pick = Some(i);
                target -= d2[i];
                if target < 0.0 {
                    break;
                }
            }
            pick.expect("positive mass implies a candidate")
        } else {
            // Only duplicates of existing centers remain.
            let remaining: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            remaining[rng.random_range(0..remaining.len())]
        };
        chosen[next] = true;
        let c = points[next].features.clone();
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(&p.features, &c);
            if d < d2[i] {
                d2[i] = d;
            }
        }
        centers.push(c);
    }
    Ok(centers)
}

/// Above this dimensionality a kd-tree over the centers stops paying off
/// and assignment scans all centers.
const KD_ASSIGN_MAX_DIM: usize = 8;

/// Nearest center, ties to the lowest center id.
fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Runs `iters` Lloyd iterations from K-means++ seeds. Empty clusters are
/// dropped and the surviving ids compacted in order.
pub fn cluster(ds: &Dataset, n_c: usize, iters: usize, seed: u64) -> Result<ClusteringResult> {
    if iters == 0 {
        return Err(Error::invalid("iters must be >= 1"));
    }
    let mut centers = kmeanspp_seed(ds, n_c, seed)?;
    let d = ds.d();
    let points = ds.points();
    let mut assignment = vec![0usize; ds.n()];
    let mut inertia_history = Vec::with_capacity(iters);

    for _ in 0..iters {
        if d <= KD_ASSIGN_MAX_DIM {
            let index = NNIndex::build(&centers, SearchMode::Exact)?;
            for (i, p) in points.iter().enumerate() {
                assignment[i] = index.nearest(&p.features)?.0;
            }
        } else {
            for (i, p) in points.iter().enumerate() {
                assignment[i] = nearest(&p.features, &centers).0;
            }
        }
        let mut sums = vec![vec![0.0; d]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(&p.features) {
                *s += v;
            }
        }
        for (k, center) in centers.iter_mut().enumerate() {
            if counts[k] > 0 {
                for (c, s) in center.iter_mut().zip(&sums[k]) {
                    *c = s / counts[k] as f64;
                }
            }
        }
        let inertia = points
            .iter()
            .zip(&assignment)
            .map(|(p, &a)| sq_dist(&p.features, &centers[a]))
            .sum();
        inertia_history.push(inertia);
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); centers.len()];
    for (i, &a) in assignment.iter().enumerate() {
        members[a].push(i);
    }
    let mut remap = vec![usize::MAX; centers.len()];
    let mut clusters = Vec::new();
    for (k, (center, m)) in centers.into_iter().zip(members).enumerate() {
        if m.is_empty() {
            continue;
        }
        let id = clusters.len();
        remap[k] = id;
        let tc = m.iter().map(|&i| points[i].target as f64).sum::<f64>() / m.len() as f64;
        clusters.push(Cluster {
            id,
            center,
            tc,
            size: m.len(),
            members: m,
        });
    }
    for a in assignment.iter_mut() {
        *a = remap[*a];
    }
    Ok(ClusteringResult {
        clusters,
        assignment,
        iterations_run: iters,
        inertia_history,
    })
}

/// Ratio n / n_c, the granularity of the clustered representation.
pub fn nominal_vc(ds: &Dataset, n_c: usize) -> f64 {
    ds.n() as f64 / n_c as f64
}
