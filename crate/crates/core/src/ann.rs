//! Nearest-neighbor index used for graph knitting and test-time routing.
//!
//! Exact mode is a single kd-tree searched with full backtracking. The
//! approximate mode is a forest of randomized kd-trees (split dimension drawn
//! among the highest-variance ones, split at the mean) searched best-bin-first
//! across all trees with a bounded number of point checks.
//!
//! Distance ties always resolve toward the lower stored index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    #[default]
    Exact,
    Approximate,
}

impl std::str::FromStr for SearchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(SearchMode::Exact),
            "approximate" | "approx" => Ok(SearchMode::Approximate),
            other => Err(Error::invalid(format!("unknown search mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxParams {
    pub trees: usize,
    pub leaf_size: usize,
    /// Maximum number of stored points examined per query.
    pub checks: usize,
    pub seed: u64,
}

impl Default for ApproxParams {
    fn default() -> Self {
        Self {
            trees: 4,
            leaf_size: 8,
            checks: 128,
            seed: 0,
        }
    }
}

/// Candidate split dimensions considered per node in randomized trees.
const RAND_DIM_CHOICES: usize = 5;
const EXACT_LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
    /// Stored-point ids, leaves index contiguous ranges of it.
    perm: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct NNIndex {
    data: Vec<f64>,
    dim: usize,
    len: usize,
    mode: SearchMode,
    checks: usize,
    trees: Vec<Tree>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnnResult {
    pub indices: Vec<Vec<usize>>,
    pub dists: Vec<Vec<f64>>,
}

/// (squared distance, index) ordered lexicographically.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand(f64, usize);

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The k best candidates seen so far, kept sorted.
struct TopK {
    k: usize,
    items: Vec<Cand>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn worst(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.k - 1].0
        }
    }

    fn push(&mut self, c: Cand) {
        if self.items.len() == self.k && c >= self.items[self.k - 1] {
            return;
        }
        let pos = self.items.partition_point(|x| *x < c);
        self.items.insert(pos, c);
        self.items.truncate(self.k);
    }
}

/// Pending branch for best-bin-first search, min-ordered by bound.
#[derive(Debug, Clone, Copy)]
struct Branch {
    bound: f64,
    tree: usize,
    node: usize,
}

impl PartialEq for Branch {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Branch {}

impl Ord for Branch {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(other.tree.cmp(&self.tree))
            .then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Branch {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl NNIndex {
    pub fn build(points: &[Vec<f64>], mode: SearchMode) -> Result<Self> {
        Self::build_with(points, mode, ApproxParams::default())
    }

    pub fn build_with(points: &[Vec<f64>], mode: SearchMode, params: ApproxParams) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::invalid("cannot index an empty point set"))?;
        let dim = first.len();
        let mut data = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::invalid("points must share one dimensionality"));
            }
            data.extend_from_slice(p);
        }
        let mut index = Self {
            data,
            dim,
            len: points.len(),
            mode,
            checks: params.checks.max(1),
            trees: Vec::new(),
        };
        match mode {
            SearchMode::Exact => {
                let t = index.build_tree(EXACT_LEAF_SIZE, None);
                index.trees.push(t);
            }
            SearchMode::Approximate => {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                for _ in 0..params.trees.max(1) {
                    let t = index.build_tree(params.leaf_size.max(1), Some(&mut rng));
                    index.trees.push(t);
                }
            }
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> SearchMode {
        self.mode
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn sq_dist_to(&self, i: usize, q: &[f64]) -> f64 {
        self.point(i).iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    fn build_tree(&self, leaf_size: usize, mut rng: Option<&mut ChaCha8Rng>) -> Tree {
        let mut tree = Tree {
            nodes: Vec::new(),
            perm: (0..self.len).collect(),
        };
        // Explicit stack of (node slot, start, end).
        tree.nodes.push(Node::Leaf { start: 0, end: self.len });
        let mut stack = vec![(0usize, 0usize, self.len)];
        while let Some((slot, start, end)) = stack.pop() {
            if end - start <= leaf_size {
                continue;
            }
            let split = match rng.as_deref_mut() {
                None => self.median_split(&mut tree.perm[start..end]),
                Some(r) => self.random_split(&mut tree.perm[start..end], r),
            };
            let Some((dim, value, mid)) = split else {
                continue;
            };
            let left = tree.nodes.len();
            tree.nodes.push(Node::Leaf { start, end: start + mid });
            let right = tree.nodes.len();
            tree.nodes.push(Node::Leaf { start: start + mid, end });
            tree.nodes[slot] = Node::Split { dim, value, left, right };
            stack.push((left, start, start + mid));
            stack.push((right, start + mid, end));
        }
        tree
    }

    fn spreads(&self, ids: &[usize]) -> Vec<(f64, f64, f64)> {
        (0..self.dim)
            .map(|k| {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                let mut sum = 0.0;
                let mut sq = 0.0;
                for &i in ids {
                    let v = self.point(i)[k];
                    lo = lo.min(v);
                    hi = hi.max(v);
                    sum += v;
                    sq += v * v;
                }
                let n = ids.len() as f64;
                let mean = sum / n;
                (hi - lo, sq / n - mean * mean, mean)
            })
            .collect()
    }

    /// Median split on the widest dimension; points `< value` go left.
    fn median_split(&self, ids: &mut [usize]) -> Option<(usize, f64, usize)> {
        let spreads = self.spreads(ids);
        let (dim, _) = spreads
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(b.0.cmp(&a.0)))?;
        if spreads[dim].0 <= 0.0 {
            return None;
        }
        ids.sort_by(|&a, &b| self.point(a)[dim].total_cmp(&self.point(b)[dim]).then(a.cmp(&b)));
        let mut mid = ids.len() / 2;
        let value = self.point(ids[mid])[dim];
        while mid > 0 && self.point(ids[mid - 1])[dim] >= value {
            mid -= 1;
        }
        if mid == 0 {
            // Everything up to the median is equal; split above the run instead.
            mid = ids.iter().position(|&i| self.point(i)[dim] > value)?;
            return Some((dim, self.point(ids[mid])[dim], mid));
        }
        Some((dim, value, mid))
    }

    fn random_split(&self, ids: &mut [usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64, usize)> {
        let spreads = self.spreads(ids);
        let mut dims: Vec<usize> = (0..self.dim).filter(|&k| spreads[k].0 > 0.0).collect();
        if dims.is_empty() {
            return None;
        }
        dims.sort_by(|&a, &b| spreads[b].1.total_cmp(&spreads[a].1).then(a.cmp(&b)));
        dims.truncate(RAND_DIM_CHOICES);
        let dim = dims[rng.random_range(0..dims.len())];
        let mut value = spreads[dim].2;
        let mut mid = partition_in_place(ids, |&i| self.point(i)[dim] < value);
        if mid == 0 || mid == ids.len() {
            // Mean collapsed onto an extreme; fall back to the midrange.
            let lo = ids.iter().map(|&i| self.point(i)[dim]).fold(f64::INFINITY, f64::min);
            let hi = ids.iter().map(|&i| self.point(i)[dim]).fold(f64::NEG_INFINITY, f64::max);
            value = lo + (hi - lo) / 2.0;
            if value <= lo {
                value = hi;
            }
            mid = partition_in_place(ids, |&i| self.point(i)[dim] < value);
            if mid == 0 || mid == ids.len() {
                return None;
            }
        }
        Some((dim, value, mid))
    }

    fn check_dims(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dim {
            return Err(Error::invalid(format!(
                "query has dimensionality {}, index has {}",
                q.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// k nearest stored points of a single query, nearest first.
    pub fn knn_one(&self, q: &[f64], k: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        self.check_dims(q)?;
        if k > self.len {
            return Err(Error::invalid(format!("k = {k} exceeds the {} stored points", self.len)));
        }
        if k == 0 {
            return Ok((Vec::new(), Vec::new()));
        }
        let mut top = TopK::new(k);
        match self.mode {
            SearchMode::Exact => self.exact_search(&self.trees[0], 0, q, &mut top),
            SearchMode::Approximate => self.approx_search(q, &mut top),
        }
        Ok(top.items.iter().map(|c| (c.1, c.0.sqrt())).unzip())
    }

    /// Nearest stored point of `q`: same result as `knn_one(q, 1)` without
    /// allocating.
    pub fn nearest(&self, q: &[f64]) -> Result<(usize, f64)> {
        self.check_dims(q)?;
        if self.len == 0 {
            return Err(Error::invalid("nearest on an empty index"));
        }
        match self.mode {
            SearchMode::Exact => {
                let mut best = Cand(f64::INFINITY, usize::MAX);
                self.exact_nearest(&self.trees[0], 0, q, &mut best);
                Ok((best.1, best.0.sqrt()))
            }
            SearchMode::Approximate => {
                let (i, d) = self.knn_one(q, 1)?;
                Ok((i[0], d[0]))
            }
        }
    }

    fn exact_nearest(&self, tree: &Tree, node: usize, q: &[f64], best: &mut Cand) {
        match tree.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &tree.perm[start..end] {
                    let c = Cand(self.sq_dist_to(i, q), i);
                    if c < *best {
                        *best = c;
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.exact_nearest(tree, near, q, best);
                if diff * diff <= best.0 {
                    self.exact_nearest(tree, far, q, best);
                }
            }
        }
    }

    pub fn knn_search(&self, queries: &[Vec<f64>], k: usize) -> Result<KnnResult> {
        let mut out = KnnResult::default();
        for q in queries {
            let (i, d) = self.knn_one(q, k)?;
            out.indices.push(i);
            out.dists.push(d);
        }
        Ok(out)
    }

    fn exact_search(&self, tree: &Tree, node: usize, q: &[f64], top: &mut TopK) {
        match tree.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &tree.perm[start..end] {
                    top.push(Cand(self.sq_dist_to(i, q), i));
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.exact_search(tree, near, q, top);
                // `<=` keeps equal-distance points with lower ids reachable.
                if diff * diff <= top.worst() {
                    self.exact_search(tree, far, q, top);
                }
            }
        }
    }

    fn approx_search(&self, q: &[f64], top: &mut TopK) {
        let mut seen = vec![false; self.len];
        let mut checked = 0usize;
        let mut heap = BinaryHeap::new();
        for t in 0..self.trees.len() {
            heap.push(Branch { bound: 0.0, tree: t, node: 0 });
        }
        while let Some(b) = heap.pop() {
            if checked >= self.checks && top.items.len() == top.k {
                break;
            }
            if b.bound > top.worst() {
                continue;
            }
            let tree = &self.trees[b.tree];
            let mut node = b.node;
            loop {
                match tree.nodes[node] {
                    Node::Leaf { start, end } => {
                        for &i in &tree.perm[start..end] {
                            if !seen[i] {
                                seen[i] = true;
                                checked += 1;
                                top.push(Cand(self.sq_dist_to(i, q), i));
                            }
                        }
                        break;
                    }
                    Node::Split { dim, value, left, right } => {
                        let diff = q[dim] - value;
                        let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                        heap.push(Branch {
                            bound: b.bound.max(diff * diff),
                            tree: b.tree,
                            node: far,
                        });
                        node = near;
                    }
                }
            }
        }
    }
}

fn partition_in_place<F: Fn(&usize) -> bool>(ids: &mut [usize], pred: F) -> usize {
    let mut mid = 0;
    for i in 0..ids.len() {
        if pred(&ids[i]) {
            ids.swap(i, mid);
            mid += 1;
        }
    }
    mid
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(points: &[Vec<f64>], q: &[f64], k: usize) -> (Vec<usize>, Vec<f64>) {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all.into_iter().map(|(d, i)| (i, d.sqrt())).unzip()
    }

    fn random_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
    }

    #[test]
    fn single_point_index() {
        for mode in [SearchMode::Exact, SearchMode::Approximate] {
            let idx = NNIndex::build(&[vec![1.0, 2.0]], mode).unwrap();
            let (i, d) = idx.knn_one(&[5.0, 5.0], 1).unwrap();
            assert_eq!(i, vec![0]);
            assert_eq!(d, vec![5.0]);
        }
    }

    #[test]
    fn empty_and_bad_queries() {
        assert!(NNIndex::build(&[], SearchMode::Exact).is_err());
        let idx = NNIndex::build(&[vec![0.0], vec![1.0]], SearchMode::Exact).unwrap();
        assert!(idx.knn_one(&[0.0], 3).is_err());
        assert!(idx.knn_one(&[0.0, 1.0], 1).is_err());
    }

    #[test]
    fn line_example() {
        let idx = NNIndex::build(&[vec![0.0], vec![1.0], vec![3.0]], SearchMode::Exact).unwrap();
        let (i, d) = idx.knn_one(&[0.9], 2).unwrap();
        assert_eq!(i, vec![1, 0]);
        assert!((d[0] - 0.1).abs() < 1e-12 && (d[1] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let pts = vec![vec![2.0], vec![0.0], vec![1.0], vec![0.0], vec![2.0]];
        let idx = NNIndex::build(&pts, SearchMode::Exact).unwrap();
        let (i, _) = idx.knn_one(&[1.0], 5).unwrap();
        assert_eq!(i, vec![2, 0, 1, 3, 4]);
    }

    #[test]
    fn exact_on_heavy_duplicates() {
        let mut pts = random_points(40, 2, 3);
        for i in 0..40 {
            if i % 3 == 0 {
                pts[i] = vec![0.5, 0.5];
            }
        }
        let idx = NNIndex::build(&pts, SearchMode::Exact).unwrap();
        for q in random_points(20, 2, 4) {
            assert_eq!(idx.knn_one(&q, 10).unwrap(), brute(&pts, &q, 10));
        }
    }

    #[test]
    fn self_query_returns_self() {
        let pts = random_points(500, 3, 9);
        for mode in [SearchMode::Exact, SearchMode::Approximate] {
            let idx = NNIndex::build(&pts, mode).unwrap();
            for (i, p) in pts.iter().enumerate() {
                let (ids, d) = idx.knn_one(p, 1).unwrap();
                assert_eq!((ids[0], d[0]), (i, 0.0));
            }
        }
    }

    #[test]
    fn approximate_build_is_deterministic() {
        let pts = random_points(300, 2, 1);
        let a = NNIndex::build(&pts, SearchMode::Approximate).unwrap();
        let b = NNIndex::build(&pts, SearchMode::Approximate).unwrap();
        let q = random_points(50, 2, 2);
        assert_eq!(a.knn_search(&q, 4).unwrap(), b.knn_search(&q, 4).unwrap());
    }

    #[test]
    fn build_300_centers_is_fast() {
        let pts = random_points(300, 2, 5);
        let t = std::time::Instant::now();
        NNIndex::build(&pts, SearchMode::Approximate).unwrap();
        NNIndex::build(&pts, SearchMode::Exact).unwrap();
        assert!(t.elapsed().as_millis() < 50);
    }
}
