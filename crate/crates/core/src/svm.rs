//! C-SVM trained by SMO with maximal-violating-pair working-set selection
//! and no shrinking, plus LIBSVM-compatible model files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::LabeledPoint;
use crate::error::{Error, Result};

/// Denominator floor for non positive-definite kernels.
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    /// `(gamma * <x, y> + coef0)^degree`; `gamma <= 0` means `1 / d`.
    Polynomial { degree: u32, gamma: f64, coef0: f64 },
    /// `exp(-gamma * |x - y|^2)`; `gamma <= 0` means `1 / d`.
    Rbf { gamma: f64 },
}

impl Kernel {
    fn resolved(self, d: usize) -> Self {
        let auto = |g: f64| if g > 0.0 { g } else { 1.0 / d.max(1) as f64 };
        match self {
            Kernel::Linear => Kernel::Linear,
            Kernel::Polynomial { degree, gamma, coef0 } => Kernel::Polynomial {
                degree,
                gamma: auto(gamma),
                coef0,
            },
            Kernel::Rbf { gamma } => Kernel::Rbf { gamma: auto(gamma) },
        }
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => dot(a, b),
            Kernel::Polynomial { degree, gamma, coef0 } => (gamma * dot(a, b) + coef0).powi(degree as i32),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Linear => "linear",
            Kernel::Polynomial { .. } => "polynomial",
            Kernel::Rbf { .. } => "rbf",
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub kernel: Kernel,
    pub c: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    /// Iteration cap in units of the training-set size.
    pub max_passes: usize,
    /// Kernel row cache budget.
    pub cache_mb: usize,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self {
            kernel: Kernel::Linear,
            c: 1.0,
            tol: 1e-3,
            max_passes: 100,
            cache_mb: 200,
        }
    }
}

impl ClassifierSpec {
    pub fn with_kernel(kernel: Kernel) -> Self {
        Self {
            kernel,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::invalid("C must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub kernel: Kernel,
    pub c: f64,
    pub support_vectors: Vec<Vec<f64>>,
    /// Dual coefficients `alpha_i`, each in `[0, C]`.
    pub alphas: Vec<f64>,
    pub labels: Vec<i8>,
    /// Decision function is `sum(alpha_i y_i K(x_i, x)) - rho`.
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub iterations: usize,
    pub converged: bool,
    /// Final maximal violation `m(alpha) - M(alpha)`.
    pub violation: f64,
}

impl TrainedModel {
    pub fn decision_value(&self, x: &[f64]) -> f64 {
        let mut s = -self.rho;
        for ((sv, &a), &y) in self.support_vectors.iter().zip(&self.alphas).zip(&self.labels) {
            s += a * y as f64 * self.kernel.eval(sv, x);
        }
        s
    }

    pub fn predict_one(&self, x: &[f64]) -> i8 {
        if self.decision_value(x) >= 0.0 {
            1
        } else {
            -1
        }
    }
}

/// LRU cache of kernel rows stored as `f32`.
struct RowCache {
    rows: HashMap<usize, (Vec<f32>, u64)>,
    capacity: usize,
    clock: u64,
}

impl RowCache {
    fn new(n: usize, budget_mb: usize) -> Self {
        let capacity = ((budget_mb << 20) / (4 * n.max(1))).max(2);
        Self {
            rows: HashMap::new(),
            capacity,
            clock: 0,
        }
    }

    fn ensure(&mut self, i: usize, compute: impl FnOnce() -> Vec<f32>) {
        self.clock += 1;
        if let Some(entry) = self.rows.get_mut(&i) {
            entry.1 = self.clock;
            return;
        }
        if self.rows.len() >= self.capacity {
            let oldest = *self.rows.iter().min_by_key(|(_, v)| v.1).unwrap().0;
            self.rows.remove(&oldest);
        }
        self.rows.insert(i, (compute(), self.clock));
    }

    fn get(&self, i: usize) -> &[f32] {
        &self.rows[&i].0
    }
}

struct Problem<'a> {
    x: Vec<&'a [f64]>,
    y: Vec<f64>,
    kernel: Kernel,
}

impl Problem<'_> {
    fn row(&self, i: usize) -> Vec<f32> {
        let xi = self.x[i];
        self.x.iter().map(|xj| self.kernel.eval(xi, xj) as f32).collect()
    }
}

pub fn train(points: &[LabeledPoint], spec: &ClassifierSpec) -> Result<TrainedModel> {
    train_with_stats(points, spec).map(|(m, _)| m)
}

/// Solves the C-SVM dual with SMO. Working pairs are the maximal violating
/// pair, lowest index first on ties, so runs are deterministic.
pub fn train_with_stats(points: &[LabeledPoint], spec: &ClassifierSpec) -> Result<(TrainedModel, TrainStats)> {
    spec.validate()?;
    let first = points.first().ok_or_else(|| Error::invalid("no training points"))?;
    if points.iter().all(|p| p.target == first.target) {
        return Err(Error::SingleClass(first.target));
    }
    let d = first.features.len();
    let prob = Problem {
        x: points.iter().map(|p| p.features.as_slice()).collect(),
        y: points.iter().map(|p| p.target as f64).collect(),
        kernel: spec.kernel.resolved(d),
    };
    let n = points.len();
    let c = spec.c;
    let qd: Vec<f64> = (0..n).map(|i| prob.kernel.eval(prob.x[i], prob.x[i])).collect();
    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    let mut cache = RowCache::new(n, spec.cache_mb);
    let max_iter = spec.max_passes.max(1).saturating_mul(n).max(1000);
    let y = &prob.y;

    let mut iterations = 0;
    let mut converged = false;
    let mut violation;
    loop {
        // i maximizes -y_t G_t over I_up; j maximizes y_t G_t over I_low.
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax2 = f64::NEG_INFINITY;
        let mut wi = usize::MAX;
        let mut wj = usize::MAX;
        for t in 0..n {
            let (up, low) = if y[t] > 0.0 {
                (alpha[t] < c, alpha[t] > 0.0)
            } else {
                (alpha[t] > 0.0, alpha[t] < c)
            };
            let v = -y[t] * grad[t];
            if up && v > gmax {
                gmax = v;
                wi = t;
            }
            if low && -v > gmax2 {
                gmax2 = -v;
                wj = t;
            }
        }
        violation = gmax + gmax2;
        if violation < spec.tol || wi == usize::MAX || wj == usize::MAX {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            log::warn!("SMO stopped at the iteration cap ({max_iter}) with violation {violation}");
            break;
        }
        iterations += 1;

        let (i, j) = (wi, wj);
        cache.ensure(i, || prob.row(i));
        cache.ensure(j, || prob.row(j));
        let ki = cache.get(i);
        let kij = ki[j] as f64;
        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        let (mut ai, mut aj) = (old_ai, old_aj);

        if y[i] != y[j] {
            let quad = (qd[i] + qd[j] + 2.0 * kij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let quad = (qd[i] + qd[j] - 2.0 * kij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;

        let dai = (ai - old_ai) * y[i];
        let daj = (aj - old_aj) * y[j];
        let ki = cache.get(i);
        let kj = cache.get(j);
        for t in 0..n {
            grad[t] += y[t] * (ki[t] as f64 * dai + kj[t] as f64 * daj);
        }
    }

    // rho: mean of y G over free vectors, else midpoint of the feasible range.
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum_free = 0.0;
    let mut nr_free = 0usize;
    for t in 0..n {
        let yg = y[t] * grad[t];
        let at_upper = alpha[t] >= c;
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            nr_free += 1;
            sum_free += yg;
        }
    }
    let rho = if nr_free > 0 { sum_free / nr_free as f64 } else { (ub + lb) / 2.0 };

    // Positives first, then negatives, each in training order.
    let mut order: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0 && y[t] > 0.0).collect();
    order.extend((0..n).filter(|&t| alpha[t] > 0.0 && y[t] < 0.0));
    let model = TrainedModel {
        kernel: prob.kernel,
        c,
        support_vectors: order.iter().map(|&t| points[t].features.clone()).collect(),
        alphas: order.iter().map(|&t| alpha[t]).collect(),
        labels: order.iter().map(|&t| points[t].target).collect(),
        rho,
    };
    Ok((
        model,
        TrainStats {
            iterations,
            converged,
            violation,
        },
    ))
}

/// A trained partition classifier: an SVM, or a constant label when the
/// partition held a single class.
#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Svm(TrainedModel),
    Constant(i8),
}

impl Classifier {
    /// Trains an SVM, or a constant predictor for single-class input.
    pub fn fit(points: &[LabeledPoint], spec: &ClassifierSpec) -> Result<Self> {
        match train(points, spec) {
            Ok(m) => Ok(Classifier::Svm(m)),
            Err(Error::SingleClass(label)) => {
                log::info!("single-class partition ({label:+}), using a constant predictor");
                Ok(Classifier::Constant(label))
            }
            Err(e) => Err(e),
        }
    }

    pub fn predict_one(&self, x: &[f64]) -> i8 {
        match self {
            Classifier::Svm(m) => m.predict_one(x),
            Classifier::Constant(l) => *l,
        }
    }

    pub fn predict(&self, xs: &[Vec<f64>]) -> Vec<i8> {
        xs.iter().map(|x| self.predict_one(x)).collect()
    }

    pub fn n_support(&self) -> usize {
        match self {
            Classifier::Svm(m) => m.support_vectors.len(),
            Classifier::Constant(_) => 0,
        }
    }

    /// LIBSVM text model. A constant predictor is a model without support
    /// vectors whose `rho` carries the label.
    pub fn to_libsvm_string(&self) -> String {
        let (kernel, svs, coefs, rho): (Kernel, &[Vec<f64>], Vec<f64>, f64) = match self {
            Classifier::Svm(m) => (
                m.kernel,
                &m.support_vectors,
                m.alphas.iter().zip(&m.labels).map(|(a, &y)| a * y as f64).collect(),
                m.rho,
            ),
            Classifier::Constant(l) => (Kernel::Linear, &[], Vec::new(), -(*l as f64)),
        };
        let mut s = String::new();
        s.push_str("svm_type c_svc\n");
        let _ = writeln!(s, "kernel_type {}", kernel.name());
        match kernel {
            Kernel::Linear => {}
            Kernel::Polynomial { degree, gamma, coef0 } => {
                let _ = writeln!(s, "degree {degree}\ngamma {gamma}\ncoef0 {coef0}");
            }
            Kernel::Rbf { gamma } => {
                let _ = writeln!(s, "gamma {gamma}");
            }
        }
        let n_pos = coefs.iter().filter(|&&c| c > 0.0).count();
        let _ = writeln!(s, "nr_class 2\ntotal_sv {}\nrho {rho}", coefs.len());
        let _ = writeln!(s, "label 1 -1\nnr_sv {n_pos} {}\nSV", coefs.len() - n_pos);
        for (sv, coef) in svs.iter().zip(&coefs) {
            let _ = write!(s, "{coef}");
            for (k, v) in sv.iter().enumerate() {
                let _ = write!(s, " {}:{v}", k + 1);
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_libsvm_string())?;
        Ok(())
    }

    pub fn from_libsvm_str(text: &str) -> Result<Self> {
        let mut kernel_type = None;
        let (mut degree, mut gamma, mut coef0) = (3u32, 0.0, 0.0);
        let mut rho = None;
        let mut labels = vec![1i8, -1];
        let mut lines = text.lines().enumerate();
        let bad = |row: usize, msg: &str| Error::parse(row + 1, msg.to_string());
        for (row, line) in lines.by_ref() {
            let mut parts = line.split_whitespace();
            let Some(key) = parts.next() else { continue };
            let rest: Vec<&str> = parts.collect();
            let num = |i: usize| -> Result<f64> {
                rest.get(i)
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| bad(row, "bad numeric field"))
            };
            match key {
                "svm_type" => {
                    if rest.first() != Some(&"c_svc") {
                        return Err(Error::Unsupported("only c_svc models are supported".into()));
                    }
                }
                "kernel_type" => kernel_type = rest.first().map(|s| s.to_string()),
                "degree" => degree = num(0)? as u32,
                "gamma" => gamma = num(0)?,
                "coef0" => coef0 = num(0)?,
                "rho" => rho = Some(num(0)?),
                "label" => labels = vec![num(0)? as i8, num(1)? as i8],
                "nr_class" => {
                    if num(0)? != 2.0 {
                        return Err(Error::Unsupported("only binary models are supported".into()));
                    }
                }
                "total_sv" | "nr_sv" | "probA" | "probB" => {}
                "SV" => break,
                _ => return Err(bad(row, "unknown model header key")),
            }
        }
        let kernel = match kernel_type.as_deref() {
            Some("linear") => Kernel::Linear,
            Some("polynomial") => Kernel::Polynomial { degree, gamma, coef0 },
            Some("rbf") => Kernel::Rbf { gamma },
            other => return Err(Error::Unsupported(format!("kernel {other:?}"))),
        };
        let mut rho = rho.ok_or_else(|| Error::invalid("model has no rho"))?;
        // Decision values are positive for labels[0].
        let sign = if labels[0] > 0 { 1.0 } else { -1.0 };
        rho *= sign;

        let mut svs = Vec::new();
        let mut coefs = Vec::new();
        for (row, line) in lines {
            let mut parts = line.split_whitespace();
            let Some(coef) = parts.next() else { continue };
            let coef: f64 = coef.parse().map_err(|_| bad(row, "bad coefficient"))?;
            let mut sv = Vec::new();
            for tok in parts {
                let (idx, val) = tok.split_once(':').ok_or_else(|| bad(row, "bad entry"))?;
                let idx: usize = idx.parse().map_err(|_| bad(row, "bad index"))?;
                let val: f64 = val.parse().map_err(|_| bad(row, "bad value"))?;
                if idx == 0 || idx <= sv.len() {
                    return Err(bad(row, "indices must be increasing"));
                }
                sv.resize(idx - 1, 0.0);
                sv.push(val);
            }
            svs.push(sv);
            coefs.push(coef * sign);
        }
        if svs.is_empty() {
            return Ok(Classifier::Constant(if -rho >= 0.0 { 1 } else { -1 }));
        }
        let dim = svs.iter().map(Vec::len).max().unwrap_or(0);
        for sv in &mut svs {
            sv.resize(dim, 0.0);
        }
        let c = coefs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Classifier::Svm(TrainedModel {
            kernel,
            c,
            alphas: coefs.iter().map(|v| v.abs()).collect(),
            labels: coefs.iter().map(|&v| if v > 0.0 { 1 } else { -1 }).collect(),
            support_vectors: svs,
            rho,
        }))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_libsvm_str(&fs::read_to_string(path)?)
    }
}

/// Fraction of `points` whose label `classifier` predicts correctly.
pub fn accuracy(classifier: &Classifier, points: &[LabeledPoint]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let correct = points
        .iter()
        .filter(|p| classifier.predict_one(&p.features) == p.target)
        .count();
    correct as f64 / points.len() as f64
}
