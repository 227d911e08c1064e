//! Dataset model, file ingestion (CSV and LIBSVM sparse text), min-max
//! scaling, the synthetic fixture generators and train/test splitting.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability that a label inside the noise band is flipped.
pub const FLIP_PROBABILITY: f64 = 0.1;

/// Width of the noisy shell around the sphere boundary of Dataset II.
pub const SHELL_WIDTH: f64 = 0.02;

/// Default flip-band width for Dataset I.
pub const DATASET_ONE_MARGIN: f64 = 0.02;

/// One observation: a feature vector and a class in {-1, +1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub features: Vec<f64>,
    pub target: i8,
}

impl LabeledPoint {
    pub fn new(features: Vec<f64>, target: i8) -> Self {
        Self { features, target }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<LabeledPoint>,
    dim: usize,
}

impl Dataset {
    /// Builds a dataset, checking that it is non-empty, that every point
    /// has the same dimensionality and that every target is -1 or +1.
    pub fn new(points: Vec<LabeledPoint>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::invalid("no points"))?;
        let dim = first.features.len();
        for (i, p) in points.iter().enumerate() {
            if p.features.len() != dim {
                return Err(Error::invalid(format!(
                    "point {i} has {} features, expected {dim}",
                    p.features.len()
                )));
            }
            if p.target != 1 && p.target != -1 {
                return Err(Error::invalid(format!(
                    "point {i} has target {}, expected -1 or +1",
                    p.target
                )));
            }
        }
        Ok(Self { points, dim })
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn d(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    pub fn into_points(self) -> Vec<LabeledPoint> {
        self.points
    }

    pub fn point(&self, id: usize) -> &LabeledPoint {
        &self.points[id]
    }

    /// Point counts as `[negatives, positives]`.
    pub fn class_counts(&self) -> [usize; 2] {
        class_counts(&self.points)
    }

    /// Copies the points with the given ids, preserving the order of `ids`.
    pub fn subset(&self, ids: &[usize]) -> Result<Dataset> {
        Dataset::new(ids.iter().map(|&i| self.points[i].clone()).collect())
    }
}

pub fn class_counts(points: &[LabeledPoint]) -> [usize; 2] {
    let pos = points.iter().filter(|p| p.target > 0).count();
    [points.len() - pos, pos]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

fn parse_f64(field: &str) -> Option<f64> {
    field.trim().parse::<f64>().ok()
}

/// Orders raw label strings: numerically when all of them parse as numbers,
/// lexicographically otherwise.
fn sort_labels(labels: &mut [String]) {
    if labels.iter().all(|l| parse_f64(l).is_some()) {
        labels.sort_by(|a, b| parse_f64(a).unwrap().total_cmp(&parse_f64(b).unwrap()));
    } else {
        labels.sort();
    }
}

fn remap_labels(raw: &[String]) -> Result<Vec<i8>> {
    let mut distinct: Vec<String> = raw.to_vec();
    sort_labels(&mut distinct);
    distinct.dedup();
    match distinct.len() {
        0 => Err(Error::invalid("no points")),
        1 => {
            // A single-class file keeps its sign when the label is numeric.
            let target = match parse_f64(&distinct[0]) {
                Some(v) if v > 0.0 => 1,
                _ => -1,
            };
            Ok(vec![target; raw.len()])
        }
        2 => Ok(raw
            .iter()
            .map(|l| if *l == distinct[0] { -1 } else { 1 })
            .collect()),
        k => Err(Error::Unsupported(format!(
            "{k} distinct labels, only binary classification is supported"
        ))),
    }
}

/// Reads a comma-separated file. A first row with a non-numeric feature
/// field is treated as a header. Labels are remapped to {-1, +1} by
/// ascending original value.
pub fn load_csv(path: impl AsRef<Path>, label_column: usize) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut arity = None;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if label_column >= record.len() {
            return Err(Error::parse(
                row,
                format!("label column {label_column} out of range for {} fields", record.len()),
            ));
        }
        let parsed: Vec<Option<f64>> = record
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != label_column)
            .map(|(_, f)| parse_f64(f))
            .collect();
        if parsed.iter().any(Option::is_none) {
            if i == 0 {
                continue;
            }
            return Err(Error::parse(row, "non-numeric feature"));
        }
        match arity {
            None => arity = Some(record.len()),
            Some(a) if a != record.len() => {
                return Err(Error::parse(
                    row,
                    format!("expected {a} fields, found {}", record.len()),
                ))
            }
            _ => {}
        }
        features.push(parsed.into_iter().map(Option::unwrap).collect::<Vec<_>>());
        labels.push(record[label_column].to_string());
    }
    if features.is_empty() {
        return Err(Error::invalid("no points"));
    }
    let targets = remap_labels(&labels)?;
    Dataset::new(
        features
            .into_iter()
            .zip(targets)
            .map(|(f, t)| LabeledPoint::new(f, t))
            .collect(),
    )
}

/// Writes features followed by the label (`-1` or `1`) in the last column.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for p in ds.points() {
        for v in &p.features {
            write!(out, "{v},")?;
        }
        writeln!(out, "{}", p.target)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads LIBSVM sparse text (`label idx:val ...`, 1-based indices). The
/// dimensionality is the largest index seen; absent entries are zero.
pub fn load_libsvm_format(path: impl AsRef<Path>) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut dim = 0;
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label = tokens.next().unwrap();
        if parse_f64(label).is_none() {
            return Err(Error::parse(row, format!("bad label {label:?}")));
        }
        let mut entries = Vec::new();
        let mut last = 0;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| Error::parse(row, format!("bad entry {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::parse(row, format!("bad index {idx:?}")))?;
            let val = parse_f64(val).ok_or_else(|| Error::parse(row, format!("bad value {val:?}")))?;
            if idx == 0 || idx <= last {
                return Err(Error::parse(row, "indices must be 1-based and increasing"));
            }
            last = idx;
            entries.push((idx, val));
        }
        dim = dim.max(last);
        rows.push(entries);
        labels.push(label.to_string());
    }
    if rows.is_empty() {
        return Err(Error::invalid("no points"));
    }
    let targets = remap_labels(&labels)?;
    let points = rows
        .into_iter()
        .zip(targets)
        .map(|(entries, t)| {
            let mut f = vec![0.0; dim];
            for (idx, v) in entries {
                f[idx - 1] = v;
            }
            LabeledPoint::new(f, t)
        })
        .collect();
    Dataset::new(points)
}

/// Writes LIBSVM sparse text. Zero entries are omitted.
pub fn save_libsvm_format(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for p in ds.points() {
        write!(out, "{:+}", p.target)?;
        for (i, v) in p.features.iter().enumerate() {
            if *v != 0.0 {
                write!(out, " {}:{v}", i + 1)?;
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Affinely maps every feature column onto [0, 1]. Constant columns map to 0.
pub fn scale_minmax(ds: &Dataset) -> Dataset {
    let d = ds.d();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in ds.points() {
        for (k, &v) in p.features.iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let points = ds
        .points()
        .iter()
        .map(|p| {
            let f = p
                .features
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let range = hi[k] - lo[k];
                    if range > 0.0 {
                        ((v - lo[k]) / range).clamp(0.0, 1.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            LabeledPoint::new(f, p.target)
        })
        .collect();
    Dataset { points, dim: d }
}

fn uniform_point(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random::<f64>()).collect()
}

fn maybe_flip(rng: &mut ChaCha8Rng, target: i8, in_band: bool) -> i8 {
    if in_band && rng.random::<f64>() < FLIP_PROBABILITY {
        -target
    } else {
        target
    }
}

/// Dataset I: uniform points in the unit hypercube, labelled by the side of
/// the hyperplane `x_0 = 0.5`. Inside a band of total width `margin` around
/// the hyperplane labels flip with probability [`FLIP_PROBABILITY`].
pub fn gen_dataset_one(n: usize, d: usize, margin: f64, seed: u64) -> Result<Dataset> {
    gen_halfspace(n, d, 0.5, margin, seed)
}

/// Like [`gen_dataset_one`] with the hyperplane at `x_0 = threshold`, giving
/// a class ratio of roughly `threshold : 1 - threshold`.
pub fn gen_halfspace(n: usize, d: usize, threshold: f64, margin: f64, seed: u64) -> Result<Dataset> {
    if n < 2 || d < 1 {
        return Err(Error::invalid("need n >= 2 and d >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let x = uniform_point(&mut rng, d);
            let offset = x[0] - threshold;
            let target = if offset >= 0.0 { 1 } else { -1 };
            let target = maybe_flip(&mut rng, target, offset.abs() < margin / 2.0);
            LabeledPoint::new(x, target)
        })
        .collect();
    Dataset::new(points)
}

/// Dataset II: +1 strictly inside the sphere of `radius` centred at the
/// hypercube centroid, -1 outside, with label noise in a shell of width
/// [`SHELL_WIDTH`] around the sphere.
pub fn gen_dataset_two(n: usize, d: usize, radius: f64, seed: u64) -> Result<Dataset> {
    if n < 2 || d < 1 {
        return Err(Error::invalid("need n >= 2 and d >= 1"));
    }
    if !(radius > 0.0 && radius < 0.5) {
        return Err(Error::invalid("radius must lie in (0, 0.5)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let x = uniform_point(&mut rng, d);
            let target = sphere_label(&x, radius);
            let r = dist_to_centroid(&x);
            let target = maybe_flip(&mut rng, target, (r - radius).abs() < SHELL_WIDTH / 2.0);
            LabeledPoint::new(x, target)
        })
        .collect();
    Dataset::new(points)
}

fn dist_to_centroid(x: &[f64]) -> f64 {
    x.iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f64>().sqrt()
}

/// Noise-free Dataset II label of a point.
pub fn sphere_label(x: &[f64], radius: f64) -> i8 {
    if dist_to_centroid(x) < radius {
        1
    } else {
        -1
    }
}

/// Shuffles with `spec.seed` and splits into (train, test). The train part
/// holds `round(n * train_fraction)` points, clamped so both parts are
/// non-empty.
pub fn split(ds: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::invalid("train_fraction must lie in (0, 1)"));
    }
    if ds.n() < 2 {
        return Err(Error::invalid("need at least two points to split"));
    }
    let mut ids: Vec<usize> = (0..ds.n()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = ((ds.n() as f64 * spec.train_fraction).round() as usize).clamp(1, ds.n() - 1);
    let (train, test) = ids.split_at(n_train);
    Ok((ds.subset(train)?, ds.subset(test)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_remaps_labels_by_sort_order() {
        let f = write_tmp("0,0,A\n1,1,B\n2,2,A\n");
        let ds = load_csv(f.path(), 2).unwrap();
        assert_eq!((ds.n(), ds.d()), (3, 2));
        let targets: Vec<i8> = ds.points().iter().map(|p| p.target).collect();
        assert_eq!(targets, vec![-1, 1, -1]);
    }

    #[test]
    fn csv_numeric_labels_sort_numerically() {
        let f = write_tmp("0,10\n1,9\n");
        let ds = load_csv(f.path(), 1).unwrap();
        assert_eq!(ds.point(0).target, 1);
        assert_eq!(ds.point(1).target, -1);
    }

    #[test]
    fn csv_ragged_rows_report_row_number() {
        let f = write_tmp("1,2\n1,2,3\n");
        match load_csv(f.path(), 1) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_header_is_skipped() {
        let f = write_tmp("x,y,label\n0.5,1,a\n0.25,2,b\n");
        let ds = load_csv(f.path(), 2).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.point(0).features, vec![0.5, 1.0]);
    }

    #[test]
    fn csv_three_labels_unsupported() {
        let f = write_tmp("0,a\n1,b\n2,c\n");
        assert!(matches!(load_csv(f.path(), 1), Err(Error::Unsupported(_))));
    }

    #[test]
    fn skin_shaped_file_dimensions() {
        // Four numeric columns plus label, as in the UCI skin segmentation data.
        let mut text = String::new();
        for i in 0..245_057u32 {
            let label = if i % 5 == 0 { 1 } else { 2 };
            text.push_str(&format!("{},{},{},{},{label}\n", i % 256, (i * 7) % 256, (i * 13) % 256, i % 3));
        }
        let f = write_tmp(&text);
        let ds = load_csv(f.path(), 4).unwrap();
        assert_eq!((ds.n(), ds.d()), (245_057, 4));
    }

    #[test]
    fn libsvm_parses_sparse_lines() {
        let f = write_tmp("+1 1:0.5 3:1.0\n");
        let ds = load_libsvm_format(f.path()).unwrap();
        assert_eq!(ds.d(), 3);
        assert_eq!(ds.point(0).features, vec![0.5, 0.0, 1.0]);
        assert_eq!(ds.point(0).target, 1);

        let f = write_tmp("-1 2:2.0\n");
        let ds = load_libsvm_format(f.path()).unwrap();
        assert_eq!(ds.point(0).features, vec![0.0, 2.0]);
        assert_eq!(ds.point(0).target, -1);
    }

    #[test]
    fn libsvm_errors() {
        let f = write_tmp("");
        match load_libsvm_format(f.path()) {
            Err(Error::InvalidInput(msg)) => assert!(msg.contains("no points")),
            other => panic!("{other:?}"),
        }
        let f = write_tmp("+1 1:1\n-1 3:1 2:1\n");
        assert!(matches!(
            load_libsvm_format(f.path()),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn scaling_examples() {
        let ds = Dataset::new(vec![
            LabeledPoint::new(vec![2.0, 5.0, 0.0, 10.0], 1),
            LabeledPoint::new(vec![4.0, 5.0, 1.0, 20.0], -1),
            LabeledPoint::new(vec![6.0, 5.0, 1.0, 20.0], 1),
        ])
        .unwrap();
        let s = scale_minmax(&ds);
        let col = |k: usize| s.points().iter().map(|p| p.features[k]).collect::<Vec<_>>();
        assert_eq!(col(0), vec![0.0, 0.5, 1.0]);
        assert_eq!(col(1), vec![0.0, 0.0, 0.0]);
        assert_eq!(col(2), vec![0.0, 1.0, 1.0]);
        assert_eq!(col(3), vec![0.0, 1.0, 1.0]);
        assert_eq!(s.point(1).target, -1);
    }

    #[test]
    fn separable_generator_has_no_noise() {
        let ds = gen_dataset_one(2000, 3, 0.0, 7).unwrap();
        for p in ds.points() {
            assert_eq!(p.target, if p.features[0] >= 0.5 { 1 } else { -1 });
        }
        assert_eq!(ds, gen_dataset_one(2000, 3, 0.0, 7).unwrap());
        assert_ne!(ds, gen_dataset_one(2000, 3, 0.0, 8).unwrap());
    }

    #[test]
    fn noisy_band_flips_only_inside_band() {
        let ds = gen_dataset_one(20_000, 2, 0.1, 3).unwrap();
        let mut flipped = 0;
        for p in ds.points() {
            let clean = if p.features[0] >= 0.5 { 1 } else { -1 };
            if p.target != clean {
                assert!((p.features[0] - 0.5).abs() < 0.05);
                flipped += 1;
            }
        }
        // 10% of the 10% band: about 200 flips.
        assert!((120..280).contains(&flipped), "flipped {flipped}");
    }

    #[test]
    fn sphere_labels() {
        assert_eq!(sphere_label(&[0.5, 0.5, 0.5], 0.2), 1);
        assert_eq!(sphere_label(&[0.0, 0.0, 0.0], 0.2), -1);
        assert_eq!(sphere_label(&[1.0, 1.0, 1.0], 0.2), -1);
        let ds = gen_dataset_two(5000, 3, 0.2, 1).unwrap();
        assert_eq!(ds.d(), 3);
        let [neg, pos] = ds.class_counts();
        // Sphere volume 4/3 pi 0.2^3 ~ 0.0335.
        assert!(pos > 100 && pos < 250, "{pos}");
        assert_eq!(neg + pos, 5000);
        assert!(gen_dataset_two(10, 3, 0.6, 1).is_err());
    }

    #[test]
    fn split_small() {
        let ds = gen_dataset_one(4, 2, 0.0, 1).unwrap();
        let (a, b) = split(&ds, SplitSpec { train_fraction: 0.5, seed: 9 }).unwrap();
        assert_eq!((a.n(), b.n()), (2, 2));
        for p in a.points() {
            assert!(!b.points().contains(p));
        }
    }

    #[test]
    fn split_one_to_three() {
        let ds = gen_dataset_one(120_000, 2, 0.0, 1).unwrap();
        let (a, b) = split(&ds, SplitSpec { train_fraction: 0.25, seed: 2 }).unwrap();
        assert_eq!((a.n(), b.n()), (30_000, 90_000));
    }
}
