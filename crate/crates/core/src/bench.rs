//! Timing and accuracy sweeps over the pipelines, and the messaging
//! protocol micro-benchmark.

use std::io::{BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::{gen_dataset_one, gen_dataset_two, split, Dataset, LabeledPoint, SplitSpec, DATASET_ONE_MARGIN};
use crate::distnet::master::{self, ServeOptions};
use crate::distnet::wire::{self, DataBegin, EventTag, Message};
use crate::distnet::{self};
use crate::error::{Error, Result};
use crate::pipeline::{train_full, train_gch_serial, train_gsh, PipelineParams};
use crate::predict::ensemble_predict;
use crate::svm::{accuracy, ClassifierSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    /// Near-linearly separable half-space data with the given flip band.
    One { margin: f64 },
    /// Sphere of the given radius around the hypercube center.
    Two { radius: f64 },
}

impl Generator {
    pub fn generate(&self, n: usize, d: usize, seed: u64) -> Result<Dataset> {
        match *self {
            Generator::One { margin } => gen_dataset_one(n, d, margin, seed),
            Generator::Two { radius } => gen_dataset_two(n, d, radius, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    Full,
    Gsh,
    GchSerial,
    /// GCH with partitions trained by this many loopback workers.
    GchDistributed(usize),
}

impl PipelineKind {
    pub fn label(&self) -> String {
        match self {
            PipelineKind::Full => "full".into(),
            PipelineKind::Gsh => "gsh".into(),
            PipelineKind::GchSerial => "gch_serial".into(),
            PipelineKind::GchDistributed(w) => format!("gch_dist_{w}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub generator: Generator,
    pub d: usize,
    /// Training-set sizes.
    pub sizes: Vec<usize>,
    pub n_clusters: Vec<usize>,
    /// Test points per training point.
    pub test_ratio: f64,
    pub pipelines: Vec<PipelineKind>,
    pub classifier: ClassifierSpec,
    pub params: PipelineParams,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            generator: Generator::One { margin: DATASET_ONE_MARGIN },
            d: 2,
            sizes: vec![1000, 10_000, 100_000],
            n_clusters: vec![300],
            test_ratio: 3.0,
            pipelines: vec![PipelineKind::Full, PipelineKind::Gsh, PipelineKind::GchSerial],
            classifier: ClassifierSpec::default(),
            params: PipelineParams::default(),
            repetitions: 5,
            seed: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.n_clusters.is_empty() || self.pipelines.is_empty() {
            return Err(Error::invalid("sweep ladders must be non-empty"));
        }
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions must be >= 1"));
        }
        if !(self.test_ratio > 0.0) {
            return Err(Error::invalid("test_ratio must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub pipeline: String,
    pub n_train: usize,
    pub n_test: usize,
    pub n_clusters: usize,
    pub kernel: String,
    pub seed: u64,
    pub repetitions: usize,
    pub cluster_ms: f64,
    pub knit_ms: f64,
    pub shed_ms: f64,
    pub club_ms: f64,
    pub train_ms: f64,
    pub route_ms: f64,
    pub predict_ms: f64,
    pub total_ms: f64,
    pub accuracy: f64,
    pub partitions: usize,
    pub reduced_size: usize,
    pub error: String,
}

impl BenchRow {
    fn timing_fields(&mut self) -> [&mut f64; 8] {
        [
            &mut self.cluster_ms,
            &mut self.knit_ms,
            &mut self.shed_ms,
            &mut self.club_ms,
            &mut self.train_ms,
            &mut self.route_ms,
            &mut self.predict_ms,
            &mut self.total_ms,
        ]
    }

    /// Time spent before classifier training.
    pub fn heuristic_ms(&self) -> f64 {
        self.cluster_ms + self.knit_ms + self.shed_ms + self.club_ms
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs one pipeline once on a prepared train/test split.
pub fn run_pipeline(
    kind: PipelineKind,
    train: &Dataset,
    test: &Dataset,
    params: &PipelineParams,
    spec: &ClassifierSpec,
) -> Result<BenchRow> {
    let mut row = BenchRow {
        pipeline: kind.label(),
        n_train: train.n(),
        n_test: test.n(),
        n_clusters: params.n_clusters,
        kernel: spec.kernel.name().into(),
        seed: params.seed,
        repetitions: 1,
        ..Default::default()
    };
    let total = Instant::now();
    match kind {
        PipelineKind::Full => {
            let t = Instant::now();
            let model = train_full(train, spec)?;
            row.train_ms = ms(t);
            row.total_ms = ms(total);
            let t = Instant::now();
            row.accuracy = accuracy(&model, test.points());
            row.predict_ms = ms(t);
            row.partitions = 1;
            row.reduced_size = train.n();
        }
        PipelineKind::Gsh => {
            let (model, report) = train_gsh(train, params, spec)?;
            row.total_ms = ms(total);
            let tm = &report.timings;
            (row.cluster_ms, row.knit_ms, row.shed_ms, row.train_ms) = (tm.cluster_ms, tm.knit_ms, tm.shed_ms, tm.train_ms);
            let t = Instant::now();
            row.accuracy = accuracy(&model, test.points());
            row.predict_ms = ms(t);
            row.partitions = 1;
            row.reduced_size = report.n_reduced;
        }
        PipelineKind::GchSerial | PipelineKind::GchDistributed(_) => {
            let (out, train_ms) = match kind {
                PipelineKind::GchDistributed(workers) => {
                    let (red, parts) = crate::pipeline::partition(train, params)?;
                    let dir = tempdir_in_target()?;
                    let t = Instant::now();
                    distnet::run_local(train, &parts, spec, workers, &dir, ServeOptions::default())?;
                    let train_ms = ms(t);
                    let ensemble = distnet::load_ensemble(&dir, &parts)?;
                    let _ = std::fs::remove_dir_all(&dir);
                    let router = crate::predict::build_router(&parts, &red.clustering, params.mode)?;
                    let mut report = red.report;
                    report.timings.train_ms = train_ms;
                    (
                        crate::pipeline::GchOutcome {
                            ensemble,
                            router,
                            partitions: parts,
                            clustering: red.clustering,
                            report,
                        },
                        train_ms,
                    )
                }
                _ => {
                    let out = train_gch_serial(train, params, spec)?;
                    let tm = out.report.timings.train_ms;
                    (out, tm)
                }
            };
            row.total_ms = ms(total);
            let tm = &out.report.timings;
            (row.cluster_ms, row.knit_ms, row.shed_ms, row.club_ms) = (tm.cluster_ms, tm.knit_ms, tm.shed_ms, tm.club_ms);
            row.train_ms = train_ms;
            let (_, acc) = ensemble_predict(&out.ensemble, &out.router, test)?;
            row.accuracy = acc.weighted_accuracy;
            row.route_ms = acc.routing_ms;
            row.predict_ms = acc.predict_ms;
            row.partitions = out.partitions.len();
            row.reduced_size = out.report.n_reduced;
        }
    }
    Ok(row)
}

fn tempdir_in_target() -> Result<std::path::PathBuf> {
    let base = std::env::temp_dir();
    for i in 0..1000u32 {
        let p = base.join(format!("graphclub-bench-{}-{}", std::process::id(), i));
        if std::fs::create_dir(&p).is_ok() {
            return Ok(p);
        }
    }
    Err(Error::invalid("could not create a scratch directory"))
}

/// Every ladder point and pipeline, run `repetitions` times; timing fields
/// are medians. A failing pipeline yields a row with `error` set.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<BenchRow>> {
    spec.validate()?;
    let mut rows = Vec::new();
    for &n in &spec.sizes {
        let n_test = ((n as f64) * spec.test_ratio).round().max(1.0) as usize;
        let all = spec.generator.generate(n + n_test, spec.d, spec.seed)?;
        let frac = n as f64 / (n + n_test) as f64;
        let (train, test) = split(&all, SplitSpec { train_fraction: frac, seed: spec.seed })?;
        for &n_c in &spec.n_clusters {
            let params = PipelineParams {
                n_clusters: n_c,
                seed: spec.seed,
                ..spec.params.clone()
            };
            for &kind in &spec.pipelines {
                let mut runs = Vec::new();
                let mut error = String::new();
                for _ in 0..spec.repetitions {
                    match run_pipeline(kind, &train, &test, &params, &spec.classifier) {
                        Ok(r) => runs.push(r),
                        Err(e) => {
                            error = e.to_string();
                            break;
                        }
                    }
                }
                let mut row = match runs.first() {
                    Some(r) => r.clone(),
                    None => BenchRow {
                        pipeline: kind.label(),
                        n_train: train.n(),
                        n_test: test.n(),
                        n_clusters: n_c,
                        kernel: spec.classifier.kernel.name().into(),
                        seed: spec.seed,
                        ..Default::default()
                    },
                };
                row.repetitions = runs.len();
                row.error = error;
                if !runs.is_empty() {
                    for f in 0..8 {
                        let vals: Vec<f64> = runs.iter().map(|r| *r.clone().timing_fields()[f]).collect();
                        *row.timing_fields()[f] = median(vals);
                    }
                }
                log::info!("{} n={} n_c={}: {:.1} ms", row.pipeline, row.n_train, n_c, row.total_ms);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

pub fn write_csv(rows: &[BenchRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<BenchRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: usize,
    pub failed: usize,
    pub median_total_ms_by_pipeline: Vec<(String, f64)>,
}

pub fn summarize(rows: &[BenchRow]) -> Summary {
    let mut labels: Vec<String> = rows.iter().map(|r| r.pipeline.clone()).collect();
    labels.sort();
    labels.dedup();
    Summary {
        rows: rows.len(),
        failed: rows.iter().filter(|r| !r.error.is_empty()).count(),
        median_total_ms_by_pipeline: labels
            .into_iter()
            .map(|l| {
                let v: Vec<f64> = rows.iter().filter(|r| r.pipeline == l && r.error.is_empty()).map(|r| r.total_ms).collect();
                let m = if v.is_empty() { f64::NAN } else { median(v) };
                (l, m)
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRow {
    pub d: usize,
    pub n_points: usize,
    pub workers: usize,
    /// Data-carrying messages sent under each protocol.
    pub p1_messages: u64,
    pub p2_messages: u64,
    pub p1_ms: f64,
    pub p2_ms: f64,
    pub connect_ms: f64,
}

/// Receives one partition and answers with DONE_TRAINING.
fn sink(endpoint: String) -> Result<()> {
    let mut stream = TcpStream::connect(&endpoint)?;
    stream.set_nodelay(true)?;
    let local = stream.local_addr()?;
    distnet::worker::register(&mut stream, &format!("{local}:{}", std::process::id()))?;
    let mut reader = BufReader::with_capacity(1 << 16, stream.try_clone()?);
    loop {
        let m = wire::expect_message(&mut reader)?;
        match m.tag {
            EventTag::TermTrain => return Ok(()),
            EventTag::DataBegin => {
                let begin = DataBegin::parse(&m)?;
                let d = begin.d as usize;
                let mut entries = Vec::with_capacity(d + 1);
                let mut got = 0u64;
                loop {
                    let m = wire::expect_message(&mut reader)?;
                    match m.tag {
                        EventTag::DataEnd => break,
                        EventTag::DataPoint => {
                            wire::decode_point_p1(&m, d)?;
                            got += 1;
                        }
                        EventTag::DataEntry => {
                            entries.push(wire::decode_entry(&m)?);
                            if entries.len() == d + 1 {
                                wire::decode_point_p2(&entries)?;
                                entries.clear();
                                got += 1;
                            }
                        }
                        other => return Err(Error::Protocol(format!("unexpected {other:?}"))),
                    }
                }
                if got != begin.count {
                    return Err(Error::Protocol("point count mismatch".into()));
                }
                wire::done_training(begin.partition, wire::DONE_OK).write_to(&mut stream)?;
            }
            other => return Err(Error::Protocol(format!("unexpected {other:?}"))),
        }
    }
}

/// Sends `n_points` random points split across `workers` sinks, once per
/// protocol, writing every message with its own unbuffered write.
pub fn run_protocol_bench(d: usize, n_points: usize, workers: usize) -> Result<ProtocolRow> {
    if d == 0 {
        return Err(Error::invalid("empty features"));
    }
    if workers == 0 || n_points == 0 {
        return Err(Error::invalid("need at least one worker and one point"));
    }
    let points: Vec<LabeledPoint> = gen_dataset_one(n_points.max(2), d.max(2), 0.0, 7)?
        .into_points()
        .into_iter()
        .take(n_points)
        .map(|p| LabeledPoint::new(p.features.into_iter().cycle().take(d).collect(), p.target))
        .collect();
    let mut row = ProtocolRow {
        d,
        n_points,
        workers,
        p1_messages: 0,
        p2_messages: 0,
        p1_ms: 0.0,
        p2_ms: 0.0,
        connect_ms: 0.0,
    };
    for protocol in [1u8, 2] {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let endpoint = listener.local_addr()?.to_string();
        let sinks: Vec<_> = (0..workers)
            .map(|_| {
                let e = endpoint.clone();
                thread::spawn(move || sink(e))
            })
            .collect();
        let session = master::connect_phase(&listener, workers, Duration::from_secs(30))?;
        row.connect_ms = row.connect_ms.max(session.connect_ms);
        let mut conns = session.conns;
        let chunk = n_points.div_ceil(workers);
        let start = Instant::now();
        let mut messages = 0u64;
        for (w, stream) in conns.iter_mut().enumerate() {
            let part: &[LabeledPoint] = points.get(w * chunk..((w + 1) * chunk).min(n_points)).unwrap_or(&[]);
            let begin = DataBegin { partition: w as u32, count: part.len() as u64, d: d as u32, protocol };
            begin.to_message().write_to(stream)?;
            for p in part {
                if protocol == 1 {
                    wire::encode_point_p1(p)?.write_to(stream)?;
                    messages += 1;
                } else {
                    for m in wire::encode_point_p2(p)? {
                        m.write_to(stream)?;
                        messages += 1;
                    }
                }
            }
            Message::empty(EventTag::DataEnd).write_to(stream)?;
        }
        for stream in conns.iter_mut() {
            let m = wire::expect_message(stream)?;
            if m.tag != EventTag::DoneTraining {
                return Err(Error::Protocol(format!("expected DoneTraining, got {:?}", m.tag)));
            }
        }
        let elapsed = ms(start);
        for stream in conns.iter_mut() {
            Message::empty(EventTag::TermTrain).write_to(stream)?;
            stream.flush()?;
        }
        for s in sinks {
            s.join().map_err(|_| Error::Protocol("sink panicked".into()))??;
        }
        if protocol == 1 {
            (row.p1_messages, row.p1_ms) = (messages, elapsed);
        } else {
            (row.p2_messages, row.p2_ms) = (messages, elapsed);
        }
    }
    Ok(row)
}
