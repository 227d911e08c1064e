//! Worker process: request a partition, train it, report, repeat until
//! TERM_TRAIN.

use std::io::Write;
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::wire::{self, DataBegin, EventTag, Message};
use crate::clubbing::PartitionSet;
use crate::data::LabeledPoint;
use crate::error::{Error, Result};
use crate::pipeline::{train_partition, EnsembleModel};
use crate::svm::{Classifier, ClassifierSpec};

pub const ENDPOINT_ENV: &str = "GRAPHCLUB_ENDPOINT";

/// `GRAPHCLUB_ENDPOINT` if set, else `default`.
pub fn resolve_endpoint(default: &str) -> String {
    std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| default.to_string())
}

pub fn model_path(dir: &Path, partition: u32) -> PathBuf {
    dir.join(format!("partition_{partition}.model"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerReport {
    pub identity: String,
    pub key: u64,
    pub partitions: Vec<u32>,
    pub models: Vec<PathBuf>,
    pub train_ms: f64,
}

/// Opens a connection and registers under `host:port:pid`.
pub fn connect(endpoint: &str) -> Result<(TcpStream, String, u64)> {
    let mut stream = TcpStream::connect(endpoint)?;
    stream.set_nodelay(true)?;
    let local = stream.local_addr()?;
    let identity = format!("{}:{}:{}", local.ip(), local.port(), std::process::id());
    register(&mut stream, &identity).map(|key| (stream, identity, key))
}

/// Sends CONNECT_REQ and waits for the ACK.
pub fn register(stream: &mut TcpStream, identity: &str) -> Result<u64> {
    wire::connect_req(identity).write_to(stream)?;
    let ack = wire::expect_message(stream)?;
    if ack.tag != EventTag::ConnectAck {
        return Err(Error::Protocol(format!("expected ConnectAck, got {:?}", ack.tag)));
    }
    match wire::parse_connect_ack(&ack)? {
        (wire::ACK_OK, key) => Ok(key),
        _ => Err(Error::Protocol(format!("master rejected worker {identity}"))),
    }
}

/// Reads the points that follow a DATA_BEGIN, through DATA_END.
pub fn receive_partition(stream: &mut TcpStream, begin: &DataBegin) -> Result<Vec<LabeledPoint>> {
    let d = begin.d as usize;
    let mut points = Vec::with_capacity(begin.count as usize);
    let mut entries = Vec::with_capacity(d + 1);
    loop {
        let m = wire::expect_message(stream)?;
        match (m.tag, begin.protocol) {
            (EventTag::DataEnd, _) => break,
            (EventTag::DataPoint, 1) => points.push(wire::decode_point_p1(&m, d)?),
            (EventTag::DataEntry, 2) => {
                entries.push(wire::decode_entry(&m)?);
                if entries.len() == d + 1 {
                    points.push(wire::decode_point_p2(&entries)?);
                    entries.clear();
                }
            }
            (tag, _) => return Err(Error::Protocol(format!("unexpected {tag:?} inside a partition"))),
        }
    }
    if !entries.is_empty() || points.len() as u64 != begin.count {
        return Err(Error::Protocol(format!(
            "partition {} announced {} points, received {}",
            begin.partition,
            begin.count,
            points.len()
        )));
    }
    Ok(points)
}

/// Connects to the master and trains partitions until TERM_TRAIN. Models
/// are written to `out_dir` as `partition_<id>.model`.
pub fn worker_loop(endpoint: &str, spec: &ClassifierSpec, out_dir: &Path) -> Result<WorkerReport> {
    let (mut stream, identity, key) = connect(endpoint)?;
    run_registered(&mut stream, identity, key, spec, out_dir)
}

pub fn run_registered(
    stream: &mut TcpStream,
    identity: String,
    key: u64,
    spec: &ClassifierSpec,
    out_dir: &Path,
) -> Result<WorkerReport> {
    std::fs::create_dir_all(out_dir)?;
    let mut report = WorkerReport {
        identity,
        key,
        partitions: Vec::new(),
        models: Vec::new(),
        train_ms: 0.0,
    };
    loop {
        Message::empty(EventTag::DataRequest).write_to(stream)?;
        let m = wire::expect_message(stream)?;
        match m.tag {
            EventTag::TermTrain => break,
            EventTag::DataBegin => {
                let begin = DataBegin::parse(&m)?;
                let points = receive_partition(stream, &begin)?;
                let t = Instant::now();
                let status = match train_partition(&points, spec) {
                    Ok(model) => {
                        let path = model_path(out_dir, begin.partition);
                        model.save(&path)?;
                        report.models.push(path);
                        wire::DONE_OK
                    }
                    Err(e) => {
                        log::error!("training partition {} failed: {e}", begin.partition);
                        wire::DONE_FAILED
                    }
                };
                report.train_ms += t.elapsed().as_secs_f64() * 1e3;
                report.partitions.push(begin.partition);
                wire::done_training(begin.partition, status).write_to(stream)?;
                stream.flush()?;
            }
            other => return Err(Error::Protocol(format!("unexpected {other:?} while idle"))),
        }
    }
    Ok(report)
}

/// Assembles an ensemble from model files written by workers.
pub fn load_ensemble(dir: &Path, parts: &PartitionSet) -> Result<EnsembleModel> {
    let mut models = Vec::with_capacity(parts.len());
    for p in &parts.partitions {
        models.push(Classifier::load(model_path(dir, p.id as u32))?);
    }
    Ok(EnsembleModel {
        partition_ids: parts.partitions.iter().map(|p| p.id).collect(),
        models,
    })
}
