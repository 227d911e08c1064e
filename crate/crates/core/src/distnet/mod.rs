//! Master/worker distribution of partitions over TCP.

pub mod master;
pub mod queue;
pub mod table;
pub mod wire;
pub mod worker;

pub use master::{connect_phase, master_serve, Dispatcher, ServeLog, ServeOptions, Session};
pub use queue::RequestQueue;
pub use table::{worker_key, WorkerTable};
pub use wire::{encode_point_p1, encode_point_p2, EventTag, FrameDecoder, Message};
pub use worker::{load_ensemble, worker_loop, WorkerReport};

use std::net::TcpListener;
use std::path::Path;
use std::thread;
use std::time::Duration;

use crate::clubbing::PartitionSet;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::svm::ClassifierSpec;

/// Runs a master and `workers` worker threads over loopback, writing
/// models into `out_dir`.
pub fn run_local(
    ds: &Dataset,
    parts: &PartitionSet,
    spec: &ClassifierSpec,
    workers: usize,
    out_dir: &Path,
    opts: ServeOptions,
) -> Result<(ServeLog, Vec<WorkerReport>)> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let endpoint = listener.local_addr()?.to_string();
    let handles: Vec<_> = (0..workers)
        .map(|_| {
            let endpoint = endpoint.clone();
            let spec = *spec;
            let dir = out_dir.to_path_buf();
            thread::spawn(move || worker_loop(&endpoint, &spec, &dir))
        })
        .collect();
    let connect_timeout = opts.idle_timeout.max(Duration::from_secs(1));
    let served = connect_phase(&listener, workers, connect_timeout).and_then(|s| master_serve(ds, parts, s, opts));
    drop(listener);
    let mut reports = Vec::new();
    for h in handles {
        match h.join() {
            Ok(Ok(r)) => reports.push(r),
            Ok(Err(e)) if served.is_ok() => return Err(e),
            Ok(Err(_)) => {}
            Err(_) => return Err(Error::Protocol("worker thread panicked".into())),
        }
    }
    Ok((served?, reports))
}
