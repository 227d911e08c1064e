//! Master process: connection phase, then a single event loop that hands
//! out partitions on request and broadcasts TERM_TRAIN once all are trained.

use std::collections::{HashMap, VecDeque};
use std::io::{BufWriter, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::queue::RequestQueue;
use super::table::{worker_key, WorkerState, WorkerTable};
use super::wire::{self, DataBegin, EventTag, Message};
use crate::clubbing::PartitionSet;
use crate::data::Dataset;
use crate::error::{Error, Result};

/// A registered worker connection set, ready to serve.
#[derive(Debug)]
pub struct Session {
    pub table: WorkerTable,
    pub conns: Vec<TcpStream>,
    pub connect_ms: f64,
}

/// Accepts workers until `expected` are registered or `timeout` elapses.
/// A second CONNECT_REQ with an already registered identity is NACKed.
pub fn connect_phase(listener: &TcpListener, expected: usize, timeout: Duration) -> Result<Session> {
    let start = Instant::now();
    let mut table = WorkerTable::new();
    if expected > table.capacity() {
        return Err(Error::invalid(format!(
            "{expected} workers exceed the table capacity {}",
            table.capacity()
        )));
    }
    let mut conns = Vec::new();
    listener.set_nonblocking(true)?;
    while table.len() < expected {
        let left = timeout.saturating_sub(start.elapsed());
        if left.is_zero() {
            listener.set_nonblocking(false)?;
            return Err(Error::Timeout(format!(
                "{} of {expected} workers registered; {} missing",
                table.len(),
                expected - table.len()
            )));
        }
        let mut stream = match listener.accept() {
            Ok((s, _)) => s,
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(1));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        stream.set_nonblocking(false)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(left.max(Duration::from_millis(10))))?;
        let identity = match wire::read_message(&mut stream) {
            Ok(Some(m)) if m.tag == EventTag::ConnectReq => wire::parse_connect_req(&m)?,
            Ok(_) | Err(_) => {
                log::warn!("dropping a connection that did not start with CONNECT_REQ");
                continue;
            }
        };
        stream.set_read_timeout(None)?;
        match table.insert(&identity, conns.len()) {
            Ok(key) => {
                wire::connect_ack(wire::ACK_OK, key).write_to(&mut stream)?;
                log::info!("worker {identity} registered");
                conns.push(stream);
            }
            Err(_) => {
                log::warn!("rejecting duplicate worker {identity}");
                let _ = wire::connect_ack(wire::ACK_REJECTED, worker_key(&identity)).write_to(&mut stream);
            }
        }
    }
    listener.set_nonblocking(false)?;
    Ok(Session {
        table,
        conns,
        connect_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    /// Send the partition at this index to the worker.
    Send { worker: u64, partition: usize },
    Terminate,
}

/// Bookkeeping of the serve loop, free of I/O so it can be driven by a
/// scripted simulation.
#[derive(Debug, Clone)]
pub struct Dispatcher {
    pending: VecDeque<usize>,
    inflight: HashMap<u64, usize>,
    queue: RequestQueue,
    done: Vec<bool>,
    acks: usize,
    pub sends: Vec<(usize, u64)>,
    pub resent: Vec<usize>,
    pub failures: Vec<usize>,
}

impl Dispatcher {
    pub fn new(n_partitions: usize) -> Self {
        Self {
            pending: (0..n_partitions).collect(),
            inflight: HashMap::new(),
            queue: RequestQueue::new(),
            done: vec![false; n_partitions],
            acks: 0,
            sends: Vec::new(),
            resent: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn acks(&self) -> usize {
        self.acks
    }

    pub fn finished(&self) -> bool {
        self.acks == self.done.len()
    }

    fn dispatch(&mut self) -> Vec<Action> {
        let mut out = Vec::new();
        while !self.pending.is_empty() && !self.queue.is_empty() {
            let (worker, _) = self.queue.pop().unwrap();
            let partition = self.pending.pop_front().unwrap();
            self.inflight.insert(worker, partition);
            self.sends.push((partition, worker));
            out.push(Action::Send { worker, partition });
        }
        out
    }

    pub fn request(&mut self, worker: u64, timestamp: u64) -> Vec<Action> {
        self.queue.push(worker, timestamp);
        self.dispatch()
    }

    /// Handles DONE_TRAINING for the partition at index `partition`.
    pub fn done(&mut self, worker: u64, partition: usize, ok: bool) -> Result<Vec<Action>> {
        if self.inflight.get(&worker) != Some(&partition) {
            return Err(Error::Protocol(format!(
                "unexpected DONE_TRAINING for partition index {partition} from worker {worker:#x}"
            )));
        }
        self.inflight.remove(&worker);
        self.done[partition] = true;
        self.acks += 1;
        if !ok {
            self.failures.push(partition);
        }
        Ok(if self.finished() { vec![Action::Terminate] } else { Vec::new() })
    }

    /// Re-queues the worker's in-flight partition, if any.
    pub fn disconnect(&mut self, worker: u64) -> Vec<Action> {
        self.queue.remove_worker(worker);
        if let Some(p) = self.inflight.remove(&worker) {
            log::warn!("worker {worker:#x} lost partition index {p}; re-queueing");
            self.resent.push(p);
            self.pending.push_front(p);
        }
        self.dispatch()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServeOptions {
    /// 1 = whole-point messages, 2 = one value per message.
    pub protocol: u8,
    /// Longest wait for any worker event.
    pub idle_timeout: Duration,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            protocol: 1,
            idle_timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AckRecord {
    pub partition: usize,
    pub worker: u64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServeLog {
    /// `(partition id, worker key)` per DATA_BEGIN, in send order.
    pub sends: Vec<(usize, u64)>,
    pub acks: Vec<AckRecord>,
    pub resent: Vec<usize>,
    pub terminated: Vec<u64>,
    pub serve_ms: f64,
}

impl ServeLog {
    pub fn partitions_per_worker(&self) -> HashMap<u64, usize> {
        let mut m = HashMap::new();
        for a in &self.acks {
            *m.entry(a.worker).or_insert(0) += 1;
        }
        m
    }
}

enum Event {
    Msg(u64, Message, u64),
    Closed(u64),
}

/// Writes one partition as DATA_BEGIN, its points, DATA_END.
pub fn send_partition(
    stream: &mut TcpStream,
    id: u32,
    ds: &Dataset,
    point_ids: &[usize],
    protocol: u8,
) -> Result<()> {
    let mut w = BufWriter::with_capacity(1 << 16, stream);
    let begin = DataBegin {
        partition: id,
        count: point_ids.len() as u64,
        d: ds.d() as u32,
        protocol,
    };
    begin.to_message().write_to(&mut w)?;
    for &i in point_ids {
        let p = ds.point(i);
        match protocol {
            1 => wire::encode_point_p1(p)?.write_to(&mut w)?,
            2 => {
                for m in wire::encode_point_p2(p)? {
                    m.write_to(&mut w)?;
                }
            }
            other => return Err(Error::invalid(format!("unknown protocol {other}"))),
        }
    }
    Message::empty(EventTag::DataEnd).write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Serves `parts` to the workers of `session` until every partition is
/// acknowledged, then broadcasts TERM_TRAIN.
pub fn master_serve(ds: &Dataset, parts: &PartitionSet, session: Session, opts: ServeOptions) -> Result<ServeLog> {
    if parts.is_empty() {
        return Err(Error::invalid("no partitions to serve"));
    }
    let start = Instant::now();
    let Session { mut table, mut conns, .. } = session;
    let keys: Vec<u64> = {
        let mut k = vec![0u64; conns.len()];
        for e in table.entries() {
            k[e.conn] = e.key;
        }
        k
    };
    let (tx, rx) = mpsc::channel();
    let mut readers = Vec::new();
    for (c, stream) in conns.iter().enumerate() {
        let mut rd = stream.try_clone()?;
        let tx = tx.clone();
        let key = keys[c];
        readers.push(thread::spawn(move || loop {
            match wire::read_message(&mut rd) {
                Ok(Some(m)) => {
                    let ts = start.elapsed().as_nanos() as u64;
                    if tx.send(Event::Msg(key, m, ts)).is_err() {
                        return;
                    }
                }
                Ok(None) | Err(_) => {
                    let _ = tx.send(Event::Closed(key));
                    return;
                }
            }
        }));
    }
    drop(tx);

    let index_of: HashMap<usize, usize> = parts.partitions.iter().enumerate().map(|(i, p)| (p.id, i)).collect();
    let mut disp = Dispatcher::new(parts.len());
    let mut acks = Vec::new();
    let mut terminated = Vec::new();

    let result = (|| -> Result<()> {
        let mut actions: VecDeque<Action> = VecDeque::new();
        while !disp.finished() {
            let ev = match rx.recv_timeout(opts.idle_timeout) {
                Ok(ev) => ev,
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    return Err(Error::Timeout(format!(
                        "no worker activity for {:?}; {} of {} partitions acknowledged",
                        opts.idle_timeout,
                        disp.acks(),
                        parts.len()
                    )))
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    return Err(Error::Protocol(format!(
                        "all workers disconnected; {} of {} partitions acknowledged",
                        disp.acks(),
                        parts.len()
                    )))
                }
            };
            match ev {
                Event::Msg(key, m, ts) => match m.tag {
                    EventTag::DataRequest => actions.extend(disp.request(key, ts)),
                    EventTag::DoneTraining => {
                        if !table.contains(key) {
                            return Err(Error::Protocol(format!("ack from unknown worker {key:#x}")));
                        }
                        let (id, status) = wire::parse_done(&m)?;
                        let idx = *index_of
                            .get(&(id as usize))
                            .ok_or_else(|| Error::Protocol(format!("ack for unknown partition {id}")))?;
                        let ok = status == wire::DONE_OK;
                        if !ok {
                            log::error!("worker {key:#x} failed to train partition {id}");
                        }
                        acks.push(AckRecord { partition: id as usize, worker: key, ok });
                        if let Some(e) = table.get_mut(key) {
                            e.state = WorkerState::Connected;
                        }
                        actions.extend(disp.done(key, idx, ok)?);
                    }
                    other => return Err(Error::Protocol(format!("unexpected {other:?} from worker {key:#x}"))),
                },
                Event::Closed(key) => {
                    if let Some(e) = table.get_mut(key) {
                        e.state = WorkerState::Disconnected;
                    }
                    actions.extend(disp.disconnect(key));
                }
            }
            while let Some(a) = actions.pop_front() {
                match a {
                    Action::Send { worker, partition } => {
                        let entry = table.get_mut(worker).expect("dispatched to a registered worker");
                        entry.state = WorkerState::Busy;
                        let conn = entry.conn;
                        let p = &parts.partitions[partition];
                        if let Err(e) = send_partition(&mut conns[conn], p.id as u32, ds, &p.point_ids, opts.protocol) {
                            log::warn!("sending partition {} failed: {e}", p.id);
                            if let Some(e) = table.get_mut(worker) {
                                e.state = WorkerState::Disconnected;
                            }
                            actions.extend(disp.disconnect(worker));
                        }
                    }
                    Action::Terminate => {}
                }
            }
        }
        Ok(())
    })();

    // Broadcast TERM_TRAIN to every live worker, also on failure so that
    // workers do not wait forever.
    let term = Message::empty(EventTag::TermTrain).encode();
    for e in table.entries() {
        if e.state != WorkerState::Disconnected && conns[e.conn].write_all(&term).is_ok() {
            terminated.push(e.key);
        }
    }
    for c in &conns {
        let _ = c.shutdown(Shutdown::Write);
    }
    if result.is_err() {
        for c in &conns {
            let _ = c.shutdown(Shutdown::Both);
        }
    }
    drop(rx);
    for r in readers {
        let _ = r.join();
    }
    result?;
    Ok(ServeLog {
        sends: disp.sends.iter().map(|&(i, w)| (parts.partitions[i].id, w)).collect(),
        acks,
        resent: disp.resent.iter().map(|&i| parts.partitions[i].id).collect(),
        terminated,
        serve_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
