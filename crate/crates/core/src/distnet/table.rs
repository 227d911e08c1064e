//! Fixed-capacity open-addressing table of registered workers.

use crate::error::{Error, Result};

pub const TABLE_SLOTS: usize = 128;

/// FNV-1a 64-bit hash of a worker identity (`host:port:pid`).
pub fn worker_key(identity: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in identity.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkerState {
    Connected,
    Busy,
    Disconnected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerEntry {
    pub key: u64,
    pub identity: String,
    /// Index of the worker's connection in the master's connection list.
    pub conn: usize,
    pub state: WorkerState,
}

#[derive(Debug, Clone)]
pub struct WorkerTable {
    slots: Vec<Option<WorkerEntry>>,
    len: usize,
}

impl Default for WorkerTable {
    fn default() -> Self {
        Self::new()
    }
}

impl WorkerTable {
    pub fn new() -> Self {
        Self {
            slots: vec![None; TABLE_SLOTS],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        TABLE_SLOTS
    }

    fn probe(&self, key: u64) -> impl Iterator<Item = usize> {
        let start = (key % TABLE_SLOTS as u64) as usize;
        (0..TABLE_SLOTS).map(move |i| (start + i) % TABLE_SLOTS)
    }

    fn slot_of(&self, key: u64) -> Option<usize> {
        for s in self.probe(key) {
            match &self.slots[s] {
                Some(e) if e.key == key => return Some(s),
                Some(_) => {}
                None => return None,
            }
        }
        None
    }

    /// Inserts a new worker. Duplicate keys and a full table are errors.
    pub fn insert(&mut self, identity: &str, conn: usize) -> Result<u64> {
        let key = worker_key(identity);
        if self.slot_of(key).is_some() {
            return Err(Error::Protocol(format!("duplicate worker `{identity}`")));
        }
        let slot = self
            .probe(key)
            .find(|&s| self.slots[s].is_none())
            .ok_or_else(|| Error::invalid("worker table is full"))?;
        self.slots[slot] = Some(WorkerEntry {
            key,
            identity: identity.to_string(),
            conn,
            state: WorkerState::Connected,
        });
        self.len += 1;
        Ok(key)
    }

    pub fn get(&self, key: u64) -> Option<&WorkerEntry> {
        self.slot_of(key).and_then(|s| self.slots[s].as_ref())
    }

    pub fn get_mut(&mut self, key: u64) -> Option<&mut WorkerEntry> {
        self.slot_of(key).and_then(move |s| self.slots[s].as_mut())
    }

    pub fn contains(&self, key: u64) -> bool {
        self.slot_of(key).is_some()
    }

    pub fn entries(&self) -> impl Iterator<Item = &WorkerEntry> {
        self.slots.iter().flatten()
    }

    /// Approximate memory held by the table.
    pub fn footprint_bytes(&self) -> usize {
        std::mem::size_of::<Self>()
            + self.slots.capacity() * std::mem::size_of::<Option<WorkerEntry>>()
            + self.entries().map(|e| e.identity.capacity()).sum::<usize>()
    }
}
