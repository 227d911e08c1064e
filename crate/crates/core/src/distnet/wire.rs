//! Frame format: 1-byte tag, 4-byte little-endian payload length, payload.

use std::io::{ErrorKind, Read, Write};

use crate::data::LabeledPoint;
use crate::error::{Error, Result};

pub const HEADER_LEN: usize = 5;
/// Largest payload a decoder accepts.
pub const MAX_PAYLOAD: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum EventTag {
    ConnectReq = 1,
    ConnectAck = 2,
    DataRequest = 3,
    DataBegin = 4,
    DataPoint = 5,
    DataEntry = 6,
    DataEnd = 7,
    DoneTraining = 8,
    TermTrain = 9,
}

impl TryFrom<u8> for EventTag {
    type Error = Error;

    fn try_from(b: u8) -> Result<Self> {
        Ok(match b {
            1 => EventTag::ConnectReq,
            2 => EventTag::ConnectAck,
            3 => EventTag::DataRequest,
            4 => EventTag::DataBegin,
            5 => EventTag::DataPoint,
            6 => EventTag::DataEntry,
            7 => EventTag::DataEnd,
            8 => EventTag::DoneTraining,
            9 => EventTag::TermTrain,
            _ => return Err(Error::Protocol(format!("unknown tag {b}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub tag: EventTag,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(tag: EventTag, payload: Vec<u8>) -> Self {
        Self { tag, payload }
    }

    pub fn empty(tag: EventTag) -> Self {
        Self::new(tag, Vec::new())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.tag as u8);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
    }

    /// Writes the frame with a single `write_all`.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.encode())?;
        Ok(())
    }

    fn expect_len(&self, n: usize) -> Result<()> {
        if self.payload.len() == n {
            Ok(())
        } else {
            Err(Error::Protocol(format!(
                "{:?} payload has {} bytes, expected {n}",
                self.tag,
                self.payload.len()
            )))
        }
    }
}

fn parse_header(h: &[u8]) -> Result<(EventTag, usize)> {
    let tag = EventTag::try_from(h[0])?;
    let len = u32::from_le_bytes([h[1], h[2], h[3], h[4]]) as usize;
    if len > MAX_PAYLOAD {
        return Err(Error::Protocol(format!("payload length {len} exceeds {MAX_PAYLOAD}")));
    }
    Ok((tag, len))
}

/// Decodes one frame from the front of `bytes`, returning it with the
/// number of bytes consumed, or `None` if the frame is incomplete.
pub fn decode(bytes: &[u8]) -> Result<Option<(Message, usize)>> {
    if bytes.len() < HEADER_LEN {
        return Ok(None);
    }
    let (tag, len) = parse_header(&bytes[..HEADER_LEN])?;
    let end = HEADER_LEN + len;
    if bytes.len() < end {
        return Ok(None);
    }
    Ok(Some((Message::new(tag, bytes[HEADER_LEN..end].to_vec()), end)))
}

/// Incremental decoder for a byte stream delivered in arbitrary chunks.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn next_message(&mut self) -> Result<Option<Message>> {
        match decode(&self.buf)? {
            Some((m, used)) => {
                self.buf.drain(..used);
                Ok(Some(m))
            }
            None => Ok(None),
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

/// Reads one frame. Returns `None` on a clean end of stream between frames.
pub fn read_message(r: &mut impl Read) -> Result<Option<Message>> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::Protocol("stream ended inside a frame header".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let (tag, len) = parse_header(&header)?;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            Error::Protocol("stream ended inside a frame payload".into())
        } else {
            e.into()
        }
    })?;
    Ok(Some(Message::new(tag, payload)))
}

/// Like [`read_message`] but treats end of stream as a protocol error.
pub fn expect_message(r: &mut impl Read) -> Result<Message> {
    read_message(r)?.ok_or_else(|| Error::Protocol("connection closed".into()))
}

fn target_from_f64(v: f64) -> Result<i8> {
    if v == 1.0 {
        Ok(1)
    } else if v == -1.0 {
        Ok(-1)
    } else {
        Err(Error::Protocol(format!("bad target value {v}")))
    }
}

fn check_features(p: &LabeledPoint) -> Result<()> {
    if p.features.is_empty() {
        Err(Error::invalid("empty features"))
    } else {
        Ok(())
    }
}

/// Protocol 1: a whole point per DATA_POINT message, features then target.
pub fn encode_point_p1(p: &LabeledPoint) -> Result<Message> {
    check_features(p)?;
    let mut payload = Vec::with_capacity(8 * (p.features.len() + 1));
    for v in &p.features {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    payload.extend_from_slice(&(p.target as f64).to_le_bytes());
    Ok(Message::new(EventTag::DataPoint, payload))
}

pub fn decode_point_p1(m: &Message, d: usize) -> Result<LabeledPoint> {
    if m.tag != EventTag::DataPoint {
        return Err(Error::Protocol(format!("expected DataPoint, got {:?}", m.tag)));
    }
    m.expect_len(8 * (d + 1))?;
    let vals: Vec<f64> = m
        .payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(LabeledPoint::new(vals[..d].to_vec(), target_from_f64(vals[d])?))
}

/// Protocol 2: one DATA_ENTRY message per value, features then target.
pub fn encode_point_p2(p: &LabeledPoint) -> Result<Vec<Message>> {
    check_features(p)?;
    Ok(p.features
        .iter()
        .copied()
        .chain(std::iter::once(p.target as f64))
        .map(|v| Message::new(EventTag::DataEntry, v.to_le_bytes().to_vec()))
        .collect())
}

pub fn decode_entry(m: &Message) -> Result<f64> {
    if m.tag != EventTag::DataEntry {
        return Err(Error::Protocol(format!("expected DataEntry, got {:?}", m.tag)));
    }
    m.expect_len(8)?;
    Ok(f64::from_le_bytes(m.payload[..8].try_into().unwrap()))
}

/// Rebuilds a point from its `d + 1` protocol-2 entries.
pub fn decode_point_p2(entries: &[f64]) -> Result<LabeledPoint> {
    let (target, features) = entries
        .split_last()
        .ok_or_else(|| Error::Protocol("no entries".into()))?;
    Ok(LabeledPoint::new(features.to_vec(), target_from_f64(*target)?))
}

pub fn connect_req(identity: &str) -> Message {
    Message::new(EventTag::ConnectReq, identity.as_bytes().to_vec())
}

pub fn parse_connect_req(m: &Message) -> Result<String> {
    String::from_utf8(m.payload.clone()).map_err(|_| Error::Protocol("identity is not UTF-8".into()))
}

pub const ACK_OK: u8 = 0;
pub const ACK_REJECTED: u8 = 1;

pub fn connect_ack(status: u8, key: u64) -> Message {
    let mut p = vec![status];
    p.extend_from_slice(&key.to_le_bytes());
    Message::new(EventTag::ConnectAck, p)
}

pub fn parse_connect_ack(m: &Message) -> Result<(u8, u64)> {
    m.expect_len(9)?;
    Ok((m.payload[0], u64::from_le_bytes(m.payload[1..9].try_into().unwrap())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataBegin {
    pub partition: u32,
    pub count: u64,
    pub d: u32,
    pub protocol: u8,
}

impl DataBegin {
    pub fn to_message(self) -> Message {
        let mut p = Vec::with_capacity(17);
        p.extend_from_slice(&self.partition.to_le_bytes());
        p.extend_from_slice(&self.count.to_le_bytes());
        p.extend_from_slice(&self.d.to_le_bytes());
        p.push(self.protocol);
        Message::new(EventTag::DataBegin, p)
    }

    pub fn parse(m: &Message) -> Result<Self> {
        m.expect_len(17)?;
        let p = &m.payload;
        let begin = Self {
            partition: u32::from_le_bytes(p[0..4].try_into().unwrap()),
            count: u64::from_le_bytes(p[4..12].try_into().unwrap()),
            d: u32::from_le_bytes(p[12..16].try_into().unwrap()),
            protocol: p[16],
        };
        if begin.protocol != 1 && begin.protocol != 2 {
            return Err(Error::Protocol(format!("unknown data protocol {}", begin.protocol)));
        }
        if begin.d == 0 {
            return Err(Error::Protocol("empty features".into()));
        }
        Ok(begin)
    }
}

pub const DONE_OK: u8 = 0;
pub const DONE_FAILED: u8 = 1;

pub fn done_training(partition: u32, status: u8) -> Message {
    let mut p = partition.to_le_bytes().to_vec();
    p.push(status);
    Message::new(EventTag::DoneTraining, p)
}

pub fn parse_done(m: &Message) -> Result<(u32, u8)> {
    m.expect_len(5)?;
    Ok((u32::from_le_bytes(m.payload[0..4].try_into().unwrap()), m.payload[4]))
}
