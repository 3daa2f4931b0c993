//! Datagram and log-record codecs.
//!
//! A probe datagram is 6 bytes: `version`, `kind`, `seq` (u32 LE).
//! A log record is 15 bytes: `timestamp_ms` (u64 LE), `seq` (u32 LE),
//! a kind byte, `src`, `dst`. The kind byte carries the message type in
//! bits 0-2 and the event direction in bit 7 (0 = send, 1 = receive).
//! Log files (`.twplog`) are plain concatenations of records.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROTOCOL_VERSION: u8 = 1;
pub const MESSAGE_LEN: usize = 6;
pub const RECORD_LEN: usize = 15;

const DIRECTION_BIT: u8 = 0x80;
const TYPE_MASK: u8 = 0x07;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("wrong length: expected {expected} bytes, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("unsupported protocol version byte 0x{0:02x}")]
    BadVersion(u8),
    #[error("invalid message type byte 0x{0:02x}")]
    BadType(u8),
    #[error("record source equals destination (node {0})")]
    SrcEqualsDst(u8),
}

/// A record-level failure inside a log stream, with the byte offset of the
/// record that failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("corrupt log at byte offset {offset}: {source}")]
pub struct CorruptLog {
    pub offset: usize,
    #[source]
    pub source: WireError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum MessageType {
    Ping = 0,
    PingAck = 1,
    Ack = 2,
}

impl MessageType {
    pub const ALL: [MessageType; 3] = [MessageType::Ping, MessageType::PingAck, MessageType::Ack];

    pub fn from_byte(b: u8) -> Result<Self, WireError> {
        match b {
            0 => Ok(MessageType::Ping),
            1 => Ok(MessageType::PingAck),
            2 => Ok(MessageType::Ack),
            other => Err(WireError::BadType(other)),
        }
    }

    pub fn as_byte(self) -> u8 {
        self as u8
    }

    /// True for messages travelling from the round's initiator to its responder.
    pub fn is_forward(self) -> bool {
        !matches!(self, MessageType::PingAck)
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MessageType::Ping => "PING",
            MessageType::PingAck => "PING-ACK",
            MessageType::Ack => "ACK",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Send,
    Recv,
}

/// Index of a node in the sorted roster.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u8);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TwpMessage {
    pub version: u8,
    pub kind: MessageType,
    pub seq: u32,
}

impl TwpMessage {
    pub fn new(kind: MessageType, seq: u32) -> Self {
        TwpMessage { version: PROTOCOL_VERSION, kind, seq }
    }

    pub fn encode(&self) -> [u8; MESSAGE_LEN] {
        let mut out = [0u8; MESSAGE_LEN];
        out[0] = self.version;
        out[1] = self.kind.as_byte();
        out[2..6].copy_from_slice(&self.seq.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() != MESSAGE_LEN {
            return Err(WireError::WrongLength { expected: MESSAGE_LEN, got: bytes.len() });
        }
        if bytes[0] != PROTOCOL_VERSION {
            return Err(WireError::BadVersion(bytes[0]));
        }
        let kind = MessageType::from_byte(bytes[1])?;
        let seq = u32::from_le_bytes([bytes[2], bytes[3], bytes[4], bytes[5]]);
        Ok(TwpMessage { version: bytes[0], kind, seq })
    }
}

/// One send or receive event as stored in a node's log.
///
/// `src` and `dst` name the message's origin and destination, so a send is
/// owned by `src` and a receive by `dst`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LogRecord {
    pub timestamp_ms: u64,
    pub seq: u32,
    pub kind: MessageType,
    pub direction: Direction,
    pub src: NodeId,
    pub dst: NodeId,
}

impl LogRecord {
    /// The node whose log this event belongs to.
    pub fn owner(&self) -> NodeId {
        match self.direction {
            Direction::Send => self.src,
            Direction::Recv => self.dst,
        }
    }

    pub fn kind_byte(&self) -> u8 {
        let dir = match self.direction {
            Direction::Send => 0,
            Direction::Recv => DIRECTION_BIT,
        };
        dir | self.kind.as_byte()
    }

    pub fn encode(&self) -> Result<[u8; RECORD_LEN], WireError> {
        if self.src == self.dst {
            return Err(WireError::SrcEqualsDst(self.src.0));
        }
        let mut out = [0u8; RECORD_LEN];
        out[0..8].copy_from_slice(&self.timestamp_ms.to_le_bytes());
        out[8..12].copy_from_slice(&self.seq.to_le_bytes());
        out[12] = self.kind_byte();
        out[13] = self.src.0;
        out[14] = self.dst.0;
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() != RECORD_LEN {
            return Err(WireError::WrongLength { expected: RECORD_LEN, got: bytes.len() });
        }
        let mut ts = [0u8; 8];
        ts.copy_from_slice(&bytes[0..8]);
        let seq = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]);
        let kb = bytes[12];
        if kb & !(DIRECTION_BIT | TYPE_MASK) != 0 {
            return Err(WireError::BadType(kb));
        }
        let kind = MessageType::from_byte(kb & TYPE_MASK).map_err(|_| WireError::BadType(kb))?;
        let direction = if kb & DIRECTION_BIT != 0 { Direction::Recv } else { Direction::Send };
        let (src, dst) = (bytes[13], bytes[14]);
        if src == dst {
            return Err(WireError::SrcEqualsDst(src));
        }
        Ok(LogRecord {
            timestamp_ms: u64::from_le_bytes(ts),
            seq,
            kind,
            direction,
            src: NodeId(src),
            dst: NodeId(dst),
        })
    }
}

/// Serial-number comparison over the 32-bit sequence space: `a` precedes
/// `b` iff `b - a (mod 2^32)` lies in `[1, 2^31 - 1]`. A distance of exactly
/// `2^31` orders neither way.
pub fn seq_less_than(a: u32, b: u32) -> bool {
    let d = b.wrapping_sub(a);
    d != 0 && d < 0x8000_0000
}

pub fn encode_log(records: &[LogRecord]) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(records.len() * RECORD_LEN);
    for r in records {
        out.extend_from_slice(&r.encode()?);
    }
    Ok(out)
}

pub fn decode_log(bytes: &[u8]) -> Result<Vec<LogRecord>, CorruptLog> {
    let mut out = Vec::with_capacity(bytes.len() / RECORD_LEN);
    let mut offset = 0;
    while offset < bytes.len() {
        let end = (offset + RECORD_LEN).min(bytes.len());
        let rec = LogRecord::decode(&bytes[offset..end])
            .map_err(|source| CorruptLog { offset, source })?;
        out.push(rec);
        offset = end;
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum LogStoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Corrupt {
        path: PathBuf,
        #[source]
        source: CorruptLog,
    },
    #[error("{0}: not a node directory or segment file")]
    BadName(PathBuf),
}

/// Path of a stored segment: `<root>/<node_id>/<segment_index>.twplog`.
pub fn segment_path(root: &Path, node: NodeId, index: u64) -> PathBuf {
    root.join(node.0.to_string()).join(format!("{index}.twplog"))
}

pub fn write_segment(root: &Path, node: NodeId, index: u64, bytes: &[u8]) -> Result<PathBuf, LogStoreError> {
    let path = segment_path(root, node, index);
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| LogStoreError::Io { path, source }
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(&path, bytes).map_err(io_err(&path))?;
    Ok(path)
}

/// Reads every node directory under `root`, concatenating segments in index
/// order and decoding them. Returns records per node in file order.
pub fn read_log_tree(root: &Path) -> Result<Vec<(NodeId, Vec<LogRecord>)>, LogStoreError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| LogStoreError::Io { path, source }
    };
    let mut nodes = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let id = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.parse::<u8>().ok())
            .ok_or_else(|| LogStoreError::BadName(path.clone()))?;
        let mut segments = Vec::new();
        for seg in fs::read_dir(&path).map_err(io_err(&path))? {
            let seg = seg.map_err(io_err(&path))?.path();
            if seg.extension().and_then(|e| e.to_str()) != Some("twplog") {
                continue;
            }
            let idx = seg
                .file_stem()
                .and_then(|n| n.to_str())
                .and_then(|n| n.parse::<u64>().ok())
                .ok_or_else(|| LogStoreError::BadName(seg.clone()))?;
            segments.push((idx, seg));
        }
        segments.sort();
        let mut records = Vec::new();
        for (_, seg) in segments {
            let bytes = fs::read(&seg).map_err(io_err(&seg))?;
            let mut recs = decode_log(&bytes)
                .map_err(|source| LogStoreError::Corrupt { path: seg.clone(), source })?;
            records.append(&mut recs);
        }
        nodes.push((NodeId(id), records));
    }
    nodes.sort_by_key(|(id, _)| *id);
    Ok(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(ts: u64, seq: u32, kind: MessageType, direction: Direction, src: u8, dst: u8) -> LogRecord {
        LogRecord { timestamp_ms: ts, seq, kind, direction, src: NodeId(src), dst: NodeId(dst) }
    }

    #[test]
    fn message_layout() {
        assert_eq!(TwpMessage::new(MessageType::Ping, 0).encode(), [1, 0, 0, 0, 0, 0]);
        assert_eq!(TwpMessage::new(MessageType::Ack, 258).encode(), [1, 2, 2, 1, 0, 0]);
        assert_eq!(
            TwpMessage::decode(&[1, 1, 5, 0, 0, 0]).unwrap(),
            TwpMessage::new(MessageType::PingAck, 5)
        );
    }

    #[test]
    fn message_errors() {
        assert_eq!(
            TwpMessage::decode(&[1, 0, 0, 0, 0]),
            Err(WireError::WrongLength { expected: 6, got: 5 })
        );
        assert_eq!(TwpMessage::decode(&[2, 0, 0, 0, 0, 0]), Err(WireError::BadVersion(2)));
        assert_eq!(TwpMessage::decode(&[1, 3, 0, 0, 0, 0]), Err(WireError::BadType(3)));
    }

    // Byte layout written out field by field, independent of the encoder.
    fn layout_oracle(ts: u64, seq: u32, kind: u8, recv: bool, src: u8, dst: u8) -> Vec<u8> {
        let mut v = Vec::new();
        for i in 0..8 {
            v.push(((ts >> (8 * i)) & 0xff) as u8);
        }
        for i in 0..4 {
            v.push(((seq >> (8 * i)) & 0xff) as u8);
        }
        v.push(kind | if recv { 0x80 } else { 0 });
        v.push(src);
        v.push(dst);
        v
    }

    #[test]
    fn record_layout() {
        let r = rec(0, 0, MessageType::Ping, Direction::Send, 0, 1);
        let mut expected = vec![0u8; 14];
        expected.push(1);
        assert_eq!(r.encode().unwrap().to_vec(), expected);

        let r = rec(1, 258, MessageType::Ack, Direction::Recv, 5, 7);
        let oracle = layout_oracle(1, 258, 2, true, 5, 7);
        assert_eq!(
            oracle,
            vec![1, 0, 0, 0, 0, 0, 0, 0, 2, 1, 0, 0, 0x82, 5, 7]
        );
        assert_eq!(r.encode().unwrap().to_vec(), oracle);
    }

    #[test]
    fn record_errors() {
        let r = rec(3, 3, MessageType::Ping, Direction::Send, 4, 4);
        assert_eq!(r.encode(), Err(WireError::SrcEqualsDst(4)));
        let mut bytes = rec(3, 3, MessageType::Ping, Direction::Send, 4, 5).encode().unwrap();
        bytes[12] = 0x03;
        assert_eq!(LogRecord::decode(&bytes), Err(WireError::BadType(0x03)));
        bytes[12] = 0x40;
        assert_eq!(LogRecord::decode(&bytes), Err(WireError::BadType(0x40)));
        bytes[12] = 0x00;
        bytes[14] = 4;
        assert_eq!(LogRecord::decode(&bytes), Err(WireError::SrcEqualsDst(4)));
        assert_eq!(
            LogRecord::decode(&bytes[..14]),
            Err(WireError::WrongLength { expected: 15, got: 14 })
        );
    }

    #[test]
    fn truncated_log_reports_offset() {
        let recs = vec![
            rec(10, 1, MessageType::Ping, Direction::Send, 0, 1),
            rec(20, 1, MessageType::PingAck, Direction::Recv, 1, 0),
        ];
        let mut bytes = encode_log(&recs).unwrap();
        assert_eq!(decode_log(&bytes).unwrap(), recs);
        bytes.extend_from_slice(&[0u8; 14]);
        let err = decode_log(&bytes).unwrap_err();
        assert_eq!(err.offset, 30);
        assert_eq!(err.source, WireError::WrongLength { expected: 15, got: 14 });
    }

    #[test]
    fn serial_number_examples() {
        assert!(seq_less_than(0, 1));
        assert!(seq_less_than(0xFFFF_FFFF, 0));
        assert!(!seq_less_than(0, 0x8000_0000));
        assert!(!seq_less_than(0x8000_0000, 0));
        assert!(!seq_less_than(7, 7));
    }

    fn arb_record() -> impl Strategy<Value = LogRecord> {
        (any::<u64>(), any::<u32>(), 0u8..3, any::<bool>(), any::<u8>(), any::<u8>())
            .prop_filter("src != dst", |(_, _, _, _, s, d)| s != d)
            .prop_map(|(ts, seq, k, recv, s, d)| LogRecord {
                timestamp_ms: ts,
                seq,
                kind: MessageType::from_byte(k).unwrap(),
                direction: if recv { Direction::Recv } else { Direction::Send },
                src: NodeId(s),
                dst: NodeId(d),
            })
    }

    proptest! {
        #[test]
        fn record_roundtrip(r in arb_record()) {
            let bytes = r.encode().unwrap();
            prop_assert_eq!(bytes.len(), RECORD_LEN);
            prop_assert_eq!(LogRecord::decode(&bytes).unwrap(), r);
        }

        #[test]
        fn message_roundtrip(k in 0u8..3, seq in any::<u32>()) {
            let m = TwpMessage::new(MessageType::from_byte(k).unwrap(), seq);
            prop_assert_eq!(TwpMessage::decode(&m.encode()).unwrap(), m);
        }

        #[test]
        fn serial_order_is_antisymmetric(a in any::<u32>(), b in any::<u32>()) {
            prop_assert!(!seq_less_than(a, a));
            if a != b && b.wrapping_sub(a) != 0x8000_0000 {
                prop_assert!(seq_less_than(a, b) ^ seq_less_than(b, a));
            }
        }
    }
}
