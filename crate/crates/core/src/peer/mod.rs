//! The measurement participant.
//!
//! [`Peer`] is a transport-agnostic state machine: the driver feeds it ticks
//! and decoded datagrams together with the local clock reading, and ships the
//! returned [`Action`]s. Every send and every accepted receive is appended to
//! the peer's [`RotatingLog`].

mod log;
mod schedule;

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use thiserror::Error;

use crate::wire::{Direction, LogRecord, MessageType, NodeId, TwpMessage};

pub use log::{RotatingLog, SealedSegment};
pub use schedule::{initiator_of, partner_at_tick, rotation_len, ScheduleError};

pub const DEFAULT_PROBE_INTERVAL_MS: u64 = 10_000;
pub const DEFAULT_PENDING_EXPIRY_MS: u64 = 60_000;
pub const DEFAULT_ROTATION_INTERVAL_MS: u64 = 3_600_000;

/// Keys of recently expired rounds kept to tell late replies from duplicates.
const EXPIRED_MEMORY: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PeerError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("probe interval must be positive")]
    ZeroInterval,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerConfig {
    pub self_id: NodeId,
    pub roster_size: usize,
    pub probe_interval_ms: u64,
    pub pending_expiry_ms: u64,
    pub rotation_interval_ms: u64,
    /// Local time of tick 0; all peers share it through the roster.
    pub epoch_ms: u64,
    /// First sequence number used toward each partner this node initiates to.
    pub initial_seq: u32,
}

impl PeerConfig {
    pub fn new(self_id: NodeId, roster_size: usize) -> Result<Self, PeerError> {
        partner_at_tick(self_id, roster_size, 0)?;
        Ok(PeerConfig {
            self_id,
            roster_size,
            probe_interval_ms: DEFAULT_PROBE_INTERVAL_MS,
            pending_expiry_ms: DEFAULT_PENDING_EXPIRY_MS,
            rotation_interval_ms: DEFAULT_ROTATION_INTERVAL_MS,
            epoch_ms: 0,
            initial_seq: 0,
        })
    }

    fn validate(&self) -> Result<(), PeerError> {
        partner_at_tick(self.self_id, self.roster_size, 0)?;
        if self.probe_interval_ms == 0 {
            return Err(PeerError::ZeroInterval);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Send { to: NodeId, msg: TwpMessage },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PeerCounters {
    pub rounds_started: u64,
    /// Replies that arrived after their round was evicted.
    pub late: u64,
    /// Replies matching no pending round, and repeated PINGs.
    pub duplicate: u64,
    /// Datagrams from nodes outside the roster or from ourselves.
    pub unknown: u64,
    pub expired: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PendingEntry {
    sent_at: u64,
    awaiting: MessageType,
}

/// Rounds awaiting a PING-ACK (at the initiator) or an ACK (at the responder),
/// keyed by peer and sequence number.
#[derive(Debug, Default, Clone)]
pub struct PendingTable {
    entries: HashMap<(NodeId, u32), PendingEntry>,
    expired: HashSet<(NodeId, u32)>,
    expired_order: VecDeque<(NodeId, u32)>,
}

impl PendingTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn insert(&mut self, peer: NodeId, seq: u32, sent_at: u64, awaiting: MessageType) {
        self.entries.insert((peer, seq), PendingEntry { sent_at, awaiting });
    }

    /// Evicts entries older than `expiry_ms`; returns how many were dropped.
    fn evict(&mut self, now: u64, expiry_ms: u64) -> usize {
        let stale: Vec<_> = self
            .entries
            .iter()
            .filter(|(_, e)| now.saturating_sub(e.sent_at) > expiry_ms)
            .map(|(k, _)| *k)
            .collect();
        for key in &stale {
            self.entries.remove(key);
            if self.expired.insert(*key) {
                self.expired_order.push_back(*key);
            }
        }
        while self.expired_order.len() > EXPIRED_MEMORY {
            if let Some(old) = self.expired_order.pop_front() {
                self.expired.remove(&old);
            }
        }
        stale.len()
    }

    fn take(&mut self, peer: NodeId, seq: u32, awaiting: MessageType) -> Option<PendingEntry> {
        match self.entries.get(&(peer, seq)) {
            Some(e) if e.awaiting == awaiting => self.entries.remove(&(peer, seq)),
            _ => None,
        }
    }

    fn contains(&self, peer: NodeId, seq: u32) -> bool {
        self.entries.contains_key(&(peer, seq))
    }

    fn forget_expired(&mut self, peer: NodeId, seq: u32) -> bool {
        self.expired.remove(&(peer, seq))
    }
}

#[derive(Debug, Clone)]
pub struct Peer {
    cfg: PeerConfig,
    next_seq: BTreeMap<NodeId, u32>,
    pending: PendingTable,
    log: RotatingLog,
    counters: PeerCounters,
    last_tick: Option<u64>,
}

impl Peer {
    pub fn new(cfg: PeerConfig) -> Result<Self, PeerError> {
        cfg.validate()?;
        let log = RotatingLog::new(cfg.epoch_ms);
        Ok(Peer {
            cfg,
            next_seq: BTreeMap::new(),
            pending: PendingTable::default(),
            log,
            counters: PeerCounters::default(),
            last_tick: None,
        })
    }

    pub fn config(&self) -> &PeerConfig {
        &self.cfg
    }

    pub fn id(&self) -> NodeId {
        self.cfg.self_id
    }

    pub fn counters(&self) -> PeerCounters {
        self.counters
    }

    pub fn pending(&self) -> &PendingTable {
        &self.pending
    }

    pub fn log(&self) -> &RotatingLog {
        &self.log
    }

    pub fn log_mut(&mut self) -> &mut RotatingLog {
        &mut self.log
    }

    /// Tick index nearest to local time `now`.
    pub fn tick_index(&self, now: u64) -> u64 {
        let elapsed = now.saturating_sub(self.cfg.epoch_ms);
        (elapsed + self.cfg.probe_interval_ms / 2) / self.cfg.probe_interval_ms
    }

    /// Local time at which tick `k` is due.
    pub fn tick_due(&self, k: u64) -> u64 {
        self.cfg.epoch_ms + k * self.cfg.probe_interval_ms
    }

    fn record(&mut self, now: u64, kind: MessageType, direction: Direction, src: NodeId, dst: NodeId, seq: u32) {
        self.log.append(LogRecord { timestamp_ms: now, seq, kind, direction, src, dst });
    }

    fn evict(&mut self, now: u64) {
        let n = self.pending.evict(now, self.cfg.pending_expiry_ms);
        self.counters.expired += n as u64;
    }

    pub fn on_tick(&mut self, now: u64) -> Vec<Action> {
        self.evict(now);
        let tick = self.tick_index(now);
        if self.last_tick == Some(tick) {
            return Vec::new();
        }
        self.last_tick = Some(tick);
        let me = self.cfg.self_id;
        let n = self.cfg.roster_size;
        // The roster was validated at construction.
        let partner = match partner_at_tick(me, n, tick).expect("validated roster") {
            Some(p) => p,
            None => return Vec::new(),
        };
        if initiator_of(me, partner, n).expect("validated roster") != me {
            return Vec::new();
        }
        let initial = self.cfg.initial_seq;
        let slot = self.next_seq.entry(partner).or_insert(initial);
        let seq = *slot;
        *slot = slot.wrapping_add(1);
        self.record(now, MessageType::Ping, Direction::Send, me, partner, seq);
        self.pending.insert(partner, seq, now, MessageType::PingAck);
        self.counters.rounds_started += 1;
        vec![Action::Send { to: partner, msg: TwpMessage::new(MessageType::Ping, seq) }]
    }

    pub fn on_message(&mut self, msg: TwpMessage, from: NodeId, now: u64) -> Vec<Action> {
        let me = self.cfg.self_id;
        if from == me || from.index() >= self.cfg.roster_size {
            self.counters.unknown += 1;
            return Vec::new();
        }
        self.evict(now);
        let seq = msg.seq;
        match msg.kind {
            MessageType::Ping => {
                if self.pending.contains(from, seq) {
                    self.counters.duplicate += 1;
                    return Vec::new();
                }
                self.record(now, MessageType::Ping, Direction::Recv, from, me, seq);
                self.record(now, MessageType::PingAck, Direction::Send, me, from, seq);
                self.pending.insert(from, seq, now, MessageType::Ack);
                vec![Action::Send { to: from, msg: TwpMessage::new(MessageType::PingAck, seq) }]
            }
            MessageType::PingAck => {
                if self.pending.take(from, seq, MessageType::PingAck).is_none() {
                    self.count_unmatched(from, seq);
                    return Vec::new();
                }
                self.record(now, MessageType::PingAck, Direction::Recv, from, me, seq);
                self.record(now, MessageType::Ack, Direction::Send, me, from, seq);
                vec![Action::Send { to: from, msg: TwpMessage::new(MessageType::Ack, seq) }]
            }
            MessageType::Ack => {
                if self.pending.take(from, seq, MessageType::Ack).is_none() {
                    self.count_unmatched(from, seq);
                    return Vec::new();
                }
                self.record(now, MessageType::Ack, Direction::Recv, from, me, seq);
                Vec::new()
            }
        }
    }

    fn count_unmatched(&mut self, from: NodeId, seq: u32) {
        if self.pending.forget_expired(from, seq) {
            self.counters.late += 1;
        } else {
            self.counters.duplicate += 1;
        }
    }

    /// Seals the active segment if the rotation interval has elapsed.
    pub fn maybe_rotate(&mut self, now: u64) -> Option<u64> {
        if now.saturating_sub(self.log.opened_at()) >= self.cfg.rotation_interval_ms {
            Some(self.rotate_log(now))
        } else {
            None
        }
    }

    pub fn rotate_log(&mut self, now: u64) -> u64 {
        self.log.seal(now)
    }

    /// Next sealed segment waiting for upload.
    pub fn take_upload(&mut self) -> Option<SealedSegment> {
        self.log.pop_sealed()
    }
}
