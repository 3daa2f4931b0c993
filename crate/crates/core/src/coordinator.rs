//! Experiment control: registration, roster distribution, upload-slot
//! scheduling and shutdown.
//!
//! [`Coordinator`] holds all state and is meant to be driven by a single
//! owner. [`ControlMsg`] is the line protocol spoken between coordinator and
//! peers over a reliable stream: one message per line, space-separated fields.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::wire::NodeId;

pub const DEFAULT_MAX_UPLOADS: usize = 4;
pub const MAX_ROSTER: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoordError {
    #[error("registration is closed")]
    RegistrationClosed,
    #[error("registration is still open")]
    NotClosed,
    #[error("no peers registered")]
    Empty,
    #[error("roster is full ({MAX_ROSTER} nodes)")]
    RosterFull,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("operation not allowed while {0:?}")]
    WrongState(ExperimentState),
    #[error("invalid address {0:?}")]
    BadAddress(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentState {
    Registering,
    Running,
    Finalizing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roster {
    pub probe_interval_ms: u64,
    /// Peer addresses in id order.
    pub addresses: Vec<String>,
}

impl Roster {
    pub fn len(&self) -> usize {
        self.addresses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.addresses.is_empty()
    }

    pub fn id_of(&self, addr: &str) -> Option<NodeId> {
        self.addresses.iter().position(|a| a == addr).map(|i| NodeId(i as u8))
    }

    pub fn entries(&self) -> impl Iterator<Item = (NodeId, &str)> {
        self.addresses.iter().enumerate().map(|(i, a)| (NodeId(i as u8), a.as_str()))
    }

    /// The roster as its wire line, without trailing newline.
    pub fn to_line(&self) -> String {
        ControlMsg::Roster(self.clone()).to_string()
    }

    pub fn from_line(line: &str) -> Result<Self, ProtocolError> {
        match line.parse::<ControlMsg>()? {
            ControlMsg::Roster(r) => Ok(r),
            other => Err(ProtocolError::Unexpected(other.verb().to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grant {
    Granted,
    Queued,
}

/// Bounded set of concurrent upload grants with a FIFO wait queue.
#[derive(Debug, Clone)]
pub struct UploadSlots {
    max_concurrent: usize,
    active: BTreeSet<NodeId>,
    waiting: VecDeque<NodeId>,
}

impl UploadSlots {
    pub fn new(max_concurrent: usize) -> Self {
        UploadSlots { max_concurrent: max_concurrent.max(1), active: BTreeSet::new(), waiting: VecDeque::new() }
    }

    pub fn active(&self) -> &BTreeSet<NodeId> {
        &self.active
    }

    pub fn waiting(&self) -> impl Iterator<Item = &NodeId> {
        self.waiting.iter()
    }

    pub fn request(&mut self, node: NodeId) -> Grant {
        if self.active.contains(&node) {
            return Grant::Granted;
        }
        if self.waiting.contains(&node) {
            return Grant::Queued;
        }
        if self.active.len() < self.max_concurrent {
            self.active.insert(node);
            Grant::Granted
        } else {
            self.waiting.push_back(node);
            Grant::Queued
        }
    }

    /// Frees `node`'s slot and returns the node granted in its place, if any.
    pub fn release(&mut self, node: NodeId) -> Option<NodeId> {
        if !self.active.remove(&node) {
            self.waiting.retain(|n| *n != node);
            return None;
        }
        let next = self.waiting.pop_front()?;
        self.active.insert(next);
        Some(next)
    }
}

#[derive(Debug, Clone)]
pub struct Coordinator {
    state: ExperimentState,
    probe_interval_ms: u64,
    addresses: BTreeSet<String>,
    ids: BTreeMap<String, NodeId>,
    slots: UploadSlots,
    done: BTreeSet<NodeId>,
}

impl Coordinator {
    pub fn new(probe_interval_ms: u64, max_uploads: usize) -> Self {
        Coordinator {
            state: ExperimentState::Registering,
            probe_interval_ms,
            addresses: BTreeSet::new(),
            ids: BTreeMap::new(),
            slots: UploadSlots::new(max_uploads),
            done: BTreeSet::new(),
        }
    }

    pub fn state(&self) -> ExperimentState {
        self.state
    }

    pub fn len(&self) -> usize {
        self.addresses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.addresses.is_empty()
    }

    pub fn slots(&self) -> &UploadSlots {
        &self.slots
    }

    /// Registers `addr` and returns its id in the current sorted order.
    ///
    /// While registering, ids are provisional: they settle when
    /// registration closes. After that, a known address gets its final id
    /// back (a restarted peer rejoining) and an unknown one is refused.
    pub fn register(&mut self, addr: &str) -> Result<NodeId, CoordError> {
        if addr.is_empty() || addr.contains(char::is_whitespace) {
            return Err(CoordError::BadAddress(addr.to_string()));
        }
        if self.state != ExperimentState::Registering {
            return self.ids.get(addr).copied().ok_or(CoordError::RegistrationClosed);
        }
        if !self.addresses.contains(addr) && self.addresses.len() >= MAX_ROSTER {
            return Err(CoordError::RosterFull);
        }
        self.addresses.insert(addr.to_string());
        let pos = self.addresses.iter().position(|a| a == addr).expect("just inserted");
        Ok(NodeId(pos as u8))
    }

    /// Closes registration, fixing ids in sorted-address order, and moves
    /// the experiment to running.
    pub fn start(&mut self) -> Result<Roster, CoordError> {
        if self.state != ExperimentState::Registering {
            return Err(CoordError::WrongState(self.state));
        }
        if self.addresses.is_empty() {
            return Err(CoordError::Empty);
        }
        self.ids = self
            .addresses
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), NodeId(i as u8)))
            .collect();
        self.state = ExperimentState::Running;
        self.build_roster()
    }

    pub fn id_of(&self, addr: &str) -> Option<NodeId> {
        self.ids.get(addr).copied()
    }

    pub fn build_roster(&self) -> Result<Roster, CoordError> {
        if self.state == ExperimentState::Registering {
            return Err(if self.addresses.is_empty() { CoordError::Empty } else { CoordError::NotClosed });
        }
        Ok(Roster { probe_interval_ms: self.probe_interval_ms, addresses: self.addresses.iter().cloned().collect() })
    }

    fn check_node(&self, node: NodeId) -> Result<(), CoordError> {
        if node.index() >= self.addresses.len() || self.state == ExperimentState::Registering {
            return Err(CoordError::UnknownNode(node));
        }
        Ok(())
    }

    pub fn grant_upload(&mut self, node: NodeId) -> Result<Grant, CoordError> {
        if self.state == ExperimentState::Registering {
            return Err(CoordError::WrongState(self.state));
        }
        self.check_node(node)?;
        Ok(self.slots.request(node))
    }

    pub fn release_upload(&mut self, node: NodeId) -> Result<Option<NodeId>, CoordError> {
        self.check_node(node)?;
        Ok(self.slots.release(node))
    }

    /// Moves to finalizing and returns the peers that must be told to stop.
    /// Calling it again returns nothing.
    pub fn finalize(&mut self) -> Vec<NodeId> {
        match self.state {
            ExperimentState::Running => {
                self.state = ExperimentState::Finalizing;
                (0..self.addresses.len()).map(|i| NodeId(i as u8)).collect()
            }
            _ => Vec::new(),
        }
    }

    pub fn mark_done(&mut self, node: NodeId) -> Result<(), CoordError> {
        self.check_node(node)?;
        self.done.insert(node);
        Ok(())
    }

    pub fn all_done(&self) -> bool {
        self.state == ExperimentState::Finalizing && self.done.len() == self.addresses.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("empty line")]
    Empty,
    #[error("unknown verb {0:?}")]
    UnknownVerb(String),
    #[error("{verb}: expected {expected} field(s)")]
    Arity { verb: &'static str, expected: &'static str },
    #[error("{verb}: bad field {field:?}")]
    BadField { verb: &'static str, field: String },
    #[error("unexpected message {0}")]
    Unexpected(String),
}

/// Messages of the control protocol.
///
/// Peer to coordinator: `REGISTER`, `ROSTER` (request), `UPLOAD-REQ`,
/// `UPLOAD-DONE` (carries the segment), `BYE`.
/// Coordinator to peer: `ID`, `ROSTER`, `START`, `UPLOAD-GRANT`, `STOP`, `ERR`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlMsg {
    Register { addr: String },
    Id { id: NodeId },
    RosterRequest,
    Roster(Roster),
    Start { epoch_ms: u64 },
    UploadReq { segment: u64 },
    UploadGrant { segment: u64 },
    /// Segment payload, base64 encoded by the transport (`-` when empty).
    UploadDone { segment: u64, payload: String },
    Stop,
    Bye,
    Err { reason: String },
}

impl ControlMsg {
    pub fn verb(&self) -> &'static str {
        match self {
            ControlMsg::Register { .. } => "REGISTER",
            ControlMsg::Id { .. } => "ID",
            ControlMsg::RosterRequest | ControlMsg::Roster(_) => "ROSTER",
            ControlMsg::Start { .. } => "START",
            ControlMsg::UploadReq { .. } => "UPLOAD-REQ",
            ControlMsg::UploadGrant { .. } => "UPLOAD-GRANT",
            ControlMsg::UploadDone { .. } => "UPLOAD-DONE",
            ControlMsg::Stop => "STOP",
            ControlMsg::Bye => "BYE",
            ControlMsg::Err { .. } => "ERR",
        }
    }
}

impl fmt::Display for ControlMsg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verb = self.verb();
        match self {
            ControlMsg::Register { addr } => write!(f, "{verb} {addr}"),
            ControlMsg::Id { id } => write!(f, "{verb} {id}"),
            ControlMsg::RosterRequest | ControlMsg::Stop | ControlMsg::Bye => f.write_str(verb),
            ControlMsg::Roster(r) => {
                write!(f, "{verb} {}", r.probe_interval_ms)?;
                for a in &r.addresses {
                    write!(f, " {a}")?;
                }
                Ok(())
            }
            ControlMsg::Start { epoch_ms } => write!(f, "{verb} {epoch_ms}"),
            ControlMsg::UploadReq { segment } | ControlMsg::UploadGrant { segment } => {
                write!(f, "{verb} {segment}")
            }
            ControlMsg::UploadDone { segment, payload } => {
                let p = if payload.is_empty() { "-" } else { payload };
                write!(f, "{verb} {segment} {p}")
            }
            ControlMsg::Err { reason } => write!(f, "{verb} {reason}"),
        }
    }
}

fn num<T: FromStr>(verb: &'static str, s: &str) -> Result<T, ProtocolError> {
    s.parse().map_err(|_| ProtocolError::BadField { verb, field: s.to_string() })
}

impl FromStr for ControlMsg {
    type Err = ProtocolError;

    fn from_str(line: &str) -> Result<Self, ProtocolError> {
        let line = line.trim_end_matches(['\r', '\n']);
        let mut fields = line.split(' ');
        let verb = fields.next().filter(|v| !v.is_empty()).ok_or(ProtocolError::Empty)?;
        let rest: Vec<&str> = fields.collect();
        let exact = |verb: &'static str, n: usize, expected: &'static str| {
            if rest.len() == n {
                Ok(())
            } else {
                Err(ProtocolError::Arity { verb, expected })
            }
        };
        Ok(match verb {
            "REGISTER" => {
                exact("REGISTER", 1, "1")?;
                ControlMsg::Register { addr: rest[0].to_string() }
            }
            "ID" => {
                exact("ID", 1, "1")?;
                ControlMsg::Id { id: NodeId(num("ID", rest[0])?) }
            }
            "ROSTER" if rest.is_empty() => ControlMsg::RosterRequest,
            "ROSTER" => {
                let probe_interval_ms = num("ROSTER", rest[0])?;
                let addresses: Vec<String> = rest[1..].iter().map(|s| s.to_string()).collect();
                if addresses.iter().any(|a| a.is_empty()) || addresses.len() > MAX_ROSTER {
                    return Err(ProtocolError::BadField { verb: "ROSTER", field: line.to_string() });
                }
                ControlMsg::Roster(Roster { probe_interval_ms, addresses })
            }
            "START" => {
                exact("START", 1, "1")?;
                ControlMsg::Start { epoch_ms: num("START", rest[0])? }
            }
            "UPLOAD-REQ" => {
                exact("UPLOAD-REQ", 1, "1")?;
                ControlMsg::UploadReq { segment: num("UPLOAD-REQ", rest[0])? }
            }
            "UPLOAD-GRANT" => {
                exact("UPLOAD-GRANT", 1, "1")?;
                ControlMsg::UploadGrant { segment: num("UPLOAD-GRANT", rest[0])? }
            }
            "UPLOAD-DONE" => {
                exact("UPLOAD-DONE", 2, "2")?;
                let payload = if rest[1] == "-" { String::new() } else { rest[1].to_string() };
                ControlMsg::UploadDone { segment: num("UPLOAD-DONE", rest[0])?, payload }
            }
            "STOP" => {
                exact("STOP", 0, "0")?;
                ControlMsg::Stop
            }
            "BYE" => {
                exact("BYE", 0, "0")?;
                ControlMsg::Bye
            }
            "ERR" => ControlMsg::Err { reason: rest.join(" ") },
            other => return Err(ProtocolError::UnknownVerb(other.to_string())),
        })
    }
}
