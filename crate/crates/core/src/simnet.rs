//! Deterministic discrete-event network for running real [`Peer`] state
//! machines over modelled links and clocks.
//!
//! True time is milliseconds since the scenario start. Each node reads it
//! through its own [`SimClock`]; logged timestamps are `start_epoch_ms` plus
//! that local reading. Datagrams travel as encoded bytes, so the wire codec
//! is exercised exactly as over UDP.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::Roster;
use crate::distfit::DistParams;
use crate::peer::{Action, Peer, PeerConfig, PeerCounters, SealedSegment};
use crate::wire::{write_segment, LogStoreError, NodeId, TwpMessage, WireError};

/// 2009-05-27T00:00:00Z.
pub const DEFAULT_START_EPOCH_MS: u64 = 1_243_382_400_000;
/// Delay draws below this are redrawn.
pub const MIN_DELAY_MS: f64 = 1.0;
pub const ROSTER_FILE: &str = "roster.txt";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Store(#[from] LogStoreError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SimClock {
    #[serde(default)]
    pub offset_ms: f64,
    #[serde(default)]
    pub drift_ppm: f64,
}

impl SimClock {
    fn skewed(&self, true_ms: f64) -> f64 {
        true_ms + self.offset_ms + self.drift_ppm * 1e-6 * true_ms
    }

    /// Local reading at `true_ms`, on the millisecond grid, clamped at zero.
    pub fn local_time(&self, true_ms: f64) -> u64 {
        self.local_timestamp(0, true_ms)
    }

    pub fn local_timestamp(&self, epoch_ms: u64, true_ms: f64) -> u64 {
        (epoch_ms as f64 + self.skewed(true_ms)).round().max(0.0) as u64
    }

    /// True time at which the unrounded local reading equals `epoch_ms + local_ms`.
    pub fn true_time(&self, local_ms: f64) -> f64 {
        (local_ms - self.offset_ms) / (1.0 + self.drift_ppm * 1e-6)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DelayModel {
    Constant { constant_ms: f64 },
    Dist(DistParams),
}

impl DelayModel {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DelayModel::Constant { constant_ms } => *constant_ms,
            DelayModel::Dist(p) => loop {
                let d = p.draw(rng);
                if d >= MIN_DELAY_MS {
                    break d;
                }
            },
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            DelayModel::Constant { constant_ms } if constant_ms.is_finite() && *constant_ms >= MIN_DELAY_MS => Ok(()),
            DelayModel::Constant { constant_ms } => Err(format!("constant delay {constant_ms} below {MIN_DELAY_MS} ms")),
            DelayModel::Dist(p) => {
                p.validate().map_err(|e| e.to_string())?;
                if p.cdf(MIN_DELAY_MS) > 0.99 {
                    return Err(format!("{p:?} puts almost all mass below {MIN_DELAY_MS} ms"));
                }
                Ok(())
            }
        }
    }
}

/// One direction of a link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    #[serde(default)]
    pub loss: f64,
    pub delay: DelayModel,
}

impl LinkModel {
    pub fn constant(delay_ms: f64) -> Self {
        LinkModel { loss: 0.0, delay: DelayModel::Constant { constant_ms: delay_ms } }
    }

    pub fn dist(params: DistParams, loss: f64) -> Self {
        LinkModel { loss, delay: DelayModel::Dist(params) }
    }

    fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.loss) {
            return Err(format!("loss {} outside [0, 1]", self.loss));
        }
        self.delay.validate()
    }
}

/// Arrival time of a datagram sent at `send_true_ms`, or `None` if lost.
/// The loss draw always precedes the delay draw.
pub fn transmit<R: Rng + ?Sized>(link: &LinkModel, send_true_ms: f64, rng: &mut R) -> Option<f64> {
    if rng.gen::<f64>() < link.loss {
        return None;
    }
    Some(send_true_ms + link.delay.draw(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockSpec {
    pub node: u8,
    #[serde(flatten)]
    pub clock: SimClock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub src: u8,
    pub dst: u8,
    /// Also apply to `dst -> src`.
    #[serde(default)]
    pub both: bool,
    #[serde(default)]
    pub loss: f64,
    pub delay: DelayModel,
}

fn default_interval() -> u64 {
    crate::peer::DEFAULT_PROBE_INTERVAL_MS
}
fn default_expiry() -> u64 {
    crate::peer::DEFAULT_PENDING_EXPIRY_MS
}
fn default_rotation() -> u64 {
    crate::peer::DEFAULT_ROTATION_INTERVAL_MS
}
fn default_epoch() -> u64 {
    DEFAULT_START_EPOCH_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub nodes: usize,
    pub ticks: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_interval")]
    pub probe_interval_ms: u64,
    #[serde(default = "default_expiry")]
    pub pending_expiry_ms: u64,
    #[serde(default = "default_rotation")]
    pub rotation_interval_ms: u64,
    #[serde(default = "default_epoch")]
    pub start_epoch_ms: u64,
    pub default_link: LinkModel,
    #[serde(default, rename = "clock")]
    pub clocks: Vec<ClockSpec>,
    #[serde(default, rename = "link")]
    pub links: Vec<LinkSpec>,
}

impl SimConfig {
    /// A lossless mesh of `nodes` with the same model on every directed link.
    pub fn uniform(nodes: usize, ticks: u64, link: LinkModel) -> Self {
        SimConfig {
            nodes,
            ticks,
            seed: 0,
            probe_interval_ms: default_interval(),
            pending_expiry_ms: default_expiry(),
            rotation_interval_ms: default_rotation(),
            start_epoch_ms: default_epoch(),
            default_link: link,
            clocks: Vec::new(),
            links: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Invalid(m));
        if !(2..=crate::coordinator::MAX_ROSTER).contains(&self.nodes) {
            return bad(format!("nodes = {} outside 2..=256", self.nodes));
        }
        if self.probe_interval_ms == 0 {
            return bad("probe_interval_ms must be positive".into());
        }
        self.default_link.validate().or_else(|e| bad(format!("default_link: {e}")))?;
        for c in &self.clocks {
            if usize::from(c.node) >= self.nodes {
                return bad(format!("clock for unknown node {}", c.node));
            }
            let ok = c.clock.offset_ms.is_finite() && c.clock.drift_ppm.abs() < 1e6;
            if !ok {
                return bad(format!("clock for node {} is not monotone", c.node));
            }
        }
        for l in &self.links {
            if usize::from(l.src) >= self.nodes || usize::from(l.dst) >= self.nodes || l.src == l.dst {
                return bad(format!("link {} -> {} is not between two roster nodes", l.src, l.dst));
            }
            LinkModel { loss: l.loss, delay: l.delay }
                .validate()
                .or_else(|e| bad(format!("link {} -> {}: {e}", l.src, l.dst)))?;
        }
        Ok(())
    }

    pub fn clock(&self, node: NodeId) -> SimClock {
        self.clocks.iter().rev().find(|c| c.node == node.0).map(|c| c.clock).unwrap_or_default()
    }

    /// Model for `src -> dst`; the last matching `[[link]]` wins.
    pub fn link(&self, src: NodeId, dst: NodeId) -> LinkModel {
        self.links
            .iter()
            .rev()
            .find(|l| (l.src == src.0 && l.dst == dst.0) || (l.both && l.src == dst.0 && l.dst == src.0))
            .map(|l| LinkModel { loss: l.loss, delay: l.delay })
            .unwrap_or(self.default_link)
    }

    pub fn roster(&self) -> Roster {
        Roster {
            probe_interval_ms: self.probe_interval_ms,
            addresses: (0..self.nodes).map(|i| format!("sim-node-{i:02}")).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimStats {
    pub datagrams_sent: u64,
    pub datagrams_lost: u64,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub roster: Roster,
    /// Sealed segments per node, in node-id order.
    pub segments: Vec<Vec<SealedSegment>>,
    pub counters: Vec<PeerCounters>,
    pub stats: SimStats,
}

impl SimOutput {
    /// Encoded log bytes per node, all segments concatenated.
    pub fn node_logs(&self) -> Result<Vec<Vec<u8>>, WireError> {
        self.segments
            .iter()
            .map(|segs| {
                let mut out = Vec::new();
                for s in segs {
                    out.extend(s.to_bytes()?);
                }
                Ok(out)
            })
            .collect()
    }

    /// Writes `<dir>/<node>/<segment>.twplog` plus the roster line.
    pub fn write(&self, dir: &Path) -> Result<(), SimError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(ROSTER_FILE), format!("{}\n", self.roster.to_line()))?;
        for (i, segs) in self.segments.iter().enumerate() {
            for s in segs {
                write_segment(dir, NodeId(i as u8), s.index, &s.to_bytes()?)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum EventKind {
    Tick { node: u8, k: u64 },
    Deliver { from: u8, to: u8, bytes: [u8; 6] },
}

#[derive(Debug, Clone, Copy)]
struct Event {
    at: f64,
    order: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // reversed: BinaryHeap pops the earliest event, ties by insertion order
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.total_cmp(&self.at).then(other.order.cmp(&self.order))
    }
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Event>,
    order: u64,
    peers: Vec<Peer>,
    clocks: Vec<SimClock>,
    stats: SimStats,
}

impl Sim<'_> {
    fn push(&mut self, at: f64, kind: EventKind) {
        self.queue.push(Event { at, order: self.order, kind });
        self.order += 1;
    }

    fn now_local(&self, node: u8, at: f64) -> u64 {
        self.clocks[usize::from(node)].local_timestamp(self.cfg.start_epoch_ms, at)
    }

    fn schedule_tick(&mut self, node: u8, k: u64) {
        let local = (k * self.cfg.probe_interval_ms) as f64;
        let at = self.clocks[usize::from(node)].true_time(local).max(0.0);
        self.push(at, EventKind::Tick { node, k });
    }

    fn dispatch(&mut self, from: u8, at: f64, actions: Vec<Action>) {
        for Action::Send { to, msg } in actions {
            self.stats.datagrams_sent += 1;
            let link = self.cfg.link(NodeId(from), to);
            match transmit(&link, at, &mut self.rng) {
                Some(arrival) => self.push(arrival, EventKind::Deliver { from, to: to.0, bytes: msg.encode() }),
                None => self.stats.datagrams_lost += 1,
            }
        }
    }

    fn step(&mut self, ev: Event) -> Result<(), SimError> {
        match ev.kind {
            EventKind::Tick { node, k } => {
                let now = self.now_local(node, ev.at);
                let peer = &mut self.peers[usize::from(node)];
                peer.maybe_rotate(now);
                let actions = peer.on_tick(now);
                self.dispatch(node, ev.at, actions);
                if k + 1 < self.cfg.ticks {
                    self.schedule_tick(node, k + 1);
                }
            }
            EventKind::Deliver { from, to, bytes } => {
                let msg = TwpMessage::decode(&bytes)?;
                let now = self.now_local(to, ev.at);
                let peer = &mut self.peers[usize::from(to)];
                peer.maybe_rotate(now);
                let actions = peer.on_message(msg, NodeId(from), now);
                self.dispatch(to, ev.at, actions);
            }
        }
        Ok(())
    }
}

/// Runs the scenario to quiescence. Identical configs give identical output.
pub fn run_scenario(cfg: &SimConfig) -> Result<SimOutput, SimError> {
    cfg.validate()?;
    let n = cfg.nodes;
    let mut peers = Vec::with_capacity(n);
    for i in 0..n {
        let mut pc = PeerConfig::new(NodeId(i as u8), n).map_err(|e| SimError::Invalid(e.to_string()))?;
        pc.probe_interval_ms = cfg.probe_interval_ms;
        pc.pending_expiry_ms = cfg.pending_expiry_ms;
        pc.rotation_interval_ms = cfg.rotation_interval_ms;
        pc.epoch_ms = cfg.start_epoch_ms;
        peers.push(Peer::new(pc).map_err(|e| SimError::Invalid(e.to_string()))?);
    }
    let clocks: Vec<SimClock> = (0..n).map(|i| cfg.clock(NodeId(i as u8))).collect();
    let mut sim = Sim {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        queue: BinaryHeap::new(),
        order: 0,
        peers,
        clocks,
        stats: SimStats::default(),
    };
    if cfg.ticks > 0 {
        for node in 0..n {
            sim.schedule_tick(node as u8, 0);
        }
    }
    let mut last = 0.0;
    while let Some(ev) = sim.queue.pop() {
        last = ev.at;
        sim.step(ev)?;
    }

    let mut segments = Vec::with_capacity(n);
    let mut counters = Vec::with_capacity(n);
    for i in 0..n {
        let now = sim.now_local(i as u8, last);
        let peer = &mut sim.peers[i];
        if !peer.log().active().is_empty() || peer.log().next_index() == 0 {
            peer.rotate_log(now);
        }
        segments.push(std::iter::from_fn(|| peer.take_upload()).collect());
        counters.push(peer.counters());
    }
    Ok(SimOutput { roster: cfg.roster(), segments, counters, stats: sim.stats })
}
