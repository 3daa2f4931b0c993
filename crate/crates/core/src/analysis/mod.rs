//! From per-node event logs to rounds, delays, loss and per-link statistics.
//!
//! A round is identified by `(initiator, responder, seq)`. Each event is
//! taken only from its owner's log (the sender for sends, the receiver for
//! receives), so RTTs use one clock and one-way delays compare two.

mod daily;
mod export;
mod stats;

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::peer::{initiator_of, ScheduleError};
use crate::wire::{seq_less_than, CorruptLog, Direction, LogRecord, LogStoreError, MessageType, NodeId};

pub use daily::{daily_aggregate, date_string, day_of, DailyStats, LinkSeries, DAY_MS};
pub use export::{read_link_stats, write_outputs, CdfMetric, ExportOptions};
pub use stats::{
    asymmetry_summary, cdf_points, descriptive_stats, quantile_sorted, relative_asymmetry, AsymmetrySummary,
    DescriptiveStats,
};

/// Events of one key further apart than this belong to different rounds.
pub const ROUND_GAP_MS: u64 = 600_000;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("empty input")]
    EmptyInput,
    #[error("non-positive one-way delay (fwd {fwd} ms, rev {rev} ms)")]
    NonPositiveDelay { fwd: f64, rev: f64 },
    #[error(transparent)]
    CorruptLog(#[from] CorruptLog),
    #[error(transparent)]
    Store(#[from] LogStoreError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Timestamp slots of a round, in protocol order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    PingSend,
    PingRecv,
    PingAckSend,
    PingAckRecv,
    AckSend,
    AckRecv,
}

impl Slot {
    fn of(kind: MessageType, dir: Direction) -> Slot {
        match (kind, dir) {
            (MessageType::Ping, Direction::Send) => Slot::PingSend,
            (MessageType::Ping, Direction::Recv) => Slot::PingRecv,
            (MessageType::PingAck, Direction::Send) => Slot::PingAckSend,
            (MessageType::PingAck, Direction::Recv) => Slot::PingAckRecv,
            (MessageType::Ack, Direction::Send) => Slot::AckSend,
            (MessageType::Ack, Direction::Recv) => Slot::AckRecv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwpRound {
    pub initiator: NodeId,
    pub responder: NodeId,
    pub seq: u32,
    pub ping_send: Option<u64>,
    pub ping_recv: Option<u64>,
    pub ping_ack_send: Option<u64>,
    pub ping_ack_recv: Option<u64>,
    pub ack_send: Option<u64>,
    pub ack_recv: Option<u64>,
}

impl TwpRound {
    pub fn new(initiator: NodeId, responder: NodeId, seq: u32) -> Self {
        TwpRound {
            initiator,
            responder,
            seq,
            ping_send: None,
            ping_recv: None,
            ping_ack_send: None,
            ping_ack_recv: None,
            ack_send: None,
            ack_recv: None,
        }
    }

    pub fn get(&self, slot: Slot) -> Option<u64> {
        match slot {
            Slot::PingSend => self.ping_send,
            Slot::PingRecv => self.ping_recv,
            Slot::PingAckSend => self.ping_ack_send,
            Slot::PingAckRecv => self.ping_ack_recv,
            Slot::AckSend => self.ack_send,
            Slot::AckRecv => self.ack_recv,
        }
    }

    fn slot_mut(&mut self, slot: Slot) -> &mut Option<u64> {
        match slot {
            Slot::PingSend => &mut self.ping_send,
            Slot::PingRecv => &mut self.ping_recv,
            Slot::PingAckSend => &mut self.ping_ack_send,
            Slot::PingAckRecv => &mut self.ping_ack_recv,
            Slot::AckSend => &mut self.ack_send,
            Slot::AckRecv => &mut self.ack_recv,
        }
    }

    /// PING send time, or the earliest event if that is missing.
    pub fn wall_time(&self) -> u64 {
        self.ping_send.unwrap_or_else(|| {
            [self.ping_recv, self.ping_ack_send, self.ping_ack_recv, self.ack_send, self.ack_recv]
                .into_iter()
                .flatten()
                .min()
                .unwrap_or(0)
        })
    }

    /// (sender, receiver, send slot, receive slot) for each message.
    fn messages(&self) -> [(MessageType, NodeId, NodeId, Slot, Slot); 3] {
        let (a, b) = (self.initiator, self.responder);
        [
            (MessageType::Ping, a, b, Slot::PingSend, Slot::PingRecv),
            (MessageType::PingAck, b, a, Slot::PingAckSend, Slot::PingAckRecv),
            (MessageType::Ack, a, b, Slot::AckSend, Slot::AckRecv),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossEvent {
    pub src: NodeId,
    pub dst: NodeId,
    pub seq: u32,
    pub kind: MessageType,
    pub sent_at: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// Ordered by wall time, then initiator, responder and seq.
    pub rounds: Vec<TwpRound>,
    pub losses: Vec<LossEvent>,
    /// Receives with no send in the sender's log.
    pub orphan_receives: u64,
    /// Records found in a log that does not own them, or naming nodes outside
    /// the roster, or contradicting the initiator rule.
    pub rejected: u64,
    /// Per directed link, receives whose seq precedes an earlier receive of
    /// the same message type.
    pub reordered: BTreeMap<(NodeId, NodeId), u64>,
}

fn pair_roles(r: &LogRecord, n: usize) -> Option<(NodeId, NodeId)> {
    if r.src.index() >= n || r.dst.index() >= n || r.src == r.dst {
        return None;
    }
    let a = initiator_of(r.src, r.dst, n).ok()?;
    let b = if a == r.src { r.dst } else { r.src };
    let from_initiator = r.src == a;
    (from_initiator == r.kind.is_forward()).then_some((a, b))
}

/// Joins the logs of a mesh of `n` nodes into rounds and loss events.
pub fn match_rounds(logs: &[(NodeId, Vec<LogRecord>)], n: usize) -> Result<MatchResult, AnalysisError> {
    if !(2..=256).contains(&n) {
        return Err(ScheduleError::BadRosterSize(n).into());
    }
    let mut out = MatchResult::default();
    let mut by_key: HashMap<(NodeId, NodeId, u32), Vec<(u64, Slot)>> = HashMap::new();
    for (node, records) in logs {
        let mut newest: HashMap<(NodeId, MessageType), u32> = HashMap::new();
        for r in records {
            let Some((a, b)) = pair_roles(r, n).filter(|_| r.owner() == *node) else {
                out.rejected += 1;
                continue;
            };
            by_key.entry((a, b, r.seq)).or_default().push((r.timestamp_ms, Slot::of(r.kind, r.direction)));
            if r.direction == Direction::Recv {
                match newest.get(&(r.src, r.kind)) {
                    Some(&top) if seq_less_than(r.seq, top) => {
                        *out.reordered.entry((r.src, r.dst)).or_default() += 1;
                    }
                    _ => {
                        newest.insert((r.src, r.kind), r.seq);
                    }
                }
            }
        }
    }

    for ((a, b, seq), mut events) in by_key {
        events.sort();
        let mut current: Option<(u64, TwpRound)> = None;
        for (ts, slot) in events {
            let fresh = match &current {
                Some((start, round)) => round.get(slot).is_some() || ts.saturating_sub(*start) > ROUND_GAP_MS,
                None => true,
            };
            if fresh {
                if let Some((_, done)) = current.take() {
                    out.rounds.push(done);
                }
                current = Some((ts, TwpRound::new(a, b, seq)));
            }
            if let Some((_, round)) = current.as_mut() {
                *round.slot_mut(slot) = Some(ts);
            }
        }
        if let Some((_, done)) = current {
            out.rounds.push(done);
        }
    }
    out.rounds.sort_by_key(|r| (r.wall_time(), r.initiator, r.responder, r.seq));

    for round in &out.rounds {
        for (kind, src, dst, send, recv) in round.messages() {
            match (round.get(send), round.get(recv)) {
                (Some(sent_at), None) => out.losses.push(LossEvent { src, dst, seq: round.seq, kind, sent_at }),
                (None, Some(_)) => out.orphan_receives += 1,
                _ => {}
            }
        }
    }
    Ok(out)
}

fn diff(later: Option<u64>, earlier: Option<u64>) -> Option<f64> {
    Some(later? as f64 - earlier? as f64)
}

/// (rtt_ab, rtt_ba): each measured on a single node's clock.
pub fn compute_rtt(r: &TwpRound) -> (Option<f64>, Option<f64>) {
    (diff(r.ping_ack_recv, r.ping_send), diff(r.ack_recv, r.ping_ack_send))
}

/// (fwd, rev, fwd_check): signed one-way delays across the two clocks.
pub fn compute_oneway(r: &TwpRound) -> (Option<f64>, Option<f64>, Option<f64>) {
    (diff(r.ping_recv, r.ping_send), diff(r.ping_ack_recv, r.ping_ack_send), diff(r.ack_recv, r.ack_send))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSample {
    pub initiator: NodeId,
    pub responder: NodeId,
    pub seq: u32,
    pub wall_time_ms: u64,
    pub rtt_ab_ms: Option<f64>,
    pub rtt_ba_ms: Option<f64>,
    pub fwd_delay_ms: Option<f64>,
    pub rev_delay_ms: Option<f64>,
    pub fwd_check_ms: Option<f64>,
}

impl LinkSample {
    pub fn of(r: &TwpRound) -> Self {
        let (rtt_ab_ms, rtt_ba_ms) = compute_rtt(r);
        let (fwd_delay_ms, rev_delay_ms, fwd_check_ms) = compute_oneway(r);
        LinkSample {
            initiator: r.initiator,
            responder: r.responder,
            seq: r.seq,
            wall_time_ms: r.wall_time(),
            rtt_ab_ms,
            rtt_ba_ms,
            fwd_delay_ms,
            rev_delay_ms,
            fwd_check_ms,
        }
    }

    /// Relative asymmetry of this round's PING and PING-ACK delays.
    pub fn asymmetry(&self) -> Option<Result<f64, AnalysisError>> {
        Some(relative_asymmetry(self.fwd_delay_ms?, self.rev_delay_ms?))
    }
}

/// Statistics of the directed link `src -> dst`: RTTs measured at `src`
/// toward `dst`, and the datagrams `src` sent to `dst`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub src: u8,
    pub dst: u8,
    pub count: usize,
    pub mean_ms: Option<f64>,
    pub sd_ms: Option<f64>,
    pub cv: Option<f64>,
    pub min_ms: Option<f64>,
    pub q25_ms: Option<f64>,
    pub q50_ms: Option<f64>,
    pub q75_ms: Option<f64>,
    pub q90_ms: Option<f64>,
    pub q95_ms: Option<f64>,
    pub q99_ms: Option<f64>,
    pub max_ms: Option<f64>,
    pub sent: u64,
    pub lost: u64,
    pub loss_fraction: Option<f64>,
    pub owd_count: usize,
    pub owd_mean_ms: Option<f64>,
    /// One-way samples ≤ 0, a sign of clock error.
    pub owd_nonpositive: usize,
    pub reordered: u64,
}

impl LinkStats {
    pub fn new(src: NodeId, dst: NodeId, rtt: Option<&DescriptiveStats>) -> Self {
        LinkStats {
            src: src.0,
            dst: dst.0,
            count: rtt.map_or(0, |d| d.count),
            mean_ms: rtt.map(|d| d.mean),
            sd_ms: rtt.map(|d| d.sd),
            cv: rtt.map(|d| d.cv),
            min_ms: rtt.map(|d| d.min),
            q25_ms: rtt.map(|d| d.q25),
            q50_ms: rtt.map(|d| d.q50),
            q75_ms: rtt.map(|d| d.q75),
            q90_ms: rtt.map(|d| d.q90),
            q95_ms: rtt.map(|d| d.q95),
            q99_ms: rtt.map(|d| d.q99),
            max_ms: rtt.map(|d| d.max),
            sent: 0,
            lost: 0,
            loss_fraction: None,
            owd_count: 0,
            owd_mean_ms: None,
            owd_nonpositive: 0,
            reordered: 0,
        }
    }

    pub fn link(&self) -> (NodeId, NodeId) {
        (NodeId(self.src), NodeId(self.dst))
    }
}

/// Everything observed on one directed link.
#[derive(Debug, Clone, Default)]
pub struct LinkData {
    pub series: LinkSeries,
    /// One-way delays of datagrams `src` sent to `dst`.
    pub owd: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AsymmetryRow {
    /// `None` for the all-pairs row.
    pub pair: Option<(NodeId, NodeId)>,
    pub excluded: usize,
    pub summary: Option<AsymmetrySummary>,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub n_nodes: usize,
    pub matched: MatchResult,
    pub samples: Vec<LinkSample>,
    pub links: BTreeMap<(NodeId, NodeId), LinkData>,
    pub link_stats: Vec<LinkStats>,
    pub daily: Vec<DailyStats>,
    pub asymmetry: Vec<AsymmetryRow>,
}

impl Analysis {
    pub fn stats_for(&self, src: NodeId, dst: NodeId) -> Option<&LinkStats> {
        self.link_stats.iter().find(|s| s.link() == (src, dst))
    }

    /// Per-pair mean relative asymmetry, for pairs with any usable sample.
    pub fn pair_asymmetry_means(&self) -> Vec<f64> {
        self.asymmetry.iter().filter(|r| r.pair.is_some()).filter_map(|r| r.summary.map(|s| s.mean)).collect()
    }
}

/// Link statistics over `data`, optionally dropping RTTs above the link's
/// own `trim_q` quantile.
pub fn link_stats(src: NodeId, dst: NodeId, data: &LinkData, reordered: u64, trim_q: Option<f64>) -> LinkStats {
    let mut rtts: Vec<f64> = data.series.rtt.iter().map(|&(_, r)| r).collect();
    if let (Some(q), false) = (trim_q, rtts.is_empty()) {
        let mut sorted = rtts.clone();
        sorted.sort_by(f64::total_cmp);
        let cut = quantile_sorted(&sorted, q);
        rtts.retain(|&r| r <= cut);
    }
    let d = descriptive_stats(&rtts).ok();
    let mut s = LinkStats::new(src, dst, d.as_ref());
    s.sent = data.series.sends.len() as u64;
    s.lost = data.series.sends.iter().filter(|&&(_, l)| l).count() as u64;
    s.loss_fraction = (s.sent > 0).then(|| s.lost as f64 / s.sent as f64);
    s.owd_count = data.owd.len();
    s.owd_mean_ms = (!data.owd.is_empty()).then(|| data.owd.iter().sum::<f64>() / data.owd.len() as f64);
    s.owd_nonpositive = data.owd.iter().filter(|&&d| d <= 0.0).count();
    s.reordered = reordered;
    s
}

fn collect_links(matched: &MatchResult, samples: &[LinkSample]) -> BTreeMap<(NodeId, NodeId), LinkData> {
    fn slot(links: &mut BTreeMap<(NodeId, NodeId), LinkData>, src: NodeId, dst: NodeId) -> &mut LinkData {
        links.entry((src, dst)).or_insert_with(|| LinkData {
            series: LinkSeries { src, dst, ..LinkSeries::default() },
            owd: Vec::new(),
        })
    }
    let mut links = BTreeMap::new();
    for (round, s) in matched.rounds.iter().zip(samples) {
        let (a, b) = (s.initiator, s.responder);
        let t = s.wall_time_ms;
        if let Some(r) = s.rtt_ab_ms {
            slot(&mut links, a, b).series.rtt.push((t, r));
        }
        if let Some(r) = s.rtt_ba_ms {
            slot(&mut links, b, a).series.rtt.push((t, r));
        }
        for d in [s.fwd_delay_ms, s.fwd_check_ms].into_iter().flatten() {
            slot(&mut links, a, b).owd.push(d);
        }
        if let Some(d) = s.rev_delay_ms {
            slot(&mut links, b, a).owd.push(d);
        }
        for (_, src, dst, send, recv) in round.messages() {
            if let Some(at) = round.get(send) {
                slot(&mut links, src, dst).series.sends.push((at, round.get(recv).is_none()));
            }
        }
    }
    links
}

fn asymmetry_rows(samples: &[LinkSample]) -> Vec<AsymmetryRow> {
    let mut per_pair: BTreeMap<(NodeId, NodeId), (Vec<f64>, usize)> = BTreeMap::new();
    for s in samples {
        let Some(res) = s.asymmetry() else { continue };
        let e = per_pair.entry((s.initiator, s.responder)).or_default();
        match res {
            Ok(v) => e.0.push(v),
            Err(_) => e.1 += 1,
        }
    }
    let mut all = Vec::new();
    let mut all_excluded = 0;
    let mut rows: Vec<AsymmetryRow> = per_pair
        .into_iter()
        .map(|(pair, (vals, excluded))| {
            all.extend_from_slice(&vals);
            all_excluded += excluded;
            AsymmetryRow { pair: Some(pair), excluded, summary: asymmetry_summary(&vals).ok() }
        })
        .collect();
    rows.push(AsymmetryRow { pair: None, excluded: all_excluded, summary: asymmetry_summary(&all).ok() });
    rows
}

/// Full pipeline over a mesh of `n_nodes`.
pub fn analyze(logs: &[(NodeId, Vec<LogRecord>)], n_nodes: usize, trim_q: Option<f64>) -> Result<Analysis, AnalysisError> {
    let matched = match_rounds(logs, n_nodes)?;
    let samples: Vec<LinkSample> = matched.rounds.iter().map(LinkSample::of).collect();
    let links = collect_links(&matched, &samples);
    let link_stats: Vec<LinkStats> = links
        .par_iter()
        .map(|(&(src, dst), data)| {
            let reordered = matched.reordered.get(&(src, dst)).copied().unwrap_or(0);
            link_stats(src, dst, data, reordered, trim_q)
        })
        .collect();
    let series: Vec<LinkSeries> = links.values().map(|d| d.series.clone()).collect();
    let daily = daily_aggregate(&series);
    let asymmetry = asymmetry_rows(&samples);
    Ok(Analysis { n_nodes, matched, samples, links, link_stats, daily, asymmetry })
}
