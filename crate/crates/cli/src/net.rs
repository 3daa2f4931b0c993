//! Real-network drivers: a TCP coordinator and a UDP peer. Each runs one
//! owner thread that applies every state change; socket readers only feed it
//! through a channel.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::path::Path;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;

use twp_core::coordinator::{ControlMsg, Coordinator, ExperimentState, Grant, Roster};
use twp_core::peer::{Action, Peer, PeerConfig};
use twp_core::simnet::ROSTER_FILE;
use twp_core::wire::{decode_log, segment_path, write_segment, NodeId, TwpMessage, MESSAGE_LEN};

use crate::error::CliError;
use crate::{CoordArgs, PeerArgs};

/// Gap between the START message and tick 0.
const START_DELAY_MS: u64 = 1000;
const POLL: Duration = Duration::from_millis(50);

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn send_line(stream: &mut TcpStream, msg: &ControlMsg) -> std::io::Result<()> {
    stream.write_all(format!("{msg}\n").as_bytes())
}

/// Forwards each line of `stream` to `tx`, then `None` at end of stream.
fn spawn_line_reader<T: Send + 'static>(stream: TcpStream, tx: Sender<T>, wrap: impl Fn(Option<String>) -> T + Send + 'static) {
    thread::spawn(move || {
        for line in BufReader::new(stream).lines() {
            match line {
                Ok(l) => {
                    if tx.send(wrap(Some(l))).is_err() {
                        return;
                    }
                }
                Err(_) => break,
            }
        }
        let _ = tx.send(wrap(None));
    });
}

enum CoordEvent {
    Open(usize, TcpStream),
    Line(usize, Option<String>),
}

struct CoordState {
    coord: Coordinator,
    conns: HashMap<usize, TcpStream>,
    node_of: HashMap<usize, String>,
    queued_segment: BTreeMap<NodeId, u64>,
    epoch_ms: u64,
    first_register: Option<Instant>,
    out_dir: std::path::PathBuf,
}

impl CoordState {
    fn reply(&mut self, conn: usize, msg: &ControlMsg) {
        if let Some(s) = self.conns.get_mut(&conn) {
            if send_line(s, msg).is_err() {
                self.conns.remove(&conn);
            }
        }
    }

    fn conn_of(&self, node: NodeId) -> Option<usize> {
        let addr = self.coord.build_roster().ok()?.addresses.get(node.index())?.clone();
        self.node_of.iter().filter(|(c, a)| **a == addr && self.conns.contains_key(c)).map(|(c, _)| *c).max()
    }

    fn node(&self, conn: usize) -> Option<NodeId> {
        self.node_of.get(&conn).and_then(|a| self.coord.id_of(a))
    }

    fn begin(&mut self) -> Result<(), CliError> {
        let roster = self.coord.start().map_err(|e| CliError::Runtime(e.to_string()))?;
        self.epoch_ms = now_ms() + START_DELAY_MS;
        eprintln!("starting with {} peers", roster.len());
        let conns: Vec<usize> = self.node_of.keys().copied().collect();
        for c in conns {
            self.reply(c, &ControlMsg::Roster(roster.clone()));
            self.reply(c, &ControlMsg::Start { epoch_ms: self.epoch_ms });
        }
        Ok(())
    }

    fn handle(&mut self, conn: usize, line: &str) {
        let msg = match line.parse::<ControlMsg>() {
            Ok(m) => m,
            Err(e) => return self.reply(conn, &ControlMsg::Err { reason: e.to_string() }),
        };
        let err = |e: &dyn std::fmt::Display| ControlMsg::Err { reason: e.to_string() };
        match msg {
            ControlMsg::Register { addr } => match self.coord.register(&addr) {
                Ok(id) => {
                    self.first_register.get_or_insert_with(Instant::now);
                    self.node_of.insert(conn, addr);
                    self.reply(conn, &ControlMsg::Id { id });
                    if self.coord.state() != ExperimentState::Registering {
                        let roster = self.coord.build_roster().expect("running");
                        self.reply(conn, &ControlMsg::Roster(roster));
                        self.reply(conn, &ControlMsg::Start { epoch_ms: self.epoch_ms });
                        if self.coord.state() == ExperimentState::Finalizing {
                            self.reply(conn, &ControlMsg::Stop);
                        }
                    }
                }
                Err(e) => self.reply(conn, &err(&e)),
            },
            ControlMsg::RosterRequest => match self.coord.build_roster() {
                Ok(r) => self.reply(conn, &ControlMsg::Roster(r)),
                Err(e) => self.reply(conn, &err(&e)),
            },
            ControlMsg::UploadReq { segment } => {
                let Some(node) = self.node(conn) else {
                    return self.reply(conn, &ControlMsg::Err { reason: "not registered".into() });
                };
                match self.coord.grant_upload(node) {
                    Ok(Grant::Granted) => self.reply(conn, &ControlMsg::UploadGrant { segment }),
                    Ok(Grant::Queued) => {
                        self.queued_segment.insert(node, segment);
                    }
                    Err(e) => self.reply(conn, &err(&e)),
                }
            }
            ControlMsg::UploadDone { segment, payload } => {
                let Some(node) = self.node(conn) else {
                    return self.reply(conn, &ControlMsg::Err { reason: "not registered".into() });
                };
                let stored = B64
                    .decode(payload.as_bytes())
                    .map_err(|e| e.to_string())
                    .and_then(|bytes| decode_log(&bytes).map(|_| bytes).map_err(|e| e.to_string()))
                    .and_then(|bytes| write_segment(&self.out_dir, node, segment, &bytes).map_err(|e| e.to_string()));
                if let Err(reason) = stored {
                    eprintln!("segment {segment} from node {node} rejected: {reason}");
                    self.reply(conn, &ControlMsg::Err { reason });
                }
                if let Ok(Some(next)) = self.coord.release_upload(node) {
                    if let (Some(seg), Some(c)) = (self.queued_segment.remove(&next), self.conn_of(next)) {
                        self.reply(c, &ControlMsg::UploadGrant { segment: seg });
                    }
                }
            }
            ControlMsg::Bye => {
                if let Some(node) = self.node(conn) {
                    let _ = self.coord.mark_done(node);
                }
            }
            other => self.reply(conn, &ControlMsg::Err { reason: format!("unexpected {}", other.verb()) }),
        }
    }
}

pub fn coord(a: CoordArgs) -> Result<(), CliError> {
    if a.interval_ms == 0 {
        return Err(CliError::Usage("--interval-ms must be positive".into()));
    }
    let listener = TcpListener::bind(&a.listen)?;
    eprintln!("listening on {}", listener.local_addr()?);
    fs::create_dir_all(&a.out_dir)?;
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (i, stream) in listener.incoming().enumerate() {
            let Ok(stream) = stream else { continue };
            let Ok(reader) = stream.try_clone() else { continue };
            if tx.send(CoordEvent::Open(i, stream)).is_err() {
                return;
            }
            spawn_line_reader(reader, tx.clone(), move |l| CoordEvent::Line(i, l));
        }
    });

    let mut st = CoordState {
        coord: Coordinator::new(a.interval_ms, a.max_uploads),
        conns: HashMap::new(),
        node_of: HashMap::new(),
        queued_segment: BTreeMap::new(),
        epoch_ms: 0,
        first_register: None,
        out_dir: a.out_dir.clone(),
    };
    let mut started: Option<Instant> = None;
    let mut stopped: Option<Instant> = None;
    loop {
        match rx.recv_timeout(POLL) {
            Ok(CoordEvent::Open(i, s)) => {
                st.conns.insert(i, s);
            }
            Ok(CoordEvent::Line(i, Some(line))) => st.handle(i, &line),
            Ok(CoordEvent::Line(i, None)) => {
                st.conns.remove(&i);
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return Err(CliError::Runtime("listener stopped".into())),
        }
        match st.coord.state() {
            ExperimentState::Registering => {
                let full = a.expect.is_some_and(|n| st.coord.len() >= n);
                let window = a.expect.is_none()
                    && st.coord.len() >= 2
                    && st.first_register.is_some_and(|t| t.elapsed() >= Duration::from_secs(a.register_s));
                if full || window {
                    st.begin()?;
                    started = Some(Instant::now());
                }
            }
            ExperimentState::Running => {
                let run_for = Duration::from_millis(START_DELAY_MS) + Duration::from_secs(a.duration);
                if started.is_some_and(|t| t.elapsed() >= run_for) {
                    for node in st.coord.finalize() {
                        if let Some(c) = st.conn_of(node) {
                            st.reply(c, &ControlMsg::Stop);
                        }
                    }
                    stopped = Some(Instant::now());
                }
            }
            ExperimentState::Finalizing => {
                let roster = st.coord.build_roster().expect("finalizing");
                if st.coord.all_done() {
                    fs::write(a.out_dir.join(ROSTER_FILE), format!("{}\n", roster.to_line()))?;
                    eprintln!("all {} peers done", roster.len());
                    return Ok(());
                }
                if stopped.is_some_and(|t| t.elapsed() >= Duration::from_secs(a.grace_s)) {
                    fs::write(a.out_dir.join(ROSTER_FILE), format!("{}\n", roster.to_line()))?;
                    return Err(CliError::Runtime("timed out waiting for final uploads".into()));
                }
            }
        }
    }
}

enum PeerEvent {
    Control(Option<String>),
    Datagram { bytes: Vec<u8>, from: SocketAddr, at: u64 },
}

fn recv_control(rx: &Receiver<PeerEvent>) -> Result<ControlMsg, CliError> {
    loop {
        match rx.recv() {
            Ok(PeerEvent::Control(Some(line))) => {
                return line.parse().map_err(|e| CliError::Runtime(format!("coordinator sent {line:?}: {e}")));
            }
            Ok(PeerEvent::Control(None)) | Err(_) => return Err(CliError::Runtime("coordinator closed the connection".into())),
            Ok(PeerEvent::Datagram { .. }) => {}
        }
    }
}

/// First segment index not yet present under `log_dir` for `node`.
fn next_free_segment(log_dir: &Path, node: NodeId) -> u64 {
    (0..).find(|&i| !segment_path(log_dir, node, i).exists()).unwrap_or(0)
}

struct Uploads {
    queue: VecDeque<(u64, Vec<u8>)>,
    requested: bool,
}

impl Uploads {
    fn pump(&mut self, ctl: &mut TcpStream) -> Result<(), CliError> {
        if !self.requested {
            if let Some((idx, _)) = self.queue.front() {
                send_line(ctl, &ControlMsg::UploadReq { segment: *idx })?;
                self.requested = true;
            }
        }
        Ok(())
    }
}

pub fn peer(a: PeerArgs) -> Result<(), CliError> {
    let sock = UdpSocket::bind(&a.listen)?;
    let me_addr = sock.local_addr()?;
    let mut ctl = TcpStream::connect(&a.coordinator)?;
    let (tx, rx) = mpsc::channel();
    spawn_line_reader(ctl.try_clone()?, tx.clone(), PeerEvent::Control);
    send_line(&mut ctl, &ControlMsg::Register { addr: me_addr.to_string() })?;

    let mut roster: Option<Roster> = None;
    let epoch_ms = loop {
        match recv_control(&rx)? {
            ControlMsg::Id { id } => eprintln!("registered as {id} (provisional)"),
            ControlMsg::Roster(r) => roster = Some(r),
            ControlMsg::Start { epoch_ms } => break epoch_ms,
            ControlMsg::Err { reason } => return Err(CliError::Runtime(format!("coordinator: {reason}"))),
            other => return Err(CliError::Runtime(format!("unexpected {} before START", other.verb()))),
        }
    };
    let roster = roster.ok_or_else(|| CliError::Runtime("START before ROSTER".into()))?;
    let me = roster
        .id_of(&me_addr.to_string())
        .ok_or_else(|| CliError::Runtime(format!("{me_addr} is not in the roster")))?;
    if a.interval_ms.is_some_and(|i| i != roster.probe_interval_ms) {
        return Err(CliError::Usage(format!("coordinator probes every {} ms", roster.probe_interval_ms)));
    }
    let addrs: Vec<SocketAddr> = roster
        .addresses
        .iter()
        .map(|s| s.parse().map_err(|_| CliError::Runtime(format!("bad roster address {s}"))))
        .collect::<Result<_, _>>()?;
    let by_addr: HashMap<SocketAddr, NodeId> = addrs.iter().enumerate().map(|(i, a)| (*a, NodeId(i as u8))).collect();

    let mut cfg = PeerConfig::new(me, roster.len()).map_err(|e| CliError::Runtime(e.to_string()))?;
    cfg.probe_interval_ms = roster.probe_interval_ms;
    cfg.pending_expiry_ms = a.expiry_ms;
    cfg.rotation_interval_ms = a.rotate_s.max(1) * 1000;
    cfg.epoch_ms = epoch_ms;
    let mut peer = Peer::new(cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    peer.log_mut().skip_to(next_free_segment(&a.log_dir, me));
    eprintln!("node {me} of {}, tick 0 at {epoch_ms}", roster.len());

    let udp_in = sock.try_clone()?;
    thread::spawn(move || {
        let mut buf = [0u8; 64];
        while let Ok((n, from)) = udp_in.recv_from(&mut buf) {
            let ev = PeerEvent::Datagram { bytes: buf[..n].to_vec(), from, at: now_ms() };
            if tx.send(ev).is_err() {
                return;
            }
        }
    });

    let ship = |actions: Vec<Action>| {
        for Action::Send { to, msg } in actions {
            let _ = sock.send_to(&msg.encode(), addrs[to.index()]);
        }
    };
    let mut uploads = Uploads { queue: VecDeque::new(), requested: false };
    let collect = |peer: &mut Peer, uploads: &mut Uploads| -> Result<(), CliError> {
        while let Some(seg) = peer.take_upload() {
            let bytes = seg.to_bytes().map_err(|e| CliError::Runtime(e.to_string()))?;
            write_segment(&a.log_dir, me, seg.index, &bytes)?;
            uploads.queue.push_back((seg.index, bytes));
        }
        Ok(())
    };

    let mut drain_until: Option<u64> = None;
    let mut sealed_final = false;
    loop {
        let now = now_ms();
        if drain_until.is_none() {
            let k = peer.tick_index(now);
            let due = peer.tick_due(k);
            if now >= due && now >= epoch_ms {
                ship(peer.on_tick(now));
            }
        }
        if let Some(until) = drain_until {
            if now >= until && !sealed_final {
                peer.rotate_log(now);
                sealed_final = true;
            }
        } else {
            peer.maybe_rotate(now);
        }
        collect(&mut peer, &mut uploads)?;
        uploads.pump(&mut ctl)?;
        if sealed_final && uploads.queue.is_empty() {
            send_line(&mut ctl, &ControlMsg::Bye)?;
            let c = peer.counters();
            eprintln!("done: {} rounds started, {} late, {} duplicate", c.rounds_started, c.late, c.duplicate);
            return Ok(());
        }

        let wait = if drain_until.is_some() {
            POLL
        } else {
            let next = peer.tick_due(peer.tick_index(now) + 1).max(epoch_ms);
            Duration::from_millis(next.saturating_sub(now).clamp(1, 1000))
        };
        match rx.recv_timeout(wait) {
            Ok(PeerEvent::Datagram { bytes, from, at }) => {
                if bytes.len() != MESSAGE_LEN {
                    continue;
                }
                if let (Ok(msg), Some(&id)) = (TwpMessage::decode(&bytes), by_addr.get(&from)) {
                    ship(peer.on_message(msg, id, at));
                }
            }
            Ok(PeerEvent::Control(Some(line))) => match line.parse::<ControlMsg>() {
                Ok(ControlMsg::Stop) => {
                    drain_until.get_or_insert(now_ms() + a.drain_ms);
                }
                Ok(ControlMsg::UploadGrant { segment }) => {
                    if let Some(pos) = uploads.queue.iter().position(|(i, _)| *i == segment) {
                        let (idx, bytes) = uploads.queue.remove(pos).expect("position found");
                        send_line(&mut ctl, &ControlMsg::UploadDone { segment: idx, payload: B64.encode(bytes) })?;
                    }
                    uploads.requested = false;
                }
                Ok(ControlMsg::Err { reason }) => eprintln!("coordinator: {reason}"),
                Ok(_) => {}
                Err(e) => eprintln!("ignoring control line {line:?}: {e}"),
            },
            Ok(PeerEvent::Control(None)) => {
                peer.rotate_log(now_ms());
                collect(&mut peer, &mut uploads)?;
                return Err(CliError::Runtime(format!(
                    "lost the coordinator; segments kept under {}",
                    a.log_dir.display()
                )));
            }
            Err(_) => {}
        }
    }
}
