//! Networked privacy peer.
//!
//! The peer joins the TLS mesh of privacy peers, accepts input peer
//! connections and then processes windows in the order their INPUT_SHARES
//! frames arrive. Before each window the privacy peers swap which input
//! peers delivered shares for which window, so that all of them run the
//! same window with the same participants. Absent input peers contribute
//! the neutral input as public constants.

use std::collections::{BTreeMap, VecDeque};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use privagg::harness::seeded_rng;
use privagg::transport::tls::{connect_mesh, hello, spawn_acceptor, Identity, Link, Session, TlsChannel, TlsMesh};
use privagg::{Engine, Exchange, Fe, Field, MsgType, Role, RoundBatch, TrafficStats, TransportError, WireFrame};
use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};

use crate::config::{load_trust, PeerConfig};
use crate::error::CliError;
use crate::output::{compute, render_log, write_file, WindowResult};
use crate::window::{neutral_values, shared_len, window_file};

/// Round number of the participant agreement frames between windows.
const AGREEMENT_ROUND: u32 = u32::MAX;
/// Window id proposed by a peer with no pending input.
const NO_WINDOW: u64 = u64::MAX;
/// Agreement slot carrying the number of input peers still connected.
const LIVE_SLOT: u32 = u32::MAX;

/// The mesh, shared between the engine and the agreement step.
#[derive(Clone)]
struct SharedMesh(Arc<Mutex<TlsMesh>>);

impl Exchange for SharedMesh {
    fn me(&self) -> usize {
        self.0.lock().expect("mesh lock").me()
    }

    fn peers(&self) -> usize {
        self.0.lock().expect("mesh lock").peers()
    }

    fn exchange(&mut self, window: u64, outgoing: Vec<RoundBatch>) -> Result<Vec<RoundBatch>, TransportError> {
        self.0.lock().expect("mesh lock").exchange(window, outgoing)
    }

    fn stats(&self) -> TrafficStats {
        self.0.lock().expect("mesh lock").stats()
    }
}

enum Inbound {
    Connected(usize, Arc<TlsChannel>),
    Frame(usize, WireFrame),
    Closed(usize, String),
}

fn forward(id: usize, chan: Arc<TlsChannel>, tx: Sender<Inbound>) {
    let _ = tx.send(Inbound::Connected(id, Arc::clone(&chan)));
    std::thread::spawn(move || loop {
        match chan.recv(Duration::from_secs(3600)) {
            Ok(frame) => {
                if tx.send(Inbound::Frame(id, frame)).is_err() {
                    return;
                }
            }
            Err(TransportError::Timeout(_)) => continue,
            Err(e) => {
                let _ = tx.send(Inbound::Closed(id, e.to_string()));
                return;
            }
        }
    });
}

fn route(links: Receiver<Result<Link, TransportError>>, tx: Sender<Inbound>) {
    std::thread::spawn(move || {
        for link in links {
            match link {
                Ok(link) if link.role == Role::Input => forward(link.id, Arc::new(link.channel), tx.clone()),
                Ok(link) => log::warn!("ignoring late connection from privacy peer {}", link.id),
                Err(e) => log::warn!("rejected inbound connection: {e}"),
            }
        }
    });
}

#[derive(Default)]
struct InputState {
    chan: Option<Arc<TlsChannel>>,
    queue: VecDeque<WireFrame>,
    done: bool,
}

impl InputState {
    fn live(&self) -> bool {
        self.chan.is_some() && !self.done
    }
}

struct Peer<'a> {
    cfg: &'a PeerConfig,
    field: Field,
    me: usize,
    mesh: SharedMesh,
    inbound: Receiver<Inbound>,
    inputs: BTreeMap<usize, InputState>,
}

impl Peer<'_> {
    fn handle(&mut self, ev: Inbound) {
        match ev {
            Inbound::Connected(id, chan) if id < self.cfg.n => {
                log::info!("input peer {id} connected");
                let st = self.inputs.entry(id).or_default();
                st.chan = Some(chan);
                st.done = false;
            }
            Inbound::Connected(id, _) => log::warn!("input peer {id} is outside 0..{}", self.cfg.n),
            Inbound::Frame(id, frame) => match frame.msg_type {
                MsgType::InputShares => self.inputs.entry(id).or_default().queue.push_back(frame),
                MsgType::Bye => {
                    log::info!("input peer {id} is done");
                    self.inputs.entry(id).or_default().done = true;
                }
                other => log::warn!("input peer {id} sent unexpected {other:?}"),
            },
            Inbound::Closed(id, why) => {
                log::info!("input peer {id} disconnected: {why}");
                if let Some(st) = self.inputs.get_mut(&id) {
                    st.done = true;
                }
            }
        }
    }

    /// Blocks until `ready` holds or `deadline` passes; returns whether it holds.
    fn wait_until(&mut self, deadline: Instant, ready: impl Fn(&Self) -> bool) -> bool {
        while !ready(self) {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.inbound.recv_timeout(left) {
                Ok(ev) => self.handle(ev),
                Err(RecvTimeoutError::Timeout) => return ready(self),
                Err(RecvTimeoutError::Disconnected) => return ready(self),
            }
        }
        // pick up whatever else is already queued
        while let Ok(ev) = self.inbound.try_recv() {
            self.handle(ev);
        }
        true
    }

    fn head_valid(&self, frame: &WireFrame) -> bool {
        let len = shared_len(self.cfg).unwrap_or(0);
        frame.entries.len() == len && frame.values().all(|v| v < self.field.p())
    }

    /// This peer's proposal: the oldest pending window and who delivered it.
    fn proposal(&self) -> (u64, Vec<usize>) {
        let w = self.inputs.values().filter_map(|s| s.queue.front()).map(|f| f.window_id).min().unwrap_or(NO_WINDOW);
        let present = self
            .inputs
            .iter()
            .filter(|(_, s)| s.queue.front().is_some_and(|f| f.window_id == w && self.head_valid(f)))
            .map(|(&id, _)| id)
            .collect();
        (w, present)
    }

    /// Swaps proposals with every other privacy peer. The agreed window is
    /// the smallest proposed; its participants are the input peers every
    /// privacy peer has shares from. The last value tells whether any
    /// privacy peer still has input peers connected.
    fn agree(&mut self, w: u64, present: &[usize]) -> Result<(u64, Vec<usize>, bool), CliError> {
        let live = self.inputs.values().filter(|s| s.live()).count() as u64;
        let mut entries: Vec<(u32, u64)> = present.iter().map(|&id| (id as u32, 1)).collect();
        entries.push((LIVE_SLOT, live));
        let frame = WireFrame::new(MsgType::RoundBatch, w, AGREEMENT_ROUND, entries);
        let mut mesh = self.mesh.0.lock().expect("mesh lock");
        let m = mesh.peers();
        let mut proposals = vec![(w, present.to_vec())];
        let mut any_live = live > 0;
        for j in (0..m).filter(|&j| j != self.me) {
            mesh.send_to(j, &frame).map_err(|e| CliError::Abort(e.to_string()))?;
        }
        for j in (0..m).filter(|&j| j != self.me) {
            let theirs = mesh.recv_from(j).map_err(|e| CliError::Abort(e.to_string()))?;
            if theirs.msg_type != MsgType::RoundBatch || theirs.round != AGREEMENT_ROUND {
                return Err(CliError::Abort(format!("privacy peer {j} is out of step: {:?}", theirs.msg_type)));
            }
            any_live |= theirs.entries.iter().any(|&(slot, v)| slot == LIVE_SLOT && v > 0);
            let ids = theirs.entries.iter().filter(|e| e.0 != LIVE_SLOT).map(|&(id, _)| id as usize);
            proposals.push((theirs.window_id, ids.collect()));
        }
        let agreed = proposals.iter().map(|p| p.0).min().unwrap_or(NO_WINDOW);
        let mut everyone: Vec<usize> = (0..self.cfg.n).collect();
        for (pw, ids) in &proposals {
            if *pw != agreed {
                everyone.clear();
            }
            everyone.retain(|id| ids.contains(id));
        }
        Ok((agreed, everyone, any_live))
    }

    fn send_to_inputs(&self, ids: &[usize], frames: &[WireFrame]) {
        for id in ids {
            let Some(chan) = self.inputs.get(id).and_then(|s| s.chan.as_ref()) else { continue };
            for f in frames {
                if let Err(e) = chan.send(f) {
                    log::warn!("could not send {:?} to input peer {id}: {e}", f.msg_type);
                }
            }
        }
    }
}

fn engine_rng(cfg: &PeerConfig) -> Box<dyn RngCore + Send> {
    match cfg.seed {
        Some(seed) => Box::new(seeded_rng(seed, cfg.id as u64)),
        None => Box::new(StdRng::from_entropy()),
    }
}

pub fn run_privacy_peer(cfg: &PeerConfig) -> Result<(), CliError> {
    let field = cfg.validate_common()?;
    let protocol = cfg.protocol()?;
    let m = cfg.m();
    let me = cfg.id;
    if me >= m {
        return Err(CliError::Validation(format!("privacy peer id {me} outside 0..{m}")));
    }
    let missing = |what: &str| CliError::Validation(format!("networked mode needs `{what}` in the config"));
    let identity = Identity::load(
        cfg.cert.as_deref().ok_or_else(|| missing("cert"))?,
        cfg.key.as_deref().ok_or_else(|| missing("key"))?,
    )
    .map_err(|e| CliError::Validation(format!("credentials: {e}")))?;
    let trust = load_trust(cfg.trusted.as_deref().ok_or_else(|| missing("trusted"))?)?;
    if trust.privacy.len() != m {
        return Err(CliError::Validation(format!(
            "trust file lists {} privacy peers, config {m}",
            trust.privacy.len()
        )));
    }
    let ours = hello(Role::Privacy, me, field.p(), m, cfg.n, cfg.window_secs, protocol.id(), cfg.config_hash(&field));
    let session = Session::new(identity, trust, ours, cfg.timeout())?;
    let listen = cfg.listen.clone().unwrap_or_else(|| cfg.privacy_peers[me].clone());
    let listener = TcpListener::bind(&listen).map_err(|e| CliError::Connection(format!("listen on {listen}: {e}")))?;
    log::info!("privacy peer {me} listening on {listen}, p = {} ({} bits)", field.p(), field.bits());

    let accepted = spawn_acceptor(Arc::clone(&session), listener);
    let mut early = Vec::new();
    let mut mesh = connect_mesh(&session, &cfg.privacy_peers, &accepted, &mut early)?;
    // a privacy peer may spend a whole timeout waiting for input before it
    // reaches the agreement step
    mesh.set_timeout(cfg.timeout() * 3);
    let mesh = SharedMesh(Arc::new(Mutex::new(mesh)));
    let (tx, inbound) = unbounded();
    for link in early {
        forward(link.id, Arc::new(link.channel), tx.clone());
    }
    route(accepted, tx);

    let mut engine = Engine::new(field, Box::new(mesh.clone()), engine_rng(cfg))?;
    let mut peer = Peer { cfg, field, me, mesh, inbound, inputs: BTreeMap::new() };

    let min_in = cfg.min_input_peers();
    let gate = Instant::now() + cfg.timeout();
    if !peer.wait_until(gate, |p| p.inputs.values().filter(|s| s.chan.is_some()).count() >= min_in) {
        let got = peer.inputs.values().filter(|s| s.chan.is_some()).count();
        let msg = format!("only {got} of the required {min_in} input peers connected within {} s", cfg.timeout_secs);
        log::error!("{msg}");
        return Err(CliError::Connection(msg));
    }
    log::info!("start gate passed: {min_in} input peers online");

    loop {
        let deadline = Instant::now() + cfg.timeout();
        peer.wait_until(deadline, |p| p.inputs.values().all(|s| !s.live() || !s.queue.is_empty()));
        let (w, present) = peer.proposal();
        let (w, participants, any_live) = peer.agree(w, &present)?;
        if w == NO_WINDOW {
            if !any_live {
                log::info!("all input peers are done");
                return Ok(());
            }
            continue;
        }
        let mut delivered = Vec::new();
        let mut shares: Vec<Vec<Fe>> = Vec::with_capacity(cfg.n);
        let mut frames: BTreeMap<usize, WireFrame> = BTreeMap::new();
        for (&id, st) in peer.inputs.iter_mut() {
            if let Some(f) = st.queue.pop_front_if(|f| f.window_id == w) {
                delivered.push(id);
                frames.insert(id, f);
            }
        }
        for i in 0..cfg.n {
            let values = match frames.get(&i) {
                Some(f) if participants.contains(&i) => f.values().collect(),
                _ => neutral_values(cfg, &field, i)?,
            };
            shares.push(values.into_iter().map(|v| field.elem(v)).collect());
        }
        let bye = WireFrame::new(MsgType::Bye, w, 0, Vec::new());
        if participants.len() < min_in {
            let msg = format!(
                "window {w}: only input peers {participants:?} delivered shares to every privacy peer, {min_in} required"
            );
            log::error!("{msg}");
            let _ = write_file(&window_file(&cfg.output_dir, w, "log"), &format!("aborted: {msg}\n"));
            peer.send_to_inputs(&delivered, &[bye]);
            return Err(CliError::Connection(msg));
        }
        log::info!("window {w}: participants {participants:?}");
        engine.set_window(w);
        let start = Instant::now();
        let output = match compute(&mut engine, cfg, &shares) {
            Ok(o) => o,
            Err(e) => {
                log::error!("window {w}: {e}");
                let _ = write_file(&window_file(&cfg.output_dir, w, "log"), &format!("aborted: {e}\n"));
                peer.send_to_inputs(&delivered, &[bye]);
                return Err(e);
            }
        };
        let wall = start.elapsed();
        let result = WindowResult { window: w, output, participants, stats: engine.last_stats() };
        write_file(&window_file(&cfg.output_dir, w, "result"), &result.render())?;
        write_file(&window_file(&cfg.output_dir, w, "log"), &render_log(cfg, me, &result, &engine.reveals(), wall))?;
        log::info!(
            "window {w} done in {:.3} s: {} mults, {} rounds",
            wall.as_secs_f64(),
            result.stats.mults,
            result.stats.rounds
        );
        let (values, disqualified) = result.output.encode();
        let mut out = Vec::new();
        if !disqualified.is_empty() {
            log::info!("window {w}: disqualified input peers {disqualified:?}");
            out.push(WireFrame::dense(MsgType::Disqualify, w, 0, &disqualified));
        }
        out.push(WireFrame::dense(MsgType::Result, w, 0, &values));
        peer.send_to_inputs(&delivered, &out);
    }
}
