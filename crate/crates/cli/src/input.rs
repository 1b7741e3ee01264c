//! Networked input peer.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use privagg::harness::{seeded_rng, share_inputs, INPUT_STREAM};
use privagg::transport::tls::{dial, hello, Identity, Link, Session};
use privagg::{Field, MsgType, Role, TransportError, WireFrame};
use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};

use crate::config::{load_trust, PeerConfig};
use crate::error::CliError;
use crate::output::{write_file, WindowOutput};
use crate::window::{list_windows, read_window, to_values, validate, window_file};

struct Connected {
    field: Field,
    links: Vec<Link>,
    rng: Box<dyn RngCore + Send>,
}

fn connect(cfg: &PeerConfig) -> Result<Connected, CliError> {
    let field = cfg.validate_common()?;
    let protocol = cfg.protocol()?;
    let m = cfg.m();
    if cfg.id >= cfg.n {
        return Err(CliError::Validation(format!("input peer id {} outside 0..{}", cfg.id, cfg.n)));
    }
    let missing = |what: &str| CliError::Validation(format!("networked mode needs `{what}` in the config"));
    let identity = Identity::load(
        cfg.cert.as_deref().ok_or_else(|| missing("cert"))?,
        cfg.key.as_deref().ok_or_else(|| missing("key"))?,
    )
    .map_err(|e| CliError::Validation(format!("credentials: {e}")))?;
    let trust = load_trust(cfg.trusted.as_deref().ok_or_else(|| missing("trusted"))?)?;
    let ours = hello(Role::Input, cfg.id, field.p(), m, cfg.n, cfg.window_secs, protocol.id(), cfg.config_hash(&field));
    let session = Session::new(identity, trust, ours, cfg.timeout())?;
    let mut links = Vec::with_capacity(m);
    for (j, addr) in cfg.privacy_peers.iter().enumerate() {
        links.push(dial_retrying(&session, addr, j, cfg.timeout())?);
    }
    log::info!("input peer {} connected to {m} privacy peers", cfg.id);
    let rng: Box<dyn RngCore + Send> = match cfg.seed {
        Some(seed) => Box::new(seeded_rng(seed ^ cfg.id as u64, INPUT_STREAM)),
        None => Box::new(StdRng::from_entropy()),
    };
    Ok(Connected { field, links, rng })
}

/// Privacy peers may still be starting; refused connections are retried
/// until `timeout`. Authentication and parameter mismatches are final.
fn dial_retrying(session: &Session, addr: &str, j: usize, timeout: Duration) -> Result<Link, CliError> {
    let deadline = Instant::now() + timeout;
    loop {
        match dial(session, addr, Role::Privacy, j) {
            Ok(link) => return Ok(link),
            Err(TransportError::Io(e)) if Instant::now() < deadline => {
                log::debug!("privacy peer {j} at {addr} not reachable yet: {e}");
                std::thread::sleep(Duration::from_millis(100));
            }
            Err(e) => return Err(CliError::Connection(format!("privacy peer {j} at {addr}: {e}"))),
        }
    }
}

/// Loads and checks one window file.
fn load(cfg: &PeerConfig, field: &Field, path: &Path) -> Result<Vec<u64>, CliError> {
    let input = read_window(cfg.protocol()?, path)?;
    validate(cfg, field, cfg.id, &input, path)?;
    to_values(cfg, field, cfg.id, &input)
}

impl Connected {
    /// Shares one window, waits for every privacy peer's result and writes it.
    fn window(&mut self, cfg: &PeerConfig, w: u64, values: &[u64]) -> Result<WindowOutput, CliError> {
        let m = self.links.len();
        let dealt = share_inputs(&self.field, m, &[values.to_vec()], &mut self.rng)?;
        for (j, link) in self.links.iter().enumerate() {
            let shares: Vec<u64> = dealt[j][0].iter().map(|s| s.value()).collect();
            link.channel
                .send(&WireFrame::dense(MsgType::InputShares, w, 0, &shares))
                .map_err(|e| CliError::Connection(format!("privacy peer {j}: {e}")))?;
        }
        // privacy peers may wait a full timeout for slower input peers first
        let wait = cfg.timeout() * 3;
        let mut results = Vec::with_capacity(m);
        for (j, link) in self.links.iter().enumerate() {
            let mut disqualified = Vec::new();
            let values = loop {
                let frame = link.channel.recv(wait).map_err(|e| match e {
                    TransportError::Timeout(_) => CliError::Connection(format!("no result from privacy peer {j}: {e}")),
                    e => CliError::Abort(format!("privacy peer {j}: {e}")),
                })?;
                match frame.msg_type {
                    MsgType::Disqualify if frame.window_id == w => disqualified = frame.values().collect(),
                    MsgType::Result if frame.window_id == w => break frame.values().collect::<Vec<_>>(),
                    MsgType::Bye => {
                        return Err(CliError::Abort(format!("privacy peer {j} aborted window {}", frame.window_id)))
                    }
                    other => log::warn!("privacy peer {j}: ignoring {other:?} for window {}", frame.window_id),
                }
            };
            results.push((values, disqualified));
        }
        if results.iter().any(|r| *r != results[0]) {
            return Err(CliError::Abort(format!("window {w}: privacy peers returned different results")));
        }
        let (values, disqualified) = &results[0];
        let out = WindowOutput::decode(cfg.protocol()?, cfg.params.q, values, disqualified)
            .ok_or_else(|| CliError::Abort(format!("window {w}: malformed result")))?;
        if disqualified.contains(&(cfg.id as u64)) {
            log::warn!("window {w}: this input peer was disqualified");
        }
        write_file(&window_file(&cfg.output_dir, w, "result"), &out.render())?;
        log::info!("window {w}: {}", out.render().trim_end().replace('\n', " | "));
        Ok(out)
    }

    fn finish(self) {
        for link in &self.links {
            let _ = link.channel.send(&WireFrame::new(MsgType::Bye, 0, 0, Vec::new()));
        }
    }
}

/// Processes every `window_<id>.csv` in `input_dir` in ascending order.
/// All files are parsed and validated before any connection is made.
pub fn run_input_peer(cfg: &PeerConfig) -> Result<BTreeMap<u64, WindowOutput>, CliError> {
    let field = cfg.validate_common()?;
    if !cfg.input_dir.is_dir() {
        return Err(CliError::Validation(format!("input directory {} does not exist", cfg.input_dir.display())));
    }
    let mut windows = Vec::new();
    for (w, path) in list_windows(&cfg.input_dir)? {
        windows.push((w, load(cfg, &field, &path)?));
    }
    if windows.is_empty() {
        log::warn!("no window files in {}", cfg.input_dir.display());
    }
    let mut conn = connect(cfg)?;
    let mut out = BTreeMap::new();
    for (w, values) in windows {
        out.insert(w, conn.window(cfg, w, &values)?);
    }
    conn.finish();
    Ok(out)
}

/// Clock-driven mode: window `id` covers `[id * window_secs, (id + 1) * window_secs)`
/// in Unix time. When a window ends, its file is read (if present) and
/// shared. Runs until interrupted.
pub fn run_input_peer_realtime(cfg: &PeerConfig) -> Result<(), CliError> {
    let field = cfg.validate_common()?;
    if cfg.window_secs == 0 {
        return Err(CliError::Validation("window_secs must be positive".into()));
    }
    let mut conn = connect(cfg)?;
    loop {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default().as_secs();
        let current = now / cfg.window_secs;
        let end = (current + 1) * cfg.window_secs;
        std::thread::sleep(Duration::from_secs(end - now));
        let path = cfg.input_dir.join(format!("window_{current}.csv"));
        if !path.exists() {
            log::warn!("window {current}: no input file {}, skipped", path.display());
            continue;
        }
        let values = load(cfg, &field, &path)?;
        conn.window(cfg, current, &values)?;
    }
}
