//! Channels between privacy peers: the wire format, an in-process simulator
//! and a mutually authenticated TLS mesh.

pub mod sim;
pub mod tls;
pub mod wire;

use std::io;

use thiserror::Error;

use crate::field::Fe;
pub use wire::{Hello, MsgType, Role, WireError, WireFrame};

/// Everything one peer sends to one other peer in one round.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RoundBatch {
    pub round: u32,
    pub entries: Vec<(u32, Fe)>,
}

impl RoundBatch {
    pub fn new(round: u32) -> Self {
        RoundBatch { round, entries: Vec::new() }
    }

    pub fn to_frame(&self, window: u64) -> WireFrame {
        WireFrame::new(
            MsgType::RoundBatch,
            window,
            self.round,
            self.entries.iter().map(|&(s, v)| (s, v.value())).collect(),
        )
    }

    /// Field membership of the values is checked by the engine, which knows `p`.
    pub fn from_frame(frame: WireFrame) -> Self {
        RoundBatch { round: frame.round, entries: frame.entries.into_iter().map(|(s, v)| (s, Fe(v))).collect() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrafficStats {
    pub frames_sent: u64,
    pub bytes_sent: u64,
    pub frames_received: u64,
    pub bytes_received: u64,
}

impl TrafficStats {
    pub fn since(&self, earlier: &TrafficStats) -> TrafficStats {
        TrafficStats {
            frames_sent: self.frames_sent - earlier.frames_sent,
            bytes_sent: self.bytes_sent - earlier.bytes_sent,
            frames_received: self.frames_received - earlier.frames_received,
            bytes_received: self.bytes_received - earlier.bytes_received,
        }
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("peer {0} disconnected")]
    PeerDisconnected(usize),
    #[error("desync with peer {peer}: expected window {window} round {expected}, got {got}")]
    DesyncDetected { peer: usize, window: u64, expected: u32, got: String },
    #[error("timed out waiting for {0}")]
    Timeout(String),
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("peer {peer} speaks protocol version {theirs}")]
    VersionMismatch { peer: usize, theirs: u8 },
    #[error("peer {peer} uses prime {theirs}, expected {ours}")]
    PrimeMismatch { peer: usize, ours: u64, theirs: u64 },
    #[error("peer {peer} configuration differs: {what}")]
    ConfigMismatch { peer: usize, what: String },
    #[error("tls: {0}")]
    Tls(String),
    #[error(transparent)]
    Wire(WireError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<WireError> for TransportError {
    fn from(e: WireError) -> Self {
        match e {
            WireError::UnsupportedVersion(v) => TransportError::VersionMismatch { peer: usize::MAX, theirs: v },
            WireError::Io(io) => TransportError::Io(io),
            other => TransportError::Wire(other),
        }
    }
}

/// Round-synchronous exchange among the `m` privacy peers.
pub trait Exchange {
    /// This peer's slot.
    fn me(&self) -> usize;

    /// Number of privacy peers.
    fn peers(&self) -> usize;

    /// Sends `outgoing[j]` to every peer `j != me` and blocks until one batch
    /// for the same `(window, round)` has arrived from every other peer.
    /// The returned vector is indexed by sender; the own entry is
    /// `outgoing[me]`, which never touches the wire.
    fn exchange(&mut self, window: u64, outgoing: Vec<RoundBatch>) -> Result<Vec<RoundBatch>, TransportError>;

    fn stats(&self) -> TrafficStats;
}

impl<T: Exchange + ?Sized> Exchange for Box<T> {
    fn me(&self) -> usize {
        (**self).me()
    }

    fn peers(&self) -> usize {
        (**self).peers()
    }

    fn exchange(&mut self, window: u64, outgoing: Vec<RoundBatch>) -> Result<Vec<RoundBatch>, TransportError> {
        (**self).exchange(window, outgoing)
    }

    fn stats(&self) -> TrafficStats {
        (**self).stats()
    }
}

/// Checks that a received frame is the round batch the barrier is waiting for.
pub(crate) fn expect_batch(frame: &WireFrame, peer: usize, window: u64, round: u32) -> Result<(), TransportError> {
    if frame.msg_type != MsgType::RoundBatch || frame.window_id != window || frame.round != round {
        return Err(TransportError::DesyncDetected {
            peer,
            window,
            expected: round,
            got: format!("{:?} window {} round {}", frame.msg_type, frame.window_id, frame.round),
        });
    }
    Ok(())
}
