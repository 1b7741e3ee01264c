//! In-process transport. Frames are encoded exactly as on the wire and pushed
//! through crossbeam channels, one per ordered pair of peers.

use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{expect_batch, Exchange, RoundBatch, TrafficStats, TransportError, WireFrame};

/// Per-message delivery delay.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Latency {
    #[default]
    None,
    Fixed(Duration),
    /// Uniform in `[min, max]`, drawn from the session seed.
    Uniform {
        min: Duration,
        max: Duration,
    },
}

struct Packet {
    seq: u64,
    deliver_at: Instant,
    bytes: Vec<u8>,
}

pub struct SimEndpoint {
    me: usize,
    m: usize,
    to: Vec<Option<Sender<Packet>>>,
    from: Vec<Option<Receiver<Packet>>>,
    next_seq_out: Vec<u64>,
    next_seq_in: Vec<u64>,
    // deliveries on one channel never overtake each other
    last_delivery: Vec<Instant>,
    latency: Latency,
    rng: ChaCha20Rng,
    timeout: Duration,
    stats: TrafficStats,
}

/// Builds a fully connected set of `m` endpoints. Endpoint `i` is meant to be
/// moved to the thread running privacy peer `i`.
pub fn simulator_transport(m: usize, seed: u64, latency: Latency) -> Vec<SimEndpoint> {
    let mut senders: Vec<Vec<Option<Sender<Packet>>>> = (0..m).map(|_| (0..m).map(|_| None).collect()).collect();
    let mut receivers: Vec<Vec<Option<Receiver<Packet>>>> = (0..m).map(|_| (0..m).map(|_| None).collect()).collect();
    for from in 0..m {
        for to in 0..m {
            if from != to {
                let (tx, rx) = unbounded();
                senders[from][to] = Some(tx);
                receivers[to][from] = Some(rx);
            }
        }
    }
    let now = Instant::now();
    senders
        .into_iter()
        .zip(receivers)
        .enumerate()
        .map(|(me, (to, from))| SimEndpoint {
            me,
            m,
            to,
            from,
            next_seq_out: vec![0; m],
            next_seq_in: vec![0; m],
            last_delivery: vec![now; m],
            latency,
            rng: ChaCha20Rng::seed_from_u64(seed ^ (me as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
            timeout: Duration::from_secs(120),
            stats: TrafficStats::default(),
        })
        .collect()
}

impl SimEndpoint {
    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    fn delay(&mut self) -> Duration {
        match self.latency {
            Latency::None => Duration::ZERO,
            Latency::Fixed(d) => d,
            Latency::Uniform { min, max } => {
                let span = max.saturating_sub(min).as_nanos() as u64;
                min + Duration::from_nanos(if span == 0 { 0 } else { self.rng.gen_range(0..=span) })
            }
        }
    }

    fn send(&mut self, to: usize, frame: &WireFrame) -> Result<(), TransportError> {
        let bytes = frame.encode();
        let delay = self.delay();
        let deliver_at = (Instant::now() + delay).max(self.last_delivery[to]);
        self.last_delivery[to] = deliver_at;
        let seq = self.next_seq_out[to];
        self.next_seq_out[to] += 1;
        self.stats.frames_sent += 1;
        self.stats.bytes_sent += bytes.len() as u64;
        let tx = self.to[to].as_ref().expect("channel to every other peer");
        tx.send(Packet { seq, deliver_at, bytes }).map_err(|_| TransportError::PeerDisconnected(to))
    }

    fn recv(&mut self, from: usize) -> Result<WireFrame, TransportError> {
        let rx = self.from[from].as_ref().expect("channel from every other peer");
        let packet = match rx.recv_timeout(self.timeout) {
            Ok(p) => p,
            Err(RecvTimeoutError::Disconnected) => return Err(TransportError::PeerDisconnected(from)),
            Err(RecvTimeoutError::Timeout) => {
                return Err(TransportError::Timeout(format!("round batch from peer {from}")))
            }
        };
        assert_eq!(packet.seq, self.next_seq_in[from], "simulator channel reordered frames");
        self.next_seq_in[from] += 1;
        let now = Instant::now();
        if packet.deliver_at > now {
            std::thread::sleep(packet.deliver_at - now);
        }
        self.stats.frames_received += 1;
        self.stats.bytes_received += packet.bytes.len() as u64;
        Ok(WireFrame::decode(&packet.bytes)?)
    }
}

impl Exchange for SimEndpoint {
    fn me(&self) -> usize {
        self.me
    }

    fn peers(&self) -> usize {
        self.m
    }

    fn exchange(&mut self, window: u64, mut outgoing: Vec<RoundBatch>) -> Result<Vec<RoundBatch>, TransportError> {
        assert_eq!(outgoing.len(), self.m);
        let round = outgoing[self.me].round;
        for (to, batch) in outgoing.iter().enumerate() {
            if to != self.me {
                self.send(to, &batch.to_frame(window))?;
            }
        }
        let mut incoming = Vec::with_capacity(self.m);
        for (from, own) in outgoing.iter_mut().enumerate() {
            if from == self.me {
                incoming.push(std::mem::take(own));
                continue;
            }
            let frame = self.recv(from)?;
            expect_batch(&frame, from, window, round)?;
            incoming.push(RoundBatch::from_frame(frame));
        }
        Ok(incoming)
    }

    fn stats(&self) -> TrafficStats {
        self.stats
    }
}
