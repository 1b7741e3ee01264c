//! Round-based execution of MPC operations at one privacy peer.
//!
//! Protocols are written as `async` functions over a [`Ctx`]. Awaiting a
//! primitive (multiplication, reconstruction, random sharing) registers its
//! request in the round currently being assembled. The executor polls the
//! top-level future until every branch is blocked, then performs one
//! exchange with all peers carrying every registered request, and repeats.
//! Parallel operations therefore share rounds as long as they are combined
//! with a combinator that polls all of its children ([`join_all`],
//! `futures::join!`).

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::future::Future;
use std::pin::{pin, Pin};
use std::task::{Context, Poll, Waker};

use rand::RngCore;
use thiserror::Error;

use crate::field::{Fe, Field};
use crate::sharing::{share_into, Degree, Interpolator, SharingError};
use crate::transport::{Exchange, RoundBatch, TrafficStats, TransportError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Sharing(#[from] SharingError),
    #[error("protocol desync with peer {peer}: {detail}")]
    ProtocolDesync { peer: usize, detail: String },
    #[error("reconstruction of slot {slot} in round {round}: shares are not on one polynomial")]
    InconsistentShares { round: u32, slot: usize },
    #[error("random draw failed {0} times in a row")]
    RetryExhausted(u32),
    #[error("operation id {0} already scheduled")]
    DuplicateId(u64),
    #[error("operation ids are not dense: expected {expected}, found {found}")]
    NonDenseIds { expected: u64, found: u64 },
    #[error("invalid operation: {0}")]
    InvalidOperation(String),
    #[error("computation stalled without pending requests")]
    Stalled,
    #[error("transport serves peer {transport_me} of {transport_m}, engine expects {me} of {m}")]
    PeerMismatch { me: usize, m: usize, transport_me: usize, transport_m: usize },
}

/// Why a value was reconstructed. Protocol outputs carry a label; the
/// others are masked intermediates of the comparison subprotocols.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RevealKind {
    /// `r²` for a random `r`, during random bit generation.
    RandomSquare,
    /// Whether a bitwise random candidate lies below `p`.
    CandidateValid,
    /// `x + r` for a uniformly random `r` during LSB extraction.
    Masked,
    /// A value the protocol publishes, e.g. a sum or a verification bit.
    Output(&'static str),
    /// Caller-level reconstruction through [`Operation::Reconstruct`].
    Requested,
}

impl RevealKind {
    pub fn is_internal(self) -> bool {
        matches!(self, RevealKind::RandomSquare | RevealKind::CandidateValid | RevealKind::Masked)
    }
}

/// A group of values reconstructed together.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reveal {
    pub kind: RevealKind,
    /// Round of the batch, counted from 1.
    pub round: u32,
    /// Kept for outputs only; internal reveals record their count.
    pub values: Vec<Fe>,
    pub count: usize,
}

/// Invocation counts of the composite operations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub multiply: u64,
    pub equal: u64,
    pub less_than: u64,
    pub short_range: u64,
    pub prefix_or: u64,
    pub bitlt_public: u64,
    pub lsb: u64,
    pub random_bit: u64,
    pub bitwise_random: u64,
}

impl OpCounts {
    fn add(&mut self, o: &OpCounts) {
        self.multiply += o.multiply;
        self.equal += o.equal;
        self.less_than += o.less_than;
        self.short_range += o.short_range;
        self.prefix_or += o.prefix_or;
        self.bitlt_public += o.bitlt_public;
        self.lsb += o.lsb;
        self.random_bit += o.random_bit;
        self.bitwise_random += o.bitwise_random;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Multiply,
    Equal,
    LessThan,
    ShortRange,
    PrefixOr,
    BitLtPublic,
    Lsb,
    RandomBit,
    BitwiseRandom,
}

/// Counters for one batch (or, accumulated, for a whole session).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    pub rounds: u64,
    /// Distributed multiplications, including those spent on discarded random candidates.
    pub mults: u64,
    /// Multiplications spent on random values that were drawn but not used.
    pub discarded_mults: u64,
    pub opens: u64,
    pub random_sharings: u64,
    pub entries_sent: u64,
    pub traffic: TrafficStats,
    pub ops: OpCounts,
}

impl Stats {
    /// Multiplications attributable to the operations themselves.
    pub fn productive_mults(&self) -> u64 {
        self.mults - self.discarded_mults
    }

    pub fn accumulate(&mut self, o: &Stats) {
        self.rounds += o.rounds;
        self.mults += o.mults;
        self.discarded_mults += o.discarded_mults;
        self.opens += o.opens;
        self.random_sharings += o.random_sharings;
        self.entries_sent += o.entries_sent;
        self.traffic.frames_sent += o.traffic.frames_sent;
        self.traffic.bytes_sent += o.traffic.bytes_sent;
        self.traffic.frames_received += o.traffic.frames_received;
        self.traffic.bytes_received += o.traffic.bytes_received;
        self.ops.add(&o.ops);
    }
}

enum Request {
    Mul(Fe),
    Random,
    Open(Fe, RevealKind),
}

struct State {
    rng: Box<dyn RngCore + Send>,
    pending: Vec<Request>,
    /// Rounds completed in the current batch.
    round: u32,
    /// Results of the last completed round, by slot.
    results: Vec<Fe>,
    stats: Stats,
    reveals: Vec<Reveal>,
    failure: Option<EngineError>,
}

/// Per-peer view of a running computation, handed to protocol code.
pub struct Ctx {
    field: Field,
    me: usize,
    degree: Degree,
    interp: Interpolator,
    state: RefCell<State>,
}

impl Ctx {
    pub fn field(&self) -> &Field {
        &self.field
    }

    /// This peer's share slot.
    pub fn me(&self) -> usize {
        self.me
    }

    pub fn degree(&self) -> Degree {
        self.degree
    }

    /// Local share of the public constant `c` (every slot holds `c`).
    pub fn constant(&self, c: u64) -> Fe {
        self.field.elem(c)
    }

    pub fn count_op(&self, kind: OpKind, n: usize) {
        let mut st = self.state.borrow_mut();
        let ops = &mut st.stats.ops;
        let slot = match kind {
            OpKind::Multiply => &mut ops.multiply,
            OpKind::Equal => &mut ops.equal,
            OpKind::LessThan => &mut ops.less_than,
            OpKind::ShortRange => &mut ops.short_range,
            OpKind::PrefixOr => &mut ops.prefix_or,
            OpKind::BitLtPublic => &mut ops.bitlt_public,
            OpKind::Lsb => &mut ops.lsb,
            OpKind::RandomBit => &mut ops.random_bit,
            OpKind::BitwiseRandom => &mut ops.bitwise_random,
        };
        *slot += n as u64;
    }

    /// Records multiplications that produced values nobody uses.
    pub fn note_discarded(&self, mults: u64) {
        self.state.borrow_mut().stats.discarded_mults += mults;
    }

    /// Aborts the computation at the next round boundary.
    pub fn fail(&self, err: EngineError) {
        let mut st = self.state.borrow_mut();
        if st.failure.is_none() {
            st.failure = Some(err);
        }
    }

    /// Draws from the peer's generator. Only for local randomness that does
    /// not have to agree across peers.
    pub fn with_rng<T>(&self, f: impl FnOnce(&mut dyn RngCore) -> T) -> T {
        f(&mut *self.state.borrow_mut().rng)
    }

    fn submit(&self, reqs: Vec<Request>) -> Prim<'_> {
        Prim { ctx: self, reqs: Some(reqs), ticket: None }
    }

    /// Distributed multiplication of each pair; one round.
    pub async fn mul(&self, pairs: impl IntoIterator<Item = (Fe, Fe)>) -> Vec<Fe> {
        let f = self.field;
        let reqs: Vec<Request> = pairs.into_iter().map(|(a, b)| Request::Mul(f.mul(a, b))).collect();
        self.state.borrow_mut().stats.mults += reqs.len() as u64;
        self.submit(reqs).await
    }

    pub async fn mul1(&self, a: Fe, b: Fe) -> Fe {
        self.mul([(a, b)]).await[0]
    }

    /// Reconstructs every value at every peer; one round.
    pub async fn open(&self, shares: impl IntoIterator<Item = Fe>, kind: RevealKind) -> Vec<Fe> {
        let reqs: Vec<Request> = shares.into_iter().map(|s| Request::Open(s, kind)).collect();
        self.state.borrow_mut().stats.opens += reqs.len() as u64;
        self.submit(reqs).await
    }

    pub async fn open1(&self, share: Fe, kind: RevealKind) -> Fe {
        self.open([share], kind).await[0]
    }

    /// `n` sharings of values no coalition of `t` peers knows; one round.
    pub async fn random(&self, n: usize) -> Vec<Fe> {
        self.state.borrow_mut().stats.random_sharings += n as u64;
        self.submit((0..n).map(|_| Request::Random).collect()).await
    }
}

/// Future of one primitive request group.
struct Prim<'a> {
    ctx: &'a Ctx,
    reqs: Option<Vec<Request>>,
    ticket: Option<(u32, usize, usize)>,
}

impl Future for Prim<'_> {
    type Output = Vec<Fe>;

    fn poll(mut self: Pin<&mut Self>, _cx: &mut Context<'_>) -> Poll<Vec<Fe>> {
        if let Some(reqs) = self.reqs.take() {
            if reqs.is_empty() {
                return Poll::Ready(Vec::new());
            }
            let mut st = self.ctx.state.borrow_mut();
            let start = st.pending.len();
            let len = reqs.len();
            st.pending.extend(reqs);
            let due = st.round + 1;
            drop(st);
            self.ticket = Some((due, start, len));
            return Poll::Pending;
        }
        let (due, start, len) = self.ticket.expect("polled after completion");
        let st = self.ctx.state.borrow();
        if st.round >= due {
            debug_assert_eq!(st.round, due, "result of an earlier round was not collected");
            Poll::Ready(st.results[start..start + len].to_vec())
        } else {
            Poll::Pending
        }
    }
}

/// Runs all futures concurrently, polling every unfinished one on each poll,
/// and returns their outputs in order.
pub fn join_all<F: Future>(futs: impl IntoIterator<Item = F>) -> JoinAll<F> {
    JoinAll { slots: futs.into_iter().map(|f| JoinSlot::Running(Box::pin(f))).collect() }
}

enum JoinSlot<F: Future> {
    Running(Pin<Box<F>>),
    Done(Option<F::Output>),
}

pub struct JoinAll<F: Future> {
    slots: Vec<JoinSlot<F>>,
}

impl<F: Future> Unpin for JoinAll<F> {}

impl<F: Future> Future for JoinAll<F> {
    type Output = Vec<F::Output>;

    fn poll(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<Self::Output> {
        let mut all_done = true;
        for slot in self.slots.iter_mut() {
            if let JoinSlot::Running(f) = slot {
                match f.as_mut().poll(cx) {
                    Poll::Ready(v) => *slot = JoinSlot::Done(Some(v)),
                    Poll::Pending => all_done = false,
                }
            }
        }
        if !all_done {
            return Poll::Pending;
        }
        Poll::Ready(
            self.slots
                .iter_mut()
                .map(|s| match s {
                    JoinSlot::Done(v) => v.take().expect("output taken once"),
                    JoinSlot::Running(_) => unreachable!(),
                })
                .collect(),
        )
    }
}

/// An operand of a comparison: a local share or a public constant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Operand {
    Shared(Fe),
    Public(u64),
}

/// A schedulable unit of work, mirroring the id-based interface of the
/// engine: schedule several operations, run them together, read results.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Operation {
    Multiply(Fe, Fe),
    Reconstruct(Fe),
    RandomSharing,
    RandomBit,
    BitwiseRandom,
    Equal(Fe, Fe),
    LessThan(Operand, Operand),
    ShortRange { value: Fe, lo: u64, hi: u64 },
    PrefixOr(Vec<Fe>),
    BitLtPublic { c: u64, bits: Vec<Fe> },
    Lsb(Fe),
}

/// Result of a finished operation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OpOutput {
    Share(Fe),
    Shares(Vec<Fe>),
    Public(Fe),
    Bitwise(crate::compare::BitwiseSharing),
}

impl OpOutput {
    /// The single share, for operations that produce one.
    pub fn share(&self) -> Option<Fe> {
        match self {
            OpOutput::Share(s) => Some(*s),
            _ => None,
        }
    }

    pub fn public(&self) -> Option<Fe> {
        match self {
            OpOutput::Public(v) => Some(*v),
            _ => None,
        }
    }
}

/// The engine of one privacy peer.
pub struct Engine {
    ctx: Ctx,
    transport: Box<dyn Exchange + Send>,
    window: u64,
    scheduled: BTreeMap<u64, Operation>,
    results: BTreeMap<u64, OpOutput>,
    last: Stats,
    total: Stats,
}

impl Engine {
    pub fn new(
        field: Field,
        transport: Box<dyn Exchange + Send>,
        rng: Box<dyn RngCore + Send>,
    ) -> Result<Self, EngineError> {
        let m = transport.peers();
        let me = transport.me();
        if me >= m {
            return Err(EngineError::PeerMismatch { me, m, transport_me: me, transport_m: m });
        }
        let degree = Degree::new(m)?;
        let ctx = Ctx {
            field,
            me,
            degree,
            interp: Interpolator::new(field, degree),
            state: RefCell::new(State {
                rng,
                pending: Vec::new(),
                round: 0,
                results: Vec::new(),
                stats: Stats::default(),
                reveals: Vec::new(),
                failure: None,
            }),
        };
        Ok(Engine {
            ctx,
            transport,
            window: 0,
            scheduled: BTreeMap::new(),
            results: BTreeMap::new(),
            last: Stats::default(),
            total: Stats::default(),
        })
    }

    pub fn field(&self) -> &Field {
        &self.ctx.field
    }

    pub fn me(&self) -> usize {
        self.ctx.me
    }

    pub fn degree(&self) -> Degree {
        self.ctx.degree
    }

    /// Selects the time window that tags all following frames.
    pub fn set_window(&mut self, window: u64) {
        self.window = window;
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    /// Queues `op` under `id`. Nothing is sent until [`Engine::do_operations`].
    pub fn schedule(&mut self, id: u64, op: Operation) -> Result<(), EngineError> {
        if self.scheduled.contains_key(&id) {
            return Err(EngineError::DuplicateId(id));
        }
        self.scheduled.insert(id, op);
        Ok(())
    }

    /// Runs every scheduled operation in parallel until all are finished.
    /// Results of the previous batch are discarded.
    pub fn do_operations(&mut self) -> Result<(), EngineError> {
        let ops = std::mem::take(&mut self.scheduled);
        self.results.clear();
        if let Some((&base, _)) = ops.iter().next() {
            for (offset, &id) in ops.keys().enumerate() {
                let expected = base + offset as u64;
                if id != expected {
                    return Err(EngineError::NonDenseIds { expected, found: id });
                }
            }
        }
        let ops: Vec<(u64, Operation)> = ops.into_iter().collect();
        let out = self.run(async |ctx: &Ctx| crate::compare::run_operations(ctx, ops).await)?;
        self.results = out.into_iter().collect();
        Ok(())
    }

    /// Result of operation `id` from the last batch.
    pub fn result(&self, id: u64) -> Option<&OpOutput> {
        self.results.get(&id)
    }

    /// Runs one protocol future to completion, starting a fresh batch.
    pub fn run<T>(&mut self, f: impl AsyncFnOnce(&Ctx) -> T) -> Result<T, EngineError> {
        {
            let mut st = self.ctx.state.borrow_mut();
            st.round = 0;
            st.pending.clear();
            st.results.clear();
            st.stats = Stats::default();
            st.reveals.clear();
            st.failure = None;
        }
        let traffic_before = self.transport.stats();
        let ctx = &self.ctx;
        let transport = &mut self.transport;
        let window = self.window;
        let outcome = drive(ctx, transport.as_mut(), window, f(ctx));
        let mut st = self.ctx.state.borrow_mut();
        st.stats.traffic = self.transport.stats().since(&traffic_before);
        self.last = st.stats;
        self.total.accumulate(&st.stats);
        outcome
    }

    /// Counters of the last batch.
    pub fn last_stats(&self) -> Stats {
        self.last
    }

    /// Counters accumulated over the engine's lifetime.
    pub fn total_stats(&self) -> Stats {
        self.total
    }

    /// Distributed multiplications in the last batch.
    pub fn mult_counter(&self) -> u64 {
        self.last.mults
    }

    /// Communication rounds in the last batch.
    pub fn round_counter(&self) -> u64 {
        self.last.rounds
    }

    /// Values reconstructed during the last batch.
    pub fn reveals(&self) -> Vec<Reveal> {
        self.ctx.state.borrow().reveals.clone()
    }
}

fn drive<T>(
    ctx: &Ctx,
    transport: &mut (dyn Exchange + Send),
    window: u64,
    fut: impl Future<Output = T>,
) -> Result<T, EngineError> {
    let mut fut = pin!(fut);
    let mut cx = Context::from_waker(Waker::noop());
    loop {
        let polled = fut.as_mut().poll(&mut cx);
        if let Some(err) = ctx.state.borrow_mut().failure.take() {
            return Err(err);
        }
        match polled {
            Poll::Ready(v) => return Ok(v),
            Poll::Pending => {
                let reqs = std::mem::take(&mut ctx.state.borrow_mut().pending);
                if reqs.is_empty() {
                    return Err(EngineError::Stalled);
                }
                run_round(ctx, transport, window, reqs)?;
            }
        }
    }
}

fn run_round(
    ctx: &Ctx,
    transport: &mut (dyn Exchange + Send),
    window: u64,
    reqs: Vec<Request>,
) -> Result<(), EngineError> {
    let field = ctx.field;
    let m = ctx.degree.peers();
    let t = ctx.degree.threshold();
    let me = ctx.me;
    let round = ctx.state.borrow().round + 1;

    let mut outgoing: Vec<RoundBatch> =
        (0..m).map(|_| RoundBatch { round, entries: Vec::with_capacity(reqs.len()) }).collect();
    {
        let mut st = ctx.state.borrow_mut();
        let rng = &mut *st.rng;
        let mut shares = Vec::with_capacity(m);
        for (slot, req) in reqs.iter().enumerate() {
            let slot = slot as u32;
            match *req {
                Request::Mul(d) => share_into(&field, d, t, m, rng, &mut shares),
                Request::Random => {
                    let r = field.random(rng);
                    share_into(&field, r, t, m, rng, &mut shares)
                }
                Request::Open(s, _) => {
                    for b in outgoing.iter_mut() {
                        b.entries.push((slot, s));
                    }
                    continue;
                }
            }
            for (b, &v) in outgoing.iter_mut().zip(&shares) {
                b.entries.push((slot, v));
            }
        }
        st.stats.entries_sent +=
            outgoing.iter().enumerate().filter(|&(j, _)| j != me).map(|(_, b)| b.entries.len() as u64).sum::<u64>();
    }

    let incoming = transport.exchange(window, outgoing)?;
    if incoming.len() != m {
        return Err(EngineError::ProtocolDesync {
            peer: me,
            detail: format!("transport returned {} batches for {m} peers", incoming.len()),
        });
    }
    for (peer, batch) in incoming.iter().enumerate() {
        if batch.round != round || batch.entries.len() != reqs.len() {
            return Err(EngineError::ProtocolDesync {
                peer,
                detail: format!(
                    "round {round}: expected {} entries, got {} in round {}",
                    reqs.len(),
                    batch.entries.len(),
                    batch.round
                ),
            });
        }
        for (slot, &(id, v)) in batch.entries.iter().enumerate() {
            if id as usize != slot || v.value() >= field.p() {
                return Err(EngineError::ProtocolDesync {
                    peer,
                    detail: format!("round {round}: bad entry ({id}, {v}) at position {slot}"),
                });
            }
        }
    }

    let weights = ctx.interp.full_weights();
    let mut results = Vec::with_capacity(reqs.len());
    let mut column = vec![Fe::ZERO; m];
    let mut reveal_groups: Vec<Reveal> = Vec::new();
    for (slot, req) in reqs.iter().enumerate() {
        let value = match *req {
            Request::Mul(_) => incoming
                .iter()
                .zip(weights)
                .fold(Fe::ZERO, |acc, (b, &w)| field.add(acc, field.mul(w, b.entries[slot].1))),
            Request::Random => incoming.iter().fold(Fe::ZERO, |acc, b| field.add(acc, b.entries[slot].1)),
            Request::Open(_, kind) => {
                for (c, b) in column.iter_mut().zip(&incoming) {
                    *c = b.entries[slot].1;
                }
                let (v, consistent) = ctx.interp.secret_checked(&column);
                if !consistent {
                    return Err(EngineError::InconsistentShares { round, slot });
                }
                match reveal_groups.last_mut() {
                    Some(g) if g.kind == kind => {
                        g.count += 1;
                        if !kind.is_internal() {
                            g.values.push(v);
                        }
                    }
                    _ => reveal_groups.push(Reveal {
                        kind,
                        round,
                        values: if kind.is_internal() { Vec::new() } else { vec![v] },
                        count: 1,
                    }),
                }
                v
            }
        };
        results.push(value);
    }

    let mut st = ctx.state.borrow_mut();
    st.results = results;
    st.round = round;
    st.stats.rounds += 1;
    st.reveals.extend(reveal_groups);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;
    use crate::transport::sim::{simulator_transport, Latency};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn engines(p: u64, m: usize, seed: u64) -> Vec<Engine> {
        let field = Field::new(p).unwrap();
        simulator_transport(m, seed, Latency::None)
            .into_iter()
            .enumerate()
            .map(|(i, ep)| {
                let rng = ChaCha20Rng::seed_from_u64(seed * 1000 + i as u64);
                Engine::new(field, Box::new(ep), Box::new(rng)).unwrap()
            })
            .collect()
    }

    #[test]
    fn join_all_preserves_order() {
        let out = futures::executor::block_on(join_all((0..5).map(|i| async move { i * 2 })));
        assert_eq!(out, vec![0, 2, 4, 6, 8]);
    }

    #[test]
    fn duplicate_and_sparse_ids_are_rejected() {
        let mut e = engines(13, 3, 1).remove(0);
        e.schedule(1, Operation::RandomSharing).unwrap();
        assert!(matches!(e.schedule(1, Operation::RandomSharing), Err(EngineError::DuplicateId(1))));
        e.schedule(3, Operation::RandomSharing).unwrap();
        assert!(matches!(e.do_operations(), Err(EngineError::NonDenseIds { expected: 2, found: 3 })));
    }

    #[test]
    fn empty_batch_needs_no_round() {
        let mut e = engines(13, 3, 1).remove(0);
        e.do_operations().unwrap();
        assert_eq!(e.round_counter(), 0);
        assert_eq!(e.mult_counter(), 0);
    }

    #[test]
    fn constant_open_over_threads() {
        let handles: Vec<_> = engines(13, 3, 2)
            .into_iter()
            .map(|mut e| {
                std::thread::spawn(move || {
                    // every peer holds share 4 of the constant 4
                    let v = e.run(async |ctx: &Ctx| ctx.open1(ctx.constant(4), RevealKind::Requested).await).unwrap();
                    (v, e.round_counter())
                })
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), (Fe(4), 1));
        }
    }
}
