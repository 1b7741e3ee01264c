//! The four aggregation protocols. Each function runs at one privacy peer,
//! takes that peer's shares of every input peer's data (outer index = input
//! peer) and returns the public result, identical at all privacy peers.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::compare::{equal_many, less_than_many, pow_many, short_range_many};
use crate::engine::{Ctx, Operand, RevealKind};
use crate::field::{Fe, Field};

/// Labels under which protocol outputs appear in the reveal log.
pub mod labels {
    pub const SUM: &str = "sum";
    pub const TOTAL: &str = "total";
    pub const POWER_SUM: &str = "power_sum";
    pub const MISSING: &str = "missing";
    pub const WEIGHT_OK: &str = "weight_ok";
    pub const KEY_EQUAL: &str = "key_equal";
    pub const QUALIFIES: &str = "qualifies";
    pub const KEY: &str = "key";
    pub const COUNT: &str = "count";
    pub const WEIGHT_SUM: &str = "weight_sum";
    pub const REPORTS: &str = "reports";
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("input peer {peer} supplied {got} values, expected {expected}")]
    DimensionMismatch { peer: usize, expected: usize, got: usize },
    #[error("empty distribution: all counts are zero")]
    EmptyDistribution,
    #[error("sums of counts raised to {q} may reach {bound}, not below p = {p}")]
    FieldOverflowRisk { q: u32, bound: String, p: u64 },
    #[error("input peer {peer} entry {index} is {value}, expected 0 or 1")]
    NonBooleanInput { peer: usize, index: usize, value: u64 },
    #[error("event key {key} of input peer {peer} lies in the reserved padding range")]
    ReservedKey { peer: usize, key: u64 },
    #[error("input peer {peer} reported {got} events, at most {max} allowed")]
    TooManyEvents { peer: usize, got: usize, max: usize },
}

fn check_dimensions<T>(inputs: &[Vec<T>], expected: usize) -> Result<(), ProtocolError> {
    for (peer, v) in inputs.iter().enumerate() {
        if v.len() != expected {
            return Err(ProtocolError::DimensionMismatch { peer, expected, got: v.len() });
        }
    }
    Ok(())
}

fn column_sums(f: &Field, inputs: &[Vec<Fe>], r: usize) -> Vec<Fe> {
    let mut sums = vec![Fe::ZERO; r];
    for v in inputs {
        for (s, &x) in sums.iter_mut().zip(v) {
            *s = f.add(*s, x);
        }
    }
    sums
}

/// Coordinate-wise sum of all input vectors. No multiplications, one round.
pub async fn vector_addition(ctx: &Ctx, inputs: &[Vec<Fe>]) -> Result<Vec<Fe>, ProtocolError> {
    let r = inputs.first().map_or(0, Vec::len);
    check_dimensions(inputs, r)?;
    let sums = column_sums(ctx.field(), inputs, r);
    Ok(ctx.open(sums, RevealKind::Output(labels::SUM)).await)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyResult {
    pub q: u32,
    /// `S`, the sum of all counts.
    pub total: u64,
    /// `σ = Σ_k s_k^q`.
    pub power_sum: u64,
    pub entropy: f64,
}

/// Rejects parameters for which `Σ_k s_k^q` could wrap around `p`.
///
/// `n` input peers, `r` items, local counts at most `max_count`. Both
/// `S^q` and `r · (n · max_count)^q` bound `σ`, so the smaller one must stay
/// below `p` (and `S` itself must).
pub fn check_entropy_params(field: &Field, n: usize, r: usize, q: u32, max_count: u64) -> Result<(), ProtocolError> {
    if q < 2 {
        return Err(ProtocolError::ConfigInvalid(format!("q = {q}, must be at least 2")));
    }
    let p = field.p() as f64;
    let item = n as f64 * max_count as f64;
    let total = item * r as f64;
    let bound = (total.powi(q as i32)).min(r as f64 * item.powi(q as i32));
    if total >= p || bound >= p {
        return Err(ProtocolError::FieldOverflowRisk { q, bound: format!("{bound:.3e}"), p: field.p() });
    }
    Ok(())
}

/// `(1 − σ / S^q) / (q − 1)`.
pub fn tsallis_value(total: u64, power_sum: u64, q: u32) -> Result<f64, ProtocolError> {
    if total == 0 {
        return Err(ProtocolError::EmptyDistribution);
    }
    let ratio = power_sum as f64 / (total as f64).powi(q as i32);
    Ok((1.0 - ratio) / (q as f64 - 1.0))
}

/// Tsallis entropy of the aggregated histogram. Only `S` and `σ` are
/// reconstructed; the powers use `⌊log2 q⌋ + popcount(q) − 1`
/// multiplications per item.
pub async fn tsallis_entropy(ctx: &Ctx, inputs: &[Vec<Fe>], q: u32) -> Result<EntropyResult, ProtocolError> {
    if q < 2 {
        return Err(ProtocolError::ConfigInvalid(format!("q = {q}, must be at least 2")));
    }
    let f = *ctx.field();
    let r = inputs.first().map_or(0, Vec::len);
    check_dimensions(inputs, r)?;
    let counts = column_sums(&f, inputs, r);
    let total_share = counts.iter().fold(Fe::ZERO, |a, &c| f.add(a, c));
    let (total, powers) =
        futures::join!(ctx.open1(total_share, RevealKind::Output(labels::TOTAL)), pow_many(ctx, &counts, q as u64),);
    let sigma_share = powers.iter().fold(Fe::ZERO, |a, &c| f.add(a, c));
    let sigma = ctx.open1(sigma_share, RevealKind::Output(labels::POWER_SUM)).await;
    let entropy = tsallis_value(total.value(), sigma.value(), q)?;
    Ok(EntropyResult { q, total: total.value(), power_sum: sigma.value(), entropy })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistinctResult {
    pub domain: usize,
    /// Items seen by no input peer.
    pub missing: u64,
    pub count: u64,
}

/// Number of items seen by at least one input peer. Inputs are sharings of
/// the negated indicators; their AND over all peers marks unseen items.
/// `(n − 1)` multiplications per item in `⌈log2 n⌉` rounds, then one opening.
pub async fn distinct_count(ctx: &Ctx, negated: &[Vec<Fe>]) -> Result<DistinctResult, ProtocolError> {
    let f = *ctx.field();
    let k = negated.first().map_or(0, Vec::len);
    check_dimensions(negated, k)?;
    // layers[item] holds the partial ANDs still to be combined
    let mut layers: Vec<Vec<Fe>> = (0..k).map(|item| negated.iter().map(|v| v[item]).collect()).collect();
    while layers.first().is_some_and(|l| l.len() > 1) {
        let pairs: Vec<(Fe, Fe)> = layers.iter().flat_map(|l| l.chunks_exact(2).map(|c| (c[0], c[1]))).collect();
        let prods = ctx.mul(pairs).await;
        let mut it = prods.into_iter();
        for layer in layers.iter_mut() {
            let carry = (layer.len() % 2 == 1).then(|| *layer.last().unwrap());
            let mut next: Vec<Fe> = it.by_ref().take(layer.len() / 2).collect();
            next.extend(carry);
            *layer = next;
        }
    }
    let sigma_share = layers.iter().fold(Fe::ZERO, |a, l| f.add(a, l.first().copied().unwrap_or(Fe::ONE)));
    let missing = ctx.open1(sigma_share, RevealKind::Output(labels::MISSING)).await.value();
    Ok(DistinctResult { domain: k, missing, count: k as u64 - missing })
}

/// Checks plaintext distinct-count inputs; only possible where the bits are known.
pub fn check_boolean(peer: usize, bits: &[u64]) -> Result<(), ProtocolError> {
    match bits.iter().position(|&b| b > 1) {
        Some(index) => Err(ProtocolError::NonBooleanInput { peer, index, value: bits[index] }),
        None => Ok(()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Event {
    pub key: u64,
    pub weight: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorrelationConfig {
    /// Input peers.
    pub n: usize,
    /// Events per input peer and window.
    pub s: usize,
    /// Minimum number of other input peers reporting an event.
    pub t_c: u64,
    /// Minimum aggregated weight of the other reports; 0 disables the test.
    pub t_w: u64,
    /// Exclusive upper bound on weights.
    pub w_max: u64,
    pub verify_weights: bool,
    pub verify_keys: bool,
}

impl CorrelationConfig {
    pub fn validate(&self, field: &Field) -> Result<(), ProtocolError> {
        let bad = |msg: String| Err(ProtocolError::ConfigInvalid(msg));
        if self.n == 0 || self.s == 0 {
            return bad(format!("n = {} and s = {} must be positive", self.n, self.s));
        }
        if self.t_c == 0 || self.t_c > self.n as u64 {
            return bad(format!("T_c = {} outside 1..={}", self.t_c, self.n));
        }
        if self.w_max == 0 {
            return bad("w_max must be at least 1".into());
        }
        let p = field.p() as u128;
        let slots = (self.n * self.s) as u128;
        if 2 * slots >= p {
            return bad(format!("n·s = {slots} leaves no room for padding keys below p = {p}"));
        }
        if slots * self.w_max as u128 >= p || self.t_w as u128 >= p {
            return bad(format!("weights up to n·s·w_max = {} do not fit below p = {p}", slots * self.w_max as u128));
        }
        Ok(())
    }

    /// Input peers whose events are tested, out of `qualified`:
    /// `min(qualified − T_c + 1, qualified)`.
    pub fn owners(&self, qualified: usize) -> usize {
        (qualified + 1).saturating_sub(self.t_c as usize).min(qualified)
    }

    /// Keys at or above this value are reserved for padding.
    pub fn reserved_from(&self, field: &Field) -> u64 {
        field.p() - (self.n * self.s) as u64
    }

    /// Padding key for slot `slot` of input peer `peer`; distinct for every
    /// `(peer, slot)` so padding never matches anything.
    pub fn pad_key(&self, field: &Field, peer: usize, slot: usize) -> u64 {
        field.p() - 1 - (peer * self.s + slot) as u64
    }

    /// Validates the events of one input peer and pads them to exactly `s`.
    pub fn pad_events(&self, field: &Field, peer: usize, events: &[Event]) -> Result<Vec<Event>, ProtocolError> {
        if events.len() > self.s {
            return Err(ProtocolError::TooManyEvents { peer, got: events.len(), max: self.s });
        }
        if let Some(e) = events.iter().find(|e| e.key >= self.reserved_from(field)) {
            return Err(ProtocolError::ReservedKey { peer, key: e.key });
        }
        let mut out = events.to_vec();
        out.extend((events.len()..self.s).map(|slot| Event { key: self.pad_key(field, peer, slot), weight: 0 }));
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReconstructedEvent {
    pub key: u64,
    /// Number of other input peers reporting the key.
    pub count: u64,
    /// Aggregated weight of those other reports.
    pub weight_sum: u64,
    /// Input peers reporting the key, ascending.
    pub reporters: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorrelationResult {
    pub events: Vec<ReconstructedEvent>,
    pub disqualified: Vec<usize>,
}

/// Reconstructs the events reported by at least `T_c` other input peers with
/// an aggregated weight of at least `T_w`. `inputs[i]` holds the shared
/// `(key, weight)` pairs of input peer `i`, already padded to `s`.
pub async fn event_correlation(
    ctx: &Ctx,
    cfg: &CorrelationConfig,
    inputs: &[Vec<(Fe, Fe)>],
) -> Result<CorrelationResult, ProtocolError> {
    let f = *ctx.field();
    cfg.validate(&f)?;
    if inputs.len() != cfg.n {
        return Err(ProtocolError::ConfigInvalid(format!(
            "{} input peers supplied data, configuration says {}",
            inputs.len(),
            cfg.n
        )));
    }
    check_dimensions(inputs, cfg.s)?;
    let s = cfg.s;
    let mut disqualified = BTreeSet::new();

    if cfg.verify_weights {
        let pairs: Vec<(Operand, Operand)> =
            inputs.iter().flatten().map(|&(_, w)| (Operand::Shared(w), Operand::Public(cfg.w_max))).collect();
        let below = less_than_many(ctx, &pairs).await;
        let ok = ctx.open(below, RevealKind::Output(labels::WEIGHT_OK)).await;
        for (peer, bits) in ok.chunks(s).enumerate() {
            if bits.iter().any(|&b| b != Fe::ONE) {
                disqualified.insert(peer);
            }
        }
    }

    if cfg.verify_keys && s > 1 {
        let mut pairs = Vec::new();
        let mut owner = Vec::new();
        for (peer, events) in inputs.iter().enumerate() {
            for a in 0..s {
                for b in a + 1..s {
                    pairs.push((events[a].0, events[b].0));
                    owner.push(peer);
                }
            }
        }
        let eq = equal_many(ctx, &pairs).await;
        let dup = ctx.open(eq, RevealKind::Output(labels::KEY_EQUAL)).await;
        for (&peer, d) in owner.iter().zip(dup) {
            if d != Fe::ZERO {
                disqualified.insert(peer);
            }
        }
    }

    let qualified: Vec<usize> = (0..cfg.n).filter(|i| !disqualified.contains(i)).collect();
    let disqualified: Vec<usize> = disqualified.into_iter().collect();
    let owners = cfg.owners(qualified.len());
    if owners == 0 {
        return Ok(CorrelationResult { events: Vec::new(), disqualified });
    }

    // aggregation: block (o, j) compares event j of owner o with every event
    // of every other qualified peer, in the order of `qualified`
    let others = qualified.len() - 1;
    let block = others * s;
    let mut pairs = Vec::with_capacity(owners * s * block);
    let mut other_weights = Vec::with_capacity(owners * s * block);
    for &i in &qualified[..owners] {
        for j in 0..s {
            let key = inputs[i][j].0;
            for &i2 in qualified.iter().filter(|&&i2| i2 != i) {
                for &(k2, w2) in &inputs[i2] {
                    pairs.push((key, k2));
                    other_weights.push(w2);
                }
            }
        }
    }
    let eqs = equal_many(ctx, &pairs).await;
    let weighted = ctx.mul(other_weights.iter().copied().zip(eqs.iter().copied())).await;
    let sum = |v: &[Fe]| v.iter().fold(Fe::ZERO, |a, &x| f.add(a, x));
    let counts: Vec<Fe> = (0..owners * s).map(|e| sum(&eqs[e * block..(e + 1) * block])).collect();
    let weights: Vec<Fe> = (0..owners * s).map(|e| sum(&weighted[e * block..(e + 1) * block])).collect();

    let ranges: Vec<(Fe, u64, u64)> = counts.iter().map(|&c| (c, cfg.t_c, cfg.n as u64)).collect();
    let weight_test = async {
        if cfg.t_w == 0 {
            vec![Fe::ONE; weights.len()]
        } else {
            let pairs: Vec<(Operand, Operand)> =
                weights.iter().map(|&w| (Operand::Public(cfg.t_w - 1), Operand::Shared(w))).collect();
            less_than_many(ctx, &pairs).await
        }
    };
    let (t1, t2) = futures::join!(short_range_many(ctx, &ranges), weight_test);
    let both = ctx.mul(t1.into_iter().zip(t2)).await;
    let hits = ctx.open(both, RevealKind::Output(labels::QUALIFIES)).await;
    let winners: Vec<usize> = (0..hits.len()).filter(|&e| hits[e] == Fe::ONE).collect();
    if winners.is_empty() {
        return Ok(CorrelationResult { events: Vec::new(), disqualified });
    }

    // a peer reports the key iff its slice of the block sums to one
    let mut report_shares = Vec::with_capacity(winners.len() * others);
    for &e in &winners {
        let start = e * block;
        for o in 0..others {
            report_shares.push(sum(&eqs[start + o * s..start + (o + 1) * s]));
        }
    }
    let (keys, cs, ws, reports) = futures::join!(
        ctx.open(winners.iter().map(|&e| inputs[qualified[e / s]][e % s].0), RevealKind::Output(labels::KEY)),
        ctx.open(winners.iter().map(|&e| counts[e]), RevealKind::Output(labels::COUNT)),
        ctx.open(winners.iter().map(|&e| weights[e]), RevealKind::Output(labels::WEIGHT_SUM)),
        ctx.open(report_shares, RevealKind::Output(labels::REPORTS)),
    );

    let mut events: Vec<ReconstructedEvent> = Vec::new();
    for (w, &e) in winners.iter().enumerate() {
        let owner = qualified[e / s];
        let mut reporters: BTreeSet<usize> = BTreeSet::from([owner]);
        let mut other_peers = qualified.iter().copied().filter(|&i| i != owner);
        for o in 0..others {
            let peer = other_peers.next().unwrap();
            if reports[w * others + o] != Fe::ZERO {
                reporters.insert(peer);
            }
        }
        let key = keys[w].value();
        match events.iter_mut().find(|ev| ev.key == key) {
            Some(ev) => {
                let merged: BTreeSet<usize> = ev.reporters.iter().copied().chain(reporters).collect();
                ev.reporters = merged.into_iter().collect();
            }
            None => events.push(ReconstructedEvent {
                key,
                count: cs[w].value(),
                weight_sum: ws[w].value(),
                reporters: reporters.into_iter().collect(),
            }),
        }
    }
    Ok(CorrelationResult { events, disqualified })
}

/// Exact operation counts of one event correlation run without disqualified peers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorrelationCounts {
    pub equal: u64,
    pub less_than: u64,
    pub short_range: u64,
    /// Multiplications outside the comparison operations.
    pub explicit_mults: u64,
}

impl CorrelationConfig {
    pub fn expected_counts(&self) -> CorrelationCounts {
        let n = self.n as u64;
        let s = self.s as u64;
        let owners = self.owners(self.n) as u64;
        let key_checks = if self.verify_keys { n * s * (s - 1) / 2 } else { 0 };
        let weight_checks = if self.verify_weights { n * s } else { 0 };
        let threshold_checks = if self.t_w > 0 { owners * s } else { 0 };
        CorrelationCounts {
            equal: key_checks + owners * (n - 1) * s * s,
            less_than: weight_checks + threshold_checks,
            short_range: owners * s,
            explicit_mults: owners * (n - 1) * s * s + owners * s,
        }
    }
}
