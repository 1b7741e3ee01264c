//! Running one window's protocol and writing its results.
//!
//! Result files hold the protocol output only:
//!
//! - `addition`: one line `D_1,...,D_r`
//! - `entropy`: one line `H_q,S,sigma`
//! - `distinctcount`: one line with the count
//! - `eventcorrelation`: one line `key,count,weight_sum,reporters` per
//!   reconstructed event (reporters separated by `;`), ascending by key,
//!   then `disqualified,<ids separated by ;>`
//!
//! Privacy peers append `# key=value` instrumentation lines.

use std::fmt::Write as _;
use std::path::Path;

use privagg::protocols::{distinct_count, event_correlation, tsallis_entropy, tsallis_value, vector_addition};
use privagg::{CorrelationResult, Ctx, DistinctResult, Engine, EntropyResult, Fe, ReconstructedEvent, Reveal, Stats};

use crate::config::{PeerConfig, Protocol};
use crate::error::CliError;

#[derive(Clone, Debug, PartialEq)]
pub enum WindowOutput {
    Addition(Vec<u64>),
    Entropy(EntropyResult),
    Distinct(DistinctResult),
    Correlation(CorrelationResult),
}

/// Runs the configured protocol on `shares[input peer][index]`.
pub fn compute(engine: &mut Engine, cfg: &PeerConfig, shares: &[Vec<Fe>]) -> Result<WindowOutput, CliError> {
    let out = match cfg.protocol()? {
        Protocol::Addition => engine
            .run(async |ctx: &Ctx| vector_addition(ctx, shares).await)??
            .into_iter()
            .map(Fe::value)
            .collect::<Vec<_>>()
            .into(),
        Protocol::Entropy => {
            let q = cfg.params.q;
            WindowOutput::Entropy(engine.run(async |ctx: &Ctx| tsallis_entropy(ctx, shares, q).await)??)
        }
        Protocol::DistinctCount => {
            WindowOutput::Distinct(engine.run(async |ctx: &Ctx| distinct_count(ctx, shares).await)??)
        }
        Protocol::EventCorrelation => {
            let corr = cfg.correlation();
            let pairs: Vec<Vec<(Fe, Fe)>> =
                shares.iter().map(|v| v.chunks(2).map(|c| (c[0], c[1])).collect()).collect();
            let mut res = engine.run(async |ctx: &Ctx| event_correlation(ctx, &corr, &pairs).await)??;
            res.events.sort_by_key(|e| e.key);
            WindowOutput::Correlation(res)
        }
    };
    Ok(out)
}

impl From<Vec<u64>> for WindowOutput {
    fn from(v: Vec<u64>) -> Self {
        WindowOutput::Addition(v)
    }
}

fn joined<T: ToString>(items: &[T], sep: &str) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(sep)
}

impl WindowOutput {
    /// Body of a result file.
    pub fn render(&self) -> String {
        match self {
            WindowOutput::Addition(v) => format!("{}\n", joined(v, ",")),
            WindowOutput::Entropy(e) => format!("{},{},{}\n", e.entropy, e.total, e.power_sum),
            WindowOutput::Distinct(d) => format!("{}\n", d.count),
            WindowOutput::Correlation(c) => {
                let mut out = String::new();
                for e in &c.events {
                    let _ = writeln!(out, "{},{},{},{}", e.key, e.count, e.weight_sum, joined(&e.reporters, ";"));
                }
                let _ = writeln!(out, "disqualified,{}", joined(&c.disqualified, ";"));
                out
            }
        }
    }

    /// Values of the RESULT frame sent to input peers, and the disqualified
    /// input peers for the DISQUALIFY frame.
    pub fn encode(&self) -> (Vec<u64>, Vec<u64>) {
        match self {
            WindowOutput::Addition(v) => (v.clone(), Vec::new()),
            WindowOutput::Entropy(e) => (vec![e.total, e.power_sum], Vec::new()),
            WindowOutput::Distinct(d) => (vec![d.domain as u64, d.missing], Vec::new()),
            WindowOutput::Correlation(c) => {
                let mut v = vec![c.events.len() as u64];
                for e in &c.events {
                    v.extend([e.key, e.count, e.weight_sum, e.reporters.len() as u64]);
                    v.extend(e.reporters.iter().map(|&r| r as u64));
                }
                (v, c.disqualified.iter().map(|&d| d as u64).collect())
            }
        }
    }

    pub fn decode(protocol: Protocol, q: u32, values: &[u64], disqualified: &[u64]) -> Option<WindowOutput> {
        match protocol {
            Protocol::Addition => Some(WindowOutput::Addition(values.to_vec())),
            Protocol::Entropy => match *values {
                [total, power_sum] => {
                    let entropy = tsallis_value(total, power_sum, q).ok()?;
                    Some(WindowOutput::Entropy(EntropyResult { q, total, power_sum, entropy }))
                }
                _ => None,
            },
            Protocol::DistinctCount => match *values {
                [domain, missing] if missing <= domain => Some(WindowOutput::Distinct(DistinctResult {
                    domain: domain as usize,
                    missing,
                    count: domain - missing,
                })),
                _ => None,
            },
            Protocol::EventCorrelation => {
                let (&count, mut rest) = values.split_first()?;
                let mut events = Vec::new();
                for _ in 0..count {
                    let (head, tail) = rest.split_at_checked(4)?;
                    let reps = usize::try_from(head[3]).ok()?;
                    let (reporters, tail) = tail.split_at_checked(reps)?;
                    events.push(ReconstructedEvent {
                        key: head[0],
                        count: head[1],
                        weight_sum: head[2],
                        reporters: reporters.iter().map(|&r| r as usize).collect(),
                    });
                    rest = tail;
                }
                if !rest.is_empty() {
                    return None;
                }
                let disqualified = disqualified.iter().map(|&d| d as usize).collect();
                Some(WindowOutput::Correlation(CorrelationResult { events, disqualified }))
            }
        }
    }
}

/// A privacy peer's record of one completed window.
#[derive(Clone, Debug)]
pub struct WindowResult {
    pub window: u64,
    pub output: WindowOutput,
    pub participants: Vec<usize>,
    pub stats: Stats,
}

impl WindowResult {
    /// Result file contents: the output, then deterministic instrumentation.
    pub fn render(&self) -> String {
        let s = &self.stats;
        let mut out = self.output.render();
        let _ = writeln!(out, "# window={}", self.window);
        let _ = writeln!(out, "# participants={}", joined(&self.participants, ";"));
        let _ = writeln!(out, "# mults={}", s.mults);
        let _ = writeln!(out, "# productive_mults={}", s.productive_mults());
        let _ = writeln!(out, "# rounds={}", s.rounds);
        let _ = writeln!(out, "# bytes_sent={}", s.traffic.bytes_sent);
        let _ = writeln!(out, "# bytes_received={}", s.traffic.bytes_received);
        out
    }
}

/// Detailed log of one window: parameters, counters and every reconstruction.
pub fn render_log(
    cfg: &PeerConfig,
    me: usize,
    result: &WindowResult,
    reveals: &[Reveal],
    wall: std::time::Duration,
) -> String {
    let s = &result.stats;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "privacy peer {me}, window {}, protocol {}",
        result.window,
        cfg.protocol.map_or("?", |p| p.name())
    );
    let _ = writeln!(out, "participants: {:?}", result.participants);
    let _ = writeln!(out, "wall time: {:.3} s", wall.as_secs_f64());
    let _ = writeln!(
        out,
        "rounds {} | mults {} ({} discarded) | opens {} | random sharings {}",
        s.rounds, s.mults, s.discarded_mults, s.opens, s.random_sharings
    );
    let o = &s.ops;
    let _ = writeln!(
        out,
        "ops: equal {} less_than {} short_range {} prefix_or {} lsb {} random_bit {} bitwise_random {}",
        o.equal, o.less_than, o.short_range, o.prefix_or, o.lsb, o.random_bit, o.bitwise_random
    );
    let t = &s.traffic;
    let _ = writeln!(
        out,
        "traffic: {} frames / {} bytes sent, {} frames / {} bytes received",
        t.frames_sent, t.bytes_sent, t.frames_received, t.bytes_received
    );
    let _ = writeln!(out, "reconstructions:");
    for r in reveals {
        if r.kind.is_internal() {
            let _ = writeln!(out, "  round {:>4} {:?}: {} masked values", r.round, r.kind, r.count);
        } else {
            let vals: Vec<u64> = r.values.iter().map(|v| v.value()).collect();
            let _ = writeln!(out, "  round {:>4} {:?}: {:?}", r.round, r.kind, vals);
        }
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_roundtrip() {
        let outputs = [
            WindowOutput::Addition(vec![5, 7, 9]),
            WindowOutput::Entropy(EntropyResult { q: 2, total: 10, power_sum: 34, entropy: 1.0 - 34.0 / 100.0 }),
            WindowOutput::Distinct(DistinctResult { domain: 8, missing: 3, count: 5 }),
            WindowOutput::Correlation(CorrelationResult {
                events: vec![
                    ReconstructedEvent { key: 10, count: 2, weight_sum: 7, reporters: vec![0, 1, 2] },
                    ReconstructedEvent { key: 12, count: 1, weight_sum: 1, reporters: vec![] },
                ],
                disqualified: vec![3],
            }),
        ];
        for (o, p) in outputs.iter().zip(Protocol::ALL) {
            let (v, d) = o.encode();
            assert_eq!(WindowOutput::decode(p, 2, &v, &d).as_ref(), Some(o));
        }
        assert!(WindowOutput::decode(Protocol::EventCorrelation, 2, &[1, 10, 2], &[]).is_none());
        assert!(WindowOutput::decode(Protocol::Entropy, 2, &[1], &[]).is_none());
    }

    #[test]
    fn rendering() {
        assert_eq!(WindowOutput::Addition(vec![5, 7, 9]).render(), "5,7,9\n");
        let c = WindowOutput::Correlation(CorrelationResult {
            events: vec![ReconstructedEvent { key: 10, count: 2, weight_sum: 7, reporters: vec![0, 2] }],
            disqualified: vec![],
        });
        assert_eq!(c.render(), "10,2,7,0;2\ndisqualified,\n");
    }
}
