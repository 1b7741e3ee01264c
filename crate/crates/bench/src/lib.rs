//! Cost verification and throughput measurement.
//!
//! [`verify_costs`] runs every operation and protocol over simulator
//! sessions and compares the measured multiplication and round counts with
//! their closed forms. [`throughput`] measures amortized operations per
//! second over the simulator or a loopback TLS mesh.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::{Duration, Instant};

use privagg::compare::{
    equal_many, less_than_many, less_than_mults, prefix_or_many, short_range_many, short_range_mults,
};
use privagg::harness::{run_parallel, seeded_rng, share_inputs, sim_engines, tls_engines, INPUT_STREAM};
use privagg::protocols::{check_entropy_params, distinct_count, event_correlation, tsallis_entropy, vector_addition};
use privagg::transport::sim::Latency;
use privagg::{CorrelationConfig, Ctx, Engine, EngineError, Fe, Field, Operand, ProtocolError, Stats};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{op} ({params}): predicted {predicted} {what}, measured {measured}")]
    FormulaMismatch { op: String, params: String, what: &'static str, predicted: u64, measured: u64 },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("unknown operation {0:?}; expected mult, equal or lessthan")]
    UnknownOp(String),
}

/// Operations measured by [`throughput`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchOp {
    Mult,
    Equal,
    LessThan,
}

impl BenchOp {
    pub const ALL: [BenchOp; 3] = [BenchOp::Mult, BenchOp::Equal, BenchOp::LessThan];

    /// Row label of the operations-per-second table.
    pub fn label(self) -> &'static str {
        match self {
            BenchOp::Mult => "Multipl./s",
            BenchOp::Equal => "Equals/s",
            BenchOp::LessThan => "LessThans/s",
        }
    }
}

impl FromStr for BenchOp {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        match s.to_ascii_lowercase().as_str() {
            "mult" | "multiply" => Ok(BenchOp::Mult),
            "equal" => Ok(BenchOp::Equal),
            "lessthan" | "less_than" => Ok(BenchOp::LessThan),
            _ => Err(BenchError::UnknownOp(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Transport {
    Simulator(Latency),
    LoopbackTls,
}

#[derive(Clone, Debug)]
pub struct Throughput {
    pub op: BenchOp,
    pub parallelism: usize,
    pub m: usize,
    pub batches: usize,
    pub rounds_per_batch: u64,
    pub elapsed: Duration,
    pub ops_per_sec: f64,
}

fn engines(field: Field, m: usize, seed: u64, transport: Transport) -> Result<Vec<Engine>, EngineError> {
    match transport {
        Transport::Simulator(latency) => sim_engines(field, m, seed, latency),
        Transport::LoopbackTls => tls_engines(field, m, seed),
    }
}

async fn one_batch(ctx: &Ctx, op: BenchOp, a: &[Fe], b: &[Fe]) -> usize {
    match op {
        BenchOp::Mult => ctx.mul(a.iter().copied().zip(b.iter().copied())).await.len(),
        BenchOp::Equal => {
            let pairs: Vec<(Fe, Fe)> = a.iter().copied().zip(b.iter().copied()).collect();
            equal_many(ctx, &pairs).await.len()
        }
        BenchOp::LessThan => {
            let pairs: Vec<(Operand, Operand)> =
                a.iter().zip(b).map(|(&x, &y)| (Operand::Shared(x), Operand::Shared(y))).collect();
            less_than_many(ctx, &pairs).await.len()
        }
    }
}

/// Operations per second of `op` with `parallelism` independent instances per
/// batch, amortized over `batches` batches after one warmup batch. The time
/// is that of the slowest privacy peer.
pub fn throughput(
    field: Field,
    op: BenchOp,
    parallelism: usize,
    m: usize,
    transport: Transport,
    batches: usize,
) -> Result<Throughput, BenchError> {
    let mut rng = seeded_rng(7, INPUT_STREAM);
    let half = field.p() / 2;
    let inputs: Vec<Vec<u64>> = (0..2).map(|_| (0..parallelism).map(|_| rng.gen_range(0..half)).collect()).collect();
    let dealt = share_inputs(&field, m, &inputs, &mut rng)?;
    let outs = run_parallel(engines(field, m, 11, transport)?, |i, e| -> Result<(Duration, u64), EngineError> {
        let (a, b) = (&dealt[i][0], &dealt[i][1]);
        e.run(async |ctx: &Ctx| one_batch(ctx, op, a, b).await)?;
        let start = Instant::now();
        let mut rounds = 0;
        for _ in 0..batches {
            e.run(async |ctx: &Ctx| one_batch(ctx, op, a, b).await)?;
            rounds = e.last_stats().rounds;
        }
        Ok((start.elapsed(), rounds))
    });
    let mut elapsed = Duration::ZERO;
    let mut rounds_per_batch = 0;
    for (_, out) in outs {
        let (t, r) = out?;
        elapsed = elapsed.max(t);
        rounds_per_batch = r;
    }
    let ops = (parallelism * batches) as f64;
    Ok(Throughput {
        op,
        parallelism,
        m,
        batches,
        rounds_per_batch,
        elapsed,
        ops_per_sec: ops / elapsed.as_secs_f64().max(1e-9),
    })
}

/// Measured against predicted costs of one operation or protocol run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CostReport {
    pub name: String,
    pub l: u32,
    pub k: u32,
    pub n: usize,
    pub m: usize,
    pub s: usize,
    pub r: usize,
    pub q: u32,
    pub t_c: u64,
    pub measured_mults: u64,
    pub predicted_mults: u64,
    pub measured_rounds: u64,
    pub predicted_rounds: u64,
    /// Allowed deviation of the round count; `None` when rounds are only reported.
    pub round_tolerance: Option<u64>,
    pub bytes_per_pp: u64,
    pub ops_per_sec: Option<f64>,
}

pub const CSV_HEADER: &str = "name,l,k,n,m,s,r,q,t_c,measured_mults,predicted_mults,measured_rounds,predicted_rounds,round_tolerance,bytes_per_pp,ops_per_sec";

impl CostReport {
    pub fn csv_row(&self) -> String {
        let tol = self.round_tolerance.map(|t| t.to_string()).unwrap_or_default();
        let ops = self.ops_per_sec.map(|o| format!("{o:.1}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.name,
            self.l,
            self.k,
            self.n,
            self.m,
            self.s,
            self.r,
            self.q,
            self.t_c,
            self.measured_mults,
            self.predicted_mults,
            self.measured_rounds,
            self.predicted_rounds,
            tol,
            self.bytes_per_pp,
            ops
        )
    }

    fn params(&self) -> String {
        format!(
            "l={} k={} n={} m={} s={} r={} q={} t_c={}",
            self.l, self.k, self.n, self.m, self.s, self.r, self.q, self.t_c
        )
    }

    /// Exact multiplication match and rounds within tolerance.
    pub fn check(&self) -> Result<(), BenchError> {
        if self.measured_mults != self.predicted_mults {
            return Err(BenchError::FormulaMismatch {
                op: self.name.clone(),
                params: self.params(),
                what: "multiplications",
                predicted: self.predicted_mults,
                measured: self.measured_mults,
            });
        }
        if let Some(tol) = self.round_tolerance {
            if self.measured_rounds.abs_diff(self.predicted_rounds) > tol {
                return Err(BenchError::FormulaMismatch {
                    op: self.name.clone(),
                    params: self.params(),
                    what: "rounds",
                    predicted: self.predicted_rounds,
                    measured: self.measured_rounds,
                });
            }
        }
        Ok(())
    }
}

pub fn to_csv(reports: &[CostReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// Configurations covered by [`verify_costs`].
#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub fields: Vec<Field>,
    pub ms: Vec<usize>,
    pub ns: Vec<usize>,
    /// Histogram and bit-vector length for entropy and distinct count.
    pub r: usize,
    pub q: u32,
    /// Events per input peer for event correlation.
    pub s: usize,
    /// Parallel instances per comparison batch.
    pub batch: usize,
    pub seed: u64,
}

impl SweepSpec {
    /// The desk-scale sweep: l ∈ {4, 31, 62}, m ∈ {3, 5, 7, 9}, n ∈ {3, 5, 10, 25}.
    pub fn desk() -> Self {
        SweepSpec {
            fields: vec![Field::new(13).expect("13 is prime"), privagg::small_field(), privagg::default_field()],
            ms: vec![3, 5, 7, 9],
            ns: vec![3, 5, 10, 25],
            r: 16,
            q: 2,
            s: 2,
            batch: 4,
            seed: 1,
        }
    }
}

fn ceil_log2(x: u64) -> u64 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros() as u64
    }
}

/// Runs `job` at every peer of a fresh simulator session and returns peer 0's
/// output and counters.
fn measure<T: Send>(
    field: Field,
    m: usize,
    seed: u64,
    job: impl Fn(usize, &mut Engine) -> Result<T, BenchError> + Sync,
) -> Result<(T, Stats), BenchError> {
    let outs = run_parallel(sim_engines(field, m, seed, Latency::None)?, job);
    let mut first = None;
    for (e, out) in outs {
        let out = out?;
        first.get_or_insert((out, e.last_stats()));
    }
    Ok(first.expect("at least one privacy peer"))
}

fn base(name: &str, f: &Field, m: usize) -> CostReport {
    CostReport { name: name.to_string(), l: f.bits(), k: f.ones(), m, ..CostReport::default() }
}

fn with_stats(mut r: CostReport, stats: &Stats, instances: u64) -> CostReport {
    r.measured_mults = stats.productive_mults() / instances.max(1);
    r.measured_rounds = stats.rounds;
    r.bytes_per_pp = stats.traffic.bytes_sent;
    r
}

/// Per-operation costs of the comparison suite, measured with `batch`
/// parallel instances and reported per instance.
fn comparison_reports(f: Field, m: usize, batch: usize, seed: u64) -> Result<Vec<CostReport>, BenchError> {
    let (l, k) = (f.bits(), f.ones());
    let mut rng = seeded_rng(seed, INPUT_STREAM);
    let half = f.p() / 2;
    let vals: Vec<Vec<u64>> = (0..2).map(|_| (0..batch).map(|_| rng.gen_range(0..half)).collect()).collect();
    let dealt = share_inputs(&f, m, &vals, &mut rng)?;
    let n = batch as u64;
    let mut out = Vec::new();

    let (_, st) = measure(f, m, seed, |i, e| {
        let pairs: Vec<(Fe, Fe)> = dealt[i][0].iter().copied().zip(dealt[i][1].iter().copied()).collect();
        Ok(e.run(async |ctx: &Ctx| equal_many(ctx, &pairs).await)?)
    })?;
    let mut r = with_stats(base("equal", &f, m), &st, n);
    r.predicted_mults = (l + k - 2) as u64;
    r.predicted_rounds = l as u64;
    r.round_tolerance = Some(0);
    out.push(r);

    let bits = (l as usize).min(16);
    let seqs: Vec<Vec<u64>> = (0..batch).map(|_| (0..bits).map(|_| rng.gen_range(0..=1)).collect()).collect();
    let dealt_bits = share_inputs(&f, m, &seqs, &mut rng)?;
    let (_, st) = measure(f, m, seed, |i, e| Ok(e.run(async |ctx: &Ctx| prefix_or_many(ctx, &dealt_bits[i]).await)?))?;
    let mut r = with_stats(base("prefix_or", &f, m), &st, n);
    r.l = bits as u32;
    r.predicted_mults = bits as u64 - 1;
    r.predicted_rounds = bits as u64 - 1;
    r.round_tolerance = Some(0);
    out.push(r);

    for public in [false, true] {
        let (_, st) = measure(f, m, seed, |i, e| {
            let pairs: Vec<(Operand, Operand)> = dealt[i][0]
                .iter()
                .zip(&vals[1])
                .zip(&dealt[i][1])
                .map(|((&a, &pb), &b)| {
                    (Operand::Shared(a), if public { Operand::Public(pb) } else { Operand::Shared(b) })
                })
                .collect();
            Ok(e.run(async |ctx: &Ctx| less_than_many(ctx, &pairs).await)?)
        })?;
        let name = if public { "less_than_public" } else { "less_than" };
        let mut r = with_stats(base(name, &f, m), &st, n);
        r.predicted_mults = less_than_mults(l, public);
        r.predicted_rounds = 2 * l as u64 + if public { 5 } else { 6 };
        r.round_tolerance = Some(0);
        out.push(r);
    }

    let hi = (f.p() - 1).min(9);
    let (_, st) = measure(f, m, seed, |i, e| {
        let items: Vec<(Fe, u64, u64)> = dealt[i][0].iter().map(|&x| (x, 2, hi)).collect();
        Ok(e.run(async |ctx: &Ctx| short_range_many(ctx, &items).await)?)
    })?;
    let mut r = with_stats(base("short_range", &f, m), &st, n);
    r.predicted_mults = short_range_mults(l, k, 2, hi);
    r.predicted_rounds = l as u64 + ceil_log2(hi - 2 + 1);
    r.round_tolerance = Some(0);
    out.push(r);
    Ok(out)
}

fn protocol_reports(f: Field, m: usize, n: usize, spec: &SweepSpec) -> Result<Vec<CostReport>, BenchError> {
    let (l, k) = (f.bits(), f.ones());
    let mut rng = seeded_rng(spec.seed, INPUT_STREAM);
    let mut out = Vec::new();
    let r = spec.r;

    let vals: Vec<Vec<u64>> = (0..n).map(|_| (0..r).map(|_| rng.gen_range(0..f.p())).collect()).collect();
    let dealt = share_inputs(&f, m, &vals, &mut rng)?;
    let (_, st) =
        measure(f, m, spec.seed, |i, e| Ok(e.run(async |ctx: &Ctx| vector_addition(ctx, &dealt[i]).await)??))?;
    let mut rep = with_stats(CostReport { n, r, ..base("addition", &f, m) }, &st, 1);
    rep.predicted_rounds = 1;
    rep.round_tolerance = Some(0);
    out.push(rep);

    if check_entropy_params(&f, n, r, spec.q, 3).is_ok() {
        let counts: Vec<Vec<u64>> = (0..n).map(|_| (0..r).map(|_| rng.gen_range(0..=3)).collect()).collect();
        let counts = if counts.iter().flatten().all(|&c| c == 0) { vec![vec![1; r]; n] } else { counts };
        let dealt = share_inputs(&f, m, &counts, &mut rng)?;
        let q = spec.q;
        let (_, st) =
            measure(f, m, spec.seed, |i, e| Ok(e.run(async |ctx: &Ctx| tsallis_entropy(ctx, &dealt[i], q).await)??))?;
        let log_q = 31 - q.leading_zeros() as u64;
        let mut rep = with_stats(CostReport { n, r, q, ..base("entropy", &f, m) }, &st, 1);
        rep.predicted_mults = r as u64 * (log_q + q.count_ones() as u64 - 1);
        rep.predicted_rounds = log_q + if q.count_ones() == 1 { 1 } else { 2 };
        rep.round_tolerance = q.is_power_of_two().then_some(0);
        out.push(rep);
    }

    let negated: Vec<Vec<u64>> = (0..n).map(|_| (0..r).map(|_| rng.gen_range(0..=1)).collect()).collect();
    let dealt = share_inputs(&f, m, &negated, &mut rng)?;
    let (_, st) = measure(f, m, spec.seed, |i, e| Ok(e.run(async |ctx: &Ctx| distinct_count(ctx, &dealt[i]).await)??))?;
    let mut rep = with_stats(CostReport { n, r, ..base("distinct_count", &f, m) }, &st, 1);
    rep.predicted_mults = (n as u64 - 1) * r as u64;
    rep.predicted_rounds = ceil_log2(n as u64) + 1;
    rep.round_tolerance = Some(0);
    out.push(rep);

    let t_c = (n as u64).div_ceil(2);
    let cfg = CorrelationConfig { n, s: spec.s, t_c, t_w: 2, w_max: 4, verify_weights: true, verify_keys: true };
    if cfg.validate(&f).is_ok() {
        let flat: Vec<Vec<u64>> = (0..n)
            .map(|i| {
                // distinct keys per peer so nobody is disqualified
                (0..spec.s).flat_map(|j| [1 + j as u64 + (i % 2) as u64 * spec.s as u64, 1]).collect()
            })
            .collect();
        let dealt = share_inputs(&f, m, &flat, &mut rng)?;
        let (res, st) = measure(f, m, spec.seed, |i, e| {
            let mine: Vec<Vec<(Fe, Fe)>> =
                dealt[i].iter().map(|v| v.chunks(2).map(|c| (c[0], c[1])).collect()).collect();
            Ok(e.run(async |ctx: &Ctx| event_correlation(ctx, &cfg, &mine).await)??)
        })?;
        debug_assert!(res.disqualified.is_empty());
        let counts = cfg.expected_counts();
        let mut rep = with_stats(CostReport { n, s: spec.s, t_c, ..base("event_correlation", &f, m) }, &st, 1);
        rep.predicted_mults = counts.equal * (l + k - 2) as u64
            + counts.less_than * less_than_mults(l, true)
            + counts.short_range * short_range_mults(l, k, t_c, n as u64)
            + counts.explicit_mults;
        rep.predicted_rounds = 7 * l as u64 + ceil_log2(n as u64 - t_c) + 26;
        rep.round_tolerance = None;
        out.push(rep);
    }
    Ok(out)
}

/// Measures every configuration of `spec` and checks each against its
/// formula. Returns the reports, or the first mismatch.
pub fn verify_costs(spec: &SweepSpec) -> Result<Vec<CostReport>, BenchError> {
    let reports = collect_costs(spec)?;
    for r in &reports {
        r.check()?;
    }
    Ok(reports)
}

/// Like [`verify_costs`] without the checks.
pub fn collect_costs(spec: &SweepSpec) -> Result<Vec<CostReport>, BenchError> {
    let mut reports = Vec::new();
    for &f in &spec.fields {
        for &m in &spec.ms {
            reports.extend(comparison_reports(f, m, spec.batch, spec.seed)?);
            for &n in &spec.ns {
                reports.extend(protocol_reports(f, m, n, spec)?);
            }
        }
    }
    Ok(reports)
}
