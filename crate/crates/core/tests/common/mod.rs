#![allow(dead_code)]

pub mod oracle;

use privagg::harness::{run_parallel, seeded_rng, share_inputs, sim_engines, INPUT_STREAM};
use privagg::sharing::reconstruct;
use privagg::transport::sim::Latency;
use privagg::{Engine, Fe, Field};

pub fn engines(field: Field, m: usize, seed: u64) -> Vec<Engine> {
    sim_engines(field, m, seed, Latency::None).unwrap()
}

/// `[privacy peer][input peer][index]` sharings of `inputs`.
pub fn deal(field: &Field, m: usize, seed: u64, inputs: &[Vec<u64>]) -> Vec<Vec<Vec<Fe>>> {
    share_inputs(field, m, inputs, &mut seeded_rng(seed, INPUT_STREAM)).unwrap()
}

/// Runs `job` at every privacy peer of a fresh simulator session.
pub fn at_peers<T: Send>(
    field: Field,
    m: usize,
    seed: u64,
    job: impl Fn(usize, &mut Engine) -> T + Sync,
) -> Vec<(Engine, T)> {
    run_parallel(engines(field, m, seed), job)
}

/// Reconstructs every index of the peers' output shares, checking that the
/// lowest and the highest `t + 1` slots interpolate to the same value.
pub fn open(field: &Field, per_peer: &[Vec<Fe>]) -> Vec<u64> {
    let m = per_peer.len();
    let t = (m - 1) / 2;
    let len = per_peer[0].len();
    assert!(per_peer.iter().all(|v| v.len() == len), "peers returned different lengths");
    (0..len)
        .map(|k| {
            let low: Vec<(usize, Fe)> = (0..=t).map(|i| (i, per_peer[i][k])).collect();
            let high: Vec<(usize, Fe)> = (m - t - 1..m).map(|i| (i, per_peer[i][k])).collect();
            let a = reconstruct(field, &low, t).unwrap();
            let b = reconstruct(field, &high, t).unwrap();
            assert_eq!(a, b, "output {k} is not a degree-{t} sharing");
            a.value()
        })
        .collect()
}

pub fn field(p: u64) -> Field {
    Field::new(p).unwrap()
}

/// What one protocol run produced, as seen by privacy peer 0 (all peers are
/// checked to agree).
pub struct Run<T> {
    pub output: T,
    pub stats: privagg::Stats,
    pub reveals: Vec<privagg::Reveal>,
}

fn agree<T: PartialEq + std::fmt::Debug>(outs: Vec<(Engine, T)>) -> Run<T> {
    let (first, rest) = outs.split_first().unwrap();
    for (e, o) in rest {
        assert_eq!(o, &first.1, "privacy peer {} disagrees", e.me());
        assert_eq!(e.last_stats().rounds, first.0.last_stats().rounds);
        assert_eq!(e.last_stats().mults, first.0.last_stats().mults);
    }
    let (engine, output) = outs.into_iter().next().unwrap();
    Run { output, stats: engine.last_stats(), reveals: engine.reveals() }
}

use privagg::protocols::{distinct_count, event_correlation, tsallis_entropy, vector_addition};
use privagg::{CorrelationConfig, CorrelationResult, Ctx, DistinctResult, EntropyResult, Event, ProtocolError};

pub fn run_addition(f: Field, m: usize, seed: u64, inputs: &[Vec<u64>]) -> Run<Result<Vec<u64>, ProtocolError>> {
    let dealt = deal(&f, m, seed, inputs);
    agree(at_peers(f, m, seed, |i, e| {
        e.run(async |ctx: &Ctx| vector_addition(ctx, &dealt[i]).await)
            .unwrap()
            .map(|v| v.into_iter().map(Fe::value).collect())
    }))
}

pub fn run_entropy(
    f: Field,
    m: usize,
    seed: u64,
    inputs: &[Vec<u64>],
    q: u32,
) -> Run<Result<EntropyResult, ProtocolError>> {
    let dealt = deal(&f, m, seed, inputs);
    agree(at_peers(f, m, seed, |i, e| e.run(async |ctx: &Ctx| tsallis_entropy(ctx, &dealt[i], q).await).unwrap()))
}

/// `seen[i][k]` is 1 when input peer `i` observed item `k`.
pub fn run_distinct(f: Field, m: usize, seed: u64, seen: &[Vec<u64>]) -> Run<Result<DistinctResult, ProtocolError>> {
    let negated: Vec<Vec<u64>> = seen.iter().map(|v| v.iter().map(|&b| 1 - b).collect()).collect();
    let dealt = deal(&f, m, seed, &negated);
    agree(at_peers(f, m, seed, |i, e| e.run(async |ctx: &Ctx| distinct_count(ctx, &dealt[i]).await).unwrap()))
}

pub fn run_correlation(
    f: Field,
    m: usize,
    seed: u64,
    cfg: &CorrelationConfig,
    events: &[Vec<(u64, u64)>],
) -> Run<Result<CorrelationResult, ProtocolError>> {
    let flat: Vec<Vec<u64>> = events
        .iter()
        .enumerate()
        .map(|(i, ev)| {
            let ev: Vec<Event> = ev.iter().map(|&(key, weight)| Event { key, weight }).collect();
            cfg.pad_events(&f, i, &ev).unwrap().iter().flat_map(|e| [e.key, e.weight]).collect()
        })
        .collect();
    let dealt = deal(&f, m, seed, &flat);
    agree(at_peers(f, m, seed, |i, e| {
        let mine: Vec<Vec<(Fe, Fe)>> = dealt[i].iter().map(|v| v.chunks(2).map(|c| (c[0], c[1])).collect()).collect();
        e.run(async |ctx: &Ctx| event_correlation(ctx, cfg, &mine).await).unwrap()
    }))
}

/// Chi-square statistic and degrees of freedom of a homogeneity test between
/// two histograms over the same cells. Empty cells are dropped.
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> (f64, usize) {
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let total = (x + y) as f64;
        if total == 0.0 {
            continue;
        }
        cells += 1;
        let ea = total * na / (na + nb);
        let eb = total * nb / (na + nb);
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    (stat, cells.saturating_sub(1))
}

/// Upper `alpha` quantile of the chi-square distribution.
pub fn chi_square_critical(df: usize, alpha: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    ChiSquared::new(df as f64).unwrap().inverse_cdf(1.0 - alpha)
}

/// Bucket of `v` when `[0, p)` is cut into `bins` equal parts.
pub fn bucket(v: u64, p: u64, bins: u64) -> u64 {
    (v as u128 * bins as u128 / p as u128) as u64
}

/// Random desk-scale protocol instances.
pub mod gen {
    use rand::Rng;

    pub fn vectors(rng: &mut impl Rng, n: usize, r: usize, max: u64) -> Vec<Vec<u64>> {
        (0..n).map(|_| (0..r).map(|_| rng.gen_range(0..=max)).collect()).collect()
    }

    pub fn bits(rng: &mut impl Rng, n: usize, r: usize, density: f64) -> Vec<Vec<u64>> {
        (0..n).map(|_| (0..r).map(|_| rng.gen_bool(density) as u64).collect()).collect()
    }

    /// Up to `s` events per peer over a small key space so that keys collide;
    /// occasionally an overweight event or a repeated key.
    pub fn events(rng: &mut impl Rng, n: usize, s: usize, w_max: u64) -> Vec<Vec<(u64, u64)>> {
        (0..n)
            .map(|_| {
                let count = rng.gen_range(0..=s);
                let mut keys: Vec<u64> = Vec::new();
                while keys.len() < count {
                    let k = rng.gen_range(1..=2 * s as u64 + 2);
                    if !keys.contains(&k) || rng.gen_bool(0.05) {
                        keys.push(k);
                    }
                }
                keys.into_iter()
                    .map(|k| {
                        let w = if rng.gen_bool(0.05) { w_max + rng.gen_range(0..3) } else { rng.gen_range(0..w_max) };
                        (k, w)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Protocol outputs in the reveal log, by label. Internal reveals (masked
/// intermediates of comparisons) are listed under their kind's name.
pub fn reveal_log(reveals: &[privagg::Reveal]) -> std::collections::BTreeMap<String, Vec<u64>> {
    let mut out: std::collections::BTreeMap<String, Vec<u64>> = Default::default();
    for r in reveals {
        match r.kind {
            privagg::RevealKind::Output(label) => {
                out.entry(label.to_string()).or_default().extend(r.values.iter().map(|v| v.value()))
            }
            other => out.entry(format!("{other:?}")).or_default().extend(std::iter::repeat_n(0, r.count)),
        }
    }
    out
}

/// One homogeneity test between the joint distributions of a set of share slots.
#[derive(Debug)]
pub struct SlotTest {
    pub slots: Vec<usize>,
    pub statistic: f64,
    pub df: usize,
    pub critical: f64,
}

impl SlotTest {
    pub fn distinguishes(&self) -> bool {
        self.statistic > self.critical
    }
}

/// Shares `s0` and `s1` `samples` times each among `m` peers with a
/// polynomial of degree `degree`, and tests every set of `size` slots for a
/// difference between the two secrets. Each slot is cut into coarse bins so
/// that the joint table has at most 64 cells; `alpha` is split over the
/// slot sets (Bonferroni).
pub fn slot_privacy(
    f: &Field,
    m: usize,
    degree: usize,
    size: usize,
    samples: usize,
    seed: u64,
    alpha: f64,
) -> Vec<SlotTest> {
    use rand::SeedableRng;
    let (s0, s1) = (f.elem(1), f.elem(f.p() / 2 + 3));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let bins = [64u64, 64, 8, 4, 2, 2][size.min(5)];
    let mut draw = |secret: Fe| -> Vec<Vec<u64>> {
        (0..samples)
            .map(|_| {
                let mut coeffs = vec![secret];
                coeffs.extend((0..degree).map(|_| f.random(&mut rng)));
                (0..m).map(|i| f.eval_poly(&coeffs, f.elem(privagg::sharing::eval_point(i))).value()).collect()
            })
            .collect()
    };
    let (a, b) = (draw(s0), draw(s1));
    let subsets = subsets(m, size);
    let alpha = alpha / subsets.len() as f64;
    subsets
        .into_iter()
        .map(|slots| {
            let cells = bins.pow(size as u32) as usize;
            let hist = |rows: &[Vec<u64>]| {
                let mut h = vec![0u64; cells];
                for row in rows {
                    let cell = slots.iter().fold(0u64, |acc, &i| acc * bins + bucket(row[i], f.p(), bins));
                    h[cell as usize] += 1;
                }
                h
            };
            let (statistic, df) = chi_square_homogeneity(&hist(&a), &hist(&b));
            SlotTest { slots, statistic, df, critical: chi_square_critical(df, alpha) }
        })
        .collect()
}

fn subsets(m: usize, size: usize) -> Vec<Vec<usize>> {
    if size == 0 {
        return vec![vec![]];
    }
    (0..m)
        .flat_map(|first| {
            subsets(m, size - 1).into_iter().filter(move |rest| rest.first().is_none_or(|&r| r > first)).map(
                move |mut rest| {
                    rest.insert(0, first);
                    rest
                },
            )
        })
        .collect()
}
