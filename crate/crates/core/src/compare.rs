//! Comparison operations on shared values: equality via Fermat's little
//! theorem, prefix-OR, random bits, bitwise random values, LSB extraction,
//! less-than and short range tests.
//!
//! Every function is vectorized: all instances advance in the same rounds.
//! The public `*_many` functions bump the per-kind invocation counters;
//! the internal building blocks they use do not, so the counters report
//! only what the caller asked for.

use std::f64::consts::LN_2;

use futures::future::{FutureExt, LocalBoxFuture};

use crate::engine::{join_all, Ctx, EngineError, OpKind, OpOutput, Operand, Operation, RevealKind};
use crate::field::Fe;

/// Consecutive fruitless draws tolerated before giving up.
pub const MAX_RETRIES: u32 = 64;

/// Target failure probability (as `ln`) for one batch of pooled random draws.
const POOL_LN_EPS: f64 = -20.0 * LN_2;

/// Sharings of the bits of a random `r < p`, least significant first, plus a
/// sharing of `r` itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitwiseSharing {
    pub bits: Vec<Fe>,
    pub value: Fe,
}

/// Smallest `b >= need` such that `b` independent trials with success
/// probability `q` yield fewer than `need` successes with probability at
/// most `2^-20`, from the exact binomial tail.
pub fn oversample(need: usize, q: f64) -> usize {
    if need == 0 {
        return 0;
    }
    if q >= 1.0 {
        return need;
    }
    assert!(q > 0.0, "success probability must be positive");
    // Chernoff gives an upper end for the search
    let mut hi = need.max(1);
    loop {
        let mu = q * hi as f64;
        if mu > need as f64 && -(mu - need as f64).powi(2) / (2.0 * mu) <= POOL_LN_EPS {
            break;
        }
        hi *= 2;
    }
    let mut lo = need;
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if ln_tail_below(mid, need, q) <= POOL_LN_EPS {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

/// `ln P(X < need)` for `X ~ Bin(b, q)`.
fn ln_tail_below(b: usize, need: usize, q: f64) -> f64 {
    let (lq, lf) = (q.ln(), (1.0 - q).ln());
    let mut term = b as f64 * lf;
    let mut terms = Vec::with_capacity(need);
    for k in 0..need.min(b + 1) {
        terms.push(term);
        term += ((b - k) as f64).ln() - ((k + 1) as f64).ln() + lq - lf;
    }
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
}

/// `x^e` for every `x` by square-and-multiply. Squarings form a chain; the
/// accumulator multiplication for bit `i` joins the squaring of round `i + 1`,
/// so the cost is `⌊log2 e⌋ + popcount(e) − 1` multiplications in
/// `⌊log2 e⌋ + 1` rounds (one fewer when `e` is a power of two).
pub async fn pow_many(ctx: &Ctx, xs: &[Fe], e: u64) -> Vec<Fe> {
    let n = xs.len();
    if n == 0 {
        return Vec::new();
    }
    if e == 0 {
        return vec![Fe::ONE; n];
    }
    let top = 63 - e.leading_zeros();
    let mut power = xs.to_vec();
    let mut acc: Option<Vec<Fe>> = (e & 1 == 1).then(|| xs.to_vec());
    for r in 1..=top + 1 {
        let square = r <= top;
        let mut fold = r >= 2 && (e >> (r - 1)) & 1 == 1;
        if fold && acc.is_none() {
            acc = Some(power.clone());
            fold = false;
        }
        let mut pairs = Vec::with_capacity(2 * n);
        if square {
            pairs.extend(power.iter().map(|&x| (x, x)));
        }
        if fold {
            pairs.extend(acc.as_ref().unwrap().iter().copied().zip(power.iter().copied()));
        }
        if pairs.is_empty() {
            break;
        }
        let out = ctx.mul(pairs).await;
        let (sq, folded) = if square { out.split_at(n) } else { out.split_at(0) };
        if fold {
            acc = Some(folded.to_vec());
        }
        if square {
            power = sq.to_vec();
        }
    }
    acc.expect("e > 0 sets some bit")
}

/// `[x == 0]` for every `x`: `1 − x^(p−1)`.
pub(crate) async fn is_zero_raw(ctx: &Ctx, xs: &[Fe]) -> Vec<Fe> {
    let f = *ctx.field();
    pow_many(ctx, xs, f.p() - 1).await.into_iter().map(|y| f.sub(Fe::ONE, y)).collect()
}

/// `[a == b]` for every pair; `l + k − 2` multiplications in `l` rounds each.
pub async fn equal_many(ctx: &Ctx, pairs: &[(Fe, Fe)]) -> Vec<Fe> {
    ctx.count_op(OpKind::Equal, pairs.len());
    let f = *ctx.field();
    let diffs: Vec<Fe> = pairs.iter().map(|&(a, b)| f.sub(a, b)).collect();
    is_zero_raw(ctx, &diffs).await
}

pub async fn equal(ctx: &Ctx, a: Fe, b: Fe) -> Fe {
    equal_many(ctx, &[(a, b)]).await[0]
}

/// Running OR of each sequence, index 0 first. Sequences may differ in length.
pub async fn prefix_or_many(ctx: &Ctx, seqs: &[Vec<Fe>]) -> Vec<Vec<Fe>> {
    ctx.count_op(OpKind::PrefixOr, seqs.len());
    prefix_or_raw(ctx, seqs).await
}

pub async fn prefix_or(ctx: &Ctx, bits: &[Fe]) -> Vec<Fe> {
    prefix_or_many(ctx, &[bits.to_vec()]).await.pop().unwrap()
}

async fn prefix_or_raw(ctx: &Ctx, seqs: &[Vec<Fe>]) -> Vec<Vec<Fe>> {
    let f = *ctx.field();
    let mut out: Vec<Vec<Fe>> = seqs
        .iter()
        .map(|s| {
            let mut v = Vec::with_capacity(s.len());
            v.extend(s.first().copied());
            v
        })
        .collect();
    let longest = seqs.iter().map(Vec::len).max().unwrap_or(0);
    for j in 1..longest {
        let active: Vec<usize> = (0..seqs.len()).filter(|&i| seqs[i].len() > j).collect();
        let prods = ctx.mul(active.iter().map(|&i| (out[i][j - 1], seqs[i][j]))).await;
        for (&i, xy) in active.iter().zip(prods) {
            let x = out[i][j - 1];
            let y = seqs[i][j];
            out[i].push(f.sub(f.add(x, y), xy));
        }
    }
    out
}

/// `n` uniformly random shared bits. Each attempt costs one random sharing,
/// one multiplication and one reconstruction; attempts are pooled so that a
/// single wave almost always suffices.
pub async fn random_bits(ctx: &Ctx, n: usize) -> Vec<Fe> {
    ctx.count_op(OpKind::RandomBit, n);
    random_bits_raw(ctx, n).await
}

async fn random_bits_raw(ctx: &Ctx, n: usize) -> Vec<Fe> {
    let f = *ctx.field();
    let q = 1.0 - 1.0 / f.p() as f64;
    let half = f.half();
    let mut out = Vec::with_capacity(n);
    let mut issued = 0u64;
    let mut dry = 0;
    while out.len() < n {
        let draw = oversample(n - out.len(), q);
        let r = ctx.random(draw).await;
        let squares = ctx.mul(r.iter().map(|&x| (x, x))).await;
        let opened = ctx.open(squares, RevealKind::RandomSquare).await;
        issued += draw as u64;
        let before = out.len();
        for (&ri, s) in r.iter().zip(opened) {
            if out.len() == n {
                break;
            }
            if s.is_zero() {
                continue;
            }
            let u = f.sqrt(s).expect("r² is a square");
            let u_inv = f.inv(u).expect("u is nonzero");
            out.push(f.mul(f.add(f.mul(u_inv, ri), Fe::ONE), half));
        }
        if out.len() == before {
            dry += 1;
            if dry >= MAX_RETRIES {
                ctx.fail(EngineError::RetryExhausted(dry));
                out.resize(n, Fe::ZERO);
            }
        } else {
            dry = 0;
        }
    }
    ctx.note_discarded(issued.saturating_sub(n as u64));
    out
}

/// `n` bitwise shared random values below `p`. Candidates of `l` random bits
/// are drawn in a pool, each is tested against `p − 1` with
/// [`bitlt_public_many`], the validity bits are opened and the first `n`
/// valid candidates are kept.
pub async fn bitwise_random_many(ctx: &Ctx, n: usize) -> Vec<BitwiseSharing> {
    ctx.count_op(OpKind::BitwiseRandom, n);
    bitwise_random_raw(ctx, n).await
}

async fn bitwise_random_raw(ctx: &Ctx, n: usize) -> Vec<BitwiseSharing> {
    let f = *ctx.field();
    let l = f.bits() as usize;
    let q = f.p() as f64 / (1u128 << l) as f64;
    let per_candidate = (2 * l - 1) as u64;
    let mut out = Vec::with_capacity(n);
    let mut dry = 0;
    while out.len() < n {
        let count = oversample(n - out.len(), q);
        let bits = random_bits_raw(ctx, count * l).await;
        let candidates: Vec<&[Fe]> = bits.chunks_exact(l).collect();
        let items: Vec<(u64, &[Fe])> = candidates.iter().map(|&c| (f.p() - 1, c)).collect();
        let above = bitlt_public_raw(ctx, &items).await;
        let valid = ctx.open(above.iter().map(|&a| f.sub(Fe::ONE, a)), RevealKind::CandidateValid).await;
        let before = out.len();
        for (cand, v) in candidates.iter().zip(valid) {
            if out.len() < n && v == Fe::ONE {
                let value = cand.iter().rev().fold(Fe::ZERO, |acc, &b| f.add(f.add(acc, acc), b));
                out.push(BitwiseSharing { bits: cand.to_vec(), value });
            }
        }
        let used = out.len() - before;
        ctx.note_discarded((count - used) as u64 * per_candidate);
        if used == 0 {
            dry += 1;
            if dry >= MAX_RETRIES {
                ctx.fail(EngineError::RetryExhausted(dry));
                let zero = BitwiseSharing { bits: vec![Fe::ZERO; l], value: Fe::ZERO };
                out.resize(n, zero);
            }
        } else {
            dry = 0;
        }
    }
    out
}

/// `[c < r]` for public `c` and bitwise shared `r`; `l − 1` multiplications
/// in `l − 1` rounds.
pub async fn bitlt_public_many(ctx: &Ctx, items: &[(u64, &[Fe])]) -> Vec<Fe> {
    ctx.count_op(OpKind::BitLtPublic, items.len());
    bitlt_public_raw(ctx, items).await
}

async fn bitlt_public_raw(ctx: &Ctx, items: &[(u64, &[Fe])]) -> Vec<Fe> {
    let f = *ctx.field();
    // d_j = c_j XOR r_j, listed from the most significant bit down
    let diffs: Vec<Vec<Fe>> = items
        .iter()
        .map(|&(c, bits)| {
            debug_assert!(bits.len() >= 64 || c >> bits.len() == 0, "c has more bits than r");
            (0..bits.len()).rev().map(|j| if (c >> j) & 1 == 1 { f.sub(Fe::ONE, bits[j]) } else { bits[j] }).collect()
        })
        .collect();
    let prefix = prefix_or_raw(ctx, &diffs).await;
    items
        .iter()
        .zip(&prefix)
        .map(|(&(c, bits), pre)| {
            let l = bits.len();
            // pre[l-1-j] is the OR of d over positions l-1..=j
            let mut acc = Fe::ZERO;
            for j in 0..l {
                if (c >> j) & 1 == 0 {
                    let here = pre[l - 1 - j];
                    let above = if j + 1 < l { pre[l - 2 - j] } else { Fe::ZERO };
                    acc = f.add(acc, f.sub(here, above));
                }
            }
            acc
        })
        .collect()
}

/// Least significant bit of each shared `x`.
pub async fn lsb_many(ctx: &Ctx, xs: &[Fe]) -> Vec<Fe> {
    ctx.count_op(OpKind::Lsb, xs.len());
    lsb_raw(ctx, xs).await
}

async fn lsb_raw(ctx: &Ctx, xs: &[Fe]) -> Vec<Fe> {
    let f = *ctx.field();
    let rs = bitwise_random_raw(ctx, xs.len()).await;
    let masked = ctx.open(xs.iter().zip(&rs).map(|(&x, r)| f.add(x, r.value)), RevealKind::Masked).await;
    let items: Vec<(u64, &[Fe])> = masked.iter().zip(&rs).map(|(c, r)| (c.value(), &r.bits[..])).collect();
    let wrapped = bitlt_public_raw(ctx, &items).await;
    // c_0 XOR r_0 is linear because c_0 is public
    let ys: Vec<Fe> = masked
        .iter()
        .zip(&rs)
        .map(|(c, r)| if c.value() & 1 == 0 { r.bits[0] } else { f.sub(Fe::ONE, r.bits[0]) })
        .collect();
    let prods = ctx.mul(ys.iter().copied().zip(wrapped.iter().copied())).await;
    ys.iter().zip(&wrapped).zip(prods).map(|((&y, &w), yw)| f.sub(f.add(y, w), f.add(yw, yw))).collect()
}

/// `[a < b]` for each pair of operands, values read as integers in `[0, p)`.
pub async fn less_than_many(ctx: &Ctx, pairs: &[(Operand, Operand)]) -> Vec<Fe> {
    ctx.count_op(OpKind::LessThan, pairs.len());
    less_than_raw(ctx, pairs).await
}

pub async fn less_than(ctx: &Ctx, a: Operand, b: Operand) -> Fe {
    less_than_many(ctx, &[(a, b)]).await[0]
}

#[derive(Clone, Copy)]
enum Pred {
    Public(Fe),
    Lsb(usize),
}

async fn less_than_raw(ctx: &Ctx, pairs: &[(Operand, Operand)]) -> Vec<Fe> {
    let f = *ctx.field();
    let as_share = |o: Operand| match o {
        Operand::Shared(s) => s,
        Operand::Public(v) => f.elem(v),
    };
    // [x < p/2] for public x
    let below_half = |v: u64| if f.elem(v).value() <= (f.p() - 1) / 2 { Fe::ONE } else { Fe::ZERO };

    let mut lsb_inputs = Vec::new();
    let mut preds = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        let mut pred = |o: Operand| match o {
            Operand::Public(v) => Pred::Public(below_half(v)),
            Operand::Shared(s) => {
                lsb_inputs.push(f.add(s, s));
                Pred::Lsb(lsb_inputs.len() - 1)
            }
        };
        if let (Operand::Public(_), Operand::Public(_)) = (a, b) {
            preds.push(None);
            continue;
        }
        let pa = pred(a);
        let pb = pred(b);
        let d = f.sub(as_share(a), as_share(b));
        lsb_inputs.push(f.add(d, d));
        preds.push(Some((pa, pb, lsb_inputs.len() - 1)));
    }

    let lsbs = lsb_raw(ctx, &lsb_inputs).await;
    let pred_value = |p: Pred| match p {
        Pred::Public(v) => v,
        Pred::Lsb(i) => f.sub(Fe::ONE, lsbs[i]),
    };

    // A(1−B) + (1 − A − B + 2AB)(1 − C)
    let mut first = Vec::new();
    let mut staged = Vec::with_capacity(pairs.len());
    for pred in &preds {
        let Some((pa, pb, pc)) = *pred else {
            staged.push(None);
            continue;
        };
        let a = pred_value(pa);
        let b = pred_value(pb);
        let not_c = lsbs[pc];
        match (pa, pb) {
            (Pred::Lsb(_), Pred::Lsb(_)) => {
                first.push((a, b));
                staged.push(Some((a, b, not_c, None)));
            }
            _ => {
                let ab = f.mul(a, b);
                let x = f.add(f.sub(Fe::ONE, f.add(a, b)), f.add(ab, ab));
                first.push((x, not_c));
                staged.push(Some((a, b, not_c, Some(ab))));
            }
        }
    }
    let first_out = ctx.mul(first).await;

    let mut first_iter = first_out.into_iter();
    let mut ab_of = vec![Fe::ZERO; pairs.len()];
    let mut xc_of = vec![Fe::ZERO; pairs.len()];
    let mut pending = Vec::new();
    for (i, st) in staged.iter().enumerate() {
        let Some((a, b, not_c, local_ab)) = *st else { continue };
        let v = first_iter.next().unwrap();
        match local_ab {
            Some(ab) => {
                ab_of[i] = ab;
                xc_of[i] = v;
            }
            None => {
                ab_of[i] = v;
                let x = f.add(f.sub(Fe::ONE, f.add(a, b)), f.add(v, v));
                pending.push((i, x, not_c));
            }
        }
    }
    let second_out = ctx.mul(pending.iter().map(|&(_, x, c)| (x, c))).await;
    for (&(i, _, _), v) in pending.iter().zip(second_out) {
        xc_of[i] = v;
    }

    pairs
        .iter()
        .zip(&staged)
        .enumerate()
        .map(|(i, (&(a, b), st))| match *st {
            None => {
                let (Operand::Public(a), Operand::Public(b)) = (a, b) else { unreachable!() };
                if f.elem(a).value() < f.elem(b).value() {
                    Fe::ONE
                } else {
                    Fe::ZERO
                }
            }
            Some((pa, _, _, _)) => f.add(f.sub(pa, ab_of[i]), xc_of[i]),
        })
        .collect()
}

/// `[lo <= x <= hi]` for each `(x, lo, hi)`: the product of `x − i` over the
/// range, built as a balanced tree, tested against zero.
pub async fn short_range_many(ctx: &Ctx, items: &[(Fe, u64, u64)]) -> Vec<Fe> {
    ctx.count_op(OpKind::ShortRange, items.len());
    let f = *ctx.field();
    if let Some(&(_, lo, hi)) = items.iter().find(|&&(_, lo, hi)| lo > hi || hi >= f.p()) {
        ctx.fail(EngineError::InvalidOperation(format!("short range [{lo}, {hi}]")));
        return vec![Fe::ZERO; items.len()];
    }
    let mut layers: Vec<Vec<Fe>> =
        items.iter().map(|&(x, lo, hi)| (lo..=hi).map(|i| f.sub(x, f.elem(i))).collect()).collect();
    while layers.iter().any(|l| l.len() > 1) {
        let mut pairs = Vec::new();
        for layer in &layers {
            for pair in layer.chunks_exact(2) {
                pairs.push((pair[0], pair[1]));
            }
        }
        let prods = ctx.mul(pairs).await;
        let mut it = prods.into_iter();
        for layer in layers.iter_mut() {
            let odd = (layer.len() % 2 == 1).then(|| *layer.last().unwrap());
            let mut next: Vec<Fe> = (0..layer.len() / 2).map(|_| it.next().unwrap()).collect();
            next.extend(odd);
            *layer = next;
        }
    }
    let prods: Vec<Fe> = layers.into_iter().map(|l| l[0]).collect();
    is_zero_raw(ctx, &prods).await
}

pub async fn short_range(ctx: &Ctx, x: Fe, lo: u64, hi: u64) -> Fe {
    short_range_many(ctx, &[(x, lo, hi)]).await[0]
}

/// Predicted multiplications of one `less_than`. `public` tells whether one
/// operand is a public constant.
pub fn less_than_mults(l: u32, public: bool) -> u64 {
    let per_lsb = 3 * l as u64 - 1;
    if public {
        2 * per_lsb + 1
    } else {
        3 * per_lsb + 2
    }
}

/// Predicted multiplications of one `short_range` over `[lo, hi]`.
pub fn short_range_mults(l: u32, k: u32, lo: u64, hi: u64) -> u64 {
    (hi - lo) + l as u64 + k as u64 - 2
}

/// Whether testing `x < y` (public `y`) is cheaper as `short_range(x, 0, y−1)`
/// than as `less_than(x, y)`.
pub fn prefer_short_range(l: u32, k: u32, y: u64) -> bool {
    y >= 1 && short_range_mults(l, k, 0, y - 1) <= less_than_mults(l, true)
}

/// Executes a batch of scheduled operations, grouping equal kinds so that
/// each group advances as one vectorized operation.
pub(crate) async fn run_operations(ctx: &Ctx, ops: Vec<(u64, Operation)>) -> Vec<(u64, OpOutput)> {
    let mut mults = (Vec::new(), Vec::new());
    let mut opens = (Vec::new(), Vec::new());
    let mut randoms = Vec::new();
    let mut rbits = Vec::new();
    let mut bitwise = Vec::new();
    let mut equals = (Vec::new(), Vec::new());
    let mut lts = (Vec::new(), Vec::new());
    let mut ranges = (Vec::new(), Vec::new());
    let mut prefixes = (Vec::new(), Vec::new());
    let mut bitlts: (Vec<u64>, Vec<(u64, Vec<Fe>)>) = (Vec::new(), Vec::new());
    let mut lsbs = (Vec::new(), Vec::new());
    for (id, op) in ops {
        match op {
            Operation::Multiply(a, b) => {
                mults.0.push(id);
                mults.1.push((a, b));
            }
            Operation::Reconstruct(s) => {
                opens.0.push(id);
                opens.1.push(s);
            }
            Operation::RandomSharing => randoms.push(id),
            Operation::RandomBit => rbits.push(id),
            Operation::BitwiseRandom => bitwise.push(id),
            Operation::Equal(a, b) => {
                equals.0.push(id);
                equals.1.push((a, b));
            }
            Operation::LessThan(a, b) => {
                lts.0.push(id);
                lts.1.push((a, b));
            }
            Operation::ShortRange { value, lo, hi } => {
                ranges.0.push(id);
                ranges.1.push((value, lo, hi));
            }
            Operation::PrefixOr(bits) => {
                prefixes.0.push(id);
                prefixes.1.push(bits);
            }
            Operation::BitLtPublic { c, bits } => {
                bitlts.0.push(id);
                bitlts.1.push((c, bits));
            }
            Operation::Lsb(x) => {
                lsbs.0.push(id);
                lsbs.1.push(x);
            }
        }
    }

    fn tag(ids: Vec<u64>, outs: Vec<OpOutput>) -> Vec<(u64, OpOutput)> {
        ids.into_iter().zip(outs).collect()
    }
    fn shares(v: Vec<Fe>) -> Vec<OpOutput> {
        v.into_iter().map(OpOutput::Share).collect()
    }

    let mut groups: Vec<LocalBoxFuture<'_, Vec<(u64, OpOutput)>>> = Vec::new();
    if !mults.0.is_empty() {
        groups.push(
            async move {
                ctx.count_op(OpKind::Multiply, mults.1.len());
                tag(mults.0, shares(ctx.mul(mults.1).await))
            }
            .boxed_local(),
        );
    }
    if !opens.0.is_empty() {
        groups.push(
            async move {
                let v = ctx.open(opens.1, RevealKind::Requested).await;
                tag(opens.0, v.into_iter().map(OpOutput::Public).collect())
            }
            .boxed_local(),
        );
    }
    if !randoms.is_empty() {
        groups.push(async move { tag(randoms.clone(), shares(ctx.random(randoms.len()).await)) }.boxed_local());
    }
    if !rbits.is_empty() {
        groups.push(async move { tag(rbits.clone(), shares(random_bits(ctx, rbits.len()).await)) }.boxed_local());
    }
    if !bitwise.is_empty() {
        groups.push(
            async move {
                let v = bitwise_random_many(ctx, bitwise.len()).await;
                tag(bitwise, v.into_iter().map(OpOutput::Bitwise).collect())
            }
            .boxed_local(),
        );
    }
    if !equals.0.is_empty() {
        groups.push(async move { tag(equals.0, shares(equal_many(ctx, &equals.1).await)) }.boxed_local());
    }
    if !lts.0.is_empty() {
        groups.push(async move { tag(lts.0, shares(less_than_many(ctx, &lts.1).await)) }.boxed_local());
    }
    if !ranges.0.is_empty() {
        groups.push(async move { tag(ranges.0, shares(short_range_many(ctx, &ranges.1).await)) }.boxed_local());
    }
    if !prefixes.0.is_empty() {
        groups.push(
            async move {
                let v = prefix_or_many(ctx, &prefixes.1).await;
                tag(prefixes.0, v.into_iter().map(OpOutput::Shares).collect())
            }
            .boxed_local(),
        );
    }
    if !bitlts.0.is_empty() {
        groups.push(
            async move {
                if bitlts.1.iter().any(|(c, bits)| bits.len() < 64 && c >> bits.len() != 0) {
                    ctx.fail(EngineError::InvalidOperation("public operand wider than the shared bits".into()));
                }
                let items: Vec<(u64, &[Fe])> = bitlts.1.iter().map(|(c, b)| (*c, &b[..])).collect();
                tag(bitlts.0, shares(bitlt_public_many(ctx, &items).await))
            }
            .boxed_local(),
        );
    }
    if !lsbs.0.is_empty() {
        groups.push(async move { tag(lsbs.0, shares(lsb_many(ctx, &lsbs.1).await)) }.boxed_local());
    }
    let mut out: Vec<(u64, OpOutput)> = join_all(groups).await.into_iter().flatten().collect();
    out.sort_by_key(|&(id, _)| id);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oversample_is_tight_for_near_certain_success() {
        assert_eq!(oversample(1000, 1.0 - 2f64.powi(-61)), 1000);
        assert_eq!(oversample(0, 0.5), 0);
    }

    #[test]
    fn oversample_meets_the_target_exactly() {
        // one success at rate 1/2 needs 20 fair coin flips
        assert_eq!(oversample(1, 0.5), 20);
        for &(need, q) in &[(1usize, 12.0 / 13.0), (5, 13.0 / 16.0), (100, 0.5), (1000, 0.53)] {
            let b = oversample(need, q);
            assert!(b >= need);
            // the tail at b is below the target and at b - 1 above it
            assert!(binomial_below(b, need, q) <= 2f64.powi(-20) * 1.0001);
            if b > need {
                assert!(binomial_below(b - 1, need, q) > 2f64.powi(-20) * 0.9999);
            }
        }
    }

    fn binomial_below(b: usize, need: usize, q: f64) -> f64 {
        // P(X < need), X ~ Bin(b, q), summed in log space
        let ln_choose =
            |n: usize, k: usize| -> f64 { (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum() };
        (0..need).map(|k| (ln_choose(b, k) + k as f64 * q.ln() + (b - k) as f64 * (1.0 - q).ln()).exp()).sum()
    }

    #[test]
    fn cost_helpers() {
        assert_eq!(less_than_mults(4, false), 35);
        assert_eq!(less_than_mults(4, true), 23);
        assert_eq!(short_range_mults(4, 2, 2, 5), 7);
        // short range wins for small bounds and loses for large ones
        assert!(prefer_short_range(62, 3, 10));
        assert!(!prefer_short_range(62, 3, 1000));
    }
}
