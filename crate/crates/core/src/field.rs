//! Arithmetic in a prime field `Z_p` with `p < 2^63`, plus the prime search
//! used to pick moduli whose `p - 1` has few one-bits.
//!
//! Elements are plain `u64` residues. Products go through a 128-bit
//! intermediate, which is enough for every modulus this crate accepts.

use rand::RngCore;
use thiserror::Error;

/// Largest accepted modulus bit length. Sums of two residues must fit in a `u64`.
pub const MAX_BITS: u32 = 63;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FieldError {
    #[error("{0} is not prime")]
    NotPrime(u64),
    #[error("modulus {0} exceeds {MAX_BITS} bits")]
    TooLarge(u64),
    #[error("no prime >= 2^{min_bits} with popcount(p-1) <= {max_k} below 2^63")]
    NotFound { min_bits: u32, max_k: u32 },
    #[error("invalid prime search arguments: min_bits={min_bits}, max_k={max_k}")]
    InvalidSearch { min_bits: u32, max_k: u32 },
    #[error("duplicate interpolation point {0}")]
    DuplicatePoint(u64),
    #[error("empty interpolation point set")]
    NoPoints,
}

/// A residue in `[0, p)`. Which field it belongs to is tracked by the caller.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fe(pub(crate) u64);

impl Fe {
    pub const ZERO: Fe = Fe(0);
    pub const ONE: Fe = Fe(1);

    #[inline]
    pub fn value(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl std::fmt::Display for Fe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// The prime field `Z_p` together with `l` (bit length of `p`) and `k`
/// (number of one-bits in `p - 1`). The pair `(l, k)` fixes the cost of
/// Fermat-based equality testing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Field {
    p: u64,
    bits: u32,
    ones: u32,
}

impl Field {
    /// Builds the field for modulus `p`, rejecting composites and moduli wider than 63 bits.
    pub fn new(p: u64) -> Result<Self, FieldError> {
        if p >= 1 << MAX_BITS {
            return Err(FieldError::TooLarge(p));
        }
        if !is_prime(p) {
            return Err(FieldError::NotPrime(p));
        }
        Ok(Field { p, bits: 64 - p.leading_zeros(), ones: (p - 1).count_ones() })
    }

    #[inline]
    pub fn p(&self) -> u64 {
        self.p
    }

    /// Bit length `l` of `p`.
    #[inline]
    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Number of one-bits `k` in `p - 1`.
    #[inline]
    pub fn ones(&self) -> u32 {
        self.ones
    }

    /// Reduces an arbitrary `u64` into the field.
    #[inline]
    pub fn elem(&self, v: u64) -> Fe {
        Fe(v % self.p)
    }

    /// Wraps a value already known to be `< p`. Returns `None` otherwise.
    #[inline]
    pub fn try_elem(&self, v: u64) -> Option<Fe> {
        (v < self.p).then_some(Fe(v))
    }

    #[inline]
    pub fn add(&self, a: Fe, b: Fe) -> Fe {
        let s = a.0 + b.0;
        Fe(if s >= self.p { s - self.p } else { s })
    }

    #[inline]
    pub fn sub(&self, a: Fe, b: Fe) -> Fe {
        Fe(if a.0 >= b.0 { a.0 - b.0 } else { a.0 + self.p - b.0 })
    }

    #[inline]
    pub fn neg(&self, a: Fe) -> Fe {
        if a.0 == 0 {
            a
        } else {
            Fe(self.p - a.0)
        }
    }

    #[inline]
    pub fn mul(&self, a: Fe, b: Fe) -> Fe {
        Fe(((a.0 as u128 * b.0 as u128) % self.p as u128) as u64)
    }

    /// `a^e` by left-to-right square-and-multiply.
    pub fn pow(&self, a: Fe, e: u64) -> Fe {
        let mut acc = Fe::ONE;
        for i in (0..64 - e.leading_zeros()).rev() {
            acc = self.mul(acc, acc);
            if (e >> i) & 1 == 1 {
                acc = self.mul(acc, a);
            }
        }
        acc
    }

    /// Multiplicative inverse, `None` for zero.
    pub fn inv(&self, a: Fe) -> Option<Fe> {
        (!a.is_zero()).then(|| self.pow(a, self.p - 2))
    }

    /// The inverse of two, used to map `{-1, 1}` onto `{0, 1}`.
    pub fn half(&self) -> Fe {
        Fe(self.p.div_ceil(2))
    }

    /// Square root of a quadratic residue, canonicalised to `[0, (p-1)/2]`.
    /// Returns `None` for non-residues.
    pub fn sqrt(&self, a: Fe) -> Option<Fe> {
        if a.is_zero() {
            return Some(a);
        }
        let p = self.p;
        if p == 2 {
            return Some(a);
        }
        if self.pow(a, (p - 1) / 2) != Fe::ONE {
            return None;
        }
        let root = if p % 4 == 3 { self.pow(a, (p + 1) / 4) } else { self.tonelli_shanks(a) };
        Some(if root.0 > (p - 1) / 2 { self.neg(root) } else { root })
    }

    fn tonelli_shanks(&self, a: Fe) -> Fe {
        let p = self.p;
        let s = (p - 1).trailing_zeros();
        let q = (p - 1) >> s;
        let mut z = Fe(2);
        while self.pow(z, (p - 1) / 2) == Fe::ONE {
            z = Fe(z.0 + 1);
        }
        let mut m = s;
        let mut c = self.pow(z, q);
        let mut t = self.pow(a, q);
        let mut r = self.pow(a, q.div_ceil(2));
        while t != Fe::ONE {
            let mut i = 0;
            let mut t2 = t;
            while t2 != Fe::ONE {
                t2 = self.mul(t2, t2);
                i += 1;
            }
            let mut b = c;
            for _ in 0..m - i - 1 {
                b = self.mul(b, b);
            }
            m = i;
            c = self.mul(b, b);
            t = self.mul(t, c);
            r = self.mul(r, b);
        }
        r
    }

    /// Uniform element by rejection sampling from the enclosing power of two.
    pub fn random<R: RngCore + ?Sized>(&self, rng: &mut R) -> Fe {
        let mask = u64::MAX >> (64 - self.bits);
        loop {
            let v = rng.next_u64() & mask;
            if v < self.p {
                return Fe(v);
            }
        }
    }

    /// Signed embedding, handy for Lagrange numerators.
    fn embed_signed(&self, v: i128) -> Fe {
        Fe(v.rem_euclid(self.p as i128) as u64)
    }

    /// Lagrange weights `λ_i` with `f(target) = Σ λ_i f(points_i)` for every
    /// polynomial of degree `< points.len()`.
    pub fn lagrange_weights(&self, points: &[u64], target: u64) -> Result<Vec<Fe>, FieldError> {
        if points.is_empty() {
            return Err(FieldError::NoPoints);
        }
        let xs: Vec<Fe> = points.iter().map(|&x| self.elem(x)).collect();
        for (i, a) in xs.iter().enumerate() {
            if xs[..i].contains(a) {
                return Err(FieldError::DuplicatePoint(points[i]));
            }
        }
        let target = self.elem(target);
        let mut weights = Vec::with_capacity(xs.len());
        for (i, &xi) in xs.iter().enumerate() {
            let mut num = Fe::ONE;
            let mut den = Fe::ONE;
            for (j, &xj) in xs.iter().enumerate() {
                if i != j {
                    num = self.mul(num, self.sub(target, xj));
                    den = self.mul(den, self.sub(xi, xj));
                }
            }
            // den is nonzero because the points are distinct mod p
            weights.push(self.mul(num, self.inv(den).expect("distinct points")));
        }
        Ok(weights)
    }

    /// Evaluates `Σ coeffs[i] x^i` by Horner's rule.
    pub fn eval_poly(&self, coeffs: &[Fe], x: Fe) -> Fe {
        coeffs.iter().rev().fold(Fe::ZERO, |acc, &c| self.add(self.mul(acc, x), c))
    }

    /// `v` for small signed constants, e.g. `-1` or `2`.
    pub fn small(&self, v: i64) -> Fe {
        self.embed_signed(v as i128)
    }
}

/// Deterministic Miller-Rabin for all 64-bit inputs.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &b in &BASES {
        if n.is_multiple_of(b) {
            return n == b;
        }
    }
    let d = (n - 1) >> (n - 1).trailing_zeros();
    let s = (n - 1).trailing_zeros();
    let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let powmod = |mut a: u64, mut e: u64| {
        let mut r = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                r = mulmod(r, a);
            }
            a = mulmod(a, a);
            e >>= 1;
        }
        r
    };
    'witness: for &a in &BASES {
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Smallest `w > v` with at most `k` one-bits.
fn next_sparse(v: u64, k: u32) -> Option<u64> {
    let mut w = v.checked_add(1)?;
    while w.count_ones() > k {
        // adding the lowest set bit clears a run of ones
        w = w.checked_add(w & w.wrapping_neg())?;
    }
    Some(w)
}

/// Smallest prime `p >= 2^min_bits` such that `p - 1` has at most `max_k`
/// one-bits. Candidates `p - 1` are walked in increasing order over the
/// sparse integers, so the result has the form `2^a + 2^b + ... + 1`.
pub fn find_prime(min_bits: u32, max_k: u32) -> Result<Field, FieldError> {
    if !(2..=62).contains(&min_bits) || max_k == 0 {
        return Err(FieldError::InvalidSearch { min_bits, max_k });
    }
    let limit = 1u64 << MAX_BITS;
    let mut w = (1u64 << min_bits) - 1;
    while let Some(next) = next_sparse(w, max_k) {
        w = next;
        let p = w + 1;
        if p >= limit {
            break;
        }
        if p & 1 == 1 && is_prime(p) {
            return Field::new(p);
        }
    }
    Err(FieldError::NotFound { min_bits, max_k })
}

/// Default 62-bit computation field.
pub fn default_field() -> Field {
    find_prime(61, 3).expect("a 62-bit prime with k <= 3 exists")
}

/// Reduced 31-bit field used by the distinct-count protocol.
pub fn small_field() -> Field {
    find_prime(30, 3).expect("a 31-bit prime with k <= 3 exists")
}
