//! Shamir secret sharing over [`Field`].
//!
//! Share slot `i` (0-based) is the evaluation of the dealer polynomial at
//! `x = i + 1`. Reconstruction interpolates from the `t + 1` lowest-index
//! shares it is given.

use rand::RngCore;
use thiserror::Error;

use crate::field::{Fe, Field};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SharingError {
    #[error("need at least 3 privacy peers, got {0}")]
    TooFewPeers(usize),
    #[error("need {needed} shares to reconstruct, got {got}")]
    NotEnoughShares { needed: usize, got: usize },
    #[error("share index {0} appears twice")]
    DuplicateIndex(usize),
    #[error("share vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// Number of privacy peers `m` and polynomial degree `t = ⌊(m-1)/2⌋`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Degree {
    m: usize,
    t: usize,
}

impl Degree {
    pub fn new(m: usize) -> Result<Self, SharingError> {
        if m < 3 {
            return Err(SharingError::TooFewPeers(m));
        }
        Ok(Degree { m, t: (m - 1) / 2 })
    }

    pub fn peers(&self) -> usize {
        self.m
    }

    pub fn threshold(&self) -> usize {
        self.t
    }
}

/// Evaluation point of share slot `slot`.
#[inline]
pub fn eval_point(slot: usize) -> u64 {
    slot as u64 + 1
}

/// All `m` shares of one secret.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareVector {
    field: Field,
    shares: Vec<Fe>,
}

impl ShareVector {
    pub fn from_shares(field: Field, shares: Vec<Fe>) -> Self {
        ShareVector { field, shares }
    }

    pub fn shares(&self) -> &[Fe] {
        &self.shares
    }

    pub fn into_shares(self) -> Vec<Fe> {
        self.shares
    }

    pub fn len(&self) -> usize {
        self.shares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shares.is_empty()
    }

    pub fn degree(&self) -> Result<Degree, SharingError> {
        Degree::new(self.shares.len())
    }

    fn zip_with(&self, other: &ShareVector, op: impl Fn(Fe, Fe) -> Fe) -> Result<Self, SharingError> {
        if self.len() != other.len() {
            return Err(SharingError::LengthMismatch(self.len(), other.len()));
        }
        let shares = self.shares.iter().zip(&other.shares).map(|(&a, &b)| op(a, b)).collect();
        Ok(ShareVector::from_shares(self.field, shares))
    }

    /// `[a] + [b]`, computed slot by slot.
    pub fn add(&self, other: &ShareVector) -> Result<Self, SharingError> {
        self.zip_with(other, |a, b| self.field.add(a, b))
    }

    /// `[a] - [b]`, computed slot by slot.
    pub fn sub(&self, other: &ShareVector) -> Result<Self, SharingError> {
        self.zip_with(other, |a, b| self.field.sub(a, b))
    }

    /// `[a] + c` for public `c`.
    pub fn add_const(&self, c: Fe) -> Self {
        let shares = self.shares.iter().map(|&a| self.field.add(a, c)).collect();
        ShareVector::from_shares(self.field, shares)
    }

    /// `c [a]` for public `c`.
    pub fn mul_const(&self, c: Fe) -> Self {
        let shares = self.shares.iter().map(|&a| self.field.mul(a, c)).collect();
        ShareVector::from_shares(self.field, shares)
    }

    /// Reconstructs from every slot.
    pub fn reconstruct(&self) -> Result<Fe, SharingError> {
        let t = self.degree()?.threshold();
        let indexed: Vec<(usize, Fe)> = self.shares.iter().copied().enumerate().collect();
        reconstruct(&self.field, &indexed, t)
    }
}

/// Writes the `m` evaluations of a fresh random degree-`t` polynomial with
/// constant term `secret` into `out` (cleared first).
pub fn share_into<R: RngCore + ?Sized>(field: &Field, secret: Fe, t: usize, m: usize, rng: &mut R, out: &mut Vec<Fe>) {
    // coefficients live on the stack for the usual m <= 2t+1 <= 33
    let mut coeffs = [Fe::ZERO; 16];
    let mut heap;
    let coeffs: &mut [Fe] = if t < coeffs.len() {
        &mut coeffs[..=t]
    } else {
        heap = vec![Fe::ZERO; t + 1];
        &mut heap[..]
    };
    coeffs[0] = secret;
    for c in coeffs[1..].iter_mut() {
        *c = field.random(rng);
    }
    out.clear();
    out.extend((0..m).map(|slot| field.eval_poly(coeffs, Fe(eval_point(slot)))));
}

/// Splits `secret` into `m` shares.
pub fn share<R: RngCore + ?Sized>(
    field: &Field,
    secret: Fe,
    m: usize,
    rng: &mut R,
) -> Result<ShareVector, SharingError> {
    let degree = Degree::new(m)?;
    let mut shares = Vec::with_capacity(m);
    share_into(field, secret, degree.threshold(), m, rng, &mut shares);
    Ok(ShareVector::from_shares(*field, shares))
}

/// Recovers `f(0)` from `(slot, share)` pairs. Only the `t + 1` lowest
/// slots are used; the rest are ignored.
pub fn reconstruct(field: &Field, shares: &[(usize, Fe)], t: usize) -> Result<Fe, SharingError> {
    let mut sorted = shares.to_vec();
    sorted.sort_by_key(|&(slot, _)| slot);
    for pair in sorted.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(SharingError::DuplicateIndex(pair[0].0));
        }
    }
    if sorted.len() < t + 1 {
        return Err(SharingError::NotEnoughShares { needed: t + 1, got: sorted.len() });
    }
    let used = &sorted[..=t];
    let points: Vec<u64> = used.iter().map(|&(slot, _)| eval_point(slot)).collect();
    let weights = field.lagrange_weights(&points, 0).expect("slots are distinct and nonempty");
    Ok(used.iter().zip(&weights).fold(Fe::ZERO, |acc, (&(_, s), &w)| field.add(acc, field.mul(s, w))))
}

/// Precomputed interpolation for full share vectors of length `m`.
///
/// `secret_weights` recovers `f(0)` from slots `0..=t`; `check_weights[j]`
/// predicts slot `t + 1 + j` from the same slots, which detects any share
/// vector that does not lie on a degree-`t` polynomial.
#[derive(Clone, Debug)]
pub struct Interpolator {
    field: Field,
    t: usize,
    secret_weights: Vec<Fe>,
    check_weights: Vec<Vec<Fe>>,
    /// Weights over all `m` slots; valid for polynomials of degree `< m`,
    /// which covers the degree-`2t` products formed during multiplication.
    full_weights: Vec<Fe>,
}

impl Interpolator {
    pub fn new(field: Field, degree: Degree) -> Self {
        let t = degree.threshold();
        let m = degree.peers();
        let base: Vec<u64> = (0..=t).map(eval_point).collect();
        let secret_weights = field.lagrange_weights(&base, 0).expect("distinct points");
        let check_weights =
            (t + 1..m).map(|slot| field.lagrange_weights(&base, eval_point(slot)).expect("distinct points")).collect();
        let all: Vec<u64> = (0..m).map(eval_point).collect();
        let full_weights = field.lagrange_weights(&all, 0).expect("distinct points");
        Interpolator { field, t, secret_weights, check_weights, full_weights }
    }

    fn dot(&self, weights: &[Fe], values: &[Fe]) -> Fe {
        weights.iter().zip(values).fold(Fe::ZERO, |acc, (&w, &v)| self.field.add(acc, self.field.mul(w, v)))
    }

    /// `f(0)` from the lowest `t + 1` slots of a full share vector.
    pub fn secret(&self, shares: &[Fe]) -> Fe {
        self.dot(&self.secret_weights, &shares[..=self.t])
    }

    /// `f(0)` plus a flag telling whether every slot agrees with it.
    pub fn secret_checked(&self, shares: &[Fe]) -> (Fe, bool) {
        let base = &shares[..=self.t];
        let consistent =
            self.check_weights.iter().zip(&shares[self.t + 1..]).all(|(w, &actual)| self.dot(w, base) == actual);
        (self.dot(&self.secret_weights, base), consistent)
    }

    /// Weights that recombine one value per slot into a degree-`t` share of the product.
    pub fn full_weights(&self) -> &[Fe] {
        &self.full_weights
    }
}
