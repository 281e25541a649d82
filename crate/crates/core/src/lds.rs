//! Low-discrepancy and pseudo-random point streams over the unit hypercube.
//!
//! Every stream is a pure function of `(kind, dimension, base, scramble seed,
//! index)`, so a stream can be positioned anywhere with [`PointStream::skip_to`]
//! and disjoint index ranges can be generated independently and concatenated.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::{ChaCha8Rng, ChaCha12Rng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest coordinate ever emitted.
pub const CLAMP_LO: f64 = 1.0 / 18_446_744_073_709_551_616.0; // 2^-64
/// Largest coordinate ever emitted (the largest double below one).
pub const CLAMP_HI: f64 = 1.0 - f64::EPSILON / 2.0;

/// Largest index any stream will produce.
pub const MAX_INDEX: u64 = 1 << 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SequenceKind {
    GeneralizedFaure,
    Halton,
    PseudoRandom,
}

impl SequenceKind {
    pub fn is_quasi_random(self) -> bool {
        !matches!(self, SequenceKind::PseudoRandom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub kind: SequenceKind,
    pub dimension: usize,
    /// Digit base; only meaningful for generalized Faure.
    pub base: u32,
    /// 0 selects identity scrambling (the classical Faure sequence).
    pub scramble_seed: u64,
    pub start_index: u64,
}

impl SequenceSpec {
    pub fn new(kind: SequenceKind, dimension: usize, scramble_seed: u64) -> Self {
        let base = match kind {
            SequenceKind::GeneralizedFaure => smallest_prime_at_least(dimension.max(2) as u32),
            _ => 0,
        };
        Self {
            kind,
            dimension,
            base,
            scramble_seed,
            start_index: 1,
        }
    }

    pub fn with_base(mut self, base: u32) -> Self {
        self.base = base;
        self
    }

    pub fn with_start_index(mut self, start: u64) -> Self {
        self.start_index = start;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CubePoint {
    pub coordinates: Vec<f64>,
    pub index: u64,
}

pub fn is_prime(n: u32) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2u32;
    while d.saturating_mul(d) <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

pub fn smallest_prime_at_least(n: u32) -> u32 {
    let mut p = n.max(2);
    while !is_prime(p) {
        p += 1;
    }
    p
}

fn first_primes(count: usize) -> Vec<u32> {
    let mut primes = Vec::with_capacity(count);
    let mut p = 2;
    while primes.len() < count {
        if is_prime(p) {
            primes.push(p);
        }
        p += 1;
    }
    primes
}

#[inline]
fn clamp_unit(x: f64) -> f64 {
    x.clamp(CLAMP_LO, CLAMP_HI)
}

/// Generator matrices of a generalized Faure sequence.
///
/// Dimension `j` (0-based) uses `A_j · P^j` over GF(b), where `P` is the
/// upper-triangular Pascal matrix and `A_j` is lower triangular and
/// nonsingular. Matrices are stored row-major with `out_digits` rows and
/// `in_digits` columns; rows index output digits (b^-1, b^-2, ...) and
/// columns index digits of the sequence index (b^0, b^1, ...).
#[derive(Clone, Debug)]
struct FaureTables {
    base: u32,
    in_digits: usize,
    out_digits: usize,
    matrices: Vec<u32>,
    /// b^-(r+1) for each output digit r.
    weights: Vec<f64>,
}

impl FaureTables {
    fn new(base: u32, dimension: usize, seed: u64) -> Self {
        let b = base as u64;
        let mut in_digits = 0;
        let mut cap = 1u128;
        while cap <= MAX_INDEX as u128 {
            cap *= b as u128;
            in_digits += 1;
        }
        // Enough digits to resolve 2^-53, capped at 32.
        let mut out_digits = 0;
        let mut resolution = 1.0f64;
        while resolution > f64::EPSILON / 2.0 && out_digits < 32 {
            resolution /= base as f64;
            out_digits += 1;
        }
        let out_digits = out_digits.max(in_digits).min(32);

        let binom = pascal_mod(out_digits.max(in_digits), b);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut matrices = Vec::with_capacity(dimension * out_digits * in_digits);
        for j in 0..dimension {
            // P^j has entries C(c, r) j^(c-r) mod b for c >= r.
            let shift = j as u64 % b;
            let mut pascal = vec![0u64; out_digits * in_digits];
            for r in 0..out_digits {
                for c in r..in_digits {
                    let v = binom[c][r] * pow_mod(shift, (c - r) as u64, b) % b;
                    pascal[r * in_digits + c] = v;
                }
            }
            let scramble = if seed == 0 {
                None
            } else {
                let mut a = vec![0u64; out_digits * out_digits];
                for r in 0..out_digits {
                    for c in 0..r {
                        a[r * out_digits + c] = rng.next_u64() % b;
                    }
                    a[r * out_digits + r] = 1 + rng.next_u64() % (b - 1);
                }
                Some(a)
            };
            for r in 0..out_digits {
                for c in 0..in_digits {
                    let v = match &scramble {
                        None => pascal[r * in_digits + c],
                        Some(a) => {
                            let mut acc = 0u64;
                            for k in 0..=r {
                                acc = (acc + a[r * out_digits + k] * pascal[k * in_digits + c]) % b;
                            }
                            acc
                        }
                    };
                    matrices.push(v as u32);
                }
            }
        }
        let mut weights = Vec::with_capacity(out_digits);
        let mut w = 1.0f64;
        for _ in 0..out_digits {
            w /= base as f64;
            weights.push(w);
        }
        Self {
            base,
            in_digits,
            out_digits,
            matrices,
            weights,
        }
    }

    fn point(&self, index: u64, out: &mut [f64]) {
        let b = self.base as u64;
        let mut digits = [0u64; 64];
        let mut n = index;
        let mut used = 0;
        while n > 0 {
            digits[used] = n % b;
            n /= b;
            used += 1;
        }
        let block = self.out_digits * self.in_digits;
        for (j, x) in out.iter_mut().enumerate() {
            let m = &self.matrices[j * block..(j + 1) * block];
            let mut value = 0.0;
            for r in 0..self.out_digits {
                let row = &m[r * self.in_digits..r * self.in_digits + used];
                let mut acc = 0u64;
                for (g, d) in row.iter().zip(&digits[..used]) {
                    acc += *g as u64 * d;
                }
                value += (acc % b) as f64 * self.weights[r];
            }
            *x = value;
        }
    }
}

fn pow_mod(base: u64, exp: u64, m: u64) -> u64 {
    let mut result = 1 % m;
    let mut b = base % m;
    let mut e = exp;
    while e > 0 {
        if e & 1 == 1 {
            result = result * b % m;
        }
        b = b * b % m;
        e >>= 1;
    }
    result
}

/// Binomial coefficients mod m, `t[n][k]`.
fn pascal_mod(size: usize, m: u64) -> Vec<Vec<u64>> {
    let mut t = vec![vec![0u64; size]; size];
    for n in 0..size {
        t[n][0] = 1 % m;
        for k in 1..=n {
            t[n][k] = (t[n - 1][k - 1] + t[n - 1][k]) % m;
        }
    }
    t
}

pub fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut value = 0.0;
    while index > 0 {
        value += (index % b) as f64 * scale;
        index /= b;
        scale *= inv;
    }
    value
}

#[derive(Clone, Debug)]
enum Engine {
    Faure(FaureTables),
    Halton(Vec<u32>),
    Random(Box<ChaCha8Rng>),
}

/// A positioned stream over one [`SequenceSpec`].
///
/// Streams are single-owner; parallel generation uses one stream per
/// disjoint index range.
#[derive(Clone, Debug)]
pub struct PointStream {
    spec: SequenceSpec,
    engine: Engine,
    index: u64,
}

impl PointStream {
    pub fn new(spec: SequenceSpec) -> Result<Self> {
        if spec.dimension == 0 {
            return Err(Error::InvalidSequence("dimension must be at least 1".into()));
        }
        let engine = match spec.kind {
            SequenceKind::GeneralizedFaure => {
                if !is_prime(spec.base) {
                    return Err(Error::InvalidSequence(format!("base {} is not prime", spec.base)));
                }
                if (spec.base as usize) < spec.dimension {
                    return Err(Error::InvalidSequence(format!(
                        "base {} is smaller than dimension {}",
                        spec.base, spec.dimension
                    )));
                }
                Engine::Faure(FaureTables::new(spec.base, spec.dimension, spec.scramble_seed))
            }
            SequenceKind::Halton => Engine::Halton(first_primes(spec.dimension)),
            SequenceKind::PseudoRandom => {
                Engine::Random(Box::new(ChaCha8Rng::seed_from_u64(spec.scramble_seed)))
            }
        };
        let mut stream = Self {
            index: 0,
            engine,
            spec,
        };
        stream.skip_to(stream.spec.start_index)?;
        Ok(stream)
    }

    pub fn spec(&self) -> &SequenceSpec {
        &self.spec
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension
    }

    /// Index of the point the next call to [`next_point`](Self::next_point) returns.
    pub fn index(&self) -> u64 {
        self.index
    }

    /// Positions the stream so the next point is the one at `index`.
    pub fn skip_to(&mut self, index: u64) -> Result<()> {
        if index > MAX_INDEX {
            return Err(Error::IndexOverflow(index));
        }
        if let Engine::Random(rng) = &mut self.engine {
            // Each coordinate consumes one 64-bit draw, i.e. two 32-bit words.
            rng.set_word_pos(index as u128 * 2 * self.spec.dimension as u128);
        }
        self.index = index;
        Ok(())
    }

    /// Writes the current point into `out` and advances; returns its index.
    pub fn next_into(&mut self, out: &mut [f64]) -> Result<u64> {
        assert_eq!(out.len(), self.spec.dimension, "output buffer has wrong dimension");
        let index = self.index;
        if index >= MAX_INDEX {
            return Err(Error::IndexOverflow(index));
        }
        match &mut self.engine {
            Engine::Faure(tables) => tables.point(index, out),
            Engine::Halton(primes) => {
                for (x, p) in out.iter_mut().zip(primes.iter()) {
                    *x = radical_inverse(index, *p);
                }
            }
            Engine::Random(rng) => {
                for x in out.iter_mut() {
                    *x = ((rng.next_u64() >> 11) as f64 + 0.5) * (f64::EPSILON / 2.0);
                }
            }
        }
        for x in out.iter_mut() {
            *x = clamp_unit(*x);
        }
        self.index += 1;
        Ok(index)
    }

    pub fn next_point(&mut self) -> Result<CubePoint> {
        let mut coordinates = vec![0.0; self.spec.dimension];
        let index = self.next_into(&mut coordinates)?;
        Ok(CubePoint { coordinates, index })
    }
}
