//! Dense complex kernels for matrices of dimension at most six.
//!
//! Storage is a fixed row-major array so that every operation on the sampling
//! hot path stays on the stack.

use std::fmt;
use std::ops::{Index, IndexMut, Mul};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 6;

/// Sweep cap for the cyclic Jacobi eigensolver.
pub const MAX_SWEEPS: usize = 60;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Clone, Copy, PartialEq)]
pub struct CMatrix {
    n: usize,
    data: [Complex64; MAX_DIM * MAX_DIM],
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix({}x{})", self.n, self.n)?;
        for r in 0..self.n {
            for c in 0..self.n {
                let z = self[(r, c)];
                write!(f, " {:+.6}{:+.6}i", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * MAX_DIM + c]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * MAX_DIM + c]
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.n, rhs.n);
        let mut out = CMatrix::zeros(self.n);
        for r in 0..self.n {
            for k in 0..self.n {
                let a = self[(r, k)];
                if a == ZERO {
                    continue;
                }
                for c in 0..self.n {
                    out[(r, c)] += a * rhs[(k, c)];
                }
            }
        }
        out
    }
}

impl CMatrix {
    pub fn zeros(n: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&n), "dimension {n} out of range");
        Self {
            n,
            data: [ZERO; MAX_DIM * MAX_DIM],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(n);
        for r in 0..n {
            for c in 0..n {
                m[(r, c)] = f(r, c);
            }
        }
        m
    }

    pub fn from_real_diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = Complex64::new(*v, 0.0);
        }
        m
    }

    /// `v v†` for a column vector `v`.
    pub fn outer(v: &[Complex64]) -> Self {
        Self::from_fn(v.len(), |r, c| v[r] * v[c].conj())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.n, |r, c| self[(c, r)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |r, c| self[(c, r)])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_fn(self.n, |r, c| self[(r, c)] * s)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::from_fn(self.n, |r, c| self[(r, c)] + other[(r, c)])
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for r in 0..self.n {
            for c in 0..self.n {
                m = m.max(self[(r, c)].norm());
            }
        }
        m
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut m = 0.0f64;
        for r in 0..self.n {
            for c in 0..self.n {
                m = m.max((self[(r, c)] - other[(r, c)]).norm());
            }
        }
        m
    }

    pub fn hermiticity_error(&self) -> f64 {
        self.max_abs_diff(&self.adjoint())
    }

    pub fn is_finite(&self) -> bool {
        (0..self.n).all(|r| (0..self.n).all(|c| self[(r, c)].is_finite()))
    }

    /// `max |U†U - I|`.
    pub fn unitarity_error(&self) -> f64 {
        (&self.adjoint() * self).max_abs_diff(&Self::identity(self.n))
    }

    /// `U · diag(values) · U†`; `values` may be shorter than the dimension,
    /// missing entries are zero.
    pub fn conjugate_diagonal(&self, values: &[f64]) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for r in 0..n {
            for c in r..n {
                let mut acc = ZERO;
                for (k, v) in values.iter().enumerate() {
                    acc += self[(r, k)] * self[(c, k)].conj() * *v;
                }
                out[(r, c)] = acc;
                out[(c, r)] = acc.conj();
            }
            out[(r, r)].im = 0.0;
        }
        out
    }

    /// Determinant by Gaussian elimination with partial pivoting.
    pub fn determinant(&self) -> Complex64 {
        let n = self.n;
        let mut a = *self;
        let mut det = ONE;
        for k in 0..n {
            let pivot = (k..n)
                .max_by(|&i, &j| a[(i, k)].norm().total_cmp(&a[(j, k)].norm()))
                .unwrap();
            if a[(pivot, k)] == ZERO {
                return ZERO;
            }
            if pivot != k {
                for c in 0..n {
                    let t = a[(k, c)];
                    a[(k, c)] = a[(pivot, c)];
                    a[(pivot, c)] = t;
                }
                det = -det;
            }
            let p = a[(k, k)];
            det *= p;
            for r in k + 1..n {
                let f = a[(r, k)] / p;
                for c in k..n {
                    let v = a[(k, c)];
                    a[(r, c)] -= f * v;
                }
            }
        }
        det
    }
}

/// Unitary matrix whose columns are eigenvectors (or a Haar-random frame).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitaryFrame(pub CMatrix);

impl UnitaryFrame {
    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }
}

/// Hermitian, unit-trace, positive-semidefinite matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    pub const TOLERANCE: f64 = 1e-12;

    /// Validates the density-matrix invariants.
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_finite() {
            return Err(Error::Domain("non-finite density matrix entry".into()));
        }
        if m.hermiticity_error() >= Self::TOLERANCE {
            return Err(Error::Domain("density matrix is not Hermitian".into()));
        }
        if (m.trace().re - 1.0).abs() >= Self::TOLERANCE {
            return Err(Error::Domain(format!("density matrix trace {} != 1", m.trace().re)));
        }
        if min_eigenvalue(&m)? < -Self::TOLERANCE {
            return Err(Error::Domain("density matrix is not positive semidefinite".into()));
        }
        Ok(Self(m))
    }

    /// Wraps a matrix that is a density matrix by construction.
    pub fn new_unchecked(m: CMatrix) -> Self {
        Self(m)
    }

    pub fn maximally_mixed(n: usize) -> Self {
        Self(CMatrix::identity(n).scale(1.0 / n as f64))
    }

    pub fn pure(psi: &[Complex64]) -> Self {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let v: Vec<Complex64> = psi.iter().map(|z| z / norm).collect();
        Self(CMatrix::outer(&v))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    /// Convex combination `t·self + (1-t)·other`.
    pub fn mix(&self, other: &Self, t: f64) -> Self {
        Self(self.0.scale(t).add(&other.0.scale(1.0 - t)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eigensystem {
    n: usize,
    values: [f64; MAX_DIM],
    pub vectors: UnitaryFrame,
}

impl Eigensystem {
    /// Eigenvalues in descending order.
    pub fn values(&self) -> &[f64] {
        &self.values[..self.n]
    }
}

/// One cyclic-Jacobi rotation annihilating `a[p][q]`; returns the rotation
/// `(c, s·e^{iφ})` so callers can accumulate eigenvectors.
#[inline]
fn jacobi_rotate(a: &mut CMatrix, p: usize, q: usize) -> Option<(f64, Complex64)> {
    let g = a[(p, q)];
    let h = g.norm();
    if h == 0.0 {
        return None;
    }
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    let theta = 0.5 * (aqq - app) / h;
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let phase = g / h;
    let se = phase * s;
    let n = a.dim();
    // A <- A V with V_pp = V_qq = c, V_pq = s e^{iφ}, V_qp = -s e^{-iφ}
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * c - akq * se.conj();
        a[(k, q)] = akp * se + akq * c;
    }
    // A <- V† A
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = apk * c - aqk * se;
        a[(q, k)] = apk * se.conj() + aqk * c;
    }
    a[(p, q)] = ZERO;
    a[(q, p)] = ZERO;
    a[(p, p)] = Complex64::new(app - t * h, 0.0);
    a[(q, q)] = Complex64::new(aqq + t * h, 0.0);
    Some((c, se))
}

fn jacobi(h: &CMatrix, mut vectors: Option<&mut CMatrix>) -> Result<[f64; MAX_DIM]> {
    let n = h.dim();
    let mut a = *h;
    for i in 0..n {
        a[(i, i)].im = 0.0;
    }
    for sweep in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)].norm_sqr();
            }
        }
        if off == 0.0 {
            let mut values = [0.0; MAX_DIM];
            for (i, v) in values.iter_mut().enumerate().take(n) {
                *v = a[(i, i)].re;
            }
            return Ok(values);
        }
        for p in 0..n {
            for q in p + 1..n {
                let g = a[(p, q)].norm();
                let dp = a[(p, p)].re.abs();
                let dq = a[(q, q)].re.abs();
                // Negligible relative to both diagonal entries: drop it.
                if sweep > 3 && dp + 100.0 * g == dp && dq + 100.0 * g == dq {
                    a[(p, q)] = ZERO;
                    a[(q, p)] = ZERO;
                    continue;
                }
                if let Some((c, se)) = jacobi_rotate(&mut a, p, q) {
                    if let Some(u) = vectors.as_deref_mut() {
                        for k in 0..n {
                            let ukp = u[(k, p)];
                            let ukq = u[(k, q)];
                            u[(k, p)] = ukp * c - ukq * se.conj();
                            u[(k, q)] = ukp * se + ukq * c;
                        }
                    }
                }
            }
        }
    }
    Err(Error::NoConvergence(MAX_SWEEPS))
}

/// Eigendecomposition `H = U diag(λ) U†` with eigenvalues descending.
pub fn hermitian_eigensystem(h: &CMatrix) -> Result<Eigensystem> {
    let n = h.dim();
    let mut u = CMatrix::identity(n);
    let raw = jacobi(h, Some(&mut u))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| raw[j].total_cmp(&raw[i]));
    let mut values = [0.0; MAX_DIM];
    let mut sorted = CMatrix::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = raw[src];
        for r in 0..n {
            sorted[(r, dst)] = u[(r, src)];
        }
    }
    Ok(Eigensystem {
        n,
        values,
        vectors: UnitaryFrame(sorted),
    })
}

/// Eigenvalues only, descending.
pub fn hermitian_eigenvalues(h: &CMatrix) -> Result<Vec<f64>> {
    let n = h.dim();
    let raw = jacobi(h, None)?;
    let mut v = raw[..n].to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    Ok(v)
}

pub fn min_eigenvalue(h: &CMatrix) -> Result<f64> {
    let n = h.dim();
    let raw = jacobi(h, None)?;
    Ok(raw[..n].iter().copied().fold(f64::INFINITY, f64::min))
}

/// Inverse of the standard normal CDF (Wichura's AS 241, PPND16), relative
/// accuracy about 1e-16 over (0, 1).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r
            + 6.726_577_092_700_87e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5)
            * q;
        let den = ((((((5.226_495_278_852_545e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let x = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_8e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_049e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// Householder QR of a square matrix: returns `(Q, diag(R))`.
fn householder_qr(a: &CMatrix) -> (CMatrix, [Complex64; MAX_DIM]) {
    let n = a.dim();
    let mut r = *a;
    let mut q = CMatrix::identity(n);
    let mut diag = [ZERO; MAX_DIM];
    for k in 0..n {
        let norm: f64 = (k..n).map(|i| r[(i, k)].norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            diag[k] = ZERO;
            continue;
        }
        let x0 = r[(k, k)];
        let phase = if x0.norm() == 0.0 { ONE } else { x0 / x0.norm() };
        let alpha = -phase * norm;
        let mut v = [ZERO; MAX_DIM];
        for i in k..n {
            v[i] = r[(i, k)];
        }
        v[k] -= alpha;
        let vnorm_sq: f64 = (k..n).map(|i| v[i].norm_sqr()).sum();
        if vnorm_sq == 0.0 {
            diag[k] = r[(k, k)];
            continue;
        }
        // R <- (I - 2 v v† / |v|²) R
        for c in k..n {
            let mut dot = ZERO;
            for i in k..n {
                dot += v[i].conj() * r[(i, c)];
            }
            let f = dot * (2.0 / vnorm_sq);
            for i in k..n {
                r[(i, c)] -= v[i] * f;
            }
        }
        // Q <- Q (I - 2 v v† / |v|²)
        for row in 0..n {
            let mut dot = ZERO;
            for i in k..n {
                dot += q[(row, i)] * v[i];
            }
            let f = dot * (2.0 / vnorm_sq);
            for i in k..n {
                q[(row, i)] -= f * v[i].conj();
            }
        }
        diag[k] = r[(k, k)];
    }
    (q, diag)
}

/// Haar-distributed unitary from `2·n²` coordinates in (0, 1).
///
/// Coordinate pairs become standard complex Gaussians filling a Ginibre
/// matrix row by row; the Q factor of its QR decomposition is then
/// right-multiplied by the phases of diag(R).
pub fn haar_frame_from_uniforms(n: usize, u: &[f64]) -> UnitaryFrame {
    assert_eq!(u.len(), 2 * n * n, "need 2n² uniforms");
    let mut g = CMatrix::zeros(n);
    for r in 0..n {
        for c in 0..n {
            let k = 2 * (r * n + c);
            g[(r, c)] = Complex64::new(inverse_normal_cdf(u[k]), inverse_normal_cdf(u[k + 1]));
        }
    }
    let (mut q, diag) = householder_qr(&g);
    for (c, d) in diag.iter().enumerate().take(n) {
        let norm = d.norm();
        if norm > 0.0 {
            let phase = d / norm;
            for r in 0..n {
                q[(r, c)] *= phase;
            }
        }
    }
    UnitaryFrame(q)
}

/// Bipartite factorization `n = dim_a · dim_b`, row index `dim_b·a + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TensorSplit {
    pub dim_a: usize,
    pub dim_b: usize,
}

impl TensorSplit {
    /// 2 ⊗ 3: transposing the four 3×3 blocks.
    pub const QUBIT_QUTRIT: TensorSplit = TensorSplit { dim_a: 2, dim_b: 3 };
    /// 3 ⊗ 2: transposing the nine 2×2 blocks.
    pub const QUTRIT_QUBIT: TensorSplit = TensorSplit { dim_a: 3, dim_b: 2 };

    pub fn new(dim_a: usize, dim_b: usize) -> Self {
        Self { dim_a, dim_b }
    }

    pub fn dim(&self) -> usize {
        self.dim_a * self.dim_b
    }

    pub fn check(&self, n: usize) -> Result<()> {
        if self.dim_a == 0 || self.dim_b == 0 || self.dim() != n {
            return Err(Error::IncompatibleSplit {
                dim_a: self.dim_a,
                dim_b: self.dim_b,
                n,
            });
        }
        Ok(())
    }

    /// The two nontrivial splits evaluated for dimension `n`, if any.
    pub fn defaults_for(n: usize) -> Vec<TensorSplit> {
        match n {
            4 => vec![TensorSplit::new(2, 2)],
            6 => vec![TensorSplit::QUBIT_QUTRIT, TensorSplit::QUTRIT_QUBIT],
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for TensorSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.dim_a, self.dim_b)
    }
}

impl std::str::FromStr for TensorSplit {
    type Err = Error;

    /// Parses `AxB`, e.g. `2x3`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("split '{s}' is not of the form AxB"));
        let (a, b) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
        Ok(TensorSplit::new(a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
    }
}

/// Partial transpose on the second factor: each `dim_b × dim_b` block of the
/// `dim_a × dim_a` block array is transposed in place.
pub fn partial_transpose(rho: &CMatrix, split: TensorSplit) -> Result<CMatrix> {
    split.check(rho.dim())?;
    let db = split.dim_b;
    let mut out = *rho;
    for a in 0..split.dim_a {
        for a2 in 0..split.dim_a {
            for b in 0..db {
                for b2 in 0..db {
                    out[(db * a + b, db * a2 + b2)] = rho[(db * a + b2, db * a2 + b)];
                }
            }
        }
    }
    Ok(out)
}
