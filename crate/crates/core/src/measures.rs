//! Monotone-metric volume elements.
//!
//! A monotone metric is fixed by its Morozova-Chentsov function `c(x, y)`.
//! In eigen-coordinates `ρ = U diag(λ) U†` the metric volume element
//! factorizes into a spectrum-only density on the eigenvalue simplex times the
//! Haar measure of the eigenframe; the frame integral is the closed-form
//! [`flag_constant`], so only the spectrum density has to be sampled.

use std::f64::consts::{E, FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::hyperspherical_map;

/// Relative gap below which the near-coincidence branches are used.
pub const DEGENERATE_GAP: f64 = 1e-8;

/// Default zero-eigenvalue substitute of the epsilon boundary policy.
pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Bures,
    KuboMori,
    ArithAverage,
    WignerYanase,
    Gks,
    GeomAverage,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::Bures,
        MetricKind::KuboMori,
        MetricKind::ArithAverage,
        MetricKind::WignerYanase,
        MetricKind::Gks,
        MetricKind::GeomAverage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Bures => "bures",
            MetricKind::KuboMori => "kubo-mori",
            MetricKind::ArithAverage => "arith-average",
            MetricKind::WignerYanase => "wigner-yanase",
            MetricKind::Gks => "gks",
            MetricKind::GeomAverage => "geom-average",
        }
    }

    /// Short label used in table rows.
    pub fn label(self) -> &'static str {
        match self {
            MetricKind::Bures => "Bures",
            MetricKind::KuboMori => "KM",
            MetricKind::ArithAverage => "arith",
            MetricKind::WignerYanase => "WY",
            MetricKind::Gks => "GKS",
            MetricKind::GeomAverage => "geom",
        }
    }

    /// `c(x, x)·x`: 1 for a conventionally normalized function, 1/2 for the
    /// geometric average as defined here.
    pub fn diagonal_normalization(self) -> f64 {
        match self {
            MetricKind::GeomAverage => 0.5,
            _ => 1.0,
        }
    }

    /// Whether `c(λ, μ)` stays finite as `μ → 0`.
    pub fn finite_at_zero(self) -> bool {
        !matches!(self, MetricKind::KuboMori | MetricKind::GeomAverage)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        MetricKind::ALL
            .into_iter()
            .find(|k| k.name() == lower || k.label().eq_ignore_ascii_case(&lower))
            .or(match lower.as_str() {
                "km" => Some(MetricKind::KuboMori),
                "wy" => Some(MetricKind::WignerYanase),
                "arith" => Some(MetricKind::ArithAverage),
                "geom" => Some(MetricKind::GeomAverage),
                _ => None,
            })
            .ok_or_else(|| Error::Config(format!("unknown metric '{s}'")))
    }
}

/// `2·artanh(r)/r`, stable for small `r`.
#[inline]
fn artanh_ratio(r: f64) -> f64 {
    if r.abs() < DEGENERATE_GAP {
        let r2 = r * r;
        2.0 * (1.0 + r2 / 3.0 + r2 * r2 / 5.0)
    } else {
        2.0 * r.atanh() / r
    }
}

/// Kubo-Mori function `(ln x - ln y)/(x - y)` written as `2 artanh(δ/σ)/δ`.
#[inline]
fn kubo_mori(x: f64, y: f64) -> f64 {
    let sigma = x + y;
    let r = (x - y) / sigma;
    if r.abs() > 0.5 {
        // artanh saturates when one argument is below σ·2^-53.
        return (x.ln() - y.ln()) / (x - y);
    }
    artanh_ratio(r) / sigma
}

/// Morozova-Chentsov function `c_kind(x, y)`.
///
/// Requires `x > 0`, `y ≥ 0` (either order); Kubo-Mori and the geometric
/// average diverge when an argument is zero and report a domain error.
pub fn mc_function(kind: MetricKind, x: f64, y: f64) -> Result<f64> {
    if !(x >= 0.0 && y >= 0.0 && x.is_finite() && y.is_finite()) || (x == 0.0 && y == 0.0) {
        return Err(Error::Domain(format!("c({x}, {y}) requires x > 0, y >= 0")));
    }
    if (x == 0.0 || y == 0.0) && !kind.finite_at_zero() {
        return Err(Error::Domain(format!("c_{kind}({x}, {y}) diverges at zero")));
    }
    Ok(mc_unchecked(kind, x, y))
}

#[inline]
fn mc_unchecked(kind: MetricKind, x: f64, y: f64) -> f64 {
    match kind {
        MetricKind::Bures => 2.0 / (x + y),
        MetricKind::KuboMori => kubo_mori(x, y),
        MetricKind::ArithAverage => 4.0 * (x + y) / (x * x + 6.0 * x * y + y * y),
        MetricKind::WignerYanase => {
            let s = x.sqrt() + y.sqrt();
            4.0 / (s * s)
        }
        MetricKind::Gks => {
            // (x/y)^{x/(y-x)}·e/y = (e/y)·exp(-x·c_KM(x, y)), symmetrized.
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            if lo == 0.0 {
                E / hi
            } else {
                E / hi * (-lo * kubo_mori(lo, hi)).exp()
            }
        }
        MetricKind::GeomAverage => 0.5 / (x * y).sqrt(),
    }
}

/// How the pair factor between a nonzero eigenvalue and the zero eigenvalue
/// of a boundary state is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum BoundaryPolicy {
    /// `lim_{μ→0} (λ-μ)² c(λ, μ)/2`; an error for divergent kinds.
    Limit,
    /// The Bures factor `λ` for every kind.
    BuresPair,
    /// The exact pair factor at `μ = epsilon`.
    Epsilon { epsilon: f64 },
    /// Limit for convergent kinds, Bures pair for Kubo-Mori and geom-average.
    #[default]
    Auto,
}


impl fmt::Display for BoundaryPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryPolicy::Limit => f.write_str("limit"),
            BoundaryPolicy::BuresPair => f.write_str("bures-pair"),
            BoundaryPolicy::Epsilon { epsilon } => write!(f, "epsilon({epsilon:e})"),
            BoundaryPolicy::Auto => f.write_str("auto (limit; bures-pair for kubo-mori, geom-average)"),
        }
    }
}

impl BoundaryPolicy {
    /// Zero-eigenvalue pair factor `F(λ)` for `kind`.
    pub fn pair_factor(self, kind: MetricKind, lambda: f64) -> Result<f64> {
        let policy = match self {
            BoundaryPolicy::Auto if kind.finite_at_zero() => BoundaryPolicy::Limit,
            BoundaryPolicy::Auto => BoundaryPolicy::BuresPair,
            other => other,
        };
        match policy {
            BoundaryPolicy::BuresPair => Ok(lambda),
            BoundaryPolicy::Limit => match kind {
                MetricKind::Bures => Ok(lambda),
                MetricKind::ArithAverage | MetricKind::WignerYanase => Ok(2.0 * lambda),
                MetricKind::Gks => Ok(E * lambda / 2.0),
                MetricKind::KuboMori | MetricKind::GeomAverage => Err(Error::DivergentBoundary(kind.name())),
            },
            BoundaryPolicy::Epsilon { epsilon } => {
                let d = lambda - epsilon;
                Ok(d * d * mc_function(kind, lambda, epsilon)? / 2.0)
            }
            BoundaryPolicy::Auto => unreachable!(),
        }
    }
}

fn check_simplex(lambda: &[f64]) -> Result<()> {
    if lambda.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::Domain("spectrum has a non-positive eigenvalue".into()));
    }
    let sum: f64 = lambda.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!("spectrum sums to {sum}, not 1")));
    }
    Ok(())
}

/// `2^-(m-1) · ν^((m-1)/2) · Π λ^-1/2 · Π_{j<k} (λ_j-λ_k)² c(λ_j,λ_k)/2`
/// over the `m` given (nonzero) eigenvalues; `ν` is the diagonal
/// normalization of the kind.
fn interior_factor(kind: MetricKind, lambda: &[f64]) -> f64 {
    let m = lambda.len();
    let mut prod = 1.0;
    for (j, &a) in lambda.iter().enumerate() {
        prod /= a.sqrt();
        for &b in &lambda[j + 1..] {
            let d = a - b;
            prod *= d * d * mc_unchecked(kind, a, b) * 0.5;
        }
    }
    let nu = kind.diagonal_normalization();
    let diag = if nu == 1.0 { 1.0 } else { nu.powf((m as f64 - 1.0) / 2.0) };
    prod * diag * 0.5f64.powi(m as i32 - 1)
}

/// Metric volume density with respect to `dλ_1…dλ_{N-1}` on the coordinate
/// simplex, per unit Haar measure of the eigenframe.
pub fn volume_weight(kind: MetricKind, lambda: &[f64]) -> Result<f64> {
    check_simplex(lambda)?;
    Ok(interior_factor(kind, lambda))
}

/// Hyperarea density on the rank-(N-1) boundary; `lambda` holds the N-1
/// nonzero eigenvalues.
pub fn boundary_weight(kind: MetricKind, lambda: &[f64], policy: BoundaryPolicy) -> Result<f64> {
    check_simplex(lambda)?;
    let mut w = interior_factor(kind, lambda);
    for &l in lambda {
        w *= policy.pair_factor(kind, l)?;
    }
    Ok(w)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Manifold {
    Volume,
    Hyperarea,
}

impl Manifold {
    pub fn name(self) -> &'static str {
        match self {
            Manifold::Volume => "volume",
            Manifold::Hyperarea => "hyperarea",
        }
    }

    /// Rank deficiency `n` in the closed-form Bures formula.
    pub fn rank_deficiency(self) -> usize {
        match self {
            Manifold::Volume => 0,
            Manifold::Hyperarea => 1,
        }
    }

    /// Number of nonzero eigenvalues of an `n×n` state on this manifold.
    pub fn rank(self, n: usize) -> usize {
        n - self.rank_deficiency()
    }

    /// Real dimension of the manifold of complex `n×n` states.
    pub fn dimension(self, n: usize) -> usize {
        n * n - 1 - self.rank_deficiency()
    }
}

impl fmt::Display for Manifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-metric importance weights of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightBundle {
    pub manifold: Manifold,
    pub weights: Vec<(MetricKind, f64)>,
}

impl WeightBundle {
    pub fn get(&self, kind: MetricKind) -> Option<f64> {
        self.weights.iter().find(|(k, _)| *k == kind).map(|(_, w)| *w)
    }
}

/// `ln Γ(k/2)` for a positive integer `k`, by exact recursion from Γ(1) and
/// Γ(1/2).
pub fn ln_gamma_half(k: u32) -> f64 {
    assert!(k > 0, "Γ(0) is undefined");
    let mut acc = if k.is_multiple_of(2) { 0.0 } else { 0.5 * PI.ln() };
    let mut x = if k.is_multiple_of(2) { 1.0 } else { 0.5 };
    let target = k as f64 / 2.0;
    while x < target {
        acc += x.ln();
        x += 1.0;
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyticParams {
    pub n: usize,
    pub rank_deficiency: usize,
    /// 1 for real, 2 for complex matrices.
    pub beta: u32,
}

impl AnalyticParams {
    pub fn complex(n: usize, rank_deficiency: usize) -> Self {
        Self {
            n,
            rank_deficiency,
            beta: 2,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Domain(format!("N = {} must be at least 2", self.n)));
        }
        if self.rank_deficiency > self.n - 1 {
            return Err(Error::Domain(format!(
                "rank deficiency {} exceeds N - 1 = {}",
                self.rank_deficiency,
                self.n - 1
            )));
        }
        if !(self.beta == 1 || self.beta == 2) {
            return Err(Error::Domain(format!("beta = {} must be 1 or 2", self.beta)));
        }
        Ok(())
    }

    /// Manifold dimension `d_n = (N-n)[1 + (N+n-1)β/2] - 1`.
    pub fn dimension(&self) -> usize {
        let (n, k, b) = (self.n, self.rank_deficiency, self.beta as usize);
        // (N-n)(2 + (N+n-1)β)/2 is an integer for β ∈ {1, 2}.
        (n - k) * (2 + (n + k - 1) * b) / 2 - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticVolume {
    pub ln_value: f64,
    pub value: f64,
}

/// Closed-form Bures volume of the rank-(N-n) stratum.
pub fn analytic_bures_volume(p: AnalyticParams) -> Result<AnalyticVolume> {
    p.validate()?;
    let d = p.dimension() as u32;
    let b = p.beta;
    let (n, k) = (p.n as u32, p.rank_deficiency as u32);
    // Every Γ argument is a multiple of 1/2; ln_gamma_half takes twice it.
    let mut ln = -(d as f64) * 2f64.ln() + (d as f64 + 1.0) / 2.0 * PI.ln() - ln_gamma_half(d + 1);
    for j in 1..=(n - k) {
        ln += ln_gamma_half(j * b) + ln_gamma_half(2 + (2 * k + j - 1) * b)
            - ln_gamma_half((k + j) * b)
            - ln_gamma_half(2 + (k + j - 1) * b);
    }
    Ok(AnalyticVolume {
        ln_value: ln,
        value: ln.exp(),
    })
}

fn superfactorial(n: usize) -> f64 {
    let mut p = 1.0;
    let mut f = 1.0;
    for k in 1..n {
        f *= k as f64;
        p *= f;
    }
    p
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Haar volume of the eigenframes times the ordering redundancy of the
/// unordered simplex: `π^{N(N-1)/2} / (Π_{k<N} k! · N!)` for the volume and
/// with `(N-1)!` in place of `N!` for the hyperarea.
pub fn flag_constant(n: usize, manifold: Manifold) -> f64 {
    assert!(n >= 2);
    let orderings = match manifold {
        Manifold::Volume => factorial(n),
        Manifold::Hyperarea => factorial(n - 1),
    };
    PI.powf((n * (n - 1)) as f64 / 2.0) / (superfactorial(n) * orderings)
}

/// Conjecture constants reported alongside the estimates.
pub mod conjecture {
    /// `√2 - 1`.
    pub const SILVER_MEAN: f64 = std::f64::consts::SQRT_2 - 1.0;
    /// The statistical-distinguishability metric is four times Bures.
    pub const SD_SCALE: f64 = 4.0;

    /// Conjectured Kubo-Mori / Bures volume ratio `2^{N(N-1)/2}`.
    pub fn km_ratio(n: usize) -> f64 {
        2f64.powi((n * (n - 1) / 2) as i32)
    }

    /// Volume of a `dim`-manifold under a metric scaled by `scale`, relative
    /// to the unscaled one.
    pub fn rescale(scale: f64, dim: usize) -> f64 {
        scale.powf(dim as f64 / 2.0)
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let n = order as f64;
    for i in 0..order.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=order {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[order - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}

/// `∫ w(λ) dλ` over the unordered simplex by tensor Gauss-Legendre over the
/// hyperspherical angles (`m ≤ 3` angles).
pub fn simplex_integral(
    kind: MetricKind,
    n: usize,
    manifold: Manifold,
    policy: BoundaryPolicy,
    order: usize,
) -> Result<f64> {
    let angles = manifold.rank(n) - 1;
    if angles > 3 {
        return Err(Error::Domain(format!("quadrature supports at most 3 angles, got {angles}")));
    }
    let (x, wt) = gauss_legendre(order);
    // θ = (π/2)(t - sin(2πt)/2π) grades the nodes towards both ends, which
    // smooths the logarithmic edge singularity of the Kubo-Mori density.
    let mut nodes = Vec::with_capacity(order);
    let mut node_weights = Vec::with_capacity(order);
    for (xi, wi) in x.iter().zip(&wt) {
        let t = 0.5 * (xi + 1.0);
        nodes.push(FRAC_PI_2 * (t - (2.0 * PI * t).sin() / (2.0 * PI)));
        node_weights.push(0.5 * wi * FRAC_PI_2 * (1.0 - (2.0 * PI * t).cos()));
    }
    let weight = |lambda: &[f64]| -> Result<f64> {
        match manifold {
            Manifold::Volume => volume_weight(kind, lambda),
            Manifold::Hyperarea => boundary_weight(kind, lambda, policy),
        }
    };
    let total = order.pow(angles as u32);
    let mut theta = vec![0.0; angles];
    let mut sum = 0.0;
    for flat in 0..total {
        let mut rest = flat;
        let mut q = 1.0;
        for t in theta.iter_mut() {
            let i = rest % order;
            rest /= order;
            *t = nodes[i];
            q *= node_weights[i];
        }
        let (lambda, jac) = hyperspherical_map(&theta)?;
        if lambda.iter().any(|&l| l <= 0.0) {
            continue;
        }
        sum += q * weight(&renormalize(lambda))? * jac;
    }
    Ok(sum)
}

fn renormalize(mut lambda: Vec<f64>) -> Vec<f64> {
    let s: f64 = lambda.iter().sum();
    lambda.iter_mut().for_each(|l| *l /= s);
    lambda
}

/// Quadrature order used for calibration.
pub const CALIBRATION_ORDER: usize = 96;

/// Relative tolerance of the flag-constant calibration.
pub const CALIBRATION_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub n: usize,
    pub manifold: Manifold,
    pub flag_constant: f64,
    pub simplex_integral: f64,
    pub analytic: f64,
    pub relative_error: f64,
}

/// Checks `C(N)·I_Bures(N)` against the closed form for N ∈ {2, 3, 4} on both
/// manifolds. `perturbation` multiplies every flag constant (1.0 in normal
/// use) so that a miscalibrated constant can be exercised.
pub fn calibrate_flag_constants(perturbation: f64) -> Result<Vec<CalibrationRow>> {
    let mut rows = Vec::new();
    for n in 2..=4 {
        for manifold in [Manifold::Volume, Manifold::Hyperarea] {
            let c = flag_constant(n, manifold) * perturbation;
            let integral = simplex_integral(MetricKind::Bures, n, manifold, BoundaryPolicy::Limit, CALIBRATION_ORDER)?;
            let analytic = analytic_bures_volume(AnalyticParams::complex(n, manifold.rank_deficiency()))?.value;
            let relative_error = (c * integral / analytic - 1.0).abs();
            if !(relative_error <= CALIBRATION_TOLERANCE) {
                return Err(Error::Calibration(format!(
                    "N={n} {manifold}: C·I = {} vs closed form {analytic} (relative error {relative_error:e})",
                    c * integral
                )));
            }
            rows.push(CalibrationRow {
                n,
                manifold,
                flag_constant: c,
                simplex_integral: integral,
                analytic,
                relative_error,
            });
        }
    }
    Ok(rows)
}
