//! Unit-cube points to weighted density-matrix samples.
//!
//! A point of dimension `2N² + m` is split into `2N²` coordinates for a Haar
//! eigenframe and `m` coordinates for the spectrum (`m = N-1` for the volume,
//! `N-2` for the hyperarea). Each metric weight is divided by the sampler's
//! density on the unordered simplex, so the mean weight times
//! [`flag_constant`](crate::measures::flag_constant) estimates the metric
//! volume regardless of which spectrum sampler is used.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{haar_frame_from_uniforms, DensityMatrix, UnitaryFrame};
use crate::measures::{boundary_weight, volume_weight, BoundaryPolicy, Manifold, MetricKind, WeightBundle};

/// `λ_k = cos²θ_k Π_{i<k} sin²θ_i`, `λ_{m+1} = Π sin²θ_i`, together with
/// `|det ∂(λ_1..λ_m)/∂(θ_1..θ_m)|`.
pub fn hyperspherical_map(theta: &[f64]) -> Result<(Vec<f64>, f64)> {
    let mut lambda = Vec::with_capacity(theta.len() + 1);
    let mut tail = 1.0;
    let mut jacobian = 1.0;
    for &t in theta {
        if !(0.0..=FRAC_PI_2).contains(&t) {
            return Err(Error::Domain(format!("hyperspherical angle {t} outside [0, π/2]")));
        }
        let (s, c) = t.sin_cos();
        lambda.push(tail * c * c);
        jacobian *= 2.0 * s * c * tail;
        tail *= s * s;
    }
    lambda.push(tail);
    Ok((lambda, jacobian))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumSampler {
    /// Angles uniform in [0, π/2]^m pushed through [`hyperspherical_map`].
    #[default]
    Hyperspherical,
    /// Uniform on the simplex by stick breaking.
    Dirichlet,
}

/// Eigenvalues on the simplex with the sampler's density there.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub density: f64,
}

impl SpectrumSampler {
    /// Maps `m` cube coordinates to `m + 1` eigenvalues.
    pub fn spectrum(self, u: &[f64]) -> Result<Spectrum> {
        let m = u.len();
        match self {
            SpectrumSampler::Hyperspherical => {
                let theta: Vec<f64> = u.iter().map(|x| x * FRAC_PI_2).collect();
                let (values, jacobian) = hyperspherical_map(&theta)?;
                let density = 1.0 / (jacobian * FRAC_PI_2.powi(m as i32));
                Ok(Spectrum { values, density })
            }
            SpectrumSampler::Dirichlet => {
                let mut values = Vec::with_capacity(m + 1);
                let mut rest = 1.0;
                for (k, &x) in u.iter().enumerate() {
                    let take = rest * (1.0 - x.powf(1.0 / (m - k) as f64));
                    values.push(take);
                    rest -= take;
                }
                values.push(rest);
                let density = (1..=m).map(|k| k as f64).product();
                Ok(Spectrum { values, density })
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct StateSample {
    pub spectrum: Spectrum,
    pub frame: UnitaryFrame,
    pub rho: DensityMatrix,
    pub weights: WeightBundle,
    pub index: u64,
}

/// Everything needed to turn cube points into samples for one manifold.
#[derive(Clone, Debug)]
pub struct StateSampler {
    pub n: usize,
    pub manifold: Manifold,
    pub metrics: Vec<MetricKind>,
    pub policy: BoundaryPolicy,
    pub spectrum_sampler: SpectrumSampler,
}

impl StateSampler {
    pub fn new(n: usize, manifold: Manifold, metrics: Vec<MetricKind>, policy: BoundaryPolicy) -> Result<Self> {
        if !(2..=crate::linalg::MAX_DIM).contains(&n) {
            return Err(Error::Dimension(n));
        }
        Ok(Self {
            n,
            manifold,
            metrics,
            policy,
            spectrum_sampler: SpectrumSampler::default(),
        })
    }

    pub fn with_spectrum_sampler(mut self, sampler: SpectrumSampler) -> Self {
        self.spectrum_sampler = sampler;
        self
    }

    pub fn frame_dimension(&self) -> usize {
        2 * self.n * self.n
    }

    /// Required cube dimension: `2N² + rank - 1`.
    pub fn cube_dimension(&self) -> usize {
        self.frame_dimension() + self.manifold.rank(self.n) - 1
    }

    /// Importance weights `w(λ)/density` for every requested metric.
    pub fn weights(&self, spectrum: &Spectrum) -> Result<WeightBundle> {
        let mut weights = Vec::with_capacity(self.metrics.len());
        for &kind in &self.metrics {
            let w = match self.manifold {
                Manifold::Volume => volume_weight(kind, &spectrum.values)?,
                Manifold::Hyperarea => boundary_weight(kind, &spectrum.values, self.policy)?,
            };
            weights.push((kind, w / spectrum.density));
        }
        Ok(WeightBundle {
            manifold: self.manifold,
            weights,
        })
    }

    pub fn sample(&self, coordinates: &[f64], index: u64) -> Result<StateSample> {
        if coordinates.len() != self.cube_dimension() {
            return Err(Error::Domain(format!(
                "cube point has dimension {}, expected {}",
                coordinates.len(),
                self.cube_dimension()
            )));
        }
        let (frame_u, spec_u) = coordinates.split_at(self.frame_dimension());
        let frame = haar_frame_from_uniforms(self.n, frame_u);
        let mut spectrum = self.spectrum_sampler.spectrum(spec_u)?;
        // Rounding can leave the sum a few ulps from one.
        let s: f64 = spectrum.values.iter().sum();
        spectrum.values.iter_mut().for_each(|l| *l /= s);
        let weights = self.weights(&spectrum)?;
        let rho = DensityMatrix::new_unchecked(frame.0.conjugate_diagonal(&spectrum.values));
        Ok(StateSample {
            spectrum,
            frame,
            rho,
            weights,
            index,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lds::{PointStream, SequenceKind, SequenceSpec};
    use crate::linalg::min_eigenvalue;
    use crate::measures::flag_constant;
    use std::f64::consts::PI;

    #[test]
    fn quarter_angles() {
        let (l, _) = hyperspherical_map(&[PI / 4.0; 5]).unwrap();
        let expected = [0.5, 0.25, 0.125, 0.0625, 0.03125, 0.03125];
        for (a, b) in l.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_first_angle() {
        let (l, _) = hyperspherical_map(&[0.0, 0.3, 1.0]).unwrap();
        assert_eq!(l, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(hyperspherical_map(&[2.0]).is_err());
        assert!(hyperspherical_map(&[-0.1]).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(2);
        for trial in 0..100 {
            let m = 1 + trial % 5;
            let theta: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..FRAC_PI_2 - 0.05)).collect();
            let (_, jac) = hyperspherical_map(&theta).unwrap();
            let h = 1e-6;
            let mut jm = vec![vec![0.0; m]; m];
            for c in 0..m {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[c] += h;
                dn[c] -= h;
                let (lu, _) = hyperspherical_map(&up).unwrap();
                let (ld, _) = hyperspherical_map(&dn).unwrap();
                for r in 0..m {
                    jm[r][c] = (lu[r] - ld[r]) / (2.0 * h);
                }
            }
            let det = det(jm).abs();
            assert!(((det - jac) / jac).abs() < 1e-6, "m={m}: {det} vs {jac}");
        }
    }

    fn det(mut m: Vec<Vec<f64>>) -> f64 {
        let n = m.len();
        let mut d = 1.0;
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs())).unwrap();
            if p != k {
                m.swap(p, k);
                d = -d;
            }
            d *= m[k][k];
            for r in k + 1..n {
                let f = m[r][k] / m[k][k];
                for c in k..n {
                    m[r][c] -= f * m[k][c];
                }
            }
        }
        d
    }

    #[test]
    fn dirichlet_is_on_simplex() {
        let s = SpectrumSampler::Dirichlet.spectrum(&[0.3, 0.9, 0.5]).unwrap();
        assert_eq!(s.values.len(), 4);
        assert!((s.values.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(s.values.iter().all(|&x| x > 0.0));
        assert_eq!(s.density, 6.0);
    }

    #[test]
    fn reconstruction_contract() {
        for manifold in [Manifold::Volume, Manifold::Hyperarea] {
            let sampler = StateSampler::new(6, manifold, MetricKind::ALL.to_vec(), BoundaryPolicy::Auto).unwrap();
            let spec = SequenceSpec::new(SequenceKind::PseudoRandom, sampler.cube_dimension(), 5);
            let mut stream = PointStream::new(spec).unwrap();
            for _ in 0..10_000 {
                let p = stream.next_point().unwrap();
                let s = sampler.sample(&p.coordinates, p.index).unwrap();
                let rho = s.rho.matrix();
                assert!(rho.hermiticity_error() < 1e-10);
                assert!((rho.trace().re - 1.0).abs() < 1e-10);
                assert!(min_eigenvalue(rho).unwrap() > -1e-10);
                let back = s.frame.0.conjugate_diagonal(&s.spectrum.values);
                assert!(back.max_abs_diff(rho) < 1e-10);
                assert!(s.weights.weights.iter().all(|(_, w)| w.is_finite() && *w >= 0.0));
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let sampler = StateSampler::new(3, Manifold::Volume, vec![MetricKind::Bures], BoundaryPolicy::Auto).unwrap();
        assert_eq!(sampler.cube_dimension(), 20);
        assert!(sampler.sample(&[0.5; 19], 0).is_err());
        let h = StateSampler::new(6, Manifold::Hyperarea, vec![], BoundaryPolicy::Auto).unwrap();
        assert_eq!(h.cube_dimension(), 76);
        assert!(StateSampler::new(7, Manifold::Volume, vec![], BoundaryPolicy::Auto).is_err());
    }

    #[test]
    fn limit_policy_divergence_propagates() {
        let sampler = StateSampler::new(3, Manifold::Hyperarea, vec![MetricKind::KuboMori], BoundaryPolicy::Limit).unwrap();
        let err = sampler.sample(&[0.5; 19], 1).unwrap_err();
        assert!(matches!(err, Error::DivergentBoundary(_)));
    }

    #[test]
    fn two_level_pure_states() {
        let sampler = StateSampler::new(2, Manifold::Hyperarea, vec![MetricKind::Bures], BoundaryPolicy::Auto).unwrap();
        let s = sampler.sample(&[0.3, 0.6, 0.2, 0.9, 0.1, 0.5, 0.7, 0.4], 1).unwrap();
        assert_eq!(s.spectrum.values, vec![1.0]);
        let w = s.weights.get(MetricKind::Bures).unwrap();
        assert!((w * flag_constant(2, Manifold::Hyperarea) - PI).abs() < 1e-15);
        // Rank one: ρ² = ρ.
        let rho = s.rho.matrix();
        assert!((rho * rho).max_abs_diff(rho) < 1e-12);
    }

    fn mean_and_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn two_level_volume_monte_carlo() {
        for spectrum_sampler in [SpectrumSampler::Hyperspherical, SpectrumSampler::Dirichlet] {
            let sampler = StateSampler::new(2, Manifold::Volume, vec![MetricKind::Bures], BoundaryPolicy::Auto)
                .unwrap()
                .with_spectrum_sampler(spectrum_sampler);
            let spec = SequenceSpec::new(SequenceKind::PseudoRandom, sampler.cube_dimension(), 77);
            let mut stream = PointStream::new(spec).unwrap();
            let c = flag_constant(2, Manifold::Volume);
            let xs: Vec<f64> = (0..1_000_000)
                .map(|_| {
                    let p = stream.next_point().unwrap();
                    c * sampler.sample(&p.coordinates, p.index).unwrap().weights.weights[0].1
                })
                .collect();
            let (mean, se) = mean_and_se(&xs);
            let exact = PI * PI / 8.0;
            assert!((mean - exact).abs() < 3.0 * se, "{spectrum_sampler:?}: {mean} ± {se} vs {exact}");
        }
    }

    #[test]
    fn spectra_cover_the_simplex() {
        let sampler = StateSampler::new(4, Manifold::Volume, vec![], BoundaryPolicy::Auto).unwrap();
        let spec = SequenceSpec::new(SequenceKind::PseudoRandom, sampler.cube_dimension(), 8);
        let mut stream = PointStream::new(spec).unwrap();
        let mut lo = [1.0f64; 4];
        let mut hi = [0.0f64; 4];
        for _ in 0..50_000 {
            let p = stream.next_point().unwrap();
            let s = sampler.sample(&p.coordinates, p.index).unwrap();
            for (i, l) in s.spectrum.values.iter().enumerate() {
                lo[i] = lo[i].min(*l);
                hi[i] = hi[i].max(*l);
            }
        }
        for i in 0..4 {
            assert!(lo[i] < 1e-3 && hi[i] > 0.9, "λ_{i} spans [{}, {}]", lo[i], hi[i]);
        }
    }

    #[test]
    fn frame_independent_of_spectrum() {
        let sampler = StateSampler::new(3, Manifold::Volume, vec![], BoundaryPolicy::Auto).unwrap();
        let spec = SequenceSpec::new(SequenceKind::PseudoRandom, sampler.cube_dimension(), 12);
        let mut stream = PointStream::new(spec).unwrap();
        let m = 100_000;
        let mut frame = vec![Vec::with_capacity(m); 9];
        let mut lam = vec![Vec::with_capacity(m); 3];
        for _ in 0..m {
            let p = stream.next_point().unwrap();
            let s = sampler.sample(&p.coordinates, p.index).unwrap();
            for r in 0..3 {
                for c in 0..3 {
                    frame[3 * r + c].push(s.frame.0[(r, c)].norm());
                }
                lam[r].push(s.spectrum.values[r]);
            }
        }
        for f in &frame {
            for l in &lam {
                let corr = correlation(f, l);
                assert!(corr.abs() < 0.01, "correlation {corr}");
            }
        }
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma).powi(2);
            sbb += (y - mb).powi(2);
        }
        sab / (saa * sbb).sqrt()
    }
}
