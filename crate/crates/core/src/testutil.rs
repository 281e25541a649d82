use rand::rngs::StdRng;
use rand::Rng;

use crate::linalg::{haar_frame_from_uniforms, CMatrix};

pub fn random_uniforms(rng: &mut StdRng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.random_range(1e-12..1.0 - 1e-12)).collect()
}

pub fn random_spectrum(rng: &mut StdRng, n: usize) -> Vec<f64> {
    let mut lam: Vec<f64> = (0..n).map(|_| rng.random_range(1e-3..1.0)).collect();
    let s: f64 = lam.iter().sum();
    lam.iter_mut().for_each(|x| *x /= s);
    lam
}

/// Haar frame times a random full-rank spectrum.
pub fn random_density(rng: &mut StdRng, n: usize) -> CMatrix {
    let u = haar_frame_from_uniforms(n, &random_uniforms(rng, 2 * n * n));
    u.0.conjugate_diagonal(&random_spectrum(rng, n))
}
