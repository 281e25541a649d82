//! Peres-Horodecki classification under the two qubit-qutrit orderings.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{min_eigenvalue, partial_transpose, CMatrix, TensorSplit};

/// Slack on the smallest partial-transpose eigenvalue.
pub const PPT_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeparabilityFlags {
    /// PPT under the first split (2 ⊗ 3 for qubit-qutrit).
    pub pass_a: bool,
    /// PPT under the second split (3 ⊗ 2).
    pub pass_b: bool,
}

impl SeparabilityFlags {
    pub const NONE: SeparabilityFlags = SeparabilityFlags {
        pass_a: false,
        pass_b: false,
    };

    pub fn either(&self) -> bool {
        self.pass_a || self.pass_b
    }

    pub fn both(&self) -> bool {
        self.pass_a && self.pass_b
    }
}

pub fn ppt_pass(rho: &CMatrix, split: TensorSplit) -> Result<bool> {
    let pt = partial_transpose(rho, split)?;
    Ok(min_eigenvalue(&pt)? >= -PPT_TOLERANCE)
}

/// Classifier for an ordered pair of splits. With a single split both flags
/// carry the same test.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Classifier {
    splits: Vec<TensorSplit>,
}

impl Classifier {
    pub fn new(splits: Vec<TensorSplit>) -> Self {
        assert!(splits.len() <= 2, "at most two splits are classified");
        Self { splits }
    }

    pub fn for_dimension(n: usize) -> Self {
        Self::new(TensorSplit::defaults_for(n))
    }

    pub fn splits(&self) -> &[TensorSplit] {
        &self.splits
    }

    pub fn is_active(&self) -> bool {
        !self.splits.is_empty()
    }

    /// One eigendecomposition per distinct split.
    pub fn classify(&self, rho: &CMatrix) -> Result<SeparabilityFlags> {
        match self.splits.as_slice() {
            [] => Ok(SeparabilityFlags::NONE),
            [only] => {
                let pass = ppt_pass(rho, *only)?;
                Ok(SeparabilityFlags {
                    pass_a: pass,
                    pass_b: pass,
                })
            }
            [a, b, ..] => Ok(SeparabilityFlags {
                pass_a: ppt_pass(rho, *a)?,
                pass_b: ppt_pass(rho, *b)?,
            }),
        }
    }
}

/// Qubit-qutrit classification with splits (2,3) and (3,2).
pub fn classify(rho: &CMatrix) -> Result<SeparabilityFlags> {
    Classifier::for_dimension(6).classify(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{haar_frame_from_uniforms, hermitian_eigenvalues, DensityMatrix};
    use crate::testutil::{random_density, random_uniforms};
    use num_complex::Complex64;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    const ONE: Complex64 = Complex64::new(1.0, 0.0);

    fn basis_pure(indices: &[usize]) -> DensityMatrix {
        let mut psi = [Complex64::new(0.0, 0.0); 6];
        for &i in indices {
            psi[i] = ONE;
        }
        DensityMatrix::pure(&psi)
    }

    /// (|0⟩|0⟩ + |1⟩|1⟩)/√2 in the 2⊗3 ordering (indices 0 and 4).
    fn bell_2x3() -> DensityMatrix {
        basis_pure(&[0, 4])
    }

    /// (|0⟩ + |5⟩)/√2 has two equal Schmidt coefficients in both orderings.
    fn doubly_entangled() -> DensityMatrix {
        basis_pure(&[0, 5])
    }

    #[test]
    fn maximally_mixed_passes() {
        let id = DensityMatrix::maximally_mixed(6);
        for split in TensorSplit::defaults_for(6) {
            assert!(ppt_pass(id.matrix(), split).unwrap());
        }
        let f = classify(id.matrix()).unwrap();
        assert_eq!(f, SeparabilityFlags { pass_a: true, pass_b: true });
        assert!(f.either() && f.both());
    }

    #[test]
    fn product_state_passes() {
        let rho = basis_pure(&[0]);
        for split in TensorSplit::defaults_for(6) {
            assert!(ppt_pass(rho.matrix(), split).unwrap());
        }
    }

    #[test]
    fn entangled_states_fail() {
        assert!(!ppt_pass(bell_2x3().matrix(), TensorSplit::QUBIT_QUTRIT).unwrap());
        let f = classify(doubly_entangled().matrix()).unwrap();
        assert_eq!(f, SeparabilityFlags::NONE);
        assert!(!f.either() && !f.both());
        for split in TensorSplit::defaults_for(6) {
            let pt = partial_transpose(doubly_entangled().matrix(), split).unwrap();
            assert!((min_eigenvalue(&pt).unwrap() + 0.5).abs() < 1e-10);
        }
    }

    #[test]
    fn bell_under_the_other_ordering_is_product() {
        // Indices 0 and 4 are |0⟩|0⟩ and |2⟩|0⟩ in the 3⊗2 ordering.
        let pt = partial_transpose(bell_2x3().matrix(), TensorSplit::QUTRIT_QUBIT).unwrap();
        assert!(min_eigenvalue(&pt).unwrap().abs() < 1e-12);
    }

    #[test]
    fn slightly_entangled_mixture_passes() {
        for bell in [bell_2x3(), doubly_entangled()] {
            let mix = DensityMatrix::maximally_mixed(6).mix(&bell, 0.99);
            let f = classify(mix.matrix()).unwrap();
            assert!(f.pass_a && f.pass_b);
        }
    }

    #[test]
    fn convex_mixtures_of_passing_states_pass() {
        let mut rng = StdRng::seed_from_u64(31);
        let mut passing = Vec::new();
        while passing.len() < 2000 {
            // Mixing towards the identity keeps most draws PPT.
            let rho = random_density(&mut rng, 6).scale(0.3).add(&CMatrix::identity(6).scale(0.7 / 6.0));
            if ppt_pass(&rho, TensorSplit::QUBIT_QUTRIT).unwrap() {
                passing.push(rho);
            }
        }
        for pair in passing.chunks(2) {
            let mid = pair[0].scale(0.5).add(&pair[1].scale(0.5));
            assert!(ppt_pass(&mid, TensorSplit::QUBIT_QUTRIT).unwrap());
        }
    }

    #[test]
    fn local_unitaries_preserve_the_test() {
        let mut rng = StdRng::seed_from_u64(32);
        for _ in 0..1000 {
            let rho = random_density(&mut rng, 6).scale(0.6).add(&CMatrix::identity(6).scale(0.4 / 6.0));
            let ua = haar_frame_from_uniforms(2, &random_uniforms(&mut rng, 8)).0;
            let ub = haar_frame_from_uniforms(3, &random_uniforms(&mut rng, 18)).0;
            let local = CMatrix::from_fn(6, |r, c| ua[(r / 3, c / 3)] * ub[(r % 3, c % 3)]);
            let rotated = &(&local * &rho) * &local.adjoint();
            let before = min_eigenvalue(&partial_transpose(&rho, TensorSplit::QUBIT_QUTRIT).unwrap()).unwrap();
            let after = min_eigenvalue(&partial_transpose(&rotated, TensorSplit::QUBIT_QUTRIT).unwrap()).unwrap();
            assert!((before - after).abs() < 1e-12);
            if before.abs() > 1e-9 {
                assert_eq!(
                    ppt_pass(&rho, TensorSplit::QUBIT_QUTRIT).unwrap(),
                    ppt_pass(&rotated, TensorSplit::QUBIT_QUTRIT).unwrap()
                );
            }
        }
    }

    #[test]
    fn partial_transpose_spectrum_sums_to_one() {
        let mut rng = StdRng::seed_from_u64(33);
        for _ in 0..500 {
            let rho = random_density(&mut rng, 6);
            for split in TensorSplit::defaults_for(6) {
                let s: f64 = hermitian_eigenvalues(&partial_transpose(&rho, split).unwrap()).unwrap().iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inactive_classifier() {
        let c = Classifier::for_dimension(3);
        assert!(!c.is_active());
        assert_eq!(c.classify(&CMatrix::identity(3)).unwrap(), SeparabilityFlags::NONE);
        let two_qubit = Classifier::for_dimension(4);
        let f = two_qubit.classify(DensityMatrix::maximally_mixed(4).matrix()).unwrap();
        assert!(f.both());
    }
}
