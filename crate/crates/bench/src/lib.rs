//! Shared fixtures for the benchmarks.

use nilsynth::quaternion::{basis, QuatBasis};
use nilsynth::sampling::{random_covector, random_spec};
use nilsynth::{Covector, MetricSpec};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Normalized random metric and an arclength covector, fixed by `seed`.
pub fn random_case(m: usize, k: usize, seed: u64) -> (MetricSpec, Covector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = random_spec(&mut rng, m, k, true);
    let cov = random_covector(&mut rng, m, k, 0.5, 2.0);
    (spec, cov)
}

/// The mixed pair `(i, i^)`.
pub fn mixed_pair() -> MetricSpec {
    MetricSpec::new(vec![basis(QuatBasis::I), basis(QuatBasis::IHat)]).expect("basis pair is independent")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_valid() {
        let (spec, cov) = random_case(4, 2, 1);
        assert!(spec.is_normalized());
        assert!((cov.u0.norm() - 1.0).abs() < 1e-12);
        assert!(mixed_pair().is_normalized());
    }
}
