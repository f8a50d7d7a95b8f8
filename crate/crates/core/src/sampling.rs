//! Seeded random generators for metrics and covectors, used by tests,
//! benchmarks and the report command.

use crate::model::{Covector, MetricSpec};
use crate::quaternion::{q_basis, qhat_basis};
use crate::skew::SkewMatrix;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Skew matrix with independent standard normal upper entries.
pub fn random_skew<R: Rng + ?Sized>(rng: &mut R, m: usize) -> SkewMatrix {
    let upper: Vec<f64> = (0..m * (m - 1) / 2).map(|_| StandardNormal.sample(rng)).collect();
    SkewMatrix::from_upper(m, &upper).expect("length matches")
}

/// Uniform point on the unit sphere in `R^m`.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, m: usize) -> DVector<f64> {
    loop {
        let v = DVector::<f64>::from_fn(m, |_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-8 {
            return v / n;
        }
    }
}

/// Random metric with `k` structure matrices, optionally normalized.
pub fn random_spec<R: Rng + ?Sized>(rng: &mut R, m: usize, k: usize, normalized: bool) -> MetricSpec {
    loop {
        let l = (0..k).map(|_| random_skew(rng, m)).collect();
        if let Ok(spec) = MetricSpec::new(l) {
            if !normalized {
                return spec;
            }
            if let Ok(n) = spec.normalize() {
                return n;
            }
        }
    }
}

/// Unit horizontal part and vertical part with modulus in `[r_lo, r_hi]`.
pub fn random_covector<R: Rng + ?Sized>(rng: &mut R, m: usize, k: usize, r_lo: f64, r_hi: f64) -> Covector {
    let u0 = random_unit(rng, m);
    let dir = random_unit(rng, k);
    let r = dir * rng.random_range(r_lo..=r_hi);
    Covector::new(u0, r)
}

fn random_combination<R: Rng + ?Sized>(rng: &mut R, basis: &[SkewMatrix; 3]) -> SkewMatrix {
    let c = random_unit(rng, 3);
    let mut acc = SkewMatrix::zeros(4);
    for (b, x) in basis.iter().zip(c.iter()) {
        acc = &acc + &b.scaled(*x);
    }
    acc
}

/// Random unit element of the pure-quaternion ideal.
pub fn random_q<R: Rng + ?Sized>(rng: &mut R) -> SkewMatrix {
    random_combination(rng, &q_basis())
}

/// Random unit element of the pure skew-quaternion ideal.
pub fn random_qhat<R: Rng + ?Sized>(rng: &mut R) -> SkewMatrix {
    random_combination(rng, &qhat_basis())
}

/// Normalized pair spanning a random plane inside `Q`.
pub fn random_both_q<R: Rng + ?Sized>(rng: &mut R) -> MetricSpec {
    pair_spec(rng, |r| random_q(r), |r| random_q(r))
}

/// Normalized pair spanning a random plane inside `Q^`.
pub fn random_both_qhat<R: Rng + ?Sized>(rng: &mut R) -> MetricSpec {
    pair_spec(rng, |r| random_qhat(r), |r| random_qhat(r))
}

/// Normalized pair whose span is a line of `Q` plus a line of `Q^`, given in a
/// mixed (non-split) basis.
pub fn random_mixed_split<R: Rng + ?Sized>(rng: &mut R) -> MetricSpec {
    loop {
        let a = random_q(rng);
        let b = random_qhat(rng);
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let w: f64 = rng.random_range(0.3..3.0);
        let l1 = SkewMatrix::lin_comb(phi.cos(), &a, phi.sin() * w, &b).expect("dims");
        let l2 = SkewMatrix::lin_comb(-phi.sin(), &a, phi.cos() * w, &b).expect("dims");
        if let Ok(s) = MetricSpec::new(vec![l1, l2]).and_then(|s| s.normalize()) {
            return s;
        }
    }
}

fn pair_spec<R: Rng + ?Sized>(
    rng: &mut R,
    f: impl Fn(&mut R) -> SkewMatrix,
    g: impl Fn(&mut R) -> SkewMatrix,
) -> MetricSpec {
    loop {
        let l1 = f(rng);
        let l2 = g(rng);
        if let Ok(s) = MetricSpec::new(vec![l1, l2]).and_then(|s| s.normalize()) {
            return s;
        }
    }
}
