//! The splitting `so(4) = Q + Q^` into pure quaternions and pure skew
//! quaternions, the eigenvalue formula built on it, and the classification of
//! structure pairs by how their span meets the two ideals.

use crate::error::{Error, Result};
use crate::skew::{hs_inner, SkewMatrix};
use nalgebra::{Matrix3x2, Vector3, SVD};
use serde::Serialize;
use std::f64::consts::{PI, TAU};

/// Default membership tolerance for `Q` and `Q^`.
pub const DEFAULT_CLASSIFY_TOL: f64 = 1e-9;

const ANGLE_GRID: usize = 2048;

/// The six basis matrices `i, j, k` (spanning `Q`) and `i^, j^, k^` (spanning `Q^`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuatBasis {
    I,
    J,
    K,
    IHat,
    JHat,
    KHat,
}

pub fn basis(b: QuatBasis) -> SkewMatrix {
    #[rustfmt::skip]
    let data: [f64; 16] = match b {
        QuatBasis::I => [0., -1., 0., 0., 1., 0., 0., 0., 0., 0., 0., -1., 0., 0., 1., 0.],
        QuatBasis::J => [0., 0., -1., 0., 0., 0., 0., 1., 1., 0., 0., 0., 0., -1., 0., 0.],
        QuatBasis::K => [0., 0., 0., -1., 0., 0., -1., 0., 0., 1., 0., 0., 1., 0., 0., 0.],
        QuatBasis::IHat => [0., -1., 0., 0., 1., 0., 0., 0., 0., 0., 0., 1., 0., 0., -1., 0.],
        QuatBasis::JHat => [0., 0., 1., 0., 0., 0., 0., 1., -1., 0., 0., 0., 0., -1., 0., 0.],
        QuatBasis::KHat => [0., 0., 0., -1., 0., 0., 1., 0., 0., -1., 0., 0., 1., 0., 0., 0.],
    };
    SkewMatrix::from_row_slice(4, &data).expect("basis matrices are skew")
}

pub fn q_basis() -> [SkewMatrix; 3] {
    [basis(QuatBasis::I), basis(QuatBasis::J), basis(QuatBasis::K)]
}

pub fn qhat_basis() -> [SkewMatrix; 3] {
    [basis(QuatBasis::IHat), basis(QuatBasis::JHat), basis(QuatBasis::KHat)]
}

/// Coordinates of an `so(4)` element in the basis `(i, j, k, i^, j^, k^)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuatDecomp {
    pub q: [f64; 3],
    pub q_hat: [f64; 3],
}

impl QuatDecomp {
    pub fn q_norm(&self) -> f64 {
        Vector3::from(self.q).norm()
    }

    pub fn q_hat_norm(&self) -> f64 {
        Vector3::from(self.q_hat).norm()
    }

    pub fn q_part(&self) -> SkewMatrix {
        combine(&q_basis(), &self.q)
    }

    pub fn q_hat_part(&self) -> SkewMatrix {
        combine(&qhat_basis(), &self.q_hat)
    }

    pub fn reconstruct(&self) -> SkewMatrix {
        &self.q_part() + &self.q_hat_part()
    }
}

fn combine(b: &[SkewMatrix; 3], c: &[f64; 3]) -> SkewMatrix {
    let mut acc = SkewMatrix::zeros(4);
    for (m, x) in b.iter().zip(c) {
        acc = &acc + &m.scaled(*x);
    }
    acc
}

fn require_dim4(l: &SkewMatrix) -> Result<()> {
    if l.dim() != 4 {
        return Err(Error::DimensionMismatch { expected: 4, found: l.dim() });
    }
    Ok(())
}

pub fn decompose(l: &SkewMatrix) -> Result<QuatDecomp> {
    require_dim4(l)?;
    let mut q = [0.0; 3];
    let mut q_hat = [0.0; 3];
    for (c, b) in q.iter_mut().zip(q_basis().iter()) {
        *c = hs_inner(l, b)?;
    }
    for (c, b) in q_hat.iter_mut().zip(qhat_basis().iter()) {
        *c = hs_inner(l, b)?;
    }
    Ok(QuatDecomp { q, q_hat })
}

/// Eigenvalue moduli `(|q| + |q^|, ||q| - |q^||)`.
pub fn eig_moduli_quat(l: &SkewMatrix) -> Result<(f64, f64)> {
    let d = decompose(l)?;
    let (a, b) = (d.q_norm(), d.q_hat_norm());
    Ok((a + b, (a - b).abs()))
}

/// Frobenius norm of the commutator.
pub fn commutator_check(q_elem: &SkewMatrix, qhat_elem: &SkewMatrix) -> Result<f64> {
    require_dim4(q_elem)?;
    require_dim4(qhat_elem)?;
    Ok(q_elem.commutator(qhat_elem).norm())
}

/// How `span{L1, L2}` sits relative to `Q` and `Q^`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PairKind {
    /// Both matrices lie in `Q`.
    BothQ,
    /// Both matrices lie in `Q^`.
    BothQhat,
    /// The span is the direct sum of a line in `Q` and a line in `Q^`.
    MixedSplit,
    Generic,
}

/// Which directions `L_theta` of the pencil have a double eigenvalue.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SigmaClass {
    /// Every direction.
    SigmaInf,
    /// Finitely many directions.
    SigmaZero,
    /// None.
    NonCritical,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairClassification {
    pub kind: PairKind,
    pub sigma_class: SigmaClass,
    /// Angles in `[0, 2 pi)` where `L_theta = cos(theta) L1 + sin(theta) L2`
    /// has a double eigenvalue; empty for `SigmaInf` and `NonCritical`.
    pub double_eigenvalue_angles: Vec<f64>,
}

impl PairClassification {
    /// Whether the pair lies in `(Q u Q^)^2` up to recombination, the
    /// structural condition equivalent to first conjugate time = cut time.
    pub fn cut_is_conjugate(&self) -> bool {
        self.kind != PairKind::Generic
    }
}

struct Projections {
    q: Matrix3x2<f64>,
    q_hat: Matrix3x2<f64>,
}

fn projections(l1: &SkewMatrix, l2: &SkewMatrix) -> Result<Projections> {
    let d1 = decompose(l1)?;
    let d2 = decompose(l2)?;
    Ok(Projections {
        q: Matrix3x2::from_columns(&[Vector3::from(d1.q), Vector3::from(d2.q)]),
        q_hat: Matrix3x2::from_columns(&[Vector3::from(d1.q_hat), Vector3::from(d2.q_hat)]),
    })
}

fn singular_values(m: &Matrix3x2<f64>) -> (f64, f64) {
    let s = SVD::new(*m, false, false).singular_values;
    (s[0].max(s[1]), s[0].min(s[1]))
}

/// Unit `(c, s)` minimizing `|m (c, s)^T|`.
fn null_direction(m: &Matrix3x2<f64>) -> (f64, f64) {
    let svd = SVD::new(*m, false, true);
    let vt = svd.v_t.expect("requested V^T");
    let k = if svd.singular_values[0] <= svd.singular_values[1] { 0 } else { 1 };
    (vt[(k, 0)], vt[(k, 1)])
}

/// Classifies `(L1, L2)` in `so(4)`. `tol` is relative to the larger
/// Hilbert-Schmidt norm of the two inputs.
pub fn classify_pair(l1: &SkewMatrix, l2: &SkewMatrix, tol: f64) -> Result<PairClassification> {
    require_dim4(l1)?;
    require_dim4(l2)?;
    let scale = l1.hs_norm().max(l2.hs_norm());
    let g11 = hs_inner(l1, l1)?;
    let g22 = hs_inner(l2, l2)?;
    let g12 = hs_inner(l1, l2)?;
    if scale == 0.0 || g11 * g22 - g12 * g12 <= (tol * scale * scale).powi(2) {
        return Err(Error::DependentMatrices);
    }
    let abs_tol = tol * scale;
    let p = projections(l1, l2)?;
    let (q_max, q_min) = singular_values(&p.q);
    let (h_max, h_min) = singular_values(&p.q_hat);

    let kind = if h_max <= abs_tol {
        PairKind::BothQ
    } else if q_max <= abs_tol {
        PairKind::BothQhat
    } else if q_min <= abs_tol && h_min <= abs_tol {
        PairKind::MixedSplit
    } else {
        PairKind::Generic
    };
    if matches!(kind, PairKind::BothQ | PairKind::BothQhat) {
        return Ok(PairClassification {
            kind,
            sigma_class: SigmaClass::SigmaInf,
            double_eigenvalue_angles: vec![],
        });
    }
    let angles = double_eigenvalue_angles(&p, abs_tol);
    let sigma_class = if angles.is_empty() { SigmaClass::NonCritical } else { SigmaClass::SigmaZero };
    Ok(PairClassification { kind, sigma_class, double_eigenvalue_angles: angles })
}

/// Angles minimizing `|q(theta)|` and `|q^(theta)|` over the pencil, each
/// with its antipode, in `[0, 2 pi)`. These are where `max sigma(L_theta)`
/// kinks or nearly kinks.
pub(crate) fn near_double_angles(l1: &SkewMatrix, l2: &SkewMatrix) -> Result<Vec<f64>> {
    let p = projections(l1, l2)?;
    let mut out = Vec::with_capacity(4);
    for m in [&p.q, &p.q_hat] {
        let (c, s) = null_direction(m);
        let t = s.atan2(c).rem_euclid(PI);
        out.push(t);
        out.push(t + PI);
    }
    Ok(out)
}

fn product_norm(p: &Projections, theta: f64) -> f64 {
    let c = nalgebra::Vector2::new(theta.cos(), theta.sin());
    (p.q * c).norm_squared() * (p.q_hat * c).norm_squared()
}

// Grid scan of |q(theta)|^2 |q^(theta)|^2 for local minima, refined by golden
// section; a minimum where either factor is below tol is a zero.
// A zero of either factor is a null direction of its 3x2 projection matrix,
// so accepted angles are snapped to the exact SVD null direction.
fn double_eigenvalue_angles(p: &Projections, abs_tol: f64) -> Vec<f64> {
    let h = TAU / ANGLE_GRID as f64;
    let vals: Vec<f64> = (0..ANGLE_GRID).map(|i| product_norm(p, i as f64 * h)).collect();
    let mut exact = Vec::new();
    for m in [&p.q, &p.q_hat] {
        let (c, s) = null_direction(m);
        let t = s.atan2(c).rem_euclid(PI);
        exact.push(t);
        exact.push(t + PI);
    }
    let mut out: Vec<f64> = Vec::new();
    for i in 0..ANGLE_GRID {
        let prev = vals[(i + ANGLE_GRID - 1) % ANGLE_GRID];
        let next = vals[(i + 1) % ANGLE_GRID];
        if !(vals[i] <= prev && vals[i] < next) {
            continue;
        }
        let center = i as f64 * h;
        let mut theta = golden_min(|t| product_norm(p, t), center - h, center + h).rem_euclid(TAU);
        if let Some(e) = exact.iter().find(|e| angle_dist(**e, theta) < 1e-5) {
            theta = e.rem_euclid(TAU);
        }
        let c = nalgebra::Vector2::new(theta.cos(), theta.sin());
        if (p.q * c).norm().min((p.q_hat * c).norm()) > abs_tol {
            continue;
        }
        if out.iter().all(|o| angle_dist(*o, theta) > 1e-9) {
            out.push(theta);
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

fn angle_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

pub(crate) fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::random_skew;
    use crate::skew::spectrum_moduli;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn b(x: QuatBasis) -> SkewMatrix {
        basis(x)
    }

    #[test]
    fn basis_is_orthonormal_and_ideals_commute() {
        let all: Vec<SkewMatrix> = q_basis().into_iter().chain(qhat_basis()).collect();
        for (p, x) in all.iter().enumerate() {
            for (q, y) in all.iter().enumerate() {
                let want = if p == q { 1.0 } else { 0.0 };
                assert_eq!(hs_inner(x, y).unwrap(), want);
            }
        }
        for x in q_basis() {
            for y in qhat_basis() {
                assert_eq!(commutator_check(&x, &y).unwrap(), 0.0);
            }
        }
        assert!((commutator_check(&b(QuatBasis::I), &b(QuatBasis::J)).unwrap() - 4.0).abs() < 1e-15);
        assert_eq!(commutator_check(&b(QuatBasis::J), &b(QuatBasis::KHat)).unwrap(), 0.0);
    }

    #[test]
    fn decompose_examples() {
        let d = decompose(&b(QuatBasis::I)).unwrap();
        assert_eq!(d.q, [1.0, 0.0, 0.0]);
        assert_eq!(d.q_hat, [0.0, 0.0, 0.0]);
        let d = decompose(&(&b(QuatBasis::I) + &b(QuatBasis::JHat).scaled(2.0))).unwrap();
        assert_eq!(d.q, [1.0, 0.0, 0.0]);
        assert_eq!(d.q_hat, [0.0, 2.0, 0.0]);
        assert!(decompose(&SkewMatrix::zeros(3)).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let l = random_skew(&mut rng, 4);
            assert!(decompose(&l).unwrap().reconstruct().max_abs_diff(&l) < 1e-12);
        }
    }

    #[test]
    fn eig_formula_examples() {
        assert_eq!(eig_moduli_quat(&b(QuatBasis::I)).unwrap(), (1.0, 1.0));
        assert_eq!(eig_moduli_quat(&(&b(QuatBasis::I) + &b(QuatBasis::IHat))).unwrap(), (2.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let l = random_skew(&mut rng, 4);
            let (a, c) = eig_moduli_quat(&l).unwrap();
            let s = spectrum_moduli(&l);
            assert!((a - s[0]).abs() < 1e-10 && (c - s[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn classify_examples() {
        let c = classify_pair(&b(QuatBasis::I), &b(QuatBasis::J), DEFAULT_CLASSIFY_TOL).unwrap();
        assert_eq!(c.kind, PairKind::BothQ);
        assert_eq!(c.sigma_class, SigmaClass::SigmaInf);
        let c = classify_pair(&b(QuatBasis::IHat), &b(QuatBasis::KHat), DEFAULT_CLASSIFY_TOL).unwrap();
        assert_eq!(c.kind, PairKind::BothQhat);

        let c = classify_pair(&b(QuatBasis::I), &b(QuatBasis::IHat), DEFAULT_CLASSIFY_TOL).unwrap();
        assert_eq!(c.kind, PairKind::MixedSplit);
        assert_eq!(c.sigma_class, SigmaClass::SigmaZero);
        let want = [0.0, PI / 2.0, PI, 1.5 * PI];
        assert_eq!(c.double_eigenvalue_angles.len(), 4);
        for (g, w) in c.double_eigenvalue_angles.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }

        let l2 = &b(QuatBasis::J) + &b(QuatBasis::KHat).scaled(0.3);
        let c = classify_pair(&b(QuatBasis::I), &l2, DEFAULT_CLASSIFY_TOL).unwrap();
        assert_eq!(c.kind, PairKind::Generic);
        assert!(!c.cut_is_conjugate());

        assert!(matches!(
            classify_pair(&b(QuatBasis::I), &b(QuatBasis::I).scaled(2.0), DEFAULT_CLASSIFY_TOL),
            Err(Error::DependentMatrices)
        ));
    }

    #[test]
    fn angles_match_analytic_zeros() {
        // ||q(theta)|| = |cos theta|, ||q^(theta)|| = |0.5 cos theta + sin theta|
        let l1 = &b(QuatBasis::I) + &b(QuatBasis::JHat).scaled(0.5);
        let l2 = b(QuatBasis::JHat);
        let c = classify_pair(&l1, &l2, DEFAULT_CLASSIFY_TOL).unwrap();
        assert_eq!(c.sigma_class, SigmaClass::SigmaZero);
        let t0 = (-0.5f64).atan().rem_euclid(PI);
        let mut want = vec![PI / 2.0, 1.5 * PI, t0, t0 + PI];
        want.sort_by(f64::total_cmp);
        assert_eq!(c.double_eigenvalue_angles.len(), 4);
        for (g, w) in c.double_eigenvalue_angles.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
        for t in &c.double_eigenvalue_angles {
            let lt = SkewMatrix::lin_comb(t.cos(), &l1, t.sin(), &l2).unwrap();
            let (_, small) = eig_moduli_quat(&lt).unwrap();
            let s = spectrum_moduli(&lt);
            assert!((s[0] - s[1]).abs() < 1e-9 || small < 1e-9);
        }
    }

    #[test]
    fn classification_is_recombination_invariant() {
        let pairs = [
            (b(QuatBasis::I), b(QuatBasis::J)),
            (b(QuatBasis::I), b(QuatBasis::IHat)),
            (b(QuatBasis::I), &b(QuatBasis::J) + &b(QuatBasis::KHat).scaled(0.3)),
        ];
        for (l1, l2) in pairs {
            let base = classify_pair(&l1, &l2, DEFAULT_CLASSIFY_TOL).unwrap();
            let m1 = SkewMatrix::lin_comb(2.0, &l1, -0.7, &l2).unwrap();
            let m2 = SkewMatrix::lin_comb(0.3, &l1, 1.1, &l2).unwrap();
            let other = classify_pair(&m1, &m2, DEFAULT_CLASSIFY_TOL).unwrap();
            assert_eq!(base.kind, other.kind);
            assert_eq!(base.sigma_class, other.sigma_class);
        }
    }

    #[test]
    fn random_pairs_are_generic_noncritical() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut noncritical = 0;
        for _ in 0..20 {
            let c = classify_pair(&random_skew(&mut rng, 4), &random_skew(&mut rng, 4), DEFAULT_CLASSIFY_TOL).unwrap();
            assert_eq!(c.kind, PairKind::Generic);
            if c.sigma_class == SigmaClass::NonCritical {
                noncritical += 1;
            }
        }
        assert_eq!(noncritical, 20);
    }
}
