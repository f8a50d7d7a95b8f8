//! Skew-symmetric matrices at small sizes: inner product, real block form,
//! exponential and the kernel `M_A(t) = int_0^t exp(sA) ds`.

use crate::error::{Error, Result};
use crate::special::sinc;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use std::ops::{Add, Mul, Neg, Sub};

/// Construction tolerance on `|L + L^T|`, relative to `max(1, max |L_ij|)`.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Tolerance used when checking orthogonality of conjugators.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

// Eigenvalues of -L^2 closer than this (relative) are treated as one cluster.
const CLUSTER_TOL: f64 = 1e-10;
// Moduli below this multiple of the Frobenius norm are zero.
const ZERO_MODULUS_TOL: f64 = 1e-13;

/// A real skew-symmetric square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SkewMatrix {
    entries: DMatrix<f64>,
}

impl SkewMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(entries, SYMMETRY_TOL)
    }

    /// Accepts `entries` if it is skew within `tol` (relative to its largest
    /// entry, floored at one) and stores the exact skew part.
    pub fn with_tolerance(entries: DMatrix<f64>, tol: f64) -> Result<Self> {
        let (rows, cols) = entries.shape();
        if rows != cols {
            return Err(Error::NotSquare { rows, cols });
        }
        if rows == 0 {
            return Err(Error::InvalidArgument("empty matrix".into()));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite matrix entry".into()));
        }
        let scale = entries.amax().max(1.0);
        let asymmetry = (&entries + entries.transpose()).amax();
        if asymmetry > tol * scale {
            return Err(Error::NotSkew { asymmetry, tolerance: tol });
        }
        let entries = (&entries - entries.transpose()) * 0.5;
        Ok(Self { entries })
    }

    pub fn from_row_slice(dim: usize, data: &[f64]) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, found: data.len() });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, data))
    }

    pub fn zeros(dim: usize) -> Self {
        Self { entries: DMatrix::zeros(dim, dim) }
    }

    /// Builds the matrix from its strictly upper triangular entries, row by row.
    pub fn from_upper(dim: usize, upper: &[f64]) -> Result<Self> {
        let need = dim * (dim.saturating_sub(1)) / 2;
        if upper.len() != need {
            return Err(Error::DimensionMismatch { expected: need, found: upper.len() });
        }
        let mut m = DMatrix::zeros(dim, dim);
        let mut it = upper.iter();
        for i in 0..dim {
            for j in (i + 1)..dim {
                let v = *it.next().unwrap();
                m[(i, j)] = v;
                m[(j, i)] = -v;
            }
        }
        Ok(Self { entries: m })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.norm()
    }

    /// Norm induced by [`hs_inner`].
    pub fn hs_norm(&self) -> f64 {
        self.frobenius_norm() / (self.dim() as f64).sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { entries: &self.entries * s }
    }

    /// `a x + b y`.
    pub fn lin_comb(a: f64, x: &SkewMatrix, b: f64, y: &SkewMatrix) -> Result<Self> {
        check_dims(x, y)?;
        Ok(Self { entries: &x.entries * a + &y.entries * b })
    }

    /// `Q L Q^T` for a square `Q`; skew for any `Q`.
    pub fn congruent(&self, q: &DMatrix<f64>) -> Self {
        let c = q * &self.entries * q.transpose();
        Self { entries: (&c - c.transpose()) * 0.5 }
    }

    pub fn commutator(&self, other: &SkewMatrix) -> DMatrix<f64> {
        &self.entries * &other.entries - &other.entries * &self.entries
    }

    /// Largest absolute deviation from a reference matrix.
    pub fn max_abs_diff(&self, other: &SkewMatrix) -> f64 {
        (&self.entries - &other.entries).amax()
    }
}

fn check_dims(a: &SkewMatrix, b: &SkewMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(())
}

impl Add for &SkewMatrix {
    type Output = SkewMatrix;
    fn add(self, rhs: &SkewMatrix) -> SkewMatrix {
        SkewMatrix { entries: &self.entries + &rhs.entries }
    }
}

impl Sub for &SkewMatrix {
    type Output = SkewMatrix;
    fn sub(self, rhs: &SkewMatrix) -> SkewMatrix {
        SkewMatrix { entries: &self.entries - &rhs.entries }
    }
}

impl Neg for &SkewMatrix {
    type Output = SkewMatrix;
    fn neg(self) -> SkewMatrix {
        SkewMatrix { entries: -&self.entries }
    }
}

impl Mul<f64> for &SkewMatrix {
    type Output = SkewMatrix;
    fn mul(self, rhs: f64) -> SkewMatrix {
        self.scaled(rhs)
    }
}

/// Hilbert-Schmidt inner product `(1/m) tr(L1^T L2)`.
pub fn hs_inner(l1: &SkewMatrix, l2: &SkewMatrix) -> Result<f64> {
    check_dims(l1, l2)?;
    Ok(l1.entries.dot(&l2.entries) / l1.dim() as f64)
}

/// Orthogonal conjugation of a skew matrix into 2x2 blocks `[[0, a], [-a, 0]]`.
///
/// The rows of `conjugator` are the new basis, so `conjugator * L * conjugator^T`
/// is the block form. Moduli are descending; an odd dimension leaves a trailing
/// 1x1 zero block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDiagForm {
    pub conjugator: DMatrix<f64>,
    pub moduli: Vec<f64>,
    pub has_zero_row: bool,
}

impl BlockDiagForm {
    pub fn dim(&self) -> usize {
        self.conjugator.nrows()
    }

    /// The canonical block matrix `M L M^T`.
    pub fn block_matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.dim(), self.dim());
        for (i, a) in self.moduli.iter().enumerate() {
            b[(2 * i, 2 * i + 1)] = *a;
            b[(2 * i + 1, 2 * i)] = -*a;
        }
        b
    }

    /// `M^T B M`, which recovers the source matrix.
    pub fn reconstruct(&self) -> SkewMatrix {
        let b = self.block_matrix();
        let c = self.conjugator.transpose() * b * &self.conjugator;
        SkewMatrix { entries: (&c - c.transpose()) * 0.5 }
    }

    /// Same basis for `s L`: moduli times `|s|`; for `s < 0` the two rows of
    /// every block are swapped to keep the `+a` convention.
    pub fn scaled(&self, s: f64) -> BlockDiagForm {
        let mut conj = self.conjugator.clone();
        if s < 0.0 {
            for i in 0..self.moduli.len() {
                conj.swap_rows(2 * i, 2 * i + 1);
            }
        }
        BlockDiagForm {
            conjugator: conj,
            moduli: self.moduli.iter().map(|a| a * s.abs()).collect(),
            has_zero_row: self.has_zero_row,
        }
    }

    /// `exp(tL)` assembled from plane rotations.
    pub fn exp(&self, t: f64) -> DMatrix<f64> {
        let mut d = DMatrix::identity(self.dim(), self.dim());
        for (i, a) in self.moduli.iter().enumerate() {
            set_block(&mut d, i, rotation(a * t), 1.0);
        }
        self.unconjugate(&d)
    }

    /// `M_L(t) = int_0^t exp(sL) ds`, blockwise `t sinc(a t / 2) rot(a t / 2)`.
    pub fn m_a(&self, t: f64) -> DMatrix<f64> {
        let mut d = DMatrix::identity(self.dim(), self.dim()) * t;
        for (i, a) in self.moduli.iter().enumerate() {
            set_block(&mut d, i, rotation(0.5 * a * t), t * sinc(0.5 * a * t));
        }
        self.unconjugate(&d)
    }

    fn unconjugate(&self, d: &DMatrix<f64>) -> DMatrix<f64> {
        self.conjugator.transpose() * d * &self.conjugator
    }
}

/// Rotation `[[cos phi, sin phi], [-sin phi, cos phi]] = exp(phi [[0,1],[-1,0]])`.
pub fn rotation(phi: f64) -> [[f64; 2]; 2] {
    let (s, c) = phi.sin_cos();
    [[c, s], [-s, c]]
}

fn set_block(d: &mut DMatrix<f64>, i: usize, rot: [[f64; 2]; 2], scale: f64) {
    for p in 0..2 {
        for q in 0..2 {
            d[(2 * i + p, 2 * i + q)] = scale * rot[p][q];
        }
    }
}

/// Real block form of `l`.
///
/// Basis vectors are chosen deterministically: for each cluster of equal
/// moduli (largest first) the standard basis vector with the largest
/// projection onto the cluster's invariant subspace (smallest index on ties)
/// is projected and normalized to give `e1`, and `e2 = -L e1 / a`.
pub fn block_diagonalize(l: &SkewMatrix) -> BlockDiagForm {
    let m = l.dim();
    let nblocks = m / 2;
    let lm = l.matrix();
    let scale = l.frobenius_norm();
    let zero_tol = ZERO_MODULUS_TOL * scale.max(f64::MIN_POSITIVE);
    let s = {
        let s = -(lm * lm);
        (&s + s.transpose()) * 0.5
    };
    let mut remaining = DMatrix::<f64>::identity(m, m);
    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(m);
    let mut moduli = Vec::with_capacity(nblocks);

    if scale > 0.0 {
        for _ in 0..nblocks {
            let ps = &remaining * &s * &remaining;
            let ps = (&ps + ps.transpose()) * 0.5;
            let eig = SymmetricEigen::new(ps);
            let top = eig.eigenvalues.max();
            if top.max(0.0).sqrt() <= zero_tol {
                break;
            }
            let mut cluster = DMatrix::<f64>::zeros(m, m);
            for (idx, lam) in eig.eigenvalues.iter().enumerate() {
                if *lam >= top * (1.0 - CLUSTER_TOL) {
                    let v = eig.eigenvectors.column(idx);
                    cluster += v * v.transpose();
                }
            }
            let j = pick_column(&cluster);
            let mut v = &remaining * cluster.column(j);
            orthonormalize(&mut v, &rows);
            let lv = lm * &v;
            let a = lv.norm();
            let mut w = -lv / a;
            let mut with_v = rows.clone();
            with_v.push(v.clone());
            orthonormalize(&mut w, &with_v);
            let modulus = v.dot(&(lm * &w));
            remaining -= &v * v.transpose() + &w * w.transpose();
            rows.push(v);
            rows.push(w);
            moduli.push(modulus.max(0.0));
        }
    }
    // Kernel: complete the basis greedily from the remaining projector.
    while rows.len() < m {
        let j = pick_column(&remaining);
        let mut v = remaining.column(j).into_owned();
        orthonormalize(&mut v, &rows);
        remaining -= &v * v.transpose();
        rows.push(v);
    }
    moduli.resize(nblocks, 0.0);
    let mut conjugator = DMatrix::zeros(m, m);
    for (i, r) in rows.iter().enumerate() {
        conjugator.set_row(i, &r.transpose());
    }
    BlockDiagForm { conjugator, moduli, has_zero_row: m % 2 == 1 }
}

fn pick_column(p: &DMatrix<f64>) -> usize {
    let diag: Vec<f64> = (0..p.nrows()).map(|i| p[(i, i)]).collect();
    let best = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    diag.iter().position(|d| *d >= best * (1.0 - 1e-9)).unwrap_or(0)
}

fn orthonormalize(v: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(v);
            v.axpy(-c, b, 1.0);
        }
    }
    let n = v.norm();
    *v /= n;
}

/// Descending eigenvalue moduli, `floor(m/2)` entries.
pub fn spectrum_moduli(l: &SkewMatrix) -> Vec<f64> {
    block_diagonalize(l).moduli
}

/// `exp(tL)`.
pub fn skew_exp(l: &SkewMatrix, t: f64) -> DMatrix<f64> {
    block_diagonalize(l).exp(t)
}

/// `M_A(t) = A^{-1}(exp(tA) - I)`, evaluated blockwise so singular `A` is fine.
pub fn m_a_matrix(a: &SkewMatrix, t: f64) -> DMatrix<f64> {
    block_diagonalize(a).m_a(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quaternion::{basis, QuatBasis};
    use crate::sampling::random_skew;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn block_diag(a: f64, b: f64) -> SkewMatrix {
        SkewMatrix::from_upper(4, &[a, 0.0, 0.0, 0.0, 0.0, b]).unwrap()
    }

    fn is_block_form(f: &BlockDiagForm, l: &SkewMatrix, tol: f64) -> bool {
        let c = &f.conjugator * l.matrix() * f.conjugator.transpose();
        (c - f.block_matrix()).amax() <= tol
    }

    #[test]
    fn rejects_non_skew() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0 + 1e-6, 0.0]);
        assert!(matches!(SkewMatrix::new(m), Err(Error::NotSkew { .. })));
        let m = DMatrix::from_row_slice(2, 3, &[0.0; 6]);
        assert!(matches!(SkewMatrix::new(m), Err(Error::NotSquare { .. })));
    }

    #[test]
    fn hs_inner_examples() {
        let i = basis(QuatBasis::I);
        let jh = basis(QuatBasis::JHat);
        assert!((hs_inner(&i, &i).unwrap() - 1.0).abs() < 1e-15);
        assert!(hs_inner(&i, &jh).unwrap().abs() < 1e-15);
        assert!((hs_inner(&i.scaled(2.0), &i.scaled(3.0)).unwrap() - 6.0).abs() < 1e-14);
        assert!(hs_inner(&i, &SkewMatrix::zeros(3)).is_err());
    }

    #[test]
    fn block_diagonal_input_gives_identity() {
        let l = block_diag(2.0, 1.0);
        let f = block_diagonalize(&l);
        assert_eq!(f.moduli, vec![2.0, 1.0]);
        assert!((&f.conjugator - DMatrix::<f64>::identity(4, 4)).amax() < 1e-14);
        let f = block_diagonalize(&block_diag(1.0, 2.0));
        assert!((f.moduli[0] - 2.0).abs() < 1e-14 && (f.moduli[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn quaternion_moduli() {
        let i = basis(QuatBasis::I);
        let f = block_diagonalize(&i);
        assert!((f.moduli[0] - 1.0).abs() < 1e-14 && (f.moduli[1] - 1.0).abs() < 1e-14);
        assert!(is_block_form(&f, &i, 1e-14));
        let s = spectrum_moduli(&(&i + &basis(QuatBasis::IHat)));
        assert!((s[0] - 2.0).abs() < 1e-14 && s[1].abs() < 1e-14);
        assert_eq!(spectrum_moduli(&SkewMatrix::zeros(5)), vec![0.0, 0.0]);
    }

    #[test]
    fn block_form_positive_convention_and_odd_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in 2..8 {
            for _ in 0..20 {
                let l = random_skew(&mut rng, m);
                let f = block_diagonalize(&l);
                assert_eq!(f.moduli.len(), m / 2);
                assert_eq!(f.has_zero_row, m % 2 == 1);
                assert!(f.moduli.windows(2).all(|w| w[0] >= w[1]));
                assert!(is_block_form(&f, &l, 1e-12 * l.frobenius_norm().max(1.0)));
                let o = &f.conjugator * f.conjugator.transpose();
                assert!((o - DMatrix::<f64>::identity(m, m)).amax() < ORTHOGONALITY_TOL);
            }
        }
    }

    #[test]
    fn moduli_match_general_eigensolver() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for m in 3..7 {
            let l = random_skew(&mut rng, m);
            let mut ev: Vec<f64> = l.matrix().complex_eigenvalues().iter().map(|c| c.im.abs()).collect();
            ev.sort_by(|a, b| b.total_cmp(a));
            let got = spectrum_moduli(&l);
            for (i, a) in got.iter().enumerate() {
                assert!((a - ev[2 * i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn exp_examples() {
        let i = basis(QuatBasis::I);
        assert!((skew_exp(&i, 0.0) - DMatrix::<f64>::identity(4, 4)).amax() < 1e-15);
        // exp(pi/2 i) = i since i^2 = -1
        assert!((skew_exp(&i, PI / 2.0) - i.matrix()).amax() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in 2..7 {
            let l = random_skew(&mut rng, m);
            let t = 1.7;
            let oracle = (l.matrix() * t).exp();
            assert!((skew_exp(&l, t) - oracle).amax() < 1e-10);
        }
    }

    #[test]
    fn m_a_examples() {
        let a = 1.5;
        let l = block_diag(a, 0.0);
        let z = m_a_matrix(&l, 2.0 * PI / a);
        assert!(z.view((0, 0), (2, 2)).amax() < 1e-15);
        assert!((z.view((2, 2), (2, 2)) - DMatrix::<f64>::identity(2, 2) * (2.0 * PI / a)).amax() < 1e-14);
        let h = m_a_matrix(&l, PI / a);
        let want = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]) * (2.0 / a);
        assert!((h.view((0, 0), (2, 2)) - want).amax() < 1e-15);
    }

    fn quad_m_a(l: &SkewMatrix, t: f64) -> DMatrix<f64> {
        let rule = crate::quadrature::gauss_legendre(40);
        let panels = 40;
        let mut acc = DMatrix::zeros(l.dim(), l.dim());
        for p in 0..panels {
            let sub = rule.mapped(t * p as f64 / panels as f64, t * (p + 1) as f64 / panels as f64);
            for (s, w) in sub.nodes.iter().zip(&sub.weights) {
                acc += (l.matrix() * *s).exp() * *w;
            }
        }
        acc
    }

    #[test]
    fn m_a_matches_quadrature_including_singular() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for m in [3, 4, 5] {
            let l = random_skew(&mut rng, m).scaled(2.0);
            let t = 7.3;
            assert!((m_a_matrix(&l, t) - quad_m_a(&l, t)).amax() < 1e-8);
        }
        let sing = &basis(QuatBasis::I) + &basis(QuatBasis::IHat);
        assert!((m_a_matrix(&sing, 9.0) - quad_m_a(&sing, 9.0)).amax() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn exp_is_orthogonal_and_invertible(seed in 0u64..1_000_000, m in 2usize..7, t in -10.0f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = random_skew(&mut rng, m);
            let e = skew_exp(&l, t);
            let id = DMatrix::<f64>::identity(m, m);
            prop_assert!((&e * e.transpose() - &id).amax() < 1e-10);
            prop_assert!((&e * skew_exp(&l, -t) - &id).amax() < 1e-10);
        }

        #[test]
        fn roundtrip_reconstructs(seed in 0u64..1_000_000, m in 2usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = random_skew(&mut rng, m);
            let f = block_diagonalize(&l);
            prop_assert!((f.reconstruct().matrix() - l.matrix()).norm() < 1e-9);
        }

        #[test]
        fn moduli_are_congruence_invariant(seed in 0u64..1_000_000, m in 2usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = random_skew(&mut rng, m);
            let q = skew_exp(&random_skew(&mut rng, m), 1.0);
            let a = spectrum_moduli(&l);
            let b = spectrum_moduli(&l.congruent(&q));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
