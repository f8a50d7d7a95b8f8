//! The nilpotent model: structure matrices, covectors, normalization and the
//! rotation/conjugation that puts a covector direction into block form.

use crate::error::{Error, Result};
use crate::expmap::GeodesicPoint;
use crate::skew::{block_diagonalize, hs_inner, BlockDiagForm, SkewMatrix};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Tolerance for the orthonormality check of a normalized metric.
pub const NORMALIZED_TOL: f64 = 1e-10;
/// Skew tolerance applied to matrices read from JSON.
pub const JSON_SKEW_TOL: f64 = 1e-9;
const INDEPENDENCE_TOL: f64 = 1e-12;

/// Structure matrices `L_1, ..., L_k` of a 2-step nilpotent metric on
/// `R^m x R^k`, with dynamics `x' = u`, `y_h' = x^T L_h u / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSpec {
    l: Vec<SkewMatrix>,
    normalized: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    m: usize,
    #[serde(rename = "L")]
    l: Vec<Vec<Vec<f64>>>,
}

impl MetricSpec {
    /// Validates rank `m >= 3`, corank 1 or 2, equal sizes and independence.
    /// The normalized flag is set when the matrices are already orthonormal.
    pub fn new(l: Vec<SkewMatrix>) -> Result<Self> {
        let k = l.len();
        if !(1..=2).contains(&k) {
            return Err(Error::InvalidSpec(format!("corank must be 1 or 2, got {k}")));
        }
        let m = l[0].dim();
        if m < 3 {
            return Err(Error::InvalidSpec(format!("rank must be at least 3, got {m}")));
        }
        for x in &l {
            if x.dim() != m {
                return Err(Error::DimensionMismatch { expected: m, found: x.dim() });
            }
        }
        let gram = gram_matrix(&l);
        let scale = (0..k).map(|i| gram[(i, i)]).product::<f64>();
        if scale == 0.0 || gram.determinant() <= INDEPENDENCE_TOL * scale {
            return Err(Error::DependentMatrices);
        }
        let normalized = (&gram - DMatrix::<f64>::identity(k, k)).amax() <= NORMALIZED_TOL;
        Ok(Self { l, normalized })
    }

    pub fn m(&self) -> usize {
        self.l[0].dim()
    }

    pub fn k(&self) -> usize {
        self.l.len()
    }

    /// Topological dimension `m + k`.
    pub fn n(&self) -> usize {
        self.m() + self.k()
    }

    /// Hausdorff dimension `2n - m`.
    pub fn hausdorff_dimension(&self) -> usize {
        2 * self.n() - self.m()
    }

    pub fn matrices(&self) -> &[SkewMatrix] {
        &self.l
    }

    pub fn l(&self, h: usize) -> &SkewMatrix {
        &self.l[h]
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn gram(&self) -> DMatrix<f64> {
        gram_matrix(&self.l)
    }

    /// `sum_h r_h L_h`.
    pub fn combination(&self, r: &[f64]) -> Result<SkewMatrix> {
        if r.len() != self.k() {
            return Err(Error::DimensionMismatch { expected: self.k(), found: r.len() });
        }
        let mut acc = SkewMatrix::zeros(self.m());
        for (x, c) in self.l.iter().zip(r) {
            acc = &acc + &x.scaled(*c);
        }
        Ok(acc)
    }

    /// Gram-Schmidt under the Hilbert-Schmidt inner product.
    pub fn normalize(&self) -> Result<MetricSpec> {
        let mut out: Vec<SkewMatrix> = Vec::with_capacity(self.k());
        for x in &self.l {
            let mut v = x.clone();
            for _ in 0..2 {
                for e in &out {
                    let c = hs_inner(&v, e)?;
                    v = &v - &e.scaled(c);
                }
            }
            let n = hs_inner(&v, &v)?.sqrt();
            if n <= 1e-12 * x.hs_norm() || n == 0.0 {
                return Err(Error::DependentMatrices);
            }
            out.push(v.scaled(1.0 / n));
        }
        let mut s = MetricSpec::new(out)?;
        s.normalized = true;
        Ok(s)
    }

    /// Applies `L_h -> Q L_h Q^T` to every structure matrix.
    pub fn conjugated(&self, q: &DMatrix<f64>) -> Result<MetricSpec> {
        MetricSpec::new(self.l.iter().map(|x| x.congruent(q)).collect())
    }

    /// Replaces `(L_1, L_2)` by `(cos phi L_1 + sin phi L_2, -sin phi L_1 + cos phi L_2)`.
    pub fn rotated(&self, phi: f64) -> Result<MetricSpec> {
        if self.k() != 2 {
            return Err(Error::InvalidArgument("rotation needs corank 2".into()));
        }
        let (s, c) = phi.sin_cos();
        MetricSpec::new(vec![
            SkewMatrix::lin_comb(c, &self.l[0], s, &self.l[1])?,
            SkewMatrix::lin_comb(-s, &self.l[0], c, &self.l[1])?,
        ])
    }

    pub fn scaled(&self, s: f64) -> Result<MetricSpec> {
        MetricSpec::new(self.l.iter().map(|x| x.scaled(s)).collect())
    }

    /// Reads `{"m": int, "L": [matrix, ...]}` with row-major matrices.
    pub fn from_json(text: &str) -> Result<MetricSpec> {
        let f: SpecFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut l = Vec::with_capacity(f.l.len());
        for (idx, rows) in f.l.iter().enumerate() {
            if rows.len() != f.m || rows.iter().any(|r| r.len() != f.m) {
                return Err(Error::Parse(format!("matrix {idx} is not {m}x{m}", m = f.m)));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            l.push(SkewMatrix::with_tolerance(DMatrix::from_row_slice(f.m, f.m, &flat), JSON_SKEW_TOL)?);
        }
        if l.is_empty() {
            return Err(Error::Parse("no structure matrices".into()));
        }
        MetricSpec::new(l)
    }

    pub fn to_json(&self) -> String {
        let m = self.m();
        let l = self
            .l
            .iter()
            .map(|x| (0..m).map(|i| (0..m).map(|j| x.matrix()[(i, j)]).collect()).collect())
            .collect();
        serde_json::to_string(&SpecFile { m, l }).expect("plain data serializes")
    }
}

fn gram_matrix(l: &[SkewMatrix]) -> DMatrix<f64> {
    DMatrix::from_fn(l.len(), l.len(), |i, j| hs_inner(&l[i], &l[j]).expect("equal dims"))
}

/// Initial covector `(u0, r)` of a geodesic from the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct Covector {
    pub u0: DVector<f64>,
    pub r: DVector<f64>,
}

impl Covector {
    pub fn new(u0: DVector<f64>, r: DVector<f64>) -> Self {
        Self { u0, r }
    }

    pub fn from_slices(u0: &[f64], r: &[f64]) -> Self {
        Self { u0: DVector::from_column_slice(u0), r: DVector::from_column_slice(r) }
    }

    pub fn r_norm(&self) -> f64 {
        self.r.norm()
    }

    /// `(s u0, s r)`.
    pub fn scaled(&self, s: f64) -> Covector {
        Covector { u0: &self.u0 * s, r: &self.r * s }
    }

    /// Whether the geodesic is parametrized by arclength.
    pub fn is_unit(&self, tol: f64) -> bool {
        (self.u0.norm() - 1.0).abs() <= tol
    }

    pub(crate) fn check(&self, spec: &MetricSpec) -> Result<()> {
        if self.u0.len() != spec.m() {
            return Err(Error::DimensionMismatch { expected: spec.m(), found: self.u0.len() });
        }
        if self.r.len() != spec.k() {
            return Err(Error::DimensionMismatch { expected: spec.k(), found: self.r.len() });
        }
        Ok(())
    }
}

/// The frame in which `r = (|r|, 0)` and the direction `L_theta` is block diagonal.
#[derive(Clone, Debug)]
pub struct ReducedFrame {
    pub theta: f64,
    pub r_mod: f64,
    pub l_theta: SkewMatrix,
    pub l_theta_tilde: SkewMatrix,
    pub block: BlockDiagForm,
    /// `diag(M, R_theta)`, acting on points `(x, y)`.
    pub omega_map: DMatrix<f64>,
}

impl ReducedFrame {
    /// `(M L_theta M^T, M L~_theta M^T)`; the first matrix is stored in exact block form.
    pub fn reduced_spec(&self) -> Result<MetricSpec> {
        let b = SkewMatrix::new(self.block.block_matrix())?;
        let t = self.l_theta_tilde.congruent(&self.block.conjugator);
        MetricSpec::new(vec![b, t])
    }

    /// `(M u0, (|r|, 0))`.
    pub fn reduce_covector(&self, u0: &DVector<f64>) -> Covector {
        Covector::new(&self.block.conjugator * u0, DVector::from_vec(vec![self.r_mod, 0.0]))
    }

    /// `Omega (x, y)`.
    pub fn apply(&self, p: &GeodesicPoint) -> GeodesicPoint {
        let v = &self.omega_map * p.stacked();
        GeodesicPoint::from_stacked(&v, p.x.len(), p.t)
    }

    /// `Omega^T (x, y)`, mapping reduced-frame points back.
    pub fn unapply(&self, p: &GeodesicPoint) -> GeodesicPoint {
        let v = self.omega_map.transpose() * p.stacked();
        GeodesicPoint::from_stacked(&v, p.x.len(), p.t)
    }
}

/// Gram-Schmidt normalization (free function form).
pub fn normalize(spec: &MetricSpec) -> Result<MetricSpec> {
    spec.normalize()
}

/// Frame reduction for a corank-2 metric and nonzero `r`.
pub fn reduce_frame(spec: &MetricSpec, r: &[f64]) -> Result<ReducedFrame> {
    if spec.k() != 2 {
        return Err(Error::InvalidArgument("frame reduction needs corank 2".into()));
    }
    if r.len() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: r.len() });
    }
    let r_mod = r[0].hypot(r[1]);
    if r_mod == 0.0 {
        return Err(Error::ZeroVertical);
    }
    let theta = r[1].atan2(r[0]);
    let (s, c) = theta.sin_cos();
    let l_theta = SkewMatrix::lin_comb(c, spec.l(0), s, spec.l(1))?;
    let l_theta_tilde = SkewMatrix::lin_comb(-s, spec.l(0), c, spec.l(1))?;
    let block = block_diagonalize(&l_theta);
    let m = spec.m();
    let mut omega_map = DMatrix::zeros(m + 2, m + 2);
    omega_map.view_mut((0, 0), (m, m)).copy_from(&block.conjugator);
    omega_map[(m, m)] = c;
    omega_map[(m, m + 1)] = s;
    omega_map[(m + 1, m)] = -s;
    omega_map[(m + 1, m + 1)] = c;
    Ok(ReducedFrame { theta, r_mod, l_theta, l_theta_tilde, block, omega_map })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quaternion::{basis, QuatBasis};
    use crate::sampling::random_spec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn qb(b: QuatBasis) -> SkewMatrix {
        basis(b)
    }

    #[test]
    fn validation() {
        assert!(matches!(
            MetricSpec::new(vec![qb(QuatBasis::I), qb(QuatBasis::I).scaled(-2.0)]),
            Err(Error::DependentMatrices)
        ));
        assert!(MetricSpec::new(vec![SkewMatrix::zeros(2)]).is_err());
        assert!(MetricSpec::new(vec![qb(QuatBasis::I), SkewMatrix::zeros(3)]).is_err());
        assert!(MetricSpec::new(vec![qb(QuatBasis::I); 3]).is_err());
        let s = MetricSpec::new(vec![qb(QuatBasis::I), qb(QuatBasis::IHat)]).unwrap();
        assert!(s.is_normalized());
        assert_eq!((s.m(), s.k(), s.n(), s.hausdorff_dimension()), (4, 2, 6, 8));
    }

    #[test]
    fn normalize_examples() {
        let s = MetricSpec::new(vec![qb(QuatBasis::I), qb(QuatBasis::IHat)]).unwrap();
        assert_eq!(s.normalize().unwrap().matrices(), s.matrices());
        let s = MetricSpec::new(vec![qb(QuatBasis::I).scaled(2.0), &qb(QuatBasis::I) + &qb(QuatBasis::JHat)]).unwrap();
        assert!(!s.is_normalized());
        let n = s.normalize().unwrap();
        assert!(n.l(0).max_abs_diff(&qb(QuatBasis::I)) < 1e-15);
        assert!(n.l(1).max_abs_diff(&qb(QuatBasis::JHat)) < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in 3..7 {
            let s = random_spec(&mut rng, m, 2, false);
            let n = s.normalize().unwrap();
            assert!((n.gram() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
            let again = n.normalize().unwrap();
            assert!(again.l(0).max_abs_diff(n.l(0)) < 1e-14 && again.l(1).max_abs_diff(n.l(1)) < 1e-14);
        }
    }

    #[test]
    fn json_roundtrip_and_rejection() {
        let s = MetricSpec::new(vec![qb(QuatBasis::I), qb(QuatBasis::KHat)]).unwrap();
        let back = MetricSpec::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        let bad = r#"{"m": 3, "L": [[[0,1,0],[-1,0,0],[0,0,0.1]]]}"#;
        assert!(matches!(MetricSpec::from_json(bad), Err(Error::NotSkew { .. })));
        let near = r#"{"m": 3, "L": [[[0,1,0],[-1.0000000001,0,0],[0,0,0]], [[0,0,1],[0,0,0],[-1,0,0]]]}"#;
        assert!(MetricSpec::from_json(near).is_ok());
        assert!(MetricSpec::from_json(r#"{"m": 3, "L": [], "extra": 1}"#).is_err());
        assert!(MetricSpec::from_json(r#"{"m": 3, "L": [[[0,1],[-1,0]]]}"#).is_err());
    }

    #[test]
    fn reduce_frame_examples() {
        let s = MetricSpec::new(vec![qb(QuatBasis::I), qb(QuatBasis::JHat)]).unwrap();
        let f = reduce_frame(&s, &[2.0, 0.0]).unwrap();
        assert_eq!(f.theta, 0.0);
        assert_eq!(f.r_mod, 2.0);
        assert_eq!(&f.l_theta, s.l(0));
        let f = reduce_frame(&s, &[0.0, 1.0]).unwrap();
        assert!((f.theta - PI / 2.0).abs() < 1e-15);
        assert!(f.l_theta.max_abs_diff(s.l(1)) < 1e-15);
        assert!(f.l_theta_tilde.max_abs_diff(&-s.l(0)) < 1e-15);
        assert!(matches!(reduce_frame(&s, &[0.0, 0.0]), Err(Error::ZeroVertical)));
        let o = &f.omega_map * f.omega_map.transpose();
        assert!((o - DMatrix::<f64>::identity(6, 6)).amax() < 1e-12);
    }

    #[test]
    fn reduce_frame_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_spec(&mut rng, 5, 2, true);
        let a = reduce_frame(&s, &[0.3, -0.7]).unwrap();
        let b = reduce_frame(&s, &[0.9, -2.1]).unwrap();
        assert!((b.r_mod - 3.0 * a.r_mod).abs() < 1e-14);
        assert!((b.theta - a.theta).abs() < 1e-15);
        assert!(b.l_theta.max_abs_diff(&a.l_theta) < 1e-15);
    }
}
