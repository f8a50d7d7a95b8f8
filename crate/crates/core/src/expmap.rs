//! Geodesics from the origin.
//!
//! With `A = sum_h r_h L_h` the horizontal velocity is `u(t) = exp(tA) u0`, so
//! `x(t) = M_A(t) u0` and `y_h(t) = u0^T G_h(t) u0` where
//! `G_h(t) = 1/2 int_0^t M_A(s)^T L_h exp(sA) ds`. Both are evaluated in the
//! complex eigenbasis of `A` through the scalar kernels in [`crate::special`],
//! which keeps zero moduli (singular `A`) exact.

use crate::error::{Error, Result};
use crate::model::{Covector, MetricSpec};
use crate::skew::{block_diagonalize, BlockDiagForm, SkewMatrix};
use crate::special::double_phase;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Sign `s` in `C(t) = s * 1/2 int_0^t (exp(-sA) - I) A^{-1} A~ exp(sA) ds`.
/// Fixed to `-1` by agreement with the ODE for `y' = x^T L u / 2`.
pub const C_SIGN: f64 = -1.0;

/// Sign of the linear term in the reduced-frame first vertical coordinate
/// `y_1(t) = (<M_A(t) u0, u0> + s t |u0|^2) / (2r)`; fixed to `-1` by the ODE.
pub const Y1_LINEAR_SIGN: f64 = -1.0;

type CMatrix = DMatrix<Complex64>;

/// A point `(x, y)` reached at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeodesicPoint {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub t: f64,
}

impl GeodesicPoint {
    pub fn origin(m: usize, k: usize) -> Self {
        Self { x: DVector::zeros(m), y: DVector::zeros(k), t: 0.0 }
    }

    /// `(x, y)` as one vector.
    pub fn stacked(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.x.len() + self.y.len());
        v.rows_mut(0, self.x.len()).copy_from(&self.x);
        v.rows_mut(self.x.len(), self.y.len()).copy_from(&self.y);
        v
    }

    pub fn from_stacked(v: &DVector<f64>, m: usize, t: f64) -> Self {
        Self { x: v.rows(0, m).into_owned(), y: v.rows(m, v.len() - m).into_owned(), t }
    }

    /// Largest coordinate difference.
    pub fn sup_distance(&self, other: &GeodesicPoint) -> f64 {
        (self.stacked() - other.stacked()).amax()
    }

    /// Euclidean distance in `(x, y)`.
    pub fn distance(&self, other: &GeodesicPoint) -> f64 {
        (self.stacked() - other.stacked()).norm()
    }
}

/// Eigen-decomposition `A = V diag(i lambda) V^*` of a real skew matrix.
#[derive(Clone, Debug)]
pub(crate) struct Spectral {
    vecs: CMatrix,
    vecs_adj: CMatrix,
    lambda: Vec<f64>,
}

impl Spectral {
    pub fn from_block(f: &BlockDiagForm) -> Self {
        let m = f.dim();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut vecs = CMatrix::zeros(m, m);
        let mut lambda = vec![0.0; m];
        for (i, a) in f.moduli.iter().enumerate() {
            for row in 0..m {
                let e1 = f.conjugator[(2 * i, row)];
                let e2 = f.conjugator[(2 * i + 1, row)];
                vecs[(row, 2 * i)] = Complex64::new(h * e1, h * e2);
                vecs[(row, 2 * i + 1)] = Complex64::new(h * e1, -h * e2);
            }
            lambda[2 * i] = *a;
            lambda[2 * i + 1] = -*a;
        }
        if f.has_zero_row {
            for row in 0..m {
                vecs[(row, m - 1)] = Complex64::new(f.conjugator[(m - 1, row)], 0.0);
            }
        }
        let vecs_adj = vecs.adjoint();
        Self { vecs, vecs_adj, lambda }
    }

    pub fn of(a: &SkewMatrix) -> Self {
        Self::from_block(&block_diagonalize(a))
    }

    /// Same eigenvectors for `s A`.
    pub fn scaled(&self, s: f64) -> Self {
        Self { vecs: self.vecs.clone(), vecs_adj: self.vecs_adj.clone(), lambda: self.lambda.iter().map(|l| l * s).collect() }
    }

    /// `V^* L V`.
    pub fn project(&self, l: &DMatrix<f64>) -> CMatrix {
        &self.vecs_adj * l.map(|v| Complex64::new(v, 0.0)) * &self.vecs
    }

    fn back(&self, inner: &CMatrix) -> DMatrix<f64> {
        (&self.vecs * inner * &self.vecs_adj).map(|c| c.re)
    }

    /// `1/2 int_0^t M_A(s)^T L exp(sA) ds` given `lt = V^* L V`.
    pub fn kernel(&self, lt: &CMatrix, t: f64) -> DMatrix<f64> {
        let scale = -C_SIGN * 0.5 * t * t;
        let inner = CMatrix::from_fn(lt.nrows(), lt.ncols(), |p, q| {
            lt[(p, q)] * double_phase(-self.lambda[p] * t, self.lambda[q] * t) * scale
        });
        self.back(&inner)
    }

    /// Directional derivative of `A -> M_A(t)` along `B`, given `bt = V^* B V`.
    pub fn frechet_m(&self, bt: &CMatrix, t: f64) -> DMatrix<f64> {
        let inner = CMatrix::from_fn(bt.nrows(), bt.ncols(), |p, q| {
            let (lp, lq) = (self.lambda[p], self.lambda[q]);
            bt[(p, q)] * double_phase((lq - lp) * t, lp * t) * (t * t)
        });
        self.back(&inner)
    }
}

/// Precomputed geodesic flow for a fixed vertical covector `r`.
#[derive(Clone, Debug)]
pub(crate) struct Flow {
    pub block: BlockDiagForm,
    pub spectral: Spectral,
    pub projected: Vec<CMatrix>,
}

impl Flow {
    pub fn new(spec: &MetricSpec, r: &[f64]) -> Result<Self> {
        let a = spec.combination(r)?;
        Ok(Self::from_generator(spec, &a))
    }

    pub fn from_generator(spec: &MetricSpec, a: &SkewMatrix) -> Self {
        let block = block_diagonalize(a);
        let spectral = Spectral::from_block(&block);
        let projected = spec.matrices().iter().map(|l| spectral.project(l.matrix())).collect();
        Self { block, spectral, projected }
    }

    /// Flow of `s A`, reusing the eigenvectors; `s > 0`.
    pub fn scaled(&self, s: f64) -> Self {
        Self { block: self.block.scaled(s), spectral: self.spectral.scaled(s), projected: self.projected.clone() }
    }

    /// `(M_A(t), [G_h(t)])`.
    pub fn matrices(&self, t: f64) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let g = self.projected.iter().map(|lt| self.spectral.kernel(lt, t)).collect();
        (self.block.m_a(t), g)
    }

    pub fn endpoint(&self, u0: &DVector<f64>, t: f64) -> GeodesicPoint {
        let (m, g) = self.matrices(t);
        endpoint_from(&m, &g, u0, t)
    }
}

pub(crate) fn endpoint_from(m: &DMatrix<f64>, g: &[DMatrix<f64>], u0: &DVector<f64>, t: f64) -> GeodesicPoint {
    let y = DVector::from_iterator(g.len(), g.iter().map(|gh| u0.dot(&(gh * u0))));
    GeodesicPoint { x: m * u0, y, t }
}

/// Closed-form endpoint at time `t`.
pub fn geodesic_closed_form(spec: &MetricSpec, cov: &Covector, t: f64) -> Result<GeodesicPoint> {
    cov.check(spec)?;
    if cov.r.iter().all(|v| *v == 0.0) {
        return Ok(GeodesicPoint { x: &cov.u0 * t, y: DVector::zeros(spec.k()), t });
    }
    Ok(Flow::new(spec, cov.r.as_slice())?.endpoint(&cov.u0, t))
}

/// Fixed-step RK4 integration of `u' = A u`, `x' = u`, `y_h' = x^T L_h u / 2`.
pub fn geodesic_ode(spec: &MetricSpec, cov: &Covector, t: f64, steps: usize) -> Result<GeodesicPoint> {
    cov.check(spec)?;
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    let m = spec.m();
    let k = spec.k();
    let a = spec.combination(cov.r.as_slice())?.into_matrix();
    let ls: Vec<&DMatrix<f64>> = spec.matrices().iter().map(|l| l.matrix()).collect();
    let rhs = |s: &DVector<f64>| -> DVector<f64> {
        let u = s.rows(0, m);
        let x = s.rows(m, m);
        let mut d = DVector::zeros(2 * m + k);
        d.rows_mut(0, m).copy_from(&(&a * u));
        d.rows_mut(m, m).copy_from(&u);
        for (h, l) in ls.iter().enumerate() {
            d[2 * m + h] = 0.5 * x.dot(&(*l * u));
        }
        d
    };
    let mut s = DVector::zeros(2 * m + k);
    s.rows_mut(0, m).copy_from(&cov.u0);
    let h = t / steps as f64;
    for _ in 0..steps {
        let k1 = rhs(&s);
        let k2 = rhs(&(&s + &k1 * (0.5 * h)));
        let k3 = rhs(&(&s + &k2 * (0.5 * h)));
        let k4 = rhs(&(&s + &k3 * h));
        s += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(GeodesicPoint { x: s.rows(m, m).into_owned(), y: s.rows(2 * m, k).into_owned(), t })
}

/// `C(t)` for generator `A` and second direction `A~`, so that in the reduced
/// frame `y_2(t) = <C(t) u0, u0>` with `A = r L_theta`, `A~ = L~_theta`.
pub fn c_matrix(a: &SkewMatrix, a_tilde: &SkewMatrix, t: f64) -> Result<DMatrix<f64>> {
    if a.dim() != a_tilde.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: a_tilde.dim() });
    }
    let sp = Spectral::of(a);
    Ok(sp.kernel(&sp.project(a_tilde.matrix()), t))
}

/// First vertical coordinate in the reduced frame, from the block form of
/// `L_theta`, the modulus `r` and reduced-frame `u0`.
pub fn reduced_first_vertical(block: &BlockDiagForm, r: f64, u0: &DVector<f64>, t: f64) -> f64 {
    if r == 0.0 {
        return 0.0;
    }
    let reduced = u0.dot(&(block_frame_m_a(block, r, t) * u0));
    (reduced + Y1_LINEAR_SIGN * t * u0.norm_squared()) / (2.0 * r)
}

// `M_{rB}(t)` for the canonical block matrix `B` (identity conjugator).
fn block_frame_m_a(block: &BlockDiagForm, r: f64, t: f64) -> DMatrix<f64> {
    let canon = BlockDiagForm {
        conjugator: DMatrix::identity(block.dim(), block.dim()),
        moduli: block.moduli.iter().map(|a| a * r.abs()).collect(),
        has_zero_row: block.has_zero_row,
    };
    canon.m_a(t)
}

/// Unit-time exponential map of an arbitrary covector.
pub fn exp_unit_time(spec: &MetricSpec, lambda0: &Covector) -> Result<GeodesicPoint> {
    let mut p = geodesic_closed_form(spec, lambda0, 1.0)?;
    p.t = 1.0;
    Ok(p)
}
