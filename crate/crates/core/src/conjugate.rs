//! Jacobian of the exponential map, its factorization at the cut time and the
//! search for the first conjugate time.
//!
//! Reduced Jacobians are evaluated in the frame where `r = (r, 0)` and the
//! first structure matrix is block diagonal; there the `y1` row is removed
//! using the Liouville form and the determinant picks up a factor `1 / r`.

use crate::error::{Error, Result};
use crate::expmap::{geodesic_closed_form, Flow, GeodesicPoint};
use crate::model::{reduce_frame, Covector, MetricSpec};
use crate::quaternion::{classify_pair, PairClassification, DEFAULT_CLASSIFY_TOL};
use crate::sampling::random_unit;
use crate::skew::spectrum_moduli;
use crate::special::sinc;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::{PI, TAU};

/// Scale-relative threshold below which a Jacobian counts as zero.
pub const ZERO_TOL: f64 = 1e-7;
/// Samples of the conjugate-time scan.
pub const SCAN_SAMPLES: usize = 512;
/// A dip counts as a zero only this far below its neighbouring samples.
pub const DIP_CONTRAST: f64 = 1e-3;

fn fd_step(coord: f64) -> f64 {
    f64::EPSILON.cbrt() * coord.abs().max(1.0)
}

/// Tangent vectors to the unit sphere at `u0`.
#[derive(Clone, Debug)]
pub struct TangentFrame {
    pub vectors: Vec<DVector<f64>>,
    /// False when the explicit 4-dimensional triple was replaced by an
    /// orthonormal frame.
    pub explicit: bool,
}

/// For `m = 4`: `(-u2, u1, 0, 0)`, `(-u3, 0, u1, 0)`, `(0, 0, -u4, u3)`.
/// Otherwise, or when that triple degenerates, an orthonormal basis of
/// `u0^perp` from a Householder reflection.
pub fn tangent_frame(u0: &DVector<f64>) -> TangentFrame {
    let m = u0.len();
    if m == 4 {
        let u = u0.as_slice();
        let v = vec![
            DVector::from_vec(vec![-u[1], u[0], 0.0, 0.0]),
            DVector::from_vec(vec![-u[2], 0.0, u[0], 0.0]),
            DVector::from_vec(vec![0.0, 0.0, -u[3], u[2]]),
        ];
        let g = DMatrix::from_fn(3, 3, |i, j| v[i].dot(&v[j]));
        let norms: f64 = (0..3).map(|i| g[(i, i)]).product();
        if norms > 0.0 && g.determinant() / norms > 1e-8 {
            return TangentFrame { vectors: v, explicit: true };
        }
    }
    TangentFrame { vectors: orthonormal_complement(u0), explicit: false }
}

fn orthonormal_complement(u0: &DVector<f64>) -> Vec<DVector<f64>> {
    let m = u0.len();
    let u = u0 / u0.norm();
    let mut w = u.clone();
    w[0] += if u[0] >= 0.0 { 1.0 } else { -1.0 };
    let wn = w.norm_squared();
    (1..m)
        .map(|j| {
            let mut e = DVector::zeros(m);
            e[j] = 1.0;
            let c = 2.0 * w[j] / wn;
            e - &w * c
        })
        .collect()
}

/// Determinant together with its scale-free size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct JacobianValue {
    pub value: f64,
    /// `|det|` after scaling columns to unit length, divided by the product of
    /// the row norms; lies in `[0, 1]`.
    pub normalized: f64,
}

impl JacobianValue {
    pub fn is_zero(&self, tol: f64) -> bool {
        self.normalized <= tol
    }
}

/// Row-Hadamard ratio of a square matrix after unit column scaling. A column
/// shorter than `1e-8` times the longest one counts as zero: its direction is
/// rounding noise.
pub fn hadamard_ratio(a: &DMatrix<f64>) -> f64 {
    let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let top = norms.iter().cloned().fold(0.0, f64::max);
    if norms.iter().any(|n| *n <= 1e-8 * top) {
        return 0.0;
    }
    let mut b = a.clone();
    for (mut c, n) in b.column_iter_mut().zip(&norms) {
        c /= *n;
    }
    let rows: f64 = b.row_iter().map(|r| r.norm()).product();
    if rows == 0.0 {
        return 0.0;
    }
    (b.determinant().abs() / rows).min(1.0)
}

/// Reduced Jacobian along one geodesic, with the time-independent data cached.
pub(crate) struct ReducedJacobian {
    k: usize,
    r: f64,
    u: DVector<f64>,
    frame: TangentFrame,
    flow: Flow,
    // Flows at r2 = +h and -h, corank 2 only.
    side: Option<(Flow, Flow, f64)>,
    l_tilde: Option<DMatrix<f64>>,
}

impl ReducedJacobian {
    pub fn new(spec: &MetricSpec, cov: &Covector) -> Result<Self> {
        cov.check(spec)?;
        if cov.r.iter().all(|v| *v == 0.0) {
            return Err(Error::ZeroVertical);
        }
        if spec.k() == 1 {
            let flow = Flow::new(spec, cov.r.as_slice())?;
            let frame = tangent_frame(&cov.u0);
            return Ok(Self { k: 1, r: cov.r[0], u: cov.u0.clone(), frame, flow, side: None, l_tilde: None });
        }
        let f = reduce_frame(spec, cov.r.as_slice())?;
        let rspec = f.reduced_spec()?;
        let u = f.reduce_covector(&cov.u0).u0;
        let flow = Flow::new(&rspec, &[f.r_mod, 0.0])?;
        let h = fd_step(f.r_mod);
        let plus = Flow::new(&rspec, &[f.r_mod, h])?;
        let minus = Flow::new(&rspec, &[f.r_mod, -h])?;
        let frame = tangent_frame(&u);
        Ok(Self {
            k: 2,
            r: f.r_mod,
            u,
            frame,
            flow,
            side: Some((plus, minus, h)),
            l_tilde: Some(rspec.l(1).matrix().clone()),
        })
    }

    /// The reduced matrix, before the `1 / r` factor.
    pub fn matrix(&self, t: f64) -> DMatrix<f64> {
        let m = self.u.len();
        let rows = m + self.k - 1;
        let mut jac = DMatrix::zeros(rows, rows);
        let ma = self.flow.block.m_a(t);
        let x = &ma * &self.u;
        let ut = self.flow.block.exp(t) * &self.u;
        let g2 = (self.k == 2).then(|| self.flow.spectral.kernel(&self.flow.projected[1], t));
        let s2 = g2.as_ref().map(|g| g + g.transpose());
        for (c, v) in self.frame.vectors.iter().enumerate() {
            jac.view_mut((0, c), (m, 1)).copy_from(&(&ma * v));
            if let Some(s) = &s2 {
                jac[(m, c)] = (s * &self.u).dot(v);
            }
        }
        let c1 = m - 1;
        jac.view_mut((0, c1), (m, 1)).copy_from(&((&ut * t - &x) / self.r));
        if let (Some(g2), Some(lt), Some((plus, minus, h))) = (&g2, &self.l_tilde, &self.side) {
            let y2 = self.u.dot(&(g2 * &self.u));
            let dy2 = 0.5 * x.dot(&(lt * &ut));
            jac[(m, c1)] = (t * dy2 - 2.0 * y2) / self.r;
            let dx = self.flow.spectral.frechet_m(&self.flow.projected[1], t) * &self.u;
            jac.view_mut((0, c1 + 1), (m, 1)).copy_from(&dx);
            let yp = self.u.dot(&(plus.spectral.kernel(&plus.projected[1], t) * &self.u));
            let ym = self.u.dot(&(minus.spectral.kernel(&minus.projected[1], t) * &self.u));
            jac[(m, c1 + 1)] = (yp - ym) / (2.0 * h);
        }
        jac
    }

    /// Equals the full Jacobian: the `y1` row is traded for the Liouville row
    /// `(1, 0, ...)` divided by the canonical vertical momentum `-r`.
    pub fn at(&self, t: f64) -> JacobianValue {
        let jac = self.matrix(t);
        let sign = if self.u.len().is_multiple_of(2) { -1.0 } else { 1.0 };
        JacobianValue { value: sign * jac.determinant() / self.r, normalized: hadamard_ratio(&jac) }
    }
}

/// Reduced Jacobian: `1/r` times the determinant of the `x` and `y2` partials
/// along the sphere tangents and `r`, in the reduced frame.
pub fn jacobian_reduced(spec: &MetricSpec, cov: &Covector, t: f64) -> Result<JacobianValue> {
    Ok(ReducedJacobian::new(spec, cov)?.at(t))
}

/// Central-difference determinant of all partials of the exponential map
/// `(t, u0, r) -> (x, y)` along `d/dt`, the tangent frame and each `r_h`.
pub fn jacobian_full(spec: &MetricSpec, cov: &Covector, t: f64) -> Result<JacobianValue> {
    let frame = tangent_frame(&cov.u0);
    jacobian_full_with_frame(spec, cov, t, &frame.vectors)
}

/// [`jacobian_full`] with caller-provided sphere tangents.
pub fn jacobian_full_with_frame(spec: &MetricSpec, cov: &Covector, t: f64, frame: &[DVector<f64>]) -> Result<JacobianValue> {
    cov.check(spec)?;
    if frame.len() != spec.m() - 1 {
        return Err(Error::DimensionMismatch { expected: spec.m() - 1, found: frame.len() });
    }
    let jac = full_matrix(spec, cov, t, frame)?;
    Ok(JacobianValue { value: jac.determinant(), normalized: hadamard_ratio(&jac) })
}

fn full_matrix(spec: &MetricSpec, cov: &Covector, t: f64, frame: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let n = spec.n();
    let mut jac = DMatrix::zeros(n, n);
    let eval = |c: &Covector, s: f64| -> Result<DVector<f64>> { Ok(geodesic_closed_form(spec, c, s)?.stacked()) };
    let ht = fd_step(t);
    jac.set_column(0, &((eval(cov, t + ht)? - eval(cov, t - ht)?) / (2.0 * ht)));
    let hu = fd_step(1.0);
    for (i, v) in frame.iter().enumerate() {
        let p = Covector::new(&cov.u0 + v * hu, cov.r.clone());
        let q = Covector::new(&cov.u0 - v * hu, cov.r.clone());
        jac.set_column(1 + i, &((eval(&p, t)? - eval(&q, t)?) / (2.0 * hu)));
    }
    let base = 1 + frame.len();
    for h in 0..spec.k() {
        let step = fd_step(cov.r.norm());
        let mut rp = cov.r.clone();
        let mut rm = cov.r.clone();
        rp[h] += step;
        rm[h] -= step;
        let p = Covector::new(cov.u0.clone(), rp);
        let q = Covector::new(cov.u0.clone(), rm);
        jac.set_column(base + h, &((eval(&p, t)? - eval(&q, t)?) / (2.0 * step)));
    }
    Ok(jac)
}

/// Pairings of the Liouville form with the partials of the exponential map.
#[derive(Clone, Debug, Serialize)]
pub struct LiouvillePairings {
    /// Against `d/dt`; equals 1 on arclength geodesics.
    pub time: f64,
    /// Against the sphere tangents and each `d/dr_h`; all vanish.
    pub others: Vec<f64>,
}

/// Evaluates the Liouville form at time `t` on the columns of the full
/// Jacobian. For `y' = x^T L u / 2` and `u' = A u` the canonical momenta are
/// `p = u(t) - A x(t) / 2` and `-r`.
pub fn liouville_pairings(spec: &MetricSpec, cov: &Covector, t: f64) -> Result<LiouvillePairings> {
    let frame = tangent_frame(&cov.u0);
    let jac = full_matrix(spec, cov, t, &frame.vectors)?;
    let m = spec.m();
    let a = spec.combination(cov.r.as_slice())?;
    let pt: GeodesicPoint = geodesic_closed_form(spec, cov, t)?;
    let ut = crate::skew::skew_exp(&a, t) * &cov.u0;
    let p = ut - a.matrix() * &pt.x * 0.5;
    let mut lam = DVector::zeros(spec.n());
    lam.rows_mut(0, m).copy_from(&p);
    lam.rows_mut(m, spec.k()).copy_from(&(-&cov.r));
    let pair: Vec<f64> = jac.column_iter().map(|c| lam.dot(&c)).collect();
    Ok(LiouvillePairings { time: pair[0], others: pair[1..].to_vec() })
}

/// Factors of the reduced Jacobian at the cut time.
#[derive(Clone, Debug, Serialize)]
pub struct CutFactorization {
    /// `<(C + C^T) u, v1>`.
    pub bracket_term: f64,
    pub det_m: f64,
    pub det_n: f64,
    pub product: f64,
    /// `4 u1 u3 sin^2(pi b / a) / (b^2 r^2)`, continuous at `b = 0`.
    pub det_m_closed_form: f64,
    /// The reduced determinant assembled directly (without the `1/r`).
    pub determinant: f64,
    pub reduced_u0: Vec<f64>,
    pub moduli: [f64; 2],
    pub cut_time: f64,
}

/// Factorization at `t_cut` for `r = (r cos theta, r sin theta)`, `r > 0`, with
/// `u0` in the original coordinates.
pub fn factor_at_cut(spec: &MetricSpec, u0: &DVector<f64>, theta: f64, r: f64) -> Result<CutFactorization> {
    if spec.m() != 4 || spec.k() != 2 {
        return Err(Error::InvalidArgument("cut factorization needs m = 4, k = 2".into()));
    }
    if !(r > 0.0) {
        return Err(Error::ZeroVertical);
    }
    let rv = [r * theta.cos(), r * theta.sin()];
    let f = reduce_frame(spec, &rv)?;
    let rspec = f.reduced_spec()?;
    let u = f.reduce_covector(u0).u0;
    let (a, b) = (f.block.moduli[0], f.block.moduli[1]);
    if a == 0.0 {
        return Err(Error::ZeroVertical);
    }
    let t_cut = TAU / (a * r);
    let triple = [
        DVector::from_vec(vec![-u[1], u[0], 0.0, 0.0]),
        DVector::from_vec(vec![-u[2], 0.0, u[0], 0.0]),
        DVector::from_vec(vec![0.0, 0.0, -u[3], u[2]]),
    ];
    let rj = ReducedJacobian {
        frame: TangentFrame { vectors: triple.to_vec(), explicit: true },
        ..ReducedJacobian::new(&rspec, &Covector::new(u.clone(), DVector::from_vec(vec![r, 0.0])))?
    };
    let jac = rj.matrix(t_cut);
    let bracket_term = jac[(4, 0)];
    let det_m = jac[(2, 1)] * jac[(3, 2)] - jac[(2, 2)] * jac[(3, 1)];
    let det_n = jac[(0, 3)] * jac[(1, 4)] - jac[(0, 4)] * jac[(1, 3)];
    let s = sinc(PI * b / a) * PI / (a * r);
    Ok(CutFactorization {
        bracket_term,
        det_m,
        det_n,
        product: bracket_term * det_m * det_n,
        det_m_closed_form: 4.0 * u[0] * u[2] * s * s,
        determinant: jac.determinant(),
        reduced_u0: u.iter().copied().collect(),
        moduli: [a, b],
        cut_time: t_cut,
    })
}

/// First zero of the reduced Jacobian in `(t0, t_max]`, `t0 = 1e-3 t_cut`.
///
/// Sign changes on a uniform scan are bisected; local minima of the
/// normalized value are refined by golden section and accepted below
/// [`ZERO_TOL`] when they also sit [`DIP_CONTRAST`] below the larger
/// neighbouring sample. This catches zeros of even order but not the slow
/// decay of the normalized value as `t -> 0`.
pub fn first_conjugate_time(spec: &MetricSpec, cov: &Covector, t_max: f64) -> Result<Option<f64>> {
    let rj = ReducedJacobian::new(spec, cov)?;
    let t_cut = TAU / spectrum_moduli(&spec.combination(cov.r.as_slice())?)[0];
    let t0 = 1e-3 * t_cut;
    if !(t_max > t0) {
        return Ok(None);
    }
    let n = SCAN_SAMPLES;
    let ts: Vec<f64> = (0..n).map(|i| t0 + (t_max - t0) * i as f64 / (n - 1) as f64).collect();
    let vals: Vec<JacobianValue> = ts.iter().map(|&t| rj.at(t)).collect();
    for i in 0..n {
        let mut found: Option<f64> = None;
        if i > 0 && vals[i - 1].value.signum() != vals[i].value.signum() && vals[i - 1].value != 0.0 {
            let (mut lo, mut hi) = (ts[i - 1], ts[i]);
            let s_lo = vals[i - 1].value.signum();
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if rj.at(mid).value.signum() == s_lo {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let root = 0.5 * (lo + hi);
            found = Some(found.map_or(root, |f: f64| f.min(root)));
        }
        // A dip between samples i-1 and i+1 may hold a zero of even order.
        if i > 0 && i + 1 < n && vals[i].normalized <= vals[i - 1].normalized && vals[i].normalized <= vals[i + 1].normalized {
            let tm = crate::quaternion::golden_min(|t| rj.at(t).normalized, ts[i - 1], ts[i + 1]);
            let v = rj.at(tm);
            let rim = vals[i - 1].normalized.max(vals[i + 1].normalized);
            if v.is_zero(ZERO_TOL) && v.normalized <= DIP_CONTRAST * rim {
                found = Some(found.map_or(tm, |f: f64| f.min(tm)));
            }
        }
        if let Some(t) = found {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// One sampled evaluation of the reduced Jacobian at the cut time.
#[derive(Clone, Debug, Serialize)]
pub struct CutSample {
    pub u0: Vec<f64>,
    pub theta: f64,
    pub jacobian: JacobianValue,
}

/// Outcome of the sampled test of whether cut points are conjugate.
#[derive(Clone, Debug, Serialize)]
pub struct CutConjugateVerdict {
    /// True when the Jacobian vanishes at the cut time on every sample.
    pub equal: bool,
    /// Sample with the largest normalized Jacobian.
    pub witness: CutSample,
    pub classification: PairClassification,
}

/// Samples `(u0, theta)` with a fixed seed and tests the Jacobian at the cut
/// time, then checks the verdict against [`classify_pair`].
pub fn cut_equals_conjugate(spec: &MetricSpec, samples: usize, seed: u64) -> Result<CutConjugateVerdict> {
    if spec.m() != 4 || spec.k() != 2 {
        return Err(Error::InvalidArgument("the cut/conjugate test needs m = 4, k = 2".into()));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("at least one sample is needed".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Option<CutSample> = None;
    for j in 0..samples {
        let theta = TAU * (j as f64 + 0.5) / samples as f64;
        let u0 = random_unit(&mut rng, 4);
        let cov = Covector::new(u0.clone(), DVector::from_vec(vec![theta.cos(), theta.sin()]));
        let rj = ReducedJacobian::new(spec, &cov)?;
        let t_cut = TAU / spectrum_moduli(&spec.combination(cov.r.as_slice())?)[0];
        let jacobian = rj.at(t_cut);
        if worst.as_ref().is_none_or(|w| jacobian.normalized > w.jacobian.normalized) {
            worst = Some(CutSample { u0: u0.iter().copied().collect(), theta, jacobian });
        }
    }
    let witness = worst.expect("samples > 0");
    let equal = witness.jacobian.is_zero(ZERO_TOL);
    let classification = classify_pair(spec.l(0), spec.l(1), DEFAULT_CLASSIFY_TOL)?;
    if equal != classification.cut_is_conjugate() {
        return Err(Error::Inconsistency(format!(
            "sampled Jacobian says cut {} conjugate, classification says {:?}; witness {:?}",
            if equal { "=" } else { "!=" },
            classification.kind,
            witness
        )));
    }
    Ok(CutConjugateVerdict { equal, witness, classification })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::reduce_frame;
    use crate::quaternion::{basis, QuatBasis};
    use crate::sampling::{random_both_q, random_both_qhat, random_covector, random_mixed_split, random_spec};
    use crate::skew::SkewMatrix;
    use crate::synthesis::cut_time;
    use proptest::prelude::*;

    fn spec_of(a: QuatBasis, b: QuatBasis) -> MetricSpec {
        MetricSpec::new(vec![basis(a), basis(b)]).unwrap()
    }

    #[test]
    fn tangent_frames_are_tangent_and_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for m in 3..7 {
            for _ in 0..20 {
                let u = random_unit(&mut rng, m);
                let f = tangent_frame(&u);
                assert_eq!(f.vectors.len(), m - 1);
                assert_eq!(f.explicit, m == 4);
                let g = DMatrix::from_fn(m - 1, m - 1, |i, j| f.vectors[i].dot(&f.vectors[j]));
                assert!(g.determinant() > 1e-12);
                for v in &f.vectors {
                    assert!(v.dot(&u).abs() < 1e-14);
                }
            }
        }
        let f = tangent_frame(&DVector::from_vec(vec![0.0, 0.6, 0.8, 0.0]));
        assert!(!f.explicit);
    }

    #[test]
    fn hadamard_ratio_bounds() {
        assert!((hadamard_ratio(&DMatrix::identity(4, 4)) - 1.0).abs() < 1e-15);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 + 1e-9]);
        assert!(hadamard_ratio(&a) < 1e-8);
        assert_eq!(hadamard_ratio(&DMatrix::zeros(3, 3)), 0.0);
    }

    #[test]
    fn full_equals_reduced_in_reduced_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for m in [3, 4, 5] {
            for _ in 0..5 {
                let spec = random_spec(&mut rng, m, 2, true);
                let cov = random_covector(&mut rng, m, 2, 0.5, 1.5);
                let f = reduce_frame(&spec, cov.r.as_slice()).unwrap();
                let rspec = f.reduced_spec().unwrap();
                let rc = f.reduce_covector(&cov.u0);
                let t = 0.7 * cut_time(&spec, &cov).unwrap();
                let full = jacobian_full(&rspec, &rc, t).unwrap();
                let red = jacobian_reduced(&rspec, &rc, t).unwrap();
                assert!((full.value - red.value).abs() < 1e-6 * red.value.abs().max(1e-3), "m={m}: {} vs {}", full.value, red.value);
            }
        }
    }

    #[test]
    fn corank_one_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let spec = random_spec(&mut rng, 5, 1, true);
        let cov = random_covector(&mut rng, 5, 1, 0.5, 1.5);
        let t = 0.6 * cut_time(&spec, &cov).unwrap();
        let full = jacobian_full(&spec, &cov, t).unwrap();
        let red = jacobian_reduced(&spec, &cov, t).unwrap();
        assert!((full.value - red.value).abs() < 1e-6 * red.value.abs());
    }

    #[test]
    fn vanishes_at_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let spec = random_spec(&mut rng, 4, 2, true);
        let cov = random_covector(&mut rng, 4, 2, 1.0, 1.0);
        let a = jacobian_reduced(&spec, &cov, 1e-2).unwrap().value.abs();
        let b = jacobian_reduced(&spec, &cov, 5e-3).unwrap().value.abs();
        let p = (a / b).log2();
        assert!(p > 3.0, "power {p}");
    }

    #[test]
    fn liouville_form_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for m in [3, 4, 5] {
            for k in [1, 2] {
                let spec = random_spec(&mut rng, m, k, true);
                let cov = random_covector(&mut rng, m, k, 0.5, 1.5);
                let t = 1.3 * cut_time(&spec, &cov).unwrap();
                let p = liouville_pairings(&spec, &cov, t).unwrap();
                assert!((p.time - 1.0).abs() < 1e-7);
                for o in p.others {
                    assert!(o.abs() < 1e-7, "{o}");
                }
            }
        }
    }

    #[test]
    fn factorization_matches_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        for _ in 0..20 {
            let spec = random_spec(&mut rng, 4, 2, true);
            let u0 = random_unit(&mut rng, 4);
            let theta = rand::Rng::random_range(&mut rng, 0.0..TAU);
            let f = factor_at_cut(&spec, &u0, theta, 1.3).unwrap();
            assert!((f.product - f.determinant).abs() < 1e-10 * f.determinant.abs().max(1e-12));
            assert!((f.det_m - f.det_m_closed_form).abs() < 1e-10);
            let cov = Covector::new(u0.clone(), DVector::from_vec(vec![1.3 * theta.cos(), 1.3 * theta.sin()]));
            assert!((f.cut_time - cut_time(&spec, &cov).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn double_eigenvalue_kills_det_m() {
        let spec = spec_of(QuatBasis::I, QuatBasis::J);
        let f = factor_at_cut(&spec, &DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]), 0.3, 1.0).unwrap();
        assert!(f.det_m.abs() < 1e-14);
        assert!((f.moduli[0] - f.moduli[1]).abs() < 1e-12);
        let cov = Covector::new(DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]), DVector::from_vec(vec![0.3f64.cos(), 0.3f64.sin()]));
        let rj = ReducedJacobian::new(&spec, &cov).unwrap();
        let jac = rj.matrix(f.cut_time);
        let sv = jac.svd(false, false).singular_values;
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(f64::total_cmp);
        assert!(s[0] < 1e-12 * s[4] && s[1] < 1e-12 * s[4] && s[3] > 1e-6 * s[4], "{s:?}");
    }

    #[test]
    fn commuting_pair_kills_bracket() {
        let spec = spec_of(QuatBasis::I, QuatBasis::IHat);
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        for _ in 0..10 {
            let u0 = random_unit(&mut rng, 4);
            let theta = rand::Rng::random_range(&mut rng, 0.0..TAU);
            let f = factor_at_cut(&spec, &u0, theta, 0.8).unwrap();
            assert!(f.bracket_term.abs() < 1e-12 || f.det_m.abs() < 1e-12, "{f:?}");
        }
    }

    #[test]
    fn quaternionic_conjugate_equals_cut() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for spec in [spec_of(QuatBasis::I, QuatBasis::J), spec_of(QuatBasis::I, QuatBasis::IHat), random_both_qhat(&mut rng)] {
            for _ in 0..3 {
                let cov = random_covector(&mut rng, 4, 2, 0.5, 1.5);
                let tc = cut_time(&spec, &cov).unwrap();
                let tj = first_conjugate_time(&spec, &cov, 2.0 * tc).unwrap().unwrap();
                assert!((tj - tc).abs() < 1e-6, "{tj} vs {tc}");
                assert!(jacobian_full(&spec, &cov, tc).unwrap().is_zero(ZERO_TOL));
            }
        }
    }

    #[test]
    fn generic_conjugate_after_cut() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        for _ in 0..5 {
            let spec = random_spec(&mut rng, 4, 2, true);
            let cov = random_covector(&mut rng, 4, 2, 0.5, 1.5);
            let tc = cut_time(&spec, &cov).unwrap();
            assert!(!jacobian_reduced(&spec, &cov, tc).unwrap().is_zero(ZERO_TOL));
            if let Some(tj) = first_conjugate_time(&spec, &cov, 3.0 * tc).unwrap() {
                assert!(tj > tc + 1e-6, "{tj} vs {tc}");
            }
        }
    }

    #[test]
    fn corank_one_conjugate_is_cut() {
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        for m in 3..7 {
            let spec = random_spec(&mut rng, m, 1, false);
            let cov = random_covector(&mut rng, m, 1, 0.5, 1.5);
            let tc = cut_time(&spec, &cov).unwrap();
            let tj = first_conjugate_time(&spec, &cov, 1.5 * tc).unwrap().unwrap();
            assert!((tj - tc).abs() < 1e-6, "m={m}: {tj} vs {tc}");
        }
    }

    #[test]
    fn verdicts_by_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        assert!(cut_equals_conjugate(&spec_of(QuatBasis::I, QuatBasis::J), 16, 1).unwrap().equal);
        assert!(cut_equals_conjugate(&spec_of(QuatBasis::I, QuatBasis::IHat), 16, 1).unwrap().equal);
        assert!(cut_equals_conjugate(&random_both_q(&mut rng), 16, 1).unwrap().equal);
        assert!(cut_equals_conjugate(&random_mixed_split(&mut rng), 16, 1).unwrap().equal);
        let g = cut_equals_conjugate(&random_spec(&mut rng, 4, 2, true), 16, 1).unwrap();
        assert!(!g.equal && g.witness.jacobian.normalized > ZERO_TOL);
    }

    #[test]
    fn rejects_bad_input() {
        let spec = spec_of(QuatBasis::I, QuatBasis::J);
        let cov = Covector::from_slices(&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0]);
        assert!(matches!(jacobian_reduced(&spec, &cov, 1.0), Err(Error::ZeroVertical)));
        assert!(factor_at_cut(&spec, &cov.u0, 0.0, 0.0).is_err());
        let l = SkewMatrix::from_upper(3, &[1.0, 0.0, 0.0]).unwrap();
        let m = SkewMatrix::from_upper(3, &[0.0, 1.0, 0.0]).unwrap();
        let s3 = MetricSpec::new(vec![l, m]).unwrap();
        assert!(cut_equals_conjugate(&s3, 4, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn conjugate_time_scales_inversely(seed in 0u64..1_000_000, s in 0.3f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = random_spec(&mut rng, 4, 1, true);
            let cov = random_covector(&mut rng, 4, 1, 0.5, 1.5);
            let scaled = Covector::new(cov.u0.clone(), &cov.r * s);
            let tc = cut_time(&spec, &cov).unwrap();
            let a = first_conjugate_time(&spec, &cov, 1.5 * tc).unwrap().unwrap();
            let b = first_conjugate_time(&spec, &scaled, 1.5 * tc / s).unwrap().unwrap();
            prop_assert!((a / s - b).abs() < 1e-6 * (1.0 + b));
        }

        #[test]
        fn full_jacobian_invariant_under_frame_symmetry(seed in 0u64..1_000_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = random_spec(&mut rng, 4, 2, true);
            let cov = random_covector(&mut rng, 4, 2, 0.5, 1.5);
            let f = reduce_frame(&spec, cov.r.as_slice()).unwrap();
            let rspec = f.reduced_spec().unwrap();
            let rc = f.reduce_covector(&cov.u0);
            let t = 0.5 * cut_time(&spec, &cov).unwrap();
            // Orthonormal tangents mapped by the frame change keep the volume form.
            let base = orthonormal_complement(&cov.u0);
            let mapped: Vec<DVector<f64>> = base.iter().map(|v| &f.block.conjugator * v).collect();
            let a = jacobian_full_with_frame(&spec, &cov, t, &base).unwrap().value;
            let b = jacobian_full_with_frame(&rspec, &rc, t, &mapped).unwrap().value;
            prop_assert!((a.abs() - b.abs()).abs() < 1e-6 * a.abs().max(1e-6));
        }
    }

    #[test]
    fn no_early_dips_for_rank_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..300 {
            let spec = random_spec(&mut rng, 3, 2, false);
            let cov = random_covector(&mut rng, 3, 2, 0.5, 2.0);
            let tc = cut_time(&spec, &cov).unwrap();
            if let Some(t) = first_conjugate_time(&spec, &cov, 1.5 * tc).unwrap() {
                assert!(t >= tc - 1e-6, "t_conj {t} < t_cut {tc}");
            }
        }
    }
}
