//! Optimal synthesis: cut time, Maxwell partners at the cut time, recovery of
//! the covector from an endpoint, and the pre-cut distance.

use crate::error::{Error, Result};
use crate::expmap::{c_matrix, geodesic_closed_form, GeodesicPoint, Spectral};
use crate::model::{reduce_frame, Covector, MetricSpec};
use crate::skew::{block_diagonalize, rotation, spectrum_moduli, BlockDiagForm, SkewMatrix};
use crate::special::sinc;
use nalgebra::{DVector, Matrix2, Vector2};
use std::f64::consts::{PI, TAU};

/// `2 pi / max sigma(sum r_h L_h)`, infinite for `r = 0`.
pub fn cut_time(spec: &MetricSpec, cov: &Covector) -> Result<f64> {
    cov.check(spec)?;
    let top = spectrum_moduli(&spec.combination(cov.r.as_slice())?)[0];
    Ok(if top == 0.0 { f64::INFINITY } else { TAU / top })
}

/// Two geodesics meeting at the cut time.
#[derive(Clone, Debug)]
pub struct MaxwellPair {
    /// Rotation angle of the top-block component of `u0`, in `(0, 2 pi)`.
    pub omega_tilde: f64,
    pub partner: Covector,
    pub cut_time: f64,
    /// `|gamma(T*) - gamma_partner(T*)|` in `(x, y)`.
    pub endpoint_gap: f64,
    /// `|gamma'(T*) - gamma_partner'(T*)|`.
    pub velocity_gap: f64,
    /// `(C0, C1, C2)` with `y2(omega) - y2 = C0 sin(w/2) (C1 cos(w/2) + C2 sin(w/2))`.
    pub constants: [f64; 3],
    /// The same constants fitted from endpoint differences at `pi/2, pi, 3pi/2`.
    pub fitted_constants: [f64; 3],
}

/// `u0` with its top-block component rotated by `omega`, in block coordinates.
fn rotate_top(u: &DVector<f64>, omega: f64) -> DVector<f64> {
    let r = rotation(omega);
    let mut v = u.clone();
    v[0] = r[0][0] * u[0] + r[0][1] * u[1];
    v[1] = r[1][0] * u[0] + r[1][1] * u[1];
    v
}

/// Constructs the Maxwell partner of an arclength geodesic.
pub fn maxwell_partner(spec: &MetricSpec, cov: &Covector) -> Result<MaxwellPair> {
    cov.check(spec)?;
    if cov.r.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroVertical);
    }
    let a = spec.combination(cov.r.as_slice())?;
    let form = block_diagonalize(&a);
    let top = form.moduli[0];
    if top == 0.0 {
        return Err(Error::ZeroVertical);
    }
    let t_star = TAU / top;
    let ut = &form.conjugator * &cov.u0;
    let rho1_sq = ut[0] * ut[0] + ut[1] * ut[1];
    if rho1_sq.sqrt() <= 1e-12 * cov.u0.norm() {
        return Err(Error::DegenerateVariation("u0 has no component in the top block".into()));
    }

    let (omega, constants, fitted) = if spec.k() == 1 {
        (PI, [2.0, 0.0, 0.0], [2.0, 0.0, 0.0])
    } else {
        let frame = reduce_frame(spec, cov.r.as_slice())?;
        let rspec = frame.reduced_spec()?;
        let ur = frame.reduce_covector(&cov.u0);
        let c = c_matrix(&rspec.l(0).scaled(frame.r_mod), rspec.l(1), t_star)?;
        let s = &c + c.transpose();
        let w = &s * &ur.u0;
        let (u1, u2) = (ur.u0[0], ur.u0[1]);
        let p = u1 * w[0] + u2 * w[1];
        let q = u2 * w[0] - u1 * w[1];
        let c11 = 0.5 * (c[(0, 0)] + c[(1, 1)]);
        let rho1 = rho1_sq;
        let constants = [2.0, q, 2.0 * c11 * rho1 - p];

        let y2 = |omega: f64| -> Result<f64> {
            let cv = Covector::new(rotate_top(&ur.u0, omega), ur.r.clone());
            Ok(geodesic_closed_form(&rspec, &cv, t_star)?.y[1])
        };
        let base = y2(0.0)?;
        let d_half = y2(PI / 2.0)? - base;
        let d_pi = y2(PI)? - base;
        let d_three = y2(1.5 * PI)? - base;
        let fitted = [2.0, 0.5 * (d_half - d_three), 0.5 * d_pi];
        let scale = (w.norm() * rho1.sqrt() + c11.abs() * rho1).max(f64::MIN_POSITIVE);
        // y is of size t^2; the floor covers pairs where every constant vanishes.
        let tol = 1e-8 * scale.max(base.abs()) + 1e-12 * t_star * t_star;
        for i in 1..3 {
            if (constants[i] - fitted[i]).abs() > tol {
                return Err(Error::Inconsistency(format!(
                    "Maxwell constants disagree with endpoint fit: {:?} vs {:?}",
                    constants, fitted
                )));
            }
        }
        let tiny = 1e-12 * scale;
        let (c1, c2) = (constants[1], constants[2]);
        let omega = if c1.abs() <= tiny && c2.abs() <= tiny {
            PI
        } else if c1.abs() <= tiny {
            return Err(Error::DegenerateVariation("only the trivial rotation closes the vertical gap".into()));
        } else {
            (2.0 * (-c1).atan2(c2)).rem_euclid(TAU)
        };
        (omega, constants, fitted)
    };

    let u_partner = form.conjugator.transpose() * rotate_top(&ut, omega);
    let partner = Covector::new(u_partner, cov.r.clone());
    let g0 = geodesic_closed_form(spec, cov, t_star)?;
    let g1 = geodesic_closed_form(spec, &partner, t_star)?;
    let e = form.exp(t_star);
    let du = &e * (&cov.u0 - &partner.u0);
    let mut vel = DVector::zeros(spec.n());
    vel.rows_mut(0, spec.m()).copy_from(&du);
    for h in 0..spec.k() {
        vel[spec.m() + h] = 0.5 * g0.x.dot(&(spec.l(h).matrix() * &du));
    }
    Ok(MaxwellPair {
        omega_tilde: omega,
        partner,
        cut_time: t_star,
        endpoint_gap: g0.distance(&g1),
        velocity_gap: vel.norm(),
        constants,
        fitted_constants: fitted,
    })
}

/// Solves `|x_bar|^2 = sum_i rho_i^2 / (T sinc(a_i s / 2))^2` for `s = rT` on
/// `[0, 2 pi / a_1)` and inverts `M_{r L}(T)`. Returns `(u0, r)` in the
/// original coordinates of `dir`.
pub(crate) fn recover_along(form: &BlockDiagForm, x_bar: &DVector<f64>, t: f64) -> Result<(DVector<f64>, f64)> {
    let nx = x_bar.norm();
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time must be positive, got {t}")));
    }
    if nx > t * (1.0 + 1e-12) {
        return Err(Error::Unreachable(format!("|x| = {nx} exceeds T = {t}")));
    }
    if nx == 0.0 {
        return Err(Error::BeyondCut("x = 0 lies on the vertical axis".into()));
    }
    if nx >= t * (1.0 - 1e-15) {
        return Ok((x_bar / nx, 0.0));
    }
    let xt = &form.conjugator * x_bar;
    let nb = form.moduli.len();
    let rho_sq: Vec<f64> = (0..nb).map(|i| xt[2 * i].powi(2) + xt[2 * i + 1].powi(2)).collect();
    let rest: f64 = if form.has_zero_row { xt[xt.len() - 1].powi(2) } else { 0.0 };
    let a1 = form.moduli[0];
    if a1 == 0.0 {
        return Err(Error::BeyondCut("no rotation: only the straight line reaches x".into()));
    }
    let f = |s: f64| -> f64 {
        let mut acc = rest;
        for (a, r2) in form.moduli.iter().zip(&rho_sq) {
            let d = sinc(0.5 * a * s);
            acc += r2 / (d * d);
        }
        acc / (t * t) - 1.0
    };
    let s_max = TAU / a1;
    let mut hi = s_max * (1.0 - 1e-15);
    if !(f(hi) > 0.0) {
        return Err(Error::BeyondCut(format!("no solution of the norm equation below 2 pi / a1 for T = {t}")));
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-15 * s_max {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    let mut ut = DVector::zeros(xt.len());
    for (i, a) in form.moduli.iter().enumerate() {
        let c = 1.0 / (t * sinc(0.5 * a * s));
        let rot = rotation(-0.5 * a * s);
        ut[2 * i] = c * (rot[0][0] * xt[2 * i] + rot[0][1] * xt[2 * i + 1]);
        ut[2 * i + 1] = c * (rot[1][0] * xt[2 * i] + rot[1][1] * xt[2 * i + 1]);
    }
    if form.has_zero_row {
        let last = xt.len() - 1;
        ut[last] = xt[last] / t;
    }
    Ok((form.conjugator.transpose() * ut, s / t))
}

/// Covector of the arclength geodesic along the first structure matrix
/// (`r = (r, 0)`, `r >= 0`) reaching `x_bar` at time `t` before its cut time.
pub fn recover_covector(spec: &MetricSpec, x_bar: &DVector<f64>, t: f64) -> Result<Covector> {
    if x_bar.len() != spec.m() {
        return Err(Error::DimensionMismatch { expected: spec.m(), found: x_bar.len() });
    }
    let form = block_diagonalize(spec.l(0));
    let (u0, r) = recover_along(&form, x_bar, t)?;
    let mut rv = DVector::zeros(spec.k());
    rv[0] = r;
    Ok(Covector::new(u0, rv))
}

/// Result of shooting for the pre-cut geodesic through a target.
#[derive(Clone, Debug)]
pub struct PreCutGeodesic {
    pub time: f64,
    pub covector: Covector,
    /// Final `|y(T) - y_target|`.
    pub residual: f64,
}

struct Direction {
    theta: f64,
    form: BlockDiagForm,
    spectral: Spectral,
    projected: [nalgebra::DMatrix<num_complex::Complex64>; 2],
}

impl Direction {
    fn new(spec: &MetricSpec, theta: f64) -> Result<Self> {
        let (s, c) = theta.sin_cos();
        let l = SkewMatrix::lin_comb(c, spec.l(0), s, spec.l(1))?;
        let form = block_diagonalize(&l);
        let spectral = Spectral::from_block(&form);
        let projected = [spectral.project(spec.l(0).matrix()), spectral.project(spec.l(1).matrix())];
        Ok(Self { theta, form, spectral, projected })
    }

    // Vertical endpoint of the geodesic along this direction through x_bar at time t.
    fn vertical(&self, x_bar: &DVector<f64>, t: f64) -> Option<(Vector2<f64>, DVector<f64>, f64)> {
        let (u0, r) = recover_along(&self.form, x_bar, t).ok()?;
        if r == 0.0 {
            return Some((Vector2::zeros(), u0, 0.0));
        }
        let sp = self.spectral.scaled(r);
        let y1 = u0.dot(&(sp.kernel(&self.projected[0], t) * &u0));
        let y2 = u0.dot(&(sp.kernel(&self.projected[1], t) * &u0));
        Some((Vector2::new(y1, y2), u0, r))
    }
}

/// Time of the unique pre-cut geodesic through `target` (corank 2).
pub fn distance_in_cut_domain(spec: &MetricSpec, target: &GeodesicPoint) -> Result<f64> {
    Ok(shoot_pre_cut(spec, target)?.time)
}

/// Shoots for the pre-cut geodesic through `target`.
///
/// For a direction `theta`, the component of `y(T)` along `(cos, sin)(theta)`
/// is nonpositive and decreases with `T`, so `T(theta)` is found by
/// bisection; the orthogonal residual changes sign across the half circle
/// where the target's component is negative and is bracketed in `theta`.
/// A damped Newton step on `(theta, T)` polishes the result.
pub fn shoot_pre_cut(spec: &MetricSpec, target: &GeodesicPoint) -> Result<PreCutGeodesic> {
    if spec.k() != 2 {
        return Err(Error::InvalidArgument("distance shooting needs corank 2".into()));
    }
    if target.x.len() != spec.m() || target.y.len() != 2 {
        return Err(Error::DimensionMismatch { expected: spec.n(), found: target.x.len() + target.y.len() });
    }
    let xb = &target.x;
    let yb = Vector2::new(target.y[0], target.y[1]);
    let nx = xb.norm();
    let ny = yb.norm();
    if ny <= 1e-15 * nx * nx || ny == 0.0 {
        if nx == 0.0 {
            let mut u = DVector::zeros(spec.m());
            u[0] = 1.0;
            return Ok(PreCutGeodesic { time: 0.0, covector: Covector::new(u, DVector::zeros(2)), residual: ny });
        }
        return Ok(PreCutGeodesic { time: nx, covector: Covector::new(xb / nx, DVector::zeros(2)), residual: ny });
    }
    if nx == 0.0 {
        return Err(Error::BeyondCut("vertical targets lie in the cut locus".into()));
    }
    let tol = 1e-9 * ny.max(1.0);

    let solve_t = |dir: &Direction| -> Option<(f64, Vector2<f64>, DVector<f64>, f64)> {
        let e = Vector2::new(dir.theta.cos(), dir.theta.sin());
        let want = e.dot(&yb);
        if want >= 0.0 {
            return None;
        }
        let g = |t: f64| dir.vertical(xb, t).map(|(y, _, _)| e.dot(&y) - want);
        let lo0 = nx;
        let mut hi = nx + want.abs().sqrt();
        let mut grew = 0;
        loop {
            match g(hi) {
                Some(v) if v < 0.0 => break,
                Some(_) => {}
                None => return None,
            }
            hi = nx + 2.0 * (hi - nx);
            grew += 1;
            if grew > 80 {
                return None;
            }
        }
        let mut lo = lo0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            match g(mid) {
                Some(v) if v > 0.0 => lo = mid,
                Some(_) => hi = mid,
                None => return None,
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        let t = 0.5 * (lo + hi);
        let (y, u0, r) = dir.vertical(xb, t)?;
        Some((t, y, u0, r))
    };
    let perp_residual = |theta: f64| -> Result<Option<(f64, f64, DVector<f64>, f64, Vector2<f64>)>> {
        let dir = Direction::new(spec, theta)?;
        Ok(solve_t(&dir).map(|(t, y, u0, r)| {
            let n = Vector2::new(-theta.sin(), theta.cos());
            (n.dot(&(y - yb)), t, u0, r, y)
        }))
    };

    let theta_y = yb[1].atan2(yb[0]);
    let n_scan = 48;
    let start = theta_y + 0.5 * PI;
    let mut samples = Vec::with_capacity(n_scan);
    for j in 0..n_scan {
        let th = start + PI * (j as f64 + 0.5) / n_scan as f64;
        samples.push((th, perp_residual(th)?));
    }
    let mut best: Option<(f64, f64, DVector<f64>, f64)> = None;
    for w in samples.windows(2) {
        let (ta, ra) = (&w[0].0, &w[0].1);
        let (tb, rb) = (&w[1].0, &w[1].1);
        let (Some(a), Some(b)) = (ra, rb) else { continue };
        if a.0 == 0.0 || a.0.signum() != b.0.signum() {
            let (mut lo, mut hi, mut flo) = (*ta, *tb, a.0);
            let mut last = None;
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                let Some(v) = perp_residual(mid)? else { break };
                if v.0.signum() == flo.signum() && v.0 != 0.0 {
                    lo = mid;
                    flo = v.0;
                } else {
                    hi = mid;
                }
                last = Some((mid, v));
                if hi - lo <= 1e-14 {
                    break;
                }
            }
            if let Some((th, v)) = last {
                if best.as_ref().is_none_or(|b| v.1 < b.1) {
                    best = Some((th, v.1, v.2, v.3));
                }
            }
        }
    }
    let Some((mut theta, mut t, _, _)) = best else {
        return Err(Error::ShootingFailed { residual: f64::INFINITY });
    };

    let full = |theta: f64, t: f64| -> Result<Option<(Vector2<f64>, DVector<f64>, f64)>> {
        let dir = Direction::new(spec, theta)?;
        Ok(dir.vertical(xb, t).map(|(y, u, r)| (y - yb, u, r)))
    };
    let Some((mut res, mut u0, mut r)) = full(theta, t)? else {
        return Err(Error::ShootingFailed { residual: f64::INFINITY });
    };
    for _ in 0..20 {
        if res.norm() <= 1e-3 * tol {
            break;
        }
        let h_th = 1e-7;
        let h_t = 1e-7 * t;
        let (Some(p1), Some(m1), Some(p2), Some(m2)) =
            (full(theta + h_th, t)?, full(theta - h_th, t)?, full(theta, t + h_t)?, full(theta, t - h_t)?)
        else {
            break;
        };
        let jac = Matrix2::from_columns(&[(p1.0 - m1.0) / (2.0 * h_th), (p2.0 - m2.0) / (2.0 * h_t)]);
        let Some(step) = jac.lu().solve(&(-res)) else { break };
        let mut lam = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let (nt, ntime) = (theta + lam * step[0], t + lam * step[1]);
            if let Some(c) = full(nt, ntime)? {
                if c.0.norm() < res.norm() {
                    theta = nt;
                    t = ntime;
                    (res, u0, r) = c;
                    improved = true;
                    break;
                }
            }
            lam *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let residual = res.norm();
    if residual > tol {
        return Err(Error::ShootingFailed { residual });
    }
    let covector = Covector::new(u0, DVector::from_vec(vec![r * theta.cos(), r * theta.sin()]));
    Ok(PreCutGeodesic { time: t, covector, residual })
}
