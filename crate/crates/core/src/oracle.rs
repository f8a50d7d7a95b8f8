//! Independent distance upper bounds by direct optimization over
//! piecewise-constant controls with `|u| <= 1`.

use crate::error::{Error, Result};
use crate::expmap::GeodesicPoint;
use crate::model::MetricSpec;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

pub const DEFAULT_SEGMENTS: usize = 64;
pub const DEFAULT_RESTARTS: usize = 32;

/// Piecewise-constant controls on `[0, horizon]`, one row per segment.
#[derive(Clone, Debug)]
pub struct ControlGrid {
    pub controls: DMatrix<f64>,
    pub horizon: f64,
}

impl ControlGrid {
    pub fn new(controls: DMatrix<f64>, horizon: f64) -> Result<Self> {
        if controls.nrows() == 0 {
            return Err(Error::InvalidArgument("a control grid needs at least one segment".into()));
        }
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon must be finite and nonnegative, got {horizon}")));
        }
        for (j, row) in controls.row_iter().enumerate() {
            if row.norm() > 1.0 + 1e-12 {
                return Err(Error::InvalidArgument(format!("control {j} has speed {} > 1", row.norm())));
            }
        }
        Ok(Self { controls, horizon })
    }

    pub fn segments(&self) -> usize {
        self.controls.nrows()
    }

    fn step(&self) -> f64 {
        self.horizon / self.segments() as f64
    }
}

/// Exact endpoint: `x` is piecewise linear and each segment adds
/// `h x_j^T L u_j / 2` to `y` (the `u^T L u` term vanishes).
pub fn integrate_controls(spec: &MetricSpec, grid: &ControlGrid) -> Result<GeodesicPoint> {
    if grid.controls.ncols() != spec.m() {
        return Err(Error::DimensionMismatch { expected: spec.m(), found: grid.controls.ncols() });
    }
    let ls: Vec<&DMatrix<f64>> = spec.matrices().iter().map(|l| l.matrix()).collect();
    Ok(endpoint(&ls, &grid.controls, grid.step(), grid.horizon))
}

fn endpoint(ls: &[&DMatrix<f64>], u: &DMatrix<f64>, h: f64, horizon: f64) -> GeodesicPoint {
    let m = u.ncols();
    let mut x = DVector::zeros(m);
    let mut y = DVector::zeros(ls.len());
    for row in u.row_iter() {
        let uj = row.transpose();
        for (k, l) in ls.iter().enumerate() {
            y[k] += 0.5 * h * x.dot(&(*l * &uj));
        }
        x += &uj * h;
    }
    GeodesicPoint { x, y, t: horizon }
}

// Residual and its Jacobian with respect to the stacked controls.
fn residual_and_jacobian(ls: &[&DMatrix<f64>], u: &DMatrix<f64>, h: f64, target: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (nseg, m) = (u.nrows(), u.ncols());
    let k = ls.len();
    let mut xs = Vec::with_capacity(nseg + 1);
    let mut x = DVector::zeros(m);
    let mut y = DVector::zeros(k);
    for row in u.row_iter() {
        let uj = row.transpose();
        for (kk, l) in ls.iter().enumerate() {
            y[kk] += 0.5 * h * x.dot(&(*l * &uj));
        }
        xs.push(x.clone());
        x += &uj * h;
    }
    let mut res = DVector::zeros(m + k);
    res.rows_mut(0, m).copy_from(&x);
    res.rows_mut(m, k).copy_from(&y);
    res -= target;
    let mut jac = DMatrix::zeros(m + k, nseg * m);
    for j in 0..nseg {
        let uj = u.row(j).transpose();
        for i in 0..m {
            jac[(i, j * m + i)] = h;
        }
        let w = &x - &xs[j] * 2.0 - &uj * h;
        for (kk, l) in ls.iter().enumerate() {
            let g = (*l * &w) * (0.5 * h);
            for i in 0..m {
                jac[(m + kk, j * m + i)] = g[i];
            }
        }
    }
    (res, jac)
}

/// Minimum-energy controls reaching `target` at a fixed horizon: SQP steps
/// `du = -u - J^T lam`, `lam = (J J^T)^{-1} (c - J u)` on the quadratic
/// endpoint constraint `c(u) = 0`, globalized by backtracking on
/// `|u|^2 / 2 + rho |c|_1`.
fn min_energy(ls: &[&DMatrix<f64>], mut u: DMatrix<f64>, horizon: f64, target: &DVector<f64>, iterations: usize, tol: f64) -> (DMatrix<f64>, f64) {
    let h = horizon / u.nrows() as f64;
    let (mut c, mut jac) = residual_and_jacobian(ls, &u, h, target);
    let mut rho: f64 = 1.0;
    for _ in 0..iterations {
        let jjt = &jac * jac.transpose();
        let scale = jjt.diagonal().max().max(1e-300);
        let mut sys = jjt;
        for i in 0..sys.nrows() {
            sys[(i, i)] += 1e-14 * scale;
        }
        let Some(chol) = sys.cholesky() else { break };
        let uv = DVector::from_iterator(u.len(), u.transpose().iter().copied());
        let lam = chol.solve(&(&c - &jac * &uv));
        let step = -(&uv + jac.transpose() * &lam);
        rho = rho.max(2.0 * lam.amax());
        let merit = |uv: &DVector<f64>, c: &DVector<f64>| 0.5 * uv.norm_squared() + rho * c.lp_norm(1);
        let m0 = merit(&uv, &c);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand_v = &uv + &step * alpha;
            let cand = DMatrix::from_row_iterator(u.nrows(), u.ncols(), cand_v.iter().copied());
            let (c2, j2) = residual_and_jacobian(ls, &cand, h, target);
            if merit(&cand_v, &c2) < m0 || (alpha == 1.0 && c2.norm() <= 0.5 * c.norm()) {
                u = cand;
                c = c2;
                jac = j2;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted || (c.norm() <= tol && alpha * step.norm() <= 1e-9 * uv.norm().max(1e-300)) {
            break;
        }
    }
    let n = c.norm();
    (u, n)
}

// Smooth random start: a random rotation sweep of a random unit vector.
fn random_start(rng: &mut ChaCha8Rng, nseg: usize, m: usize, horizon: f64) -> DMatrix<f64> {
    let b = crate::sampling::random_skew(rng, m).scaled(rng.random_range(0.0..3.0) / horizon.max(1e-12));
    let form = crate::skew::block_diagonalize(&b);
    let u0 = crate::sampling::random_unit(rng, m);
    let smooth = rng.random_bool(0.75);
    let mut u = DMatrix::zeros(nseg, m);
    for j in 0..nseg {
        let v = if smooth {
            form.exp(horizon * (j as f64 + 0.5) / nseg as f64) * &u0
        } else {
            let w = DVector::<f64>::from_fn(m, |_, _| StandardNormal.sample(rng));
            &w / w.norm().max(1.0)
        };
        u.set_row(j, &v.transpose());
    }
    u
}

/// Best time found by the control-space search, an upper bound on the distance.
#[derive(Clone, Debug)]
pub struct OracleResult {
    pub distance: f64,
    /// Endpoint residual of the returned controls.
    pub residual: f64,
    pub controls: ControlGrid,
}

/// Oracle settings.
#[derive(Clone, Debug)]
pub struct OracleConfig {
    pub segments: usize,
    pub restarts: usize,
    /// SQP iterations per restart.
    pub budget: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { segments: DEFAULT_SEGMENTS, restarts: DEFAULT_RESTARTS, budget: 200, seed: 42 }
    }
}

/// Upper bound on the distance from the origin to `target` with default
/// settings and the given iteration budget per restart.
pub fn brute_force_distance(spec: &MetricSpec, target: &GeodesicPoint, budget: usize) -> Result<OracleResult> {
    brute_force_distance_with(spec, target, &OracleConfig { budget, ..OracleConfig::default() })
}

/// Multi-start minimum-energy search at a fixed horizon. Each converged
/// restart is rescaled to maximum speed one, which gives a valid grid whose
/// horizon bounds the distance from above; the smallest one is returned.
pub fn brute_force_distance_with(spec: &MetricSpec, target: &GeodesicPoint, cfg: &OracleConfig) -> Result<OracleResult> {
    let (m, k) = (spec.m(), spec.k());
    if target.x.len() != m || target.y.len() != k {
        return Err(Error::DimensionMismatch { expected: spec.n(), found: target.x.len() + target.y.len() });
    }
    if cfg.segments == 0 || cfg.restarts == 0 || cfg.budget == 0 {
        return Err(Error::InvalidArgument("segments, restarts and budget must be positive".into()));
    }
    let ls: Vec<&DMatrix<f64>> = spec.matrices().iter().map(|l| l.matrix()).collect();
    let mut tv = DVector::zeros(m + k);
    tv.rows_mut(0, m).copy_from(&target.x);
    tv.rows_mut(m, k).copy_from(&target.y);
    let tol = 1e-9 * tv.norm().max(1.0);
    let nx = target.x.norm();
    if target.y.norm() == 0.0 {
        let u = if nx > 0.0 { &target.x / nx } else { DVector::zeros(m) };
        let controls = DMatrix::from_fn(cfg.segments, m, |_, c| u[c]);
        let grid = ControlGrid { controls, horizon: nx };
        return Ok(OracleResult { distance: nx, residual: 0.0, controls: grid });
    }
    let horizon = 1.0;
    let guess = nx.max(target.y.norm().sqrt()).max(1e-3);
    let runs: Vec<Option<(f64, DMatrix<f64>, f64)>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (i as u64 + 1));
            let speed = guess * rng.random_range(1.0..3.0);
            let u0 = random_start(&mut rng, cfg.segments, m, horizon) * speed;
            let (u, res) = min_energy(&ls, u0, horizon, &tv, cfg.budget, tol);
            if res > tol {
                return None;
            }
            let vmax = u.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
            if vmax == 0.0 {
                return None;
            }
            Some((horizon * vmax, u / vmax, res))
        })
        .collect();
    let best = runs.into_iter().flatten().fold(None, |acc: Option<(f64, DMatrix<f64>, f64)>, r| match acc {
        Some(a) if a.0 <= r.0 => Some(a),
        _ => Some(r),
    });
    let Some((distance, controls, residual)) = best else {
        return Err(Error::NonConvergence { estimate: f64::INFINITY, target: tol });
    };
    Ok(OracleResult { distance, residual, controls: ControlGrid { controls, horizon: distance } })
}
