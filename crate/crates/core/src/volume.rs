//! Volume of the nilpotent unit ball and the spherical Hausdorff density for
//! corank-2 metrics on `R^4 x R^2`.
//!
//! The ball is the image of `{|u| <= 1, |r| <= A(theta)}` under the unit-time
//! exponential map, where `r = rho (cos theta, sin theta)` and
//! `A(theta) = 2 pi / max sigma(L_theta)`. The integrand is the Jacobian of
//! `(u, r1, r2) -> (x, y)` times the polar factor `rho`.
//!
//! The Jacobian is homogeneous of degree 4 in `u`, so on the 4-ball it
//! factors into a radial moment and a sum over the 24-cell, which integrates
//! it exactly. What remains is a 2-D Gauss-Legendre rule in `(theta, rho)`,
//! with theta panels graded toward the angles where `A` kinks.

use crate::error::{Error, Result};
use crate::expmap::Flow;
use crate::model::MetricSpec;
use crate::quadrature::{cell24, gauss_jacobi_rho3, gauss_legendre, Rule, SPHERE3_AREA};
use crate::quaternion::{classify_pair, eig_moduli_quat, near_double_angles, SigmaClass, DEFAULT_CLASSIFY_TOL};
use crate::skew::SkewMatrix;
use nalgebra::{DMatrix, Matrix4, Matrix6, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Step in theta for the angular derivative, about `eps^(1/5)`.
const THETA_STEP: f64 = 7.4e-4;
const GRADING_RATIO: f64 = 0.2;
const GRADING_LEVELS: usize = 6;
/// A node whose Jacobians disagree in sign beyond this fraction of the
/// largest one aborts the integration.
pub const SIGN_TOL: f64 = 1e-9;
const U_PER_DRAW: usize = 16;
const MC_CHUNKS: u64 = 64;
const BALL4_VOLUME: f64 = PI * PI / 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureMode {
    Tensor,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Gauss-Legendre nodes per theta panel.
    pub theta_nodes: usize,
    pub r_nodes: usize,
    /// Radial Gauss-Jacobi nodes of the 4-ball rule.
    pub ball_nodes: usize,
    pub mc_samples: usize,
    pub mode: QuadratureMode,
    /// Relative error target; `None` skips the convergence check.
    pub rel_target: Option<f64>,
    pub seed: u64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            theta_nodes: 16,
            r_nodes: 16,
            ball_nodes: 4,
            mc_samples: 1_000_000,
            mode: QuadratureMode::Tensor,
            rel_target: Some(1e-8),
            seed: 42,
        }
    }
}

impl QuadratureConfig {
    pub fn monte_carlo(samples: usize, seed: u64) -> Self {
        Self { mc_samples: samples, mode: QuadratureMode::MonteCarlo, rel_target: None, seed, ..Self::default() }
    }

    /// Same rule with every node count doubled.
    pub fn refined(&self) -> Self {
        Self { theta_nodes: 2 * self.theta_nodes, r_nodes: 2 * self.r_nodes, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [("theta_nodes", self.theta_nodes), ("r_nodes", self.r_nodes), ("ball_nodes", self.ball_nodes)];
        for (name, n) in counts {
            if n < 4 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 4, got {n}")));
            }
        }
        if self.mode == QuadratureMode::MonteCarlo && self.mc_samples < U_PER_DRAW {
            return Err(Error::InvalidArgument(format!("mc_samples must be at least {U_PER_DRAW}")));
        }
        if let Some(t) = self.rel_target {
            if !(t > 0.0) {
                return Err(Error::InvalidArgument("rel_target must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VolumeResult {
    pub value: f64,
    pub error_estimate: f64,
    pub nodes_used: usize,
}

fn require_46(spec: &MetricSpec) -> Result<()> {
    if spec.m() != 4 || spec.k() != 2 {
        return Err(Error::InvalidSpec(format!("volume needs m = 4, k = 2, got m = {}, k = {}", spec.m(), spec.k())));
    }
    Ok(())
}

fn pencil(spec: &MetricSpec, theta: f64) -> Result<SkewMatrix> {
    let (s, c) = theta.sin_cos();
    SkewMatrix::lin_comb(c, spec.l(0), s, spec.l(1))
}

/// `A(theta) = 2 pi / max sigma(L_theta)`, the cut radius of `|r|` at unit time.
pub fn cut_radius(spec: &MetricSpec, theta: f64) -> Result<f64> {
    require_46(spec)?;
    Ok(TAU / eig_moduli_quat(&pencil(spec, theta)?)?.0)
}

/// Flows along `L_{theta + j h}`, `j = -2..=2`, at unit `|r|`.
struct Ray {
    flows: Vec<Flow>,
    l: [Matrix4<f64>; 2],
}

/// Exponential map data at one `(theta, rho)`, ready for any `u`.
struct RayPoint {
    rho: f64,
    m: Matrix4<f64>,
    e: Matrix4<f64>,
    s: [Matrix4<f64>; 2],
    g: [Matrix4<f64>; 2],
    dm: Matrix4<f64>,
    dg: [Matrix4<f64>; 2],
    l: [Matrix4<f64>; 2],
}

fn m4(a: &DMatrix<f64>) -> Matrix4<f64> {
    a.fixed_view::<4, 4>(0, 0).into_owned()
}

impl Ray {
    fn new(spec: &MetricSpec, theta: f64) -> Result<Self> {
        let flows = (-2..=2)
            .map(|j| Ok(Flow::from_generator(spec, &pencil(spec, theta + j as f64 * THETA_STEP)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { flows, l: [m4(spec.l(0).matrix()), m4(spec.l(1).matrix())] })
    }

    fn at(&self, rho: f64) -> RayPoint {
        let mats: Vec<(DMatrix<f64>, Vec<DMatrix<f64>>)> = self.flows.iter().map(|f| f.scaled(rho).matrices(1.0)).collect();
        let coef = [1.0, -8.0, 0.0, 8.0, -1.0];
        let scale = 1.0 / (12.0 * THETA_STEP * rho);
        let mut dm = Matrix4::zeros();
        let mut dg = [Matrix4::zeros(), Matrix4::zeros()];
        for (c, (mm, gg)) in coef.iter().zip(&mats) {
            if *c == 0.0 {
                continue;
            }
            dm += m4(mm) * (c * scale);
            for h in 0..2 {
                dg[h] += m4(&gg[h]) * (c * scale);
            }
        }
        let (m, g) = &mats[2];
        let g = [m4(&g[0]), m4(&g[1])];
        RayPoint {
            rho,
            m: m4(m),
            e: m4(&self.flows[2].scaled(rho).block.exp(1.0)),
            s: [g[0] + g[0].transpose(), g[1] + g[1].transpose()],
            g,
            dm,
            dg,
            l: self.l,
        }
    }
}

impl RayPoint {
    /// Jacobian of `(u, r1, r2) -> (x, y)` at unit time. The `r` columns are
    /// taken along `rho` and `theta / rho`, an orthonormal rotation of the
    /// Cartesian ones, so the determinant is the same.
    fn jacobian(&self, u: &Vector4<f64>) -> f64 {
        let x = self.m * u;
        let v = self.e * u;
        let mut j = Matrix6::zeros();
        j.fixed_view_mut::<4, 4>(0, 0).copy_from(&self.m);
        for h in 0..2 {
            let su = self.s[h] * u;
            for c in 0..4 {
                j[(4 + h, c)] = su[c];
            }
            let y = u.dot(&(self.g[h] * u));
            let ydot = 0.5 * x.dot(&(self.l[h] * v));
            j[(4 + h, 4)] = (ydot - 2.0 * y) / self.rho;
            j[(4 + h, 5)] = u.dot(&(self.dg[h] * u));
        }
        j.fixed_view_mut::<4, 1>(0, 4).copy_from(&((v - x) / self.rho));
        j.fixed_view_mut::<4, 1>(0, 5).copy_from(&(self.dm * u));
        j.determinant()
    }

    /// Sum of the Jacobian over the 24-cell, with its smallest and largest terms.
    fn sphere_sum(&self, design: &[Vector4<f64>]) -> (f64, f64, f64) {
        let mut sum = 0.0;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for w in design {
            let v = self.jacobian(w);
            sum += v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (sum, lo, hi)
    }
}

fn design() -> Vec<Vector4<f64>> {
    cell24().into_iter().map(Vector4::from).collect()
}

fn check_sign(lo: f64, hi: f64, theta: f64, rho: f64) -> Result<()> {
    let scale = lo.abs().max(hi.abs());
    if lo < -SIGN_TOL * scale {
        return Err(Error::NegativeJacobian { value: lo, theta, r: rho });
    }
    Ok(())
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn angle_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Theta panels on `[0, 2 pi)`: split at the near-double angles of every
/// given spec and graded geometrically toward them.
fn theta_panels(specs: &[&MetricSpec]) -> Result<Vec<(f64, f64)>> {
    let mut cuts: Vec<f64> = Vec::new();
    for s in specs {
        for a in near_double_angles(s.l(0), s.l(1))? {
            let a = a.rem_euclid(TAU);
            if cuts.iter().all(|c| angle_dist(*c, a) > 1e-12) {
                cuts.push(a);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    for (i, a) in cuts.iter().enumerate() {
        let b = if i + 1 < cuts.len() { cuts[i + 1] } else { cuts[0] + TAU };
        let half = 0.5 * (b - a);
        let mut pts = vec![*a];
        for lvl in (1..=GRADING_LEVELS).rev() {
            pts.push(a + half * GRADING_RATIO.powi(lvl as i32));
        }
        pts.push(a + half);
        for lvl in 1..=GRADING_LEVELS {
            pts.push(b - half * GRADING_RATIO.powi(lvl as i32));
        }
        pts.push(b);
        out.extend(pts.windows(2).map(|w| (w[0], w[1])));
    }
    Ok(out)
}

fn theta_rule(panels: &[(f64, f64)], n: usize) -> Vec<(f64, f64)> {
    let base = gauss_legendre(n);
    panels
        .iter()
        .flat_map(|(a, b)| {
            let r = base.mapped(*a, *b);
            r.nodes.into_iter().zip(r.weights).collect::<Vec<_>>()
        })
        .collect()
}

/// `int_B |u|^4 d|u|` part of the product rule: the radial moment of the
/// degree-4 Jacobian, times the 24-cell weight.
fn ball_factor(ball_nodes: usize) -> f64 {
    let radial = gauss_jacobi_rho3(ball_nodes);
    let moment: f64 = radial.nodes.iter().zip(&radial.weights).map(|(x, w)| w * x.powi(4)).sum();
    moment * SPHERE3_AREA / 24.0
}

/// `int_0^{2 pi} int_{lo(theta)}^{hi(theta)} f(theta, rho) rho d rho d theta`
/// with `f` the ball integral of the Jacobian of `spec`.
fn integrate_rays(
    spec: &MetricSpec,
    panels: &[(f64, f64)],
    theta_nodes: usize,
    r_rule: &Rule,
    ball_nodes: usize,
    limits: &(dyn Fn(f64) -> Result<(f64, f64)> + Sync),
    check: bool,
) -> Result<f64> {
    let thetas = theta_rule(panels, theta_nodes);
    let sphere = design();
    let factor = ball_factor(ball_nodes);
    let rows: Vec<f64> = thetas
        .par_iter()
        .map(|(theta, wt)| -> Result<f64> {
            let (lo, hi) = limits(*theta)?;
            if lo == hi {
                return Ok(0.0);
            }
            let ray = Ray::new(spec, *theta)?;
            let rr = r_rule.mapped(lo, hi);
            let mut acc = Vec::with_capacity(rr.nodes.len());
            for (rho, wr) in rr.nodes.iter().zip(&rr.weights) {
                let (sum, jlo, jhi) = ray.at(*rho).sphere_sum(&sphere);
                if check {
                    check_sign(jlo, jhi, *theta, *rho)?;
                }
                acc.push(wr * rho * sum);
            }
            Ok(wt * factor * pairwise_sum(&acc))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(&rows))
}

fn tensor_pass(spec: &MetricSpec, theta_nodes: usize, r_nodes: usize, ball_nodes: usize, radius_factor: f64) -> Result<(f64, usize)> {
    let panels = theta_panels(&[spec])?;
    let r_rule = gauss_legendre(r_nodes);
    let limits = |t: f64| Ok((0.0, radius_factor * cut_radius(spec, t)?));
    let v = integrate_rays(spec, &panels, theta_nodes, &r_rule, ball_nodes, &limits, true)?;
    Ok((v, panels.len() * theta_nodes * r_nodes * ball_nodes * 24))
}

fn tensor_volume(spec: &MetricSpec, cfg: &QuadratureConfig, radius_factor: f64) -> Result<VolumeResult> {
    let (fine, nodes) = tensor_pass(spec, cfg.theta_nodes, cfg.r_nodes, cfg.ball_nodes, radius_factor)?;
    let (coarse, _) = tensor_pass(spec, cfg.theta_nodes / 2, cfg.r_nodes / 2, cfg.ball_nodes, radius_factor)?;
    Ok(VolumeResult { value: fine, error_estimate: (fine - coarse).abs(), nodes_used: nodes })
}

fn sample_ball(rng: &mut ChaCha8Rng) -> Vector4<f64> {
    loop {
        let u = Vector4::from_fn(|_, _| 2.0 * rng.random::<f64>() - 1.0);
        if u.norm_squared() <= 1.0 {
            return u;
        }
    }
}

fn monte_carlo_volume(spec: &MetricSpec, cfg: &QuadratureConfig) -> Result<VolumeResult> {
    let draws = cfg.mc_samples.div_ceil(U_PER_DRAW) as u64;
    let chunks: Vec<(f64, f64)> = (0..MC_CHUNKS)
        .into_par_iter()
        .map(|c| -> Result<(f64, f64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(c);
            let count = draws / MC_CHUNKS + u64::from(c < draws % MC_CHUNKS);
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let theta = TAU * rng.random::<f64>();
                let a = cut_radius(spec, theta)?;
                let rho = a * rng.random::<f64>();
                let point = Ray::new(spec, theta)?.at(rho);
                let mut mean = 0.0;
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for _ in 0..U_PER_DRAW {
                    let v = point.jacobian(&sample_ball(&mut rng));
                    lo = lo.min(v);
                    hi = hi.max(v);
                    mean += v / U_PER_DRAW as f64;
                }
                check_sign(lo, hi, theta, rho)?;
                let g = TAU * a * rho * BALL4_VOLUME * mean;
                s1 += g;
                s2 += g * g;
            }
            Ok((s1, s2))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = draws as f64;
    let s1: f64 = chunks.iter().map(|c| c.0).sum();
    let s2: f64 = chunks.iter().map(|c| c.1).sum();
    let mean = s1 / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(VolumeResult { value: mean, error_estimate: 3.0 * (var / n).sqrt(), nodes_used: draws as usize * U_PER_DRAW })
}

/// Unit-ball volume without the normalization requirement, in the coordinates
/// fixed by the given matrices.
pub fn unit_ball_volume(spec: &MetricSpec, cfg: &QuadratureConfig) -> Result<VolumeResult> {
    require_46(spec)?;
    cfg.validate()?;
    let res = match cfg.mode {
        QuadratureMode::Tensor => tensor_volume(spec, cfg, 1.0)?,
        QuadratureMode::MonteCarlo => monte_carlo_volume(spec, cfg)?,
    };
    if let Some(t) = cfg.rel_target {
        if res.error_estimate > t * res.value.abs() {
            return Err(Error::NonConvergence { estimate: res.error_estimate, target: t * res.value.abs() });
        }
    }
    Ok(res)
}

/// Volume of the nilpotent unit ball for the Popp measure; the matrices must
/// be Hilbert-Schmidt orthonormal.
pub fn nilpotent_ball_volume(spec: &MetricSpec, cfg: &QuadratureConfig) -> Result<VolumeResult> {
    require_46(spec)?;
    if !spec.is_normalized() {
        return Err(Error::NotNormalized);
    }
    unit_ball_volume(spec, cfg)
}

/// `2^(2n - m) / V`.
pub fn density_from_volume(spec: &MetricSpec, volume: &VolumeResult) -> f64 {
    2f64.powi(spec.hausdorff_dimension() as i32) / volume.value
}

/// Spherical Hausdorff density with respect to the Popp measure.
pub fn density(spec: &MetricSpec, cfg: &QuadratureConfig) -> Result<f64> {
    let v = nilpotent_ball_volume(spec, cfg)?;
    Ok(density_from_volume(spec, &v))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepFlag {
    /// Derivative from a one-sided difference at the end of the grid.
    OneSided,
    /// The derivative jump exceeds the continuity tolerance.
    Jump,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub parameter: f64,
    pub volume: f64,
    pub error_estimate: f64,
    pub dv_dp: f64,
    pub sigma_class: SigmaClass,
    pub flags: Vec<SweepFlag>,
}

/// Continuity measure of the difference quotients between grid points
/// `index` and `index + 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JumpSample {
    pub index: usize,
    pub jump: f64,
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub jumps: Vec<JumpSample>,
    /// A jump is flagged when it exceeds this multiple of its noise.
    pub jump_factor: f64,
}

impl SweepTable {
    pub fn max_jump_ratio(&self) -> f64 {
        self.jumps.iter().map(|j| j.jump / j.noise).fold(0.0, f64::max)
    }
}

pub const JUMP_FACTOR: f64 = 5.0;

/// Volume along a one-parameter family with centered difference quotients.
///
/// With `D_i` the centered quotient, the jump between grid points `i` and
/// `i + 1` is the departure of `D_{i+1} - D_i` from the mean of the two
/// neighbouring increments. A step in the derivative shows up at full size,
/// smooth variation only at third order in the spacing. Its noise is the
/// quadrature error of the volumes involved, propagated through the same
/// linear combination.
pub fn family_sweep<F>(family: F, grid: &[f64], cfg: &QuadratureConfig) -> Result<SweepTable>
where
    F: Fn(f64) -> Result<MetricSpec>,
{
    if grid.len() < 2 {
        return Err(Error::InvalidArgument("sweep needs at least two grid points".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("sweep grid must be strictly increasing".into()));
    }
    let mut vols = Vec::with_capacity(grid.len());
    let mut classes = Vec::with_capacity(grid.len());
    for p in grid {
        let spec = family(*p)?;
        vols.push(unit_ball_volume(&spec, &QuadratureConfig { rel_target: None, ..cfg.clone() })?);
        classes.push(classify_pair(spec.l(0), spec.l(1), DEFAULT_CLASSIFY_TOL)?.sigma_class);
    }
    Ok(sweep_table(grid, &vols, &classes))
}

// D_i = (V_{i+1} - V_{i-1}) / (p_{i+1} - p_{i-1}) as coefficients on V.
fn centered_coefficients(grid: &[f64], i: usize) -> Vec<(usize, f64)> {
    let h = grid[i + 1] - grid[i - 1];
    vec![(i + 1, 1.0 / h), (i - 1, -1.0 / h)]
}

fn sweep_table(grid: &[f64], vols: &[VolumeResult], classes: &[SigmaClass]) -> SweepTable {
    let n = grid.len();
    let quotient = |i: usize, j: usize| (vols[j].value - vols[i].value) / (grid[j] - grid[i]);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
        let mut flags = Vec::new();
        if a == i || b == i {
            flags.push(SweepFlag::OneSided);
        }
        rows.push(SweepRow {
            parameter: grid[i],
            volume: vols[i].value,
            error_estimate: vols[i].error_estimate,
            dv_dp: quotient(a, b),
            sigma_class: classes[i],
            flags,
        });
    }
    // Delta D_i = D_{i+1} - D_i, compared with the mean of Delta D_{i-1}, Delta D_{i+1}.
    let mut jumps = Vec::new();
    for i in 2..n.saturating_sub(3) {
        let mut coef = vec![0.0; n];
        for (d, w) in [(i - 1, 0.5), (i, -1.5), (i + 1, 1.5), (i + 2, -0.5)] {
            for (j, c) in centered_coefficients(grid, d) {
                coef[j] += w * c;
            }
        }
        let jump = coef.iter().zip(vols).map(|(c, v)| c * v.value).sum::<f64>().abs();
        let noise = coef.iter().zip(vols).map(|(c, v)| c.abs() * v.error_estimate).sum::<f64>();
        if jump > JUMP_FACTOR * noise {
            rows[i].flags.push(SweepFlag::Jump);
            rows[i + 1].flags.push(SweepFlag::Jump);
        }
        jumps.push(JumpSample { index: i, jump, noise });
    }
    SweepTable { rows, jumps, jump_factor: JUMP_FACTOR }
}

/// `W(p) = int_theta int_{A(theta, p0)}^{A(theta, p)} f(theta, rho, p) rho d rho d theta`.
pub fn w_component(spec: &MetricSpec, base: &MetricSpec, cfg: &QuadratureConfig) -> Result<f64> {
    require_46(spec)?;
    require_46(base)?;
    cfg.validate()?;
    let panels = theta_panels(&[spec, base])?;
    let r_rule = gauss_legendre(cfg.r_nodes);
    let limits = |t: f64| Ok((cut_radius(base, t)?, cut_radius(spec, t)?));
    integrate_rays(spec, &panels, cfg.theta_nodes, &r_rule, cfg.ball_nodes, &limits, false)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WPoint {
    pub parameter: f64,
    pub dw_dp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WProbe {
    pub base: f64,
    pub left: Vec<WPoint>,
    pub right: Vec<WPoint>,
    /// Log-log slopes of `|dW/dp|` against the distance to `base`.
    pub left_exponent: f64,
    pub right_exponent: f64,
}

fn loglog_slope(pts: &[WPoint], base: f64) -> f64 {
    let xs: Vec<f64> = pts.iter().map(|p| (p.parameter - base).abs().ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.dw_dp.abs().max(f64::MIN_POSITIVE).ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Centered differences of `W` (with the inner limit frozen at `base`) at
/// `base +- d` for each offset `d`, step `d / 8`.
pub fn w_probe<F>(family: F, base: f64, offsets: &[f64], cfg: &QuadratureConfig) -> Result<WProbe>
where
    F: Fn(f64) -> Result<MetricSpec>,
{
    if offsets.len() < 2 || offsets.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::InvalidArgument("w_probe needs at least two positive offsets".into()));
    }
    let b = family(base)?;
    let dw = |p: f64, h: f64| -> Result<f64> {
        let hi = w_component(&family(p + h)?, &b, cfg)?;
        let lo = w_component(&family(p - h)?, &b, cfg)?;
        Ok((hi - lo) / (2.0 * h))
    };
    let mut left = Vec::new();
    let mut right = Vec::new();
    for d in offsets {
        left.push(WPoint { parameter: base - d, dw_dp: dw(base - d, d / 8.0)? });
        right.push(WPoint { parameter: base + d, dw_dp: dw(base + d, d / 8.0)? });
    }
    let left_exponent = loglog_slope(&left, base);
    let right_exponent = loglog_slope(&right, base);
    Ok(WProbe { base, left, right, left_exponent, right_exponent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expmap::exp_unit_time;
    use crate::model::Covector;
    use crate::quaternion::{basis, QuatBasis};
    use crate::sampling::{random_spec, random_unit};
    use nalgebra::DVector;

    fn ii_hat() -> MetricSpec {
        MetricSpec::new(vec![basis(QuatBasis::I), basis(QuatBasis::IHat)]).unwrap()
    }

    // Central differences of the unit-time map in Cartesian (u, r1, r2).
    fn fd_jacobian(spec: &MetricSpec, u: &[f64; 4], r: [f64; 2]) -> f64 {
        let base: Vec<f64> = u.iter().chain(r.iter()).copied().collect();
        let eval = |z: &[f64]| exp_unit_time(spec, &Covector::from_slices(&z[..4], &z[4..])).unwrap().stacked();
        let h = 1e-5;
        let mut j = DMatrix::zeros(6, 6);
        for c in 0..6 {
            let mut p = base.clone();
            let mut q = base.clone();
            p[c] += h;
            q[c] -= h;
            j.set_column(c, &((eval(&p) - eval(&q)) / (2.0 * h)));
        }
        j.determinant()
    }

    #[test]
    fn ray_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let spec = random_spec(&mut rng, 4, 2, true);
            let theta = TAU * rng.random::<f64>();
            let rho = cut_radius(&spec, theta).unwrap() * rng.random_range(0.05..0.95);
            let u = random_unit(&mut rng, 4) * rng.random_range(0.3..1.0);
            let u = [u[0], u[1], u[2], u[3]];
            let got = Ray::new(&spec, theta).unwrap().at(rho).jacobian(&Vector4::from(u));
            let want = fd_jacobian(&spec, &u, [rho * theta.cos(), rho * theta.sin()]);
            assert!((got - want).abs() < 1e-6 * want.abs().max(1e-3), "{got} vs {want}");
        }
    }

    #[test]
    fn jacobian_is_homogeneous_of_degree_four() {
        let spec = random_spec(&mut ChaCha8Rng::seed_from_u64(8), 4, 2, true);
        let p = Ray::new(&spec, 0.7).unwrap().at(0.8 * cut_radius(&spec, 0.7).unwrap());
        let u = Vector4::new(0.3, -0.5, 0.2, 0.6);
        for c in [0.1, 0.5, 2.0] {
            let a = p.jacobian(&(u * c));
            let b = c.powi(4) * p.jacobian(&u);
            assert!((a - b).abs() < 1e-11 * b.abs());
        }
    }

    #[test]
    fn ball_rule_product_form_agrees() {
        let spec = random_spec(&mut ChaCha8Rng::seed_from_u64(9), 4, 2, true);
        let p = Ray::new(&spec, 2.0).unwrap().at(0.5 * cut_radius(&spec, 2.0).unwrap());
        let radial = gauss_jacobi_rho3(5);
        let mut direct = 0.0;
        for (rho, w) in radial.nodes.iter().zip(&radial.weights) {
            for d in design() {
                direct += w * SPHERE3_AREA / 24.0 * p.jacobian(&(d * *rho));
            }
        }
        let (sum, _, _) = p.sphere_sum(&design());
        assert!((direct - ball_factor(5) * sum).abs() < 1e-13 * direct.abs());
        assert!((ball_factor(4) - SPHERE3_AREA / 192.0).abs() < 1e-15);
    }

    #[test]
    fn sphere_design_is_exact_for_the_jacobian() {
        // A random rotation of the design gives the same sum for a degree-4 form.
        let spec = random_spec(&mut ChaCha8Rng::seed_from_u64(10), 4, 2, true);
        let p = Ray::new(&spec, 1.1).unwrap().at(0.6 * cut_radius(&spec, 1.1).unwrap());
        let q = nalgebra::QR::new(Matrix4::from_fn(|i, j| ((i * 7 + j * 3) as f64).sin())).q();
        let rotated: Vec<Vector4<f64>> = design().iter().map(|d| q * d).collect();
        let (a, _, _) = p.sphere_sum(&design());
        let (b, _, _) = p.sphere_sum(&rotated);
        assert!((a - b).abs() < 1e-12 * a.abs());
    }

    #[test]
    fn integrand_is_positive_before_cut() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let spec = random_spec(&mut rng, 4, 2, true);
            for i in 0..8 {
                let theta = i as f64 * TAU / 8.0;
                let a = cut_radius(&spec, theta).unwrap();
                let ray = Ray::new(&spec, theta).unwrap();
                for f in [0.01, 0.5, 0.99] {
                    let (_, lo, _) = ray.at(f * a).sphere_sum(&design());
                    assert!(lo > 0.0, "theta {theta} rho {}", f * a);
                }
            }
        }
    }

    #[test]
    fn beyond_conjugate_locus_aborts() {
        let spec = random_spec(&mut ChaCha8Rng::seed_from_u64(12), 4, 2, true);
        let err = tensor_volume(&spec, &QuadratureConfig::default(), 3.0).unwrap_err();
        assert!(matches!(err, Error::NegativeJacobian { .. }), "{err:?}");
    }

    #[test]
    fn refinement_stays_within_estimate() {
        let spec = ii_hat();
        let cfg = QuadratureConfig::default();
        let a = nilpotent_ball_volume(&spec, &cfg).unwrap();
        let b = nilpotent_ball_volume(&spec, &cfg.refined()).unwrap();
        assert!((a.value - b.value).abs() <= a.error_estimate.max(1e-14 * a.value));
        assert!(a.value > 0.0);
    }

    #[test]
    fn scaling_exponent_is_two() {
        let spec = random_spec(&mut ChaCha8Rng::seed_from_u64(13), 4, 2, true);
        let cfg = QuadratureConfig::default();
        let v: Vec<f64> = [1.0, 2.0, 4.0]
            .iter()
            .map(|s| unit_ball_volume(&spec.scaled(*s).unwrap(), &cfg).unwrap().value)
            .collect();
        for (i, s) in [2.0f64, 4.0].iter().enumerate() {
            let exponent = (v[i + 1] / v[0]).ln() / s.ln();
            assert!((exponent - 2.0).abs() < 1e-8, "exponent {exponent}");
        }
    }

    #[test]
    fn invariant_under_isometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let spec = random_spec(&mut rng, 4, 2, true);
        let cfg = QuadratureConfig::default();
        let v0 = nilpotent_ball_volume(&spec, &cfg).unwrap();
        let q = nalgebra::QR::new(DMatrix::from_fn(4, 4, |_, _| rng.random::<f64>() - 0.5)).q();
        let conj = spec.conjugated(&q).unwrap();
        let rot = spec.rotated(0.9).unwrap();
        for s in [conj, rot] {
            let v = nilpotent_ball_volume(&s, &cfg).unwrap();
            assert!((v.value - v0.value).abs() <= 3.0 * v0.error_estimate.max(v.error_estimate).max(1e-13 * v0.value));
        }
    }

    #[test]
    fn density_times_volume_is_256() {
        let spec = ii_hat();
        let cfg = QuadratureConfig::default();
        let v = nilpotent_ball_volume(&spec, &cfg).unwrap();
        let d = density(&spec, &cfg).unwrap();
        assert_eq!(d, 256.0 / v.value);
        assert!((d * v.value - 256.0).abs() <= 2.0 * f64::EPSILON * 256.0);
    }

    #[test]
    fn monte_carlo_agrees_with_tensor() {
        let spec = random_spec(&mut ChaCha8Rng::seed_from_u64(15), 4, 2, true);
        let t = nilpotent_ball_volume(&spec, &QuadratureConfig::default()).unwrap();
        let mc = nilpotent_ball_volume(&spec, &QuadratureConfig::monte_carlo(40_000, 7)).unwrap();
        assert!((t.value - mc.value).abs() <= t.error_estimate + mc.error_estimate, "{t:?} {mc:?}");
        assert!(mc.error_estimate < 0.05 * mc.value);
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let spec = ii_hat();
        let cfg = QuadratureConfig::monte_carlo(4_000, 1);
        let a = nilpotent_ball_volume(&spec, &cfg).unwrap();
        let b = nilpotent_ball_volume(&spec, &cfg).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn constant_family_has_zero_derivative() {
        let spec = ii_hat();
        let grid = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
        let table = family_sweep(|_| Ok(spec.clone()), &grid, &QuadratureConfig::default()).unwrap();
        for row in &table.rows {
            assert!(row.dv_dp.abs() < 1e-10, "{row:?}");
        }
        assert!(table.rows[0].flags.contains(&SweepFlag::OneSided));
        assert_eq!(table.jumps.len(), 1);
    }

    fn synthetic(f: impl Fn(f64) -> f64, noise: f64) -> SweepTable {
        let grid: Vec<f64> = (0..64).map(|i| -0.5 + i as f64 / 63.0).collect();
        let vols: Vec<VolumeResult> =
            grid.iter().map(|p| VolumeResult { value: f(*p), error_estimate: noise, nodes_used: 0 }).collect();
        sweep_table(&grid, &vols, &[SigmaClass::NonCritical; 64])
    }

    #[test]
    fn jump_metric_separates_kinks_from_smooth_curvature() {
        let smooth = synthetic(|p| 1.0 + 0.3 * p * p - 0.2 * p.powi(3), 1e-10);
        assert!(smooth.max_jump_ratio() < 1.0, "{}", smooth.max_jump_ratio());
        // A derivative step of 1e-4 at p = 0.1.
        let kinked = synthetic(|p| 1.0 + 0.3 * p * p + 1e-4 * (p - 0.1).max(0.0), 1e-10);
        assert!(kinked.max_jump_ratio() > 100.0);
        let flagged: Vec<usize> =
            (0..64).filter(|i| kinked.rows[*i].flags.contains(&SweepFlag::Jump)).collect();
        assert!(flagged.iter().all(|i| (kinked.rows[*i].parameter - 0.1).abs() < 0.05), "{flagged:?}");
    }

    #[test]
    fn w_vanishes_at_base() {
        let spec = random_spec(&mut ChaCha8Rng::seed_from_u64(16), 4, 2, true);
        assert_eq!(w_component(&spec, &spec, &QuadratureConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = QuadratureConfig::default();
        let raw = MetricSpec::new(vec![basis(QuatBasis::I).scaled(2.0), basis(QuatBasis::JHat)]).unwrap();
        assert_eq!(nilpotent_ball_volume(&raw, &cfg).unwrap_err(), Error::NotNormalized);
        let m5 = random_spec(&mut ChaCha8Rng::seed_from_u64(1), 5, 2, true);
        assert!(matches!(nilpotent_ball_volume(&m5, &cfg), Err(Error::InvalidSpec(_))));
        let bad = QuadratureConfig { r_nodes: 3, ..cfg.clone() };
        assert!(matches!(nilpotent_ball_volume(&ii_hat(), &bad), Err(Error::InvalidArgument(_))));
        let tight = QuadratureConfig { theta_nodes: 4, r_nodes: 4, rel_target: Some(1e-15), ..cfg };
        assert!(matches!(nilpotent_ball_volume(&ii_hat(), &tight), Err(Error::NonConvergence { .. })));
        let _ = DVector::<f64>::zeros(1);
    }
}
