//! Fixed quadrature rules used by the volume integrator.

use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::PI;

/// Nodes and weights of a one-dimensional rule.
#[derive(Clone, Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Affine map of a rule on `[-1, 1]` to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> Rule {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        Rule {
            nodes: self.nodes.iter().map(|x| mid + half * x).collect(),
            weights: self.weights.iter().map(|w| w * half).collect(),
        }
    }
}

/// Gauss-Legendre rule with `n` nodes on `[-1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Rule { nodes, weights }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss rule for `int_0^1 rho^3 g(rho) d rho` with `n` nodes (Golub-Welsch).
pub fn gauss_jacobi_rho3(n: usize) -> Rule {
    assert!(n >= 1);
    let (alpha, beta) = (0.0_f64, 3.0_f64);
    let ab = alpha + beta;
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        let s = 2.0 * kf + ab;
        jac[(k, k)] = (beta * beta - alpha * alpha) / (s * (s + 2.0));
        if k + 1 < n {
            let j = kf + 1.0;
            let s = 2.0 * j + ab;
            let b = 4.0 * j * (j + alpha) * (j + beta) * (j + ab) / (s * s * (s + 1.0) * (s - 1.0));
            jac[(k, k + 1)] = b.sqrt();
            jac[(k + 1, k)] = b.sqrt();
        }
    }
    let eig = SymmetricEigen::new(jac);
    // int_{-1}^{1} (1+x)^3 dx = 4
    let mu0 = 4.0;
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v * v)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // rho = (1 + x) / 2, rho^3 d rho = (1 + x)^3 dx / 16
    Rule {
        nodes: pairs.iter().map(|p| 0.5 * (1.0 + p.0)).collect(),
        weights: pairs.iter().map(|p| p.1 / 16.0).collect(),
    }
}

/// The 24 Hurwitz unit quaternions (vertices of the 24-cell), a spherical
/// 5-design on the unit 3-sphere.
pub fn cell24() -> Vec<[f64; 4]> {
    let mut pts = Vec::with_capacity(24);
    for i in 0..4 {
        for s in [1.0, -1.0] {
            let mut p = [0.0; 4];
            p[i] = s;
            pts.push(p);
        }
    }
    for mask in 0..16u32 {
        let mut p = [0.5; 4];
        for (i, c) in p.iter_mut().enumerate() {
            if mask & (1 << i) != 0 {
                *c = -0.5;
            }
        }
        pts.push(p);
    }
    pts
}

/// Surface area of the unit 3-sphere.
pub const SPHERE3_AREA: f64 = 2.0 * PI * PI;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        for n in 1..20 {
            let r = gauss_legendre(n);
            for k in 0..(2 * n) {
                let got: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(k as i32)).sum();
                let want = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                assert!((got - want).abs() < 1e-13, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn jacobi_integrates_weighted_polynomials() {
        for n in 1..10 {
            let r = gauss_jacobi_rho3(n);
            for k in 0..(2 * n) {
                let got: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(k as i32)).sum();
                assert!((got - 1.0 / (k as f64 + 4.0)).abs() < 1e-14, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn cell24_is_a_five_design() {
        // Spherical averages of x1^2, x1^4, x1^2 x2^2 on S^3 are 1/4, 1/8, 1/24.
        let pts = cell24();
        assert_eq!(pts.len(), 24);
        let avg = |f: &dyn Fn(&[f64; 4]) -> f64| pts.iter().map(f).sum::<f64>() / 24.0;
        assert!((avg(&|p| p[0] * p[0]) - 0.25).abs() < 1e-15);
        assert!((avg(&|p| p[0].powi(4)) - 0.125).abs() < 1e-15);
        assert!((avg(&|p| p[0] * p[0] * p[1] * p[1]) - 1.0 / 24.0).abs() < 1e-15);
        assert!(avg(&|p| p[0] * p[1] * p[2]).abs() < 1e-15);
        assert!(avg(&|p| p[0].powi(5)).abs() < 1e-15);
        for p in &pts {
            assert!((p.iter().map(|c| c * c).sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }
}
