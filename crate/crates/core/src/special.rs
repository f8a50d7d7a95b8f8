//! Scalar kernels shared by the closed-form geodesic formulas.
//!
//! `e1(mu)` is the mean of `exp(i mu s)` over `s in [0, 1]`, and
//! `double_phase(alpha, beta)` is the iterated integral
//! `int_0^1 int_0^s exp(i (alpha sigma + beta s)) dsigma ds`.
//! Both are entire functions; the evaluation switches to power series near
//! the removable singularities.

use num_complex::Complex64;

/// `sin(x) / x` with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// `(exp(i mu) - 1) / (i mu)`.
pub fn e1(mu: f64) -> Complex64 {
    let h = sinc(0.5 * mu);
    Complex64::new(sinc(mu), 0.5 * mu * h * h)
}

const SWITCH: f64 = 0.5;
const SERIES_TERMS: usize = 24;

/// Iterated phase integral `int_0^1 int_0^s exp(i (alpha sigma + beta s)) dsigma ds`.
pub fn double_phase(alpha: f64, beta: f64) -> Complex64 {
    let i = Complex64::i();
    if alpha.abs() >= SWITCH {
        (e1(alpha + beta) - e1(beta)) / (i * alpha)
    } else if beta.abs() >= SWITCH {
        (Complex64::from_polar(1.0, beta) * e1(alpha) - e1(alpha + beta)) / (i * beta)
    } else {
        series(alpha, beta)
    }
}

fn series(alpha: f64, beta: f64) -> Complex64 {
    let mut pa = [Complex64::new(0.0, 0.0); SERIES_TERMS];
    let mut pb = [Complex64::new(0.0, 0.0); SERIES_TERMS];
    pa[0] = Complex64::new(1.0, 0.0);
    pb[0] = Complex64::new(1.0, 0.0);
    for n in 1..SERIES_TERMS {
        pa[n] = pa[n - 1] * Complex64::new(0.0, alpha) / n as f64;
        pb[n] = pb[n - 1] * Complex64::new(0.0, beta) / n as f64;
    }
    let mut sum = Complex64::new(0.0, 0.0);
    for n in (0..SERIES_TERMS).rev() {
        for k in (0..SERIES_TERMS - n).rev() {
            sum += pa[n] * pb[k] / ((n + 1) as f64 * (n + k + 2) as f64);
        }
    }
    sum
}
