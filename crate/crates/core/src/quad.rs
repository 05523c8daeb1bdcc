//! Gauss–Legendre and Gauss–Lobatto rules mapped onto an interval.

use crate::poly::Interval;
use std::f64::consts::PI;

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn map(nodes: &[f64], weights: &[f64], iv: Interval) -> (Vec<f64>, Vec<f64>) {
    let half = 0.5 * iv.len();
    let mid = 0.5 * (iv.lo + iv.hi);
    (
        nodes.iter().map(|&x| mid + half * x).collect(),
        weights.iter().map(|&w| w * half).collect(),
    )
}

/// `n`-point Gauss–Legendre nodes and weights on `iv`, ascending.
pub fn gauss_legendre(n: usize, iv: Interval) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, z);
        x[n - 1 - i] = z;
        w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    map(&x, &w, iv)
}

/// `n`-point Gauss–Lobatto nodes (endpoints included) and weights on `iv`.
pub fn gauss_lobatto(n: usize, iv: Interval) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let m = n - 1;
    let mut x = vec![0.0; n];
    x[0] = -1.0;
    x[m] = 1.0;
    // Interior nodes are the roots of P_m'. Newton on P_m' using
    // P_m'' = (2x P_m' - m(m+1) P_m) / (1 - x^2).
    for i in 1..m {
        let mut z = -(PI * i as f64 / m as f64).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(m, z);
            let ddp = (2.0 * z * dp - (m * (m + 1)) as f64 * p) / (1.0 - z * z);
            let dz = dp / ddp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
    }
    let c = 2.0 / (m * (m + 1)) as f64;
    let w: Vec<f64> = x
        .iter()
        .map(|&z| {
            let (p, _) = legendre(m, z);
            c / (p * p)
        })
        .collect();
    map(&x, &w, iv)
}

/// Composite trapezoid weights on a uniform grid of `n` points over `iv`.
pub fn trapezoid(n: usize, iv: Interval) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let h = iv.len() / (n - 1) as f64;
    let x = (0..n).map(|k| iv.lo + h * k as f64).collect();
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate(x: &[f64], w: &[f64], f: impl Fn(f64) -> f64) -> f64 {
        x.iter().zip(w).map(|(&a, &b)| b * f(a)).sum()
    }

    #[test]
    fn legendre_exact_to_degree_2n_minus_1() {
        let iv = Interval::delay(0.7);
        let (x, w) = gauss_legendre(6, iv);
        for k in 0..12 {
            let q = integrate(&x, &w, |s| s.powi(k as i32));
            assert!((q - iv.monomial_integral(k)).abs() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn lobatto_includes_endpoints_and_is_exact() {
        let iv = Interval::delay(1.3);
        let (x, w) = gauss_lobatto(7, iv);
        assert!((x[0] + 1.3).abs() < 1e-15 && x[6].abs() < 1e-15);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
        for k in 0..=(2 * 7 - 3) {
            let q = integrate(&x, &w, |s| s.powi(k as i32));
            assert!((q - iv.monomial_integral(k)).abs() < 1e-13, "k={k}");
        }
    }

    #[test]
    fn trapezoid_is_exact_for_lines() {
        let iv = Interval::delay(2.0);
        let (x, w) = trapezoid(5, iv);
        assert!((integrate(&x, &w, |s| 3.0 * s + 1.0) - (-6.0 + 2.0)).abs() < 1e-14);
    }
}
