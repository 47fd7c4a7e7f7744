//! Quadrature helpers: Gauss-Legendre rules and trapezoid sums.

use std::f64::consts::PI;

/// Legendre polynomial P_n and derivative P_n' at t, by upward recurrence.
fn legendre_pd(n: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    // P_n' from the standard identity; the nodes keep |t| < 1 strictly.
    let dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, dp)
}

/// Gauss-Legendre nodes and weights on [-1, 1], ascending nodes.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        // Tricomi initial guess, then Newton.
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_pd(n, t);
            let dt = p / dp;
            t -= dt;
            if dt.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_pd(n, t);
        let wi = 2.0 / ((1.0 - t * t) * dp * dp);
        x[i] = -t;
        x[n - 1 - i] = t;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Gauss-Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let hal = 0.5 * (b - a);
    (
        x.iter().map(|&t| mid + hal * t).collect(),
        w.iter().map(|&v| hal * v).collect(),
    )
}

/// Trapezoid integral of samples ys on the (possibly nonuniform) grid xs.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let mut acc = 0.0;
    for i in 1..xs.len() {
        acc += 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1]);
    }
    acc
}

/// Cumulative trapezoid, starting at 0.
pub fn cumtrapz(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; xs.len()];
    for i in 1..xs.len() {
        out[i] = out[i - 1] + 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(12);
        // exact for degree <= 2*12-1
        for k in 0..20usize {
            let num: f64 = x.iter().zip(&w).map(|(&t, &v)| v * t.powi(k as i32)).sum();
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            assert!((num - exact).abs() < 1e-13, "k={k}: {num} vs {exact}");
        }
    }

    #[test]
    fn gl_mapped_interval() {
        let (x, w) = gauss_legendre_on(40, 0.0, PI);
        let s: f64 = x.iter().zip(&w).map(|(&t, &v)| v * t.sin()).sum();
        assert!((s - 2.0).abs() < 1e-13);
    }

    #[test]
    fn trapezoid_linear_exact() {
        let xs: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 3.0 * x + 1.0).collect();
        assert!((trapezoid(&xs, &ys) - 2.5).abs() < 1e-12);
    }
}
