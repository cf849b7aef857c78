//! Gauss-Legendre rules and adaptive one-dimensional integration.

use std::sync::OnceLock;

use crate::error::{Error, Result};

const MAX_ORDER: usize = 64;

/// Nodes and weights of the `order`-point rule on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static TABLE: OnceLock<Vec<(Vec<f64>, Vec<f64>)>> = OnceLock::new();
    let table = TABLE.get_or_init(|| (0..=MAX_ORDER).map(compute_rule).collect());
    &table[order.clamp(1, MAX_ORDER)]
}

fn compute_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 0 {
        return (vec![], vec![]);
    }
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-like initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        xs[i] = -x;
        xs[n - 1 - i] = x;
        ws[i] = w;
        ws[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        xs[n / 2] = 0.0;
    }
    (xs, ws)
}

/// Value and derivative of the Legendre polynomial `P_n` at `x`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = if n == 0 { 0.0 } else { n as f64 * (x * p1 - p0) / (x * x - 1.0) };
    (p, d)
}

/// Calls `f(x, w)` for the `order`-point rule mapped to `[a, b]`.
pub fn for_each_node(a: f64, b: f64, order: usize, mut f: impl FnMut(f64, f64)) {
    let (xs, ws) = gauss_legendre(order);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    for (x, w) in xs.iter().zip(ws) {
        f(mid + half * x, half * w);
    }
}

/// Fixed-order rule on `[a, b]`.
pub fn fixed(a: f64, b: f64, order: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    let mut s = 0.0;
    for_each_node(a, b, order, |x, w| s += w * f(x));
    s
}

/// Adaptive bisection with a 10-point rule until the two-half estimate agrees
/// with the whole-interval estimate to `tol` (absolute).
pub fn adaptive(
    a: f64,
    b: f64,
    tol: f64,
    max_depth: usize,
    mut f: impl FnMut(f64) -> f64,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let whole = fixed(a, b, 10, &mut f);
    let mut err = 0.0;
    let v = adapt(a, b, whole, tol, max_depth, &mut f, &mut err);
    if err > tol {
        return Err(Error::Accuracy(format!(
            "adaptive quadrature on [{a}, {b}] left error estimate {err:.3e} > {tol:.3e}"
        )));
    }
    Ok(v)
}

fn adapt(
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: usize,
    f: &mut impl FnMut(f64) -> f64,
    err: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let l = fixed(a, m, 10, &mut *f);
    let r = fixed(m, b, 10, &mut *f);
    let diff = (l + r - whole).abs();
    if diff <= tol || depth == 0 {
        if diff > tol {
            *err += diff;
        }
        return l + r;
    }
    adapt(a, m, l, 0.5 * tol, depth - 1, f, err) + adapt(m, b, r, 0.5 * tol, depth - 1, f, err)
}

/// Nested adaptive integral over `{a <= x <= b, lo(x) <= y <= hi(x)}`.
pub fn adaptive_2d(
    a: f64,
    b: f64,
    lo: impl Fn(f64) -> f64,
    hi: impl Fn(f64) -> f64,
    tol: f64,
    f: impl Fn(f64, f64) -> f64,
) -> Result<f64> {
    let mut inner_err: Option<Error> = None;
    let width = (b - a).abs().max(1e-300);
    let v = adaptive(a, b, tol, 30, |x| {
        let (l, h) = (lo(x), hi(x));
        if h <= l {
            return 0.0;
        }
        match adaptive(l, h, tol / width, 30, |y| f(x, y)) {
            Ok(v) => v,
            Err(e) => {
                inner_err.get_or_insert(e);
                0.0
            }
        }
    })?;
    match inner_err {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules_integrate_polynomials_exactly() {
        for order in 1..=20 {
            let deg = 2 * order - 1;
            let v = fixed(-1.0, 2.0, order, |x| x.powi(deg as i32));
            let exact = (2f64.powi(deg as i32 + 1) - 1.0) / (deg as f64 + 1.0);
            assert!((v - exact).abs() < 1e-11 * exact.abs().max(1.0), "order {order}");
        }
    }

    #[test]
    fn weights_sum_to_two() {
        for order in [1, 2, 7, 16, 33, 64] {
            let (xs, ws) = gauss_legendre(order);
            assert_eq!(xs.len(), order);
            assert!((ws.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn adaptive_handles_kinks() {
        let v = adaptive(0.0, 1.0, 1e-12, 40, |x| (x - 1.0 / 3.0).abs()).unwrap();
        assert!((v - 5.0 / 18.0).abs() < 1e-11);
        let v = adaptive(0.0, 14.0, 1e-12, 40, |x| (-x).exp()).unwrap();
        assert!((v - (1.0 - (-14f64).exp())).abs() < 1e-11);
    }

    #[test]
    fn adaptive_2d_triangle() {
        let v = adaptive_2d(0.0, 1.0, |_| 0.0, |x| 1.0 - x, 1e-11, |x, y| x * y).unwrap();
        assert!((v - 1.0 / 24.0).abs() < 1e-11);
    }
}
