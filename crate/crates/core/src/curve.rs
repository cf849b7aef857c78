//! Monotone one-dimensional curves used as region boundaries in the plane.

use std::sync::Arc;

use crate::error::{Error, Result};

/// A scalar function of one variable, monotone on the interval where it is used.
#[derive(Clone, Debug)]
pub enum Curve {
    /// `a + b x`.
    Affine { a: f64, b: f64 },
    /// `(a + b x) / (c + d x)`.
    Rational { a: f64, b: f64, c: f64, d: f64 },
    /// Pointwise minimum of the given curves.
    Min(Vec<Curve>),
    /// Monotone cubic interpolation of samples.
    Sampled(Arc<MonotoneCubic>),
    /// Inverse of a strictly monotone curve, searched on `[lo, hi]`.
    Inverse { inner: Arc<Curve>, lo: f64, hi: f64 },
}

impl Curve {
    pub fn constant(v: f64) -> Self {
        Curve::Affine { a: v, b: 0.0 }
    }

    pub fn line(a: f64, b: f64) -> Self {
        Curve::Affine { a, b }
    }

    /// Concave piecewise-linear `min_k (a_k + b_k x)`.
    pub fn min_affine(lines: &[(f64, f64)]) -> Self {
        Curve::Min(lines.iter().map(|&(a, b)| Curve::Affine { a, b }).collect())
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Curve::Affine { a, b } => a + b * x,
            Curve::Rational { a, b, c, d } => (a + b * x) / (c + d * x),
            Curve::Min(cs) => cs.iter().map(|c| c.eval(x)).fold(f64::INFINITY, f64::min),
            Curve::Sampled(s) => s.eval(x),
            Curve::Inverse { inner, lo, hi } => invert(inner, x, *lo, *hi),
        }
    }

    /// Right derivative (`right = true`) or left derivative.
    pub fn deriv_side(&self, x: f64, right: bool) -> f64 {
        match self {
            Curve::Affine { b, .. } => *b,
            Curve::Rational { a, b, c, d } => {
                let den = c + d * x;
                (b * c - a * d) / (den * den)
            }
            Curve::Min(cs) => {
                let v = self.eval(x);
                let tol = 1e-12 * (1.0 + v.abs());
                let active = cs.iter().filter(|c| c.eval(x) <= v + tol);
                let slopes = active.map(|c| c.deriv_side(x, right));
                if right {
                    slopes.fold(f64::INFINITY, f64::min)
                } else {
                    slopes.fold(f64::NEG_INFINITY, f64::max)
                }
            }
            Curve::Sampled(s) => s.deriv(x),
            Curve::Inverse { inner, lo, hi } => {
                let y = invert(inner, x, *lo, *hi);
                // The inverse of a decreasing map swaps one-sided derivatives.
                let d = inner.deriv_side(y, right == (inner.eval(*hi) > inner.eval(*lo)));
                1.0 / d
            }
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        self.deriv_side(x, true)
    }

    /// Points in `(a, b)` where the derivative may jump.
    pub fn kinks(&self, a: f64, b: f64) -> Vec<f64> {
        let mut out = Vec::new();
        match self {
            Curve::Affine { .. } | Curve::Rational { .. } => {}
            Curve::Min(cs) => {
                for c in cs {
                    out.extend(c.kinks(a, b));
                }
                // Switches of the active piece, located by scan and bisection.
                let n = 256;
                let arg = |x: f64| {
                    let mut best = (f64::INFINITY, 0usize);
                    for (i, c) in cs.iter().enumerate() {
                        let v = c.eval(x);
                        if v < best.0 - 1e-14 * (1.0 + v.abs()) {
                            best = (v, i);
                        }
                    }
                    best.1
                };
                let mut x0 = a;
                let mut i0 = arg(a);
                for k in 1..=n {
                    let x1 = a + (b - a) * k as f64 / n as f64;
                    let i1 = arg(x1);
                    if i1 != i0 {
                        let (ci, cj) = (&cs[i0], &cs[i1]);
                        let g = |x: f64| ci.eval(x) - cj.eval(x);
                        if let Some(r) = bisect_sign(g, x0, x1) {
                            out.push(r);
                        } else {
                            out.push(0.5 * (x0 + x1));
                        }
                    }
                    x0 = x1;
                    i0 = i1;
                }
            }
            Curve::Sampled(s) => out.extend(s.xs.iter().copied()),
            Curve::Inverse { inner, lo, hi } => {
                out.extend(inner.kinks(*lo, *hi).into_iter().map(|t| inner.eval(t)));
            }
        }
        out.retain(|&x| x > a && x < b);
        out.sort_by(f64::total_cmp);
        out.dedup_by(|p, q| (*p - *q).abs() <= 1e-13 * (1.0 + q.abs()));
        out
    }

    /// The unique `x` in `[a, b]` where the curve crosses `level`, if it changes sign there.
    pub fn crossing(&self, level: f64, a: f64, b: f64) -> Option<f64> {
        bisect_sign(|x| self.eval(x) - level, a, b)
    }

    /// Whether the curve is non-increasing on `[a, b]` (sampled).
    pub fn is_nonincreasing(&self, a: f64, b: f64, samples: usize) -> bool {
        let mut prev = self.eval(a);
        (1..=samples).all(|k| {
            let v = self.eval(a + (b - a) * k as f64 / samples as f64);
            let ok = v <= prev + 1e-10 * (1.0 + prev.abs());
            prev = v;
            ok
        })
    }

    /// Whether the curve is concave on `[a, b]` (sampled second differences).
    pub fn is_concave(&self, a: f64, b: f64, samples: usize) -> bool {
        let h = (b - a) / samples as f64;
        (1..samples).all(|k| {
            let x = a + h * k as f64;
            let d2 = self.eval(x - h) + self.eval(x + h) - 2.0 * self.eval(x);
            d2 <= 1e-9 * (1.0 + self.eval(x).abs())
        })
    }
}

/// Root of `g` on `[a, b]` when `g(a)` and `g(b)` have strictly opposite signs.
pub(crate) fn bisect_sign(g: impl Fn(f64) -> f64, a: f64, b: f64) -> Option<f64> {
    let (mut lo, mut hi) = (a, b);
    let (ga, gb) = (g(a), g(b));
    if ga == 0.0 || gb == 0.0 || (ga < 0.0) == (gb < 0.0) {
        return None;
    }
    let neg_at_lo = ga < 0.0;
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if m <= lo || m >= hi {
            break;
        }
        let gm = g(m);
        if gm == 0.0 {
            return Some(m);
        }
        if (gm < 0.0) == neg_at_lo {
            lo = m;
        } else {
            hi = m;
        }
    }
    Some(0.5 * (lo + hi))
}

fn invert(inner: &Curve, y: f64, lo: f64, hi: f64) -> f64 {
    let (glo, ghi) = (inner.eval(lo), inner.eval(hi));
    let increasing = ghi > glo;
    let (ymin, ymax) = if increasing { (glo, ghi) } else { (ghi, glo) };
    if y <= ymin {
        return if increasing { lo } else { hi };
    }
    if y >= ymax {
        return if increasing { hi } else { lo };
    }
    bisect_sign(|x| inner.eval(x) - y, lo, hi).unwrap_or(lo)
}

/// Fritsch-Carlson monotone cubic Hermite interpolant.
#[derive(Clone, Debug)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ms: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return Err(Error::Invalid("need at least two matching samples".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("sample abscissae must increase strictly".into()));
        }
        let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])).collect();
        let mut ms = vec![0.0; n];
        ms[0] = delta[0];
        ms[n - 1] = delta[n - 2];
        for i in 1..n - 1 {
            ms[i] = if delta[i - 1] * delta[i] <= 0.0 { 0.0 } else { 0.5 * (delta[i - 1] + delta[i]) };
        }
        for i in 0..n - 1 {
            if delta[i] == 0.0 {
                ms[i] = 0.0;
                ms[i + 1] = 0.0;
                continue;
            }
            let a = ms[i] / delta[i];
            let b = ms[i + 1] / delta[i];
            let s = a * a + b * b;
            if s > 9.0 {
                let t = 3.0 / s.sqrt();
                ms[i] = t * a * delta[i];
                ms[i + 1] = t * b * delta[i];
            }
        }
        Ok(MonotoneCubic { xs, ys, ms })
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.xs.len();
        match self.xs.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.ys[i]
            + (t3 - 2.0 * t2 + t) * h * self.ms[i]
            + (-2.0 * t3 + 3.0 * t2) * self.ys[i + 1]
            + (t3 - t2) * h * self.ms[i + 1]
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let t2 = t * t;
        (6.0 * t2 - 6.0 * t) / h * self.ys[i]
            + (3.0 * t2 - 4.0 * t + 1.0) * self.ms[i]
            + (-6.0 * t2 + 6.0 * t) / h * self.ys[i + 1]
            + (3.0 * t2 - 2.0 * t) * self.ms[i + 1]
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_derivative_and_inverse() {
        let s = Curve::Rational { a: 2.0, b: -3.0, c: 4.0, d: -5.0 };
        let x = 0.3;
        let fd = (s.eval(x + 1e-6) - s.eval(x - 1e-6)) / 2e-6;
        assert!((s.deriv(x) - fd).abs() < 1e-8);
        let inv = Curve::Inverse { inner: Arc::new(s.clone()), lo: 0.0, hi: 0.6 };
        let y = s.eval(0.2);
        assert!((inv.eval(y) - 0.2).abs() < 1e-13);
        assert!((inv.deriv(y) * s.deriv(0.2) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn min_affine_kinks() {
        let c = Curve::min_affine(&[(2.0, 0.0), (3.0, -1.0)]);
        let k = c.kinks(0.0, 3.0);
        assert_eq!(k.len(), 1);
        assert!((k[0] - 1.0).abs() < 1e-13);
        assert_eq!(c.deriv_side(1.0, true), -1.0);
        assert_eq!(c.deriv_side(1.0, false), 0.0);
        assert!(c.is_concave(0.0, 3.0, 64));
    }

    #[test]
    fn crossing_finds_level() {
        let c = Curve::line(1.0, -0.5);
        assert!((c.crossing(0.25, 0.0, 2.0).unwrap() - 1.5).abs() < 1e-14);
        assert!(c.crossing(5.0, 0.0, 2.0).is_none());
    }

    #[test]
    fn monotone_cubic_reproduces_and_stays_monotone() {
        let xs: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - x * x).collect();
        let m = MonotoneCubic::new(xs.clone(), ys.clone()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((m.eval(*x) - y).abs() < 1e-14);
        }
        let c = Curve::Sampled(Arc::new(m));
        assert!(c.is_nonincreasing(0.0, 1.0, 500));
        assert!((c.eval(0.55) - (1.0 - 0.3025)).abs() < 1e-3);
    }
}
