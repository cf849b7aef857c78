//! Two-item exclusion sets, their canonical partitions, and the mechanisms
//! they induce.
//!
//! An exclusion set is `Z = {(x, y) in X : y <= s1(x), x <= s2(y), x + y <= P}`
//! with `s1`, `s2` concave and non-increasing. Its outer boundary is the
//! curve `top(x) = sup{y : (x, y) in Z}` on `[x_lo, x_end]`; the partition
//! uses the leftmost and rightmost maximizers of `x + top(x)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{check_region_dominance, RegionCheckConfig, RegionReport};
use crate::curve::{Curve, MonotoneCubic};
use crate::distributions::{MarginalDensity, ProductDensity, TypeBox};
use crate::dominance::{check_regionthm, Factorization, RegionCheckOptions, RegionCheckReport, Verdict};
use crate::error::{Error, Result};
use crate::measure::{QuadConfig, TransformedMeasure};
use crate::quadrature;
use crate::region::{Edge, Region, Slab};

/// Serializable boundary curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CurveSpec {
    /// No constraint inside the box.
    Unbounded,
    Constant { value: f64 },
    Affine { a: f64, b: f64 },
    Rational { a: f64, b: f64, c: f64, d: f64 },
    /// Monotone cubic through the samples.
    Samples { xs: Vec<f64>, ys: Vec<f64> },
}

impl CurveSpec {
    /// The curve, or `None` for an absent constraint.
    pub fn build(&self) -> Result<Option<Curve>> {
        Ok(Some(match self {
            CurveSpec::Unbounded => return Ok(None),
            CurveSpec::Constant { value } => Curve::constant(*value),
            CurveSpec::Affine { a, b } => Curve::line(*a, *b),
            CurveSpec::Rational { a, b, c, d } => Curve::Rational { a: *a, b: *b, c: *c, d: *d },
            CurveSpec::Samples { xs, ys } => Curve::Sampled(Arc::new(MonotoneCubic::new(xs.clone(), ys.clone())?)),
        }))
    }
}

/// JSON form of an exclusion set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExclusionSpec {
    pub s1: CurveSpec,
    pub s2: CurveSpec,
    pub price: f64,
}

/// A convex, compact, decreasing exclusion set in the plane.
#[derive(Clone, Debug)]
pub struct ExclusionSet2D {
    pub lows: [f64; 2],
    pub highs: [f64; 2],
    /// `y <= s1(x)`; `None` means no such constraint.
    pub s1: Option<Curve>,
    /// `x <= s2(y)`.
    pub s2: Option<Curve>,
    /// `x + y <= price`.
    pub price: f64,
}

/// Closed-form inverse where available; a constant maps to `None` (a
/// vertical edge handled by the domain end instead).
fn inverse(c: &Curve, lo: f64, hi: f64) -> Option<Curve> {
    match *c {
        Curve::Affine { b, .. } if b == 0.0 => None,
        Curve::Affine { a, b } => Some(Curve::Affine { a: -a / b, b: 1.0 / b }),
        // y = (a + b x)/(c + d x)  <=>  x = (a - c y)/(d y - b)
        Curve::Rational { a, b, c, d } => Some(Curve::Rational { a, b: -c, c: -b, d }),
        _ => Some(Curve::Inverse { inner: Arc::new(c.clone()), lo, hi }),
    }
}

/// Largest `t` in `[lo, hi]` with `pred(t)`, for a predicate true on an initial segment.
fn last_true(pred: impl Fn(f64) -> bool, lo: f64, hi: f64) -> Option<f64> {
    if !pred(lo) {
        return None;
    }
    if pred(hi) {
        return Some(hi);
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if pred(m) {
            a = m;
        } else {
            b = m;
        }
    }
    Some(a)
}

impl ExclusionSet2D {
    pub fn new(bx: &TypeBox, s1: Option<Curve>, s2: Option<Curve>, price: f64) -> Result<Self> {
        if bx.dim() != 2 {
            return Err(Error::Unsupported("exclusion sets are defined for two items".into()));
        }
        if !price.is_finite() {
            return Err(Error::Invalid("exclusion price must be finite".into()));
        }
        Ok(ExclusionSet2D { lows: [bx.lows[0], bx.lows[1]], highs: [bx.highs[0], bx.highs[1]], s1, s2, price })
    }

    pub fn from_spec(bx: &TypeBox, spec: &ExclusionSpec) -> Result<Self> {
        Self::new(bx, spec.s1.build()?, spec.s2.build()?, spec.price)
    }

    /// `{x + y <= p}`.
    pub fn triangle(bx: &TypeBox, p: f64) -> Result<Self> {
        Self::new(bx, None, None, p)
    }

    pub fn type_box(&self) -> TypeBox {
        TypeBox { lows: self.lows.to_vec(), highs: self.highs.to_vec() }
    }

    fn tol(&self) -> f64 {
        1e-12 * (1.0 + self.highs[0].abs() + self.highs[1].abs())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.contains_within(x, self.tol())
    }

    fn contains_within(&self, x: &[f64], t: f64) -> bool {
        let inside = (0..2).all(|i| x[i] >= self.lows[i] - t && x[i] <= self.highs[i] + t);
        inside
            && x[0] + x[1] <= self.price + t
            && self.s1.as_ref().map_or(true, |c| x[1] <= c.eval(x[0]) + t)
            && self.s2.as_ref().map_or(true, |c| x[0] <= c.eval(x[1]) + t)
    }

    /// Right end of `Z` along the bottom edge, or `None` if `Z` misses the box.
    pub fn x_end(&self) -> Option<f64> {
        let y = self.lows[1];
        last_true(|x| self.contains_within(&[x, y], 0.0), self.lows[0], self.highs[0])
    }

    /// Top end of `Z` along the left edge.
    pub fn y_end(&self) -> Option<f64> {
        let x = self.lows[0];
        last_true(|y| self.contains_within(&[x, y], 0.0), self.lows[1], self.highs[1])
    }

    /// Outer boundary `x ↦ sup{y : (x, y) in Z}` as a curve (valid on `[x_lo, x_end]`).
    pub fn top_curve(&self) -> Curve {
        let mut parts = vec![Curve::line(self.price, -1.0)];
        if let Some(s1) = &self.s1 {
            parts.push(s1.clone());
        }
        if let Some(inv) = self.s2.as_ref().and_then(|s2| inverse(s2, self.lows[1], self.highs[1])) {
            parts.push(inv);
        }
        if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Curve::Min(parts)
        }
    }

    /// Outer boundary `y ↦ sup{x : (x, y) in Z}` (valid on `[y_lo, y_end]`).
    pub fn right_curve(&self) -> Curve {
        let mut parts = vec![Curve::line(self.price, -1.0)];
        if let Some(s2) = &self.s2 {
            parts.push(s2.clone());
        }
        if let Some(inv) = self.s1.as_ref().and_then(|s1| inverse(s1, self.lows[0], self.highs[0])) {
            parts.push(inv);
        }
        if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Curve::Min(parts)
        }
    }

    /// `Z` as a quadrature region.
    pub fn region(&self) -> Region {
        match self.x_end() {
            None => Region::Slabs(vec![]),
            Some(x_end) => Region::Slabs(vec![Slab {
                x0: self.lows[0],
                x1: x_end,
                lower: Edge::BoxLow,
                upper: Edge::Curve(self.top_curve()),
            }]),
        }
    }

    /// Brute-force `ℓ₁` distance from `x` to `Z` over a `k × k` sample of `Z`'s boundary.
    pub fn l1_distance_sampled(&self, x: &[f64], k: usize) -> f64 {
        if self.contains(x) {
            return 0.0;
        }
        let Some(x_end) = self.x_end() else {
            return f64::INFINITY;
        };
        let top = self.top_curve();
        let mut best = f64::INFINITY;
        for i in 0..=k {
            let zx = self.lows[0] + (x_end - self.lows[0]) * i as f64 / k as f64;
            let zt = top.eval(zx).min(self.highs[1]);
            if zt < self.lows[1] {
                continue;
            }
            // The closest point in the column {zx} × [lo, zt] to x.
            let zy = x[1].clamp(self.lows[1], zt);
            best = best.min((x[0] - zx).abs() + (x[1] - zy).abs());
        }
        best
    }
}

/// Which part of a canonical partition a type falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Cell {
    Z,
    A,
    B,
    W,
}

/// The partition `Z ∪ 𝒜 ∪ ℬ ∪ 𝒲` induced by an exclusion set.
#[derive(Clone, Debug)]
pub struct CanonicalPartition {
    pub exclusion: ExclusionSet2D,
    /// Critical price `max{x + y : (x, y) in Z}`.
    pub price: f64,
    /// Left critical point `(x_crit, price - x_crit)`.
    pub x_crit: f64,
    /// Bottom critical point `(price - y_crit, y_crit)`.
    pub y_crit: f64,
    /// `price - y_crit`.
    pub x_right: f64,
    pub x_end: f64,
    pub y_end: f64,
    top: Curve,
    right: Curve,
}

/// Serializable summary of a partition.
#[derive(Clone, Debug, Serialize)]
pub struct PartitionSummary {
    pub price: f64,
    pub x_crit: f64,
    pub y_crit: f64,
    pub x_right: f64,
    pub x_end: f64,
    pub y_end: f64,
    /// `(x, s1(x))` samples on `[x_lo, x_crit]`.
    pub s1: Vec<[f64; 2]>,
    /// `(y, s2(y))` samples on `[y_lo, y_crit]`.
    pub s2: Vec<[f64; 2]>,
}

/// Maximum of a concave function on `[a, b]` by golden-section search.
fn concave_max(f: impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (a, b);
    for _ in 0..200 {
        if hi - lo <= 1e-15 * (1.0 + hi.abs()) {
            break;
        }
        let m1 = hi - r * (hi - lo);
        let m2 = lo + r * (hi - lo);
        if f(m1) < f(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let mut best = (a, f(a));
    for x in [0.5 * (lo + hi), b] {
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

pub fn canonical_partition(z: &ExclusionSet2D) -> Result<CanonicalPartition> {
    let (Some(x_end), Some(y_end)) = (z.x_end(), z.y_end()) else {
        return Err(Error::Precondition("exclusion set misses the lowest type".into()));
    };
    let scale = 1.0 + z.highs[0].abs() + z.highs[1].abs();
    if x_end - z.lows[0] <= 1e-12 * scale || y_end - z.lows[1] <= 1e-12 * scale {
        return Err(Error::Precondition("exclusion set has empty interior".into()));
    }
    let top = z.top_curve();
    let right = z.right_curve();
    let h = |x: f64| x + top.eval(x).min(z.highs[1]);
    let (arg, pmax) = concave_max(h, z.lows[0], x_end);
    let tol = 1e-12 * scale;
    let x_crit = {
        // First x with h(x) >= pmax - tol; h is concave so this set is an interval.
        let pred = |x: f64| h(x) < pmax - tol;
        last_true(pred, z.lows[0], arg).unwrap_or(z.lows[0])
    };
    let x_crit = if h(z.lows[0]) >= pmax - tol { z.lows[0] } else { x_crit };
    let x_right = last_true(|x| h(x) >= pmax - tol, arg, x_end).unwrap_or(arg);
    let y_crit = top.eval(x_right).clamp(z.lows[1], z.highs[1]);
    let price = if (x_right + y_crit - z.price).abs() <= 1e-9 * scale { z.price } else { x_right + y_crit };
    Ok(CanonicalPartition { exclusion: z.clone(), price, x_crit, y_crit, x_right, x_end, y_end, top, right })
}

impl CanonicalPartition {
    pub fn type_box(&self) -> TypeBox {
        self.exclusion.type_box()
    }

    /// Outer boundary `s1` (meaningful on `[x_lo, x_crit]`).
    pub fn s1(&self, x: f64) -> f64 {
        self.top.eval(x)
    }

    pub fn s1_slope(&self, x: f64) -> f64 {
        self.top.deriv_side(x, true)
    }

    /// Outer boundary `s2` (meaningful on `[y_lo, y_crit]`).
    pub fn s2(&self, y: f64) -> f64 {
        self.right.eval(y).min(self.x_end)
    }

    pub fn s2_slope(&self, y: f64) -> f64 {
        if self.right.eval(y) >= self.x_end {
            0.0
        } else {
            self.right.deriv_side(y, true)
        }
    }

    pub fn classify(&self, x: &[f64]) -> Cell {
        if self.exclusion.contains(x) {
            Cell::Z
        } else if x[0] < self.x_crit {
            Cell::A
        } else if x[1] < self.y_crit {
            Cell::B
        } else {
            Cell::W
        }
    }

    pub fn region(&self, cell: Cell) -> Region {
        let [xl, _] = self.exclusion.lows;
        let [xh, _] = self.exclusion.highs;
        let top = || Edge::Curve(self.top.clone());
        let level = |v: f64| Edge::Curve(Curve::constant(v));
        let slab = |x0: f64, x1: f64, lower: Edge, upper: Edge| Slab { x0, x1, lower, upper };
        let pieces = match cell {
            Cell::Z => return self.exclusion.region(),
            Cell::A => vec![slab(xl, self.x_crit, top(), Edge::BoxHigh)],
            Cell::B => vec![
                slab(self.x_right, self.x_end, top(), level(self.y_crit)),
                slab(self.x_end, xh, Edge::BoxLow, level(self.y_crit)),
            ],
            Cell::W => vec![
                slab(self.x_crit, self.x_right, Edge::Curve(Curve::line(self.price, -1.0)), Edge::BoxHigh),
                slab(self.x_right, xh, level(self.y_crit), Edge::BoxHigh),
            ],
        };
        Region::Slabs(pieces.into_iter().filter(|s| s.x1 > s.x0).collect())
    }

    pub fn summary(&self, samples: usize) -> PartitionSummary {
        let k = samples.max(2);
        let [xl, yl] = self.exclusion.lows;
        let s1 = (0..k)
            .map(|i| {
                let x = xl + (self.x_crit - xl) * i as f64 / (k - 1) as f64;
                [x, self.s1(x)]
            })
            .collect();
        let s2 = (0..k)
            .map(|i| {
                let y = yl + (self.y_crit - yl) * i as f64 / (k - 1) as f64;
                [y, self.s2(y)]
            })
            .collect();
        PartitionSummary {
            price: self.price,
            x_crit: self.x_crit,
            y_crit: self.y_crit,
            x_right: self.x_right,
            x_end: self.x_end,
            y_end: self.y_end,
            s1,
            s2,
        }
    }
}

/// `u_Z(x)`, the `ℓ₁` distance to `Z`, by the partition casework.
pub fn exclusion_utility(cp: &CanonicalPartition, x: &[f64]) -> f64 {
    match cp.classify(x) {
        Cell::Z => 0.0,
        Cell::A => x[1] - cp.s1(x[0]),
        Cell::B => x[0] - cp.s2(x[1]),
        Cell::W => x[0] + x[1] - cp.price,
    }
}

/// `ℓ₁` distance from `x` to the decreasing polytope `{a·z <= b} ∩ X`:
/// `Σx - max{Σz : z in Z, z <= x}`, via the interior-point solver.
pub fn halfspace_exclusion_utility(hs: &[crate::region::HalfSpace], bx: &TypeBox, x: &[f64]) -> Result<f64> {
    use crate::lp::{LpOptions, LpProblem};
    let n = bx.dim();
    let mut lp = LpProblem::new(n, vec![1.0; n]);
    for h in hs {
        lp.add_row(h.a.iter().copied().enumerate().collect(), h.b);
    }
    for i in 0..n {
        lp.add_row(vec![(i, 1.0)], x[i].min(bx.highs[i]));
        lp.add_row(vec![(i, -1.0)], -bx.lows[i]);
    }
    if hs.iter().any(|h| h.value(&bx.lows) > 1e-12) {
        return Err(Error::Precondition("the polytope misses the lowest type".into()));
    }
    let sol = lp.solve(&LpOptions::default())?;
    Ok((x.iter().sum::<f64>() - sol.objective).max(0.0))
}

/// The mechanism induced by a canonical partition.
#[derive(Clone, Debug)]
pub struct PartitionMechanism {
    pub partition: CanonicalPartition,
}

/// Allocation and price offered to one type.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Outcome {
    pub allocation: [f64; 2],
    pub price: f64,
}

impl Outcome {
    pub fn utility(&self, x: &[f64]) -> f64 {
        self.allocation[0] * x[0] + self.allocation[1] * x[1] - self.price
    }
}

pub fn mechanism_from_partition(cp: &CanonicalPartition) -> Result<PartitionMechanism> {
    let [xl, yl] = cp.exclusion.lows;
    let k = 200;
    let bad = |q: f64| !(-1e-9..=1.0 + 1e-9).contains(&q);
    for i in 0..k {
        let x = xl + (cp.x_crit - xl) * (i as f64 + 0.5) / k as f64;
        if cp.x_crit > xl && bad(-cp.s1_slope(x)) {
            return Err(Error::Invalid(format!("boundary s1 has slope {} at x = {x}", cp.s1_slope(x))));
        }
        let y = yl + (cp.y_crit - yl) * (i as f64 + 0.5) / k as f64;
        if cp.y_crit > yl && bad(-cp.s2_slope(y)) {
            return Err(Error::Invalid(format!("boundary s2 has slope {} at y = {y}", cp.s2_slope(y))));
        }
    }
    Ok(PartitionMechanism { partition: cp.clone() })
}

impl PartitionMechanism {
    pub fn outcome(&self, x: &[f64]) -> Outcome {
        let cp = &self.partition;
        match cp.classify(x) {
            Cell::Z => Outcome { allocation: [0.0, 0.0], price: 0.0 },
            Cell::A => {
                let d = cp.s1_slope(x[0]);
                Outcome { allocation: [(-d).clamp(0.0, 1.0), 1.0], price: cp.s1(x[0]) - x[0] * d }
            }
            Cell::B => {
                let d = cp.s2_slope(x[1]);
                Outcome { allocation: [1.0, (-d).clamp(0.0, 1.0)], price: cp.s2(x[1]) - x[1] * d }
            }
            Cell::W => Outcome { allocation: [1.0, 1.0], price: cp.price },
        }
    }

    /// The `𝒜`-strip menu item for the supplied `s1` evaluated at `x`, whether
    /// or not any type in `𝒜` selects it.
    pub fn strip_item_a(&self, x: f64) -> Option<Outcome> {
        let s1 = self.partition.exclusion.s1.as_ref()?;
        let d = s1.deriv(x);
        Some(Outcome { allocation: [-d, 1.0], price: s1.eval(x) - x * d })
    }

    /// The `ℬ`-strip menu item for the supplied `s2` at `y`.
    pub fn strip_item_b(&self, y: f64) -> Option<Outcome> {
        let s2 = self.partition.exclusion.s2.as_ref()?;
        let d = s2.deriv(y);
        Some(Outcome { allocation: [1.0, -d], price: s2.eval(y) - y * d })
    }
}

/// Worst normalized strip mass for one of the two strip conditions.
#[derive(Clone, Debug, Serialize)]
pub struct StripReport {
    pub samples: usize,
    /// Smallest `μ(strip)/ε` (should be `>= -tol`).
    pub worst: f64,
    pub worst_at: [f64; 2],
    /// Largest `|μ(strip)/ε|` over strips starting on the box edge (should be `~0`).
    pub edge_residual: f64,
    /// Accepted tolerance, widened by the truncation deficit of the density.
    pub tol: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct WellFormedOptions {
    pub region: RegionCheckConfig,
    pub regionthm: RegionCheckOptions,
    /// Sample abscissae (and ordinates) per strip family.
    pub strip_samples: usize,
    /// Strip width relative to the strip family's extent.
    pub strip_width: f64,
    pub strip_tol: f64,
}

impl Default for WellFormedOptions {
    fn default() -> Self {
        WellFormedOptions {
            region: RegionCheckConfig::for_dim(2),
            regionthm: RegionCheckOptions::default(),
            strip_samples: 16,
            strip_width: 1e-3,
            strip_tol: 1e-7,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WellFormedReport {
    /// `μ|_Z ⪯_cvx 0`.
    pub z: RegionReport,
    /// `μ|_𝒲 ⪰₂ 0` on the grid (first order tried first).
    pub w: RegionReport,
    /// Density-based first-order check of `𝒲`, when a factorization was given.
    pub w_regionthm: Option<RegionCheckReport>,
    pub strips_a: StripReport,
    pub strips_b: StripReport,
    pub pass: bool,
}

/// Slabs for `{x in [a, b], max(curve(x), ylo) <= y <= yhi}` with `curve` non-increasing.
/// Columns are split where the curve crosses either level so each slab's
/// integrand is smooth.
fn band(curve: &Curve, a: f64, b: f64, ylo: f64, yhi: f64) -> Vec<Slab> {
    // Skip the part where the curve lies above the band.
    let a = if curve.eval(a) > yhi { curve.crossing(yhi, a, b).unwrap_or(b) } else { a };
    if b <= a || yhi <= ylo {
        return vec![];
    }
    let c = Edge::Curve(curve.clone());
    let flat = || Edge::Curve(Curve::constant(ylo));
    let upper = || Edge::Curve(Curve::constant(yhi));
    let s = |x0: f64, x1: f64, lower: Edge| Slab { x0, x1, lower, upper: upper() };
    match curve.crossing(ylo, a, b) {
        Some(x) => vec![s(a, x, c), s(x, b, flat())],
        None if curve.eval(0.5 * (a + b)) >= ylo => vec![s(a, b, c)],
        None => vec![s(a, b, flat())],
    }
}

fn slab_mass(mu: &TransformedMeasure, slabs: Vec<Slab>, q: &QuadConfig) -> Result<f64> {
    let cells = mu.panel_cells(q.panels);
    let mut s = 0.0;
    mu.visit(&Region::Slabs(slabs), &cells, q.order, &mut |_, _, m| s += m)?;
    Ok(s)
}

fn strip_checks(cp: &CanonicalPartition, mu: &TransformedMeasure, opts: &WellFormedOptions, vertical: bool) -> Result<StripReport> {
    let [xl, yl] = cp.exclusion.lows;
    let [xh, yh] = cp.exclusion.highs;
    let q = QuadConfig::for_dim(2);
    let k = opts.strip_samples.max(2);
    let scale = mu.total_variation(&q)?.max(1.0);
    // Truncating an unbounded density perturbs each line integral by about the
    // lost tail mass times the box extent.
    let deficit = mu.density().truncation_deficit();
    let tol = opts.strip_tol * scale + deficit * (1.0 + xh.abs() + yh.abs());
    let mut report =
        StripReport { samples: 0, worst: f64::INFINITY, worst_at: [xl, yl], edge_residual: 0.0, tol, pass: true };
    // Strip family extent along the sliding coordinate.
    let (s0, s1) = if vertical { (xl, cp.x_crit) } else { (yl, cp.y_crit) };
    if s1 - s0 <= 1e-12 * (1.0 + s1.abs()) {
        report.worst = 0.0;
        return Ok(report);
    }
    let eps = opts.strip_width * (s1 - s0);
    let (t0, t1) = if vertical { (yl, yh) } else { (xl, xh) };
    for i in 0..k {
        let v = s0 + (s1 - s0 - eps) * i as f64 / (k - 1) as f64;
        let w = (v + eps).min(s1) - v;
        for j in 0..=k {
            let t = t0 + (t1 - t0) * j as f64 / k as f64;
            let slabs = if vertical {
                band(&cp.top, v, v + w, t, yh)
            } else {
                // Horizontal strip [t, ∞) × [v, v + w] inside ℬ.
                let yhi = (v + w).min(cp.y_crit);
                let mut s = band(&cp.top, t.max(cp.x_right), cp.x_end, v, yhi);
                s.extend(band(&Curve::constant(yl), t.max(cp.x_end), xh, v, yhi));
                s
            };
            let m = slab_mass(mu, slabs, &q)? / w;
            report.samples += 1;
            if m < report.worst {
                report.worst = m;
                report.worst_at = if vertical { [v, t] } else { [t, v] };
            }
            if j == 0 {
                report.edge_residual = report.edge_residual.max(m.abs());
            }
        }
    }
    report.pass = report.worst >= -tol && report.edge_residual <= tol;
    Ok(report)
}

/// Well-formedness of a canonical partition: the dominance conditions on `Z`
/// and `𝒲` and the strip conditions on `𝒜` and `ℬ`.
pub fn check_well_formed(
    cp: &CanonicalPartition,
    mu: &TransformedMeasure,
    factorization: Option<&Factorization>,
    opts: &WellFormedOptions,
) -> Result<WellFormedReport> {
    if mu.dim() != 2 {
        return Err(Error::Unsupported("canonical partitions are two-dimensional".into()));
    }
    let z = check_region_dominance(mu, &cp.region(Cell::Z), &[1, 1], "Z", &opts.region)?;
    let w = check_region_dominance(mu, &cp.region(Cell::W), &[-1, -1], "W", &opts.region)?;
    let w_regionthm = match factorization {
        Some(fac) => Some(regionthm_on_w(cp, mu, fac, &opts.regionthm)?),
        None => None,
    };
    let strips_a = strip_checks(cp, mu, opts, true)?;
    let strips_b = strip_checks(cp, mu, opts, false)?;
    let w_pass = w.pass || w_regionthm.as_ref().is_some_and(|r| r.result.verdict == Verdict::Dominates);
    let pass = z.pass && w_pass && strips_a.pass && strips_b.pass;
    Ok(WellFormedReport { z, w, w_regionthm, strips_a, strips_b, pass })
}

/// The interior density of a two-item product `f₁ ⊗ f₂` written as
/// `f₁(x) f₂(y) η(x, y)` with `η = -x f₁'/f₁ - y f₂'/f₂ - 3`.
pub fn product_factorization(f: &ProductDensity) -> Result<Factorization> {
    if f.dim() != 2 {
        return Err(Error::Unsupported("product factorization is two-dimensional".into()));
    }
    let m = f.marginals();
    let (m1, m2) = (m[0].clone(), m[1].clone());
    let (d1, d2) = (m1.clone(), m2.clone());
    let (e1, e2) = (m1.clone(), m2.clone());
    let log_slope = |m: &MarginalDensity, z: f64| z * m.derivative_unchecked(z) / m.pdf(z);
    Ok(Factorization {
        alpha: Arc::new(move |x| d1.pdf(x)),
        beta: Arc::new(move |y| d2.pdf(y)),
        eta: Arc::new(move |x, y| -log_slope(&e1, x) - log_slope(&e2, y) - 3.0),
    })
}

/// `μ₊|_𝒲 ⪰₁ μ₋|_𝒲` by the density criterion on `C = [x_crit, x_hi] × [y_crit, y_hi]`
/// with `R = Z ∩ C`. Requires `μ` to carry no facet mass inside `𝒲`.
pub fn regionthm_on_w(
    cp: &CanonicalPartition,
    mu: &TransformedMeasure,
    fac: &Factorization,
    opts: &RegionCheckOptions,
) -> Result<RegionCheckReport> {
    let [xh, yh] = cp.exclusion.highs;
    let k = 64;
    for i in 0..=k {
        let x = cp.x_crit + (xh - cp.x_crit) * i as f64 / k as f64;
        let y = cp.y_crit + (yh - cp.y_crit) * i as f64 / k as f64;
        let f_top = mu.facet_density(1, true, &[x, yh]);
        let f_right = mu.facet_density(0, true, &[xh, y]);
        if f_top != 0.0 || f_right != 0.0 {
            return Err(Error::Unsupported("the density criterion needs W free of facet mass".into()));
        }
    }
    let z = cp.exclusion.clone();
    let dens = |x: f64, y: f64| if z.contains(&[x, y]) { 0.0 } else { mu.interior_density(&[x, y]) };
    let g = |x: f64, y: f64| dens(x, y).max(0.0);
    let h = |x: f64, y: f64| (-dens(x, y)).max(0.0);
    check_regionthm(&g, &h, [cp.x_crit, cp.y_crit], [xh, yh], &cp.exclusion.region(), Some(fac), opts)
}

/// Root of `p ↦ μ(Z_p)` on `bracket` by bisection to `tol` in `p`.
pub fn find_critical_price(
    mu: &TransformedMeasure,
    family: &dyn Fn(f64) -> Result<Region>,
    bracket: (f64, f64),
    tol: f64,
) -> Result<f64> {
    let q = QuadConfig::for_dim(mu.dim());
    let mass = |p: f64| -> Result<f64> { mu.region_mass_refined(&family(p)?, &q) };
    let (mut lo, mut hi) = bracket;
    let (mut flo, fhi) = (mass(lo)?, mass(hi)?);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if (flo > 0.0) == (fhi > 0.0) {
        return Err(Error::NotBracketed(format!(
            "mu(Z_p) has the same sign at p = {lo} ({flo:.3e}) and p = {hi} ({fhi:.3e})"
        )));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let fm = mass(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Default bracket `[0, Σ widths]`.
pub fn default_price_bracket(bx: &TypeBox) -> (f64, f64) {
    (0.0, (0..bx.dim()).map(|i| bx.width(i)).sum())
}

/// Which outward line integrals define a boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineAxis {
    /// Upward from `(x, y)`: the top boundary `y = s(x)`.
    Vertical,
    /// Rightward from `(x, y)`: the right boundary `x = s(y)`.
    Horizontal,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundarySamples {
    pub axis: LineAxis,
    /// `(abscissa, start point)` pairs where the line integral vanishes.
    pub points: Vec<[f64; 2]>,
    /// Abscissae on which no zero exists.
    pub excluded: Vec<f64>,
}

impl BoundarySamples {
    /// Monotone cubic through the samples.
    pub fn to_curve(&self) -> Result<Curve> {
        let xs = self.points.iter().map(|p| p[0]).collect();
        let ys = self.points.iter().map(|p| p[1]).collect();
        Ok(Curve::Sampled(Arc::new(MonotoneCubic::new(xs, ys)?)))
    }
}

/// Outward line integral of `μ` from `(a, t)` (vertical: along `y` from `t`).
fn line_integral(mu: &TransformedMeasure, axis: LineAxis, a: f64, t: f64) -> Result<f64> {
    let bx = mu.type_box();
    let (k, other) = match axis {
        LineAxis::Vertical => (1, 0),
        LineAxis::Horizontal => (0, 1),
    };
    let point = |s: f64| {
        let mut p = [0.0; 2];
        p[k] = s;
        p[other] = a;
        p
    };
    let interior = quadrature::adaptive(t, bx.highs[k], 1e-13, 40, |s| mu.interior_density(&point(s)))?;
    Ok(interior + mu.facet_density(k, true, &point(bx.highs[k])))
}

/// For each abscissa, the start point from which the outward line integral
/// of `μ` vanishes (topmost sign change, found by scan and bisection).
pub fn boundary_from_line_integrals(mu: &TransformedMeasure, axis: LineAxis, abscissae: &[f64]) -> Result<BoundarySamples> {
    if mu.dim() != 2 {
        return Err(Error::Unsupported("boundary curves are two-dimensional".into()));
    }
    let k = if axis == LineAxis::Vertical { 1 } else { 0 };
    let (lo, hi) = (mu.type_box().lows[k], mu.type_box().highs[k]);
    let mut out = BoundarySamples { axis, points: vec![], excluded: vec![] };
    let scan = 64;
    for &a in abscissae {
        let mut prev = (hi, line_integral(mu, axis, a, hi)?);
        let mut found = None;
        for i in (0..scan).rev() {
            let t = lo + (hi - lo) * i as f64 / scan as f64;
            let v = line_integral(mu, axis, a, t)?;
            if prev.1 >= 0.0 && v < 0.0 {
                found = Some((t, prev.0));
                break;
            }
            prev = (t, v);
        }
        let Some((mut below, mut above)) = found else {
            out.excluded.push(a);
            continue;
        };
        for _ in 0..80 {
            let m = 0.5 * (below + above);
            if m <= below || m >= above {
                break;
            }
            if line_integral(mu, axis, a, m)? < 0.0 {
                below = m;
            } else {
                above = m;
            }
        }
        out.points.push([a, 0.5 * (below + above)]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{is_in_cone, ConeSpec, GridFunction, GridSpec};
    use crate::measure::build_transformed;

    fn beta_s() -> Curve {
        Curve::Rational { a: 2.0, b: -3.0, c: 4.0, d: -5.0 }
    }

    fn mv() -> ExclusionSet2D {
        let c = Curve::constant(2.0 / 3.0);
        ExclusionSet2D::new(&TypeBox::unit(2), Some(c.clone()), Some(c), (4.0 - 2f64.sqrt()) / 3.0).unwrap()
    }

    #[test]
    fn triangle_partition_is_degenerate() {
        let z = ExclusionSet2D::triangle(&TypeBox::unit(2), 0.8).unwrap();
        let cp = canonical_partition(&z).unwrap();
        assert!((cp.price - 0.8).abs() < 1e-12, "{cp:?}");
        assert!(cp.x_crit.abs() < 1e-12 && cp.y_crit.abs() < 1e-12);
        assert_eq!(cp.classify(&[0.5, 0.5]), Cell::W);
        assert_eq!(cp.classify(&[0.1, 0.1]), Cell::Z);
        let m = mechanism_from_partition(&cp).unwrap();
        assert_eq!(m.outcome(&[0.9, 0.2]), Outcome { allocation: [1.0, 1.0], price: 0.8 });
    }

    #[test]
    fn mv_partition_and_utility() {
        let cp = canonical_partition(&mv()).unwrap();
        let p = (4.0 - 2f64.sqrt()) / 3.0;
        assert!((cp.price - p).abs() < 1e-12);
        assert!((cp.x_crit - (p - 2.0 / 3.0)).abs() < 1e-9);
        assert!((cp.y_crit - (p - 2.0 / 3.0)).abs() < 1e-9);
        assert!((exclusion_utility(&cp, &[1.0, 1.0]) - (2.0 - p)).abs() < 1e-12);
        let m = mechanism_from_partition(&cp).unwrap();
        let o = m.outcome(&[0.1, 0.9]);
        assert_eq!(o.allocation, [0.0, 1.0]);
        assert!((o.price - 2.0 / 3.0).abs() < 1e-12);
        let o = m.outcome(&[0.9, 0.1]);
        assert_eq!(o.allocation, [1.0, 0.0]);
        for i in 0..=20 {
            for j in 0..=20 {
                let x = [i as f64 / 20.0, j as f64 / 20.0];
                let brute = cp.exclusion.l1_distance_sampled(&x, 4000);
                assert!((exclusion_utility(&cp, &x) - brute).abs() < 1e-3, "{x:?}");
                assert!((m.outcome(&x).utility(&x).max(0.0) - exclusion_utility(&cp, &x)).abs() < 1e-9, "{x:?}");
            }
        }
        let g = GridSpec::uniform(&TypeBox::unit(2), 41).unwrap();
        let u = GridFunction::sample(&g, |x| exclusion_utility(&cp, x));
        assert!(is_in_cone(&u, &ConeSpec::utility(2), 1e-9).unwrap().ok);
    }

    #[test]
    fn halfspace_distance_matches_bundle_utility() {
        let bx = TypeBox::unit(3);
        let hs = [crate::region::HalfSpace::sum_at_most(3, 1.2)];
        let u = halfspace_exclusion_utility(&hs, &bx, &[0.9, 0.8, 0.3]).unwrap();
        assert!((u - 0.8).abs() < 1e-6);
        assert!(halfspace_exclusion_utility(&hs, &bx, &[0.1, 0.2, 0.3]).unwrap() < 1e-6);
    }

    #[test]
    fn beta_boundary_and_price() {
        let f = ProductDensity::new(vec![MarginalDensity::beta(1.0, 2.0).unwrap(); 2]).unwrap();
        let mu = build_transformed(&f);
        let xs: Vec<f64> = (0..5).map(|i| 0.6 * i as f64 / 4.0).chain([0.7, 0.9]).collect();
        let b = boundary_from_line_integrals(&mu, LineAxis::Vertical, &xs).unwrap();
        assert_eq!(b.excluded, vec![0.7, 0.9]);
        for p in &b.points {
            assert!((p[1] - beta_s().eval(p[0])).abs() < 1e-9, "{p:?}");
        }
        let bx = TypeBox::unit(2);
        let fam = |p: f64| Ok(ExclusionSet2D::new(&bx, Some(beta_s()), Some(beta_s()), p)?.region());
        let p = find_critical_price(&mu, &fam, default_price_bracket(&bx), 1e-10).unwrap();
        assert!((p - 0.5535).abs() < 1e-3, "{p}");
        let cp = canonical_partition(&ExclusionSet2D::new(&bx, Some(beta_s()), Some(beta_s()), p).unwrap()).unwrap();
        assert!((cp.x_crit - 0.0618).abs() < 1e-3 && (cp.y_crit - 0.0618).abs() < 1e-3);
        assert!((cp.x_crit + cp.s1(cp.x_crit) - cp.price).abs() < 1e-9);
        let m = mechanism_from_partition(&cp).unwrap();
        let x = 0.03;
        let o = m.outcome(&[x, 0.9]);
        assert!((o.allocation[0] - 2.0 / (4.0 - 5.0 * x).powi(2)).abs() < 1e-9);
        assert!((o.price - ((2.0 - 3.0 * x) / (4.0 - 5.0 * x) + 2.0 * x / (4.0 - 5.0 * x).powi(2))).abs() < 1e-9);
    }

    #[test]
    fn unbracketed_price() {
        let mu = build_transformed(&ProductDensity::uniform_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap());
        let fam = |p: f64| Ok(Region::sum_at_most(2, p));
        assert!(matches!(find_critical_price(&mu, &fam, (0.0, 0.5), 1e-9), Err(Error::NotBracketed(_))));
    }
}
