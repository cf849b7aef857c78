//! Regions of the type box and quadrature rules over their intersection with a cell.
//!
//! Every region can produce, for an axis-aligned cell inside the box, a list of
//! weighted points covering its interior part and the part of each box facet it
//! touches. Polytopes are integrated exactly piece by piece (recursive slicing
//! between vertex coordinates), planar curve-bounded slabs are split at kinks and
//! crossings, and arbitrary predicates fall back to adaptive subdivision.

use std::fmt;
use std::sync::Arc;

use crate::curve::Curve;
use crate::distributions::TypeBox;
use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

/// `a . x <= b`.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfSpace {
    pub a: Vec<f64>,
    pub b: f64,
}

impl HalfSpace {
    pub fn new(a: Vec<f64>, b: f64) -> Self {
        HalfSpace { a, b }
    }

    /// `sum_i x_i <= p`.
    pub fn sum_at_most(n: usize, p: f64) -> Self {
        HalfSpace { a: vec![1.0; n], b: p }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() - self.b
    }

    fn scale(&self) -> f64 {
        self.a.iter().fold(self.b.abs(), |m, a| m.max(a.abs())).max(1.0)
    }
}

/// Lower or upper edge of a planar slab.
#[derive(Clone, Debug)]
pub enum Edge {
    BoxLow,
    BoxHigh,
    Curve(Curve),
}

impl Edge {
    fn at(&self, x: f64, lo: f64, hi: f64) -> f64 {
        match self {
            Edge::BoxLow => lo,
            Edge::BoxHigh => hi,
            Edge::Curve(c) => c.eval(x),
        }
    }
}

/// `{ x0 <= x <= x1, lower(x) <= y <= upper(x) }` in the plane.
#[derive(Clone, Debug)]
pub struct Slab {
    pub x0: f64,
    pub x1: f64,
    pub lower: Edge,
    pub upper: Edge,
}

/// Which part of the box a quadrature point integrates over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointKind {
    Interior,
    /// Facet `x_axis = low` (`high == false`) or `x_axis = high`.
    Facet { axis: usize, high: bool },
}

pub type Predicate = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// A closed subset of the type box.
#[derive(Clone)]
pub enum Region {
    Whole,
    Cuboid { lows: Vec<f64>, highs: Vec<f64> },
    Polytope(Vec<HalfSpace>),
    /// Planar union of slabs with disjoint interiors.
    Slabs(Vec<Slab>),
    /// Union of pieces with disjoint interiors.
    Union(Vec<Region>),
    /// Box minus the inner region (boundary ties go to the inner region).
    Complement(Box<Region>),
    Intersection(Vec<Region>),
    Predicate { name: String, test: Predicate },
}

impl fmt::Debug for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Whole => write!(f, "Whole"),
            Region::Cuboid { lows, highs } => write!(f, "Cuboid({lows:?}, {highs:?})"),
            Region::Polytope(h) => write!(f, "Polytope({h:?})"),
            Region::Slabs(s) => write!(f, "Slabs({} pieces)", s.len()),
            Region::Union(r) => f.debug_tuple("Union").field(r).finish(),
            Region::Complement(r) => f.debug_tuple("Complement").field(r).finish(),
            Region::Intersection(r) => f.debug_tuple("Intersection").field(r).finish(),
            Region::Predicate { name, .. } => write!(f, "Predicate({name})"),
        }
    }
}

/// Sink for weighted quadrature points.
pub type Sink<'a> = dyn FnMut(PointKind, &[f64], f64) + 'a;

/// Depth limit of predicate subdivision by dimension.
fn predicate_depth(n: usize) -> usize {
    match n {
        0 | 1 => 30,
        2 => 12,
        3 => 7,
        _ => 5,
    }
}

impl Region {
    /// `{ sum_i x_i <= p }`.
    pub fn sum_at_most(n: usize, p: f64) -> Self {
        Region::Polytope(vec![HalfSpace::sum_at_most(n, p)])
    }

    /// `{ sum_i x_i >= p }` as the closure of the complement.
    pub fn sum_at_least(n: usize, p: f64) -> Self {
        Region::Polytope(vec![HalfSpace::new(vec![-1.0; n], -p)])
    }

    pub fn predicate(name: &str, test: impl Fn(&[f64]) -> bool + Send + Sync + 'static) -> Self {
        Region::Predicate { name: name.to_string(), test: Arc::new(test) }
    }

    /// Membership (closed, except complements, which exclude the inner boundary).
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::Whole => true,
            Region::Cuboid { lows, highs } => x
                .iter()
                .zip(lows.iter().zip(highs))
                .all(|(&v, (&l, &h))| v >= l - 1e-12 && v <= h + 1e-12),
            Region::Polytope(hs) => hs.iter().all(|h| h.value(x) <= 1e-12 * h.scale()),
            Region::Slabs(ss) => ss.iter().any(|s| {
                let (px, py) = (x[0], x[1]);
                let tol = 1e-12 * (1.0 + px.abs() + py.abs());
                px >= s.x0 - tol
                    && px <= s.x1 + tol
                    && py >= s.lower.at(px, f64::NEG_INFINITY, f64::INFINITY) - tol
                    && py <= s.upper.at(px, f64::NEG_INFINITY, f64::INFINITY) + tol
            }),
            Region::Union(rs) => rs.iter().any(|r| r.contains(x)),
            Region::Complement(r) => !r.contains(x),
            Region::Intersection(rs) => rs.iter().all(|r| r.contains(x)),
            Region::Predicate { test, .. } => test(x),
        }
    }

    /// Halfspace description when the region is a polytope (or box).
    fn as_halfspaces(&self, n: usize) -> Option<Vec<HalfSpace>> {
        match self {
            Region::Whole => Some(vec![]),
            Region::Polytope(h) => Some(h.clone()),
            Region::Cuboid { lows, highs } => {
                let mut out = Vec::new();
                for i in 0..n {
                    let mut a = vec![0.0; n];
                    a[i] = 1.0;
                    out.push(HalfSpace::new(a.clone(), highs[i]));
                    a[i] = -1.0;
                    out.push(HalfSpace::new(a, -lows[i]));
                }
                Some(out)
            }
            Region::Intersection(rs) => {
                let mut out = Vec::new();
                for r in rs {
                    out.extend(r.as_halfspaces(n)?);
                }
                Some(out)
            }
            _ => None,
        }
    }

    /// Intersection, kept polyhedral when both sides are.
    pub fn intersect(&self, other: &Region, n: usize) -> Region {
        match (self, other) {
            (Region::Whole, r) | (r, Region::Whole) => r.clone(),
            _ => match (self.as_halfspaces(n), other.as_halfspaces(n)) {
                (Some(mut a), Some(b)) => {
                    a.extend(b);
                    Region::Polytope(a)
                }
                _ => Region::Intersection(vec![self.clone(), other.clone()]),
            },
        }
    }

    /// Bounding box of the region within `bx`.
    pub fn bounding_box(&self, bx: &TypeBox) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = bx.dim();
        match self {
            Region::Whole | Region::Complement(_) | Region::Predicate { .. } => {
                Some((bx.lows.clone(), bx.highs.clone()))
            }
            Region::Union(rs) => {
                let mut acc: Option<(Vec<f64>, Vec<f64>)> = None;
                for r in rs {
                    if let Some((l, h)) = r.bounding_box(bx) {
                        acc = Some(match acc {
                            None => (l, h),
                            Some((al, ah)) => (
                                al.iter().zip(&l).map(|(a, b)| a.min(*b)).collect(),
                                ah.iter().zip(&h).map(|(a, b)| a.max(*b)).collect(),
                            ),
                        });
                    }
                }
                acc
            }
            Region::Slabs(ss) => {
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for s in ss {
                    let x0 = s.x0.max(bx.lows[0]);
                    let x1 = s.x1.min(bx.highs[0]);
                    if x1 < x0 {
                        continue;
                    }
                    let mut xs = vec![x0, x1];
                    for e in [&s.lower, &s.upper] {
                        if let Edge::Curve(c) = e {
                            xs.extend(c.kinks(x0, x1));
                        }
                    }
                    let mut any = false;
                    for &x in &xs {
                        let l = s.lower.at(x, bx.lows[1], bx.highs[1]).max(bx.lows[1]);
                        let u = s.upper.at(x, bx.lows[1], bx.highs[1]).min(bx.highs[1]);
                        if u >= l {
                            any = true;
                            lo[1] = lo[1].min(l);
                            hi[1] = hi[1].max(u);
                        }
                    }
                    if any {
                        lo[0] = lo[0].min(x0);
                        hi[0] = hi[0].max(x1);
                    }
                }
                if lo[0] > hi[0] {
                    None
                } else {
                    Some((lo.to_vec(), hi.to_vec()))
                }
            }
            _ => {
                let hs = self.as_halfspaces(n)?;
                polytope_bbox(&bx.lows, &bx.highs, &hs)
            }
        }
    }

    /// Emit quadrature points for `region ∩ [lo, hi]` (a cell of `bx`), interior
    /// and box-facet parts. Returns an error estimate (non-zero only for the
    /// predicate fallback).
    pub fn rule(
        &self,
        bx: &TypeBox,
        lo: &[f64],
        hi: &[f64],
        order: usize,
        sink: &mut Sink<'_>,
    ) -> Result<f64> {
        let n = bx.dim();
        match self {
            Region::Slabs(ss) => {
                if n != 2 {
                    return Err(Error::Unsupported("slab regions are planar".into()));
                }
                for s in ss {
                    slab_rule(s, bx, lo, hi, order, sink);
                }
                Ok(0.0)
            }
            Region::Union(rs) => {
                let mut e = 0.0;
                for r in rs {
                    e += r.rule(bx, lo, hi, order, sink)?;
                }
                Ok(e)
            }
            Region::Complement(inner) => {
                let e = Region::Whole.rule(bx, lo, hi, order, sink)?;
                let mut neg = |k: PointKind, x: &[f64], w: f64| sink(k, x, -w);
                Ok(e + inner.rule(bx, lo, hi, order, &mut neg)?)
            }
            Region::Predicate { test, .. } => predicate_rule(&**test, bx, lo, hi, sink),
            _ => match self.as_halfspaces(n) {
                Some(hs) => {
                    polytope_rule(bx, lo, hi, &hs, order, sink);
                    Ok(0.0)
                }
                None => {
                    let me = self.clone();
                    predicate_rule(&move |x: &[f64]| me.contains(x), bx, lo, hi, sink)
                }
            },
        }
    }
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

/// Facets of the box that the cell `[lo, hi]` touches.
fn cell_facets(bx: &TypeBox, lo: &[f64], hi: &[f64]) -> Vec<(usize, bool, f64)> {
    let mut out = Vec::new();
    for i in 0..bx.dim() {
        if near(lo[i], bx.lows[i]) {
            out.push((i, false, bx.lows[i]));
        }
        if near(hi[i], bx.highs[i]) {
            out.push((i, true, bx.highs[i]));
        }
    }
    out
}

fn polytope_rule(
    bx: &TypeBox,
    lo: &[f64],
    hi: &[f64],
    hs: &[HalfSpace],
    order: usize,
    sink: &mut Sink<'_>,
) {
    let n = bx.dim();
    // Fast paths: cell fully inside or fully outside one halfspace.
    let mut active: Vec<&HalfSpace> = Vec::new();
    for h in hs {
        let (mut vmin, mut vmax) = (-h.b, -h.b);
        for i in 0..n {
            let (p, q) = (h.a[i] * lo[i], h.a[i] * hi[i]);
            vmin += p.min(q);
            vmax += p.max(q);
        }
        let tol = 1e-13 * h.scale();
        if vmin > tol {
            return;
        }
        if vmax > tol {
            active.push(h);
        }
    }
    let all: Vec<usize> = (0..n).collect();
    let mut x = lo.to_vec();
    {
        let mut emit = |p: &[f64], w: f64| sink(PointKind::Interior, p, w);
        slice_rec(&all, 0, &mut x, 1.0, lo, hi, &active, order, &mut emit);
    }
    for (axis, high, value) in cell_facets(bx, lo, hi) {
        let free: Vec<usize> = (0..n).filter(|&j| j != axis).collect();
        let mut x = lo.to_vec();
        x[axis] = value;
        let mut emit = |p: &[f64], w: f64| sink(PointKind::Facet { axis, high }, p, w);
        slice_rec(&free, 0, &mut x, 1.0, lo, hi, &active, order, &mut emit);
    }
}

/// Integrate over the free axes `axes[k..]` with the other coordinates of `x` fixed.
#[allow(clippy::too_many_arguments)]
fn slice_rec(
    axes: &[usize],
    k: usize,
    x: &mut Vec<f64>,
    w: f64,
    lo: &[f64],
    hi: &[f64],
    hs: &[&HalfSpace],
    order: usize,
    emit: &mut dyn FnMut(&[f64], f64),
) {
    let free = &axes[k..];
    // Reduce constraints to the free axes.
    let mut reduced: Vec<(Vec<f64>, f64)> = Vec::with_capacity(hs.len());
    for h in hs {
        let mut rhs = h.b;
        for (j, &xj) in x.iter().enumerate() {
            if !free.contains(&j) {
                rhs -= h.a[j] * xj;
            }
        }
        let coef: Vec<f64> = free.iter().map(|&j| h.a[j]).collect();
        let tol = 1e-12 * h.scale();
        if coef.iter().all(|c| c.abs() <= 1e-300) {
            if rhs < -tol {
                return;
            }
            continue;
        }
        reduced.push((coef, rhs));
    }
    if free.is_empty() {
        emit(x, w);
        return;
    }
    let ax = free[0];
    let eps = 1e-14 * (1.0 + hi[ax].abs());
    if free.len() == 1 {
        let (mut l, mut u) = (lo[ax], hi[ax]);
        for (c, r) in &reduced {
            if c[0] > 0.0 {
                u = u.min(r / c[0]);
            } else {
                l = l.max(r / c[0]);
            }
        }
        if u - l <= eps {
            return;
        }
        let (gx, gw) = gauss_legendre(order);
        let (half, mid) = (0.5 * (u - l), 0.5 * (u + l));
        for (t, wt) in gx.iter().zip(gw) {
            x[ax] = mid + half * t;
            emit(x, w * half * wt);
        }
        return;
    }
    let mut breaks = vertex_coords(free, &reduced, lo, hi);
    if breaks.len() < 2 {
        return;
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|p, q| (*p - *q).abs() <= eps);
    let (gx, gw) = gauss_legendre(order);
    for win in breaks.windows(2) {
        let (t0, t1) = (win[0], win[1]);
        if t1 - t0 <= eps {
            continue;
        }
        let (half, mid) = (0.5 * (t1 - t0), 0.5 * (t1 + t0));
        for (t, wt) in gx.iter().zip(gw) {
            x[ax] = mid + half * t;
            slice_rec(axes, k + 1, x, w * half * wt, lo, hi, hs, order, emit);
        }
    }
}

/// First-free-axis coordinates of the vertices of `{y in box : c . y <= r}`.
fn vertex_coords(free: &[usize], cons: &[(Vec<f64>, f64)], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let d = free.len();
    let mut rows: Vec<(Vec<f64>, f64)> = cons.to_vec();
    for (k, &j) in free.iter().enumerate() {
        let mut e = vec![0.0; d];
        e[k] = 1.0;
        rows.push((e.clone(), hi[j]));
        e[k] = -1.0;
        rows.push((e, -lo[j]));
    }
    let m = rows.len();
    let scale = free.iter().fold(1.0f64, |s, &j| s.max(lo[j].abs()).max(hi[j].abs()));
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..d).collect();
    loop {
        if let Some(y) = solve_square(&idx.iter().map(|&i| &rows[i]).collect::<Vec<_>>()) {
            let feasible = rows.iter().all(|(c, r)| {
                let v: f64 = c.iter().zip(&y).map(|(a, b)| a * b).sum();
                v <= r + 1e-10 * scale * (1.0 + c.iter().fold(0.0f64, |s, a| s.max(a.abs())))
            });
            if feasible {
                out.push(y[0]);
            }
        }
        // Next combination.
        let mut i = d;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] < m - d + i {
                idx[i] += 1;
                for t in i + 1..d {
                    idx[t] = idx[t - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Solve the square system given by rows `(c, r)` with `c . y = r`.
fn solve_square(rows: &[&(Vec<f64>, f64)]) -> Option<Vec<f64>> {
    let d = rows.len();
    let mut a: Vec<Vec<f64>> = rows.iter().map(|(c, r)| {
        let mut v = c.clone();
        v.push(*r);
        v
    }).collect();
    for col in 0..d {
        let piv = (col..d).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        for i in 0..d {
            if i != col {
                let f = a[i][col] / a[col][col];
                if f != 0.0 {
                    for j in col..=d {
                        a[i][j] -= f * a[col][j];
                    }
                }
            }
        }
    }
    Some((0..d).map(|i| a[i][d] / a[i][i]).collect())
}

fn polytope_bbox(lo: &[f64], hi: &[f64], hs: &[HalfSpace]) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = lo.len();
    let cons: Vec<(Vec<f64>, f64)> = hs.iter().map(|h| (h.a.clone(), h.b + 1e-12 * h.scale())).collect();
    let mut blo = vec![0.0; n];
    let mut bhi = vec![0.0; n];
    for i in 0..n {
        // Rotate so that axis i comes first.
        let free: Vec<usize> = (0..n).map(|k| (k + i) % n).collect();
        let rc: Vec<(Vec<f64>, f64)> =
            cons.iter().map(|(c, r)| (free.iter().map(|&j| c[j]).collect(), *r)).collect();
        let v = vertex_coords(&free, &rc, lo, hi);
        if v.is_empty() {
            return None;
        }
        blo[i] = v.iter().copied().fold(f64::INFINITY, f64::min).max(lo[i]);
        bhi[i] = v.iter().copied().fold(f64::NEG_INFINITY, f64::max).min(hi[i]);
    }
    Some((blo, bhi))
}

fn slab_rule(s: &Slab, bx: &TypeBox, lo: &[f64], hi: &[f64], order: usize, sink: &mut Sink<'_>) {
    let (blx, bhx, bly, bhy) = (bx.lows[0], bx.highs[0], bx.lows[1], bx.highs[1]);
    let xa = s.x0.max(lo[0]).max(blx);
    let xb = s.x1.min(hi[0]).min(bhx);
    let eps = 1e-13 * (1.0 + bhx.abs());
    if xb - xa <= eps {
        return;
    }
    let lower = |x: f64| s.lower.at(x, bly, bhy);
    let upper = |x: f64| s.upper.at(x, bly, bhy);
    let mut breaks = vec![xa, xb];
    for e in [&s.lower, &s.upper] {
        if let Edge::Curve(c) = e {
            breaks.extend(c.kinks(xa, xb));
            for level in [lo[1], hi[1]] {
                if let Some(r) = c.crossing(level, xa, xb) {
                    breaks.push(r);
                }
            }
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|p, q| (*p - *q).abs() <= eps);
    let (gx, gw) = gauss_legendre(order);
    let ytol = 1e-12 * (1.0 + bhy.abs());
    let touches_bottom = near(lo[1], bly);
    let touches_top = near(hi[1], bhy);
    for win in breaks.windows(2) {
        let (t0, t1) = (win[0], win[1]);
        if t1 - t0 <= eps {
            continue;
        }
        let (hx, mx) = (0.5 * (t1 - t0), 0.5 * (t1 + t0));
        for (tx, wx) in gx.iter().zip(gw) {
            let x = mx + hx * tx;
            let yl = lower(x).max(lo[1]);
            let yu = upper(x).min(hi[1]);
            if yu <= yl {
                continue;
            }
            let (hy, my) = (0.5 * (yu - yl), 0.5 * (yu + yl));
            for (ty, wy) in gx.iter().zip(gw) {
                sink(PointKind::Interior, &[x, my + hy * ty], hx * wx * hy * wy);
            }
        }
        let (lm, um) = (lower(mx), upper(mx));
        if touches_bottom && lm <= bly + ytol && um > bly + ytol {
            for (tx, wx) in gx.iter().zip(gw) {
                sink(PointKind::Facet { axis: 1, high: false }, &[mx + hx * tx, bly], hx * wx);
            }
        }
        if touches_top && um >= bhy - ytol && lm < bhy - ytol {
            for (tx, wx) in gx.iter().zip(gw) {
                sink(PointKind::Facet { axis: 1, high: true }, &[mx + hx * tx, bhy], hx * wx);
            }
        }
    }
    for (xv, side_high) in [(xa, false), (xb, true)] {
        let on_side = if side_high {
            near(xv, bhx) && near(hi[0], bhx)
        } else {
            near(xv, blx) && near(lo[0], blx)
        };
        if !on_side {
            continue;
        }
        let yl = lower(xv).max(lo[1]);
        let yu = upper(xv).min(hi[1]);
        if yu - yl <= ytol {
            continue;
        }
        let (hy, my) = (0.5 * (yu - yl), 0.5 * (yu + yl));
        for (ty, wy) in gx.iter().zip(gw) {
            sink(PointKind::Facet { axis: 0, high: side_high }, &[xv, my + hy * ty], hy * wy);
        }
    }
}

/// Adaptive tensor subdivision with a 4-point rule per cell for indicator regions.
fn predicate_rule(
    test: &dyn Fn(&[f64]) -> bool,
    bx: &TypeBox,
    lo: &[f64],
    hi: &[f64],
    sink: &mut Sink<'_>,
) -> Result<f64> {
    let n = bx.dim();
    let depth = predicate_depth(n);
    let all: Vec<usize> = (0..n).collect();
    let mut err = 0.0;
    let mut x = lo.to_vec();
    {
        let mut emit = |p: &[f64], w: f64| sink(PointKind::Interior, p, w);
        err += subdivide(test, &all, &mut x, lo, hi, depth, 2, &mut emit);
    }
    for (axis, high, value) in cell_facets(bx, lo, hi) {
        let free: Vec<usize> = (0..n).filter(|&j| j != axis).collect();
        let mut x = lo.to_vec();
        x[axis] = value;
        let mut emit = |p: &[f64], w: f64| sink(PointKind::Facet { axis, high }, p, w);
        err += subdivide(test, &free, &mut x, lo, hi, depth, 2, &mut emit);
    }
    Ok(err)
}

/// Returns the measure (volume) of cells left undecided at the depth limit.
/// The first `forced` levels split unconditionally so small features are seen.
#[allow(clippy::too_many_arguments)]
fn subdivide(
    test: &dyn Fn(&[f64]) -> bool,
    free: &[usize],
    x: &mut Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    depth: usize,
    forced: usize,
    emit: &mut dyn FnMut(&[f64], f64),
) -> f64 {
    let d = free.len();
    if d == 0 {
        if test(x) {
            emit(x, 1.0);
        }
        return 0.0;
    }
    // Classify by corners and centre.
    let mut inside = 0usize;
    let total = (1usize << d) + 1;
    for mask in 0..(1usize << d) {
        for (k, &j) in free.iter().enumerate() {
            x[j] = if mask >> k & 1 == 1 { hi[j] } else { lo[j] };
        }
        if test(x) {
            inside += 1;
        }
    }
    for &j in free {
        x[j] = 0.5 * (lo[j] + hi[j]);
    }
    if test(x) {
        inside += 1;
    }
    let vol: f64 = free.iter().map(|&j| hi[j] - lo[j]).product();
    if inside == 0 && forced == 0 {
        return 0.0;
    }
    if (inside == total && forced == 0) || depth == 0 {
        let mut undecided = 0.0;
        if depth == 0 && inside != total && inside != 0 {
            undecided = vol;
        }
        tensor_points(test, free, 0, x, 1.0, lo, hi, inside == total, emit);
        return undecided;
    }
    let mut err = 0.0;
    for mask in 0..(1usize << d) {
        let mut clo = lo.to_vec();
        let mut chi = hi.to_vec();
        for (k, &j) in free.iter().enumerate() {
            let m = 0.5 * (lo[j] + hi[j]);
            if mask >> k & 1 == 1 {
                clo[j] = m;
            } else {
                chi[j] = m;
            }
        }
        err += subdivide(test, free, x, &clo, &chi, depth - 1, forced.saturating_sub(1), emit);
    }
    err
}

#[allow(clippy::too_many_arguments)]
fn tensor_points(
    test: &dyn Fn(&[f64]) -> bool,
    free: &[usize],
    k: usize,
    x: &mut Vec<f64>,
    w: f64,
    lo: &[f64],
    hi: &[f64],
    full: bool,
    emit: &mut dyn FnMut(&[f64], f64),
) {
    if k == free.len() {
        if full || test(x) {
            emit(x, w);
        }
        return;
    }
    let j = free[k];
    let (gx, gw) = gauss_legendre(4);
    let (h, m) = (0.5 * (hi[j] - lo[j]), 0.5 * (hi[j] + lo[j]));
    for (t, wt) in gx.iter().zip(gw) {
        x[j] = m + h * t;
        tensor_points(test, free, k + 1, x, w * h * wt, lo, hi, full, emit);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate(r: &Region, bx: &TypeBox, f: impl Fn(&[f64]) -> f64) -> (f64, Vec<f64>) {
        let n = bx.dim();
        let mut interior = 0.0;
        let mut facets = vec![0.0; 2 * n];
        let mut sink = |k: PointKind, x: &[f64], w: f64| match k {
            PointKind::Interior => interior += w * f(x),
            PointKind::Facet { axis, high } => facets[2 * axis + high as usize] += w,
        };
        r.rule(bx, &bx.lows, &bx.highs, 8, &mut sink).unwrap();
        (interior, facets)
    }

    #[test]
    fn triangle_area_and_facets() {
        let bx = TypeBox::unit(2);
        let (a, f) = integrate(&Region::sum_at_most(2, 1.0), &bx, |_| 1.0);
        assert!((a - 0.5).abs() < 1e-14);
        assert!((f[0] - 1.0).abs() < 1e-14 && (f[2] - 1.0).abs() < 1e-14);
        assert!(f[1].abs() < 1e-14 && f[3].abs() < 1e-14);
        let (m, _) = integrate(&Region::sum_at_most(2, 1.5), &bx, |x| x[0] * x[1]);
        // 1/4 minus the corner triangle integral of xy over x+y>=1.5.
        let corner = {
            let g = |x: f64| x * (1.0 - (1.5 - x).powi(2)) / 2.0;
            crate::quadrature::fixed(0.5, 1.0, 10, g)
        };
        assert!((m - (0.25 - corner)).abs() < 1e-13);
    }

    #[test]
    fn simplex_volumes_in_higher_dimensions() {
        for n in 2..=4usize {
            let bx = TypeBox::unit(n);
            let (v, _) = integrate(&Region::sum_at_most(n, 1.0), &bx, |_| 1.0);
            let fact: f64 = (1..=n).map(|k| k as f64).product();
            assert!((v - 1.0 / fact).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn complement_and_union_are_additive() {
        let bx = TypeBox::new(vec![4.0, 4.0], vec![16.0, 7.0]).unwrap();
        let z = Region::Polytope(vec![HalfSpace::new(vec![0.5, 1.0], 8.0)]);
        let (az, fz) = integrate(&z, &bx, |x| x[0]);
        let (aw, fw) = integrate(&Region::Complement(Box::new(z)), &bx, |x| x[0]);
        let (all, fall) = integrate(&Region::Whole, &bx, |x| x[0]);
        assert!((az + aw - all).abs() < 1e-10);
        for k in 0..4 {
            assert!((fz[k] + fw[k] - fall[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn slabs_under_curve() {
        let bx = TypeBox::unit(2);
        let c = Curve::Rational { a: 2.0, b: -3.0, c: 4.0, d: -5.0 };
        let r = Region::Slabs(vec![Slab { x0: 0.0, x1: 0.5, lower: Edge::BoxLow, upper: Edge::Curve(c.clone()) }]);
        let (a, f) = integrate(&r, &bx, |_| 1.0);
        let exact = crate::quadrature::adaptive(0.0, 0.5, 1e-14, 40, |x| c.eval(x)).unwrap();
        assert!((a - exact).abs() < 1e-9, "{}", a - exact);
        assert!((f[0] - 0.5).abs() < 1e-14);
        assert!((f[2] - 0.5).abs() < 1e-14);
        // Same region by predicate subdivision, coarser.
        let p = Region::predicate("under", move |x| x[0] <= 0.5 && x[1] <= c.eval(x[0]));
        let (ap, _) = integrate(&p, &bx, |_| 1.0);
        assert!((ap - exact).abs() < 1e-3);
    }

    #[test]
    fn cell_splitting_is_consistent() {
        let bx = TypeBox::unit(2);
        let r = Region::Polytope(vec![HalfSpace::new(vec![1.0, 2.0], 1.3), HalfSpace::new(vec![-1.0, 0.0], -0.1)]);
        let (whole, _) = integrate(&r, &bx, |x| x[0] * x[0] + x[1]);
        let mut sum = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                let lo = [i as f64 / 5.0, j as f64 / 5.0];
                let hi = [(i + 1) as f64 / 5.0, (j + 1) as f64 / 5.0];
                let mut sink = |k: PointKind, x: &[f64], w: f64| {
                    if k == PointKind::Interior {
                        sum += w * (x[0] * x[0] + x[1]);
                    }
                };
                r.rule(&bx, &lo, &hi, 6, &mut sink).unwrap();
            }
        }
        assert!((sum - whole).abs() < 1e-13);
    }

    #[test]
    fn bounding_boxes() {
        let bx = TypeBox::unit(2);
        let (lo, hi) = Region::sum_at_most(2, 0.5).bounding_box(&bx).unwrap();
        assert!(lo.iter().all(|v| v.abs() < 1e-12));
        assert!(hi.iter().all(|v| (v - 0.5).abs() < 1e-9));
        assert!(Region::sum_at_most(2, -1.0).bounding_box(&bx).is_none());
    }
}
