//! Rectangular grids, grid measures and functions, and the utility cone on a grid.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::distributions::TypeBox;
use crate::error::{Error, Result};
use crate::measure::TransformedMeasure;

/// Uniform lattice on a box. Node multi-indices are stored in C order (last axis
/// fastest), so the lowest corner is node 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(rename = "box")]
    pub type_box: TypeBox,
    pub nodes_per_axis: Vec<usize>,
}

impl GridSpec {
    /// Axes with a single node sit at their low coordinate.
    pub fn new(type_box: TypeBox, nodes_per_axis: Vec<usize>) -> Result<Self> {
        type_box.validate()?;
        if nodes_per_axis.len() != type_box.dim() {
            return Err(Error::Invalid("node counts must match box dimension".into()));
        }
        if nodes_per_axis.iter().any(|&k| k == 0) {
            return Err(Error::Invalid("every axis needs at least one node".into()));
        }
        let total = nodes_per_axis.iter().try_fold(1usize, |acc, &k| acc.checked_mul(k));
        if total.is_none_or(|t| t > 50_000_000) {
            return Err(Error::Invalid("grid too large".into()));
        }
        Ok(GridSpec { type_box, nodes_per_axis })
    }

    /// `k` nodes on every axis.
    pub fn uniform(type_box: &TypeBox, k: usize) -> Result<Self> {
        Self::new(type_box.clone(), vec![k; type_box.dim()])
    }

    pub fn dim(&self) -> usize {
        self.nodes_per_axis.len()
    }

    pub fn len(&self) -> usize {
        self.nodes_per_axis.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node spacing on axis `i` (zero for a single-node axis).
    pub fn spacing(&self, i: usize) -> f64 {
        let k = self.nodes_per_axis[i];
        if k < 2 {
            0.0
        } else {
            self.type_box.width(i) / (k - 1) as f64
        }
    }

    pub fn max_spacing(&self) -> f64 {
        (0..self.dim()).map(|i| self.spacing(i)).fold(0.0, f64::max)
    }

    pub fn coord(&self, i: usize, k: usize) -> f64 {
        if k + 1 == self.nodes_per_axis[i] && k > 0 {
            self.type_box.highs[i]
        } else {
            self.type_box.lows[i] + self.spacing(i) * k as f64
        }
    }

    pub fn strides(&self) -> Vec<usize> {
        let n = self.dim();
        let mut s = vec![1usize; n];
        for i in (0..n.saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.nodes_per_axis[i + 1];
        }
        s
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let n = self.dim();
        let mut m = vec![0; n];
        for i in (0..n).rev() {
            m[i] = idx % self.nodes_per_axis[i];
            idx /= self.nodes_per_axis[i];
        }
        m
    }

    pub fn flat_index(&self, m: &[usize]) -> usize {
        m.iter().zip(&self.nodes_per_axis).fold(0, |acc, (&k, &n)| acc * n + k)
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx).iter().enumerate().map(|(i, &k)| self.coord(i, k)).collect()
    }

    /// Node nearest to `x`; ties go to the lower index.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let m: Vec<usize> = (0..self.dim())
            .map(|i| {
                let h = self.spacing(i);
                if h == 0.0 {
                    return 0;
                }
                let t = (x[i] - self.type_box.lows[i]) / h;
                let k = (t - 0.5).ceil().max(0.0) as usize;
                k.min(self.nodes_per_axis[i] - 1)
            })
            .collect();
        self.flat_index(&m)
    }

    /// `index + offset` (offset in lattice steps) if it stays on the grid.
    pub fn shift(&self, idx: usize, offset: &[i64]) -> Option<usize> {
        let m = self.multi_index(idx);
        let mut out = Vec::with_capacity(m.len());
        for ((&k, &d), &n) in m.iter().zip(offset).zip(&self.nodes_per_axis) {
            let v = k as i64 + d;
            if v < 0 || v >= n as i64 {
                return None;
            }
            out.push(v as usize);
        }
        Some(self.flat_index(&out))
    }

    /// Grid cells as `(lo, hi, base node)`.
    pub fn cells(&self) -> Vec<(Vec<f64>, Vec<f64>, usize)> {
        let n = self.dim();
        let counts: Vec<usize> = self.nodes_per_axis.iter().map(|&k| k.saturating_sub(1)).collect();
        let total: usize = counts.iter().product();
        (0..total)
            .map(|mut c| {
                let mut m = vec![0; n];
                for i in (0..n).rev() {
                    m[i] = c % counts[i];
                    c /= counts[i];
                }
                let lo = (0..n).map(|i| self.coord(i, m[i])).collect();
                let hi = (0..n).map(|i| self.coord(i, m[i] + 1)).collect();
                (lo, hi, self.flat_index(&m))
            })
            .collect()
    }
}

/// Signed node masses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeasure {
    pub grid: GridSpec,
    pub mass: Vec<f64>,
}

impl GridMeasure {
    pub fn zeros(grid: &GridSpec) -> Self {
        GridMeasure { grid: grid.clone(), mass: vec![0.0; grid.len()] }
    }

    pub fn new(grid: GridSpec, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != grid.len() {
            return Err(Error::Invalid(format!(
                "measure has {} masses for {} nodes",
                mass.len(),
                grid.len()
            )));
        }
        if mass.iter().any(|m| !m.is_finite()) {
            return Err(Error::Invalid("non-finite node mass".into()));
        }
        Ok(GridMeasure { grid, mass })
    }

    /// Unit-style point masses at the given multi-indices.
    pub fn from_points(grid: &GridSpec, points: &[(&[usize], f64)]) -> Self {
        let mut m = Self::zeros(grid);
        for (idx, w) in points {
            m.mass[grid.flat_index(idx)] += w;
        }
        m
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn total_variation(&self) -> f64 {
        self.mass.iter().map(|m| m.abs()).sum()
    }

    pub fn positive_part(&self) -> Self {
        self.map(|m| m.max(0.0))
    }

    /// Negative part as non-negative masses.
    pub fn negative_part(&self) -> Self {
        self.map(|m| (-m).max(0.0))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        GridMeasure { grid: self.grid.clone(), mass: self.mass.iter().map(|&m| f(m)).collect() }
    }

    fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Invalid("measures live on different grids".into()));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(GridMeasure {
            grid: self.grid.clone(),
            mass: self.mass.iter().zip(&other.mass).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.map(|m| -m))
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|m| m * s)
    }

    pub fn is_nonnegative(&self, tol: f64) -> bool {
        self.mass.iter().all(|&m| m >= -tol)
    }
}

/// Node values of a function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub grid: GridSpec,
    pub value: Vec<f64>,
}

impl GridFunction {
    pub fn sample(grid: &GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        GridFunction { grid: grid.clone(), value: (0..grid.len()).map(|i| f(&grid.point(i))).collect() }
    }

    pub fn zeros(grid: &GridSpec) -> Self {
        GridFunction { grid: grid.clone(), value: vec![0.0; grid.len()] }
    }

    /// `Σ u(x) m(x)`.
    pub fn integrate(&self, m: &GridMeasure) -> f64 {
        self.value.iter().zip(&m.mass).map(|(u, m)| u * m).sum()
    }
}

/// Monotonicity signs, convexity stencil radius, and the Lipschitz flag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    /// `+1` non-decreasing, `-1` non-increasing, `0` free, per axis.
    pub v: Vec<i8>,
    pub radius: usize,
    pub lipschitz: bool,
}

impl ConeSpec {
    /// The cone of feasible utilities: non-decreasing, convex (radius 2), 1-Lipschitz.
    pub fn utility(n: usize) -> Self {
        ConeSpec { v: vec![1; n], radius: 2, lipschitz: true }
    }

    /// `v`-monotone convex functions with no Lipschitz bound.
    pub fn directional(v: Vec<i8>, radius: usize) -> Self {
        ConeSpec { v, radius, lipschitz: false }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.v.len() != n {
            return Err(Error::Invalid("direction vector length differs from grid dimension".into()));
        }
        if self.radius < 1 {
            return Err(Error::Invalid("stencil radius must be at least 1".into()));
        }
        if self.v.iter().any(|s| !(-1..=1).contains(s)) {
            return Err(Error::Invalid("direction entries must be -1, 0 or 1".into()));
        }
        Ok(())
    }
}

/// Which family a cone row belongs to.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum RowKind {
    Monotone { node: usize, axis: usize },
    Convex { center: usize, dir: Vec<i64> },
    Lipschitz { node: usize, axis: usize },
}

/// `Σ coeff·u[col] <= rhs`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConeRow {
    pub kind: RowKind,
    pub entries: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl ConeRow {
    pub fn activity(&self, u: &[f64]) -> f64 {
        self.entries.iter().map(|&(j, c)| c * u[j]).sum()
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Primitive lattice directions with `‖d‖∞ <= r`, one per ± pair.
/// Non-primitive directions give rows implied by the primitive ones.
pub fn stencil_directions(n: usize, r: usize) -> Vec<Vec<i64>> {
    let r = r as i64;
    let side = (2 * r + 1) as usize;
    let mut out = Vec::new();
    for code in 0..side.pow(n as u32) {
        let mut c = code;
        let mut d = vec![0i64; n];
        for k in (0..n).rev() {
            d[k] = (c % side) as i64 - r;
            c /= side;
        }
        let first = d.iter().find(|&&v| v != 0);
        match first {
            Some(&v) if v > 0 => {}
            _ => continue,
        }
        if d.iter().fold(0, |g, &v| gcd(g, v)) == 1 {
            out.push(d);
        }
    }
    out
}

/// All cone rows of `c` on grid `g`, in the order monotone, convex, Lipschitz.
pub fn cone_constraints(g: &GridSpec, c: &ConeSpec) -> Result<Vec<ConeRow>> {
    let n = g.dim();
    c.validate(n)?;
    let mut rows = Vec::new();
    for axis in 0..n {
        if c.v[axis] == 0 {
            continue;
        }
        let mut e = vec![0i64; n];
        e[axis] = 1;
        let s = c.v[axis] as f64;
        for node in 0..g.len() {
            if let Some(up) = g.shift(node, &e) {
                rows.push(ConeRow {
                    kind: RowKind::Monotone { node, axis },
                    entries: vec![(node, s), (up, -s)],
                    rhs: 0.0,
                });
            }
        }
    }
    let dirs = stencil_directions(n, c.radius);
    for center in 0..g.len() {
        for d in &dirs {
            let neg: Vec<i64> = d.iter().map(|v| -v).collect();
            if let (Some(p), Some(q)) = (g.shift(center, d), g.shift(center, &neg)) {
                rows.push(ConeRow {
                    kind: RowKind::Convex { center, dir: d.clone() },
                    entries: vec![(q, -1.0), (center, 2.0), (p, -1.0)],
                    rhs: 0.0,
                });
            }
        }
    }
    if c.lipschitz {
        for axis in 0..n {
            let mut e = vec![0i64; n];
            e[axis] = 1;
            let h = g.spacing(axis);
            for node in 0..g.len() {
                if let Some(up) = g.shift(node, &e) {
                    rows.push(ConeRow {
                        kind: RowKind::Lipschitz { node, axis },
                        entries: vec![(node, -1.0), (up, 1.0)],
                        rhs: h,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Sparse triplet text: one line `row col coeff <= rhs` per nonzero.
pub fn export_triplets(rows: &[ConeRow]) -> String {
    let mut s = String::from("# row col coeff sense rhs\n");
    for (r, row) in rows.iter().enumerate() {
        for &(j, c) in &row.entries {
            let _ = writeln!(s, "{r} {j} {c} <= {}", row.rhs);
        }
    }
    s
}

/// A violated cone row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub kind: RowKind,
    pub excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConeCheck {
    pub ok: bool,
    pub worst: f64,
    pub violations: Vec<Violation>,
}

/// Whether every cone row holds within `tol`.
pub fn is_in_cone(u: &GridFunction, c: &ConeSpec, tol: f64) -> Result<ConeCheck> {
    let rows = cone_constraints(&u.grid, c)?;
    let mut violations = Vec::new();
    let mut worst: f64 = 0.0;
    for row in rows {
        let excess = row.activity(&u.value) - row.rhs;
        worst = worst.max(excess);
        if excess > tol {
            violations.push(Violation { kind: row.kind, excess });
        }
    }
    Ok(ConeCheck { ok: violations.is_empty(), worst, violations })
}

/// How continuous mass is assigned to nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Discretization {
    /// Multilinear (cloud-in-cell) splitting over the enclosing grid cell.
    /// Preserves mass, first moments and componentwise orderings.
    #[default]
    Linear,
    /// Whole Voronoi cell of each node goes to that node.
    Cell,
}

/// Node masses of `μ` on `g` (Linear splitting).
pub fn discretize_measure(mu: &TransformedMeasure, g: &GridSpec) -> Result<GridMeasure> {
    discretize_with(mu, g, Discretization::Linear, None)
}

/// Node masses of `μ` on `g`, with explicit scheme and quadrature order.
pub fn discretize_with(
    mu: &TransformedMeasure,
    g: &GridSpec,
    mode: Discretization,
    order: Option<usize>,
) -> Result<GridMeasure> {
    let n = g.dim();
    if n != mu.dim() {
        return Err(Error::Invalid("grid and measure dimensions differ".into()));
    }
    let mb = mu.type_box();
    let tol = 1e-12 * mb.highs.iter().fold(1.0f64, |m, h| m.max(h.abs()));
    for i in 0..n {
        if g.type_box.lows[i] < mb.lows[i] - tol || g.type_box.highs[i] > mb.highs[i] + tol {
            return Err(Error::Invalid("grid box must lie inside the measure's box".into()));
        }
    }
    let order = order.unwrap_or(match n {
        1 => 8,
        2 => 6,
        3 => 4,
        _ => 3,
    });
    let mut out = GridMeasure::zeros(g);
    match mode {
        Discretization::Linear => {
            if g.nodes_per_axis.iter().any(|&k| k < 2) {
                return Err(Error::Invalid("linear discretization needs two nodes per axis".into()));
            }
            let cells = g.cells();
            // Each cell is integrated on `sub^n` sub-boxes so that steep
            // densities (power-law heads) keep their mass to quadrature accuracy.
            let sub: usize = match n {
                1 | 2 => 4,
                3 => 2,
                _ => 1,
            };
            let mut boxes: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(cells.len() * sub.pow(n as u32));
            let mut owner = Vec::with_capacity(boxes.capacity());
            for (c, (l, h, _)) in cells.iter().enumerate() {
                for k in 0..sub.pow(n as u32) {
                    let mut r = k;
                    let (mut lo, mut hi) = (l.clone(), h.clone());
                    for i in 0..n {
                        let j = r % sub;
                        r /= sub;
                        let w = (h[i] - l[i]) / sub as f64;
                        lo[i] = l[i] + w * j as f64;
                        hi[i] = if j + 1 == sub { h[i] } else { l[i] + w * (j + 1) as f64 };
                    }
                    boxes.push((lo, hi));
                    owner.push(c);
                }
            }
            let strides = g.strides();
            let spread = |base: usize, lo: &[f64], hi: &[f64], x: &[f64], m: f64, mass: &mut [f64]| {
                let t: Vec<f64> = (0..n).map(|i| ((x[i] - lo[i]) / (hi[i] - lo[i])).clamp(0.0, 1.0)).collect();
                for corner in 0..(1usize << n) {
                    let mut w = m;
                    let mut idx = base;
                    for i in 0..n {
                        if corner >> (n - 1 - i) & 1 == 1 {
                            w *= t[i];
                            idx += strides[i];
                        } else {
                            w *= 1.0 - t[i];
                        }
                    }
                    if w != 0.0 {
                        mass[idx] += w;
                    }
                }
            };
            let mut atoms = Vec::new();
            let mass = &mut out.mass;
            mu.visit(&crate::region::Region::Whole, &boxes, order, &mut |ci, x, m| match ci {
                Some(b) => {
                    let (lo, hi, base) = &cells[owner[b]];
                    spread(*base, lo, hi, x, m, mass);
                }
                None => atoms.push((x.to_vec(), m)),
            })?;
            for (x, m) in atoms {
                if !g.type_box.contains(&x, tol) {
                    continue;
                }
                // Locate the enclosing cell.
                let mut mi = vec![0usize; n];
                for i in 0..n {
                    let h = g.spacing(i);
                    let k = ((x[i] - g.type_box.lows[i]) / h).floor().max(0.0) as usize;
                    mi[i] = k.min(g.nodes_per_axis[i] - 2);
                }
                let base = g.flat_index(&mi);
                let lo: Vec<f64> = (0..n).map(|i| g.coord(i, mi[i])).collect();
                let hi: Vec<f64> = (0..n).map(|i| g.coord(i, mi[i] + 1)).collect();
                spread(base, &lo, &hi, &x, m, &mut out.mass);
            }
        }
        Discretization::Cell => {
            let mut boxes = Vec::with_capacity(g.len());
            for idx in 0..g.len() {
                let m = g.multi_index(idx);
                let lo: Vec<f64> = (0..n)
                    .map(|i| (g.coord(i, m[i]) - 0.5 * g.spacing(i)).max(g.type_box.lows[i]))
                    .collect();
                let hi: Vec<f64> = (0..n)
                    .map(|i| {
                        if g.spacing(i) == 0.0 {
                            g.type_box.highs[i]
                        } else {
                            (g.coord(i, m[i]) + 0.5 * g.spacing(i)).min(g.type_box.highs[i])
                        }
                    })
                    .collect();
                boxes.push((lo, hi));
            }
            let mass = &mut out.mass;
            mu.visit(&crate::region::Region::Whole, &boxes, order, &mut |ci, x, m| match ci {
                Some(c) => mass[c] += m,
                None => {
                    if g.type_box.contains(x, tol) {
                        mass[g.nearest(x)] += m;
                    }
                }
            })?;
        }
    }
    Ok(out)
}
