//! The signed measure whose integral against a utility function gives revenue.
//!
//! For a product density `f` on the box `X` the measure has three parts:
//! a unit atom at the lowest type, an interior density `-(∇f·x + (n+1) f)`, and
//! a surface density `f (x·n̂)` on each facet, with `n̂` the outer normal
//! (`f·high_i` on top facets, `-f·low_i` on bottom facets).

use std::sync::Arc;

use serde::Serialize;

use crate::distributions::{MarginalDensity, ProductDensity, TypeBox};
use crate::error::{Error, Result};
use crate::region::{PointKind, Region};

/// Which part of a signed measure to integrate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Part {
    Signed,
    /// `μ₊`.
    Positive,
    /// `μ₋`, reported as a non-negative measure.
    Negative,
}

impl Part {
    fn apply(self, v: f64) -> f64 {
        match self {
            Part::Signed => v,
            Part::Positive => v.max(0.0),
            Part::Negative => (-v).max(0.0),
        }
    }
}

/// Quadrature settings for region integrals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadConfig {
    /// Gauss-Legendre points per axis and piece.
    pub order: usize,
    /// Uniform panels per axis when no grid is imposed.
    pub panels: usize,
    /// Accepted absolute error estimate for signed region masses.
    pub tol: f64,
}

impl QuadConfig {
    pub fn for_dim(n: usize) -> Self {
        let (order, panels) = match n {
            1 => (12, 32),
            2 => (10, 12),
            3 => (6, 3),
            _ => (5, 2),
        };
        QuadConfig { order, panels, tol: 1e-9 }
    }
}

/// Transformed measure of a product density, optionally restricted and split by sign.
#[derive(Clone, Debug)]
pub struct TransformedMeasure {
    density: Arc<ProductDensity>,
    restriction: Region,
    part: Part,
}

impl TransformedMeasure {
    pub fn new(density: ProductDensity) -> Self {
        TransformedMeasure { density: Arc::new(density), restriction: Region::Whole, part: Part::Signed }
    }

    pub fn density(&self) -> &ProductDensity {
        &self.density
    }

    pub fn type_box(&self) -> &TypeBox {
        self.density.type_box()
    }

    pub fn dim(&self) -> usize {
        self.density.dim()
    }

    pub fn part(&self) -> Part {
        self.part
    }

    pub fn restriction(&self) -> &Region {
        &self.restriction
    }

    /// `μ|_A`.
    pub fn restrict(&self, a: &Region) -> Self {
        TransformedMeasure {
            density: self.density.clone(),
            restriction: self.restriction.intersect(a, self.dim()),
            part: self.part,
        }
    }

    /// Positive part `μ₊` (pointwise sign of densities and atoms).
    pub fn positive(&self) -> Self {
        self.with_part(match self.part {
            Part::Negative => Part::Negative,
            _ => Part::Positive,
        })
    }

    /// Negative part `μ₋` as a non-negative measure.
    pub fn negative(&self) -> Self {
        self.with_part(match self.part {
            Part::Positive => Part::Positive,
            _ => Part::Negative,
        })
    }

    fn with_part(&self, part: Part) -> Self {
        TransformedMeasure { density: self.density.clone(), restriction: self.restriction.clone(), part }
    }

    /// Signed interior density `-(∇f·x + (n+1) f)`.
    pub fn interior_density(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let ms = self.density.marginals();
        let pdfs: Vec<f64> = ms.iter().zip(x).map(|(m, &z)| m.pdf(z)).collect();
        let f: f64 = pdfs.iter().product();
        let mut dot = 0.0;
        for i in 0..n {
            let d = ms[i].derivative_unchecked(x[i]);
            if d == 0.0 {
                continue;
            }
            let others: f64 = (0..n).filter(|&j| j != i).map(|j| pdfs[j]).product();
            dot += x[i] * d * others;
        }
        -(dot + (n as f64 + 1.0) * f)
    }

    /// Signed surface density on facet `x_axis = low/high`.
    pub fn facet_density(&self, axis: usize, high: bool, x: &[f64]) -> f64 {
        let f = self.density.density_unchecked(x);
        let b = self.type_box();
        if high {
            f * b.highs[axis]
        } else {
            -f * b.lows[axis]
        }
    }

    /// Point masses before restriction: the unit atom at the lowest type.
    pub fn atoms(&self) -> Vec<(Vec<f64>, f64)> {
        vec![(self.type_box().lows.clone(), 1.0)]
    }

    fn point_value(&self, kind: PointKind, x: &[f64]) -> f64 {
        let v = match kind {
            PointKind::Interior => self.interior_density(x),
            PointKind::Facet { axis, high } => self.facet_density(axis, high, x),
        };
        self.part.apply(v)
    }

    /// Visit every weighted quadrature point of `self|_A` over the given cells.
    /// `sink(cell_index, point, mass)`; atoms are reported with `cell_index = None`.
    pub fn visit(
        &self,
        a: &Region,
        cells: &[(Vec<f64>, Vec<f64>)],
        order: usize,
        sink: &mut dyn FnMut(Option<usize>, &[f64], f64),
    ) -> Result<f64> {
        let region = self.restriction.intersect(a, self.dim());
        let bx = self.type_box().clone();
        for (p, m) in self.atoms() {
            if region.contains(&p) {
                let v = self.part.apply(m);
                if v != 0.0 {
                    sink(None, &p, v);
                }
            }
        }
        let mut err = 0.0;
        for (ci, (lo, hi)) in cells.iter().enumerate() {
            let mut inner = |k: PointKind, x: &[f64], w: f64| {
                let v = self.point_value(k, x);
                if v != 0.0 {
                    sink(Some(ci), x, w * v);
                }
            };
            err += region.rule(&bx, lo, hi, order, &mut inner)?;
        }
        Ok(err)
    }

    /// Uniform panel cells covering the box.
    pub fn panel_cells(&self, panels: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        let b = self.type_box();
        let n = b.dim();
        let p = panels.max(1);
        let total = p.pow(n as u32);
        (0..total)
            .map(|mut idx| {
                let mut lo = vec![0.0; n];
                let mut hi = vec![0.0; n];
                for i in (0..n).rev() {
                    let k = idx % p;
                    idx /= p;
                    let w = b.width(i) / p as f64;
                    lo[i] = b.lows[i] + w * k as f64;
                    hi[i] = if k + 1 == p { b.highs[i] } else { b.lows[i] + w * (k + 1) as f64 };
                }
                (lo, hi)
            })
            .collect()
    }

    fn raw_mass(&self, a: &Region, order: usize, panels: usize) -> Result<f64> {
        let cells = self.panel_cells(panels);
        let mut s = 0.0;
        let undecided = self.visit(a, &cells, order, &mut |_, _, m| s += m)?;
        if undecided > 0.0 {
            log::debug!("predicate subdivision left volume {undecided:.3e} undecided");
        }
        Ok(s)
    }

    /// `μ(A)` for this (possibly restricted, possibly sign-split) measure.
    ///
    /// Signed masses in one or two dimensions are cross-checked against a run
    /// on twice as many panels; a discrepancy above `q.tol` is an accuracy error.
    pub fn region_mass(&self, a: &Region, q: &QuadConfig) -> Result<f64> {
        let coarse = self.raw_mass(a, q.order, q.panels)?;
        if self.part != Part::Signed || self.dim() > 2 {
            return Ok(coarse);
        }
        let fine = self.raw_mass(a, q.order, 2 * q.panels)?;
        let est = (fine - coarse).abs();
        if est > q.tol {
            return Err(Error::Accuracy(format!(
                "region mass error estimate {est:.3e} exceeds {:.3e}",
                q.tol
            )));
        }
        Ok(fine)
    }

    /// [`region_mass`](Self::region_mass), doubling the panel count (up to
    /// 16× the configured one) while the accuracy check fails.
    pub fn region_mass_refined(&self, a: &Region, q: &QuadConfig) -> Result<f64> {
        let mut q = *q;
        for _ in 0..4 {
            match self.region_mass(a, &q) {
                Err(Error::Accuracy(_)) => q.panels *= 2,
                r => return r,
            }
        }
        self.region_mass(a, &q)
    }

    /// Total variation `|μ|(X)` of the unrestricted measure.
    pub fn total_variation(&self, q: &QuadConfig) -> Result<f64> {
        let me = TransformedMeasure { density: self.density.clone(), restriction: Region::Whole, part: Part::Positive };
        let p = me.region_mass(&Region::Whole, q)?;
        let n = me.negative().region_mass(&Region::Whole, q)?;
        Ok(p + n)
    }

    /// Debug dump: atoms, interior density on a `k^n` sample grid, facet samples.
    pub fn dump(&self, k: usize) -> MeasureDump {
        let b = self.type_box().clone();
        let n = b.dim();
        let k = k.max(2);
        let coord = |i: usize, j: usize| b.lows[i] + b.width(i) * (j as f64 + 0.5) / k as f64;
        let mut interior = Vec::new();
        for idx in 0..k.pow(n as u32) {
            let mut r = idx;
            let mut x = vec![0.0; n];
            for i in (0..n).rev() {
                x[i] = coord(i, r % k);
                r /= k;
            }
            let v = self.part.apply(self.interior_density(&x));
            interior.push(Sample { x, value: v });
        }
        let mut facets = Vec::new();
        for axis in 0..n {
            for high in [false, true] {
                let mut samples = Vec::new();
                let others: Vec<usize> = (0..n).filter(|&j| j != axis).collect();
                let count = k.pow(others.len() as u32);
                for idx in 0..count {
                    let mut r = idx;
                    let mut x = vec![0.0; n];
                    x[axis] = if high { b.highs[axis] } else { b.lows[axis] };
                    for &i in others.iter().rev() {
                        x[i] = coord(i, r % k);
                        r /= k;
                    }
                    let v = self.part.apply(self.facet_density(axis, high, &x));
                    samples.push(Sample { x, value: v });
                }
                facets.push(FacetDump { axis, side: if high { "high" } else { "low" }, samples });
            }
        }
        MeasureDump {
            lows: b.lows.clone(),
            highs: b.highs.clone(),
            atoms: self.atoms().into_iter().map(|(x, m)| Sample { x, value: self.part.apply(m) }).collect(),
            interior,
            facets,
            truncation_deficit: self.density.truncation_deficit(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FacetDump {
    pub axis: usize,
    pub side: &'static str,
    pub samples: Vec<Sample>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MeasureDump {
    pub lows: Vec<f64>,
    pub highs: Vec<f64>,
    pub atoms: Vec<Sample>,
    pub interior: Vec<Sample>,
    pub facets: Vec<FacetDump>,
    pub truncation_deficit: f64,
}

/// Build `μ` from a product density.
pub fn build_transformed(f: &ProductDensity) -> TransformedMeasure {
    TransformedMeasure::new(f.clone())
}

/// One-dimensional form of the measure: interior density and the two endpoint atoms.
#[derive(Clone, Debug)]
pub struct SingleItemMeasure {
    marginal: MarginalDensity,
}

impl SingleItemMeasure {
    /// Interior density `-(z f(z))' = -(f(z) + z f'(z))`, the negated derivative
    /// of the normalized virtual value `φ(z) f(z) = z f(z) - (1 - F(z))`.
    pub fn density(&self, z: f64) -> f64 {
        let m = &self.marginal;
        -(2.0 * m.pdf(z) + z * m.derivative_unchecked(z))
    }

    /// Atom at the low end: `1 - f(low) low`.
    pub fn low_atom(&self) -> f64 {
        1.0 - self.marginal.pdf(self.marginal.low()) * self.marginal.low()
    }

    /// Atom at the high end: `f(high) high`.
    pub fn high_atom(&self) -> f64 {
        self.marginal.pdf(self.marginal.high()) * self.marginal.high()
    }

    pub fn marginal(&self) -> &MarginalDensity {
        &self.marginal
    }

    /// `μ([low, z])` by adaptive quadrature.
    pub fn cumulative(&self, z: f64) -> Result<f64> {
        let m = &self.marginal;
        let z = z.clamp(m.low(), m.high());
        let body = crate::quadrature::adaptive(m.low(), z, 1e-12, 40, |t| self.density(t))?;
        let top = if z >= m.high() { self.high_atom() } else { 0.0 };
        Ok(self.low_atom() + body + top)
    }
}

/// The `n = 1` specialisation of the transformed measure.
pub fn single_item_marginal_density(m: &MarginalDensity) -> Result<SingleItemMeasure> {
    if !m.is_bounded() {
        return Err(Error::Invalid("single-item measure needs a bounded interval".into()));
    }
    Ok(SingleItemMeasure { marginal: m.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::HalfSpace;

    fn uniform(lows: &[f64], highs: &[f64]) -> TransformedMeasure {
        build_transformed(&ProductDensity::uniform_box(lows, highs).unwrap())
    }

    #[test]
    fn unit_square_components() {
        let mu = uniform(&[0.0, 0.0], &[1.0, 1.0]);
        assert_eq!(mu.atoms(), vec![(vec![0.0, 0.0], 1.0)]);
        assert!((mu.interior_density(&[0.3, 0.4]) + 3.0).abs() < 1e-15);
        assert_eq!(mu.facet_density(0, true, &[1.0, 0.5]), 1.0);
        assert_eq!(mu.facet_density(1, false, &[0.5, 0.0]), 0.0);
        let q = QuadConfig::for_dim(2);
        assert!(mu.region_mass(&Region::Whole, &q).unwrap().abs() < 1e-12);
    }

    #[test]
    fn rectangle_components() {
        let mu = uniform(&[4.0, 4.0], &[16.0, 7.0]);
        let x = [10.0, 5.0];
        assert!((mu.interior_density(&x) + 1.0 / 12.0).abs() < 1e-15);
        assert!((mu.facet_density(1, true, &[8.0, 7.0]) - 7.0 / 36.0).abs() < 1e-15);
        assert!((mu.facet_density(1, false, &[8.0, 4.0]) + 1.0 / 9.0).abs() < 1e-15);
        assert!((mu.facet_density(0, true, &[16.0, 5.0]) - 4.0 / 9.0).abs() < 1e-15);
        assert!((mu.facet_density(0, false, &[4.0, 5.0]) + 1.0 / 9.0).abs() < 1e-15);
        let q = QuadConfig::for_dim(2);
        let w = Region::Polytope(vec![HalfSpace::new(vec![-1.0, 0.0], -8.0)]);
        assert!(mu.region_mass(&w, &q).unwrap().abs() < 1e-9);
    }

    #[test]
    fn beta_interior_density() {
        let f = ProductDensity::new(vec![MarginalDensity::beta(1.0, 2.0).unwrap(); 2]).unwrap();
        let mu = build_transformed(&f);
        for &(x, y) in &[(0.1, 0.2), (0.5, 0.5), (0.7, 0.05)] {
            let expect = 4.0 * (1.0 - x) * (1.0 - y) * (1.0 / (1.0 - x) + 1.0 / (1.0 - y) - 5.0);
            assert!((mu.interior_density(&[x, y]) - expect).abs() < 1e-12);
        }
        assert_eq!(mu.facet_density(0, true, &[1.0, 0.3]), 0.0);
        assert!(mu.region_mass(&Region::Whole, &QuadConfig::for_dim(2)).unwrap().abs() < 1e-10);
    }

    #[test]
    fn parts_and_restriction() {
        let mu = uniform(&[0.0, 0.0], &[1.0, 1.0]);
        let q = QuadConfig::for_dim(2);
        assert!((mu.positive().region_mass(&Region::Whole, &q).unwrap() - 3.0).abs() < 1e-12);
        assert!((mu.negative().region_mass(&Region::Whole, &q).unwrap() - 3.0).abs() < 1e-12);
        let z = Region::sum_at_most(2, 0.5);
        let r = mu.restrict(&z);
        assert!((r.positive().region_mass(&Region::Whole, &q).unwrap() - 1.0).abs() < 1e-12);
        assert!((r.negative().region_mass(&Region::Whole, &q).unwrap() - 0.375).abs() < 1e-12);
        assert!((mu.total_variation(&q).unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn single_item_uniform() {
        let s = single_item_marginal_density(&MarginalDensity::uniform(0.0, 1.0).unwrap()).unwrap();
        assert_eq!(s.density(0.3), -2.0);
        assert_eq!(s.low_atom(), 1.0);
        assert_eq!(s.high_atom(), 1.0);
        assert!(s.cumulative(1.0).unwrap().abs() < 1e-12);
        assert!((s.cumulative(0.5).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_measure_matches_single_item_form() {
        let m = MarginalDensity::beta(2.0, 3.0).unwrap();
        let mu = build_transformed(&ProductDensity::new(vec![m.clone()]).unwrap());
        let s = single_item_marginal_density(&m).unwrap();
        let q = QuadConfig::for_dim(1);
        let total = mu.region_mass(&Region::Whole, &q).unwrap();
        assert!(total.abs() < 1e-10);
        let left = mu.region_mass(&Region::Cuboid { lows: vec![0.0], highs: vec![0.4] }, &q).unwrap();
        assert!((left - s.cumulative(0.4).unwrap()).abs() < 1e-10);
    }
}
