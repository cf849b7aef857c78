//! Menus, exclusion-set mechanisms and the region-wise dominance checks that
//! certify them.
//!
//! * [`menu`]: finite menus, their argmax regions, and the optimal-menu and
//!   grand-bundling checks;
//! * [`exclusion`]: two-item exclusion sets, canonical partitions, induced
//!   mechanisms and the well-formedness check;
//! * [`hypercube`]: the matching map and mass bounds for uniform hypercubes.

pub mod exclusion;
pub mod hypercube;
pub mod menu;

pub use exclusion::*;
pub use hypercube::*;
pub use menu::*;

use serde::Serialize;

use crate::dominance::{
    convex_dominates_with, first_order_dominates_with, DominanceOptions, DominanceResult, Verdict, Witness,
};
use crate::error::{Error, Result};
use crate::lattice::{discretize_measure, GridMeasure, GridSpec};
use crate::measure::{QuadConfig, TransformedMeasure};
use crate::region::Region;
use crate::distributions::TypeBox;

/// Settings for checking `μ₋|_R ⪰_cvx(v) μ₊|_R` on a region.
#[derive(Clone, Copy, Debug)]
pub struct RegionCheckConfig {
    /// Sub-grid nodes per axis over the region's bounding box.
    pub nodes: usize,
    /// Convexity stencil radius of the test-function cone.
    pub radius: usize,
    /// Largest accepted `|μ(R)|` before the region fails on mass alone.
    pub mass_tol: f64,
    /// Try the max-flow first-order decider before the convex LP when `v` is
    /// constant; first order implies the convex relation.
    pub first_order_fast_path: bool,
    pub dominance: DominanceOptions,
}

impl RegionCheckConfig {
    pub fn for_dim(n: usize) -> Self {
        let (nodes, radius) = match n {
            1 => (201, 1),
            2 => (41, 2),
            3 => (11, 1),
            _ => (5, 1),
        };
        RegionCheckConfig {
            nodes,
            radius,
            mass_tol: 1e-6,
            first_order_fast_path: true,
            dominance: DominanceOptions::default(),
        }
    }

    /// Sub-grid twice as fine as a solve grid with `k` nodes per axis.
    pub fn refining(n: usize, k: usize) -> Self {
        RegionCheckConfig { nodes: 2 * k.max(2) - 1, ..Self::for_dim(n) }
    }
}

/// Outcome of one region's dominance check.
#[derive(Clone, Debug, Serialize)]
pub struct RegionReport {
    pub label: String,
    pub v: Vec<i8>,
    /// `μ₊(R)` and `μ₋(R)` by region quadrature.
    pub positive_mass: f64,
    pub negative_mass: f64,
    /// `empty`, `mass`, `first_order` or `convex_lp`.
    pub method: String,
    /// Factor applied to the grid positive part to equalize discretized masses.
    pub rebalance: f64,
    pub result: DominanceResult,
    pub pass: bool,
}

impl RegionReport {
    pub fn signed_mass(&self) -> f64 {
        self.positive_mass - self.negative_mass
    }
}

/// `(μ₊(R), μ₋(R))` by quadrature over uniform panels.
pub fn region_parts(mu: &TransformedMeasure, region: &Region, q: &QuadConfig) -> Result<(f64, f64)> {
    let cells = mu.panel_cells(q.panels);
    let (mut pos, mut neg) = (0.0, 0.0);
    mu.visit(region, &cells, q.order, &mut |_, _, m| {
        if m > 0.0 {
            pos += m;
        } else {
            neg -= m;
        }
    })?;
    Ok((pos, neg))
}

/// Grid over the part of `bx` spanned by `region`, or `None` if it is flat.
pub(crate) fn region_grid(region: &Region, bx: &TypeBox, nodes: usize) -> Result<Option<GridSpec>> {
    let Some((lo, hi)) = region.bounding_box(bx) else {
        return Ok(None);
    };
    let scale = bx.highs.iter().fold(1.0f64, |m, h| m.max(h.abs()));
    if lo.iter().zip(&hi).any(|(l, h)| h - l <= 1e-9 * scale) {
        return Ok(None);
    }
    let sub = TypeBox::new(lo, hi)?;
    Ok(Some(GridSpec::uniform(&sub, nodes.max(2))?))
}

fn verdict(v: Verdict, witness: Witness, margin: f64) -> DominanceResult {
    DominanceResult { verdict: v, witness, margin }
}

/// Discretized `(μ₋|_R, μ₊|_R)` on `g` with equalized totals, and the factor
/// applied to the positive part.
fn balanced_parts(mu: &TransformedMeasure, region: &Region, g: &GridSpec) -> Result<(GridMeasure, GridMeasure, f64)> {
    // Only the signed restriction matters for both deciders: the LP objective
    // and the flow's net supplies depend on μ₊ - μ₋ alone.
    let m = discretize_measure(&mu.restrict(region), g)?;
    let neg = m.negative_part();
    let pos = m.positive_part();
    let (tn, tp) = (neg.total(), pos.total());
    if tp > 0.0 && tn > 0.0 {
        let f = tn / tp;
        Ok((neg, pos.scaled(f), f))
    } else {
        Ok((neg, pos, 1.0))
    }
}

/// Check `μ₋|_R ⪰_cvx(v) μ₊|_R`, i.e. `∫_R u dμ <= 0` for every convex
/// `v`-monotone `u`.
pub fn check_region_dominance(
    mu: &TransformedMeasure,
    region: &Region,
    v: &[i8],
    label: &str,
    cfg: &RegionCheckConfig,
) -> Result<RegionReport> {
    let n = mu.dim();
    if v.len() != n {
        return Err(Error::Invalid("direction vector length differs from dimension".into()));
    }
    let q = QuadConfig::for_dim(n);
    let (pos, neg) = region_parts(mu, region, &q)?;
    let mut report = RegionReport {
        label: label.to_string(),
        v: v.to_vec(),
        positive_mass: pos,
        negative_mass: neg,
        method: "empty".into(),
        rebalance: 1.0,
        result: verdict(Verdict::Dominates, Witness::None, 0.0),
        pass: true,
    };
    if (pos - neg).abs() > cfg.mass_tol {
        report.method = "mass".into();
        report.result = verdict(
            Verdict::Fails,
            Witness::Condition(format!("mass_imbalance {:.6e}", pos - neg)),
            -(pos - neg).abs(),
        );
        report.pass = false;
        return Ok(report);
    }
    let Some(g) = region_grid(region, mu.type_box(), cfg.nodes)? else {
        return Ok(report);
    };
    let (a, b, f) = balanced_parts(mu, region, &g)?;
    report.rebalance = f;
    if a.total() + b.total() <= 1e-14 {
        return Ok(report);
    }
    let constant = v.iter().all(|&s| s == v[0]) && v[0] != 0;
    if cfg.first_order_fast_path && constant {
        let fo = if v[0] > 0 {
            first_order_dominates_with(&a, &b, &cfg.dominance)?
        } else {
            first_order_dominates_with(&b, &a, &cfg.dominance)?
        };
        if fo.dominates() {
            report.method = "first_order".into();
            report.result = fo;
            return Ok(report);
        }
    }
    report.method = "convex_lp".into();
    let r = convex_dominates_with(&a, &b, v, cfg.radius, &cfg.dominance)?;
    report.pass = r.dominates();
    report.result = r;
    Ok(report)
}
