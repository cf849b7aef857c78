//! Discretized revenue maximization and its transport dual.
//!
//! The primal is `max Σ u·m` over grid functions in the utility cone with
//! `u(x_low) = 0`. Its LP multipliers split into transport along axis steps
//! (Lipschitz rows), upward shifts (monotone rows) and mean-preserving spreads
//! (convexity rows). Transport forms `γ`; shifts and spreads form the shuffle
//! `α`, and `γ₁ - γ₂ = m + α` holds node-wise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dominance::{convex_dominates_with, DominanceOptions};
use crate::error::{Error, Result};
use crate::lattice::{cone_constraints, is_in_cone, ConeRow, ConeSpec, GridFunction, GridMeasure, GridSpec, RowKind};
use crate::lp::{LpOptions, LpProblem, LpSolution, LpStatus};

/// Optimal grid utility and the LP data needed to extract a certificate.
#[derive(Clone, Debug, Serialize)]
pub struct PrimalSolution {
    pub u: GridFunction,
    pub value: f64,
    pub cone: ConeSpec,
    pub status: LpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    #[serde(skip)]
    pub rows: Vec<ConeRow>,
    /// Row multipliers, aligned with `rows`.
    #[serde(skip)]
    pub multipliers: Vec<f64>,
    #[serde(skip)]
    pub slack: Vec<f64>,
}

/// Mass moved from `x` down to `y` (grid multi-indices).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transport {
    pub x: Vec<usize>,
    pub y: Vec<usize>,
    pub mass: f64,
}

/// Upward transfer of `mass` from `node` to its neighbour along `axis`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub node: Vec<usize>,
    pub axis: usize,
    pub mass: f64,
}

/// Mass `2·mass` at `center` split equally to `center ± dir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub center: Vec<usize>,
    pub dir: Vec<i64>,
    pub mass: f64,
}

fn default_radius() -> usize {
    2
}

/// Transport plan plus shuffle; `value = Σ mass·‖x - y‖₁`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualCertificate {
    pub gamma: Vec<Transport>,
    pub alpha: GridMeasure,
    pub value: f64,
    /// Convexity stencil radius the shuffle is meant for.
    #[serde(default = "default_radius")]
    pub radius: usize,
    /// Set when the multipliers could not be purified.
    #[serde(default)]
    pub degenerate: bool,
    #[serde(default)]
    pub shifts: Vec<Shift>,
    #[serde(default)]
    pub spreads: Vec<Spread>,
}

impl DualCertificate {
    pub fn grid(&self) -> &GridSpec {
        &self.alpha.grid
    }

    /// Source and sink marginals `(γ₁, γ₂)`.
    pub fn marginals(&self) -> (GridMeasure, GridMeasure) {
        let g = self.grid();
        let mut g1 = GridMeasure::zeros(g);
        let mut g2 = GridMeasure::zeros(g);
        for t in &self.gamma {
            g1.mass[g.flat_index(&t.x)] += t.mass;
            g2.mass[g.flat_index(&t.y)] += t.mass;
        }
        (g1, g2)
    }

    pub fn total_spread(&self) -> f64 {
        self.spreads.iter().fold(0.0, |a, s| a + s.mass.abs())
    }

    pub fn total_shift(&self) -> f64 {
        self.shifts.iter().fold(0.0, |a, s| a + s.mass.abs())
    }

    fn transport_cost(g: &GridSpec, gamma: &[Transport]) -> f64 {
        gamma
            .iter()
            .map(|t| {
                let d: f64 = (0..g.dim()).map(|i| (g.coord(i, t.x[i]) - g.coord(i, t.y[i])).abs()).sum();
                t.mass * d
            })
            .sum()
    }
}

/// `max Σ u·m` over the cone `c` (which must be the utility cone) with the
/// lowest node pinned to zero.
pub fn solve_primal(m: &GridMeasure, c: &ConeSpec) -> Result<PrimalSolution> {
    solve_primal_with(m, c, &LpOptions::default())
}

pub fn solve_primal_with(m: &GridMeasure, c: &ConeSpec, opts: &LpOptions) -> Result<PrimalSolution> {
    if !c.lipschitz || c.v.iter().any(|&s| s != 1) {
        return Err(Error::Precondition("the primal needs the non-decreasing 1-Lipschitz cone".into()));
    }
    let g = &m.grid;
    let rows = cone_constraints(g, c)?;
    let len = g.len();
    if m.mass.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite node mass".into()));
    }
    let lp = reduced_lp(&m.mass, &rows, None);
    let sol = lp.solve(opts).map_err(|e| match e {
        Error::Solver(s) => Error::Solver(format!("primal LP: {s}")),
        other => other,
    })?;
    let mut value_u = vec![0.0; len];
    value_u[1..].copy_from_slice(&sol.x);
    let u = GridFunction { grid: g.clone(), value: value_u };
    let value = u.integrate(m);
    log::debug!("primal solved in {} iterations, value {value:.12}", sol.iterations);
    Ok(PrimalSolution {
        u,
        value,
        cone: c.clone(),
        status: sol.status,
        iterations: sol.iterations,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
        rows,
        multipliers: sol.y,
        slack: sol.slack,
    })
}

/// LP over nodes `1..len` (node 0 is pinned to zero); `keep` selects rows and
/// adds a per-row right-hand-side perturbation.
fn reduced_lp(mass: &[f64], rows: &[ConeRow], keep: Option<&[(usize, f64)]>) -> LpProblem {
    let mut lp = LpProblem::new(mass.len() - 1, mass[1..].to_vec());
    let mut push = |r: &ConeRow, extra: f64| {
        let entries: Vec<(usize, f64)> = r.entries.iter().filter(|e| e.0 != 0).map(|&(j, v)| (j - 1, v)).collect();
        lp.add_row(entries, r.rhs + extra);
    };
    match keep {
        None => rows.iter().for_each(|r| push(r, 0.0)),
        Some(sel) => sel.iter().for_each(|&(i, w)| push(&rows[i], w)),
    }
    lp
}

/// Shuffle work per unit multiplier: the physical distance a shift moves mass,
/// and for spreads three times the step length, so that upward shifts win
/// whenever they can do the same job. Shuffles that start from a node without
/// positive mass cost four times more, which steers the shuffle onto the
/// positive part of the measure.
fn row_weight(row: &ConeRow, g: &GridSpec, m: &GridMeasure) -> f64 {
    let (base, source) = match &row.kind {
        RowKind::Lipschitz { .. } => return 0.0,
        RowKind::Monotone { node, axis } => (g.spacing(*axis), *node),
        RowKind::Convex { center, dir } => {
            let len: f64 = dir.iter().enumerate().map(|(i, &d)| (d as f64 * g.spacing(i)).abs()).sum();
            (3.0 * len, *center)
        }
    };
    if m.mass[source] > 0.0 {
        base
    } else {
        4.0 * base
    }
}

/// Build a certificate from the primal's multipliers.
///
/// Interior-point multipliers sit in the relative interior of the optimal dual
/// face, which spreads shuffle mass over every admissible row. A second LP
/// restricted to the tight rows, with their bounds relaxed by a weight per row,
/// selects the optimal dual that uses the least shuffling. If that fails the
/// raw multipliers are used and the certificate is flagged as degenerate.
pub fn extract_dual(s: &PrimalSolution, m: &GridMeasure) -> Result<DualCertificate> {
    if s.multipliers.len() != s.rows.len() || s.u.grid != m.grid {
        return Err(Error::Precondition("primal solution does not match the measure".into()));
    }
    let g = &m.grid;
    let scale = s.rows.iter().map(|r| r.rhs.abs()).fold(1.0f64, f64::max);
    let tight: Vec<usize> = (0..s.rows.len())
        .filter(|&i| s.slack[i] <= 1e-9 * scale || s.slack[i] <= s.multipliers[i])
        .collect();
    let sel: Vec<(usize, f64)> = tight.iter().map(|&i| (i, row_weight(&s.rows[i], g, m))).collect();
    let lp = reduced_lp(&m.mass, &s.rows, Some(&sel));
    let mut y = vec![0.0; s.rows.len()];
    let mut degenerate = false;
    match lp.solve(&LpOptions::default()) {
        Ok(LpSolution { y: yt, status, .. }) if status == LpStatus::Optimal || status == LpStatus::NearOptimal => {
            for (k, &(i, _)) in sel.iter().enumerate() {
                y[i] = yt[k];
            }
        }
        other => {
            log::warn!("multiplier purification failed ({:?}); using raw multipliers", other.err());
            y.copy_from_slice(&s.multipliers);
            degenerate = true;
        }
    }
    Ok(certificate_from_multipliers(&s.rows, &y, m, s.cone.radius, degenerate))
}

fn certificate_from_multipliers(
    rows: &[ConeRow],
    y: &[f64],
    m: &GridMeasure,
    radius: usize,
    degenerate: bool,
) -> DualCertificate {
    let g = &m.grid;
    let drop = 1e-13 * m.total_variation().max(1e-300);
    let mut gamma = Vec::new();
    let mut shifts = Vec::new();
    let mut spreads = Vec::new();
    let mut alpha = GridMeasure::zeros(g);
    let mut net = vec![0.0; g.len()];
    for (row, &w) in rows.iter().zip(y) {
        if w <= drop {
            continue;
        }
        match &row.kind {
            RowKind::Lipschitz { node, .. } => {
                let up = row.entries.iter().find(|e| e.1 > 0.0).map(|e| e.0).unwrap_or(*node);
                gamma.push(Transport { x: g.multi_index(up), y: g.multi_index(*node), mass: w });
                net[up] += w;
                net[*node] -= w;
            }
            RowKind::Monotone { node, axis } => {
                let up = row.entries.iter().find(|e| e.0 != *node).map(|e| e.0).unwrap_or(*node);
                alpha.mass[*node] -= w;
                alpha.mass[up] += w;
                shifts.push(Shift { node: g.multi_index(*node), axis: *axis, mass: w });
            }
            RowKind::Convex { center, dir } => {
                alpha.mass[*center] -= 2.0 * w;
                for &(j, c) in &row.entries {
                    if c < 0.0 {
                        alpha.mass[j] += w;
                    }
                }
                spreads.push(Spread { center: g.multi_index(*center), dir: dir.clone(), mass: w });
            }
        }
    }
    // The pinned node absorbs the dual residual of the normalization.
    alpha.mass[0] = net[0] - m.mass[0];
    let value = DualCertificate::transport_cost(g, &gamma);
    DualCertificate { gamma, alpha, value, radius, degenerate, shifts, spreads }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub pass: bool,
    /// Largest violation found (zero when none).
    pub worst: f64,
    pub detail: String,
}

impl ConditionReport {
    fn new(pass: bool, worst: f64, detail: impl Into<String>) -> Self {
        ConditionReport { pass, worst, detail: detail.into() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    /// `u` lies in the utility cone.
    pub utility_feasible: ConditionReport,
    /// Marginal identity and `α ⪰_cvx 0`.
    pub certificate_feasible: ConditionReport,
    /// `∫u d(γ₁ - γ₂) = ∫u dm`.
    pub integral_identity: ConditionReport,
    /// `u(x) - u(y) = ‖x - y‖₁` on the support of `γ`.
    pub tight_transport: ConditionReport,
    /// `γ₁ ⪰_cvx m₊` and `m₋ ⪰_cvx γ₂`, when requested.
    pub marginal_refinement: Option<(bool, bool)>,
}

impl VerificationReport {
    pub fn all_pass(&self) -> bool {
        self.utility_feasible.pass && self.certificate_feasible.pass && self.integral_identity.pass && self.tight_transport.pass
    }
}

/// Check a `(u, certificate)` pair against a grid measure.
pub fn verify_certificate(u: &GridFunction, cert: &DualCertificate, m: &GridMeasure, tol: f64) -> Result<VerificationReport> {
    verify_certificate_with(u, cert, m, tol, false)
}

pub fn verify_certificate_with(
    u: &GridFunction,
    cert: &DualCertificate,
    m: &GridMeasure,
    tol: f64,
    refinement: bool,
) -> Result<VerificationReport> {
    let g = &m.grid;
    if &u.grid != g || cert.grid() != g {
        return Err(Error::Invalid("function, certificate and measure must share a grid".into()));
    }
    let n = g.dim();
    for t in &cert.gamma {
        if t.x.len() != n || t.y.len() != n || t.x.iter().zip(&g.nodes_per_axis).any(|(&i, &k)| i >= k) || t.y.iter().zip(&g.nodes_per_axis).any(|(&i, &k)| i >= k) {
            return Err(Error::Invalid("transport entry outside the grid".into()));
        }
    }
    let cone = ConeSpec { v: vec![1; n], radius: cert.radius, lipschitz: true };
    let primal_value = u.integrate(m);

    // (a)
    let check = is_in_cone(u, &cone, tol)?;
    let utility_feasible = ConditionReport::new(check.ok, check.worst.max(0.0), format!("{} violated rows", check.violations.len()));

    // (b)
    let (g1, g2) = cert.marginals();
    let mut residual = 0.0f64;
    for i in 0..g.len() {
        residual = residual.max((g1.mass[i] - g2.mass[i] - m.mass[i] - cert.alpha.mass[i]).abs());
    }
    let negative = cert.gamma.iter().map(|t| -t.mass).fold(0.0f64, f64::max);
    let unordered = cert.gamma.iter().any(|t| t.x.iter().zip(&t.y).any(|(a, b)| a < b));
    let opts = DominanceOptions { tol, mass_tol: 1e-9 };
    let shuffle = convex_dominates_with(&cert.alpha.positive_part(), &cert.alpha.negative_part(), &vec![1i8; n], cert.radius, &opts);
    let (shuffle_ok, shuffle_margin, shuffle_note) = match shuffle {
        Ok(r) => (r.dominates(), (-r.margin).max(0.0), format!("shuffle margin {:.3e}", r.margin)),
        Err(e) if e.is_input_error() || matches!(e, Error::Precondition(_)) => (false, f64::INFINITY, format!("shuffle check: {e}")),
        Err(e) => return Err(e),
    };
    let worst_b = residual.max(negative).max(shuffle_margin);
    let certificate_feasible = ConditionReport::new(
        residual <= tol && negative <= 0.0 && !unordered && shuffle_ok,
        worst_b,
        format!("marginal residual {residual:.3e}; {shuffle_note}{}", if unordered { "; transport moves upward" } else { "" }),
    );

    // (c)
    let lhs = u.integrate(&g1) - u.integrate(&g2);
    let diff = (lhs - primal_value).abs();
    let integral_identity = ConditionReport::new(diff <= tol, diff, format!("∫u d(γ₁-γ₂) = {lhs:.12}"));

    // (d)
    let tol_d = tol.max(1e-3 * g.max_spacing());
    let mut worst_d = 0.0f64;
    for t in &cert.gamma {
        let (ix, iy) = (g.flat_index(&t.x), g.flat_index(&t.y));
        let dist: f64 = (0..n).map(|i| (g.coord(i, t.x[i]) - g.coord(i, t.y[i])).abs()).sum();
        worst_d = worst_d.max((u.value[ix] - u.value[iy] - dist).abs());
    }
    let tight_transport = ConditionReport::new(worst_d <= tol_d, worst_d, format!("tolerance {tol_d:.3e}"));

    let marginal_refinement = if refinement {
        let v = vec![1i8; n];
        let dom = |a: &GridMeasure, b: &GridMeasure| {
            convex_dominates_with(a, b, &v, cert.radius, &opts).map(|r| r.dominates()).unwrap_or(false)
        };
        Some((dom(&g1, &m.positive_part()), dom(&m.negative_part(), &g2)))
    } else {
        None
    };

    Ok(VerificationReport {
        primal_value,
        dual_value: cert.value,
        gap: duality_gap(primal_value, cert.value),
        utility_feasible,
        certificate_feasible,
        integral_identity,
        tight_transport,
        marginal_refinement,
    })
}

/// `dual - primal`.
pub fn duality_gap(primal: f64, dual: f64) -> f64 {
    dual - primal
}

/// A feasible but generally suboptimal certificate: all positive mass is sent
/// to the lowest node, the shuffle lifts it back to the negative part, then
/// random ordered round trips are added and the result is mixed with `base`.
pub fn random_feasible_certificate(
    m: &GridMeasure,
    radius: usize,
    base: Option<&DualCertificate>,
    rng: &mut impl Rng,
) -> DualCertificate {
    let g = &m.grid;
    let n = g.dim();
    let zero = vec![0usize; n];
    let mut gamma = Vec::new();
    let mut alpha = GridMeasure::zeros(g);
    let pos_total: f64 = m.mass.iter().map(|v| v.max(0.0)).sum();
    for i in 1..g.len() {
        if m.mass[i] > 0.0 {
            gamma.push(Transport { x: g.multi_index(i), y: zero.clone(), mass: m.mass[i] });
        }
        alpha.mass[i] += (-m.mass[i]).max(0.0);
    }
    // γ₁ - γ₂ - m at the lowest node.
    let shipped: f64 = pos_total - m.mass[0].max(0.0);
    alpha.mass[0] = -shipped - m.mass[0];
    for _ in 0..rng.gen_range(1..=8) {
        let a = rng.gen_range(0..g.len());
        let b = rng.gen_range(0..g.len());
        let (pa, pb) = (g.multi_index(a), g.multi_index(b));
        let hi: Vec<usize> = pa.iter().zip(&pb).map(|(x, y)| *x.max(y)).collect();
        let lo: Vec<usize> = pa.iter().zip(&pb).map(|(x, y)| *x.min(y)).collect();
        let t = rng.gen_range(0.0..0.5);
        let (ih, il) = (g.flat_index(&hi), g.flat_index(&lo));
        if ih == il {
            continue;
        }
        gamma.push(Transport { x: hi.clone(), y: lo, mass: t });
        alpha.mass[ih] += t;
        alpha.mass[il] -= t;
    }
    let mut cert = DualCertificate { value: 0.0, gamma, alpha, radius, degenerate: false, shifts: Vec::new(), spreads: Vec::new() };
    if let Some(b) = base {
        let th = rng.gen_range(0.0..1.0);
        for t in &mut cert.gamma {
            t.mass *= 1.0 - th;
        }
        cert.alpha = cert.alpha.scaled(1.0 - th).add(&b.alpha.scaled(th)).expect("same grid");
        cert.gamma.extend(b.gamma.iter().map(|t| Transport { mass: t.mass * th, ..t.clone() }));
    }
    cert.value = DualCertificate::transport_cost(g, &cert.gamma);
    cert
}

/// A random element of the utility cone: the maximum of affine functions with
/// gradients in `[0,1]ⁿ`, shifted to vanish at the lowest node.
pub fn random_feasible_utility(g: &GridSpec, rng: &mut impl Rng) -> GridFunction {
    let n = g.dim();
    let pieces: Vec<(Vec<f64>, f64)> = (0..rng.gen_range(1..=6))
        .map(|_| {
            let grad: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let mid: f64 = (0..n).map(|i| grad[i] * (g.type_box.lows[i] + g.type_box.highs[i]) * 0.5).sum();
            (grad, -mid + rng.gen_range(-0.5..0.5))
        })
        .collect();
    let f = |x: &[f64]| pieces.iter().map(|(a, b)| a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + b).fold(f64::NEG_INFINITY, f64::max);
    let base = f(&g.point(0));
    GridFunction::sample(g, |x| f(x) - base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{MarginalDensity, ProductDensity, TypeBox};
    use crate::lattice::discretize_measure;
    use crate::measure::build_transformed;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_item(k: usize) -> GridMeasure {
        let f = ProductDensity::new(vec![MarginalDensity::uniform(0.0, 1.0).unwrap()]).unwrap();
        let mu = build_transformed(&f);
        discretize_measure(&mu, &GridSpec::new(TypeBox::unit(1), vec![k]).unwrap()).unwrap()
    }

    #[test]
    fn precondition_on_cone() {
        let m = single_item(5);
        let c = ConeSpec::directional(vec![1], 1);
        assert!(matches!(solve_primal(&m, &c), Err(Error::Precondition(_))));
    }

    #[test]
    fn zero_measure_gives_zero() {
        let g = GridSpec::new(TypeBox::unit(2), vec![4, 4]).unwrap();
        let s = solve_primal(&GridMeasure::zeros(&g), &ConeSpec::utility(2)).unwrap();
        assert_eq!(s.value, 0.0);
        assert!(s.u.value.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_item_uniform_duality() {
        let m = single_item(101);
        let s = solve_primal(&m, &ConeSpec::utility(1)).unwrap();
        assert!((s.value - 0.25).abs() < 5e-3, "value {}", s.value);
        let cert = extract_dual(&s, &m).unwrap();
        let rep = verify_certificate(&s.u, &cert, &m, 1e-6).unwrap();
        assert!(rep.all_pass(), "{rep:?}");
        assert!(rep.gap >= -1e-9 && rep.gap <= 1e-6, "gap {}", rep.gap);
        assert!(cert.total_spread() < 1e-9, "spreads {}", cert.total_spread());
    }

    #[test]
    fn zero_utility_fails_tightness() {
        let m = single_item(21);
        let s = solve_primal(&m, &ConeSpec::utility(1)).unwrap();
        let cert = extract_dual(&s, &m).unwrap();
        let zero = GridFunction::zeros(&m.grid);
        let rep = verify_certificate(&zero, &cert, &m, 1e-6).unwrap();
        assert!(!rep.tight_transport.pass);
    }

    #[test]
    fn weak_duality_on_random_pairs() {
        let m = single_item(21);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let cert = random_feasible_certificate(&m, 2, None, &mut rng);
            let u = random_feasible_utility(&m.grid, &mut rng);
            let rep = verify_certificate(&u, &cert, &m, 1e-6).unwrap();
            assert!(rep.certificate_feasible.pass, "{rep:?}");
            assert!(rep.gap >= -1e-9, "gap {}", rep.gap);
        }
    }

    #[test]
    fn certificate_json_round_trip() {
        let m = single_item(11);
        let s = solve_primal(&m, &ConeSpec::utility(1)).unwrap();
        let cert = extract_dual(&s, &m).unwrap();
        let text = serde_json::to_string(&cert).unwrap();
        let back: DualCertificate = serde_json::from_str(&text).unwrap();
        assert_eq!(back.gamma, cert.gamma);
        assert_eq!(back.value, cert.value);
    }
}
