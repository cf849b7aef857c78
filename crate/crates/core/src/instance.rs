//! Instance files and the end-to-end pipelines built on them: solve and
//! certify, check a menu or bundle price, and build a canonical partition.

use serde::{Deserialize, Serialize};

use crate::distributions::{DistributionSpec, Family, ProductDensity, TypeBox};
use crate::duality::{extract_dual, solve_primal, verify_certificate, DualCertificate, PrimalSolution, VerificationReport};
use crate::error::{Error, Result};
use crate::lattice::{discretize_measure, ConeSpec, GridFunction, GridMeasure, GridSpec};
use crate::lp::LpStatus;
use crate::measure::{build_transformed, QuadConfig, TransformedMeasure};
use crate::mechanisms::{
    canonical_partition, check_grand_bundling, check_optimal_menu, check_well_formed, default_price_bracket,
    essential_form, find_critical_price, mechanism_from_partition, menu_revenue, notbundling_bound,
    product_factorization, BundlingReport, CanonicalPartition, CurveSpec, ExclusionSet2D, HypercubeInstance, Menu,
    MenuReport, Outcome, PartitionSummary, RegionCheckConfig, WellFormedOptions, WellFormedReport,
};
use crate::region::Region;

fn default_nodes() -> usize {
    21
}

fn default_radius() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Nodes per axis for the solve grid.
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    /// Per-axis override of `nodes`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes_per_axis: Option<Vec<usize>>,
    /// Convexity stencil radius of the utility cone.
    #[serde(default = "default_radius")]
    pub radius: usize,
    /// Sub-grid nodes per axis for region checks (default depends on dimension).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check_nodes: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { nodes: default_nodes(), nodes_per_axis: None, radius: default_radius(), check_nodes: None }
    }
}

fn default_mass_tol() -> f64 {
    1e-6
}

fn default_verify_tol() -> f64 {
    1e-6
}

fn default_strip_tol() -> f64 {
    1e-7
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Largest accepted `|μ(R)|` for a checked region.
    #[serde(default = "default_mass_tol")]
    pub mass: f64,
    /// Certificate verification tolerance.
    #[serde(default = "default_verify_tol")]
    pub verify: f64,
    /// Strip-integral tolerance, relative to `|μ|(X)`.
    #[serde(default = "default_strip_tol")]
    pub strip: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { mass: default_mass_tol(), verify: default_verify_tol(), strip: default_strip_tol() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriceRule {
    /// The root of `p ↦ μ(Z_p)`.
    Critical,
}

/// A literal price or `"critical"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriceSpec {
    Value(f64),
    Rule(PriceRule),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExclusionInput {
    #[serde(default = "unbounded")]
    pub s1: CurveSpec,
    #[serde(default = "unbounded")]
    pub s2: CurveSpec,
    pub price: PriceSpec,
    /// Search interval for a critical price.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bracket: Option<[f64; 2]>,
}

fn unbounded() -> CurveSpec {
    CurveSpec::Unbounded
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleInput {
    pub price: PriceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bracket: Option<[f64; 2]>,
}

/// Everything a command needs: the distribution, grids, tolerances and the
/// candidate mechanism to check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    #[serde(default)]
    pub name: String,
    pub distribution: DistributionSpec,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub menu: Option<Menu>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<BundleInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusion: Option<ExclusionInput>,
    /// Also run the density criterion on `𝒲` using the product factorization.
    #[serde(default)]
    pub regionthm: bool,
}

impl InstanceSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("instance schema: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance specs serialize")
    }

    pub fn density(&self) -> Result<ProductDensity> {
        self.distribution.build()
    }

    pub fn dim(&self) -> usize {
        self.distribution.marginals.len()
    }

    pub fn solve_grid(&self, bx: &TypeBox) -> Result<GridSpec> {
        match &self.grid.nodes_per_axis {
            Some(k) => GridSpec::new(bx.clone(), k.clone()),
            None => GridSpec::uniform(bx, self.grid.nodes),
        }
    }

    pub fn region_config(&self) -> RegionCheckConfig {
        let n = self.dim();
        let mut cfg = RegionCheckConfig::for_dim(n);
        if let Some(k) = self.grid.check_nodes {
            cfg.nodes = k;
        }
        cfg.mass_tol = self.tolerances.mass;
        cfg
    }
}

fn resolve_price(
    spec: PriceSpec,
    bracket: Option<[f64; 2]>,
    mu: &TransformedMeasure,
    family: &dyn Fn(f64) -> Result<Region>,
) -> Result<f64> {
    match spec {
        PriceSpec::Value(p) => Ok(p),
        PriceSpec::Rule(PriceRule::Critical) => {
            let (lo, hi) = bracket.map_or_else(|| default_price_bracket(mu.type_box()), |b| (b[0], b[1]));
            find_critical_price(mu, family, (lo, hi), 1e-10)
        }
    }
}

/// An item read off a grid utility: the discrete gradient and intercept on
/// a set of cells.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecoveredItem {
    pub allocation: Vec<f64>,
    pub price: f64,
    /// Share of grid cells on which it is offered.
    pub share: f64,
}

/// Group grid cells by their rounded discrete gradient and intercept and
/// keep the groups covering at least `min_share` of the cells.
pub fn recover_menu(u: &GridFunction, digits: i32, min_share: f64) -> Vec<RecoveredItem> {
    let g = &u.grid;
    let n = g.dim();
    let scale = 10f64.powi(digits);
    let round = |v: f64| (v * scale).round() / scale + 0.0;
    let mut groups: Vec<(Vec<f64>, f64, usize)> = Vec::new();
    let mut cells = 0usize;
    for idx in 0..g.len() {
        let m = g.multi_index(idx);
        if (0..n).any(|i| m[i] + 1 >= g.nodes_per_axis[i]) {
            continue;
        }
        cells += 1;
        // Average each axis difference over the cell's parallel edges.
        let corners = 1usize << n;
        let mut grad = vec![0.0; n];
        let mut mean_u = 0.0;
        let mut center = vec![0.0; n];
        for c in 0..corners {
            let off: Vec<i64> = (0..n).map(|i| ((c >> i) & 1) as i64).collect();
            let k = g.shift(idx, &off).expect("cell corner inside grid");
            mean_u += u.value[k] / corners as f64;
            for i in 0..n {
                if off[i] == 0 {
                    let mut o2 = off.clone();
                    o2[i] = 1;
                    let k2 = g.shift(idx, &o2).expect("cell corner inside grid");
                    grad[i] += (u.value[k2] - u.value[k]) / g.spacing(i) / (corners / 2) as f64;
                }
            }
        }
        for i in 0..n {
            center[i] = g.coord(i, m[i]) + 0.5 * g.spacing(i);
        }
        let price = grad.iter().zip(&center).map(|(p, x)| p * x).sum::<f64>() - mean_u;
        let key: Vec<f64> = grad.iter().map(|&p| round(p)).collect();
        let t = round(price);
        match groups.iter_mut().find(|(k, pt, _)| *k == key && *pt == t) {
            Some(gr) => gr.2 += 1,
            None => groups.push((key, t, 1)),
        }
    }
    let mut out: Vec<RecoveredItem> = groups
        .into_iter()
        .map(|(allocation, price, c)| RecoveredItem { allocation, price, share: c as f64 / cells.max(1) as f64 })
        .filter(|it| it.share >= min_share)
        .collect();
    out.sort_by(|a, b| b.share.total_cmp(&a.share));
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub name: String,
    pub nodes: Vec<usize>,
    pub primal_value: f64,
    pub dual_value: f64,
    /// `dual - primal`.
    pub gap: f64,
    pub status: LpStatus,
    pub iterations: usize,
    pub verification: VerificationReport,
    /// Items offered on at least 2% of the grid cells.
    pub recovered_items: Vec<RecoveredItem>,
    /// Expected revenue of the instance's menu by quadrature, when one is given.
    pub menu_revenue: Option<f64>,
    pub truncation_deficit: f64,
    pub pass: bool,
}

/// Solve output together with the objects needed for rendering or re-verification.
pub struct SolveOutcome {
    pub report: SolveReport,
    pub measure: GridMeasure,
    pub solution: PrimalSolution,
    pub certificate: DualCertificate,
}

/// Discretize, solve, extract the transport certificate and verify it.
pub fn run_solve(inst: &InstanceSpec) -> Result<SolveOutcome> {
    let f = inst.density()?;
    let mu = build_transformed(&f);
    let g = inst.solve_grid(f.type_box())?;
    let m = discretize_measure(&mu, &g)?;
    let cone = ConeSpec { radius: inst.grid.radius, ..ConeSpec::utility(g.dim()) };
    let sol = solve_primal(&m, &cone)?;
    let cert = extract_dual(&sol, &m)?;
    let ver = verify_certificate(&sol.u, &cert, &m, inst.tolerances.verify)?;
    let revenue = match &inst.menu {
        Some(menu) => Some(menu_revenue(menu, &f, &QuadConfig::for_dim(f.dim()))?),
        None => None,
    };
    let report = SolveReport {
        name: inst.name.clone(),
        nodes: g.nodes_per_axis.clone(),
        primal_value: sol.value,
        dual_value: cert.value,
        gap: cert.value - sol.value,
        status: sol.status,
        iterations: sol.iterations,
        pass: ver.all_pass(),
        verification: ver,
        recovered_items: recover_menu(&sol.u, 3, 0.02),
        menu_revenue: revenue,
        truncation_deficit: f.truncation_deficit(),
    };
    Ok(SolveOutcome { report, measure: m, solution: sol, certificate: cert })
}

/// Re-check a saved utility and certificate against the instance's discretized measure.
pub fn run_verify(inst: &InstanceSpec, u: &GridFunction, cert: &DualCertificate) -> Result<VerificationReport> {
    let f = inst.density()?;
    let g = inst.solve_grid(f.type_box())?;
    if u.grid != g || cert.alpha.grid != g {
        return Err(Error::Invalid("saved utility or certificate was built on a different grid".into()));
    }
    let m = discretize_measure(&build_transformed(&f), &g)?;
    verify_certificate(u, cert, &m, inst.tolerances.verify)
}

/// Facts about a uniform `[c, c+1]ⁿ` instance relevant to grand bundling.
#[derive(Clone, Debug, Serialize)]
pub struct HypercubeDiagnostic {
    pub n: usize,
    pub c: f64,
    /// `μ₋(Z(1))` in closed form.
    pub mu_minus_closed_form: f64,
    /// True when `μ₋(Z(1)) < 1`, which rules out grand bundling.
    pub notbundling_bound: bool,
}

/// The hypercube parameters when `f` is uniform on some `[c, c+1]ⁿ`.
pub fn as_hypercube(f: &ProductDensity) -> Option<HypercubeInstance> {
    let mut c = None;
    for m in f.marginals() {
        match m.family() {
            Family::Uniform { a, b } if (b - a - 1.0).abs() < 1e-12 && c.map_or(true, |c: f64| (c - a).abs() < 1e-12) => {
                c = Some(a)
            }
            _ => return None,
        }
    }
    HypercubeInstance::new(f.dim(), c?).ok()
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub name: String,
    /// `menu` or `bundle`.
    pub kind: String,
    /// The menu in essential form (menu checks).
    pub essential_menu: Option<Menu>,
    pub menu: Option<MenuReport>,
    pub bundle: Option<BundlingReport>,
    /// Set when no bundle price balances `μ(Z_p)`.
    pub price_error: Option<String>,
    pub hypercube: Option<HypercubeDiagnostic>,
    pub pass: bool,
}

/// Optimal-menu check of the instance's menu, or the grand-bundling check of
/// its bundle price.
pub fn run_check(inst: &InstanceSpec) -> Result<CheckReport> {
    let f = inst.density()?;
    let mu = build_transformed(&f);
    let cfg = inst.region_config();
    let n = f.dim();
    let hypercube = as_hypercube(&f).map(|h| HypercubeDiagnostic {
        n: h.n,
        c: h.c,
        mu_minus_closed_form: h.mu_minus_formula(),
        notbundling_bound: notbundling_bound(h.n, h.c),
    });
    let mut report = CheckReport {
        name: inst.name.clone(),
        kind: String::new(),
        essential_menu: None,
        menu: None,
        bundle: None,
        price_error: None,
        hypercube,
        pass: false,
    };
    if let Some(menu) = &inst.menu {
        report.kind = "menu".into();
        let ess = essential_form(menu, &f, 1e-12)?;
        let r = check_optimal_menu(&ess, &mu, &cfg)?;
        report.pass = r.pass;
        report.essential_menu = Some(ess);
        report.menu = Some(r);
    } else if let Some(b) = &inst.bundle {
        report.kind = "bundle".into();
        let fam = |p: f64| Ok(Region::sum_at_most(n, p));
        match resolve_price(b.price, b.bracket, &mu, &fam) {
            Ok(p) => {
                let r = check_grand_bundling(p, &mu, &cfg)?;
                report.pass = r.pass;
                report.bundle = Some(r);
            }
            Err(Error::NotBracketed(msg)) => report.price_error = Some(msg),
            Err(e) => return Err(e),
        }
    } else {
        return Err(Error::Invalid("check needs a menu or a bundle price".into()));
    }
    Ok(report)
}

/// Exclusion set of the instance, resolving a critical price.
pub fn instance_exclusion(inst: &InstanceSpec, mu: &TransformedMeasure) -> Result<ExclusionSet2D> {
    let Some(ex) = &inst.exclusion else {
        return Err(Error::Invalid("partition needs an exclusion set".into()));
    };
    let bx = mu.type_box().clone();
    let (s1, s2) = (ex.s1.build()?, ex.s2.build()?);
    let fam = |p: f64| Ok(ExclusionSet2D::new(&bx, s1.clone(), s2.clone(), p)?.region());
    let price = resolve_price(ex.price, ex.bracket, mu, &fam)?;
    ExclusionSet2D::new(&bx, s1, s2, price)
}

#[derive(Clone, Debug, Serialize)]
pub struct SampledOutcome {
    pub x: [f64; 2],
    pub cell: crate::mechanisms::Cell,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, Serialize)]
pub struct PartitionReport {
    pub name: String,
    /// `μ(Z)` at the resolved price.
    pub z_mass: f64,
    pub partition: PartitionSummary,
    pub well_formed: WellFormedReport,
    /// Mechanism outcomes on a coarse grid of types.
    pub outcomes: Vec<SampledOutcome>,
    pub truncation_deficit: f64,
    pub pass: bool,
}

pub struct PartitionOutcome {
    pub report: PartitionReport,
    pub partition: CanonicalPartition,
}

/// Build the canonical partition of the instance's exclusion set, its
/// mechanism, and check well-formedness.
pub fn run_partition(inst: &InstanceSpec) -> Result<PartitionOutcome> {
    let f = inst.density()?;
    if f.dim() != 2 {
        return Err(Error::Unsupported("partitions need two items".into()));
    }
    let mu = build_transformed(&f);
    let z = instance_exclusion(inst, &mu)?;
    let z_mass = mu.region_mass_refined(&z.region(), &QuadConfig::for_dim(2))?;
    let cp = canonical_partition(&z)?;
    let mech = mechanism_from_partition(&cp)?;
    let fac = if inst.regionthm { Some(product_factorization(&f)?) } else { None };
    let opts = WellFormedOptions {
        region: inst.region_config(),
        strip_tol: inst.tolerances.strip,
        ..WellFormedOptions::default()
    };
    let wf = check_well_formed(&cp, &mu, fac.as_ref(), &opts)?;
    let bx = f.type_box();
    let k = 5;
    let mut outcomes = Vec::new();
    for i in 0..k {
        for j in 0..k {
            let x = [
                bx.lows[0] + bx.width(0) * (i as f64 + 0.5) / k as f64,
                bx.lows[1] + bx.width(1) * (j as f64 + 0.5) / k as f64,
            ];
            outcomes.push(SampledOutcome { x, cell: cp.classify(&x), outcome: mech.outcome(&x) });
        }
    }
    let report = PartitionReport {
        name: inst.name.clone(),
        z_mass,
        partition: cp.summary(33),
        pass: wf.pass,
        well_formed: wf,
        outcomes,
        truncation_deficit: f.truncation_deficit(),
    };
    Ok(PartitionOutcome { report, partition: cp })
}
