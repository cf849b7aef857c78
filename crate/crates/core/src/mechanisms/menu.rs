//! Finite menus of lotteries and their optimality conditions.

use serde::{Deserialize, Serialize};

use super::{check_region_dominance, RegionCheckConfig, RegionReport};
use crate::distributions::ProductDensity;
use crate::error::{Error, Result};
use crate::lattice::GridSpec;
use crate::measure::{QuadConfig, TransformedMeasure};
use crate::region::{HalfSpace, PointKind, Region};

/// An allocation vector and its price.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MenuItem {
    pub p: Vec<f64>,
    pub t: f64,
}

impl MenuItem {
    pub fn new(p: Vec<f64>, t: f64) -> Result<Self> {
        let item = MenuItem { p, t };
        item.validate()?;
        Ok(item)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.iter().any(|&q| !(0.0..=1.0).contains(&q)) || !self.t.is_finite() {
            return Err(Error::Invalid(format!("menu item {:?} needs probabilities in [0,1]", self.p)));
        }
        Ok(())
    }

    pub fn utility(&self, x: &[f64]) -> f64 {
        self.p.iter().zip(x).map(|(p, x)| p * x).sum::<f64>() - self.t
    }

    /// Monotonicity signs of the region's test functions: `+1` where the item
    /// allocates nothing, `-1` where it allocates surely, free otherwise.
    pub fn direction(&self) -> Vec<i8> {
        self.p
            .iter()
            .map(|&q| {
                if q == 0.0 {
                    1
                } else if q == 1.0 {
                    -1
                } else {
                    0
                }
            })
            .collect()
    }

    fn is_zero(&self) -> bool {
        self.t == 0.0 && self.p.iter().all(|&q| q == 0.0)
    }
}

/// Menu items besides the implicit zero option `(0, 0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Menu {
    pub items: Vec<MenuItem>,
}

impl Menu {
    pub fn new(items: Vec<MenuItem>) -> Result<Self> {
        let m = Menu { items };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.items.first().map_or(0, |i| i.p.len());
        for it in &self.items {
            it.validate()?;
            if it.p.len() != n {
                return Err(Error::Invalid("menu items have different dimensions".into()));
            }
        }
        Ok(())
    }

    /// The grand bundle alone at `price`.
    pub fn grand_bundle(n: usize, price: f64) -> Self {
        Menu { items: vec![MenuItem { p: vec![1.0; n], t: price }] }
    }

    /// Item `k`, where `None` is the zero option.
    pub fn option(&self, k: Option<usize>, n: usize) -> MenuItem {
        match k {
            Some(i) => self.items[i].clone(),
            None => MenuItem { p: vec![0.0; n], t: 0.0 },
        }
    }

    /// Closed region of types weakly preferring item `k` (`None`: zero option)
    /// to every other option.
    pub fn region(&self, k: Option<usize>, n: usize) -> Region {
        let me = self.option(k, n);
        let mut hs = Vec::new();
        let others = std::iter::once(None).chain((0..self.items.len()).map(Some));
        for j in others.filter(|&j| j != k) {
            let o = self.option(j, n);
            // o.p·x - o.t <= me.p·x - me.t
            let a: Vec<f64> = o.p.iter().zip(&me.p).map(|(a, b)| a - b).collect();
            if a.iter().all(|&c| c == 0.0) && o.t - me.t >= 0.0 {
                continue;
            }
            hs.push(HalfSpace::new(a, o.t - me.t));
        }
        Region::Polytope(hs)
    }
}

/// Best option at a type.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MenuChoice {
    pub value: f64,
    /// Index into `items`, `None` for the zero option.
    pub item: Option<usize>,
    /// Another option with a different allocation attains the same value.
    pub tie: bool,
}

/// `max(0, max_k p_k·x - t_k)`, ties going to the zero option, then to the lowest index.
pub fn menu_utility(menu: &Menu, x: &[f64]) -> MenuChoice {
    let tol = 1e-12 * (1.0 + x.iter().map(|v| v.abs()).sum::<f64>());
    let zero = vec![0.0; x.len()];
    let options: Vec<(Option<usize>, &[f64], f64)> = std::iter::once((None, zero.as_slice(), 0.0))
        .chain(menu.items.iter().enumerate().map(|(i, it)| (Some(i), it.p.as_slice(), it.utility(x))))
        .collect();
    let top = options.iter().fold(f64::NEG_INFINITY, |m, o| m.max(o.2));
    let (item, p, _) = *options.iter().find(|o| o.2 >= top - tol).expect("zero option is present");
    let tie = options.iter().any(|o| o.2 >= top - tol && o.1 != p);
    MenuChoice { value: top, item, tie }
}

/// One option's cell in a menu partition.
#[derive(Clone, Debug)]
pub struct MenuCell {
    pub item: Option<usize>,
    /// Argmax inequalities describing the closed cell.
    pub region: Region,
    /// Grid nodes assigned to the cell.
    pub nodes: Vec<usize>,
}

/// Partition of a grid by menu choice.
#[derive(Clone, Debug)]
pub struct RegionPartition {
    pub grid: GridSpec,
    /// The zero option first, then the items in menu order.
    pub cells: Vec<MenuCell>,
    /// Nodes where two options with different allocations tie.
    pub ties: Vec<usize>,
}

impl RegionPartition {
    pub fn cell(&self, item: Option<usize>) -> &MenuCell {
        self.cells.iter().find(|c| c.item == item).expect("every option has a cell")
    }
}

pub fn menu_regions(menu: &Menu, g: &GridSpec) -> RegionPartition {
    let n = g.dim();
    let mut cells: Vec<MenuCell> = std::iter::once(None)
        .chain((0..menu.items.len()).map(Some))
        .map(|item| MenuCell { item, region: menu.region(item, n), nodes: Vec::new() })
        .collect();
    let mut ties = Vec::new();
    for idx in 0..g.len() {
        let c = menu_utility(menu, &g.point(idx));
        let slot = c.item.map_or(0, |i| i + 1);
        cells[slot].nodes.push(idx);
        if c.tie {
            ties.push(idx);
        }
    }
    RegionPartition { grid: g.clone(), cells, ties }
}

/// Probability of a region under `f` (interior quadrature only).
pub fn region_probability(f: &ProductDensity, region: &Region, q: &QuadConfig) -> Result<f64> {
    let bx = f.type_box().clone();
    let mu = TransformedMeasure::new(f.clone());
    let mut s = 0.0;
    for (lo, hi) in mu.panel_cells(q.panels) {
        region.rule(&bx, &lo, &hi, q.order, &mut |k, x, w| {
            if k == PointKind::Interior {
                s += w * f.density(x).unwrap_or(0.0);
            }
        })?;
    }
    Ok(s)
}

/// Drop duplicate items, explicit zero options, and items chosen with
/// probability at most `threshold`.
pub fn essential_form(menu: &Menu, f: &ProductDensity, threshold: f64) -> Result<Menu> {
    menu.validate()?;
    let n = f.dim();
    let mut items: Vec<MenuItem> = Vec::new();
    for it in &menu.items {
        if it.p.len() != n {
            return Err(Error::Invalid("menu and density dimensions differ".into()));
        }
        if !it.is_zero() && !items.contains(it) {
            items.push(it.clone());
        }
    }
    let q = QuadConfig::for_dim(n);
    let mut out = Menu { items };
    // A probability-zero item changes the utility only on a null set, so
    // removing it leaves the other cells' probabilities unchanged.
    let mut k = out.items.len();
    while k > 0 {
        k -= 1;
        let prob = region_probability(f, &out.region(Some(k), n), &q)?;
        if prob <= threshold {
            out.items.remove(k);
        }
    }
    Ok(out)
}

/// Per-region result of the optimal-menu check.
#[derive(Clone, Debug, Serialize)]
pub struct MenuReport {
    /// Zero option first, then items in menu order.
    pub regions: Vec<RegionReport>,
    pub pass: bool,
}

fn item_label(menu: &Menu, k: Option<usize>) -> String {
    match k {
        None => "zero".into(),
        Some(i) => {
            let it = &menu.items[i];
            format!("p={:?} t={}", it.p, it.t)
        }
    }
}

/// For every option `(p, t)` with cell `R`: `μ₊|_R ⪯_cvx(v) μ₋|_R`, where `v`
/// comes from [`MenuItem::direction`]. Regions that fail on mass alone are
/// reported without running a decider.
pub fn check_optimal_menu(menu: &Menu, mu: &TransformedMeasure, cfg: &RegionCheckConfig) -> Result<MenuReport> {
    menu.validate()?;
    let n = mu.dim();
    if menu.items.iter().any(|it| it.p.len() != n) {
        return Err(Error::Invalid("menu and measure dimensions differ".into()));
    }
    let mut regions = Vec::new();
    for k in std::iter::once(None).chain((0..menu.items.len()).map(Some)) {
        let it = menu.option(k, n);
        let r = check_region_dominance(mu, &menu.region(k, n), &it.direction(), &item_label(menu, k), cfg)?;
        log::info!("menu region {}: {} via {}", r.label, if r.pass { "pass" } else { "fail" }, r.method);
        regions.push(r);
    }
    let pass = regions.iter().all(|r| r.pass);
    Ok(MenuReport { regions, pass })
}

/// Expected revenue `Σ t·Pr_f[choose (p, t)]` by quadrature of `f` over the
/// exact choice regions.
pub fn menu_revenue(menu: &Menu, f: &ProductDensity, q: &QuadConfig) -> Result<f64> {
    menu.validate()?;
    let n = f.dim();
    let mut total = 0.0;
    for k in 0..menu.items.len() {
        total += menu.items[k].t * region_probability(f, &menu.region(Some(k), n), q)?;
    }
    Ok(total)
}

/// Grand-bundling conditions at one price.
#[derive(Clone, Debug, Serialize)]
pub struct BundlingReport {
    pub price: f64,
    /// `0 ⪰_cvx μ|_Z` on `Z = {Σx <= price}`.
    pub z: RegionReport,
    /// `μ|_W ⪰₂ 0` on `W = {Σx >= price}`.
    pub w: RegionReport,
    pub pass: bool,
}

pub fn check_grand_bundling(price: f64, mu: &TransformedMeasure, cfg: &RegionCheckConfig) -> Result<BundlingReport> {
    let bx = mu.type_box();
    let n = mu.dim();
    let top: f64 = bx.highs.iter().sum();
    if !(price > 0.0 && price < top) {
        return Err(Error::Precondition(format!("bundle price {price} outside (0, {top})")));
    }
    let z = check_region_dominance(mu, &Region::sum_at_most(n, price), &vec![1; n], "Z", cfg)?;
    let w = check_region_dominance(mu, &Region::sum_at_least(n, price), &vec![-1; n], "W", cfg)?;
    let pass = z.pass && w.pass;
    Ok(BundlingReport { price, z, w, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::TypeBox;
    use crate::measure::build_transformed;

    fn mv_menu() -> Menu {
        let b = (4.0 - 2f64.sqrt()) / 3.0;
        Menu::new(vec![
            MenuItem::new(vec![1.0, 0.0], 2.0 / 3.0).unwrap(),
            MenuItem::new(vec![0.0, 1.0], 2.0 / 3.0).unwrap(),
            MenuItem::new(vec![1.0, 1.0], b).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn utility_examples() {
        let m = mv_menu();
        let c = menu_utility(&m, &[0.9, 0.9]);
        assert_eq!(c.item, Some(2));
        assert!((c.value - (1.8 - (4.0 - 2f64.sqrt()) / 3.0)).abs() < 1e-14);
        let c = menu_utility(&m, &[0.1, 0.2]);
        assert_eq!((c.item, c.value), (None, 0.0));
        let m2 = Menu::new(vec![MenuItem::new(vec![0.5, 1.0], 8.0).unwrap(), MenuItem::new(vec![1.0, 1.0], 12.0).unwrap()])
            .unwrap();
        let c = menu_utility(&m2, &[6.0, 6.0]);
        assert_eq!(c.item, Some(0));
        assert!((c.value - 1.0).abs() < 1e-14);
    }

    #[test]
    fn single_threshold_regions() {
        let m = Menu::new(vec![MenuItem::new(vec![1.0], 0.5).unwrap()]).unwrap();
        let g = GridSpec::uniform(&TypeBox::unit(1), 11).unwrap();
        let p = menu_regions(&m, &g);
        assert_eq!(p.cell(None).nodes, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(p.cell(Some(0)).nodes, vec![6, 7, 8, 9, 10]);
        assert_eq!(p.ties, vec![5]);
        assert!(p.cell(Some(0)).region.contains(&[0.7]) && !p.cell(Some(0)).region.contains(&[0.3]));
    }

    #[test]
    fn essential_form_drops_dominated_and_duplicates() {
        let f = ProductDensity::uniform_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let m = mv_menu();
        assert_eq!(essential_form(&m, &f, 1e-9).unwrap(), m);
        let mut items = m.items.clone();
        items.push(MenuItem { p: vec![1.0, 1.0], t: m.items[2].t + 0.01 });
        items.push(m.items[0].clone());
        items.push(MenuItem { p: vec![0.0, 0.0], t: 0.0 });
        assert_eq!(essential_form(&Menu { items }, &f, 1e-9).unwrap(), m);
    }

    #[test]
    fn bundle_price_out_of_range() {
        let mu = build_transformed(&ProductDensity::uniform_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap());
        let cfg = RegionCheckConfig::for_dim(2);
        assert!(matches!(check_grand_bundling(2.5, &mu, &cfg), Err(Error::Precondition(_))));
    }

    #[test]
    fn unit_square_bundle_at_one_fails() {
        // Z = {x + y <= 1} has mu(Z) = 1 - 3/2 != 0.
        let mu = build_transformed(&ProductDensity::uniform_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap());
        let r = check_grand_bundling(1.0, &mu, &RegionCheckConfig::for_dim(2)).unwrap();
        assert!(!r.pass);
        assert_eq!(r.z.method, "mass");
        assert!((r.z.signed_mass() + 0.5).abs() < 1e-9);
    }
}
