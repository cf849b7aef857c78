//! Built-in instances: the worked examples used by the golden runner, the
//! acceptance suite and the CLI.

use crate::distributions::{DistributionSpec, MarginalSpec};
use crate::instance::{BundleInput, ExclusionInput, GridConfig, InstanceSpec, PriceRule, PriceSpec};
use crate::mechanisms::{CurveSpec, Menu, MenuItem};

/// Bundle price of the two-uniform menu.
pub fn mv_bundle_price() -> f64 {
    (4.0 - 2f64.sqrt()) / 3.0
}

/// `{single items at 2/3, bundle at (4 - √2)/3}`.
pub fn mv_menu() -> Menu {
    Menu {
        items: vec![
            MenuItem { p: vec![1.0, 0.0], t: 2.0 / 3.0 },
            MenuItem { p: vec![0.0, 1.0], t: 2.0 / 3.0 },
            MenuItem { p: vec![1.0, 1.0], t: mv_bundle_price() },
        ],
    }
}

/// `{(½, 1) at 8, (1, 1) at 12}`.
pub fn wide_box_menu() -> Menu {
    Menu { items: vec![MenuItem { p: vec![0.5, 1.0], t: 8.0 }, MenuItem { p: vec![1.0, 1.0], t: 12.0 }] }
}

/// `y = (2 - 3x)/(4 - 5x)`.
pub fn beta12_boundary() -> CurveSpec {
    CurveSpec::Rational { a: 2.0, b: -3.0, c: 4.0, d: -5.0 }
}

fn uniform(lows: &[f64], highs: &[f64]) -> DistributionSpec {
    DistributionSpec {
        marginals: lows.iter().zip(highs).map(|(&a, &b)| MarginalSpec::Uniform { a, b }).collect(),
        type_box: None,
    }
}

fn base(name: &str, distribution: DistributionSpec) -> InstanceSpec {
    InstanceSpec {
        name: name.into(),
        distribution,
        grid: GridConfig::default(),
        tolerances: Default::default(),
        menu: None,
        bundle: None,
        exclusion: None,
        regionthm: false,
    }
}

fn critical() -> PriceSpec {
    PriceSpec::Rule(PriceRule::Critical)
}

pub fn single_uniform() -> InstanceSpec {
    let mut i = base("single-uniform", uniform(&[0.0], &[1.0]));
    i.grid.nodes = 101;
    i.menu = Some(Menu { items: vec![MenuItem { p: vec![1.0], t: 0.5 }] });
    i
}

pub fn mv() -> InstanceSpec {
    let mut i = base("mv", uniform(&[0.0, 0.0], &[1.0, 1.0]));
    i.grid.nodes = 31;
    i.menu = Some(mv_menu());
    i.exclusion = Some(ExclusionInput {
        s1: CurveSpec::Constant { value: 2.0 / 3.0 },
        s2: CurveSpec::Constant { value: 2.0 / 3.0 },
        price: PriceSpec::Value(mv_bundle_price()),
        bracket: None,
    });
    i
}

pub fn wide_box() -> InstanceSpec {
    let mut i = base("uniform-4-16-4-7", uniform(&[4.0, 4.0], &[16.0, 7.0]));
    // Spacing 0.5 on both axes puts x = 8 and both price lines through nodes.
    i.grid.nodes_per_axis = Some(vec![25, 7]);
    i.menu = Some(wide_box_menu());
    i
}

pub fn beta12() -> InstanceSpec {
    let d = DistributionSpec { marginals: vec![MarginalSpec::Beta { a: 1.0, b: 2.0 }; 2], type_box: None };
    let mut i = base("beta-1-2", d);
    i.exclusion = Some(ExclusionInput { s1: beta12_boundary(), s2: beta12_boundary(), price: critical(), bracket: None });
    i.regionthm = true;
    i
}

pub fn power_law() -> InstanceSpec {
    let d = DistributionSpec {
        marginals: vec![
            MarginalSpec::PowerLaw { k: 6.0, truncation: None },
            MarginalSpec::PowerLaw { k: 7.0, truncation: None },
        ],
        type_box: None,
    };
    let mut i = base("powerlaw-6-7", d);
    i.bundle = Some(BundleInput { price: critical(), bracket: Some([0.01, 2.0]) });
    i
}

/// Exponential marginals with rates `λ₁ >= λ₂`; the exclusion set is
/// `{x + y <= p, λ₁x + λ₂y <= 2}`.
pub fn exponential(l1: f64, l2: f64) -> InstanceSpec {
    let d = DistributionSpec {
        marginals: vec![
            MarginalSpec::Exponential { lambda: l1, truncation: None },
            MarginalSpec::Exponential { lambda: l2, truncation: None },
        ],
        type_box: None,
    };
    let mut i = base(&format!("exponential-{l1}-{l2}"), d);
    i.exclusion = Some(ExclusionInput {
        s1: CurveSpec::Unbounded,
        s2: CurveSpec::Affine { a: 2.0 / l1, b: -l2 / l1 },
        price: critical(),
        bracket: Some([1e-6, 2.0 / l2]),
    });
    i
}

/// Uniform `[c, c+1]ⁿ` offered only the grand bundle.
pub fn hypercube(n: usize, c: f64) -> InstanceSpec {
    let mut i = base(&format!("hypercube-{n}-{c}"), uniform(&vec![c; n], &vec![c + 1.0; n]));
    i.grid.nodes = if n <= 2 { 21 } else { 7 };
    i.bundle = Some(BundleInput { price: critical(), bracket: Some([n as f64 * c + 1e-9, n as f64 * (c + 1.0) - 1e-9]) });
    i
}

/// Every built-in instance.
pub fn all() -> Vec<InstanceSpec> {
    vec![
        single_uniform(),
        mv(),
        wide_box(),
        beta12(),
        power_law(),
        exponential(1.0, 1.0),
        exponential(2.0, 1.0),
        hypercube(2, 1.0),
        hypercube(3, 0.0),
    ]
}

pub fn by_name(name: &str) -> Option<InstanceSpec> {
    all().into_iter().find(|i| i.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_unique_and_round_trip() {
        let all = all();
        for (k, i) in all.iter().enumerate() {
            assert!(all[..k].iter().all(|j| j.name != i.name));
            assert_eq!(&InstanceSpec::from_json(&i.to_json()).unwrap(), i);
            i.density().unwrap();
        }
    }
}
