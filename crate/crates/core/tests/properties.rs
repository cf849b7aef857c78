use mdopt_core::catalog;
use mdopt_core::curve::MonotoneCubic;
use mdopt_core::distributions::{ProductDensity, TypeBox};
use mdopt_core::dominance::{convex_dominates, exhaustive_first_order, first_order_dominates};
use mdopt_core::duality::{random_feasible_certificate, solve_primal};
use mdopt_core::lattice::{discretize_measure, ConeSpec, GridMeasure, GridSpec};
use mdopt_core::lp::{LpOptions, LpProblem, LpStatus};
use mdopt_core::measure::build_transformed;
use mdopt_core::mechanisms::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid_pair() -> impl Strategy<Value = (usize, usize, Vec<u8>, Vec<u8>)> {
    (1usize..=3, 1usize..=3).prop_flat_map(|(k1, k2)| {
        let n = k1 * k2;
        (Just(k1), Just(k2), prop::collection::vec(0u8..3, n), prop::collection::vec(0u8..3, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn box_lp_hits_a_vertex(c in prop::collection::vec(-3.0f64..3.0, 1..5), w in prop::collection::vec(0.1f64..2.0, 5)) {
        let n = c.len();
        let mut lp = LpProblem::new(n, c.clone());
        for i in 0..n {
            lp.add_row(vec![(i, 1.0)], w[i]);
            lp.add_row(vec![(i, -1.0)], 0.0);
        }
        let s = lp.solve(&LpOptions::default()).unwrap();
        prop_assert_eq!(s.status, LpStatus::Optimal);
        let want: f64 = (0..n).map(|i| c[i].max(0.0) * w[i]).sum();
        prop_assert!((s.objective - want).abs() <= 1e-7 * (1.0 + want.abs()));
        prop_assert!((s.dual_objective - want).abs() <= 1e-7 * (1.0 + want.abs()));
        prop_assert!(s.y.iter().all(|y| *y >= -1e-12));
    }

    #[test]
    fn first_order_matches_exhaustive((k1, k2, a, b) in grid_pair()) {
        let g = GridSpec::new(TypeBox::unit(2), vec![k1, k2]).unwrap();
        let mut a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let diff = b.iter().sum::<f64>() - a.iter().sum::<f64>();
        let last = a.len() - 1;
        a[last] += diff;
        prop_assume!(a[last] >= 0.0);
        let (a, b) = (GridMeasure::new(g.clone(), a).unwrap(), GridMeasure::new(g, b).unwrap());
        let fo = first_order_dominates(&a, &b).unwrap();
        prop_assert_eq!(fo.dominates(), exhaustive_first_order(&a, &b, 1e-9).unwrap());
        if fo.dominates() {
            prop_assert!(convex_dominates(&a, &b, &[1, 1], 1).unwrap().dominates());
        }
    }

    #[test]
    fn dominance_is_reflexive(m in prop::collection::vec(0.0f64..2.0, 9)) {
        let g = GridSpec::new(TypeBox::unit(2), vec![3, 3]).unwrap();
        let a = GridMeasure::new(g, m).unwrap();
        prop_assert!(first_order_dominates(&a, &a).unwrap().dominates());
        prop_assert!(convex_dominates(&a, &a, &[1, 1], 1).unwrap().dominates());
    }

    #[test]
    fn discretization_keeps_mass_and_moments(lo in prop::collection::vec(0.0f64..3.0, 2), w in prop::collection::vec(0.5f64..4.0, 2), k in 3usize..9) {
        let hi: Vec<f64> = lo.iter().zip(&w).map(|(l, w)| l + w).collect();
        let f = ProductDensity::uniform_box(&lo, &hi).unwrap();
        let mu = build_transformed(&f);
        let g = GridSpec::uniform(f.type_box(), k).unwrap();
        let m = discretize_measure(&mu, &g).unwrap();
        // Integrating u = 1 gives 0 and u = x_i gives E[x_i - x_i] + low_i.
        prop_assert!(m.total().abs() <= 1e-9);
        for i in 0..2 {
            let moment: f64 = (0..g.len()).map(|j| g.point(j)[i] * m.mass[j]).sum();
            prop_assert!((moment - lo[i]).abs() <= 1e-8 * (1.0 + lo[i]), "axis {} moment {}", i, moment);
        }
    }

    #[test]
    fn matching_round_trip(n in 2usize..5, rho in 1.1f64..12.0, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_matching_domain(rho, n, &mut rng);
        let y = hypercube_phi(&x, rho, n).unwrap();
        prop_assert!(in_matching_image(&y, n));
        prop_assert!(y.iter().zip(&x).all(|(y, x)| *y <= x + 1e-12));
        if y[0] > 1e-6 {
            let back = hypercube_phi_inverse(&y, rho, n).unwrap();
            for (p, q) in back.iter().zip(&x) {
                prop_assert!((p - q).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn menu_utility_is_convex_and_nondecreasing(a in prop::collection::vec(0.0f64..1.0, 2), b in prop::collection::vec(0.0f64..1.0, 2), t in 0.0f64..1.0, d in prop::collection::vec(0.0f64..0.2, 2)) {
        let menu = catalog::mv_menu();
        let u = |x: &[f64]| menu_utility(&menu, x).value;
        let mid = [t * a[0] + (1.0 - t) * b[0], t * a[1] + (1.0 - t) * b[1]];
        prop_assert!(u(&mid) <= t * u(&a) + (1.0 - t) * u(&b) + 1e-12);
        let up = [a[0] + d[0], a[1] + d[1]];
        prop_assert!(u(&up) >= u(&a) - 1e-12);
        prop_assert!(u(&up) - u(&a) <= d[0] + d[1] + 1e-12);
        prop_assert!(u(&a) >= 0.0);
    }

    #[test]
    fn partition_mechanism_is_consistent(x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let inst = catalog::mv();
        let f = inst.density().unwrap();
        let mu = build_transformed(&f);
        let z = mdopt_core::instance::instance_exclusion(&inst, &mu).unwrap();
        let cp = canonical_partition(&z).unwrap();
        let mech = mechanism_from_partition(&cp).unwrap();
        let o = mech.outcome(&[x, y]);
        prop_assert!(o.allocation.iter().all(|q| (-1e-12..=1.0 + 1e-12).contains(q)));
        prop_assert!((o.utility(&[x, y]) - exclusion_utility(&cp, &[x, y])).abs() <= 1e-9);
        prop_assert!(exclusion_utility(&cp, &[x, y]) >= -1e-12);
    }

    #[test]
    fn monotone_cubic_preserves_order(mut ys in prop::collection::vec(0.0f64..1.0, 3..8), t in 0.0f64..1.0) {
        ys.sort_by(|a, b| a.total_cmp(b));
        let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
        let c = MonotoneCubic::new(xs.clone(), ys.clone()).unwrap();
        let last = xs.len() - 1;
        let x = t * last as f64;
        let (lo, hi) = (x.floor() as usize, (x.ceil() as usize).min(last));
        let v = c.eval(x);
        prop_assert!(v >= ys[lo] - 1e-12 && v <= ys[hi] + 1e-12);
        prop_assert!(c.deriv(x) >= -1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn random_duals_bound_the_primal(seed in 0u64..10_000) {
        let f = ProductDensity::uniform_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let g = GridSpec::uniform(f.type_box(), 6).unwrap();
        let m = discretize_measure(&build_transformed(&f), &g).unwrap();
        let cone = ConeSpec::utility(2);
        let primal = solve_primal(&m, &cone).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cert = random_feasible_certificate(&m, cone.radius, None, &mut rng);
        prop_assert!(cert.value >= primal.value - 1e-9);
    }
}
