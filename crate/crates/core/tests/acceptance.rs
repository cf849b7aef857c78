//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use mdopt_core::catalog;
use mdopt_core::curve::Curve;
use mdopt_core::dominance::{
    convex_dominates, exhaustive_first_order, first_order_dominates, Verdict,
};
use mdopt_core::duality::{random_feasible_certificate, verify_certificate};
use mdopt_core::instance::{instance_exclusion, run_check, run_partition, run_solve, PriceSpec};
use mdopt_core::lattice::{GridMeasure, GridSpec};
use mdopt_core::measure::{build_transformed, QuadConfig};
use mdopt_core::distributions::TypeBox;
use mdopt_core::mechanisms::*;
use mdopt_core::region::Region;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn two_uniform_menu() -> Outcome {
    let t = Instant::now();
    let inst = catalog::mv();
    let check = run_check(&inst).map_err(e2s)?;
    let menu = check.menu.as_ref().ok_or("no menu report")?;
    ensure(menu.regions.len() == 4, format!("{} regions", menu.regions.len()))?;
    for r in &menu.regions {
        ensure(r.pass, format!("region {} failed via {}", r.label, r.method))?;
    }
    ensure(RegionCheckConfig::for_dim(2).nodes == 41, "sub-grid is not 41 x 41")?;
    let solve = run_solve(&inst).map_err(e2s)?.report;
    let oracle = solve.menu_revenue.ok_or("no revenue oracle")?;
    let rel = (solve.primal_value - oracle).abs() / oracle;
    ensure(rel < 0.02, format!("primal {} vs oracle {oracle}", solve.primal_value))?;
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!("4/4 regions pass; primal {:.6} vs revenue {oracle:.6} ({:.3}%); {secs:.2} s", solve.primal_value, 100.0 * rel))
}

fn wide_box_menu() -> Outcome {
    let t = Instant::now();
    let inst = catalog::wide_box();
    let check = run_check(&inst).map_err(e2s)?;
    ensure(check.pass, "check_optimal_menu failed")?;
    let menu = check.menu.unwrap();
    let mut masses = Vec::new();
    for r in &menu.regions {
        ensure(r.signed_mass().abs() <= 1e-6, format!("mu({}) = {:.3e}", r.label, r.signed_mass()))?;
        masses.push(r.signed_mass());
    }
    // Shuffle of the LP certificate, restricted to the interior of Y = {x < 8, x/2 + y > 8}.
    let out = run_solve(&inst).map_err(e2s)?;
    let alpha = &out.certificate.alpha;
    let g = &alpha.grid;
    let scale = alpha.mass.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut top = Vec::new();
    for i in 0..g.len() {
        let x = g.point(i);
        let in_y = x[0] < 8.0 - 1e-9 && x[0] / 2.0 + x[1] > 8.0 + 1e-9;
        let a = alpha.mass[i];
        if in_y && a.abs() > 1e-9 * scale {
            ensure((x[1] - 7.0).abs() < 1e-12, format!("shuffle mass {a:.3e} off the top edge at {x:?}"))?;
            top.push((x[0], a));
        }
    }
    top.sort_by(|a, b| a.0.total_cmp(&b.0));
    let first = top.first().ok_or("no shuffle mass in Y")?;
    ensure(first.0 == 4.0 && first.1 > 0.0, format!("no positive atom at (4,7): {first:?}"))?;
    ensure(top[1..].windows(2).all(|w| w[1].1 >= w[0].1 - 1e-9 * scale), "top-edge shuffle density not increasing")?;
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 120.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "menu optimal; region masses {:?}; shuffle in Y on top edge only, atom {:.4} at (4,7); {secs:.2} s",
        masses.iter().map(|m| format!("{m:.1e}")).collect::<Vec<_>>(),
        first.1
    ))
}

fn beta_example() -> Outcome {
    let inst = catalog::beta12();
    let f = inst.density().map_err(e2s)?;
    let mu = build_transformed(&f);
    let s = Curve::Rational { a: 2.0, b: -3.0, c: 4.0, d: -5.0 };
    let xs: Vec<f64> = (0..20).map(|i| 0.6 * i as f64 / 19.0).collect();
    let b = boundary_from_line_integrals(&mu, LineAxis::Vertical, &xs).map_err(e2s)?;
    ensure(b.points.len() == 20, format!("{} of 20 abscissae have a zero", b.points.len()))?;
    let worst = b.points.iter().map(|p| (p[1] - s.eval(p[0])).abs()).fold(0.0, f64::max);
    ensure(worst <= 1e-6, format!("boundary error {worst:.3e}"))?;
    let z = instance_exclusion(&inst, &mu).map_err(e2s)?;
    ensure((z.price - 0.5535).abs() <= 1e-3, format!("p* = {}", z.price))?;
    let out = run_partition(&inst).map_err(e2s)?;
    let cp = &out.partition;
    ensure(
        (cp.x_crit - 0.0618).abs() <= 1e-3 && (cp.y_crit - 0.0618).abs() <= 1e-3,
        format!("critical point ({}, {})", cp.x_crit, cp.y_crit),
    )?;
    let wf = &out.report.well_formed;
    ensure(wf.pass, "not well-formed")?;
    let rt = wf.w_regionthm.as_ref().ok_or("density criterion not run")?;
    ensure(rt.result.verdict == Verdict::Dominates, "density criterion failed on W")?;
    ensure(wf.w.method == "first_order" && wf.w.pass, format!("grid decider on W: {} pass={}", wf.w.method, wf.w.pass))?;
    Ok(format!(
        "boundary error {worst:.1e}; p* = {:.6}; critical ({:.5}, {:.5}); W by density criterion and coupling",
        z.price, cp.x_crit, cp.y_crit
    ))
}

fn power_law() -> Outcome {
    let inst = catalog::power_law();
    let f = inst.density().map_err(e2s)?;
    let deficit = f.truncation_deficit();
    ensure(deficit < 1e-6, format!("tail mass {deficit:.3e}"))?;
    ensure(matches!(inst.bundle.as_ref().map(|b| b.price), Some(PriceSpec::Rule(_))), "price is not derived")?;
    let r = run_check(&inst).map_err(e2s)?;
    let b = r.bundle.ok_or_else(|| format!("no bundle report: {:?}", r.price_error))?;
    ensure((b.price - 0.35725).abs() <= 1e-3, format!("p* = {}", b.price))?;
    ensure(b.pass, format!("grand bundling fails: Z {} W {}", b.z.pass, b.w.pass))?;
    Ok(format!("T = {:?}; tail {deficit:.2e}; p* = {:.6}; grand bundling passes", f.type_box().highs, b.price))
}

fn exponential() -> Outcome {
    let mut notes = Vec::new();
    for (l1, l2) in [(1.0, 1.0), (2.0, 1.0)] {
        let inst = catalog::exponential(l1, l2);
        let f = inst.density().map_err(e2s)?;
        let mu = build_transformed(&f);
        let z = instance_exclusion(&inst, &mu).map_err(e2s)?;
        let p = z.price;
        let bx = f.type_box().clone();
        let set = Region::Polytope(vec![
            mdopt_core::region::HalfSpace::sum_at_most(2, p),
            mdopt_core::region::HalfSpace::new(vec![l1, l2], 2.0),
        ]);
        let m = mu.region_mass_refined(&set, &QuadConfig::for_dim(2)).map_err(e2s)?;
        ensure(m.abs() <= 1e-6, format!("mu(Z) = {m:.3e} at p* = {p}"))?;
        let cp = canonical_partition(&z).map_err(e2s)?;
        let mech = mechanism_from_partition(&cp).map_err(e2s)?;
        let (want_alloc, want_price) = ([1.0, l2 / l1], 2.0 / l1);
        // The item on the lower boundary line; offered to ℬ when that region is non-empty.
        let item = mech.strip_item_b(bx.lows[1]).ok_or("no s2 boundary")?;
        ensure(item.allocation == want_alloc && item.price == want_price, format!("item {item:?}"))?;
        if cp.y_crit > 0.0 {
            let x = [0.5 * (cp.s2(0.5 * cp.y_crit) + bx.highs[0]), 0.5 * cp.y_crit];
            let o = mech.outcome(&x);
            ensure(cp.classify(&x) == Cell::B, "sample type not in B")?;
            ensure(o.allocation == want_alloc && o.price == want_price, format!("outcome {o:?}"))?;
        }
        notes.push(format!("({l1},{l2}): p* = {p:.6}, mu(Z) = {m:.1e}, item {:?} at {}", item.allocation, item.price));
    }
    Ok(notes.join("; "))
}

fn hypercube() -> Outcome {
    let t = Instant::now();
    let h21 = HypercubeInstance::new(2, 1.0).unwrap();
    let mu = h21.measure().map_err(e2s)?;
    let price = h21.critical_price().map_err(e2s)?;
    let r = check_grand_bundling(price, &mu, &RegionCheckConfig::for_dim(2)).map_err(e2s)?;
    ensure(r.pass, format!("(2,1) bundling fails at {price}"))?;
    let h30 = HypercubeInstance::new(3, 0.0).unwrap();
    let mu3 = h30.measure().map_err(e2s)?;
    ensure(h30.critical_h().is_err(), "a balancing price exists for (3,0)")?;
    for p in [0.25, 0.5, 1.0, 1.5, 2.0, 2.5, 2.9] {
        let r = check_grand_bundling(p, &mu3, &RegionCheckConfig::for_dim(3)).map_err(e2s)?;
        ensure(!r.pass, format!("(3,0) bundling passes at {p}"))?;
    }
    ensure(notbundling_bound(3, 0.0) && !notbundling_bound(2, 0.0) && notbundling_bound(4, 1.0), "bound values")?;
    let mut worst = 0.0f64;
    for n in 2..=4 {
        for c in [0.0, 1.0] {
            let h = HypercubeInstance::new(n, c).unwrap();
            let q = h.mu_minus(1.0).map_err(e2s)?;
            worst = worst.max((q - h.mu_minus_formula()).abs());
        }
    }
    ensure(worst <= 1e-6, format!("mu_minus error {worst:.3e}"))?;
    Ok(format!("(2,1) passes at {price:.6}; (3,0) fails at 7 prices; mu_minus error {worst:.1e}; {:.2} s", t.elapsed().as_secs_f64()))
}

fn matching() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst_det = 0.0f64;
    let mut worst_mc = 0.0f64;
    for n in 2..=4 {
        for rho in [1.5, 2.0, 11.0] {
            for _ in 0..10_000 {
                let x = sample_matching_domain(rho, n, &mut rng);
                let y = hypercube_phi(&x, rho, n).map_err(e2s)?;
                ensure(y.iter().zip(&x).all(|(a, b)| *a <= b + 1e-12), format!("phi({x:?}) = {y:?} not below"))?;
                ensure(in_matching_image(&y, n), format!("phi({x:?}) outside the image"))?;
                let bound = phi_epsilon_bound(y[0], rho, n);
                ensure(x[n - 1] >= bound - 1e-9, "epsilon bound violated")?;
            }
            for _ in 0..50 {
                let x = sample_matching_domain(rho, n, &mut rng);
                let mut w = vec![x[n - 1]];
                w.extend_from_slice(&x[1..n - 1]);
                let b = matching_domain_bound(rho, n);
                // The map is singular on the domain edges; step well inside the nearest one.
                let gaps = x.windows(2).map(|p| p[0] - p[1]).fold(b - w[0], f64::min).min(w[0]);
                if gaps < 1e-6 {
                    continue;
                }
                let h = (0.01 * gaps).min(1e-4);
                let analytic = determinant(phi_reduced_jacobian(&w, rho, n).map_err(e2s)?);
                let fd = determinant(phi_reduced_jacobian_fd(&w, rho, n, h).map_err(e2s)?);
                ensure((analytic.abs() - rho).abs() <= 1e-9 * rho, format!("analytic det {analytic}"))?;
                worst_det = worst_det.max((fd.abs() - rho).abs());
            }
            let mc = matching_monte_carlo(rho, n, 200_000, 1).map_err(e2s)?;
            let rel = (mc.area_ratio / rho - 1.0).abs();
            ensure(rel <= 0.02, format!("n={n} rho={rho}: area ratio {}", mc.area_ratio))?;
            worst_mc = worst_mc.max(rel);
        }
    }
    ensure(worst_det <= 1e-6, format!("finite-difference determinant error {worst_det:.3e}"))?;
    Ok(format!("9 x 10^4 points dominated; |det| = rho, finite-difference |det| - rho within {worst_det:.1e}; area ratio error {:.2}%", 100.0 * worst_mc))
}

fn dominance_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut total, mut dominating) = (0usize, 0usize);
    for k1 in 1..=5 {
        for k2 in 1..=5 {
            let g = GridSpec::new(TypeBox::unit(2), vec![k1, k2]).map_err(e2s)?;
            for _ in 0..200 {
                let b: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(0..4) as f64).collect();
                let a = if rng.gen_bool(0.5) {
                    // Push units of b upward: a first-order improvement.
                    let mut a = b.clone();
                    for _ in 0..rng.gen_range(0..6) {
                        let from = rng.gen_range(0..g.len());
                        if a[from] < 1.0 {
                            continue;
                        }
                        let m = g.multi_index(from);
                        let to: Vec<usize> = (0..2).map(|i| rng.gen_range(m[i]..g.nodes_per_axis[i])).collect();
                        a[from] -= 1.0;
                        a[g.flat_index(&to)] += 1.0;
                    }
                    a
                } else {
                    let mut a: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(0..4) as f64).collect();
                    let diff = b.iter().sum::<f64>() - a.iter().sum::<f64>();
                    // Equalize the masses at a random node.
                    let i = rng.gen_range(0..g.len());
                    a[i] += diff;
                    if a[i] < 0.0 {
                        continue;
                    }
                    a
                };
                let (a, b) = (GridMeasure::new(g.clone(), a).map_err(e2s)?, GridMeasure::new(g.clone(), b).map_err(e2s)?);
                if a.total() == 0.0 {
                    continue;
                }
                let fo = first_order_dominates(&a, &b).map_err(e2s)?;
                let brute = exhaustive_first_order(&a, &b, 1e-9).map_err(e2s)?;
                ensure(fo.dominates() == brute, format!("disagree on {k1}x{k2}: {:?} vs {:?}", a.mass, b.mass))?;
                total += 1;
                if fo.dominates() {
                    dominating += 1;
                    if k1 > 1 || k2 > 1 {
                        let cvx = convex_dominates(&a, &b, &[1, 1], 1).map_err(e2s)?;
                        ensure(cvx.dominates(), format!("first order without convex order: {:?} vs {:?}", a.mass, b.mass))?;
                    }
                }
            }
        }
    }
    Ok(format!("{total} pairs on 25 grid shapes agree; {dominating} dominating pairs also convex-dominate"))
}

fn duality_sandwich() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst = (f64::INFINITY, f64::NEG_INFINITY);
    let mut names = Vec::new();
    for inst in catalog::all() {
        let out = run_solve(&inst).map_err(e2s)?;
        let gap = out.certificate.value - out.solution.value;
        let hi = 1e-6 * (1.0 + out.solution.value.abs());
        ensure((-1e-9..=hi).contains(&gap), format!("{}: gap {gap:.3e}", inst.name))?;
        worst = (worst.0.min(gap), worst.1.max(gap));
        for _ in 0..20 {
            let cert = random_feasible_certificate(&out.measure, out.certificate.radius, Some(&out.certificate), &mut rng);
            let rep = verify_certificate(&out.solution.u, &cert, &out.measure, 1e-6).map_err(e2s)?;
            ensure(rep.certificate_feasible.pass, format!("{}: random certificate infeasible", inst.name))?;
            ensure(cert.value >= out.solution.value - 1e-9, format!("{}: random dual {} below primal", inst.name, cert.value))?;
        }
        names.push(inst.name);
    }
    Ok(format!("{} instances; gaps in [{:.1e}, {:.1e}]; 20 random duals each stay above the primal", names.len(), worst.0, worst.1))
}

fn single_item() -> Outcome {
    let inst = catalog::single_uniform();
    let out = run_solve(&inst).map_err(e2s)?;
    let g = &out.measure.grid;
    let h = g.spacing(0);
    ensure((out.solution.value - 0.25).abs() <= 0.005, format!("value {}", out.solution.value))?;
    let mut err = 0.0f64;
    for i in 0..g.len() {
        let z = g.coord(0, i);
        err = err.max((out.solution.u.value[i] - (z - 0.5).max(0.0)).abs());
    }
    ensure(err <= h, format!("utility error {err:.3e}"))?;
    let cert = &out.certificate;
    for t in &cert.gamma {
        let (x, y) = (g.coord(0, t.x[0]), g.coord(0, t.y[0]));
        ensure(x > y && y >= 0.5 - 1e-12, format!("transport {x} -> {y}"))?;
    }
    for s in &cert.shifts {
        ensure(s.mass.abs() <= 1e-12 || g.coord(0, s.node[0]) < 0.5, "rightward shift above the price")?;
    }
    ensure(cert.total_spread() <= 1e-9, format!("spreads {:.3e}", cert.total_spread()))?;
    Ok(format!("value {:.6}; utility error {err:.1e}; leftward transport above 1/2, rightward shifts below, no spreads", out.solution.value))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("two uniform items: menu conditions and revenue", two_uniform_menu),
        ("uniform [4,16]x[4,7]: menu, region masses, shuffle", wide_box_menu),
        ("Beta(1,2)^2: boundary, price, well-formed partition", beta_example),
        ("power-law pair: grand bundling at the critical price", power_law),
        ("exponential pairs: interior item and zero-mass exclusion set", exponential),
        ("hypercube grand bundling", hypercube),
        ("matching map properties", matching),
        ("first-order decider vs exhaustive oracle", dominance_oracles),
        ("duality sandwich", duality_sandwich),
        ("single uniform item", single_item),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.into_iter().enumerate() {
        let t = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("PASS criterion {}: {name} [{secs:.2} s] {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {name} [{secs:.2} s] {why}", k + 1)
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
