mod golden;
mod render;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mdopt_core::catalog;
use mdopt_core::dominance::{convex_dominates, exhaustive_first_order, first_order_dominates, second_order_dominates};
use mdopt_core::duality::DualCertificate;
use mdopt_core::instance::{run_check, run_partition, run_solve, run_verify};
use mdopt_core::lattice::{GridFunction, GridMeasure};
use mdopt_core::measure::build_transformed;
use mdopt_core::mechanisms::{
    check_grand_bundling, hypercube_phi, matching_monte_carlo, notbundling_bound, HypercubeInstance,
};
use mdopt_core::Error;
use serde_json::json;

use report::{sig, sig_vec, to_value, verdict, Sink};

/// A command failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub msg: String,
}

impl Failure {
    pub fn input(msg: impl Into<String>) -> Self {
        Failure { code: 2, msg: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: if e.is_input_error() { 2 } else { 3 }, msg: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "mdopt", version, about = "Optimal multi-item mechanisms: solve, certify, check and render")]
struct Cli {
    /// Print the full-precision JSON report instead of the summary.
    #[arg(long, global = true)]
    json: bool,
    /// Also write the JSON report to this file.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Seed for Monte Carlo checks.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Discretize, solve the utility LP, extract and verify the transport certificate.
    Solve {
        instance: PathBuf,
        /// Write u's level sets (with transport arrows) as SVG.
        #[arg(long, value_name = "FILE")]
        svg: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        save_utility: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        save_certificate: Option<PathBuf>,
    },
    /// Re-verify a saved utility and certificate.
    Verify {
        instance: PathBuf,
        #[arg(long, value_name = "FILE")]
        utility: PathBuf,
        #[arg(long, value_name = "FILE")]
        certificate: PathBuf,
    },
    /// Check the instance's menu or grand-bundle price for optimality.
    Check { instance: PathBuf },
    /// Decide dominance between two grid measures (JSON files).
    Dominance(DominanceArgs),
    /// Build the canonical partition of the exclusion set and check well-formedness.
    Partition {
        instance: PathBuf,
        #[arg(long, value_name = "FILE")]
        svg: Option<PathBuf>,
    },
    /// Uniform hypercube tools.
    Hypercube {
        #[command(subcommand)]
        command: HypercubeCommand,
    },
    /// Render the instance's partition, menu or utility as SVG.
    Render(RenderArgs),
    /// Transformed-measure tools.
    Measure {
        #[command(subcommand)]
        command: MeasureCommand,
    },
    /// Golden instances.
    Examples {
        #[command(subcommand)]
        command: ExamplesCommand,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Order {
    First,
    Convex,
    Second,
}

#[derive(Args)]
struct DominanceArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long, value_enum, default_value = "first")]
    order: Order,
    /// Monotonicity direction per axis for the convex order, e.g. 1,1 or -1,0.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    v: Option<Vec<i8>>,
    /// Convexity stencil radius.
    #[arg(long, default_value_t = 1)]
    radius: usize,
    /// Cross-check a first-order verdict against the increasing-set enumeration.
    #[arg(long)]
    exhaustive: bool,
}

#[derive(Subcommand)]
enum HypercubeCommand {
    /// Evaluate the matching map at a point of the matching domain.
    Phi {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        rho: f64,
        #[arg(long, value_delimiter = ',')]
        x: Vec<f64>,
    },
    /// Closed-form mass of the negative part near the bottom corner and the non-bundling bound.
    Bound {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        c: f64,
    },
    /// Grand bundling at the critical price, plus a matching-map Monte Carlo when `--rho` is given.
    Check {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        c: f64,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
}

#[derive(Args)]
struct RenderArgs {
    instance: PathBuf,
    #[arg(long, value_name = "FILE")]
    svg: PathBuf,
    /// What to draw; defaults to the partition if the instance has an exclusion set, else its menu, else u.
    #[arg(long, value_enum)]
    what: Option<Figure>,
    /// Overlay the heaviest transport pairs of the solve certificate.
    #[arg(long)]
    transport: bool,
    #[arg(long, default_value_t = 150)]
    arrows: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Figure {
    Partition,
    Menu,
    Utility,
}

#[derive(Subcommand)]
enum MeasureCommand {
    /// Density samples, facet densities and atoms of the transformed measure.
    Dump {
        instance: PathBuf,
        #[arg(long, default_value_t = 11)]
        samples: usize,
    },
}

#[derive(Subcommand)]
enum ExamplesCommand {
    /// Replay every instance and diff against the goldens.
    Run {
        #[arg(long, default_value = "instances")]
        dir: PathBuf,
        #[arg(long, default_value = "goldens")]
        goldens: PathBuf,
        /// Rewrite the goldens from the current results.
        #[arg(long)]
        update: bool,
        /// Only this instance name.
        #[arg(long)]
        only: Option<String>,
    },
    /// Write the built-in catalog as instance files.
    Write {
        #[arg(long, default_value = "instances")]
        dir: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}

fn outcome(pass: bool) -> u8 {
    if pass {
        0
    } else {
        1
    }
}

fn cmd_solve(
    sink: &Sink,
    path: &Path,
    svg: Option<&Path>,
    save_u: Option<&Path>,
    save_cert: Option<&Path>,
) -> Result<u8, Failure> {
    let inst = golden::load_instance(path)?;
    let out = run_solve(&inst)?;
    let r = &out.report;
    let mut s = format!(
        "solve {}: primal {} dual {} gap {} ({:?}, {} iterations)\n",
        r.name,
        sig(r.primal_value),
        sig(r.dual_value),
        sig(r.gap),
        r.status,
        r.iterations
    );
    let v = &r.verification;
    for (name, c) in [
        ("utility in cone", &v.utility_feasible),
        ("certificate feasible", &v.certificate_feasible),
        ("integral identity", &v.integral_identity),
        ("tight transport", &v.tight_transport),
    ] {
        s += &format!("  {name}: {} (worst {})\n", verdict(c.pass), sig(c.worst));
    }
    for it in &r.recovered_items {
        s += &format!("  item {} at {} on {}% of cells\n", sig_vec(&it.allocation), sig(it.price), sig(100.0 * it.share));
    }
    if let Some(rev) = r.menu_revenue {
        s += &format!("  menu revenue {}\n", sig(rev));
    }
    s += verdict(r.pass);
    if let Some(p) = save_u {
        report::write_json(p, &to_value(&out.solution.u))?;
    }
    if let Some(p) = save_cert {
        report::write_json(p, &to_value(&out.certificate))?;
    }
    if let Some(p) = svg {
        if out.measure.grid.dim() != 2 {
            return Err(Error::Unsupported("figures need two items".into()).into());
        }
        let mut c = render::utility_canvas(&out.solution.u);
        render::add_transport(&mut c, &out.certificate, 150);
        write_text(p, &c.finish(&format!("{}: utility levels and transport", r.name)))?;
    }
    sink.emit(&s, &to_value(r))?;
    Ok(outcome(r.pass))
}

fn cmd_verify(sink: &Sink, path: &Path, u: &Path, cert: &Path) -> Result<u8, Failure> {
    let inst = golden::load_instance(path)?;
    let u: GridFunction = read_json(u)?;
    let cert: DualCertificate = read_json(cert)?;
    let r = run_verify(&inst, &u, &cert)?;
    let s = format!(
        "verify {}: primal {} dual {} gap {}: {}",
        inst.name,
        sig(r.primal_value),
        sig(r.dual_value),
        sig(r.gap),
        verdict(r.all_pass())
    );
    sink.emit(&s, &to_value(&r))?;
    Ok(outcome(r.all_pass()))
}

fn cmd_check(sink: &Sink, path: &Path) -> Result<u8, Failure> {
    let inst = golden::load_instance(path)?;
    let r = run_check(&inst)?;
    let mut s = format!("check {} ({}):\n", r.name, r.kind);
    if let Some(m) = &r.menu {
        for reg in &m.regions {
            s += &format!(
                "  region {}: mass {} via {}: {}\n",
                reg.label,
                sig(reg.signed_mass()),
                reg.method,
                verdict(reg.pass)
            );
        }
    }
    if let Some(b) = &r.bundle {
        s += &format!("  price {}\n", sig(b.price));
        for reg in [&b.z, &b.w] {
            s += &format!(
                "  region {}: mass {} via {}: {}\n",
                reg.label,
                sig(reg.signed_mass()),
                reg.method,
                verdict(reg.pass)
            );
        }
    }
    if let Some(e) = &r.price_error {
        s += &format!("  no balancing price: {e}\n");
    }
    if let Some(h) = &r.hypercube {
        s += &format!(
            "  uniform [{c}, {c}+1]^{n}: mu_minus(Z(1)) = {} (< 1 rules out grand bundling: {})\n",
            sig(h.mu_minus_closed_form),
            h.notbundling_bound,
            c = sig(h.c),
            n = h.n
        );
    }
    s += verdict(r.pass);
    sink.emit(&s, &to_value(&r))?;
    Ok(outcome(r.pass))
}

fn cmd_dominance(sink: &Sink, args: &DominanceArgs) -> Result<u8, Failure> {
    let a: GridMeasure = read_json(&args.a)?;
    let b: GridMeasure = read_json(&args.b)?;
    let a = GridMeasure::new(a.grid, a.mass)?;
    let b = GridMeasure::new(b.grid, b.mass)?;
    let n = a.grid.dim();
    let (name, r) = match args.order {
        Order::First => ("first-order", first_order_dominates(&a, &b)?),
        Order::Convex => {
            let v = args.v.clone().unwrap_or_else(|| vec![1; n]);
            ("convex", convex_dominates(&a, &b, &v, args.radius)?)
        }
        Order::Second => ("second-order", second_order_dominates(&a, &b, args.radius)?),
    };
    let mut report = json!({ "order": name, "result": to_value(&r) });
    let mut s = format!("{name} dominance: {:?} (margin {})", r.verdict, sig(r.margin));
    let mut pass = r.dominates();
    if args.exhaustive {
        let brute = exhaustive_first_order(&a, &b, 1e-9)?;
        report["exhaustive_first_order"] = json!(brute);
        s += &format!("; increasing-set enumeration: {}", if brute { "dominates" } else { "fails" });
        if matches!(args.order, Order::First) && brute != pass {
            return Err(Failure { code: 3, msg: "coupling decider and enumeration disagree".into() });
        }
        pass = pass && brute;
    }
    sink.emit(&s, &report)?;
    Ok(outcome(pass))
}

fn cmd_partition(sink: &Sink, path: &Path, svg: Option<&Path>) -> Result<u8, Failure> {
    let inst = golden::load_instance(path)?;
    let out = run_partition(&inst)?;
    let r = &out.report;
    let p = &r.partition;
    let wf = &r.well_formed;
    let mut s = format!(
        "partition {}: price {}, mu(Z) = {}, critical points ({}, {}) and ({}, {})\n",
        r.name,
        sig(p.price),
        sig(r.z_mass),
        sig(p.x_crit),
        sig(p.price - p.x_crit),
        sig(p.x_right),
        sig(p.y_crit)
    );
    s += &format!("  Z: {} via {}\n", verdict(wf.z.pass), wf.z.method);
    s += &format!("  W: {} via {}\n", verdict(wf.w.pass), wf.w.method);
    if let Some(rt) = &wf.w_regionthm {
        s += &format!("  W density criterion: {:?}\n", rt.result.verdict);
    }
    s += &format!(
        "  strips A: {} (worst {}), strips B: {} (worst {})\n",
        verdict(wf.strips_a.pass),
        sig(wf.strips_a.worst),
        verdict(wf.strips_b.pass),
        sig(wf.strips_b.worst)
    );
    s += verdict(r.pass);
    if let Some(f) = svg {
        write_text(f, &render::partition_svg(&out.partition, &r.name))?;
    }
    sink.emit(&s, &to_value(r))?;
    Ok(outcome(r.pass))
}

fn cmd_hypercube(sink: &Sink, cmd: &HypercubeCommand, seed: u64) -> Result<u8, Failure> {
    match cmd {
        HypercubeCommand::Phi { n, rho, x } => {
            let y = hypercube_phi(x, *rho, *n)?;
            sink.emit(&format!("phi{} = {}", sig_vec(x), sig_vec(&y)), &json!({ "x": x, "y": y }))?;
            Ok(0)
        }
        HypercubeCommand::Bound { n, c } => {
            let h = HypercubeInstance::new(*n, *c)?;
            let (m, b) = (h.mu_minus_formula(), notbundling_bound(*n, *c));
            let s = format!("n = {n}, c = {}: mu_minus(Z(1)) = {}, grand bundling ruled out: {b}", sig(*c), sig(m));
            sink.emit(&s, &json!({ "n": n, "c": c, "mu_minus": m, "notbundling": b }))?;
            Ok(0)
        }
        HypercubeCommand::Check { n, c, rho, samples } => {
            let h = HypercubeInstance::new(*n, *c)?;
            let mut report = json!({ "n": n, "c": c, "notbundling_bound": notbundling_bound(*n, *c) });
            let mut s = format!("hypercube n = {n}, c = {}:", sig(*c));
            let pass = match h.critical_price() {
                Ok(p) => {
                    let mu = h.measure()?;
                    let cfg = mdopt_core::mechanisms::RegionCheckConfig::for_dim(*n);
                    let r = check_grand_bundling(p, &mu, &cfg)?;
                    s += &format!(" grand bundling at {}: {}", sig(p), verdict(r.pass));
                    report["bundling"] = to_value(&r);
                    r.pass
                }
                Err(Error::NotBracketed(msg)) => {
                    s += &format!(" no balancing price ({msg}): FAIL");
                    report["price_error"] = json!(msg);
                    false
                }
                Err(e) => return Err(e.into()),
            };
            if let Some(rho) = rho {
                let mc = matching_monte_carlo(*rho, *n, *samples, seed)?;
                s += &format!(
                    "\n  matching map, rho = {}: area ratio {}, round trip error {}",
                    sig(*rho),
                    sig(mc.area_ratio),
                    sig(mc.roundtrip_error)
                );
                report["matching"] = to_value(&mc);
            }
            sink.emit(&s, &report)?;
            Ok(outcome(pass))
        }
    }
}

fn cmd_render(args: &RenderArgs) -> Result<u8, Failure> {
    let inst = golden::load_instance(&args.instance)?;
    if inst.dim() != 2 {
        return Err(Error::Unsupported(format!("figures need two items, got {}", inst.dim())).into());
    }
    let what = args.what.unwrap_or(if inst.exclusion.is_some() {
        Figure::Partition
    } else if inst.menu.is_some() {
        Figure::Menu
    } else {
        Figure::Utility
    });
    let needs_solve = args.transport || what == Figure::Utility;
    let solved = if needs_solve { Some(run_solve(&inst)?) } else { None };
    let svg = match what {
        Figure::Partition => {
            let out = run_partition(&inst)?;
            let mut svg = render::partition_svg(&out.partition, &inst.name);
            if let Some(sol) = &solved {
                // Re-render with arrows on top of the partition.
                let mut c = render::Canvas::new(&out.partition.type_box());
                render::add_transport(&mut c, &sol.certificate, args.arrows);
                svg = splice(&svg, &c.finish(""));
            }
            svg
        }
        Figure::Menu => {
            let menu = inst.menu.as_ref().ok_or_else(|| Failure::input("instance has no menu"))?;
            let f = inst.density()?;
            let mut svg = render::menu_svg(menu, f.type_box(), &inst.name);
            if let Some(sol) = &solved {
                let mut c = render::Canvas::new(f.type_box());
                render::add_transport(&mut c, &sol.certificate, args.arrows);
                svg = splice(&svg, &c.finish(""));
            }
            svg
        }
        Figure::Utility => {
            let sol = solved.as_ref().expect("solved above");
            let mut c = render::utility_canvas(&sol.solution.u);
            if args.transport {
                render::add_transport(&mut c, &sol.certificate, args.arrows);
            }
            c.finish(&format!("{}: utility levels", inst.name))
        }
    };
    write_text(&args.svg, &svg)?;
    println!("wrote {}", args.svg.display());
    Ok(0)
}

/// Insert the drawing elements of `overlay` just before the closing tag of `base`.
fn splice(base: &str, overlay: &str) -> String {
    let body: String = overlay
        .lines()
        .filter(|l| l.starts_with("<line"))
        .map(|l| format!("{l}\n"))
        .collect();
    match base.rfind("</svg>") {
        Some(i) => format!("{}{}{}", &base[..i], body, &base[i..]),
        None => base.to_string(),
    }
}

fn cmd_measure_dump(sink: &Sink, path: &Path, k: usize) -> Result<u8, Failure> {
    let inst = golden::load_instance(path)?;
    let mu = build_transformed(&inst.density()?);
    let d = mu.dump(k);
    let v = to_value(&d);
    let s = serde_json::to_string_pretty(&report::round_value(&v)).expect("JSON values print");
    sink.emit(&s, &v)?;
    Ok(0)
}

fn cmd_examples(cmd: &ExamplesCommand) -> Result<u8, Failure> {
    match cmd {
        ExamplesCommand::Run { dir, goldens, update, only } => {
            let r = golden::run_examples(dir, goldens, *update, only.as_deref())?;
            println!("{} matched, {} differ", r.matched, r.failed.len());
            Ok(outcome(r.failed.is_empty()))
        }
        ExamplesCommand::Write { dir } => {
            fs::create_dir_all(dir).map_err(|e| Failure::input(format!("cannot create {}: {e}", dir.display())))?;
            for inst in catalog::all() {
                let p = dir.join(format!("{}.json", inst.name));
                write_text(&p, &(inst.to_json() + "\n"))?;
                println!("wrote {}", p.display());
            }
            Ok(0)
        }
    }
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    let sink = Sink { json: cli.json, out: cli.out.clone() };
    match &cli.command {
        Command::Solve { instance, svg, save_utility, save_certificate } => {
            cmd_solve(&sink, instance, svg.as_deref(), save_utility.as_deref(), save_certificate.as_deref())
        }
        Command::Verify { instance, utility, certificate } => cmd_verify(&sink, instance, utility, certificate),
        Command::Check { instance } => cmd_check(&sink, instance),
        Command::Dominance(args) => cmd_dominance(&sink, args),
        Command::Partition { instance, svg } => cmd_partition(&sink, instance, svg.as_deref()),
        Command::Hypercube { command } => cmd_hypercube(&sink, command, cli.seed),
        Command::Render(args) => cmd_render(args),
        Command::Measure { command: MeasureCommand::Dump { instance, samples } } => {
            cmd_measure_dump(&sink, instance, *samples)
        }
        Command::Examples { command } => cmd_examples(command),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("MDOPT_LOG")).format_timestamp(None).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(Failure::from(Error::Invalid("x".into())).code, 2);
        assert_eq!(Failure::from(Error::Unsupported("x".into())).code, 2);
        assert_eq!(Failure::from(Error::Accuracy("x".into())).code, 3);
        assert_eq!(Failure::from(Error::Solver("x".into())).code, 3);
    }

    #[test]
    fn splice_keeps_a_single_document() {
        let s = splice("<svg>\n<rect/>\n</svg>\n", "<svg>\n<line a/>\n<text/>\n</svg>\n");
        assert_eq!(s, "<svg>\n<rect/>\n<line a/>\n</svg>\n");
    }
}
