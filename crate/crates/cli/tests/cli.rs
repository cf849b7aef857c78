use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn instance(name: &str) -> String {
    root().join("instances").join(format!("{name}.json")).to_string_lossy().into_owned()
}

fn scratch(name: &str) -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    fs::create_dir_all(&d).unwrap();
    d
}

fn mdopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdopt")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("JSON report on stdout")
}

#[test]
fn solve_mv_certifies() {
    let o = mdopt(&["solve", &instance("mv"), "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&o);
    assert_eq!(r["pass"], true);
    let (p, d) = (r["primal_value"].as_f64().unwrap(), r["dual_value"].as_f64().unwrap());
    assert!((d - p).abs() < 1e-9);
    let rev = r["menu_revenue"].as_f64().unwrap();
    assert!((p - rev).abs() / rev < 0.02);
}

#[test]
fn solve_wide_box_recovers_both_items() {
    let r = json(&mdopt(&["solve", &instance("uniform-4-16-4-7"), "--json"]));
    let items: Vec<(Vec<f64>, f64)> = r["recovered_items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|it| {
            let a = it["allocation"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
            (a, it["price"].as_f64().unwrap())
        })
        .collect();
    assert!(items.contains(&(vec![1.0, 1.0], 12.0)), "{items:?}");
    assert!(items.contains(&(vec![0.5, 1.0], 8.0)), "{items:?}");
}

#[test]
fn malformed_instances_are_input_errors() {
    let d = scratch("malformed");
    let bad = d.join("bad.json");
    fs::write(&bad, "{\"distribution\": ").unwrap();
    let o = mdopt(&["solve", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema"));
    let o = mdopt(&["check", d.join("missing.json").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let o = mdopt(&["solve"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn check_verdicts_map_to_exit_codes() {
    assert_eq!(code(&mdopt(&["check", &instance("mv")])), 0);
    assert_eq!(code(&mdopt(&["check", &instance("hypercube-2-1")])), 0);
    let o = mdopt(&["check", &instance("hypercube-3-0")]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("rules out grand bundling: true"), "{}", stdout(&o));
}

#[test]
fn partition_reports_and_saves_report() {
    let d = scratch("partition");
    let out = d.join("beta.json");
    let o = mdopt(&["partition", &instance("beta-1-2"), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let r: Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    let p = r["partition"]["price"].as_f64().unwrap();
    assert!((p - 0.5535).abs() < 1e-3);
    assert_eq!(mdopt(&["partition", &instance("mv")]).status.code(), Some(0));
    // Single item: no partition.
    assert_eq!(code(&mdopt(&["partition", &instance("single-uniform")])), 2);
}

#[test]
fn render_is_deterministic() {
    let d = scratch("render");
    let (a, b) = (d.join("a.svg"), d.join("b.svg"));
    for f in [&a, &b] {
        let o = mdopt(&["render", &instance("beta-1-2"), "--svg", f.to_str().unwrap(), "--transport"]);
        assert_eq!(code(&o), 0);
    }
    let (sa, sb) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(sa, sb);
    let text = String::from_utf8(sa).unwrap();
    assert!(text.starts_with("<svg") && text.contains(r#"viewBox="0 0 800 800""#));
    assert!(text.contains("<polyline") && text.contains("<line"));
    let menu = d.join("menu.svg");
    assert_eq!(code(&mdopt(&["render", &instance("mv"), "--what", "menu", "--svg", menu.to_str().unwrap()])), 0);
    assert!(fs::read_to_string(menu).unwrap().contains("at 0.667"));
    let o = mdopt(&["render", &instance("hypercube-3-0"), "--svg", d.join("c.svg").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn saved_certificates_verify() {
    let d = scratch("verify");
    let (u, c) = (d.join("u.json"), d.join("c.json"));
    let o = mdopt(&[
        "solve",
        &instance("single-uniform"),
        "--save-utility",
        u.to_str().unwrap(),
        "--save-certificate",
        c.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let args = ["--utility", u.to_str().unwrap(), "--certificate", c.to_str().unwrap()];
    let o = mdopt(&[&["verify", &instance("single-uniform")][..], &args].concat());
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("PASS"));
    // A certificate checked against another instance's grid is rejected.
    let o = mdopt(&[&["verify", &instance("mv")][..], &args].concat());
    assert_eq!(code(&o), 2);
}

#[test]
fn dominance_command() {
    let d = scratch("dominance");
    let grid = r#"{"box": {"lows": [0, 0], "highs": [1, 1]}, "nodes_per_axis": [2, 2]}"#;
    let (a, b) = (d.join("a.json"), d.join("b.json"));
    fs::write(&a, format!(r#"{{"grid": {grid}, "mass": [0, 0, 0, 1]}}"#)).unwrap();
    fs::write(&b, format!(r#"{{"grid": {grid}, "mass": [0, 1, 0, 0]}}"#)).unwrap();
    let (a, b) = (a.to_str().unwrap(), b.to_str().unwrap());
    assert_eq!(code(&mdopt(&["dominance", a, b, "--exhaustive"])), 0);
    assert_eq!(code(&mdopt(&["dominance", b, a, "--exhaustive"])), 1);
    assert_eq!(code(&mdopt(&["dominance", a, b, "--order", "convex", "--v", "1,1"])), 0);
    assert_eq!(code(&mdopt(&["dominance", b, a, "--order", "convex", "--v", "1,1"])), 1);
}

#[test]
fn hypercube_commands() {
    let r = json(&mdopt(&["hypercube", "bound", "--n", "3", "--c", "0", "--json"]));
    assert_eq!(r["notbundling"], true);
    let r = json(&mdopt(&["hypercube", "bound", "--n", "2", "--c", "0", "--json"]));
    assert_eq!(r["notbundling"], false);
    let r = json(&mdopt(&["hypercube", "phi", "--n", "2", "--rho", "2", "--x", "1,0.25", "--json"]));
    let y = r["y"].as_array().unwrap();
    assert!((y[0].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(code(&mdopt(&["hypercube", "phi", "--n", "3", "--rho", "2", "--x", "1,0.5,0.9"])), 2);
    let args = ["hypercube", "check", "--n", "2", "--c", "1", "--rho", "2", "--samples", "20000", "--json"];
    let o = mdopt(&args);
    assert_eq!(code(&o), 0);
    let ratio = json(&o)["matching"]["area_ratio"].as_f64().unwrap();
    assert!((ratio / 2.0 - 1.0).abs() < 0.02);
    // Same seed, same Monte Carlo.
    assert_eq!(json(&mdopt(&args))["matching"], json(&o)["matching"]);
    assert_eq!(code(&mdopt(&["hypercube", "check", "--n", "3", "--c", "0"])), 1);
}

#[test]
fn measure_dump_lists_the_atom() {
    let r = json(&mdopt(&["measure", "dump", &instance("mv"), "--samples", "3", "--json"]));
    let atoms = r["atoms"].as_array().unwrap();
    assert_eq!(atoms.len(), 1);
    assert_eq!(atoms[0]["value"].as_f64(), Some(1.0));
}

#[test]
fn goldens_replay() {
    let dir = root().join("instances");
    let goldens = root().join("goldens");
    let o = mdopt(&["examples", "run", "--dir", dir.to_str().unwrap(), "--goldens", goldens.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert_eq!(stdout(&o).matches("MATCH").count(), 9);
}

#[test]
fn catalog_files_match_committed_instances() {
    let d = scratch("catalog");
    assert_eq!(code(&mdopt(&["examples", "write", "--dir", d.to_str().unwrap()])), 0);
    for e in fs::read_dir(&d).unwrap() {
        let p = e.unwrap().path();
        let committed = root().join("instances").join(p.file_name().unwrap());
        assert_eq!(fs::read_to_string(&p).unwrap(), fs::read_to_string(committed).unwrap(), "{}", p.display());
    }
}
