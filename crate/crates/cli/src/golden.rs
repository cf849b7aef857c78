//! Golden-example runner: replays every instance file and diffs its report
//! against the committed golden.

use std::fs;
use std::path::{Path, PathBuf};

use mdopt_core::instance::{run_check, run_partition, run_solve, InstanceSpec};
use serde_json::{json, Map, Value};

use crate::report::{round_value, to_value, write_json};
use crate::Failure;

/// Keys left out of goldens: solver internals and bulky witnesses.
const OMITTED: [&str; 2] = ["iterations", "witness"];

/// Tolerances for numbers when diffing against goldens; the absolute one
/// absorbs round-off sized residuals.
const REL_TOL: f64 = 1e-6;
const ABS_TOL: f64 = 1e-10;

pub fn instance_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let rd = fs::read_dir(dir).map_err(|e| Failure::input(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> =
        rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "json")).collect();
    files.sort();
    Ok(files)
}

pub fn load_instance(path: &Path) -> Result<InstanceSpec, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    let mut inst = InstanceSpec::from_json(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    if inst.name.is_empty() {
        inst.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    Ok(inst)
}

fn strip(v: &Value) -> Value {
    match v {
        Value::Object(o) => {
            Value::Object(o.iter().filter(|(k, _)| !OMITTED.contains(&k.as_str())).map(|(k, v)| (k.clone(), strip(v))).collect())
        }
        Value::Array(a) => Value::Array(a.iter().map(strip).collect()),
        other => other.clone(),
    }
}

/// Every pipeline that applies to the instance, rounded for diffing.
pub fn instance_report(inst: &InstanceSpec) -> Result<Value, Failure> {
    let mut out = Map::new();
    out.insert("name".into(), json!(inst.name));
    let solve = run_solve(inst)?;
    out.insert("solve".into(), to_value(&solve.report));
    if inst.menu.is_some() || inst.bundle.is_some() {
        out.insert("check".into(), to_value(&run_check(inst)?));
    }
    if inst.exclusion.is_some() {
        out.insert("partition".into(), to_value(&run_partition(inst)?.report));
    }
    Ok(round_value(&strip(&Value::Object(out))))
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= ABS_TOL + REL_TOL * a.abs().max(b.abs())
}

/// Paths at which `got` differs from `want`.
pub fn diff(want: &Value, got: &Value, path: &str, out: &mut Vec<String>) {
    match (want, got) {
        (Value::Number(a), Value::Number(b)) => {
            let (a, b) = (a.as_f64().unwrap_or(f64::NAN), b.as_f64().unwrap_or(f64::NAN));
            if !close(a, b) {
                out.push(format!("{path}: {a} -> {b}"));
            }
        }
        (Value::Object(a), Value::Object(b)) => {
            for (k, va) in a {
                match b.get(k) {
                    Some(vb) => diff(va, vb, &format!("{path}.{k}"), out),
                    None => out.push(format!("{path}.{k}: missing")),
                }
            }
            for k in b.keys().filter(|k| !a.contains_key(*k)) {
                out.push(format!("{path}.{k}: unexpected"));
            }
        }
        (Value::Array(a), Value::Array(b)) if a.len() == b.len() => {
            for (i, (va, vb)) in a.iter().zip(b).enumerate() {
                diff(va, vb, &format!("{path}[{i}]"), out);
            }
        }
        (Value::Array(a), Value::Array(b)) => out.push(format!("{path}: length {} -> {}", a.len(), b.len())),
        (a, b) if a == b => {}
        (a, b) => out.push(format!("{path}: {a} -> {b}")),
    }
}

pub struct RunSummary {
    pub matched: usize,
    pub failed: Vec<String>,
}

/// Replay all instances in `dir`; with `update`, rewrite the goldens instead of diffing.
pub fn run_examples(dir: &Path, goldens: &Path, update: bool, only: Option<&str>) -> Result<RunSummary, Failure> {
    let mut summary = RunSummary { matched: 0, failed: Vec::new() };
    if update {
        fs::create_dir_all(goldens).map_err(|e| Failure::input(format!("cannot create {}: {e}", goldens.display())))?;
    }
    for path in instance_files(dir)? {
        let inst = load_instance(&path)?;
        if only.is_some_and(|o| o != inst.name) {
            continue;
        }
        log::info!("replaying {}", inst.name);
        let got = instance_report(&inst)?;
        let gpath = goldens.join(format!("{}.json", inst.name));
        if update {
            write_json(&gpath, &got)?;
            println!("UPDATED {}", inst.name);
            summary.matched += 1;
            continue;
        }
        let want: Option<Value> = fs::read_to_string(&gpath).ok().and_then(|t| serde_json::from_str(&t).ok());
        let Some(want) = want else {
            println!("MISSING {} (no golden at {})", inst.name, gpath.display());
            summary.failed.push(inst.name);
            continue;
        };
        let mut diffs = Vec::new();
        diff(&want, &got, "", &mut diffs);
        if diffs.is_empty() {
            println!("MATCH {}", inst.name);
            summary.matched += 1;
        } else {
            println!("DIFF {} ({} fields)", inst.name, diffs.len());
            for d in diffs.iter().take(10) {
                println!("  {d}");
            }
            summary.failed.push(inst.name);
        }
    }
    Ok(summary)
}
