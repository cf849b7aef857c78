use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::Failure;

/// Significant digits kept in summaries and goldens.
pub const DIGITS: usize = 12;

pub fn round_sig(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        // Also folds -0 into 0.
        return v + 0.0;
    }
    format!("{:.*e}", DIGITS - 1, v).parse().unwrap_or(v)
}

/// `v` rounded to [`DIGITS`] significant digits, printed in shortest form.
pub fn sig(v: f64) -> String {
    let r = round_sig(v);
    if r != 0.0 && (r.abs() < 1e-4 || r.abs() >= 1e15) {
        format!("{r:e}")
    } else {
        format!("{r}")
    }
}

pub fn sig_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| sig(*x)).collect();
    format!("({})", parts.join(", "))
}

pub fn to_value<T: Serialize>(report: &T) -> Value {
    serde_json::to_value(report).expect("reports serialize to JSON")
}

/// Round every number in a JSON tree.
pub fn round_value(v: &Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            serde_json::Number::from_f64(round_sig(n.as_f64().unwrap())).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.iter().map(round_value).collect()),
        Value::Object(o) => Value::Object(o.iter().map(|(k, v)| (k.clone(), round_value(v))).collect()),
        other => other.clone(),
    }
}

pub fn write_json(path: &Path, v: &Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).expect("JSON values print");
    fs::write(path, text + "\n").map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}

/// Where a command's JSON report goes besides the human summary.
#[derive(Clone, Debug, Default)]
pub struct Sink {
    pub json: bool,
    pub out: Option<std::path::PathBuf>,
}

impl Sink {
    /// Print the summary (or the full-precision JSON with `--json`) and save the report if asked.
    pub fn emit(&self, summary: &str, report: &Value) -> Result<(), Failure> {
        let text = if self.json { serde_json::to_string_pretty(report).expect("JSON values print") } else { summary.to_string() };
        // A closed pipe (e.g. `| head`) is not an error.
        let _ = writeln!(std::io::stdout().lock(), "{text}");
        if let Some(p) = &self.out {
            write_json(p, report)?;
        }
        Ok(())
    }
}

pub fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_keeps_twelve_digits() {
        assert_eq!(round_sig(0.1 + 0.2), 0.3);
        assert_eq!(round_sig(1234567.891234567), 1234567.89123);
        assert_eq!(round_sig(-2.0e-20 / 3.0), -6.66666666667e-21);
        assert_eq!(sig(2.0), "2");
        assert_eq!(sig(6.88338275268e-14), "6.88338275268e-14");
        let v = serde_json::json!({"a": [1.0000000000001, 3], "b": "x"});
        assert_eq!(round_value(&v), serde_json::json!({"a": [1.0, 3], "b": "x"}));
    }
}
