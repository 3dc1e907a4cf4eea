//! Result export: schema-versioned JSON and CSV with floats printed to 17
//! significant digits (`%.17g`), so every value round-trips exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::dynamic::DynEpsilonReport;
use crate::error::{Error, Result};
use crate::finite_n::EpsilonReport;

pub const SCHEMA: &str = "teamfield/v1";
pub const EPSILON_CSV_HEADER: [&str; 6] = ["N1", "N2", "eps1", "eps2", "method", "ci"];

/// `%.17g` formatting of a finite float.
pub fn fmt_float(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..17).contains(&exp) {
        format!("{}e{exp}", strip_zeros(mantissa))
    } else {
        let digits = (16 - exp) as usize;
        strip_zeros(&format!("{x:.digits$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                match n.as_f64() {
                    Some(x) if x.is_finite() => out.push_str(&fmt_float(x)),
                    _ => out.push_str("null"),
                }
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        Value::Array(items) => {
            if items.iter().all(|i| !i.is_array() && !i.is_object()) {
                out.push('[');
                for (k, item) in items.iter().enumerate() {
                    if k > 0 {
                        out.push_str(", ");
                    }
                    write_value(out, item, indent);
                }
                out.push(']');
                return;
            }
            out.push_str("[\n");
            for (k, item) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_value(out, item, indent + 1);
                out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push_str("{\n");
            for (k, (key, item)) in map.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&serde_json::to_string(key).expect("key serializes"));
                out.push_str(": ");
                write_value(out, item, indent + 1);
                out.push_str(if k + 1 < map.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

/// Pretty JSON with `%.17g` floats.
pub fn render_json(v: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, v, 0);
    out.push('\n');
    out
}

/// JSON document tagged with the schema version and a result kind. Objects
/// are flattened into the document; anything else goes under `"result"`.
pub fn json_document(kind: &str, result: &impl Serialize) -> Result<String> {
    let value = serde_json::to_value(result)?;
    let mut doc = serde_json::Map::new();
    doc.insert("schema".into(), Value::String(SCHEMA.into()));
    doc.insert("kind".into(), Value::String(kind.into()));
    match value {
        Value::Object(map) => doc.extend(map),
        other => {
            doc.insert("result".into(), other);
        }
    }
    Ok(render_json(&Value::Object(doc)))
}

/// One row of the epsilon CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonRow {
    pub sizes: [usize; 2],
    pub eps: [f64; 2],
    pub method: &'static str,
    pub ci: f64,
}

impl From<&EpsilonReport> for EpsilonRow {
    fn from(r: &EpsilonReport) -> Self {
        EpsilonRow {
            sizes: r.team_sizes,
            eps: r.eps,
            method: r.method.as_str(),
            ci: r.ci_halfwidth,
        }
    }
}

impl From<&DynEpsilonReport> for EpsilonRow {
    fn from(r: &DynEpsilonReport) -> Self {
        EpsilonRow {
            sizes: r.team_sizes,
            eps: r.eps,
            method: r.method.as_str(),
            ci: r.ci_halfwidth,
        }
    }
}

/// CSV with columns `N1,N2,eps1,eps2,method,ci`; header only when empty.
pub fn epsilon_csv(rows: &[EpsilonRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EPSILON_CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.sizes[0].to_string(),
            r.sizes[1].to_string(),
            fmt_float(r.eps[0]),
            fmt_float(r.eps[1]),
            r.method.to_string(),
            fmt_float(r.ci),
        ])?;
    }
    finish_csv(w)
}

/// CSV of per-team cost estimates: `team,estimate,ci_halfwidth,reps`.
pub fn cost_csv(rows: &[(usize, f64, f64, usize)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["team", "estimate", "ci_halfwidth", "reps"])?;
    for (team, est, ci, reps) in rows {
        w.write_record([
            team.to_string(),
            fmt_float(*est),
            fmt_float(*ci),
            reps.to_string(),
        ])?;
    }
    finish_csv(w)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Csv(csv::Error::from(e.into_error())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `text` to `path`, or to stdout when no path is given.
pub fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::io(Path::new("<stdout>"), e))
        }
    }
}
