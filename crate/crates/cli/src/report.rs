//! Report files: number formatting, the JSON report and flat CSV tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use addams_frailty::estimation::StratumSummary;
use addams_frailty::risk::{CurvePoint, RatioEstimate, RcTable};
use addams_frailty::{Estimate, HazardRatio};
use serde_json::{json, Map, Value};

use crate::CliError;

/// `x` rounded to six significant digits, with `-0` folded into `0`.
pub fn round6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return if x == 0.0 { 0.0 } else { x };
    }
    let r: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn literal(x: f64) -> Option<&'static str> {
    if x.is_nan() {
        Some("nan")
    } else if x == f64::INFINITY {
        Some("inf")
    } else if x == f64::NEG_INFINITY {
        Some("-inf")
    } else {
        None
    }
}

/// JSON number at six significant digits or one of the `inf`/`nan` literals.
pub fn num(x: f64) -> Value {
    match literal(x) {
        Some(s) => Value::String(s.into()),
        None => json!(round6(x)),
    }
}

pub fn opt_num(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

/// CSV cell at six significant digits; empty for missing values.
pub fn cell(x: Option<f64>) -> String {
    let Some(x) = x else { return String::new() };
    if let Some(s) = literal(x) {
        return s.into();
    }
    let r = round6(x);
    if r == 0.0 {
        "0".into()
    } else if (1e-4..1e15).contains(&r.abs()) {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

pub fn estimate(e: &Estimate) -> Value {
    json!({
        "estimate": num(e.value),
        "se": opt_num(e.se),
        "lo": opt_num(e.ci.map(|c| c.0)),
        "hi": opt_num(e.ci.map(|c| c.1)),
    })
}

pub fn hazard_ratio(r: HazardRatio) -> Value {
    match r {
        HazardRatio::Finite(v) => num(v),
        other => Value::String(other.to_string()),
    }
}

fn hazard_ratio_cell(r: HazardRatio) -> String {
    match r {
        HazardRatio::Finite(v) => cell(Some(v)),
        other => other.to_string(),
    }
}

pub fn ratio(r: &RatioEstimate) -> Value {
    json!({
        "estimate": hazard_ratio(r.ratio),
        "se": opt_num(r.se),
        "lo": opt_num(r.ci.map(|c| c.0)),
        "hi": opt_num(r.ci.map(|c| c.1)),
    })
}

pub fn frailty_table(rows: &[StratumSummary]) -> Value {
    let entry = |e: &Option<Estimate>| e.as_ref().map_or(Value::Null, estimate);
    Value::Array(
        rows.iter()
            .map(|s| {
                json!({
                    "level": s.level,
                    "branch": s.branch,
                    "alpha": estimate(&s.alpha),
                    "gamma": estimate(&s.gamma),
                    "mu": estimate(&s.mu),
                    "psi": entry(&s.psi),
                    "nu": entry(&s.nu),
                    "pi": entry(&s.pi),
                })
            })
            .collect(),
    )
}

pub fn rc_json(table: &RcTable) -> Value {
    let strata: Vec<Value> = table
        .strata
        .iter()
        .map(|s| {
            let rows: Vec<Value> = s
                .rows
                .iter()
                .map(|r| {
                    json!({
                        "k": r.k,
                        "z": estimate(&r.z),
                        "prob": estimate(&r.prob),
                        "cum_prob": estimate(&r.cum_prob),
                        "hr_within": r.hr_within.as_ref().map_or(Value::Null, ratio),
                    })
                })
                .collect();
            json!({ "level": s.level, "branch": format!("{:?}", s.branch.kind()), "rows": rows })
        })
        .collect();
    let comparisons: Vec<Value> = table
        .comparisons
        .iter()
        .map(|c| {
            let rows: Vec<Value> = c
                .rows
                .iter()
                .map(|r| json!({ "k": r.k, "cum_prob_ratio": estimate(&r.cum_prob_ratio), "hr_across": ratio(&r.hr_across) }))
                .collect();
            json!({ "level": c.level, "reference": c.reference, "rows": rows })
        })
        .collect();
    json!({ "strata": strata, "comparisons": comparisons })
}

/// In-memory CSV table.
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { text: format!("{}\n", header.join(",")) }
    }

    pub fn row(&mut self, cells: &[String]) {
        let escaped: Vec<String> = cells
            .iter()
            .map(|c| if c.contains([',', '"', '\n']) { format!("\"{}\"", c.replace('"', "\"\"")) } else { c.clone() })
            .collect();
        let _ = writeln!(self.text, "{}", escaped.join(","));
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_file(path, &self.text)
    }
}

fn estimate_cells(e: &Estimate) -> [String; 4] {
    [cell(Some(e.value)), cell(e.se), cell(e.ci.map(|c| c.0)), cell(e.ci.map(|c| c.1))]
}

fn ratio_cells(r: &RatioEstimate) -> [String; 4] {
    [hazard_ratio_cell(r.ratio), cell(r.se), cell(r.ci.map(|c| c.0)), cell(r.ci.map(|c| c.1))]
}

pub fn rc_table_csv(table: &RcTable) -> Table {
    let mut t = Table::new(&[
        "level", "k", "z", "z_se", "z_lo", "z_hi", "prob", "prob_se", "prob_lo", "prob_hi", "cum_prob", "cum_prob_se",
        "cum_prob_lo", "cum_prob_hi",
    ]);
    for s in &table.strata {
        for r in &s.rows {
            let mut cells = vec![s.level.clone(), r.k.to_string()];
            cells.extend(estimate_cells(&r.z));
            cells.extend(estimate_cells(&r.prob));
            cells.extend(estimate_cells(&r.cum_prob));
            t.row(&cells);
        }
    }
    t
}

pub fn hr_within_csv(table: &RcTable) -> Table {
    let mut t = Table::new(&["level", "k", "hr_within", "se", "lo", "hi"]);
    for s in &table.strata {
        for r in &s.rows {
            if let Some(hr) = &r.hr_within {
                let mut cells = vec![s.level.clone(), r.k.to_string()];
                cells.extend(ratio_cells(hr));
                t.row(&cells);
            }
        }
    }
    t
}

pub fn hr_across_csv(table: &RcTable) -> Table {
    let mut t = Table::new(&[
        "level", "reference", "k", "cum_prob_ratio", "cum_prob_ratio_se", "cum_prob_ratio_lo", "cum_prob_ratio_hi",
        "hr_across", "se", "lo", "hi",
    ]);
    for c in &table.comparisons {
        for r in &c.rows {
            let mut cells = vec![c.level.clone(), c.reference.clone(), r.k.to_string()];
            cells.extend(estimate_cells(&r.cum_prob_ratio));
            cells.extend(ratio_cells(&r.hr_across));
            t.row(&cells);
        }
    }
    t
}

pub fn curve_csv(points: &[CurvePoint]) -> Table {
    let mut t = Table::new(&["time", "value", "lo", "hi"]);
    for p in points {
        t.row(&[cell(Some(p.time)), cell(Some(p.value)), cell(p.lo), cell(p.hi)]);
    }
    t
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_file(path, &text)
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// File-name-safe form of a level or unit label.
pub fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn object(entries: Vec<(&str, Value)>) -> Value {
    let mut m = Map::new();
    for (k, v) in entries {
        m.insert(k.to_string(), v);
    }
    Value::Object(m)
}
