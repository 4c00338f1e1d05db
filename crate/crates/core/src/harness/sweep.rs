//! Cartesian parameter sweeps emitted as CSV.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::commands::{fmt_f64, obj};
use super::params::Params;
use super::{execute, Outcome, Report};
use crate::error::{Error, Result};

/// Largest number of grid points in one sweep.
pub const MAX_SWEEP_POINTS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Parameter name to the values it takes.
    pub axes: BTreeMap<String, Vec<Value>>,
    #[serde(default)]
    pub fixed: Map<String, Value>,
}

fn cmp_values(a: &Value, b: &Value) -> Ordering {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.to_string().cmp(&b.to_string()),
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => u.to_string(),
            (_, Some(i)) => i.to_string(),
            _ => fmt_f64(n.as_f64().unwrap_or(f64::NAN)),
        },
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Scalar outputs, with nested objects flattened to dotted names. Lists are
/// left out.
fn flatten(prefix: &str, map: &Map<String, Value>, out: &mut BTreeMap<String, String>) {
    for (k, v) in map {
        let name = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Object(inner) => flatten(&name, inner, out),
            Value::Array(_) => {}
            scalar => {
                out.insert(name, cell(scalar));
            }
        }
    }
}

struct Row {
    inputs: BTreeMap<String, String>,
    status: i32,
    error: String,
    outputs: BTreeMap<String, String>,
}

/// One row per grid point, sorted lexicographically by the axes (in name
/// order, values ascending).
///
/// Columns: every input, then `status` (the exit status of that point) and
/// `error`, then every scalar output, each group in name order.
pub fn run_sweep(spec: &SweepSpec, command: &str, seed: u64) -> Result<String> {
    if command == "sweep" {
        return Err(Error::invalid("sweeps cannot be nested"));
    }
    if let Some(k) = spec.axes.keys().find(|k| spec.fixed.contains_key(*k)) {
        return Err(Error::invalid(format!(
            "'{k}' is both an axis and a fixed parameter"
        )));
    }
    let mut size: u64 = 1;
    for values in spec.axes.values() {
        size = size.saturating_mul(values.len() as u64);
    }
    if size > MAX_SWEEP_POINTS {
        return Err(Error::ResourceLimit(format!(
            "sweep has {size} grid points, above the limit of {MAX_SWEEP_POINTS}"
        )));
    }
    let axes: Vec<(&String, Vec<Value>)> = spec
        .axes
        .iter()
        .map(|(k, v)| {
            let mut v = v.clone();
            v.sort_by(cmp_values);
            (k, v)
        })
        .collect();

    let mut rows: Vec<Row> = (0..size)
        .into_par_iter()
        .map(|index| {
            // last axis varies fastest
            let mut params = spec.fixed.clone();
            let mut rest = index;
            for (name, values) in axes.iter().rev() {
                let n = values.len() as u64;
                params.insert((*name).clone(), values[(rest % n) as usize].clone());
                rest /= n;
            }
            let mut inputs = BTreeMap::new();
            for (k, v) in &params {
                inputs.insert(k.clone(), cell(v));
            }
            match execute(command, params, seed) {
                Ok(outcome) => {
                    for (k, v) in &outcome.report.inputs {
                        inputs.insert(k.clone(), cell(v));
                    }
                    let mut outputs = BTreeMap::new();
                    flatten("", &outcome.report.outputs, &mut outputs);
                    Row {
                        inputs,
                        status: 0,
                        error: String::new(),
                        outputs,
                    }
                }
                Err(e) => Row {
                    inputs,
                    status: e.exit_code(),
                    error: e.to_string(),
                    outputs: BTreeMap::new(),
                },
            }
        })
        .collect();

    let input_cols: BTreeSet<String> = rows
        .iter()
        .flat_map(|r| r.inputs.keys())
        .chain(spec.axes.keys())
        .chain(spec.fixed.keys())
        .cloned()
        .collect();
    // an output echoing an input name is written as `out.<name>`
    for row in &mut rows {
        let clashing: Vec<String> = row
            .outputs
            .keys()
            .filter(|k| input_cols.contains(k.as_str()))
            .cloned()
            .collect();
        for k in clashing {
            let v = row.outputs.remove(&k).unwrap_or_default();
            row.outputs.insert(format!("out.{k}"), v);
        }
    }
    let output_cols: BTreeSet<&String> = rows.iter().flat_map(|r| r.outputs.keys()).collect();

    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::invalid(format!("failed to write sweep: {e}"));
    let header: Vec<&str> = input_cols
        .iter()
        .map(|s| s.as_str())
        .chain(["status", "error"])
        .chain(output_cols.iter().map(|s| s.as_str()))
        .collect();
    w.write_record(&header).map_err(io)?;
    let blank = String::new();
    for row in &rows {
        let mut record: Vec<String> = input_cols
            .iter()
            .map(|k| row.inputs.get(k).unwrap_or(&blank).clone())
            .collect();
        record.push(row.status.to_string());
        record.push(row.error.clone());
        record.extend(
            output_cols
                .iter()
                .map(|k| row.outputs.get(*k).unwrap_or(&blank).clone()),
        );
        w.write_record(&record).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

pub(super) fn sweep_command(mut p: Params, seed: u64) -> Result<Outcome> {
    let command = match p.value("command") {
        Some(Value::String(s)) => s,
        Some(v) => {
            return Err(Error::invalid(format!(
                "sweep command must be a string, got {v}"
            )))
        }
        None => return Err(Error::invalid("missing required parameter 'command'")),
    };
    let spec = SweepSpec {
        axes: match p.value("axes") {
            Some(v) => serde_json::from_value(v)
                .map_err(|e| Error::invalid(format!("axes must map names to lists: {e}")))?,
            None => BTreeMap::new(),
        },
        fixed: match p.value("fixed") {
            Some(Value::Object(m)) => m,
            Some(v) => return Err(Error::invalid(format!("fixed must be an object, got {v}"))),
            None => Map::new(),
        },
    };
    let table = run_sweep(&spec, &command, seed)?;
    let rows = table.lines().count().saturating_sub(1);
    let outputs = obj(json!({ "rows": rows }));
    let report = Report::new("sweep", p, outputs, BTreeMap::new());
    Ok(Outcome::with_csv(report, table))
}
