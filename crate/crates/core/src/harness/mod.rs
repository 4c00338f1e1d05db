//! Configuration, dispatch, sweeps and report emission behind the CLI.
//!
//! Every command maps a flat map of named parameters to a JSON [`Report`]
//! and, for tabular commands, a CSV table. Errors surface only through the
//! exit status (see [`Error::exit_code`]); stderr text is advisory.

mod commands;
mod params;
mod sweep;

use std::collections::BTreeMap;
use std::fs;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use params::Params;

pub use commands::{fmt_f64, DEFAULT_SLACK};
pub use sweep::{run_sweep, SweepSpec, MAX_SWEEP_POINTS};

/// Subcommand names.
pub const COMMANDS: [&str; 9] = [
    "compose", "bound", "multidb", "sgld", "fed", "oracle", "simulate", "sweep", "compare",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(default)]
    pub seed: u64,
    /// Destination of the primary artifact; stdout when absent.
    #[serde(default)]
    pub output: Option<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("malformed config: {e}")))
    }
}

/// Inputs (with defaults applied), outputs, and the formula behind each
/// reported quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    pub inputs: Map<String, Value>,
    pub outputs: Map<String, Value>,
    pub formulas: BTreeMap<String, String>,
}

impl Report {
    fn new(
        command: &str,
        params: Params,
        outputs: Map<String, Value>,
        formulas: BTreeMap<String, String>,
    ) -> Self {
        Report {
            command: command.to_string(),
            inputs: params.into_inputs(),
            outputs,
            formulas,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports hold only finite numbers") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: Report,
    pub csv: Option<String>,
}

impl Outcome {
    fn with_csv(report: Report, csv: String) -> Self {
        Outcome {
            report,
            csv: Some(csv),
        }
    }

    /// The CSV table when there is one, the JSON report otherwise.
    pub fn artifact(&self) -> String {
        self.csv.clone().unwrap_or_else(|| self.report.to_json())
    }
}

impl From<Report> for Outcome {
    fn from(report: Report) -> Self {
        Outcome { report, csv: None }
    }
}

fn allowed(command: &str) -> Result<&'static [&'static str]> {
    const SGLD: &[&str] = &[
        "L",
        "sigma",
        "tau",
        "N",
        "T",
        "per_step_delta",
        "eta",
        "slack",
    ];
    const FED: &[&str] = &[
        "num_clients",
        "tau",
        "sigma",
        "clip_bound",
        "T",
        "per_step_delta",
        "local_lr",
        "slack",
    ];
    Ok(match command {
        "compose" => &["eps", "delta", "steps", "slack", "method"],
        "bound" => &["eps", "delta", "N"],
        "multidb" => &["eps", "delta", "k"],
        "sgld" => SGLD,
        "fed" => FED,
        "oracle" => &[
            "query",
            "eps",
            "delta",
            "steps",
            "eps_prime",
            "slack",
            "mode",
            "target_delta",
            "variant",
            "sigma",
            "shift_norm",
            "threshold",
            "trials",
        ],
        "simulate" => &[
            "algorithm",
            "dim",
            "n_test",
            "L",
            "sigma",
            "tau",
            "N",
            "T",
            "per_step_delta",
            "eta",
            "slack",
            "trials",
            "num_clients",
            "clip_bound",
            "local_lr",
            "client_train",
            "client_test",
        ],
        "sweep" => &["command", "axes", "fixed"],
        "compare" => &[
            "what", "eps", "delta", "steps", "slack", "method", "N", "risk", "variance",
        ],
        other => {
            return Err(Error::invalid(format!(
                "unknown command '{other}' (expected one of: {})",
                COMMANDS.join(", ")
            )))
        }
    })
}

/// Runs one command on its parameters.
pub fn execute(command: &str, params: Map<String, Value>, seed: u64) -> Result<Outcome> {
    let p = Params::new(params, command, allowed(command)?)?;
    match command {
        "compose" => commands::compose(p),
        "bound" => commands::bound(p),
        "multidb" => commands::multidb(p),
        "sgld" => commands::sgld(p),
        "fed" => commands::fed(p),
        "oracle" => commands::oracle(p, seed),
        "simulate" => commands::simulate(p, seed),
        "sweep" => sweep::sweep_command(p, seed),
        "compare" => commands::compare(p),
        _ => unreachable!("checked by allowed()"),
    }
}

/// Runs a configuration, writes its artifact and returns the exit status.
///
/// The artifact goes to `output` when set, otherwise to stdout. When a CSV
/// table is written to a file, the JSON report is also printed to stdout.
pub fn run_command(config: &RunConfig) -> i32 {
    match run_inner(config) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run_inner(config: &RunConfig) -> Result<()> {
    let outcome = execute(&config.command, config.params.clone(), config.seed)?;
    match &config.output {
        Some(path) if path != "-" => {
            fs::write(path, outcome.artifact())
                .map_err(|e| Error::invalid(format!("cannot write {path}: {e}")))?;
            if outcome.csv.is_some() {
                print!("{}", outcome.report.to_json());
            }
        }
        _ => print!("{}", outcome.artifact()),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn run(command: &str, params: Value) -> Result<Outcome> {
        execute(command, params.as_object().unwrap().clone(), 0)
    }

    #[test]
    fn compose_report() {
        let o = run(
            "compose",
            json!({"eps": 0.1, "delta": 1e-8, "steps": 100, "slack": 1e-6, "method": "ours-homogeneous"}),
        )
        .unwrap();
        let eps = o.report.outputs["eps_prime"].as_f64().unwrap();
        assert!((eps - 5.756105519335732).abs() < 1e-12);
        assert_eq!(o.report.inputs["steps"], json!(100));
        assert!(o.report.formulas.contains_key("delta_prime"));
    }

    #[test]
    fn compose_defaults_slack_and_method() {
        let o = run("compose", json!({"eps": 0.1, "delta": 0, "steps": 10})).unwrap();
        assert_eq!(o.report.inputs["slack"], json!(1e-9));
        assert_eq!(o.report.outputs["method"], json!("ours-homogeneous"));
        let o = run("compose", json!({"eps": [0.1, 0.2], "delta": [0, 1e-6]})).unwrap();
        assert_eq!(o.report.outputs["method"], json!("ours-general"));
    }

    #[test]
    fn exit_statuses() {
        let e = run("bound", json!({"eps": 0.1, "delta": 1e-6, "N": 100})).unwrap_err();
        assert_eq!(e.exit_code(), 3);
        assert!(e.to_string().contains("3338"));
        let e = run("compose", json!({"eps": 0.1, "steps": 10, "bogus": 1})).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = run(
            "compose",
            json!({"eps": 1.0, "delta": 0.1, "steps": 20, "method": "dwork-basic"}),
        )
        .unwrap_err();
        assert_eq!(e.exit_code(), 4);
        assert_eq!(
            RunConfig::from_json("{not json").unwrap_err().exit_code(),
            2
        );
        assert!(RunConfig::from_json(r#"{"command":"bound","extra":1}"#).is_err());
        assert_eq!(run("nope", json!({})).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn every_command_runs() {
        let cases = [
            ("bound", json!({"eps": 0.1, "delta": 1e-6, "N": 5000})),
            ("multidb", json!({"eps": 0.5, "delta": 1e-6, "k": 100})),
            (
                "sgld",
                json!({"L": 1, "sigma": 4, "tau": 256, "N": 60000, "T": 100, "per_step_delta": 1e-5}),
            ),
            (
                "fed",
                json!({"num_clients": 1000, "tau": 64, "sigma": 4, "T": 50, "per_step_delta": 1e-5}),
            ),
            ("oracle", json!({"eps": 0.2, "delta": 1e-4, "steps": 8})),
            (
                "oracle",
                json!({"query": "epsilon", "eps": 0.2, "delta": 1e-4, "steps": 8, "target_delta": 1e-3}),
            ),
            ("oracle", json!({"query": "kl", "eps": 1.0})),
            (
                "oracle",
                json!({"query": "tail", "sigma": 4, "shift_norm": 0.01, "threshold": 0.001, "trials": 10000}),
            ),
            (
                "simulate",
                json!({"L": 1, "sigma": 1, "tau": 10, "N": 200, "T": 5, "per_step_delta": 1e-5, "dim": 2, "n_test": 50}),
            ),
            (
                "simulate",
                json!({"algorithm": "fed", "num_clients": 5, "tau": 2, "sigma": 0.1, "T": 3, "per_step_delta": 1e-5, "dim": 2, "client_train": 10, "client_test": 10}),
            ),
            ("compare", json!({"eps": 0.1, "delta": 1e-8, "steps": 20})),
            (
                "compare",
                json!({"what": "generalization", "eps": 0.1, "delta": 1e-6, "N": 5000}),
            ),
            (
                "sweep",
                json!({"command": "compose", "axes": {"steps": [1, 2]}, "fixed": {"eps": 0.1}}),
            ),
        ];
        for (command, params) in cases {
            let o =
                run(command, params.clone()).unwrap_or_else(|e| panic!("{command} {params}: {e}"));
            assert!(!o.artifact().is_empty());
        }
    }

    #[test]
    fn kl_report_matches_bound() {
        let o = run("oracle", json!({"query": "kl", "eps": 1.0})).unwrap();
        let kl = o.report.outputs["kl"].as_f64().unwrap();
        assert!((kl - 0.46211715726000976).abs() < 1e-12);
    }

    #[test]
    fn json_numbers_round_trip() {
        let o = run(
            "compose",
            json!({"eps": 0.1, "delta": 1e-8, "steps": 100, "slack": 1e-6}),
        )
        .unwrap();
        let text = o.report.to_json();
        let back: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["outputs"], Value::Object(o.report.outputs.clone()));
    }
}
