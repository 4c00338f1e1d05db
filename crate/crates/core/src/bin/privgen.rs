use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

use privgen::harness::{run_command, RunConfig};

/// Privacy accounting and generalization bounds for iterative learning.
///
/// Exit status: 0 success, 2 invalid input or resource limit, 3 violated
/// precondition or diverged run, 4 degenerate budget (delta' >= 1).
/// Unless given, the slack defaults to 1e-9.
#[derive(Parser)]
#[command(name = "privgen", version, args_conflicts_with_subcommands = true)]
struct Cli {
    /// Run a JSON config with keys `command`, `params`, `seed`, `output`.
    #[arg(long)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the artifact here instead of stdout.
    #[arg(long)]
    output: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Compose per-step budgets into one (eps', delta').
    Compose(With<ComposeArgs>),
    /// High-probability generalization bound for a budget and sample size.
    Bound(With<BoundArgs>),
    /// Bounds for algorithms that read k databases.
    Multidb(With<MultidbArgs>),
    /// SGLD privacy accountant.
    Sgld(With<SgldArgs>),
    /// Federated learning privacy accountant.
    Fed(With<FedArgs>),
    /// Exact worst-case composition, KL and Gaussian-tail checks.
    Oracle(With<OracleArgs>),
    /// Synthetic SGLD or federated runs, or a generalization-gap experiment.
    Simulate(With<SimulateArgs>),
    /// Cartesian sweep of another command, as CSV.
    Sweep(With<SweepArgs>),
    /// Composition methods or generalization bounds side by side.
    Compare(With<CompareArgs>),
}

#[derive(Args)]
struct With<T: Args> {
    #[command(flatten)]
    args: T,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
struct ComposeArgs {
    /// Per-step epsilon; a comma-separated list gives one budget per step.
    #[arg(long, value_delimiter = ',', required = true)]
    eps: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    delta: Vec<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    steps: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    slack: Option<f64>,
    /// ours-general, ours-homogeneous, ours-moment, kairouz, dwork-basic or dwork-advanced.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<String>,
}

#[derive(Args, Serialize)]
struct BoundArgs {
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    delta: f64,
    /// Sample size.
    #[arg(long = "n")]
    #[serde(rename = "N")]
    n: u64,
}

#[derive(Args, Serialize)]
struct MultidbArgs {
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    k: u64,
}

#[derive(Args, Serialize)]
struct SgldArgs {
    /// Lipschitz constant of the loss.
    #[arg(long = "lipschitz")]
    #[serde(rename = "L")]
    lipschitz: f64,
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    tau: u64,
    #[arg(long = "n")]
    #[serde(rename = "N")]
    n: u64,
    #[arg(long)]
    #[serde(rename = "T")]
    steps: u64,
    #[arg(long)]
    per_step_delta: f64,
    /// Constant step size (simulation only).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    slack: Option<f64>,
}

#[derive(Args, Serialize)]
struct FedArgs {
    #[arg(long)]
    num_clients: u64,
    #[arg(long)]
    tau: u64,
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    clip_bound: Option<f64>,
    #[arg(long)]
    #[serde(rename = "T")]
    steps: u64,
    #[arg(long)]
    per_step_delta: f64,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    local_lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    slack: Option<f64>,
}

#[derive(Args, Serialize)]
struct OracleArgs {
    /// delta, epsilon, kl or tail.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    query: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eps: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    steps: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eps_prime: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    slack: Option<f64>,
    /// closed-form or moment, for the default eps'.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    target_delta: Option<f64>,
    /// plain or tilde.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    variant: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    shift_norm: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    trials: Option<u64>,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// sgld, fed or gap.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    algorithm: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dim: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_test: Option<u64>,
    #[arg(long = "lipschitz")]
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    lipschitz: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<u64>,
    #[arg(long = "n")]
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    n: Option<u64>,
    #[arg(long)]
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    steps: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    per_step_delta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    slack: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    trials: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    num_clients: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    clip_bound: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    local_lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    client_train: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    client_test: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    /// Command evaluated at every grid point.
    #[arg(long = "command")]
    inner: String,
    /// `name=v1,v2,...`; repeat for more axes.
    #[arg(long = "axis")]
    axes: Vec<String>,
    /// `name=value`; repeat for more parameters.
    #[arg(long)]
    fixed: Vec<String>,
}

#[derive(Args, Serialize)]
struct CompareArgs {
    /// composition or generalization.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    what: Option<String>,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    steps: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    slack: Option<f64>,
    #[arg(long = "n")]
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    n: Option<u64>,
    /// Empirical risk for the data-dependent baselines.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    risk: Option<f64>,
    /// Empirical variance for the data-dependent baselines.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    variance: Option<f64>,
}

/// A number or boolean when the text parses as JSON, a string otherwise.
fn parse_value(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()))
}

fn split_assignment(text: &str) -> Result<(&str, &str), String> {
    text.split_once('=')
        .ok_or_else(|| format!("expected name=value, got '{text}'"))
}

fn sweep_params(args: &SweepArgs) -> Result<Map<String, Value>, String> {
    let mut axes = Map::new();
    for a in &args.axes {
        let (name, values) = split_assignment(a)?;
        axes.insert(name.into(), values.split(',').map(parse_value).collect());
    }
    let mut fixed = Map::new();
    for f in &args.fixed {
        let (name, value) = split_assignment(f)?;
        fixed.insert(name.into(), parse_value(value));
    }
    let mut params = Map::new();
    params.insert("command".into(), Value::from(args.inner.clone()));
    params.insert("axes".into(), Value::Object(axes));
    params.insert("fixed".into(), Value::Object(fixed));
    Ok(params)
}

/// Flag values keyed by parameter name; one-element lists become scalars.
fn to_params<T: Serialize>(args: &T) -> Map<String, Value> {
    let Ok(Value::Object(map)) = serde_json::to_value(args) else {
        return Map::new();
    };
    map.into_iter()
        .map(|(k, v)| match v {
            Value::Array(mut items) if items.len() == 1 => (k, items.remove(0)),
            v => (k, v),
        })
        .collect()
}

fn build(command: Command) -> Result<RunConfig, String> {
    let (name, params, common) = match command {
        Command::Compose(w) => ("compose", to_params(&w.args), w.common),
        Command::Bound(w) => ("bound", to_params(&w.args), w.common),
        Command::Multidb(w) => ("multidb", to_params(&w.args), w.common),
        Command::Sgld(w) => ("sgld", to_params(&w.args), w.common),
        Command::Fed(w) => ("fed", to_params(&w.args), w.common),
        Command::Oracle(w) => ("oracle", to_params(&w.args), w.common),
        Command::Simulate(w) => ("simulate", to_params(&w.args), w.common),
        Command::Sweep(w) => ("sweep", sweep_params(&w.args)?, w.common),
        Command::Compare(w) => ("compare", to_params(&w.args), w.common),
    };
    Ok(RunConfig {
        command: name.into(),
        params,
        seed: common.seed,
        output: common.output,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match (cli.config, cli.command) {
        (Some(path), _) => fs::read_to_string(&path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))
            .and_then(|text| RunConfig::from_json(&text).map_err(|e| e.to_string())),
        (None, Some(command)) => build(command),
        (None, None) => Err("a subcommand or --config is required (see --help)".into()),
    };
    match config {
        Ok(config) => ExitCode::from(run_command(&config) as u8),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
