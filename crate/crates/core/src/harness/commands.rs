//! One function per subcommand. Each reads its parameters, calls the
//! library and fills a [`Report`].

use std::collections::BTreeMap;

use rand::Rng;
use serde_json::{json, Map, Value};

use super::params::Params;
use super::{Outcome, Report};
use crate::applications::{
    fed_accountant, sgld_accountant, AccountantReport, FedConfig, SgldConfig,
};
use crate::error::{Error, Result};
use crate::generalization::{baseline_generalization, high_probability_bound, multi_db_bounds};
use crate::oracle::{
    exact_composed_delta, exact_optimal_epsilon, gaussian_loss_tail, kl_oracle, worst_case_pair,
    PairVariant,
};
use crate::privacy::{
    compose_baseline, compose_general, compose_homogeneous, kl_divergence_bound, CompositionResult,
    HomogeneousMode, IterationSpec, Method, PrivacyBudget, SlackParameter,
};
use crate::rng::keyed_rng;
use crate::simulator::{
    gap_experiment, make_client_shards, make_synthetic_dataset, run_federated, run_sgld,
    ExperimentSetup, TrainTrace,
};

/// Slack used when a command is not given one.
pub const DEFAULT_SLACK: f64 = 1e-9;

type Formulas = BTreeMap<String, String>;

fn formulas(entries: &[(&str, &str)]) -> Formulas {
    entries
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn slack(p: &mut Params) -> Result<SlackParameter> {
    SlackParameter::new(p.f64_or("slack", DEFAULT_SLACK)?)
}

fn method_formulas(method: Method, demoted: bool) -> Formulas {
    let (eps, delta) = match method {
        Method::OursGeneral => (
            "min(sum eps; sum KL + sqrt(2 sum eps^2 ln(e + sqrt(sum eps^2)/slack)); sum KL + sqrt(2 ln(1/slack) sum eps^2))",
            "max over boundary assignments of the product form, plus slack",
        ),
        Method::OursHomogeneous => (
            "min of the three epsilon bounds with T identical steps",
            "1 - (1 - e^eps A)^k (1 - A)^(T-k) + 1 - (1 - A)^T + slack, A = delta/(1+e^eps), k = ceil(eps'/eps)",
        ),
        Method::OursMoment => (
            "T eps tanh(eps/2) + sqrt(2 ln(1/slack) T eps^2)",
            "homogeneous product form plus the moment-generating-function slack",
        ),
        Method::Kairouz => (
            "min of the three epsilon bounds with T identical steps",
            "1 - (1 - delta)^T (1 - slack)",
        ),
        Method::DworkBasic if demoted => (
            "T eps (moment composition demoted to basic composition)",
            "T delta + slack",
        ),
        Method::DworkBasic => ("sum eps", "sum delta"),
        Method::DworkAdvanced => (
            "sum eps (e^eps - 1) + sqrt(2 ln(1/slack) sum eps^2)",
            "slack + sum delta",
        ),
    };
    formulas(&[("eps_prime", eps), ("delta_prime", delta)])
}

fn composition_outputs(r: &CompositionResult) -> Map<String, Value> {
    let mut out = Map::new();
    out.insert("method".into(), json!(r.method.as_str()));
    out.insert("eps_prime".into(), json!(r.composed.epsilon()));
    out.insert("delta_prime".into(), json!(r.composed.delta()));
    out.insert("exact_search".into(), json!(r.exact_search));
    out.insert("demoted".into(), json!(r.demoted));
    if let Some(b) = &r.breakdown {
        out.insert("eps1".into(), json!(b.eps1));
        out.insert("eps2".into(), json!(b.eps2));
        out.insert("eps3".into(), json!(b.eps3));
        out.insert("chosen".into(), json!(b.chosen));
    }
    if let Some(k) = r.full_steps {
        out.insert("full_steps".into(), json!(k));
    }
    if let Some(m) = r.moment_slack {
        out.insert("moment_slack".into(), json!(m));
    }
    out
}

fn compose_with(
    method: Method,
    spec: &IterationSpec,
    slack: SlackParameter,
) -> Result<CompositionResult> {
    match method {
        Method::OursGeneral => compose_general(spec, slack),
        Method::OursHomogeneous | Method::OursMoment => {
            let b = spec.common_budget().ok_or_else(|| {
                Error::invalid(format!("{method} needs identical budgets at every step"))
            })?;
            let mode = if method == Method::OursMoment {
                HomogeneousMode::Moment
            } else {
                HomogeneousMode::ClosedForm
            };
            compose_homogeneous(b.epsilon(), b.delta(), spec.len() as u64, slack, mode)
        }
        baseline => compose_baseline(spec, slack, baseline),
    }
}

/// Homogeneous when `eps` and `delta` are scalars (with `steps`), otherwise
/// one budget per step.
fn iteration_spec(p: &mut Params) -> Result<IterationSpec> {
    let eps = p.f64_list("eps")?;
    let delta = if p.has("delta") {
        p.f64_list("delta")?
    } else {
        vec![0.0]
    };
    if eps.len() == 1 && delta.len() == 1 {
        let steps = p.u64("steps")?;
        if steps > 10_000_000 {
            return Err(Error::ResourceLimit(format!(
                "steps = {steps} exceeds 10^7"
            )));
        }
        return IterationSpec::homogeneous(PrivacyBudget::new(eps[0], delta[0])?, steps as usize);
    }
    let n = eps.len().max(delta.len());
    let widen = |v: Vec<f64>| if v.len() == 1 { vec![v[0]; n] } else { v };
    let (eps, delta) = (widen(eps), widen(delta));
    if let Some(steps) = p.opt_u64("steps")? {
        if steps as usize != n {
            return Err(Error::invalid(format!(
                "steps = {steps} but {n} budgets were given"
            )));
        }
    }
    IterationSpec::from_pairs(&eps, &delta)
}

pub fn compose(mut p: Params) -> Result<Outcome> {
    let spec = iteration_spec(&mut p)?;
    let slack = slack(&mut p)?;
    let default = if spec.common_budget().is_some() {
        "ours-homogeneous"
    } else {
        "ours-general"
    };
    let method: Method = p.str_or("method", default)?.parse()?;
    let r = compose_with(method, &spec, slack)?;
    Ok(Report::new(
        "compose",
        p,
        composition_outputs(&r),
        method_formulas(r.method, r.demoted),
    )
    .into())
}

pub fn bound(mut p: Params) -> Result<Outcome> {
    let budget = PrivacyBudget::new(p.f64("eps")?, p.f64("delta")?)?;
    let n = p.u64("N")?;
    let b = high_probability_bound(&budget, n)?;
    let outputs = json!({
        "gap": b.gap,
        "failure_prob": b.failure_prob,
        "min_sample_size": b.min_sample_size,
    });
    let f = formulas(&[
        ("gap", "9 eps"),
        ("failure_prob", "e^-eps delta / eps ln(2/eps)"),
        ("min_sample_size", "ceil(2/eps^2 ln(16 e^eps / delta))"),
    ]);
    Ok(Report::new("bound", p, obj(outputs), f).into())
}

pub fn multidb(mut p: Params) -> Result<Outcome> {
    let budget = PrivacyBudget::new(p.f64("eps")?, p.f64("delta")?)?;
    let b = multi_db_bounds(&budget, p.u64("k")?)?;
    let outputs = json!({
        "k": b.k,
        "on_average_gap": b.on_average_gap,
        "high_prob_threshold": b.high_prob_threshold,
        "high_prob_level": b.high_prob_level,
    });
    let f = formulas(&[
        ("on_average_gap", "e^-eps k delta + 1 - e^-eps"),
        ("high_prob_threshold", "e^-eps k delta + 3 eps"),
        ("high_prob_level", "eps, as stated"),
    ]);
    Ok(Report::new("multidb", p, obj(outputs), f).into())
}

fn accountant_outputs(r: &AccountantReport) -> Map<String, Value> {
    let mut out = composition_outputs(&r.composed);
    out.insert("eps_tilde".into(), json!(r.eps_tilde));
    out.insert("sampling_ratio".into(), json!(r.sampling_ratio));
    out.insert("step_eps".into(), json!(r.step_budget.epsilon()));
    out.insert("step_delta".into(), json!(r.step_budget.delta()));
    out.insert("displayed_slack".into(), json!(r.displayed_slack));
    match &r.generalization {
        Some(g) => {
            out.insert("gap".into(), json!(g.gap));
            out.insert("failure_prob".into(), json!(g.failure_prob));
            out.insert("min_sample_size".into(), json!(g.min_sample_size));
        }
        None => {
            out.insert(
                "generalization_absent_reason".into(),
                json!(r.generalization_absent_reason),
            );
        }
    }
    out
}

fn accountant_formulas(eps_tilde: &str, demoted: bool) -> Formulas {
    let mut f = method_formulas(
        if demoted {
            Method::DworkBasic
        } else {
            Method::OursMoment
        },
        demoted,
    );
    f.insert("eps_tilde".into(), eps_tilde.into());
    f.insert("step_eps".into(), "2 (tau/N) eps_tilde".into());
    f.insert("step_delta".into(), "(tau/N) per_step_delta".into());
    f.insert("gap".into(), "9 eps'".into());
    f
}

fn sgld_config(p: &mut Params) -> Result<SgldConfig> {
    SgldConfig::constant(
        p.f64("L")?,
        p.f64("sigma")?,
        p.u64("tau")?,
        p.u64("N")?,
        p.u64("T")?,
        p.f64_or("eta", 0.01)?,
        p.f64("per_step_delta")?,
    )
}

fn fed_config(p: &mut Params) -> Result<FedConfig> {
    let config = FedConfig {
        num_clients: p.u64("num_clients")?,
        tau: p.u64("tau")?,
        sigma: p.f64("sigma")?,
        clip_bound: p.f64_or("clip_bound", 1.0)?,
        steps: p.u64("T")?,
        per_step_delta: p.f64("per_step_delta")?,
        local_lr: p.f64_or("local_lr", 0.1)?,
    };
    config.validate()?;
    Ok(config)
}

pub fn sgld(mut p: Params) -> Result<Outcome> {
    let config = sgld_config(&mut p)?;
    let r = sgld_accountant(&config, slack(&mut p)?)?;
    let f = accountant_formulas(
        "(2 sqrt(2) L sigma / tau sqrt(ln(1/delta)) + 4 L^2 / tau^2) / (2 sigma^2)",
        r.composed.demoted,
    );
    Ok(Report::new("sgld", p, accountant_outputs(&r), f).into())
}

pub fn fed(mut p: Params) -> Result<Outcome> {
    let config = fed_config(&mut p)?;
    let r = fed_accountant(&config, slack(&mut p)?)?;
    let f = accountant_formulas(
        "(4 sigma / tau sqrt(ln(1/delta)) + 1 / tau^2) / (2 sigma^2)",
        r.composed.demoted,
    );
    Ok(Report::new("fed", p, accountant_outputs(&r), f).into())
}

pub fn oracle(mut p: Params, seed: u64) -> Result<Outcome> {
    let query = p.str_or("query", "delta")?;
    let (outputs, f) = match query.as_str() {
        "delta" => {
            let (eps, delta, steps) = (p.f64("eps")?, p.f64_or("delta", 0.0)?, p.u64("steps")?);
            let mut out = Map::new();
            let eps_prime = match p.opt_f64("eps_prime")? {
                Some(e) => e,
                None => {
                    let mode: HomogeneousMode = p.str_or("mode", "closed-form")?.parse()?;
                    let ours = compose_homogeneous(eps, delta, steps, slack(&mut p)?, mode)?;
                    out.insert("ours_delta".into(), json!(ours.composed.delta()));
                    ours.composed.epsilon()
                }
            };
            let exact = exact_composed_delta(eps, delta, steps, eps_prime)?;
            out.insert("eps_prime".into(), json!(eps_prime));
            out.insert("exact_delta".into(), json!(exact));
            if let Some(ours) = out.get("ours_delta").and_then(Value::as_f64) {
                out.insert("dominated".into(), json!(exact <= ours));
            }
            let f = formulas(&[(
                "exact_delta",
                "hockey-stick divergence of the T-fold worst-case pair, by type classes",
            )]);
            (out, f)
        }
        "epsilon" => {
            let (eps, delta, steps) = (p.f64("eps")?, p.f64_or("delta", 0.0)?, p.u64("steps")?);
            let r = exact_optimal_epsilon(eps, delta, steps, p.f64("target_delta")?)?;
            let out = json!({"eps_prime": r.epsilon, "saturated": r.saturated});
            let f = formulas(&[(
                "eps_prime",
                "bisection of the exact hockey-stick divergence",
            )]);
            (obj(out), f)
        }
        "kl" => {
            let eps = p.f64("eps")?;
            let variant = match p.str_or("variant", "plain")?.as_str() {
                "plain" => PairVariant::Plain,
                "tilde" => PairVariant::Tilde,
                other => return Err(Error::invalid(format!("unknown pair variant '{other}'"))),
            };
            let pair = worst_case_pair(eps, p.f64_or("delta", 0.0)?, variant)?;
            let out = json!({
                "kl": kl_oracle(&pair)?,
                "kl_bound": kl_divergence_bound(eps)?,
                "prior_bound": 0.5 * eps * eps.exp_m1(),
            });
            let f = formulas(&[
                ("kl", "sum p0 ln(p0/p1) over the worst-case pair"),
                ("kl_bound", "eps tanh(eps/2)"),
                ("prior_bound", "eps (e^eps - 1) / 2"),
            ]);
            (obj(out), f)
        }
        "tail" => {
            let tail = gaussian_loss_tail(
                p.f64("sigma")?,
                p.f64("shift_norm")?,
                p.f64("threshold")?,
                p.u64_or("trials", 100_000)?,
                seed,
            )?;
            let f = formulas(&[(
                "tail",
                "Monte-Carlo P[(2 theta.v + |v|^2) / (2 sigma^2) > threshold]",
            )]);
            (obj(json!({ "tail": tail })), f)
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown oracle query '{other}' (expected delta, epsilon, kl or tail)"
            )))
        }
    };
    Ok(Report::new("oracle", p, outputs, f).into())
}

fn trace_outputs(t: &TrainTrace) -> Map<String, Value> {
    let last = t.train_risk.len() - 1;
    obj(json!({
        "steps": last,
        "initial_train_risk": t.train_risk[0],
        "final_train_risk": t.train_risk[last],
        "final_test_risk": t.test_risk[last],
        "final_gap": (t.test_risk[last] - t.train_risk[last]).abs(),
    }))
}

fn trace_csv(t: &TrainTrace) -> Result<String> {
    let mut buf = Vec::new();
    t.write_csv(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::invalid(e.to_string()))
}

pub fn simulate(mut p: Params, seed: u64) -> Result<Outcome> {
    let algorithm = p.str_or("algorithm", "sgld")?;
    let dim = p.u64_or("dim", 5)? as usize;
    let n_test = p.u64_or("n_test", 1000)? as usize;
    let mut keys = keyed_rng(seed, 0);
    let (data_seed, run_seed): (u64, u64) = (keys.random(), keys.random());
    let risk_formula = "mean of min(1, ln(1 + e^{-y theta.x}) / 2)";
    match algorithm.as_str() {
        "sgld" => {
            let config = sgld_config(&mut p)?;
            let data = make_synthetic_dataset(config.n as usize, n_test, dim, data_seed)?;
            let trace = run_sgld(&config, &data, run_seed)?;
            let csv = trace_csv(&trace)?;
            let f = formulas(&[("final_train_risk", risk_formula)]);
            Ok(Outcome::with_csv(
                Report::new("simulate", p, trace_outputs(&trace), f),
                csv,
            ))
        }
        "fed" => {
            let config = fed_config(&mut p)?;
            let per_train = p.u64_or("client_train", 50)? as usize;
            let per_test = p.u64_or("client_test", 50)? as usize;
            let shards = make_client_shards(
                config.num_clients as usize,
                per_train,
                per_test,
                dim,
                data_seed,
            )?;
            let trace = run_federated(&config, &shards, run_seed)?;
            let csv = trace_csv(&trace)?;
            let f = formulas(&[("final_train_risk", risk_formula)]);
            Ok(Outcome::with_csv(
                Report::new("simulate", p, trace_outputs(&trace), f),
                csv,
            ))
        }
        "gap" => {
            let config = sgld_config(&mut p)?;
            let setup = ExperimentSetup {
                dim,
                n_test,
                slack: p.f64_or("slack", DEFAULT_SLACK)?,
            };
            let r = gap_experiment(&config, p.u64_or("trials", 100)?, seed, setup)?;
            let max_gap = r.gaps.iter().copied().fold(0.0, f64::max);
            let out = json!({
                "trials": r.trials,
                "eps_prime": r.eps_prime,
                "delta_prime": r.delta_prime,
                "bound_gap": r.bound_gap,
                "predicted_failure": r.predicted_failure,
                "observed_violation_rate": r.observed_violation_rate,
                "max_gap": max_gap,
                "gaps": r.gaps,
            });
            let f = formulas(&[
                ("bound_gap", "9 eps'"),
                ("predicted_failure", "e^-eps' delta' / eps' ln(2/eps')"),
                (
                    "observed_violation_rate",
                    "fraction of trials with |test - train| >= 9 eps'",
                ),
            ]);
            Ok(Report::new("simulate", p, obj(out), f).into())
        }
        other => Err(Error::invalid(format!(
            "unknown algorithm '{other}' (expected sgld, fed or gap)"
        ))),
    }
}

pub fn compare(mut p: Params) -> Result<Outcome> {
    let what = p.str_or("what", "composition")?;
    let mut csv = csv::Writer::from_writer(Vec::new());
    let mut rows = Vec::new();
    let io = |e: csv::Error| Error::invalid(format!("failed to write table: {e}"));
    match what.as_str() {
        "composition" => {
            let spec = iteration_spec(&mut p)?;
            let slack = slack(&mut p)?;
            csv.write_record(["method", "eps_prime", "delta_prime", "error"])
                .map_err(io)?;
            for method in Method::ALL {
                let row = match compose_with(method, &spec, slack) {
                    Ok(r) => {
                        let (e, d) = (r.composed.epsilon(), r.composed.delta());
                        csv.write_record([method.as_str(), &fmt_f64(e), &fmt_f64(d), ""])
                            .map_err(io)?;
                        json!({"method": method.as_str(), "eps_prime": e, "delta_prime": d})
                    }
                    Err(err) => {
                        let msg = err.to_string();
                        csv.write_record([method.as_str(), "", "", &msg])
                            .map_err(io)?;
                        json!({"method": method.as_str(), "error": msg})
                    }
                };
                rows.push(row);
            }
        }
        "generalization" => {
            let budget = PrivacyBudget::new(p.f64("eps")?, p.f64("delta")?)?;
            let n = p.u64("N")?;
            let bounds = baseline_generalization(
                &budget,
                n,
                p.f64_or("risk", 0.0)?,
                p.f64_or("variance", 0.0)?,
            )?;
            csv.write_record([
                "method",
                "gap",
                "failure_prob",
                "vacuous",
                "dominated_by_ours",
            ])
            .map_err(io)?;
            let ours = bounds[0];
            for b in &bounds {
                let dominated = b.method != ours.method && ours.dominates(b);
                csv.write_record([
                    b.method.as_str(),
                    &fmt_f64(b.gap),
                    &fmt_f64(b.failure_prob),
                    &b.vacuous.to_string(),
                    &dominated.to_string(),
                ])
                .map_err(io)?;
                rows.push(json!({
                    "method": b.method.as_str(),
                    "gap": b.gap,
                    "failure_prob": b.failure_prob,
                    "vacuous": b.vacuous,
                    "dominated_by_ours": dominated,
                }));
            }
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown comparison '{other}' (expected composition or generalization)"
            )))
        }
    }
    let bytes = csv
        .into_inner()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let table = String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))?;
    let outputs = obj(json!({ "rows": rows }));
    Ok(Outcome::with_csv(
        Report::new("compare", p, outputs, Formulas::new()),
        table,
    ))
}

pub(super) fn obj(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("outputs are always objects"),
    }
}

/// Shortest decimal that reads back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() && x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:?}")
    }
}
