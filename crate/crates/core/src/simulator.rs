//! Desk-scale SGLD and differentially private federated learning on
//! synthetic two-cluster data.
//!
//! The loss is the logistic loss divided by [`LOSS_SCALE`] and clipped to
//! `[0, 1]`; features are clipped to norm [`FEATURE_CLIP`], so the loss is
//! `FEATURE_CLIP / LOSS_SCALE`-Lipschitz in the parameters.

use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::applications::{sgld_accountant, FedConfig, SgldConfig};
use crate::error::{Error, Result};
use crate::numeric::softplus;
use crate::privacy::SlackParameter;
use crate::rng::keyed_rng;

pub const FEATURE_CLIP: f64 = 1.0;
pub const LOSS_SCALE: f64 = 2.0;

/// Streams at or above this offset generate held-out examples.
const TEST_STREAM: u64 = 1 << 40;

/// Lipschitz constant of the bounded loss on clipped features.
pub fn certified_lipschitz() -> f64 {
    FEATURE_CLIP / LOSS_SCALE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub seed: u64,
    /// Norm of each class mean `+-(1, ..., 1) / sqrt(dim)`.
    pub mean_norm: f64,
    pub noise_sd: f64,
    pub feature_clip: f64,
}

/// Row-major features with labels in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
    pub test_features: Vec<f64>,
    pub test_labels: Vec<f64>,
    pub spec: GeneratorSpec,
}

impl SyntheticDataset {
    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.spec.dim;
        &self.features[i * d..(i + 1) * d]
    }

    pub fn train_risk(&self, theta: &[f64]) -> f64 {
        risk(&self.features, &self.labels, theta)
    }

    pub fn test_risk(&self, theta: &[f64]) -> f64 {
        risk(&self.test_features, &self.test_labels, theta)
    }
}

fn draw_example(rng: &mut ChaCha8Rng, spec: &GeneratorSpec, out: &mut Vec<f64>) -> f64 {
    let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let m = y * spec.mean_norm / (spec.dim as f64).sqrt();
    let start = out.len();
    for _ in 0..spec.dim {
        let z: f64 = rng.sample(StandardNormal);
        out.push(m + spec.noise_sd * z);
    }
    clip_norm(&mut out[start..], spec.feature_clip);
    y
}

fn clip_norm(v: &mut [f64], bound: f64) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > bound {
        let s = bound / norm;
        v.iter_mut().for_each(|x| *x *= s);
    }
    norm
}

fn draw_split(spec: &GeneratorSpec, n: usize, offset: u64) -> (Vec<f64>, Vec<f64>) {
    let rows: Vec<(Vec<f64>, f64)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = keyed_rng(spec.seed, offset + i);
            let mut x = Vec::with_capacity(spec.dim);
            let y = draw_example(&mut rng, spec, &mut x);
            (x, y)
        })
        .collect();
    let mut features = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for (x, y) in rows {
        features.extend(x);
        labels.push(y);
    }
    (features, labels)
}

/// Two Gaussian clusters with means `+-(1, ..., 1) / sqrt(dim)` and unit
/// noise, features clipped to [`FEATURE_CLIP`].
pub fn make_synthetic_dataset(
    n_train: usize,
    n_test: usize,
    dim: usize,
    seed: u64,
) -> Result<SyntheticDataset> {
    if n_train == 0 || n_test == 0 || dim == 0 {
        return Err(Error::invalid("n_train, n_test and dim must be positive"));
    }
    if (n_train + n_test).saturating_mul(dim) > 100_000_000 {
        return Err(Error::ResourceLimit(
            "dataset exceeds 10^8 feature values".into(),
        ));
    }
    let spec = GeneratorSpec {
        n_train,
        n_test,
        dim,
        seed,
        mean_norm: 1.0,
        noise_sd: 1.0,
        feature_clip: FEATURE_CLIP,
    };
    let (features, labels) = draw_split(&spec, n_train, 0);
    let (test_features, test_labels) = draw_split(&spec, n_test, TEST_STREAM);
    Ok(SyntheticDataset {
        features,
        labels,
        test_features,
        test_labels,
        spec,
    })
}

/// `num_clients` independent shards; shard `c` uses its own seed drawn from
/// stream `c`.
pub fn make_client_shards(
    num_clients: usize,
    per_client_train: usize,
    per_client_test: usize,
    dim: usize,
    seed: u64,
) -> Result<Vec<SyntheticDataset>> {
    (0..num_clients as u64)
        .map(|c| {
            let shard_seed = keyed_rng(seed, c).random();
            make_synthetic_dataset(per_client_train, per_client_test, dim, shard_seed)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Bounded loss `min(1, ln(1 + e^{-y theta.x}) / LOSS_SCALE)`.
pub fn loss(x: &[f64], y: f64, theta: &[f64]) -> f64 {
    (softplus(-y * dot(theta, x)) / LOSS_SCALE).min(1.0)
}

/// Adds the gradient of [`loss`] times `weight` into `grad`; zero where the
/// loss is clipped.
fn add_loss_grad(x: &[f64], y: f64, theta: &[f64], weight: f64, grad: &mut [f64]) {
    let margin = y * dot(theta, x);
    if softplus(-margin) >= LOSS_SCALE {
        return;
    }
    // d/dtheta softplus(-m) = -y x / (1 + e^m)
    let c = -weight * y / (1.0 + margin.exp()) / LOSS_SCALE;
    grad.iter_mut().zip(x).for_each(|(g, xi)| *g += c * xi);
}

fn risk(features: &[f64], labels: &[f64], theta: &[f64]) -> f64 {
    let d = theta.len();
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| loss(&features[i * d..(i + 1) * d], y, theta))
        .sum();
    total / labels.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainTrace {
    /// `theta_0, ..., theta_T`.
    pub params_per_step: Vec<Vec<f64>>,
    pub train_risk: Vec<f64>,
    pub test_risk: Vec<f64>,
    pub seed: u64,
}

impl TrainTrace {
    pub fn final_params(&self) -> &[f64] {
        self.params_per_step
            .last()
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// CSV with columns `step,train_risk,test_risk`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::invalid(format!("failed to write trace: {e}"));
        w.write_record(["step", "train_risk", "test_risk"])
            .map_err(io)?;
        for (step, (tr, te)) in self.train_risk.iter().zip(&self.test_risk).enumerate() {
            w.write_record([step.to_string(), tr.to_string(), te.to_string()])
                .map_err(io)?;
        }
        w.flush()
            .map_err(|e| Error::invalid(format!("failed to write trace: {e}")))
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn check_finite(theta: &[f64], step: u64) -> Result<()> {
    if theta.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged(format!(
            "non-finite parameters after step {step}"
        )))
    }
}

fn check_sgld(config: &SgldConfig, data: &SyntheticDataset) -> Result<()> {
    config.validate()?;
    if config.n as usize != data.len() {
        return Err(Error::invalid(format!(
            "config N = {} but the dataset has {} training examples",
            config.n,
            data.len()
        )));
    }
    let certified = data.spec.feature_clip / LOSS_SCALE;
    if config.lipschitz < certified {
        return Err(Error::precondition(
            format!(
                "L = {} is below the loss's Lipschitz constant",
                config.lipschitz
            ),
            format!("L >= {certified}"),
        ));
    }
    Ok(())
}

/// SGLD with `theta_0 ~ N(0, I)`, calling `observe` after every step.
fn sgld_steps(
    config: &SgldConfig,
    data: &SyntheticDataset,
    seed: u64,
    mut observe: impl FnMut(&[f64]),
) -> Result<Vec<f64>> {
    let d = data.dim();
    let tau = config.tau as usize;
    let mut rng = keyed_rng(seed, 0);
    let mut theta = gaussian_vec(&mut rng, d, 1.0);
    observe(&theta);
    let mut grad = vec![0.0; d];
    for (t, &eta) in config.step_sizes.iter().enumerate() {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in sample(&mut rng, data.len(), tau) {
            add_loss_grad(
                data.row(i),
                data.labels[i],
                &theta,
                1.0 / tau as f64,
                &mut grad,
            );
        }
        for (th, g) in theta.iter_mut().zip(&grad) {
            let noise: f64 = rng.sample(StandardNormal);
            *th -= eta * (g + config.sigma * noise);
        }
        check_finite(&theta, t as u64 + 1)?;
        observe(&theta);
    }
    Ok(theta)
}

/// `theta_t = theta_{t-1} - eta_t [ (1/tau) sum_B grad l + g_t ]` with
/// `g_t ~ N(0, sigma^2 I)` and no regularizer.
pub fn run_sgld(config: &SgldConfig, data: &SyntheticDataset, seed: u64) -> Result<TrainTrace> {
    check_sgld(config, data)?;
    let mut trace = TrainTrace {
        params_per_step: Vec::with_capacity(config.steps as usize + 1),
        train_risk: Vec::with_capacity(config.steps as usize + 1),
        test_risk: Vec::with_capacity(config.steps as usize + 1),
        seed,
    };
    sgld_steps(config, data, seed, |theta| {
        trace.params_per_step.push(theta.to_vec());
        trace.train_risk.push(data.train_risk(theta));
        trace.test_risk.push(data.test_risk(theta));
    })?;
    Ok(trace)
}

/// One full-batch gradient step on the client's training risk.
fn client_update(shard: &SyntheticDataset, theta: &[f64], lr: f64) -> Vec<f64> {
    let mut grad = vec![0.0; theta.len()];
    let w = 1.0 / shard.len() as f64;
    for i in 0..shard.len() {
        add_loss_grad(shard.row(i), shard.labels[i], theta, w, &mut grad);
    }
    grad.iter().map(|g| -lr * g).collect()
}

fn pooled_risk(shards: &[SyntheticDataset], theta: &[f64], test: bool) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for s in shards {
        let (count, r) = if test {
            (s.test_labels.len(), s.test_risk(theta))
        } else {
            (s.len(), s.train_risk(theta))
        };
        sum += r * count as f64;
        n += count;
    }
    sum / n as f64
}

/// Rounds of `theta += (1/tau) sum_B clip(h_i, L) + b_t`, `b_t ~ N(0, L^2 sigma^2 I)`.
///
/// Risks are pooled over all clients' training and held-out examples.
pub fn run_federated(
    config: &FedConfig,
    shards: &[SyntheticDataset],
    seed: u64,
) -> Result<TrainTrace> {
    config.validate()?;
    if shards.len() as u64 != config.num_clients {
        return Err(Error::invalid(format!(
            "config has {} clients but {} shards were given",
            config.num_clients,
            shards.len()
        )));
    }
    if shards.iter().any(|s| s.is_empty()) {
        return Err(Error::invalid("every client shard needs training data"));
    }
    let d = shards[0].dim();
    if shards.iter().any(|s| s.dim() != d) {
        return Err(Error::invalid(
            "client shards disagree on the feature dimension",
        ));
    }
    let tau = config.tau as usize;
    let l = config.clip_bound;
    let mut rng = keyed_rng(seed, 0);
    let mut theta = gaussian_vec(&mut rng, d, 1.0);
    let mut trace = TrainTrace {
        params_per_step: vec![theta.clone()],
        train_risk: vec![pooled_risk(shards, &theta, false)],
        test_risk: vec![pooled_risk(shards, &theta, true)],
        seed,
    };
    for round in 0..config.steps {
        let mut step = vec![0.0; d];
        for c in sample(&mut rng, shards.len(), tau) {
            let mut h = client_update(&shards[c], &theta, config.local_lr);
            clip_norm(&mut h, l);
            debug_assert!(h.iter().map(|x| x * x).sum::<f64>().sqrt() <= l * (1.0 + 1e-12));
            step.iter_mut()
                .zip(&h)
                .for_each(|(s, x)| *s += x / tau as f64);
        }
        for (th, s) in theta.iter_mut().zip(&step) {
            let noise: f64 = rng.sample(StandardNormal);
            *th += s + l * config.sigma * noise;
        }
        check_finite(&theta, round + 1)?;
        trace.params_per_step.push(theta.clone());
        trace.train_risk.push(pooled_risk(shards, &theta, false));
        trace.test_risk.push(pooled_risk(shards, &theta, true));
    }
    Ok(trace)
}

/// Data shape and accounting slack for [`gap_experiment`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSetup {
    pub dim: usize,
    pub n_test: usize,
    pub slack: f64,
}

impl Default for ExperimentSetup {
    fn default() -> Self {
        ExperimentSetup {
            dim: 5,
            n_test: 5000,
            slack: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapExperimentResult {
    pub trials: u64,
    /// `|test risk - train risk|` of the final iterate, per trial.
    pub gaps: Vec<f64>,
    pub eps_prime: f64,
    pub delta_prime: f64,
    /// `9 eps'`.
    pub bound_gap: f64,
    pub predicted_failure: f64,
    pub observed_violation_rate: f64,
}

/// Fresh data and an SGLD run per trial; counts trials whose final gap
/// reaches `9 eps'`.
pub fn gap_experiment(
    config: &SgldConfig,
    trials: u64,
    seed: u64,
    setup: ExperimentSetup,
) -> Result<GapExperimentResult> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    if trials > 1_000_000 {
        return Err(Error::ResourceLimit(format!("{trials} trials exceed 10^6")));
    }
    let report = sgld_accountant(config, SlackParameter::new(setup.slack)?)?;
    let composed = report.composed.composed;
    let bound = report.generalization.ok_or_else(|| {
        Error::precondition(
            report.generalization_absent_reason.unwrap_or_default(),
            "eps' < 2 and N >= the minimum sample size",
        )
    })?;
    let n = config.n as usize;
    let gaps: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut keys = keyed_rng(seed, trial);
            let data = make_synthetic_dataset(n, setup.n_test, setup.dim, keys.random())?;
            check_sgld(config, &data)?;
            let theta = sgld_steps(config, &data, keys.random(), |_| {})?;
            Ok((data.test_risk(&theta) - data.train_risk(&theta)).abs())
        })
        .collect::<Result<_>>()?;
    let violations = gaps.iter().filter(|&&g| g >= bound.gap).count();
    Ok(GapExperimentResult {
        trials,
        observed_violation_rate: violations as f64 / trials as f64,
        gaps,
        eps_prime: composed.epsilon(),
        delta_prime: composed.delta(),
        bound_gap: bound.gap,
        predicted_failure: bound.failure_prob,
    })
}
