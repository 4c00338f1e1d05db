//! End-to-end accountants for SGLD and differentially private federated
//! learning.
//!
//! Both share one pipeline: a per-step `eps~` from the Gaussian noise scale,
//! subsampling to `(2 (tau/N) eps~, (tau/N) delta)`, moment-mode homogeneous
//! composition over `T` steps, and the high-probability generalization bound
//! on the composed budget when its preconditions hold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generalization::{high_probability_bound, GeneralizationBound};
use crate::privacy::{
    compose_homogeneous, moment_log_slack, CompositionResult, HomogeneousMode, PrivacyBudget,
    SlackParameter,
};

fn default_local_lr() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgldConfig {
    /// Lipschitz constant of the loss.
    #[serde(rename = "L")]
    pub lipschitz: f64,
    pub sigma: f64,
    pub tau: u64,
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "T")]
    pub steps: u64,
    /// `eta_t`; used by the simulator only.
    pub step_sizes: Vec<f64>,
    pub per_step_delta: f64,
}

impl SgldConfig {
    /// Configuration with a constant step size.
    pub fn constant(
        lipschitz: f64,
        sigma: f64,
        tau: u64,
        n: u64,
        steps: u64,
        eta: f64,
        per_step_delta: f64,
    ) -> Result<Self> {
        if steps > 10_000_000 {
            return Err(Error::ResourceLimit(format!("T = {steps} exceeds 10^7")));
        }
        let config = SgldConfig {
            lipschitz,
            sigma,
            tau,
            n,
            steps,
            step_sizes: vec![eta; steps as usize],
            per_step_delta,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        positive("L", self.lipschitz)?;
        positive("sigma", self.sigma)?;
        check_common(self.tau, self.n, self.steps, self.per_step_delta)?;
        if self.step_sizes.len() as u64 != self.steps {
            return Err(Error::invalid(format!(
                "expected {} step sizes, got {}",
                self.steps,
                self.step_sizes.len()
            )));
        }
        if let Some(eta) = self
            .step_sizes
            .iter()
            .find(|e| !(**e > 0.0 && e.is_finite()))
        {
            return Err(Error::invalid(format!(
                "step sizes must be positive, got {eta}"
            )));
        }
        Ok(())
    }

    /// `(2 sqrt(2) L sigma / tau sqrt(ln(1/delta)) + 4 L^2 / tau^2) / (2 sigma^2)`.
    pub fn eps_tilde(&self) -> f64 {
        let (l, s, t) = (self.lipschitz, self.sigma, self.tau as f64);
        let root = (1.0 / self.per_step_delta).ln().sqrt();
        (2.0 * 2f64.sqrt() * l * s / t * root + 4.0 * l * l / (t * t)) / (2.0 * s * s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedConfig {
    pub num_clients: u64,
    pub tau: u64,
    pub sigma: f64,
    /// Clipping bound `L` on each client update.
    pub clip_bound: f64,
    #[serde(rename = "T")]
    pub steps: u64,
    pub per_step_delta: f64,
    /// Learning rate of the local update; used by the simulator only.
    #[serde(default = "default_local_lr")]
    pub local_lr: f64,
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        positive("sigma", self.sigma)?;
        positive("clip_bound", self.clip_bound)?;
        positive("local_lr", self.local_lr)?;
        check_common(self.tau, self.num_clients, self.steps, self.per_step_delta)
    }

    /// `(4 sigma / tau sqrt(ln(1/delta)) + 1 / tau^2) / (2 sigma^2)`.
    pub fn eps_tilde(&self) -> f64 {
        let (s, t) = (self.sigma, self.tau as f64);
        let root = (1.0 / self.per_step_delta).ln().sqrt();
        (4.0 * s / t * root + 1.0 / (t * t)) / (2.0 * s * s)
    }
}

fn positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{name} must be positive and finite, got {value}"
        )))
    }
}

fn check_common(tau: u64, n: u64, steps: u64, delta: f64) -> Result<()> {
    if tau == 0 || steps == 0 {
        return Err(Error::invalid("tau and T must be at least 1"));
    }
    if tau > n {
        return Err(Error::invalid(format!(
            "tau = {tau} exceeds the population {n}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!(
            "per_step_delta must lie in (0, 1), got {delta}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccountantReport {
    /// Per-step epsilon before subsampling.
    pub eps_tilde: f64,
    /// `tau / N`.
    pub sampling_ratio: f64,
    /// `(2 (tau/N) eps~, (tau/N) delta)`.
    pub step_budget: PrivacyBudget,
    pub composed: CompositionResult,
    /// The slack expression as displayed for the accountant, evaluated with
    /// `(tau/N) eps~` in place of the step epsilon. `None` where it is
    /// undefined (`eps' >= T (tau/N) eps~`).
    pub displayed_slack: Option<f64>,
    pub generalization: Option<GeneralizationBound>,
    pub generalization_absent_reason: Option<String>,
}

fn account(
    eps_tilde: f64,
    tau: u64,
    n: u64,
    steps: u64,
    delta: f64,
    slack: SlackParameter,
) -> Result<AccountantReport> {
    let ratio = tau as f64 / n as f64;
    let step_budget = PrivacyBudget::new(2.0 * ratio * eps_tilde, ratio * delta)?;
    let composed = compose_homogeneous(
        step_budget.epsilon(),
        step_budget.delta(),
        steps,
        slack,
        HomogeneousMode::Moment,
    )?;
    let eps_prime = composed.composed.epsilon();
    let half = ratio * eps_tilde;
    let displayed_slack =
        (eps_prime < steps as f64 * half).then(|| moment_log_slack(half, steps, eps_prime).exp());

    let (generalization, generalization_absent_reason) = if eps_prime >= 2.0 {
        (
            None,
            Some(format!("composed epsilon {eps_prime} is not below 2")),
        )
    } else {
        match high_probability_bound(&composed.composed, n) {
            Ok(bound) => (Some(bound), None),
            Err(Error::PreconditionViolated { what, required }) => {
                (None, Some(format!("{what} ({required})")))
            }
            Err(e) => return Err(e),
        }
    };
    Ok(AccountantReport {
        eps_tilde,
        sampling_ratio: ratio,
        step_budget,
        composed,
        displayed_slack,
        generalization,
        generalization_absent_reason,
    })
}

/// Privacy and generalization of SGLD.
pub fn sgld_accountant(config: &SgldConfig, slack: SlackParameter) -> Result<AccountantReport> {
    config.validate()?;
    account(
        config.eps_tilde(),
        config.tau,
        config.n,
        config.steps,
        config.per_step_delta,
        slack,
    )
}

/// Privacy and generalization of differentially private federated learning.
pub fn fed_accountant(config: &FedConfig, slack: SlackParameter) -> Result<AccountantReport> {
    config.validate()?;
    account(
        config.eps_tilde(),
        config.tau,
        config.num_clients,
        config.steps,
        config.per_step_delta,
        slack,
    )
}

/// Smallest `T` with `T > eps^2 N / (32 tau ln(2 / delta))`, the iteration
/// count past which SGLD is `(eps, delta)`-DP without added noise.
pub fn free_privacy_threshold(epsilon: f64, delta: f64, n: u64, tau: u64) -> Result<u64> {
    positive("epsilon", epsilon)?;
    if n == 0 || tau == 0 {
        return Err(Error::invalid("N and tau must be at least 1"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let bound = epsilon * epsilon * n as f64 / (32.0 * tau as f64 * (2.0 / delta).ln());
    if !(bound < 1e18) {
        return Err(Error::ResourceLimit(format!(
            "threshold {bound} is too large"
        )));
    }
    // a bound within rounding of an integer counts as that integer
    let nearest = bound.round();
    let floor = if (bound - nearest).abs() <= 1e-12 * bound.max(1.0) {
        nearest
    } else {
        bound.floor()
    };
    Ok(floor as u64 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::exact_composed_delta;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs())
    }

    fn slack() -> SlackParameter {
        SlackParameter::new(1e-6).unwrap()
    }

    fn sgld(sigma: f64, tau: u64, n: u64, steps: u64) -> SgldConfig {
        SgldConfig::constant(1.0, sigma, tau, n, steps, 0.05, 1e-5).unwrap()
    }

    #[test]
    fn sgld_eps_tilde() {
        let c = sgld(4.0, 256, 60_000, 100);
        assert!(close(c.eps_tilde(), 0.004687967809753986, 1e-13));
        let r = sgld_accountant(&c, slack()).unwrap();
        assert!(close(r.step_budget.epsilon(), 4.000399197656734e-5, 1e-13));
        assert!(close(r.step_budget.delta(), 256.0 / 60_000.0 * 1e-5, 1e-13));
    }

    #[test]
    fn fed_eps_tilde() {
        let mut c = FedConfig {
            num_clients: 1000,
            tau: 64,
            sigma: 4.0,
            clip_bound: 1.0,
            steps: 50,
            per_step_delta: 1e-5,
            local_lr: 0.1,
        };
        assert!(close(c.eps_tilde(), 0.02651599042740278, 1e-13));
        let small = fed_accountant(&c, slack()).unwrap();
        c.tau = 128;
        assert!(close(c.eps_tilde(), 0.013256087865068578, 1e-13));
        let large = fed_accountant(&c, slack()).unwrap();
        assert!(large.sampling_ratio > small.sampling_ratio);
        assert!(large.eps_tilde < small.eps_tilde);

        c.tau = 1000;
        let all = fed_accountant(&c, slack()).unwrap();
        assert!(close(all.step_budget.epsilon(), 2.0 * all.eps_tilde, 1e-15));
    }

    #[test]
    fn noise_drives_epsilon_to_zero() {
        let loud = sgld_accountant(&sgld(1e6, 256, 60_000, 100), slack()).unwrap();
        assert!(loud.eps_tilde < 1e-6);
        assert!(loud.composed.composed.epsilon() < 1e-6);
    }

    #[test]
    fn monotone_in_sigma_steps_and_ratio() {
        let eps = |c: SgldConfig| {
            sgld_accountant(&c, slack())
                .unwrap()
                .composed
                .composed
                .epsilon()
        };
        let mut last = f64::INFINITY;
        for sigma in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let e = eps(sgld(sigma, 64, 10_000, 200));
            assert!(e <= last);
            last = e;
        }
        let mut last = 0.0;
        for steps in [1, 5, 20, 100, 500] {
            let e = eps(sgld(4.0, 64, 10_000, steps));
            assert!(e >= last);
            last = e;
        }
        let mut last = 0.0;
        for n in [100_000, 50_000, 20_000, 10_000] {
            let e = eps(sgld(4.0, 64, n, 200));
            assert!(e >= last);
            last = e;
        }
    }

    #[test]
    fn generalization_presence() {
        let r = sgld_accountant(&sgld(4.0, 256, 60_000, 100), slack()).unwrap();
        assert!(r.composed.composed.epsilon() < 2.0);
        // delta' ~ 1e-6 needs N of a few thousand at eps' ~ 0.03? far more
        if let Some(g) = &r.generalization {
            assert!(g.min_sample_size <= 60_000);
        } else {
            assert!(r
                .generalization_absent_reason
                .as_deref()
                .unwrap()
                .contains("N >="));
        }

        let big = sgld_accountant(&sgld(0.05, 100, 200, 1000), slack()).unwrap();
        assert!(big.generalization.is_none());
        assert!(big
            .generalization_absent_reason
            .unwrap()
            .contains("not below 2"));
    }

    /// The product form falls short of `1 - (1 - delta)^T` by about
    /// `(T - k) delta tanh(eps/2)`, so dominance holds only up to that amount.
    #[test]
    fn dominates_exact_composition_up_to_product_deficit() {
        for steps in [1, 5, 10, 20, 50] {
            for sigma in [0.5, 1.0, 4.0] {
                let r = sgld_accountant(&sgld(sigma, 50, 500, steps), slack()).unwrap();
                let b = r.step_budget;
                let ours = r.composed.composed;
                let exact =
                    exact_composed_delta(b.epsilon(), b.delta(), steps, ours.epsilon()).unwrap();
                let k = r.composed.full_steps.unwrap_or(steps);
                let a = b.split_mass();
                let deficit = (steps - k) as f64 * b.delta() * (0.5 * b.epsilon()).tanh()
                    + 10.0 * (steps * steps) as f64 * a * a;
                assert!(exact <= ours.delta() + deficit, "T={steps} sigma={sigma}");
            }
        }
    }

    #[test]
    fn free_privacy() {
        assert_eq!(
            free_privacy_threshold(1.0, 2.0 / 1f64.exp(), 32_000, 100).unwrap(),
            11
        );
        assert_eq!(free_privacy_threshold(1e-9, 1e-5, 60_000, 100).unwrap(), 1);
        let a = free_privacy_threshold(1.0, 1e-5, 1_000_000, 10).unwrap();
        let b = free_privacy_threshold(1.0, 1e-5, 2_000_000, 10).unwrap();
        assert!(b.abs_diff(2 * a) <= 1);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = sgld(4.0, 256, 60_000, 10);
        c.step_sizes.pop();
        assert!(sgld_accountant(&c, slack()).is_err());
        assert!(SgldConfig::constant(1.0, 4.0, 10, 5, 10, 0.1, 1e-5).is_err());
        assert!(SgldConfig::constant(1.0, 4.0, 5, 10, 10, 0.1, 1.0).is_err());
    }

    #[test]
    fn serde_names() {
        let c: SgldConfig = serde_json::from_str(
            r#"{"L":1,"sigma":4,"tau":2,"N":10,"T":1,"step_sizes":[0.1],"per_step_delta":1e-5}"#,
        )
        .unwrap();
        assert_eq!(c.lipschitz, 1.0);
        let f: FedConfig = serde_json::from_str(
            r#"{"num_clients":10,"tau":2,"sigma":4,"clip_bound":1,"T":3,"per_step_delta":1e-5}"#,
        )
        .unwrap();
        assert_eq!(f.local_lr, 0.1);
        assert!(serde_json::from_str::<FedConfig>(r#"{"bogus":1}"#).is_err());
    }
}
