//! Generalization guarantees implied by an `(epsilon, delta)` budget.
//!
//! Losses are assumed bounded in `[0, 1]`. All logarithms are natural.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::privacy::PrivacyBudget;

/// Source of a [`GeneralizationBound`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundMethod {
    Ours,
    Dwork2015,
    NissimStemmer,
    OnetoA,
    OnetoB,
}

impl BoundMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundMethod::Ours => "ours",
            BoundMethod::Dwork2015 => "dwork2015",
            BoundMethod::NissimStemmer => "nissim-stemmer",
            BoundMethod::OnetoA => "oneto-a",
            BoundMethod::OnetoB => "oneto-b",
        }
    }
}

/// `P[|test risk - train risk| < gap] > 1 - failure_prob`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationBound {
    pub gap: f64,
    pub failure_prob: f64,
    /// Smallest training-set size for which the bound is stated; 1 when the
    /// source states no threshold.
    pub min_sample_size: u64,
    pub method: BoundMethod,
    /// The raw failure term was at least 1 (and was clamped), or the bound's
    /// preconditions do not hold at the requested sample size.
    pub vacuous: bool,
}

impl GeneralizationBound {
    fn new(gap: f64, raw_failure: f64, min_sample_size: u64, method: BoundMethod) -> Self {
        let vacuous = !(raw_failure < 1.0);
        Self {
            gap,
            failure_prob: raw_failure.clamp(0.0, 1.0),
            min_sample_size,
            method,
            vacuous,
        }
    }

    /// True when `self` is at least as tight as `other` in both coordinates
    /// and strictly tighter in at least one.
    pub fn dominates(&self, other: &GeneralizationBound) -> bool {
        self.gap <= other.gap
            && self.failure_prob <= other.failure_prob
            && (self.gap < other.gap || self.failure_prob < other.failure_prob)
    }
}

/// Multi-database bounds for an algorithm selecting one of `k` sub-databases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiDbBound {
    pub k: u64,
    /// `e^-eps k delta + 1 - e^-eps`.
    pub on_average_gap: f64,
    /// `k e^-eps delta + 3 eps`.
    pub high_prob_threshold: f64,
    /// Probability level attached to the threshold, reported as stated (`eps`).
    pub high_prob_level: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacGuarantee {
    pub k1: f64,
    pub k2: f64,
    pub risk_bound: f64,
    pub confidence: f64,
}

fn check_bound_budget(budget: &PrivacyBudget) -> Result<()> {
    let eps = budget.epsilon();
    if !(eps > 0.0 && eps < 2.0) {
        return Err(Error::invalid(format!(
            "the high-probability bound needs 0 < epsilon < 2, got {eps}"
        )));
    }
    if budget.delta() <= 0.0 {
        return Err(Error::invalid(
            "the high-probability bound needs delta > 0 (the sample-size threshold diverges)",
        ));
    }
    Ok(())
}

/// Smallest `N` with `N >= (2 / eps^2) ln(16 / (e^-eps delta))`.
pub fn min_sample_size(budget: &PrivacyBudget) -> Result<u64> {
    let eps = budget.epsilon();
    let delta = budget.delta();
    if eps <= 0.0 {
        return Err(Error::invalid("minimum sample size needs epsilon > 0"));
    }
    if delta <= 0.0 {
        return Err(Error::invalid("minimum sample size diverges at delta = 0"));
    }
    let threshold = 2.0 / (eps * eps) * (16f64.ln() + eps - delta.ln());
    let n = threshold.ceil();
    if !n.is_finite() || n >= u64::MAX as f64 {
        return Err(Error::ResourceLimit(format!(
            "sample-size threshold {threshold} does not fit in 64 bits"
        )));
    }
    Ok((n as u64).max(1))
}

/// `e^-eps delta / eps * ln(2 / eps)`, the failure term of [`high_probability_bound`].
pub fn failure_term(budget: &PrivacyBudget) -> f64 {
    let eps = budget.epsilon();
    (-eps).exp() * budget.delta() / eps * (2.0 / eps).ln()
}

/// With probability above `1 - failure_prob`, `|train risk - test risk| < 9 eps`.
///
/// Fails with a precondition error carrying the required `N` when `n` is
/// below [`min_sample_size`].
pub fn high_probability_bound(budget: &PrivacyBudget, n: u64) -> Result<GeneralizationBound> {
    check_bound_budget(budget)?;
    let required = min_sample_size(budget)?;
    if n < required {
        return Err(Error::precondition(
            format!("sample size N = {n} is below the threshold"),
            format!("N >= {required}"),
        ));
    }
    Ok(GeneralizationBound::new(
        9.0 * budget.epsilon(),
        failure_term(budget),
        required,
        BoundMethod::Ours,
    ))
}

/// On-average and high-probability bounds for `k`-database algorithms.
pub fn multi_db_bounds(budget: &PrivacyBudget, k: u64) -> Result<MultiDbBound> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let eps = budget.epsilon();
    let scaled = (-eps).exp() * k as f64 * budget.delta();
    Ok(MultiDbBound {
        k,
        on_average_gap: scaled - (-eps).exp_m1(),
        high_prob_threshold: scaled + 3.0 * eps,
        high_prob_level: eps,
    })
}

/// Our bound followed by the published baselines, for ranking.
///
/// `empirical_risk` and `empirical_variance` feed the two data-dependent
/// baselines. Our bound is included even outside its preconditions, flagged
/// vacuous.
pub fn baseline_generalization(
    budget: &PrivacyBudget,
    n: u64,
    empirical_risk: f64,
    empirical_variance: f64,
) -> Result<Vec<GeneralizationBound>> {
    let eps = budget.epsilon();
    let delta = budget.delta();
    if eps <= 0.0 {
        return Err(Error::invalid("baseline bounds need epsilon > 0"));
    }
    if n < 2 {
        return Err(Error::invalid("baseline bounds need N >= 2"));
    }
    for (name, v) in [
        ("empirical_risk", empirical_risk),
        ("empirical_variance", empirical_variance),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!(
                "{name} must lie in [0, 1], got {v}"
            )));
        }
    }
    let nf = n as f64;

    let ours = match high_probability_bound(budget, n) {
        Ok(b) => b,
        Err(_) => {
            let mut b = GeneralizationBound::new(
                9.0 * eps,
                if eps < 2.0 { failure_term(budget) } else { 1.0 },
                min_sample_size(budget).unwrap_or(u64::MAX),
                BoundMethod::Ours,
            );
            b.vacuous = true;
            b
        }
    };
    let log_term = (2.0 / eps).ln();
    let eps_hat = eps + (1.0 / nf).sqrt();
    let oneto_failure = 3.0 * (-nf * eps * eps).exp();
    Ok(vec![
        ours,
        GeneralizationBound::new(4.0 * eps, 8.0 * delta.powf(eps), 1, BoundMethod::Dwork2015),
        GeneralizationBound::new(
            13.0 * eps,
            2.0 * delta / eps * log_term,
            1,
            BoundMethod::NissimStemmer,
        ),
        GeneralizationBound::new(
            (6.0 * empirical_risk).sqrt() * eps_hat + 6.0 * (eps * eps + 1.0 / nf),
            oneto_failure,
            1,
            BoundMethod::OnetoA,
        ),
        GeneralizationBound::new(
            (4.0 * empirical_variance).sqrt() * eps_hat
                + 5.0 * nf / (nf - 1.0) * (eps * eps + 1.0 / nf),
            oneto_failure,
            1,
            BoundMethod::OnetoB,
        ),
    ])
}

/// Combines an optimisation-error rate `exp(-k1 T + k2)` with the
/// generalization gap of the composed budget.
///
/// A composed epsilon of zero means the output ignores the data: the gap
/// vanishes and the failure term is 0 for `delta = 0` (1 otherwise, its
/// limit).
pub fn pac_guarantee(
    k1: f64,
    k2: f64,
    steps: u64,
    n: u64,
    composed: &PrivacyBudget,
) -> Result<PacGuarantee> {
    if !(k1 > 0.0) || !k2.is_finite() {
        return Err(Error::invalid(format!(
            "need K1 > 0 and finite K2, got ({k1}, {k2})"
        )));
    }
    let optimisation = (-k1 * steps as f64 + k2).exp();
    if composed.epsilon() == 0.0 {
        let failure = if composed.delta() == 0.0 { 0.0 } else { 1.0 };
        return Ok(PacGuarantee {
            k1,
            k2,
            risk_bound: optimisation,
            confidence: 1.0 - failure,
        });
    }
    let bound = high_probability_bound(composed, n)?;
    Ok(PacGuarantee {
        k1,
        k2,
        risk_bound: optimisation + bound.gap,
        confidence: 1.0 - bound.failure_prob,
    })
}
