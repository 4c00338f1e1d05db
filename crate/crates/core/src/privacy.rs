//! Privacy budgets and composition.
//!
//! Three accountants live here:
//!
//! * the general heterogeneous composition ([`compose_epsilon`] +
//!   [`compose_delta`], packaged by [`compose_general`]),
//! * the homogeneous specialisations ([`compose_homogeneous`]) with either the
//!   exact product form for `delta'` or the moment-generating-function slack,
//! * baselines for comparison ([`compose_baseline`]).
//!
//! All `(1 - x)^n` products are evaluated in log space; see [`crate::numeric`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{
    complement_pow, guarded_ceil, half_tanh, ln_one_minus, one_minus_exp, sorted_sum,
};

/// Largest number of boundary assignments enumerated exactly by
/// [`compose_delta`] (the product of `count + 1` over groups of identical
/// per-step budgets). Covers every input with at most 25 iterations.
pub const EXACT_SEARCH_CAP: u64 = 1 << 25;

/// Relative tolerance for `sum(alpha) == eps'` and `eps' <= sum(eps)`.
pub const BUDGET_TOLERANCE: f64 = 1e-12;

/// An `(epsilon, delta)` pair in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBudget")]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
}

#[derive(Deserialize)]
struct RawBudget {
    epsilon: f64,
    delta: f64,
}

impl TryFrom<RawBudget> for PrivacyBudget {
    type Error = Error;

    fn try_from(raw: RawBudget) -> Result<Self> {
        PrivacyBudget::new(raw.epsilon, raw.delta)
    }
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Error::invalid(format!(
                "epsilon must be finite and non-negative, got {epsilon}"
            )));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::invalid(format!(
                "delta must lie in [0, 1), got {delta}"
            )));
        }
        Ok(Self { epsilon, delta })
    }

    /// Builds a composed budget, mapping `delta >= 1` to a degenerate-budget
    /// error instead of an invalid-argument one.
    pub(crate) fn composed(epsilon: f64, delta: f64) -> Result<Self> {
        if delta.is_nan() || delta >= 1.0 {
            return Err(Error::DegenerateBudget { delta });
        }
        Self::new(epsilon, delta.max(0.0))
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `delta / (1 + e^epsilon)`, the per-step statistical-distance term of
    /// the composition theorems.
    pub(crate) fn split_mass(&self) -> f64 {
        // 1 / (1 + e^eps) = e^{-softplus(eps)}
        self.delta * (-crate::numeric::softplus(self.epsilon)).exp()
    }
}

/// Ordered per-iteration budgets of a `T`-step algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PrivacyBudget>", into = "Vec<PrivacyBudget>")]
pub struct IterationSpec {
    budgets: Vec<PrivacyBudget>,
}

impl TryFrom<Vec<PrivacyBudget>> for IterationSpec {
    type Error = Error;

    fn try_from(budgets: Vec<PrivacyBudget>) -> Result<Self> {
        IterationSpec::new(budgets)
    }
}

impl From<IterationSpec> for Vec<PrivacyBudget> {
    fn from(spec: IterationSpec) -> Self {
        spec.budgets
    }
}

impl IterationSpec {
    pub fn new(budgets: Vec<PrivacyBudget>) -> Result<Self> {
        if budgets.is_empty() {
            return Err(Error::invalid("iteration spec needs at least one step"));
        }
        Ok(Self { budgets })
    }

    /// `steps` copies of the same budget.
    pub fn homogeneous(budget: PrivacyBudget, steps: usize) -> Result<Self> {
        Self::new(vec![budget; steps])
    }

    /// Convenience constructor from parallel slices.
    pub fn from_pairs(epsilons: &[f64], deltas: &[f64]) -> Result<Self> {
        if epsilons.len() != deltas.len() {
            return Err(Error::invalid(format!(
                "{} epsilons but {} deltas",
                epsilons.len(),
                deltas.len()
            )));
        }
        let budgets = epsilons
            .iter()
            .zip(deltas)
            .map(|(&e, &d)| PrivacyBudget::new(e, d))
            .collect::<Result<Vec<_>>>()?;
        Self::new(budgets)
    }

    pub fn budgets(&self) -> &[PrivacyBudget] {
        &self.budgets
    }

    pub fn len(&self) -> usize {
        self.budgets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.budgets.is_empty()
    }

    pub fn total_epsilon(&self) -> f64 {
        self.budgets.iter().map(|b| b.epsilon).sum()
    }

    /// The common budget if every step is identical.
    pub fn common_budget(&self) -> Option<PrivacyBudget> {
        let first = self.budgets[0];
        self.budgets.iter().all(|b| *b == first).then_some(first)
    }
}

/// The free slack constant `delta~` of advanced composition, in `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SlackParameter(f64);

impl SlackParameter {
    pub fn new(value: f64) -> Result<Self> {
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::invalid(format!(
                "slack must lie strictly between 0 and 1, got {value}"
            )));
        }
        Ok(Self(value))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for SlackParameter {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<SlackParameter> for f64 {
    fn from(s: SlackParameter) -> f64 {
        s.0
    }
}

/// The three candidate values of the composed epsilon and the chosen minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonBreakdown {
    /// Sum of the per-step epsilons.
    pub eps1: f64,
    /// KL-drift plus the `log(e + sqrt(sum eps^2) / slack)` deviation term.
    pub eps2: f64,
    /// KL-drift plus the `log(1 / slack)` deviation term.
    pub eps3: f64,
    /// 1-based index of the attaining candidate; smallest index on ties.
    pub chosen: u8,
    pub value: f64,
}

impl EpsilonBreakdown {
    fn from_sums(sum_eps: f64, sum_kl: f64, sum_sq: f64, slack: SlackParameter) -> Self {
        let d = slack.value();
        let eps1 = sum_eps;
        let eps2 = sum_kl + (2.0 * sum_sq * (std::f64::consts::E + sum_sq.sqrt() / d).ln()).sqrt();
        let eps3 = sum_kl + (2.0 * (1.0 / d).ln() * sum_sq).sqrt();
        let mut chosen = 1;
        let mut value = eps1;
        if eps2 < value {
            chosen = 2;
            value = eps2;
        }
        if eps3 < value {
            chosen = 3;
            value = eps3;
        }
        Self {
            eps1,
            eps2,
            eps3,
            chosen,
            value,
        }
    }
}

/// Per-step privacy-loss allocation `alpha_i` attaining the composed delta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryAssignment {
    pub alphas: Vec<f64>,
}

impl BoundaryAssignment {
    pub fn total(&self) -> f64 {
        self.alphas.iter().sum()
    }

    /// Number of entries strictly between 0 and the step's epsilon.
    pub fn fractional_count(&self, spec: &IterationSpec) -> usize {
        self.alphas
            .iter()
            .zip(spec.budgets())
            .filter(|(a, b)| **a != 0.0 && **a != b.epsilon)
            .count()
    }
}

/// Which composition rule produced a [`CompositionResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    OursGeneral,
    OursHomogeneous,
    OursMoment,
    Kairouz,
    DworkBasic,
    DworkAdvanced,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::OursGeneral,
        Method::OursHomogeneous,
        Method::OursMoment,
        Method::Kairouz,
        Method::DworkBasic,
        Method::DworkAdvanced,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::OursGeneral => "ours-general",
            Method::OursHomogeneous => "ours-homogeneous",
            Method::OursMoment => "ours-moment",
            Method::Kairouz => "kairouz",
            Method::DworkBasic => "dwork-basic",
            Method::DworkAdvanced => "dwork-advanced",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown composition method '{s}'")))
    }
}

/// How [`compose_homogeneous`] obtains the slack term of `delta'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HomogeneousMode {
    ClosedForm,
    Moment,
}

impl FromStr for HomogeneousMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed-form" => Ok(HomogeneousMode::ClosedForm),
            "moment" => Ok(HomogeneousMode::Moment),
            other => Err(Error::invalid(format!(
                "unknown homogeneous mode '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionResult {
    pub composed: PrivacyBudget,
    pub method: Method,
    pub slack: SlackParameter,
    /// False when `delta'` is a conservative relaxation of the maximisation.
    pub exact_search: bool,
    pub breakdown: Option<EpsilonBreakdown>,
    /// `ceil(eps' / eps)`, the number of steps charged in full (homogeneous
    /// product form only).
    pub full_steps: Option<u64>,
    /// The moment-generating-function slack `delta''` (moment mode only).
    pub moment_slack: Option<f64>,
    /// Set when moment mode fell back to basic composition because
    /// `eps' >= T eps`.
    pub demoted: bool,
}

/// Upper bound on the KL divergence between outputs of an `eps`-DP mechanism
/// on neighbouring inputs: `eps (e^eps - 1) / (e^eps + 1)`.
pub fn kl_divergence_bound(epsilon: f64) -> Result<f64> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::invalid(format!(
            "epsilon must be finite and non-negative, got {epsilon}"
        )));
    }
    Ok(epsilon * half_tanh(epsilon))
}

/// Composed epsilon as the minimum of the three candidate bounds.
pub fn compose_epsilon(spec: &IterationSpec, slack: SlackParameter) -> EpsilonBreakdown {
    let b = spec.budgets();
    let sum_eps = sorted_sum(b.iter().map(|x| x.epsilon).collect());
    let sum_kl = sorted_sum(b.iter().map(|x| x.epsilon * half_tanh(x.epsilon)).collect());
    let sum_sq = sorted_sum(b.iter().map(|x| x.epsilon * x.epsilon).collect());
    EpsilonBreakdown::from_sums(sum_eps, sum_kl, sum_sq, slack)
}

/// Outcome of the boundary search in [`compose_delta`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSearch {
    pub delta_prime: f64,
    pub argmax: BoundaryAssignment,
    pub exact_search: bool,
}

/// One class of identical per-step budgets.
struct StepGroup {
    epsilon: f64,
    mass: f64,
    ln_full: f64,
    ln_zero: f64,
    members: Vec<usize>,
}

impl StepGroup {
    /// Change in the log-product when one member moves from `alpha = 0` to
    /// `alpha = r`.
    fn partial_gain(&self, r: f64) -> f64 {
        ln_one_minus(r.exp() * self.mass) - self.ln_zero
    }
}

fn group_steps(spec: &IterationSpec) -> Vec<StepGroup> {
    let mut groups: Vec<StepGroup> = Vec::new();
    for (i, b) in spec.budgets().iter().enumerate() {
        if let Some(g) = groups
            .iter_mut()
            .find(|g| g.epsilon == b.epsilon && g.mass == b.split_mass())
        {
            g.members.push(i);
            continue;
        }
        let mass = b.split_mass();
        groups.push(StepGroup {
            epsilon: b.epsilon,
            mass,
            ln_full: ln_one_minus(b.epsilon.exp() * mass),
            ln_zero: ln_one_minus(mass),
            members: vec![i],
        });
    }
    groups
}

#[derive(Clone)]
struct Leaf {
    log_prod: f64,
    total: f64,
    counts: Vec<usize>,
    fraction: Option<(usize, f64)>,
}

impl Leaf {
    fn better_than(&self, other: &Leaf) -> bool {
        self.log_prod < other.log_prod
            || (self.log_prod == other.log_prod && self.total > other.total)
    }
}

struct Search<'a> {
    groups: &'a [StepGroup],
    budget: f64,
    tol: f64,
    counts: Vec<usize>,
    best: Option<Leaf>,
}

impl Search<'_> {
    fn visit(&mut self, g: usize, used: f64, log_prod: f64) {
        if g == self.groups.len() {
            self.leaf(used, log_prod);
            return;
        }
        let group = &self.groups[g];
        let n = group.members.len();
        let max_full = if group.epsilon > 0.0 {
            (((self.budget + self.tol - used) / group.epsilon)
                .floor()
                .max(0.0) as usize)
                .min(n)
        } else {
            n
        };
        for c in (0..=max_full).rev() {
            let next_used = used + c as f64 * group.epsilon;
            if next_used > self.budget + self.tol {
                continue;
            }
            self.counts[g] = c;
            let lp = log_prod + c as f64 * (group.ln_full - group.ln_zero);
            self.visit(g + 1, next_used, lp);
        }
        self.counts[g] = 0;
    }

    fn leaf(&mut self, used: f64, log_prod: f64) {
        let r = (self.budget - used).max(0.0);
        let mut candidate = Leaf {
            log_prod,
            total: used,
            counts: self.counts.clone(),
            fraction: None,
        };
        if r > 0.0 {
            for (h, group) in self.groups.iter().enumerate() {
                if self.counts[h] < group.members.len() && group.epsilon >= r {
                    let lp = log_prod + group.partial_gain(r);
                    let alt = Leaf {
                        log_prod: lp,
                        total: used + r,
                        counts: self.counts.clone(),
                        fraction: Some((h, r)),
                    };
                    if alt.better_than(&candidate) {
                        candidate = alt;
                    }
                }
            }
        }
        if self.best.as_ref().is_none_or(|b| candidate.better_than(b)) {
            self.best = Some(candidate);
        }
    }
}

fn assignment_from_leaf(spec: &IterationSpec, groups: &[StepGroup], leaf: &Leaf) -> Vec<f64> {
    let mut alphas = vec![0.0; spec.len()];
    for (g, group) in groups.iter().enumerate() {
        for &i in &group.members[..leaf.counts[g]] {
            alphas[i] = group.epsilon;
        }
        if let Some((h, r)) = leaf.fraction {
            if h == g {
                alphas[group.members[leaf.counts[g]]] = r;
            }
        }
    }
    alphas
}

/// Composed delta for a heterogeneous spec at a given composed epsilon.
///
/// Maximises
/// `[1 - prod(1 - e^{a_i} A_i)] + [1 - prod(1 - A_i)] + slack`, with
/// `A_i = delta_i / (1 + e^{eps_i})`, over allocations with
/// `0 <= a_i <= eps_i`, `sum a_i <= eps_prime` and at most one `a_i` strictly
/// inside its range. Identical steps are grouped, so the enumeration is exact
/// whenever the number of distinct count vectors stays below
/// [`EXACT_SEARCH_CAP`] (always for `T <= 25`, and for homogeneous specs of any
/// length). Larger inputs use the chord bound `e^a A <= A + a (e^eps - 1) A /
/// eps` together with `1 - prod(1 - x_i) <= sum x_i`, maximised by a
/// fractional knapsack over the chord slopes; the result is then an upper
/// bound and `exact_search` is false.
pub fn compose_delta(
    spec: &IterationSpec,
    eps_prime: f64,
    slack: SlackParameter,
) -> Result<DeltaSearch> {
    let total = spec.total_epsilon();
    let tol = BUDGET_TOLERANCE * total.max(1.0);
    if !eps_prime.is_finite() || eps_prime < 0.0 {
        return Err(Error::invalid(format!(
            "eps_prime must be non-negative, got {eps_prime}"
        )));
    }
    if eps_prime > total + tol {
        return Err(Error::invalid(format!(
            "eps_prime {eps_prime} exceeds the total per-step epsilon {total}"
        )));
    }
    let budget = eps_prime.min(total);
    let groups = group_steps(spec);
    let second = one_minus_exp(
        groups
            .iter()
            .map(|g| g.members.len() as f64 * g.ln_zero)
            .sum(),
    );

    let states: f64 = groups
        .iter()
        .map(|g| (g.members.len() + 1) as f64)
        .product();
    let (first, alphas, exact) = if states <= EXACT_SEARCH_CAP as f64 {
        let base: f64 = groups
            .iter()
            .map(|g| g.members.len() as f64 * g.ln_zero)
            .sum();
        let mut search = Search {
            groups: &groups,
            budget,
            tol,
            counts: vec![0; groups.len()],
            best: None,
        };
        search.visit(0, 0.0, base);
        let leaf = search
            .best
            .expect("the all-zero assignment is always feasible");
        (
            one_minus_exp(leaf.log_prod),
            assignment_from_leaf(spec, &groups, &leaf),
            true,
        )
    } else {
        let (bound, alphas) = knapsack_relaxation(spec, budget);
        (bound, alphas, false)
    };

    let delta_prime = first + second + slack.value();
    if delta_prime >= 1.0 {
        return Err(Error::DegenerateBudget { delta: delta_prime });
    }
    Ok(DeltaSearch {
        delta_prime,
        argmax: BoundaryAssignment { alphas },
        exact_search: exact,
    })
}

fn knapsack_relaxation(spec: &IterationSpec, budget: f64) -> (f64, Vec<f64>) {
    let b = spec.budgets();
    let masses: Vec<f64> = b.iter().map(|x| x.split_mass()).collect();
    let mut order: Vec<usize> = (0..b.len()).filter(|&i| b[i].epsilon > 0.0).collect();
    let slope = |i: usize| b[i].epsilon.exp_m1() * masses[i] / b[i].epsilon;
    order.sort_by(|&i, &j| slope(j).total_cmp(&slope(i)).then(i.cmp(&j)));
    let mut alphas = vec![0.0; b.len()];
    let mut remaining = budget;
    let mut gain = Vec::new();
    for i in order {
        if remaining <= 0.0 {
            break;
        }
        let take = b[i].epsilon.min(remaining);
        alphas[i] = take;
        remaining -= take;
        gain.push(take * slope(i));
    }
    let mut terms = masses;
    terms.extend(gain);
    (sorted_sum(terms).min(1.0), alphas)
}

/// General composition: epsilon from [`compose_epsilon`], delta from
/// [`compose_delta`] at that epsilon.
pub fn compose_general(spec: &IterationSpec, slack: SlackParameter) -> Result<CompositionResult> {
    let breakdown = compose_epsilon(spec, slack);
    let search = compose_delta(spec, breakdown.value, slack)?;
    Ok(CompositionResult {
        composed: PrivacyBudget::composed(breakdown.value, search.delta_prime)?,
        method: Method::OursGeneral,
        slack,
        exact_search: search.exact_search,
        breakdown: Some(breakdown),
        full_steps: None,
        moment_slack: None,
        demoted: false,
    })
}

/// `1 - (1 - e^eps A)^k (1 - A)^(T-k) + 1 - (1 - A)^T`, the homogeneous
/// product form without its slack term.
pub(crate) fn homogeneous_product_form(budget: PrivacyBudget, steps: u64, full: u64) -> f64 {
    let a = budget.split_mass();
    if a == 0.0 {
        return 0.0;
    }
    let full = full.min(steps);
    let log_first = full as f64 * ln_one_minus(budget.epsilon.exp() * a)
        + (steps - full) as f64 * ln_one_minus(a);
    one_minus_exp(log_first) + complement_pow(a, steps as f64)
}

/// `ln delta''` for `T` steps of a pure `eps`-DP mechanism at composed `eps'`.
///
/// Requires `T eps tanh(eps/2) < eps' < T eps`.
pub fn moment_log_slack(epsilon: f64, steps: u64, eps_prime: f64) -> f64 {
    let t = steps as f64;
    let te = t * epsilon;
    let gap = te - eps_prime;
    let half = 0.5 * (eps_prime + te);
    -half + t * ((2.0 * te).ln() - gap.ln() - crate::numeric::softplus(epsilon))
        - half / epsilon * ((te + eps_prime).ln() - gap.ln())
}

/// Homogeneous composition of `steps` copies of `(eps, delta)`.
pub fn compose_homogeneous(
    epsilon: f64,
    delta: f64,
    steps: u64,
    slack: SlackParameter,
    mode: HomogeneousMode,
) -> Result<CompositionResult> {
    let budget = PrivacyBudget::new(epsilon, delta)?;
    if epsilon <= 0.0 {
        return Err(Error::invalid("homogeneous composition needs epsilon > 0"));
    }
    if steps == 0 {
        return Err(Error::invalid("steps must be at least 1"));
    }
    let t = steps as f64;
    match mode {
        HomogeneousMode::ClosedForm => {
            let kl = epsilon * half_tanh(epsilon);
            let breakdown =
                EpsilonBreakdown::from_sums(t * epsilon, t * kl, t * epsilon * epsilon, slack);
            let full = guarded_ceil(breakdown.value / epsilon).min(steps);
            let delta_prime = homogeneous_product_form(budget, steps, full) + slack.value();
            Ok(CompositionResult {
                composed: PrivacyBudget::composed(breakdown.value, delta_prime)?,
                method: Method::OursHomogeneous,
                slack,
                exact_search: true,
                breakdown: Some(breakdown),
                full_steps: Some(full),
                moment_slack: None,
                demoted: false,
            })
        }
        HomogeneousMode::Moment => {
            let eps_prime = t * epsilon * half_tanh(epsilon)
                + (2.0 * (1.0 / slack.value()).ln() * t * epsilon * epsilon).sqrt();
            if eps_prime >= t * epsilon {
                let spec = IterationSpec::homogeneous(budget, steps as usize)?;
                let mut basic = compose_baseline(&spec, slack, Method::DworkBasic)?;
                basic.moment_slack = Some(0.0);
                basic.demoted = true;
                return Ok(basic);
            }
            let moment_slack = moment_log_slack(epsilon, steps, eps_prime).exp();
            let full = guarded_ceil(eps_prime / epsilon).min(steps);
            let delta_prime = homogeneous_product_form(budget, steps, full) + moment_slack;
            Ok(CompositionResult {
                composed: PrivacyBudget::composed(eps_prime, delta_prime)?,
                method: Method::OursMoment,
                slack,
                exact_search: true,
                breakdown: None,
                full_steps: Some(full),
                moment_slack: Some(moment_slack),
                demoted: false,
            })
        }
    }
}

/// Baseline composition rules used for comparison.
pub fn compose_baseline(
    spec: &IterationSpec,
    slack: SlackParameter,
    method: Method,
) -> Result<CompositionResult> {
    let b = spec.budgets();
    let d = slack.value();
    let (epsilon, delta, breakdown) = match method {
        Method::Kairouz => {
            let common = spec.common_budget().ok_or_else(|| {
                Error::invalid("the kairouz baseline applies to homogeneous specs only")
            })?;
            let t = spec.len() as f64;
            let e = common.epsilon;
            let kl = e * half_tanh(e);
            let breakdown = EpsilonBreakdown::from_sums(t * e, t * kl, t * e * e, slack);
            // 1 - (1 - delta)^T (1 - slack), split so delta = 0 yields slack exactly
            let p = complement_pow(common.delta, t);
            (breakdown.value, p + d * (1.0 - p), Some(breakdown))
        }
        Method::DworkBasic => (
            sorted_sum(b.iter().map(|x| x.epsilon).collect()),
            sorted_sum(b.iter().map(|x| x.delta).collect()),
            None,
        ),
        Method::DworkAdvanced => {
            let drift = sorted_sum(b.iter().map(|x| x.epsilon * x.epsilon.exp_m1()).collect());
            let sum_sq = sorted_sum(b.iter().map(|x| x.epsilon * x.epsilon).collect());
            let eps = drift + (2.0 * (1.0 / d).ln() * sum_sq).sqrt();
            let mut deltas: Vec<f64> = b.iter().map(|x| x.delta).collect();
            deltas.push(d);
            (eps, sorted_sum(deltas), None)
        }
        other => {
            return Err(Error::invalid(format!(
                "'{other}' is not a baseline method"
            )));
        }
    };
    Ok(CompositionResult {
        composed: PrivacyBudget::composed(epsilon, delta)?,
        method,
        slack,
        exact_search: true,
        breakdown,
        full_steps: None,
        moment_slack: None,
        demoted: false,
    })
}
