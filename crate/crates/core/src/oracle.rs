//! Exact worst-case composition and Monte-Carlo checks.
//!
//! The T-fold product of the four-atom worst-case pair is aggregated by
//! multinomial type classes, so the hockey-stick divergence of the product is
//! computed exactly in polynomial time.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{complement_pow, ln_factorials, sorted_sum};
use crate::privacy::BUDGET_TOLERANCE;
use crate::rng::keyed_rng;

/// Largest `T` accepted by [`exact_composed_delta`].
pub const MAX_ORACLE_STEPS: u64 = 10_000;

/// Largest number of type classes enumerated in one call.
pub const MAX_CLASSES: u64 = 50_000_000;

/// Smallest trial count accepted by [`gaussian_loss_tail`].
pub const MIN_TAIL_TRIALS: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairVariant {
    Plain,
    Tilde,
}

/// Two distributions over the atoms `{0, 1, 2, 3}`; `p1` is `p0` reversed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AtomicMechanismPair {
    pub p0: [f64; 4],
    pub p1: [f64; 4],
    pub variant: PairVariant,
    epsilon: f64,
    delta: f64,
}

impl AtomicMechanismPair {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `ln(p0 / p1)` per atom, taken from the construction rather than from
    /// the rounded masses. `NaN` marks an atom carrying no mass under either.
    fn log_ratios(&self) -> [f64; 4] {
        let e = self.epsilon;
        match self.variant {
            PairVariant::Tilde if self.delta > 0.0 => [e, e, -e, -e],
            _ if self.delta > 0.0 => [f64::INFINITY, e, -e, f64::NEG_INFINITY],
            _ => [f64::NAN, e, -e, f64::NAN],
        }
    }
}

/// The worst-case `(eps, delta)`-DP pair and its tilde variant.
pub fn worst_case_pair(
    epsilon: f64,
    delta: f64,
    variant: PairVariant,
) -> Result<AtomicMechanismPair> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!(
            "epsilon must be finite and >= 0, got {epsilon}"
        )));
    }
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::invalid(format!(
            "delta must lie in [0, 1), got {delta}"
        )));
    }
    // e^eps / (1 + e^eps) and 1 / (1 + e^eps) without overflow
    let hi = 1.0 / (1.0 + (-epsilon).exp());
    let lo = 1.0 / (1.0 + epsilon.exp());
    let p0 = match variant {
        PairVariant::Plain => [delta, (1.0 - delta) * hi, (1.0 - delta) * lo, 0.0],
        PairVariant::Tilde => [
            delta * hi,
            (1.0 - delta) * hi,
            (1.0 - delta) * lo,
            delta * lo,
        ],
    };
    let mut p1 = p0;
    p1.reverse();
    Ok(AtomicMechanismPair {
        p0,
        p1,
        variant,
        epsilon,
        delta,
    })
}

/// One multinomial type class of the T-fold product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutcomeClass {
    pub counts: [u32; 4],
    pub log_p0: f64,
    pub log_p1: f64,
    /// `ln` of the multinomial coefficient.
    pub log_multiplicity: f64,
}

impl OutcomeClass {
    fn new(counts: [u32; 4], pair: &AtomicMechanismPair, ln_fact: &[f64]) -> Self {
        let log_prob = |p: &[f64; 4]| {
            counts
                .iter()
                .zip(p)
                .map(|(&n, &m)| if n == 0 { 0.0 } else { n as f64 * m.ln() })
                .sum()
        };
        let t: u32 = counts.iter().sum();
        let log_multiplicity =
            ln_fact[t as usize] - counts.iter().map(|&n| ln_fact[n as usize]).sum::<f64>();
        OutcomeClass {
            counts,
            log_p0: log_prob(&pair.p0),
            log_p1: log_prob(&pair.p1),
            log_multiplicity,
        }
    }

    /// Total mass of the class under the first product.
    pub fn mass0(&self) -> f64 {
        (self.log_multiplicity + self.log_p0).exp()
    }

    /// Total mass of the class under the second product.
    pub fn mass1(&self) -> f64 {
        (self.log_multiplicity + self.log_p1).exp()
    }
}

fn class_count(steps: u64, atoms: u32) -> u64 {
    // C(steps + atoms - 1, atoms - 1)
    let mut c: u128 = 1;
    for i in 1..atoms as u128 {
        c = c * (steps as u128 + i) / i;
    }
    c.min(u64::MAX as u128) as u64
}

fn check_steps(steps: u64, atoms: u32) -> Result<()> {
    if steps == 0 {
        return Err(Error::invalid("T must be at least 1"));
    }
    if steps > MAX_ORACLE_STEPS {
        return Err(Error::ResourceLimit(format!(
            "oracle supports T <= {MAX_ORACLE_STEPS}, got {steps}"
        )));
    }
    let classes = class_count(steps, atoms);
    if classes > MAX_CLASSES {
        return Err(Error::ResourceLimit(format!(
            "{classes} type classes exceed the cap of {MAX_CLASSES}"
        )));
    }
    Ok(())
}

/// Every type class of the T-fold product over all four atoms.
pub fn outcome_classes(pair: &AtomicMechanismPair, steps: u64) -> Result<Vec<OutcomeClass>> {
    check_steps(steps, 4)?;
    let t = steps as u32;
    let ln_fact = ln_factorials(steps as usize);
    let mut out = Vec::with_capacity(class_count(steps, 4) as usize);
    for n0 in 0..=t {
        for n1 in 0..=t - n0 {
            for n2 in 0..=t - n0 - n1 {
                let counts = [n0, n1, n2, t - n0 - n1 - n2];
                out.push(OutcomeClass::new(counts, pair, &ln_fact));
            }
        }
    }
    Ok(out)
}

/// Hockey-stick divergence `sum max(0, P0^T - e^eps' P1^T)` of the T-fold
/// product of `pair`.
///
/// Atoms with `p1 = 0` make every class containing them contribute its full
/// `P0` mass, which is added in aggregate as `1 - (1 - p0[a])^T`; atoms with
/// `p0 = 0` contribute nothing. The remaining atoms are enumerated by type
/// class. A class whose log-ratio is within [`BUDGET_TOLERANCE`] (relative)
/// of `eps'` counts as a tie and contributes nothing.
pub fn product_hockey_stick(pair: &AtomicMechanismPair, steps: u64, eps_prime: f64) -> Result<f64> {
    if eps_prime.is_nan() {
        return Err(Error::invalid("eps' must be a number"));
    }
    let ratios = pair.log_ratios();
    let finite: Vec<usize> = (0..4).filter(|&a| ratios[a].is_finite()).collect();
    check_steps(steps, finite.len() as u32)?;

    let escape: f64 = (0..4)
        .filter(|&a| ratios[a] == f64::INFINITY)
        .map(|a| pair.p0[a])
        .sum();
    let head = complement_pow(escape, steps as f64);

    let t = steps as u32;
    let ln_fact = ln_factorials(steps as usize);
    let ln_p0: Vec<f64> = finite.iter().map(|&a| pair.p0[a].ln()).collect();
    let r: Vec<f64> = finite.iter().map(|&a| ratios[a]).collect();
    let cutoff = eps_prime + BUDGET_TOLERANCE * eps_prime.abs().max(1.0);

    // contribution of one class restricted to the finite atoms
    let term = |counts: &[u32]| -> f64 {
        let mut log_ratio_units = 0.0;
        let mut log_p0 = ln_fact[t as usize];
        for (i, &n) in counts.iter().enumerate() {
            if n > 0 {
                log_ratio_units += n as f64 * r[i];
                log_p0 += n as f64 * ln_p0[i] - ln_fact[n as usize];
            }
        }
        if log_ratio_units > cutoff {
            log_p0.exp() * -(eps_prime - log_ratio_units).exp_m1()
        } else {
            0.0
        }
    };

    let terms: Vec<f64> = match finite.len() {
        0 => Vec::new(),
        1 => vec![term(&[t])],
        2 => (0..=t).into_par_iter().map(|n| term(&[n, t - n])).collect(),
        3 => (0..=t)
            .into_par_iter()
            .flat_map_iter(|a| (0..=t - a).map(move |b| (a, b)))
            .map(|(a, b)| term(&[a, b, t - a - b]))
            .collect(),
        _ => (0..=t)
            .into_par_iter()
            .flat_map_iter(|a| {
                (0..=t - a).flat_map(move |b| (0..=t - a - b).map(move |c| (a, b, c)))
            })
            .map(|(a, b, c)| term(&[a, b, c, t - a - b - c]))
            .collect(),
    };
    // collect() preserves index order, so the sum is schedule independent
    Ok((head + sorted_sum(terms)).min(1.0))
}

/// Smallest `delta` for which `T` compositions of the worst-case
/// `(eps, delta)`-DP pair are `(eps', delta)`-DP.
pub fn exact_composed_delta(epsilon: f64, delta: f64, steps: u64, eps_prime: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    let pair = worst_case_pair(epsilon, delta, PairVariant::Plain)?;
    product_hockey_stick(&pair, steps, eps_prime)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimalEpsilon {
    pub epsilon: f64,
    /// The target lies below the divergence at `eps' = T eps`; `epsilon` is
    /// then `T eps` and the target is not attained.
    pub saturated: bool,
}

/// Smallest `eps'` at which the exact composed delta drops to `target`.
pub fn exact_optimal_epsilon(
    epsilon: f64,
    delta: f64,
    steps: u64,
    target: f64,
) -> Result<OptimalEpsilon> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::invalid(format!(
            "target delta must lie in (0, 1), got {target}"
        )));
    }
    let hs = |e: f64| exact_composed_delta(epsilon, delta, steps, e);
    let mut hi = steps as f64 * epsilon;
    if hs(hi)? > target {
        return Ok(OptimalEpsilon {
            epsilon: hi,
            saturated: true,
        });
    }
    let mut lo = 0.0;
    if hs(lo)? <= target {
        return Ok(OptimalEpsilon {
            epsilon: 0.0,
            saturated: false,
        });
    }
    // invariant: hs(lo) > target >= hs(hi)
    while hi - lo > 4.0 * f64::EPSILON * hi {
        let mid = 0.5 * (lo + hi);
        if hs(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(OptimalEpsilon {
        epsilon: hi,
        saturated: false,
    })
}

/// `KL(p0 || p1)` of a pair, computed numerically.
pub fn kl_oracle(pair: &AtomicMechanismPair) -> Result<f64> {
    let mut terms = Vec::with_capacity(4);
    for (&p, &q) in pair.p0.iter().zip(&pair.p1) {
        if p == 0.0 {
            continue;
        }
        if q == 0.0 {
            return Err(Error::invalid(
                "KL divergence is infinite: p0 has mass where p1 has none",
            ));
        }
        terms.push(p * (p / q).ln());
    }
    Ok(terms.into_iter().sum())
}

/// Total variation distance between two distributions on the same atoms.
pub fn statistical_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// `delta`-approximate max divergence: the largest `ln((P(S) - delta) / Q(S))`
/// over events `S` with `P(S) > delta`. Exhaustive over events, so only for
/// small supports.
pub fn approx_max_divergence(p: &[f64], q: &[f64], delta: f64) -> Result<f64> {
    if p.len() != q.len() || p.len() > 20 {
        return Err(Error::invalid(
            "supports must match and have at most 20 atoms",
        ));
    }
    let mut best = f64::NEG_INFINITY;
    for mask in 1u32..(1 << p.len()) {
        let (mut ps, mut qs) = (0.0, 0.0);
        for i in 0..p.len() {
            if mask & (1 << i) != 0 {
                ps += p[i];
                qs += q[i];
            }
        }
        if ps > delta {
            best = best.max(((ps - delta) / qs).ln());
        }
    }
    Ok(best)
}

/// Monte-Carlo estimate of `P[D > threshold]` for the Gaussian privacy loss
/// `D = (2 theta^T v + |v|^2) / (2 sigma^2)`, `theta ~ N(0, sigma^2 I)`,
/// `|v| = shift_norm`.
///
/// `theta^T v` is `N(0, sigma^2 |v|^2)`, so each trial draws one standard
/// normal from the stream keyed by `(seed, trial)`.
pub fn gaussian_loss_tail(
    sigma: f64,
    shift_norm: f64,
    threshold: f64,
    trials: u64,
    seed: u64,
) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) || !(shift_norm > 0.0 && shift_norm.is_finite()) {
        return Err(Error::invalid(
            "sigma and shift_norm must be positive and finite",
        ));
    }
    if threshold.is_nan() {
        return Err(Error::invalid("threshold must be a number"));
    }
    if trials < MIN_TAIL_TRIALS {
        return Err(Error::invalid(format!(
            "at least {MIN_TAIL_TRIALS} trials are required, got {trials}"
        )));
    }
    let scale = sigma * shift_norm;
    let denom = 2.0 * sigma * sigma;
    let hits: u64 = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let z: f64 = keyed_rng(seed, trial).sample(StandardNormal);
            let loss = (2.0 * scale * z + shift_norm * shift_norm) / denom;
            u64::from(loss > threshold)
        })
        .sum();
    Ok(hits as f64 / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::privacy::kl_divergence_bound;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()) || a == b
    }

    /// Sum over all 4^T sequences, straight from the definition.
    fn naive(pair: &AtomicMechanismPair, steps: u32, eps_prime: f64) -> f64 {
        let mut terms = Vec::new();
        for code in 0..4u64.pow(steps) {
            let (mut a, mut b, mut c) = (1.0, 1.0, code);
            for _ in 0..steps {
                let atom = (c % 4) as usize;
                c /= 4;
                a *= pair.p0[atom];
                b *= pair.p1[atom];
            }
            let d = a - eps_prime.exp() * b;
            if d > 0.0 {
                terms.push(d);
            }
        }
        sorted_sum(terms)
    }

    #[test]
    fn pair_at_ln2() {
        let p = worst_case_pair(2f64.ln(), 0.0, PairVariant::Plain).unwrap();
        assert_eq!(p.p0[0], 0.0);
        assert!(close(p.p0[1], 2.0 / 3.0, 1e-15));
        assert!(close(p.p0[2], 1.0 / 3.0, 1e-15));
        assert_eq!(p.p0[3], 0.0);
        assert_eq!(p.p1, [0.0, p.p0[2], p.p0[1], 0.0]);
    }

    #[test]
    fn variants_coincide_without_delta() {
        let a = worst_case_pair(0.7, 0.0, PairVariant::Plain).unwrap();
        let b = worst_case_pair(0.7, 0.0, PairVariant::Tilde).unwrap();
        assert_eq!(a.p0, b.p0);
        assert_eq!(a.p1, b.p1);
    }

    #[test]
    fn tilde_distance() {
        let (e, d) = (0.1, 1e-3);
        let a = worst_case_pair(e, d, PairVariant::Plain).unwrap();
        let b = worst_case_pair(e, d, PairVariant::Tilde).unwrap();
        assert!(close(
            statistical_distance(&a.p0, &b.p0),
            d / (1.0 + e.exp()),
            1e-12
        ));
        for p in [a, b] {
            assert!((p.p0.iter().sum::<f64>() - 1.0).abs() <= 1e-15);
            assert!((p.p1.iter().sum::<f64>() - 1.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn plain_pair_is_exactly_eps_delta() {
        for (e, d) in [(0.1, 1e-3), (1.0, 0.0), (0.5, 0.2)] {
            let p = worst_case_pair(e, d, PairVariant::Plain).unwrap();
            let dm = approx_max_divergence(&p.p0, &p.p1, d).unwrap();
            assert!(close(dm, e, 1e-12), "{dm} vs {e}");
        }
    }

    #[test]
    fn single_step_is_delta() {
        for d in [0.0, 1e-8, 1e-3] {
            assert!(close(
                exact_composed_delta(0.3, d, 1, 0.3).unwrap(),
                d,
                1e-12
            ));
        }
    }

    #[test]
    fn full_charge_is_probability_of_atom_zero() {
        let d: f64 = 1e-4;
        let got = exact_composed_delta(0.2, d, 5, 5.0 * 0.2).unwrap();
        let want = -(5.0 * (-d).ln_1p()).exp_m1();
        assert!(close(got, want, 1e-12));
    }

    #[test]
    fn type_classes_match_enumeration() {
        for (e, d, ep) in [
            (0.2, 1e-4, 0.35),
            (0.5, 0.01, 0.0),
            (1.0, 0.0, 1.5),
            (0.05, 1e-6, 0.12),
        ] {
            for variant in [PairVariant::Plain, PairVariant::Tilde] {
                let pair = worst_case_pair(e, d, variant).unwrap();
                for t in 1..=6 {
                    let a = product_hockey_stick(&pair, t, ep).unwrap();
                    let b = naive(&pair, t as u32, ep);
                    assert!(close(a, b, 1e-12), "{variant:?} T={t}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn zero_eps_prime_is_total_variation() {
        let pair = worst_case_pair(0.3, 1e-3, PairVariant::Plain).unwrap();
        let classes = outcome_classes(&pair, 7).unwrap();
        let overlap = sorted_sum(classes.iter().map(|c| c.mass0().min(c.mass1())).collect());
        let hs = exact_composed_delta(0.3, 1e-3, 7, 0.0).unwrap();
        assert!(close(hs, 1.0 - overlap, 1e-12));
        let total: f64 = sorted_sum(classes.iter().map(OutcomeClass::mass0).collect());
        assert!(close(total, 1.0, 1e-13));
    }

    #[test]
    fn large_t_within_cap() {
        let v = exact_composed_delta(0.01, 1e-8, 10_000, 5.0).unwrap();
        assert!(v > 0.0 && v < 1.0);
        assert!(matches!(
            exact_composed_delta(0.01, 1e-8, 10_001, 5.0),
            Err(Error::ResourceLimit(_))
        ));
    }

    #[test]
    fn optimal_epsilon_inverts() {
        let (e, d) = (0.3, 1e-3);
        let one = exact_optimal_epsilon(e, d, 1, d).unwrap();
        assert!(!one.saturated);
        assert!((one.epsilon - e).abs() < 1e-10);

        let full = -(5.0 * (-d).ln_1p()).exp_m1();
        let five = exact_optimal_epsilon(e, d, 5, full).unwrap();
        assert!((five.epsilon - 5.0 * e).abs() < 1e-9);

        let low = exact_optimal_epsilon(e, d, 10, 1e-3 * 2.0).unwrap();
        let high = exact_optimal_epsilon(e, d, 10, 1e-2).unwrap();
        assert!(high.epsilon < low.epsilon);
        let at = exact_composed_delta(e, d, 10, high.epsilon).unwrap();
        assert!((at - 1e-2).abs() < 1e-10);

        let sat = exact_optimal_epsilon(e, d, 10, 1e-5).unwrap();
        assert!(sat.saturated);
        assert_eq!(sat.epsilon, 10.0 * e);
    }

    #[test]
    fn kl_matches_bound() {
        let zero = worst_case_pair(0.0, 0.0, PairVariant::Plain).unwrap();
        assert_eq!(kl_oracle(&zero).unwrap(), 0.0);
        let one = worst_case_pair(1.0, 0.0, PairVariant::Plain).unwrap();
        assert!(close(kl_oracle(&one).unwrap(), 0.46211715726000976, 1e-12));
        assert!(close(
            kl_oracle(&one).unwrap(),
            kl_divergence_bound(1.0).unwrap(),
            1e-12
        ));
        let half = worst_case_pair(0.5, 0.0, PairVariant::Plain).unwrap();
        assert!(kl_oracle(&half).unwrap() < 0.5 * 0.5 * 0.5f64.exp_m1());
        let leaky = worst_case_pair(0.5, 1e-3, PairVariant::Plain).unwrap();
        assert!(matches!(kl_oracle(&leaky), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn gaussian_tail_matches_normal_cdf() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let q = |z: f64| Normal::new(0.0, 1.0).unwrap().sf(z);
        let (l, sigma, tau, d): (f64, f64, f64, f64) = (1.0, 4.0, 256.0, 1e-3);
        let shift = 2.0 * l / tau;
        let trials = 400_000;
        let sd = |p: f64| (p * (1.0 - p) / trials as f64).sqrt();

        // threshold as stated for SGLD: the tail sits at Q(sqrt(ln(1/delta) / 2))
        let stated = (2.0 * 2f64.sqrt() * l * sigma / tau * (1.0 / d).ln().sqrt()
            + 4.0 * l * l / (tau * tau))
            / (2.0 * sigma * sigma);
        let est = gaussian_loss_tail(sigma, shift, stated, trials, 11).unwrap();
        let exact = q(((1.0 / d).ln() / 2.0).sqrt());
        assert!((est - exact).abs() <= 4.0 * sd(exact), "{est} vs {exact}");
        assert_eq!(
            est,
            gaussian_loss_tail(sigma, shift, stated, trials, 11).unwrap()
        );

        // doubling the linear term restores a tail of at most delta
        let doubled = (4.0 * 2f64.sqrt() * l * sigma / tau * (1.0 / d).ln().sqrt()
            + 4.0 * l * l / (tau * tau))
            / (2.0 * sigma * sigma);
        let est = gaussian_loss_tail(sigma, shift, doubled, trials, 11).unwrap();
        assert!(est <= d + 3.0 * (d / trials as f64).sqrt(), "{est}");
    }

    #[test]
    fn gaussian_tail_edges() {
        assert_eq!(gaussian_loss_tail(4.0, 2.0, 1e6, 10_000, 1).unwrap(), 0.0);
        let a = gaussian_loss_tail(1.0, 2.0, 1.0, 50_000, 3).unwrap();
        let b = gaussian_loss_tail(2.0, 2.0, 1.0, 50_000, 3).unwrap();
        assert!(b < a);
        assert!(gaussian_loss_tail(1.0, 1.0, 1.0, 9_999, 0).is_err());
    }
}
