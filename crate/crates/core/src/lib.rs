//! Privacy accounting for iterative learning algorithms and the
//! generalization guarantees it implies.
//!
//! * [`privacy`]: budgets, composition theorems and baselines.
//! * [`generalization`]: from a budget to high-probability generalization
//!   bounds, with the baselines they are compared against.
//! * [`oracle`]: exact worst-case composition by type-class enumeration and
//!   Monte-Carlo checks.
//! * [`applications`]: end-to-end accountants for SGLD and differentially
//!   private federated learning.
//! * [`simulator`]: small synthetic runs of both algorithms.
//! * [`harness`]: configuration, sweeps and reports behind the CLI.

pub mod applications;
pub mod error;
pub mod generalization;
pub mod harness;
pub mod numeric;
pub mod oracle;
pub mod privacy;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};
pub use privacy::{
    compose_baseline, compose_delta, compose_epsilon, compose_general, compose_homogeneous,
    kl_divergence_bound, BoundaryAssignment, CompositionResult, EpsilonBreakdown, HomogeneousMode,
    IterationSpec, Method, PrivacyBudget, SlackParameter,
};
