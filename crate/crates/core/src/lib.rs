//! Distributed parameter estimation and social learning over randomized
//! gossip networks.
//!
//! Agents hold a dual accumulator of log-likelihoods, average it pairwise
//! whenever a gossip edge fires, and project it back onto the probability
//! simplex with a KL proximal step from their prior. With unit step size the
//! centralized version of that update is exactly Bayes' rule, and the
//! distributed version produces a Gibbs belief over the states.
//!
//! Module map:
//!
//! | module          | contents                                               |
//! |-----------------|--------------------------------------------------------|
//! | [`simplex`]     | beliefs, KL divergence, KL-proximal projection         |
//! | [`model`]       | per-agent likelihood tables, sampling, identifiability |
//! | [`network`]     | graphs, contact matrices, gossip events, `E[W]`        |
//! | [`centralized`] | dual averaging and the Bayes recursion                 |
//! | [`distributed`] | gossip dual averaging and its closed-form Gibbs belief |
//! | [`analysis`]    | limits, discrimination, rate bounds, slope fits        |
//! | [`scenario`]    | scenario files, validation, seeded multi-trial runs    |
//! | [`oracle`]      | recursion / matrix-form / closed-form cross-checks     |
//! | [`output`]      | CSV, JSON and event-log serialization                  |

// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod centralized;
pub mod distributed;
mod error;
pub mod model;
pub mod network;
pub mod oracle;
pub mod output;
pub mod scenario;
pub mod seed;
pub mod simplex;

pub use error::{Error, Result};

/// Absolute tolerance on the unit-sum constraint of a belief.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Absolute tolerance used when comparing likelihood tables entrywise.
pub const EQUIVALENCE_TOL: f64 = 1e-12;
