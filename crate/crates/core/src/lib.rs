//! Tabular Bayesian risk-aware reinforcement learning.
//!
//! Quantile Bayesian-risk MDP planning over Dirichlet posteriors, an adaptive
//! per-pair quantile schedule, a pseudo-episodic online learner with a
//! posterior-sampling baseline, benchmark environments, regret and robustness
//! metrics, and numerical checks of the method's analytic guarantees.

// Negated comparisons are used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brmdp;
pub mod envs;
pub mod experiment;
pub mod error;
pub mod mdp;
pub mod metrics;
pub mod online;
pub mod posterior;
pub mod risk;
pub mod schedule;
pub mod theory;

pub use error::{Error, Result};
pub use mdp::{Policy, PlanResult, TabularMdp, ValueFn};
pub use posterior::DirichletPosterior;
