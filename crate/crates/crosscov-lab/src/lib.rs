//! Monte Carlo verification toolkit for operator-norm deviations of sample
//! cross-covariance matrices.
//!
//! Given paired observations `(X_i, Y_i)` the central object is the deviation
//!
//! ```text
//! || (1/N) sum_i X_i Y_i^T  -  E X Y^T ||
//! ```
//!
//! whose size is governed not by the ambient dimensions but by the effective
//! ranks `r = tr(Sigma) / ||Sigma||` of the two marginal covariance matrices.
//! The crate provides
//!
//! - covariance factories with prescribed spectra ([`spectra`]),
//! - joint Gaussian models with tunable cross-coupling and their regression
//!   decomposition `Y = L X + Z` ([`joint`]),
//! - seeded, bit-reproducible samplers for Gaussian and bounded isotropic
//!   families ([`samplers`]),
//! - deviation statistics over replicated experiments ([`estimators`]),
//! - closed-form rate evaluators and geometric set summaries ([`bounds`]),
//! - experiment drivers: scaling-law fits, two-sidedness ratio grids,
//!   dependence-insensitivity and decomposition checks ([`experiments`]),
//! - a config-driven CLI ([`cli`]).
//!
//! The mdbook under `book/` walks through the concepts; its code snippets are
//! compiled as doc-tests so the guide cannot drift from the library.

pub mod bounds;
pub mod cli;
pub mod config;
pub mod estimators;
pub mod experiments;
pub mod joint;
pub mod matops;
pub mod report;
pub mod samplers;
pub mod spectra;

pub use matops::{MatOpsError, NormMethod, SymMatrix};
