//! Average partial effect estimation for a continuous treatment whose effect
//! interacts non-linearly with the confounders.
//!
//! The central estimator regresses the outcome on the exogenous part of the
//! treatment, `beta = E[nu Y] / E[nu^2]`, which equals `E[dY/dX]` when the
//! treatment error satisfies the normal-type moment ladder
//! `E[nu^{p+2}] = (p+1) E[nu^2] E[nu^p]`. Around it sit the DML
//! partialling-out estimator, the usual baselines, moment diagnostics, an IV
//! variant and a Monte Carlo harness.

pub mod datamodel;
pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod nuisance;
pub mod numkit;
pub mod rng;
pub mod simulation;

pub use datamodel::{ApeEstimate, ColumnRoles, Dataset, FoldAssignment, Method};
pub use error::{ApeError, Result};
