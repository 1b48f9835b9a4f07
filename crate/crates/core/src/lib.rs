//! Poisson configurations, configuration-dependent diffusivities, interacting
//! Brownian dynamics and estimators for variance decay and localization.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod configuration;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod field;
pub mod inequalities;
pub mod neighbors;
pub mod observable;
pub mod oracle;
pub mod rng;
pub mod stats;

pub use configuration::{Boundary, Configuration, Domain, PoissonParams, Region};
pub use dynamics::{evolve, evolve_pair, trajectory, Scheme, SchemeParams, Trajectory};
pub use error::{Error, Result};
pub use estimators::{estimate_ut, estimate_var_ut, Ensemble, EstimatorResult, VarOptions};
pub use inequalities::BoundReport;
pub use field::{CoefficientField, ConstantField, FieldSpec, LonelyParticleField, MatrixD};
pub use observable::{LocalFunction, Observable, ObservableSpec, Profile};
pub use oracle::{heat_convolve, heat_convolve_onto, var_exact, var_exact_t, GridFunction};
pub use rng::{Stream, Tag};
