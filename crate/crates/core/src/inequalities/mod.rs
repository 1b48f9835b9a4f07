//! Standalone inequalities used by the decay argument, each checked against
//! an exact value, a quadrature or a Monte Carlo estimate.

pub mod chernoff;
pub mod efron_stein;
pub mod entropy;
pub mod fit;
pub mod lemma42;
pub mod localization;
pub mod spectral;

use serde::Serialize;

pub use chernoff::{check_chernoff, ln_poisson_pmf, ln_poisson_tails};
pub use efron_stein::{check_efron_stein, gauss_legendre, neumann_poincare_constant, EsFunction};
pub use entropy::{check_entropy, entropy_ratio, fit_entropy_constant};
pub use fit::{fit_decay_exponent, SlopeFit};
pub use lemma42::{check_lemma42, random_spectral_problem, SpectralProblem};
pub use localization::{check_localization, LocalizationReport, LocalizationRow};
pub use spectral::{check_spectral_ab, SpectralAbReport};

/// One evaluated bound at one parameter point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub check: String,
    pub params: Vec<(String, f64)>,
    pub lhs: f64,
    /// Error bar on `lhs`; zero for exact evaluations.
    pub lhs_err: f64,
    pub rhs: f64,
    pub margin: f64,
    /// False when the point lies outside the regime the bound is claimed for.
    pub in_regime: bool,
    pub pass: bool,
    pub note: String,
}

impl BoundReport {
    pub fn new(check: &str, params: Vec<(String, f64)>, lhs: f64, lhs_err: f64, rhs: f64) -> Self {
        BoundReport {
            check: check.to_string(),
            params,
            lhs,
            lhs_err,
            rhs,
            margin: rhs - lhs,
            in_regime: true,
            pass: lhs <= rhs + 3.0 * lhs_err,
            note: String::new(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}

pub(crate) fn params(kv: &[(&str, f64)]) -> Vec<(String, f64)> {
    kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}
