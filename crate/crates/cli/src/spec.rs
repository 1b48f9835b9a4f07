//! Experiment specification files.
//!
//! TOML is the primary format (comments allowed); a `.json` file is read as
//! JSON with the same structure. Unknown keys are rejected and every parse
//! error names the offending key path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ipslab_core::{Boundary, Domain, FieldSpec, ObservableSpec, SchemeParams};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Sample,
    Evolve,
    VarDecay,
    Localization,
    Inequalities,
    OracleCompare,
    Martingale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub dim: usize,
    pub side: f64,
    #[serde(default = "default_boundary")]
    pub boundary: Boundary,
}

fn default_boundary() -> Boundary {
    Boundary::Periodic
}

impl DomainSpec {
    pub fn build(&self) -> Result<Domain, CliError> {
        Ok(Domain::new(self.dim, self.side, self.boundary)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub rho: f64,
}

/// Scale knobs. Which ones are read depends on the experiment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scales {
    /// Localization cube sides `K`.
    #[serde(default)]
    pub k_cubes: Vec<f64>,
    /// Outer box side `L` (a multiple of every `l`); defaults to `10·l`.
    #[serde(default)]
    pub big: Option<u64>,
    /// Block sides `l`.
    #[serde(default)]
    pub small: Vec<u64>,
    /// Deviations `δ`.
    #[serde(default)]
    pub deltas: Vec<f64>,
    /// Densities for the chernoff and entropy grids; defaults to `params.rho`.
    #[serde(default)]
    pub rhos: Vec<f64>,
    /// Martingale scales `s`, increasing.
    #[serde(default)]
    pub s: Vec<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub eps_reg: f64,
}

fn default_beta() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    #[serde(default = "default_outer")]
    pub n_outer: usize,
    #[serde(default = "default_inner")]
    pub n_inner: usize,
    #[serde(default = "default_cond")]
    pub n_cond: usize,
}

fn default_outer() -> usize {
    1000
}

fn default_inner() -> usize {
    2
}

fn default_cond() -> usize {
    1
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            n_outer: default_outer(),
            n_inner: default_inner(),
            n_cond: default_cond(),
        }
    }
}

/// Opt-in unbiased variance reductions for `var-decay` and `oracle-compare`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reduction {
    /// Subtract the exact Poisson mean of the observable.
    #[serde(default)]
    pub known_mean: bool,
    /// Average over this many lattice translates per axis (0 = off).
    #[serde(default)]
    pub translates: usize,
}

/// Inequality checks run by the `inequalities` experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Chernoff,
    Entropy,
    #[serde(alias = "efron-stein")]
    EfronStein,
    Lemma42,
    #[serde(alias = "spectral")]
    SpectralAb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    pub domain: DomainSpec,
    pub params: Params,
    #[serde(default)]
    pub field: Option<FieldSpec>,
    #[serde(default)]
    pub observable: Option<ObservableSpec>,
    #[serde(default = "SchemeParams::exact")]
    pub scheme: SchemeParams,
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default)]
    pub scales: Scales,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default)]
    pub reduction: Reduction,
    #[serde(default)]
    pub checks: Vec<Check>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// A parse error; a missing field is named by its full path.
fn parse_error(path: String, message: String) -> CliError {
    let full = match message.strip_prefix("missing field `").and_then(|r| r.split('`').next()) {
        Some(field) if path == "." || path.is_empty() => field.to_string(),
        Some(field) => format!("{path}.{field}"),
        None => path,
    };
    CliError::Spec { path: full, message }
}

fn bad(path: &str, msg: impl Into<String>) -> CliError {
    CliError::Spec {
        path: path.to_string(),
        message: msg.into(),
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| parse_error(e.path().to_string(), e.inner().message().trim().to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| parse_error(e.path().to_string(), e.inner().to_string()))
    }

    /// Reads and validates a spec file.
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let spec = Self::from_path_unchecked(path)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a spec file; `.json` is parsed as JSON, anything else as TOML.
    pub fn from_path_unchecked(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let spec = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// Densities of the chernoff/entropy grid.
    pub fn grid_rhos(&self) -> Vec<f64> {
        if self.scales.rhos.is_empty() {
            vec![self.params.rho]
        } else {
            self.scales.rhos.clone()
        }
    }

    fn require_field(&self) -> Result<&FieldSpec, CliError> {
        self.field.as_ref().ok_or_else(|| bad("field", "this experiment needs a coefficient field"))
    }

    fn require_observable(&self) -> Result<&ObservableSpec, CliError> {
        self.observable.as_ref().ok_or_else(|| bad("observable", "this experiment needs an observable"))
    }

    /// Checks budgets and scale orderings before any work is done.
    pub fn validate(&self) -> Result<(), CliError> {
        use ExperimentKind::*;
        let d = &self.domain;
        if !(1..=3).contains(&d.dim) {
            return Err(bad("domain.dim", format!("dimension must be 1, 2 or 3, got {}", d.dim)));
        }
        if !(d.side.is_finite() && d.side > 0.0) {
            return Err(bad("domain.side", "side must be positive"));
        }
        if !(self.params.rho.is_finite() && self.params.rho > 0.0) {
            return Err(bad("params.rho", "density must be positive"));
        }
        let b = &self.budget;
        if b.n_outer < 1 || b.n_inner < 1 || b.n_cond < 1 {
            return Err(bad("budget", "budgets must be at least 1"));
        }
        if self.times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(bad("times", "times must be finite and non-negative"));
        }
        match self.experiment {
            Sample => {}
            Evolve | VarDecay | OracleCompare => {
                self.require_field()?;
                if self.experiment != Evolve {
                    self.require_observable()?;
                }
                if self.times.is_empty() {
                    return Err(bad("times", "need at least one time"));
                }
                if self.times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(bad("times", "times must be strictly increasing"));
                }
                if self.experiment != Evolve && b.n_outer < 2 {
                    return Err(bad("budget.n_outer", "need at least two outer draws"));
                }
                if self.reduction.translates > 0 && d.boundary != Boundary::Periodic {
                    return Err(bad("reduction.translates", "translates need a periodic domain"));
                }
                if self.experiment == OracleCompare {
                    match (self.require_field()?, self.require_observable()?) {
                        (FieldSpec::Constant { .. }, ObservableSpec::Linear { .. }) => {}
                        _ => return Err(bad("field", "oracle-compare needs a constant field and a linear observable")),
                    }
                }
            }
            Localization => {
                self.require_field()?;
                let lu = self.require_observable()?.build(self.params.rho)?.side();
                if self.times.len() != 1 || self.times[0] <= 0.0 {
                    return Err(bad("times", "localization takes exactly one positive time"));
                }
                if self.scales.k_cubes.is_empty() {
                    return Err(bad("scales.k_cubes", "need at least one cube side"));
                }
                for &k in &self.scales.k_cubes {
                    if k < lu {
                        return Err(bad("scales.k_cubes", format!("K = {k} is smaller than the observable side l_u = {lu}")));
                    }
                    if k > d.side / 2.0 {
                        return Err(bad("scales.k_cubes", format!("K = {k} exceeds L_sim/2 = {}", d.side / 2.0)));
                    }
                }
                if b.n_outer < 2 {
                    return Err(bad("budget.n_outer", "need at least two outer draws"));
                }
            }
            Inequalities => {
                if self.checks.is_empty() {
                    return Err(bad("checks", "list at least one check"));
                }
                for &l in &self.scales.small {
                    if l < 1 {
                        return Err(bad("scales.small", "block sides must be at least 1"));
                    }
                    if let Some(big) = self.scales.big {
                        if big % l != 0 {
                            return Err(bad("scales.big", format!("l = {l} does not divide L = {big}")));
                        }
                    }
                }
                let needs_grid = self.checks.iter().any(|c| matches!(c, Check::Chernoff | Check::Entropy));
                if needs_grid && (self.scales.small.is_empty() || self.scales.deltas.is_empty()) {
                    return Err(bad("scales", "chernoff and entropy need scales.small and scales.deltas"));
                }
                if self.grid_rhos().iter().any(|r| !(r.is_finite() && *r > 0.0)) {
                    return Err(bad("scales.rhos", "densities must be positive"));
                }
                if self.scales.deltas.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
                    return Err(bad("scales.deltas", "deviations must lie in (0, 1)"));
                }
                if self.checks.contains(&Check::Entropy) {
                    for r in self.grid_rhos() {
                        if let Some(d) = self.scales.deltas.iter().find(|d| **d >= r / 2.0) {
                            return Err(bad("scales.deltas", format!("entropy needs δ < ρ/2, got δ = {d} at ρ = {r}")));
                        }
                    }
                }
                if self.checks.contains(&Check::SpectralAb) {
                    if self.scales.small.len() < 2 {
                        return Err(bad("scales.small", "spectral_ab needs at least two block sides"));
                    }
                    match self.require_observable()? {
                        ObservableSpec::Linear { .. } => {}
                        _ => return Err(bad("observable", "spectral_ab needs a linear observable")),
                    }
                }
            }
            Martingale => {
                self.require_observable()?;
                let s = &self.scales.s;
                if s.len() < 3 || s.windows(2).any(|w| w[1] <= w[0]) || s[0] < 0.0 {
                    return Err(bad("scales.s", "need at least three increasing non-negative scales"));
                }
                if b.n_outer < 2 {
                    return Err(bad("budget.n_outer", "need at least two outer draws"));
                }
            }
        }
        Ok(())
    }
}

/// The spec grammar, one line per key.
pub fn print_schema() -> String {
    SCHEMA.to_string()
}

const SCHEMA: &str = r#"# Experiment spec (TOML; a .json file with the same structure is also accepted).
# Unknown keys are rejected.
experiment = "sample | evolve | var-decay | localization | inequalities | oracle-compare | martingale"
seed = 0                      # master seed (u64); --seed overrides
output = "results.csv"        # optional; --out overrides, stdout if absent
times = [0.0, 1.0]            # strictly increasing observation times
checks = ["chernoff", "entropy", "efron_stein", "lemma42", "spectral_ab"]  # inequalities only
                              # ("efron-stein" and "spectral" are accepted too)

[domain]
dim = 1                       # 1, 2 or 3
side = 40.0                   # simulation box [0, side)^dim
boundary = "periodic"         # periodic (default) | free

[params]
rho = 1.0                     # Poisson density

[field]                       # required by evolve, var-decay, localization, oracle-compare
kind = "constant"             # constant (with c) | lonely_particle
c = 0.5

[observable]                  # required by var-decay, localization, oracle-compare, martingale
kind = "linear"               # linear | plateau | centered_void
cap = 64.0                    # linear and plateau: declared bound
side = 1.0                    # centered_void: cube side
profile = { shape = "indicator", side = 1.0 }   # linear: indicator (side) | bump (radius)

[scheme]
scheme = "exact-gaussian"     # exact-gaussian (default) | conductance-chain
dt = 0.001                    # chain time step
eps = 0.1                     # chain mesh
cell_size = 1.0               # neighbour cell size

[scales]
k_cubes = [2.0, 4.0]          # localization cube sides K, l_u <= K <= side/2
big = 100                     # L, a multiple of every l (default 10*l)
small = [10, 100]             # block sides l
deltas = [0.1, 0.2]           # deviations delta, in (0, 1)
rhos = [0.5, 1.0, 2.0]        # densities for chernoff/entropy (default params.rho)
s = [0.2, 0.4, 0.8]           # martingale scales, increasing
beta = 1.0                    # multiscale weight alpha_s = exp(s/beta)
eps_reg = 0.0                 # regularization width of A_s

[budget]
n_outer = 1000                # outer Poisson draws (>= 2 for estimators)
n_inner = 2                   # replica pairs per draw
n_cond = 1                    # resamples per conditional expectation (the built-in
                              # experiments use unbiased two-copy products instead)

[reduction]
known_mean = false            # subtract the exact Poisson mean
translates = 0                # lattice translates per axis (periodic only)
"#;

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
experiment = "var-decay"
times = [0.0, 1.0]
[domain]
dim = 1
side = 20.0
[params]
rho = 1.0
[field]
kind = "constant"
c = 0.5
[observable]
kind = "linear"
profile = { shape = "indicator", side = 1.0 }
"#;

    #[test]
    fn minimal_spec_parses_with_defaults() {
        let s = ExperimentSpec::from_toml(MINIMAL).unwrap();
        s.validate().unwrap();
        assert_eq!(s.budget, Budget::default());
        assert_eq!(s.scheme, SchemeParams::exact());
        assert_eq!(s.domain.boundary, Boundary::Periodic);
    }

    #[test]
    fn round_trips_through_toml_and_json() {
        let s = ExperimentSpec::from_toml(MINIMAL).unwrap();
        assert_eq!(ExperimentSpec::from_toml(&s.to_toml()).unwrap(), s);
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(ExperimentSpec::from_json(&j).unwrap(), s);
    }

    #[test]
    fn missing_density_names_the_path() {
        let text = MINIMAL.replace("rho = 1.0", "");
        let e = ExperimentSpec::from_toml(&text).unwrap_err().to_string();
        assert!(e.contains("`params.rho`"), "{e}");
        let e = ExperimentSpec::from_toml("experiment = \"sample\"").unwrap_err().to_string();
        assert!(e.contains("`domain`"), "{e}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = MINIMAL.replace("rho = 1.0", "rho = 1.0\nrh0 = 2.0");
        let e = ExperimentSpec::from_toml(&text).unwrap_err().to_string();
        assert!(e.contains("params") && e.contains("rh0"), "{e}");
    }

    #[test]
    fn infeasible_cube_is_named() {
        let text = MINIMAL.replace("var-decay", "localization").replace("[0.0, 1.0]", "[4.0]") + "[scales]\nk_cubes = [12.0]\n";
        let e = ExperimentSpec::from_toml(&text).unwrap().validate().unwrap_err().to_string();
        assert!(e.contains("L_sim/2"), "{e}");
    }

    #[test]
    fn schema_lists_every_key() {
        let mut s = ExperimentSpec::from_toml(MINIMAL).unwrap();
        s.output = Some("x.csv".into());
        s.scales.big = Some(10);
        let v: toml::Value = toml::from_str(&s.to_toml()).unwrap();
        let schema = print_schema();
        fn walk(v: &toml::Value, schema: &str) {
            if let toml::Value::Table(t) = v {
                for (k, sub) in t {
                    assert!(schema.contains(&format!("{k} =")) || schema.contains(&format!("[{k}]")), "schema lacks {k}");
                    walk(sub, schema);
                }
            }
        }
        walk(&v, &schema);
        assert!(schema.contains("checks ="));
    }
}
