//! Per-experiment subcommands: a spec file (or a default skeleton) with
//! command-line overrides applied on top.

use std::path::PathBuf;

use clap::Args;

use ipslab_core::estimators::geometric_grid;
use ipslab_core::{FieldSpec, ObservableSpec, Profile, SchemeParams};

use crate::error::CliError;
use crate::spec::{Budget, Check, DomainSpec, ExperimentKind, ExperimentSpec, Params, Reduction, Scales};

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Spec file to start from; a default skeleton is used if absent.
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub side: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// `constant:C` or `lonely_particle`.
    #[arg(long)]
    pub field: Option<String>,
    /// Observation times (`--t` and `--snapshots` are aliases).
    #[arg(long, alias = "t", alias = "snapshots", value_delimiter = ',')]
    pub times: Option<Vec<f64>>,
    /// `exact` or `chain`.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub n_outer: Option<usize>,
    #[arg(long)]
    pub n_inner: Option<usize>,
    /// Localization cube sides.
    #[arg(long, value_delimiter = ',')]
    pub k_cubes: Option<Vec<f64>>,
    /// Martingale scales.
    #[arg(long, value_delimiter = ',')]
    pub s: Option<Vec<f64>>,
    /// Inequality checks: chernoff, entropy, efron-stein, spectral, lemma42
    /// or localization (alone).
    #[arg(long, value_delimiter = ',')]
    pub which: Option<Vec<String>>,
    /// Grid axis `KEY=V1,V2,...` with KEY one of rho, l, delta, L; repeatable.
    #[arg(long)]
    pub grid: Vec<String>,
}

fn flag(name: &str, msg: impl Into<String>) -> CliError {
    CliError::Spec {
        path: name.to_string(),
        message: msg.into(),
    }
}

/// Defaults that make every kind runnable without a file.
pub fn skeleton(kind: ExperimentKind) -> ExperimentSpec {
    use ExperimentKind::*;
    let needs_field = matches!(kind, Evolve | VarDecay | OracleCompare | Localization);
    let needs_obs = matches!(kind, VarDecay | OracleCompare | Localization | Martingale);
    let times = match kind {
        VarDecay | OracleCompare => vec![0.0, 1.0, 4.0, 16.0],
        Evolve => vec![1.0],
        Localization => vec![4.0],
        _ => Vec::new(),
    };
    let mut scales = Scales {
        beta: 1.0,
        ..Default::default()
    };
    match kind {
        Localization => scales.k_cubes = vec![2.0, 4.0, 6.0, 8.0],
        Martingale => scales.s = geometric_grid(0.2, 1.6, 32).expect("valid grid"),
        Inequalities => {
            scales.small = vec![10, 100];
            scales.deltas = vec![0.1, 0.2];
        }
        _ => {}
    }
    ExperimentSpec {
        experiment: kind,
        seed: 0,
        domain: DomainSpec {
            dim: 1,
            side: 40.0,
            boundary: ipslab_core::Boundary::Periodic,
        },
        params: Params { rho: 1.0 },
        field: needs_field.then_some(FieldSpec::Constant { c: 0.5 }),
        observable: needs_obs.then_some(ObservableSpec::Linear {
            profile: Profile::Indicator { side: 1.0 },
            cap: 64.0,
        }),
        scheme: SchemeParams::exact(),
        times,
        scales,
        budget: Budget::default(),
        reduction: Reduction::default(),
        checks: if kind == Inequalities { vec![Check::Chernoff, Check::Entropy, Check::EfronStein, Check::Lemma42] } else { Vec::new() },
        output: None,
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, text: &str) -> Result<Vec<T>, CliError> {
    text.split(',').map(|v| v.trim().parse().map_err(|_| flag("--grid", format!("bad value `{v}` for {key}")))).collect()
}

impl Overrides {
    /// Loads the base spec and applies the overrides for subcommand `kind`.
    pub fn build(&self, kind: ExperimentKind) -> Result<ExperimentSpec, CliError> {
        let mut spec = match &self.spec {
            Some(p) => {
                let mut s = ExperimentSpec::from_path_unchecked(p)?;
                s.experiment = kind;
                s
            }
            None => skeleton(kind),
        };
        self.apply(&mut spec)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn apply(&self, spec: &mut ExperimentSpec) -> Result<(), CliError> {
        if let Some(d) = self.dim {
            spec.domain.dim = d;
        }
        if let Some(s) = self.side {
            spec.domain.side = s;
        }
        if let Some(r) = self.rho {
            spec.params.rho = r;
        }
        if let Some(f) = &self.field {
            spec.field = Some(match f.split_once(':') {
                Some(("constant", c)) => FieldSpec::Constant {
                    c: c.parse().map_err(|_| flag("--field", format!("bad constant `{c}`")))?,
                },
                None if f == "lonely_particle" || f == "lonely-particle" => FieldSpec::LonelyParticle {},
                _ => return Err(flag("--field", format!("expected `constant:C` or `lonely_particle`, got `{f}`"))),
            });
        }
        if let Some(t) = &self.times {
            spec.times = t.clone();
        }
        if let Some(s) = &self.scheme {
            let (dt, eps) = (spec.scheme.dt, spec.scheme.eps);
            spec.scheme = match s.as_str() {
                "exact" | "exact-gaussian" => SchemeParams::exact(),
                "chain" | "conductance-chain" => SchemeParams::chain(dt, eps),
                _ => return Err(flag("--scheme", format!("expected `exact` or `chain`, got `{s}`"))),
            };
        }
        if let Some(dt) = self.dt {
            spec.scheme.dt = dt;
        }
        if let Some(eps) = self.eps {
            spec.scheme.eps = eps;
        }
        if let Some(n) = self.n_outer {
            spec.budget.n_outer = n;
        }
        if let Some(n) = self.n_inner {
            spec.budget.n_inner = n;
        }
        if let Some(k) = &self.k_cubes {
            spec.scales.k_cubes = k.clone();
        }
        if let Some(s) = &self.s {
            spec.scales.s = s.clone();
        }
        if let Some(which) = &self.which {
            if which.iter().any(|w| w == "localization") {
                if which.len() > 1 {
                    return Err(flag("--which", "localization cannot be combined with other checks"));
                }
                let base = skeleton(ExperimentKind::Localization);
                spec.experiment = ExperimentKind::Localization;
                spec.field.get_or_insert_with(|| base.field.clone().expect("skeleton field"));
                spec.observable.get_or_insert_with(|| base.observable.clone().expect("skeleton observable"));
                if spec.times.len() != 1 {
                    spec.times = base.times.clone();
                }
                if spec.scales.k_cubes.is_empty() {
                    spec.scales.k_cubes = base.scales.k_cubes.clone();
                }
            } else {
                spec.checks = which
                    .iter()
                    .map(|w| serde_json::from_value(serde_json::Value::String(w.clone())).map_err(|_| flag("--which", format!("unknown check `{w}`"))))
                    .collect::<Result<_, _>>()?;
            }
        }
        for g in &self.grid {
            let (key, values) = g.split_once('=').ok_or_else(|| flag("--grid", format!("expected KEY=V1,V2,..., got `{g}`")))?;
            match key {
                "rho" => spec.scales.rhos = parse_list(key, values)?,
                "l" => spec.scales.small = parse_list(key, values)?,
                "delta" => spec.scales.deltas = parse_list(key, values)?,
                "L" => {
                    let v: Vec<u64> = parse_list(key, values)?;
                    if v.len() != 1 {
                        return Err(flag("--grid", "L takes a single value"));
                    }
                    spec.scales.big = Some(v[0]);
                }
                _ => return Err(flag("--grid", format!("unknown grid key `{key}` (rho, l, delta, L)"))),
            }
        }
        Ok(())
    }
}
