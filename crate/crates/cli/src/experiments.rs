//! One runner per experiment kind. Each returns a result table, whether all
//! of its checks passed, and kind-specific summary fields.

use rand::Rng;
use serde_json::{json, Value};

use ipslab_core::configuration::sample_poisson;
use ipslab_core::estimators::{bracket_isometry_check, estimate_var_ut_series, lattice_translates, multiscale_functional, BlockCounts};
use ipslab_core::field::CoefficientField;
use ipslab_core::inequalities::{
    check_chernoff, check_efron_stein, check_entropy, check_lemma42, check_localization, check_spectral_ab, fit_decay_exponent,
    fit_entropy_constant, random_spectral_problem, EsFunction,
};
use ipslab_core::observable::Linear;
use ipslab_core::{trajectory, var_exact_t, BoundReport, Domain, Ensemble, FieldSpec, Observable, ObservableSpec, PoissonParams, Stream, Tag, VarOptions};

use crate::error::CliError;
use crate::spec::{Check, ExperimentKind, ExperimentSpec};
use crate::table::{Cell, Table};

/// Entropy constants above this fail the `entropy` check.
pub const MAX_ENTROPY_CONSTANT: f64 = 5.0;
/// Random eigenvalue-perturbation problems are drawn at this size.
pub const PERTURBATION_SIZE: usize = 8;

pub struct Outcome {
    pub table: Table,
    pub pass: bool,
    pub summary: Value,
    /// Number of Monte Carlo replicas drawn, for the metadata.
    pub replicas: u64,
}

/// A seed for sub-experiment `j`, independent of its siblings.
fn sub_seed(seed: u64, j: usize) -> u64 {
    Stream::new(seed).derive(Tag::Trial, j as u64).fingerprint()
}

pub fn run_kind(spec: &ExperimentSpec, seed: u64) -> Result<Outcome, CliError> {
    let domain = spec.domain.build()?;
    match spec.experiment {
        ExperimentKind::Sample => sample(spec, &domain, seed),
        ExperimentKind::Evolve => evolve(spec, &domain, seed),
        ExperimentKind::VarDecay => var_decay(spec, &domain, seed, false),
        ExperimentKind::OracleCompare => var_decay(spec, &domain, seed, true),
        ExperimentKind::Localization => localization(spec, &domain, seed),
        ExperimentKind::Inequalities => inequalities(spec, &domain, seed),
        ExperimentKind::Martingale => martingale(spec, &domain, seed),
    }
}

fn coord_columns(dim: usize, lead: &[&str]) -> Vec<String> {
    lead.iter().map(|s| s.to_string()).chain((0..dim).map(|k| format!("x{k}"))).collect()
}

fn sample(spec: &ExperimentSpec, domain: &Domain, seed: u64) -> Result<Outcome, CliError> {
    let rho = spec.params.rho;
    let mu = sample_poisson(domain, &PoissonParams::new(rho, seed), &Stream::new(seed))?;
    let mut table = Table {
        columns: coord_columns(domain.dim(), &[]),
        rows: Vec::new(),
    };
    for p in mu.points() {
        table.push(p.iter().map(|&x| Cell::Num(x)).collect());
    }
    Ok(Outcome {
        table,
        pass: true,
        summary: json!({"count": mu.len(), "expected": rho * domain.volume()}),
        replicas: 1,
    })
}

fn build_field(spec: &ExperimentSpec) -> Result<std::sync::Arc<dyn CoefficientField>, CliError> {
    Ok(spec.field.as_ref().expect("validated").build()?)
}

fn build_observable(spec: &ExperimentSpec, domain: &Domain) -> Result<Observable, CliError> {
    let u = spec.observable.as_ref().expect("validated").build(spec.params.rho)?;
    Ok(Observable::centered(u, domain))
}

fn evolve(spec: &ExperimentSpec, domain: &Domain, seed: u64) -> Result<Outcome, CliError> {
    let field = build_field(spec)?;
    spec.scheme.validate(field.as_ref(), domain.dim())?;
    let root = Stream::new(seed);
    let mu0 = sample_poisson(domain, &PoissonParams::new(spec.params.rho, seed), &root.derive(Tag::Outer, 0))?;
    let tr = trajectory(&mu0, field.as_ref(), &spec.times, &spec.scheme, &root.derive(Tag::Inner, 0))?;
    let mut table = Table {
        columns: coord_columns(domain.dim(), &["t", "particle"]),
        rows: Vec::new(),
    };
    let mut push = |t: f64, mu: &ipslab_core::Configuration| {
        for (i, p) in mu.points().enumerate() {
            let mut row = vec![Cell::Num(t), Cell::Int(i as u64)];
            row.extend(p.iter().map(|&x| Cell::Num(x)));
            table.push(row);
        }
    };
    if spec.times[0] > 0.0 {
        push(0.0, &tr.initial);
    }
    for (t, mu) in &tr.snapshots {
        push(*t, mu);
    }
    Ok(Outcome {
        table,
        pass: true,
        summary: json!({"particles": mu0.len(), "snapshots": tr.snapshots.len()}),
        replicas: 1,
    })
}

/// `var-decay`, and with `oracle` the comparison against the heat-kernel
/// variance (constant field `c`, so `u_t` is the heat flow run for time `2ct`).
fn var_decay(spec: &ExperimentSpec, domain: &Domain, seed: u64, oracle: bool) -> Result<Outcome, CliError> {
    let field = build_field(spec)?;
    let u = build_observable(spec, domain)?;
    let rho = spec.params.rho;
    let ens = Ensemble {
        domain: *domain,
        rho,
        field: field.as_ref(),
        scheme: spec.scheme,
    };
    let b = &spec.budget;
    let mut opts = VarOptions::new(b.n_outer, b.n_inner, seed);
    if spec.reduction.known_mean {
        let m = u
            .function()
            .poisson_mean(rho, domain.dim())
            .ok_or_else(|| CliError::Spec {
                path: "reduction.known_mean".into(),
                message: "this observable has no closed-form Poisson mean".into(),
            })?;
        opts = opts.with_known_mean(m);
    }
    if spec.reduction.translates > 0 {
        opts = opts.with_translates(lattice_translates(domain, spec.reduction.translates));
    }
    let rs = estimate_var_ut_series(&u, &ens, &spec.times, &opts)?;

    let exact: Option<Vec<f64>> = if oracle {
        let (c, profile) = match (spec.field.as_ref(), spec.observable.as_ref()) {
            (Some(FieldSpec::Constant { c }), Some(ObservableSpec::Linear { profile, .. })) => (*c, profile),
            _ => unreachable!("validated"),
        };
        let h = [0.005f64, 0.02, 0.05][domain.dim() - 1].min(profile.side() / 20.0);
        let g = profile.to_grid(domain.dim(), h)?;
        Some(spec.times.iter().map(|&t| var_exact_t(&g, rho, 2.0 * c * t)).collect::<Result<_, _>>()?)
    } else {
        None
    };

    let mut cols = if oracle {
        vec!["t", "var_mc", "stderr", "var_exact", "z"]
    } else {
        vec!["t", "estimate", "stderr"]
    };
    cols.extend(["n_outer", "n_inner", "seed"]);
    let mut table = Table::new(&cols);
    let mut pass = true;
    let mut max_z = 0.0f64;
    for (i, (t, r)) in spec.times.iter().zip(&rs).enumerate() {
        let mut row: Vec<Cell> = vec![(*t).into(), r.estimate.into(), r.stderr.into()];
        if let Some(ex) = &exact {
            let z = r.z_against(ex[i]);
            let z = if z.is_nan() { 0.0 } else { z };
            pass &= z.abs() <= 3.0;
            max_z = max_z.max(z.abs());
            row.extend([ex[i].into(), z.into()]);
        }
        row.extend([r.n_outer.into(), r.n_inner.into(), r.seed.into()]);
        table.push(row);
    }
    let series: Vec<_> = spec.times.iter().zip(&rs).filter(|(t, r)| **t > 0.0 && r.estimate > 0.0).map(|(t, r)| (*t, r.estimate, r.stderr)).collect();
    let fit = if series.len() >= 2 { fit_decay_exponent(&series).ok() } else { None };
    let mut summary = json!({
        "slope": fit.as_ref().map(|f| f.slope),
        "slope_err": fit.as_ref().map(|f| f.slope_err),
    });
    if oracle {
        summary["max_abs_z"] = json!(max_z);
    }
    Ok(Outcome {
        table,
        pass,
        summary,
        replicas: (b.n_outer * 2 * b.n_inner * spec.times.len().max(1)) as u64,
    })
}

fn localization(spec: &ExperimentSpec, domain: &Domain, seed: u64) -> Result<Outcome, CliError> {
    let field = build_field(spec)?;
    let u = build_observable(spec, domain)?;
    let ens = Ensemble {
        domain: *domain,
        rho: spec.params.rho,
        field: field.as_ref(),
        scheme: spec.scheme,
    };
    let b = &spec.budget;
    let rep = check_localization(&u, &ens, spec.times[0], &spec.scales.k_cubes, b.n_outer, b.n_inner, seed)?;
    let mut table = Table::new(&["K", "K_over_sqrt_t", "ratio", "stderr", "n_outer", "n_inner", "seed"]);
    for r in &rep.rows {
        table.push(vec![r.k.into(), r.x.into(), r.ratio.into(), r.stderr.into(), b.n_outer.into(), b.n_inner.into(), seed.into()]);
    }
    Ok(Outcome {
        table,
        pass: rep.pass,
        summary: json!({
            "t": rep.t,
            "mean_u2": rep.mean_u2,
            "slope": rep.slope,
            "slope_err": rep.slope_err,
            "c_fit": rep.c_fit,
            "decreasing": rep.decreasing,
        }),
        replicas: (b.n_outer * 2 * b.n_inner * rep.rows.len()) as u64,
    })
}

fn bound_table(reports: &[BoundReport]) -> Table {
    let mut table = Table::new(&["check", "params", "lhs", "lhs_err", "rhs", "in_regime", "pass", "note"]);
    for r in reports {
        let params: Vec<String> = r.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        table.push(vec![
            r.check.as_str().into(),
            params.join(";").into(),
            r.lhs.into(),
            r.lhs_err.into(),
            r.rhs.into(),
            r.in_regime.into(),
            r.pass.into(),
            r.note.as_str().into(),
        ]);
    }
    table
}

fn big_for(spec: &ExperimentSpec, l: u64) -> u64 {
    spec.scales.big.unwrap_or(10 * l)
}

/// Block counts drawn uniformly from the δ-good window of each block.
fn random_good_counts<R: Rng>(dim: usize, big: u64, l: u64, rho: f64, delta: f64, rng: &mut R) -> BlockCounts {
    let mean = rho * (l as f64).powi(dim as i32);
    let lo = (mean * (1.0 - delta) - 1e-9 * mean).ceil().max(0.0) as u64;
    let hi = (mean * (1.0 + delta) + 1e-9 * mean).floor() as u64;
    let n = ((big / l) as usize).pow(dim as u32);
    BlockCounts {
        dim,
        big,
        small: l,
        counts: (0..n).map(|_| rng.gen_range(lo..=hi)).collect(),
    }
}

fn inequalities(spec: &ExperimentSpec, domain: &Domain, seed: u64) -> Result<Outcome, CliError> {
    let rho = spec.params.rho;
    let dim = domain.dim();
    let sc = &spec.scales;
    let b = &spec.budget;
    let mut reports = Vec::new();
    let mut summary = serde_json::Map::new();
    let mut replicas = 0u64;
    let rhos = spec.grid_rhos();
    for (j, check) in spec.checks.iter().enumerate() {
        match check {
            Check::Chernoff => {
                for &rho in &rhos {
                    for &l in &sc.small {
                        for &delta in &sc.deltas {
                            reports.push(check_chernoff(rho, l as f64, big_for(spec, l) as f64, delta, dim)?);
                        }
                    }
                }
            }
            Check::Entropy => {
                let mut rng = Stream::new(sub_seed(seed, j)).rng();
                let mut samples = Vec::new();
                for &rho in &rhos {
                    for &l in &sc.small {
                        for &delta in &sc.deltas {
                            for _ in 0..b.n_outer {
                                samples.push((random_good_counts(dim, big_for(spec, l), l, rho, delta, &mut rng), rho, delta));
                            }
                        }
                    }
                }
                let c = fit_entropy_constant(&samples)?;
                for (m, r, d) in &samples {
                    let rep = check_entropy(m, *r, *d, c)?;
                    if !rep.pass {
                        reports.push(rep);
                    }
                }
                let mut fit = BoundReport::new("entropy_constant", vec![("samples".into(), samples.len() as f64)], c, 0.0, MAX_ENTROPY_CONSTANT);
                fit.note = "fitted C over all samples".into();
                reports.push(fit);
                summary.insert("entropy_c".into(), json!(c));
                replicas += samples.len() as u64;
            }
            Check::EfronStein => {
                let ls: Vec<f64> = if sc.small.is_empty() { vec![1.0] } else { sc.small.iter().map(|&l| l as f64).collect() };
                for n in 1..=3usize {
                    if n * dim > 4 {
                        continue;
                    }
                    for f in EsFunction::family() {
                        for &l in &ls {
                            reports.push(check_efron_stein(n, l, dim, f, 16)?);
                        }
                    }
                }
            }
            Check::Lemma42 => {
                let mut rng = Stream::new(sub_seed(seed, j)).rng();
                for _ in 0..b.n_outer {
                    let p = random_spectral_problem(PERTURBATION_SIZE, &mut rng)?;
                    let eps = if p.v_sup() > 0.0 { 0.4 * p.gap() / (2.0 * p.v_sup()) } else { 0.1 };
                    reports.push(check_lemma42(&p, eps)?);
                }
                replicas += b.n_outer as u64;
            }
            Check::SpectralAb => {
                let lin = match spec.observable.as_ref().expect("validated") {
                    ObservableSpec::Linear { profile, cap } => Linear::new(profile.clone(), *cap)?,
                    _ => unreachable!("validated"),
                };
                let big = sc.big.unwrap_or(10 * sc.small.iter().max().copied().unwrap_or(1));
                let rep = check_spectral_ab(&lin, domain, rho, big, &sc.small, b.n_outer, sub_seed(seed, j))?;
                let mut growth = BoundReport::new("spectral_ab_slope", vec![("L".into(), big as f64)], rep.slope, 0.0, ipslab_core::inequalities::spectral::MAX_RATIO_SLOPE);
                growth.note = format!("log-slope of R0 in l, ± {:.3}", rep.slope_err);
                reports.extend(rep.rows);
                reports.push(growth);
                replicas += (b.n_outer * 4 * sc.small.len()) as u64;
            }
        }
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    summary.insert("reports".into(), json!(reports.len()));
    summary.insert("failed".into(), json!(failed));
    Ok(Outcome {
        table: bound_table(&reports),
        pass: failed == 0,
        summary: Value::Object(summary),
        replicas,
    })
}

fn martingale(spec: &ExperimentSpec, domain: &Domain, seed: u64) -> Result<Outcome, CliError> {
    let f = build_observable(spec, domain)?;
    let rho = spec.params.rho;
    let sc = &spec.scales;
    let n = spec.budget.n_outer;
    let mut table = Table::new(&["s", "bracket", "variance", "stderr", "z", "n", "seed"]);
    let mut pass = true;
    for (j, &s) in sc.s.iter().enumerate() {
        let sd = sub_seed(seed, j);
        let c = bracket_isometry_check(&f, domain, rho, s, sc.eps_reg, n, sd)?;
        pass &= c.z.abs() <= 3.0;
        table.push(vec![s.into(), c.lhs.into(), c.rhs.into(), c.stderr.into(), c.z.into(), c.n.into(), sd.into()]);
    }
    let ms = multiscale_functional(&f, domain, rho, sc.beta, sc.eps_reg, &sc.s, n, sub_seed(seed, sc.s.len()))?;
    pass &= ms.forms_agree();
    Ok(Outcome {
        table,
        pass,
        summary: json!({
            "stieltjes": ms.stieltjes,
            "by_parts": ms.by_parts,
            "stderr": ms.stderr,
            "quadrature_error": ms.quadrature_error,
            "forms_agree": ms.forms_agree(),
        }),
        replicas: (n * 4 * (sc.s.len() + 1)) as u64,
    })
}
