//! `u_t`, `Var_ρ[u_t]` and `A_K u_t` by nested Monte Carlo.
//!
//! `Var[u_t] = E[u_t²] − (E u_t)²` where `u_t(μ_0)` is itself an expectation
//! over trajectories. Averaging the product over distinct pairs of
//! conditionally independent replicas gives an unbiased estimate of
//! `u_t(μ_0)²`; the squared mean is estimated by a U-statistic over outer draws.

use serde::Serialize;

use super::par_indexed;
use crate::configuration::{resample_outside, sample_poisson, Configuration, Domain, PoissonParams, Region};
use crate::dynamics::{evolve, trajectory, SchemeParams};
use crate::error::{invalid, Result};
use crate::field::CoefficientField;
use crate::observable::Observable;
use crate::rng::{Stream, Tag};
use crate::stats::{mean, sample_variance, sum};

/// The stationary setting an estimator samples from.
#[derive(Debug, Clone, Copy)]
pub struct Ensemble<'a> {
    pub domain: Domain,
    pub rho: f64,
    pub field: &'a dyn CoefficientField,
    pub scheme: SchemeParams,
}

impl<'a> Ensemble<'a> {
    pub fn params(&self) -> PoissonParams {
        PoissonParams::new(self.rho, 0)
    }

    pub fn sample(&self, stream: &Stream) -> Result<Configuration> {
        sample_poisson(&self.domain, &self.params(), stream)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorResult {
    pub estimate: f64,
    /// Variance of one outer contribution (influence values).
    pub variance: f64,
    pub stderr: f64,
    pub n_outer: usize,
    pub n_inner: usize,
    pub seed: u64,
}

impl EstimatorResult {
    pub fn z_against(&self, exact: f64) -> f64 {
        (self.estimate - exact) / self.stderr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarOptions {
    pub n_outer: usize,
    /// Replica pairs per outer draw.
    pub n_inner: usize,
    pub seed: u64,
    /// Shifts `h` at which `τ_h u` is evaluated and averaged (periodic
    /// domains only). Defaults to `[0]`.
    pub translates: Vec<Vec<f64>>,
    /// `E_ρ[u]` when known exactly; the product of centred values is then
    /// unbiased for the variance by itself.
    pub known_mean: Option<f64>,
}

impl VarOptions {
    pub fn new(n_outer: usize, n_inner: usize, seed: u64) -> Self {
        VarOptions {
            n_outer,
            n_inner,
            seed,
            translates: Vec::new(),
            known_mean: None,
        }
    }

    pub fn with_translates(mut self, t: Vec<Vec<f64>>) -> Self {
        self.translates = t;
        self
    }

    pub fn with_known_mean(mut self, m: f64) -> Self {
        self.known_mean = Some(m);
        self
    }
}

/// Evenly spaced shifts covering a periodic box, `per_axis` along each axis.
pub fn lattice_translates(domain: &Domain, per_axis: usize) -> Vec<Vec<f64>> {
    let step = domain.side() / per_axis as f64;
    let mut out = vec![Vec::new()];
    for _ in 0..domain.dim() {
        out = out
            .into_iter()
            .flat_map(|p: Vec<f64>| {
                (0..per_axis).map(move |i| {
                    let mut q = p.clone();
                    q.push(i as f64 * step);
                    q
                })
            })
            .collect();
    }
    out
}

/// Average of `u(μ_t)` over `n_inner` independent trajectories from `μ_0`.
pub fn estimate_ut(
    u: &Observable,
    mu0: &Configuration,
    field: &dyn CoefficientField,
    t: f64,
    scheme: &SchemeParams,
    n_inner: usize,
    stream: &Stream,
) -> Result<f64> {
    if n_inner < 1 {
        return Err(invalid("n_inner", "need at least one inner replica"));
    }
    if t == 0.0 {
        return Ok(u.eval(mu0));
    }
    let mut vals = Vec::with_capacity(n_inner);
    for j in 0..n_inner {
        let mu = evolve(mu0, field, t, scheme, &stream.derive(Tag::Inner, j as u64))?;
        vals.push(u.eval(&mu));
    }
    Ok(mean(&vals))
}

/// Per-outer sufficient statistics at each time: the pair-product average
/// and the mean.
fn outer_stats(ens: &Ensemble<'_>, times: &[f64], opts: &VarOptions, shifts: &[Observable], stream: &Stream) -> Result<Vec<(f64, f64)>> {
    let mu0 = ens.sample(stream)?;
    let r = 2 * opts.n_inner;
    let centre = opts.known_mean.unwrap_or(0.0);
    // values[time][shift][replica]
    let mut values = vec![vec![Vec::with_capacity(r); shifts.len()]; times.len()];
    let moving = times.iter().any(|&t| t > 0.0);
    for j in 0..r {
        let snaps: Vec<Configuration> = if moving {
            trajectory(&mu0, ens.field, times, &ens.scheme, &stream.derive(Tag::Replica, j as u64))?
                .snapshots
                .into_iter()
                .map(|(_, c)| c)
                .collect()
        } else {
            vec![mu0.clone(); times.len()]
        };
        for (ti, mu) in snaps.iter().enumerate() {
            for (x, obs) in shifts.iter().enumerate() {
                values[ti][x].push(obs.eval(mu) - centre);
            }
        }
    }
    let rf = r as f64;
    Ok(values
        .iter()
        .map(|per_shift| {
            let mut q = Vec::with_capacity(shifts.len());
            let mut m = Vec::with_capacity(shifts.len());
            for v in per_shift {
                let s = sum(v);
                let s2 = sum(&v.iter().map(|x| x * x).collect::<Vec<_>>());
                q.push((s * s - s2) / (rf * (rf - 1.0)));
                m.push(s / rf);
            }
            (mean(&q), mean(&m))
        })
        .collect())
}

fn summarize(stats: &[(f64, f64)], opts: &VarOptions) -> EstimatorResult {
    let q: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let m: Vec<f64> = stats.iter().map(|s| s.1).collect();
    let n = stats.len() as f64;
    let (estimate, influence) = if opts.known_mean.is_some() {
        (mean(&q), q)
    } else {
        let sm = sum(&m);
        let sm2 = sum(&m.iter().map(|x| x * x).collect::<Vec<_>>());
        let mean_sq = (sm * sm - sm2) / (n * (n - 1.0));
        let mbar = sm / n;
        let z: Vec<f64> = q.iter().zip(&m).map(|(qi, mi)| qi - 2.0 * mbar * mi).collect();
        (mean(&q) - mean_sq, z)
    };
    let variance = sample_variance(&influence);
    EstimatorResult {
        estimate,
        variance,
        stderr: (variance / n).sqrt(),
        n_outer: opts.n_outer,
        n_inner: opts.n_inner,
        seed: opts.seed,
    }
}

/// Unbiased `Var_ρ[u_t]` with its standard error.
pub fn estimate_var_ut(u: &Observable, ens: &Ensemble<'_>, t: f64, opts: &VarOptions) -> Result<EstimatorResult> {
    Ok(estimate_var_ut_series(u, ens, &[t], opts)?.remove(0))
}

/// `Var_ρ[u_t]` at several increasing times. Each replica is one trajectory
/// observed at every time, so the series costs as much as its last point;
/// estimates at different times are correlated.
pub fn estimate_var_ut_series(u: &Observable, ens: &Ensemble<'_>, times: &[f64], opts: &VarOptions) -> Result<Vec<EstimatorResult>> {
    if opts.n_inner < 1 {
        return Err(invalid("n_inner", "need at least one replica pair"));
    }
    if opts.n_outer < 2 {
        return Err(invalid("n_outer", "need at least two outer draws"));
    }
    if times.is_empty() || times.iter().any(|&t| !(t >= 0.0)) {
        return Err(invalid("t", "times must be non-negative"));
    }
    let shifts: Vec<Observable> = if opts.translates.is_empty() {
        vec![u.clone()]
    } else {
        if !ens.domain.is_periodic() {
            return Err(invalid("translates", "translate averaging needs a periodic domain"));
        }
        opts.translates.iter().map(|h| u.shifted(h, &ens.domain)).collect()
    };
    let root = Stream::new(opts.seed);
    let stats = par_indexed(opts.n_outer, |i| outer_stats(ens, times, opts, &shifts, &root.derive(Tag::Outer, i as u64)))?;
    Ok((0..times.len())
        .map(|ti| summarize(&stats.iter().map(|s| s[ti]).collect::<Vec<_>>(), opts))
        .collect())
}

/// `A_K u_t(μ)`: average of `estimate_ut` over `n_cond` resamplings of `μ`
/// outside the cube `Q_K` centred at the observable's anchor.
#[allow(clippy::too_many_arguments)]
pub fn conditional_a_k(
    u: &Observable,
    ens: &Ensemble<'_>,
    t: f64,
    mu: &Configuration,
    k: f64,
    n_cond: usize,
    n_inner: usize,
    stream: &Stream,
) -> Result<f64> {
    if n_cond < 1 {
        return Err(invalid("n_cond", "need at least one conditional sample"));
    }
    let q = Region::cube(u.anchor(), k);
    let mut vals = Vec::with_capacity(n_cond);
    for c in 0..n_cond {
        let sub = stream.derive(Tag::Conditional, c as u64);
        let nu = resample_outside(mu, &q, &ens.params(), &sub)?;
        vals.push(estimate_ut(u, &nu, ens.field, t, &ens.scheme, n_inner, &sub)?);
    }
    Ok(mean(&vals))
}
