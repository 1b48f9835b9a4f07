//! `E[(A_L f − B_{L,l} f)²] ≤ R₀ l² E[∫_{Q_L} |∇f|² dμ]` by Monte Carlo.

use serde::Serialize;
use std::sync::Arc;

use super::fit::fit_decay_exponent;
use super::{params, BoundReport};
use crate::configuration::{resample_outside, sample_poisson, Domain, PoissonParams, Region};
use crate::error::{invalid, Result};
use crate::estimators::{block_counts, par_indexed, sample_given_counts};
use crate::observable::{Linear, Observable};
use crate::rng::{Stream, Tag};
use crate::stats::{mean, sample_variance};

/// Largest log-log slope of the ratio in `l` still counted as bounded.
pub const MAX_RATIO_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Serialize)]
pub struct SpectralAbReport {
    /// One row per `l`; lhs is the empirical `R₀ = E[(A_L f − B f)²]/(l² E∫|∇f|²dμ)`.
    pub rows: Vec<BoundReport>,
    pub slope: f64,
    pub slope_err: f64,
    pub pass: bool,
}

/// Empirical ratio at one block side `l`, with its standard error.
///
/// `(A_L f − B f)²` is estimated without bias by the product of two
/// independent copies, each built from one resample outside `Q_L` and one
/// conditional sample given the block counts.
fn ratio_at(f: &Observable, lin: &Linear, domain: &Domain, rho: f64, big: u64, l: u64, n: usize, root: &Stream) -> Result<(f64, f64, f64, f64)> {
    let q = Region::cube(f.anchor(), big as f64);
    let pp = PoissonParams::new(rho, 0);
    let rows = par_indexed(n, |i| {
        let st = root.derive(Tag::Outer, i as u64);
        let mu = sample_poisson(domain, &pp, &st)?;
        let m = block_counts(&mu, big, l)?;
        let mut d = [0.0; 2];
        for (r, slot) in d.iter_mut().enumerate() {
            let sr = st.derive(Tag::Replica, r as u64);
            let a = f.eval(&resample_outside(&mu, &q, &pp, &sr)?);
            let b = f.eval(&sample_given_counts(domain, &m, rho, &sr)?);
            *slot = a - b;
        }
        Ok((d[0] * d[1], lin.gradient_energy(&mu.restrict(&q), f.anchor())))
    })?;
    let lhs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let en: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let l2 = (l * l) as f64;
    let (ml, me) = (mean(&lhs), mean(&en));
    let ratio = ml / (l2 * me);
    // delta method for a ratio of means
    let z: Vec<f64> = lhs.iter().zip(&en).map(|(a, e)| (a - ratio * l2 * e) / (l2 * me)).collect();
    Ok((ratio, (sample_variance(&z) / n as f64).sqrt(), ml, me))
}

/// Runs the ratio over `ls` and checks it does not grow with `l`.
///
/// `f = ∫ g dμ` is anchored at the domain centre and `Q_L` is centred there
/// too; each `l` must divide `L`.
pub fn check_spectral_ab(lin: &Linear, domain: &Domain, rho: f64, big: u64, ls: &[u64], n_mc: usize, seed: u64) -> Result<SpectralAbReport> {
    if n_mc < 2 {
        return Err(invalid("n_mc", "need at least two draws"));
    }
    if ls.is_empty() {
        return Err(invalid("l", "need at least one block side"));
    }
    let f = Observable::centered(Arc::new(lin.clone()), domain);
    let mut rows = Vec::with_capacity(ls.len());
    let mut series = Vec::new();
    for (j, &l) in ls.iter().enumerate() {
        let (ratio, se, _, energy) = ratio_at(&f, lin, domain, rho, big, l, n_mc, &Stream::new(seed).derive(Tag::Trial, j as u64))?;
        let r = BoundReport::new("spectral_ab", params(&[("L", big as f64), ("l", l as f64), ("rho", rho), ("energy", energy)]), ratio, se, f64::INFINITY);
        rows.push(r.with_note("lhs is the fitted R0 at this l"));
        if ratio > 0.0 {
            series.push((l as f64, ratio, se));
        }
    }
    let (slope, slope_err) = if series.len() >= 2 {
        let fit = fit_decay_exponent(&series)?;
        (fit.slope, fit.slope_err)
    } else {
        (0.0, 0.0)
    };
    Ok(SpectralAbReport {
        rows,
        slope,
        slope_err,
        pass: slope <= MAX_RATIO_SLOPE,
    })
}
