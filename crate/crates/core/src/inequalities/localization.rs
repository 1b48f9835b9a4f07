//! `E[(u_t − A_K u_t)²] / E[u²]` as a function of `K/√t`.

use serde::Serialize;

use crate::configuration::{resample_outside, Region};
use crate::dynamics::evolve;
use crate::error::{invalid, Result};
use crate::estimators::{par_indexed, Ensemble};
use crate::observable::Observable;
use crate::rng::{Stream, Tag};
use crate::stats::{mean, sample_variance, weighted_line_fit};

/// Slope per unit `K/√t` the log ratio must reach.
pub const MAX_LOCALIZATION_SLOPE: f64 = -0.5;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LocalizationRow {
    pub k: f64,
    pub x: f64,
    /// `E[(u_t − A_K u_t)²] / E[u²]`.
    pub ratio: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalizationReport {
    pub t: f64,
    pub mean_u2: f64,
    pub rows: Vec<LocalizationRow>,
    pub slope: f64,
    pub slope_err: f64,
    /// `C` in the fitted `ratio ≈ C e^{slope·K/√t}`.
    pub c_fit: f64,
    pub decreasing: bool,
    pub under_fit: bool,
    pub pass: bool,
}

/// One unbiased sample of `u_t(μ) − A_K u_t(μ)` given `μ`.
///
/// Both terms evolve from configurations whose inside points come first and
/// share the evolution stream, so the particles inside `Q_K` move identically.
fn difference(u: &Observable, ens: &Ensemble<'_>, t: f64, mu: &crate::Configuration, q: &Region, n_inner: usize, stream: &Stream) -> Result<f64> {
    let (ordered, _) = mu.partition_inside_first(q);
    let nu = resample_outside(mu, q, &ens.params(), stream)?;
    let mut d = Vec::with_capacity(n_inner);
    for j in 0..n_inner {
        let s = stream.derive(Tag::Inner, j as u64);
        let x = u.eval(&evolve(&ordered, ens.field, t, &ens.scheme, &s)?);
        let y = u.eval(&evolve(&nu, ens.field, t, &ens.scheme, &s)?);
        d.push(x - y);
    }
    Ok(mean(&d))
}

/// Monte Carlo series over `ks` (cubes centred at the observable's anchor)
/// and the exponential fit of the ratio in `K/√t`.
#[allow(clippy::too_many_arguments)]
pub fn check_localization(
    u: &Observable,
    ens: &Ensemble<'_>,
    t: f64,
    ks: &[f64],
    n_outer: usize,
    n_inner: usize,
    seed: u64,
) -> Result<LocalizationReport> {
    if !(t > 0.0) {
        return Err(invalid("t", "time must be positive"));
    }
    if ks.is_empty() || ks.iter().any(|&k| !(k > 0.0)) {
        return Err(invalid("K", "scales must be positive"));
    }
    if n_outer < 2 || n_inner < 1 {
        return Err(invalid("n_outer", "need n_outer ≥ 2 and n_inner ≥ 1"));
    }
    let root = Stream::new(seed);
    let draws = par_indexed(n_outer, |i| {
        let st = root.derive(Tag::Outer, i as u64);
        let mu = ens.sample(&st)?;
        let mut prods = Vec::with_capacity(ks.len());
        for (j, &k) in ks.iter().enumerate() {
            let q = Region::cube(u.anchor(), k);
            let sk = st.derive(Tag::Conditional, j as u64);
            let d0 = difference(u, ens, t, &mu, &q, n_inner, &sk.derive(Tag::Replica, 0))?;
            let d1 = difference(u, ens, t, &mu, &q, n_inner, &sk.derive(Tag::Replica, 1))?;
            prods.push(d0 * d1);
        }
        let v = u.eval(&mu);
        Ok((prods, v * v))
    })?;
    let u2: Vec<f64> = draws.iter().map(|d| d.1).collect();
    let mean_u2 = mean(&u2);
    let sqrt_t = t.sqrt();
    let rows: Vec<LocalizationRow> = ks
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let lhs: Vec<f64> = draws.iter().map(|d| d.0[j]).collect();
            let ratio = mean(&lhs) / mean_u2;
            let z: Vec<f64> = lhs.iter().zip(&u2).map(|(a, b)| (a - ratio * b) / mean_u2).collect();
            LocalizationRow {
                k,
                x: k / sqrt_t,
                ratio,
                stderr: (sample_variance(&z) / n_outer as f64).sqrt(),
            }
        })
        .collect();
    let fit_rows: Vec<&LocalizationRow> = rows.iter().filter(|r| r.ratio > 0.0 && r.stderr > 0.0).collect();
    let (slope, slope_err, c_fit) = if fit_rows.len() >= 2 {
        let xs: Vec<f64> = fit_rows.iter().map(|r| r.x).collect();
        let ys: Vec<f64> = fit_rows.iter().map(|r| r.ratio.ln()).collect();
        let ws: Vec<f64> = fit_rows.iter().map(|r| (r.ratio / r.stderr).powi(2)).collect();
        let (a, b, se) = weighted_line_fit(&xs, &ys, &ws);
        (b, se, a.exp())
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };
    let decreasing = rows.windows(2).all(|w| w[1].ratio <= w[0].ratio + 3.0 * (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt());
    let under_fit = rows.iter().all(|r| r.ratio <= c_fit * (slope * r.x).exp() + 3.0 * r.stderr);
    Ok(LocalizationReport {
        t,
        mean_u2,
        pass: decreasing && under_fit && slope <= MAX_LOCALIZATION_SLOPE,
        rows,
        slope,
        slope_err,
        c_fit,
        decreasing,
        under_fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configuration::Domain;
    use crate::dynamics::SchemeParams;
    use crate::field::builtin_constant;
    use crate::observable::{Linear, Profile};
    use statrs::distribution::{ContinuousCDF, Normal};
    use std::sync::Arc;

    /// `ρ ∫_{Q_K^c} φ(x)² dx / E[u²]` with `φ(x) = P[x + B_t ∈ [−½, ½)]` for
    /// independent walkers of per-coordinate variance `t` (a ≡ 1/2), d = 1.
    fn exact_ratio(rho: f64, t: f64, k: f64) -> f64 {
        let n = Normal::new(0.0, t.sqrt()).unwrap();
        let phi = |x: f64| n.cdf(0.5 - x) - n.cdf(-0.5 - x);
        let h = 1e-3;
        let mut s = 0.0;
        let mut x = 0.5 * k + 0.5 * h;
        while x < 0.5 * k + 20.0 * t.sqrt() {
            s += 2.0 * phi(x).powi(2) * h;
            x += h;
        }
        rho * s / (rho + rho * rho)
    }

    fn setup() -> (Domain, crate::field::ConstantField) {
        (Domain::periodic(1, 40.0).unwrap(), builtin_constant(0.5).unwrap())
    }

    #[test]
    fn matches_heat_kernel_and_decays() {
        let (dom, f) = setup();
        let ens = Ensemble {
            domain: dom,
            rho: 1.0,
            field: &f,
            scheme: SchemeParams::exact(),
        };
        let u = Observable::centered(Arc::new(Linear::new(Profile::Indicator { side: 1.0 }, 64.0).unwrap()), &dom);
        let rep = check_localization(&u, &ens, 4.0, &[2.0, 4.0, 6.0, 8.0], 4000, 1, 11).unwrap();
        for r in &rep.rows {
            let exact = exact_ratio(1.0, 4.0, r.k);
            assert!((r.ratio - exact).abs() < 3.0 * r.stderr + 0.02 * exact, "{r:?} vs {exact}");
        }
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn full_information_is_zero() {
        let (dom, f) = setup();
        let ens = Ensemble {
            domain: dom,
            rho: 1.0,
            field: &f,
            scheme: SchemeParams::exact(),
        };
        let u = Observable::centered(Arc::new(Linear::new(Profile::Indicator { side: 1.0 }, 64.0).unwrap()), &dom);
        let rep = check_localization(&u, &ens, 1.0, &[40.0, 41.0], 20, 2, 1).unwrap();
        assert!(rep.rows.iter().all(|r| r.ratio == 0.0));
    }
}
