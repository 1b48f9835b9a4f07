//! The cube-filtration martingale `s ↦ A_s f = E[f | F_{Q_s}]` at time zero.
//!
//! `Q_s` is the closed cube of side `s` centred at the observable's anchor.
//! Conditional expectations are estimated by resampling the Poisson field
//! outside `Q_s`. The martingale jumps exactly when `s` crosses a hitting
//! time `τ(x) = 2|x − c|_∞`, by `A_τ f(μ) − A_τ f(μ − δ_x)`.

use rand::Rng;
use serde::Serialize;

use super::par_indexed;
use crate::configuration::{resample_outside_closed, sample_poisson, Configuration, Domain, PoissonParams, Region};
use crate::error::{invalid, Result};
use crate::observable::Observable;
use crate::rng::{Stream, Tag};
use crate::stats::{mean, sample_variance, sum};

/// Relative inflation of `Q_τ` so a particle sitting on its boundary is
/// kept despite rounding in the cube corners. Other particles land in the
/// shell with probability of order 1e-12.
const BOUNDARY_SLACK: f64 = 1e-12;

/// `τ(x) = min{s : x ∈ Q_s}` for cubes centred at `center`.
pub fn hitting_time(domain: &Domain, center: &[f64], x: &[f64]) -> f64 {
    let mut d = [0.0; 3];
    let dim = domain.dim();
    domain.displacement(center, x, &mut d[..dim]);
    2.0 * d[..dim].iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// `n` points geometrically spaced from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || n < 2 {
        return Err(invalid("s_grid", "need 0 < lo < hi and at least two points"));
    }
    let r = (hi / lo).ln() / (n - 1) as f64;
    let mut g: Vec<f64> = (0..n).map(|i| lo * (r * i as f64).exp()).collect();
    g[n - 1] = hi;
    Ok(g)
}

/// `f` on one draw of `μ↾Q_s ∪ ξ↾Q_s^c`, with `s` replaced by `s + U(0, ε)`
/// when `eps > 0`.
fn one_resample(f: &Observable, mu: &Configuration, s: f64, eps: f64, rho: f64, stream: &Stream) -> Result<f64> {
    let s = if eps > 0.0 {
        s + eps * stream.derive(Tag::Trial, 0).rng().gen::<f64>()
    } else {
        s
    };
    let q = Region::cube(f.anchor(), s);
    let nu = resample_outside_closed(mu, &q, &PoissonParams::new(rho, 0), stream)?;
    Ok(f.eval(&nu))
}

fn check_scale(s: f64, eps: f64) -> Result<()> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(invalid("s", format!("scale must be non-negative, got {s}")));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(invalid("eps_reg", format!("regularization must be non-negative, got {eps}")));
    }
    Ok(())
}

/// `Â_s f(μ)`: average of `f` over `n_cond` resamplings outside `Q_s`.
pub fn conditional_a_s(f: &Observable, mu: &Configuration, s: f64, rho: f64, n_cond: usize, stream: &Stream) -> Result<f64> {
    regularized_a_s(f, mu, s, 0.0, rho, n_cond, stream)
}

/// `Â_{s,ε} f(μ) = (1/ε)∫_0^ε Â_{s+t} f(μ) dt`, one uniform `t` per
/// resample. Sample `c` uses the same stream as in [`conditional_a_s`], so
/// the two agree as `ε → 0`.
pub fn regularized_a_s(f: &Observable, mu: &Configuration, s: f64, eps: f64, rho: f64, n_cond: usize, stream: &Stream) -> Result<f64> {
    check_scale(s, eps)?;
    if n_cond < 1 {
        return Err(invalid("n_cond", "need at least one conditional sample"));
    }
    let mut vals = Vec::with_capacity(n_cond);
    for c in 0..n_cond {
        vals.push(one_resample(f, mu, s, eps, rho, &stream.derive(Tag::Conditional, c as u64))?);
    }
    Ok(mean(&vals))
}

/// `A_τ f(μ) − A_τ f(μ − δ_x)` from one pair of resamples sharing `stream`.
fn jump_sample(f: &Observable, mu: &Configuration, i: usize, tau: f64, rho: f64, stream: &Stream) -> Result<f64> {
    let s = tau * (1.0 + BOUNDARY_SLACK) + BOUNDARY_SLACK;
    let with = one_resample(f, mu, s, 0.0, rho, stream)?;
    let without = one_resample(f, &mu.without(i), s, 0.0, rho, stream)?;
    Ok(with - without)
}

#[derive(Debug, Clone, Serialize)]
pub struct Jump {
    pub particle: usize,
    pub tau: f64,
    pub size: f64,
}

/// A sampled path of `Â_s f(μ)` with the particles' hitting times.
#[derive(Debug, Clone, Serialize)]
pub struct MartingalePath {
    /// The requested grid with every hitting time up to its end inserted.
    pub s: Vec<f64>,
    pub values: Vec<f64>,
    /// `τ(x)` for every particle of `μ`, in particle order.
    pub hitting: Vec<f64>,
    /// Estimated jumps at the hitting times inside the grid.
    pub jumps: Vec<Jump>,
}

/// Sample `s ↦ Â_s f(μ)` on `s_grid` and the jumps across each `τ(x)`.
pub fn spatial_martingale(
    f: &Observable,
    mu: &Configuration,
    s_grid: &[f64],
    rho: f64,
    n_cond: usize,
    stream: &Stream,
) -> Result<MartingalePath> {
    if s_grid.is_empty() || s_grid.windows(2).any(|w| w[1] <= w[0]) || s_grid[0] < 0.0 {
        return Err(invalid("s_grid", "grid must be non-empty, non-negative and increasing"));
    }
    let domain = mu.domain();
    let s_max = s_grid[s_grid.len() - 1];
    let hitting: Vec<f64> = mu.points().map(|p| hitting_time(domain, f.anchor(), p)).collect();
    let mut s: Vec<f64> = s_grid.to_vec();
    s.extend(hitting.iter().copied().filter(|&t| t <= s_max));
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite scales"));
    s.dedup();
    let values = s
        .iter()
        .enumerate()
        .map(|(j, &sj)| conditional_a_s(f, mu, sj, rho, n_cond, &stream.derive(Tag::Outer, j as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut jumps = Vec::new();
    for (i, &tau) in hitting.iter().enumerate() {
        if tau > s_max {
            continue;
        }
        let ps = stream.derive(Tag::Particle, i as u64);
        let mut d = Vec::with_capacity(n_cond);
        for c in 0..n_cond {
            d.push(jump_sample(f, mu, i, tau, rho, &ps.derive(Tag::Conditional, c as u64))?);
        }
        jumps.push(Jump {
            particle: i,
            tau,
            size: mean(&d),
        });
    }
    Ok(MartingalePath { s, values, hitting, jumps })
}

/// Both sides of `E[[M^f]_s] = E[(A_s f)²] − (E f)²`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BracketCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub stderr: f64,
    pub z: f64,
    pub n: usize,
}

impl BracketCheck {
    fn from_parts(lhs: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> Self {
        let n = lhs.len();
        let nf = n as f64;
        let sb = sum(&b);
        let sb2 = sum(&b.iter().map(|x| x * x).collect::<Vec<_>>());
        let mean_sq = (sb * sb - sb2) / (nf * (nf - 1.0));
        let bbar = sb / nf;
        let l = mean(&lhs);
        let r = mean(&a) - mean_sq;
        let z_i: Vec<f64> = (0..n).map(|i| lhs[i] - a[i] + 2.0 * bbar * b[i]).collect();
        let stderr = (sample_variance(&z_i) / nf).sqrt();
        let diff = l - r;
        let z = if stderr > 0.0 {
            diff / stderr
        } else if diff.abs() < 1e-12 {
            0.0
        } else {
            f64::INFINITY.copysign(diff)
        };
        BracketCheck { lhs: l, rhs: r, stderr, z, n }
    }
}

/// Monte Carlo comparison of the expected bracket with the variance of
/// `A_s f` over `n` Poisson draws on `domain`.
///
/// Squared jumps and `(A_s f)²` are estimated without bias by products of
/// two independent resamples. With `eps_reg > 0` the scale is drawn as
/// `s + U(0, ε)` per outer sample, which averages the identity over
/// `[s, s + ε]`.
pub fn bracket_isometry_check(f: &Observable, domain: &Domain, rho: f64, s: f64, eps_reg: f64, n: usize, seed: u64) -> Result<BracketCheck> {
    check_scale(s, eps_reg)?;
    if n < 2 {
        return Err(invalid("n", "need at least two outer draws"));
    }
    let root = Stream::new(seed);
    let rows = par_indexed(n, |i| {
        let st = root.derive(Tag::Outer, i as u64);
        let mu = sample_poisson(domain, &PoissonParams::new(rho, 0), &st)?;
        let s_i = if eps_reg > 0.0 {
            s + eps_reg * st.derive(Tag::Trial, 0).rng().gen::<f64>()
        } else {
            s
        };
        let mut lhs = 0.0;
        for (j, p) in mu.points().enumerate() {
            let tau = hitting_time(domain, f.anchor(), p);
            if tau > s_i {
                continue;
            }
            let ps = st.derive(Tag::Particle, j as u64);
            let d1 = jump_sample(f, &mu, j, tau, rho, &ps.derive(Tag::Replica, 0))?;
            let d2 = jump_sample(f, &mu, j, tau, rho, &ps.derive(Tag::Replica, 1))?;
            lhs += d1 * d2;
        }
        let a1 = one_resample(f, &mu, s_i, 0.0, rho, &st.derive(Tag::Replica, 0))?;
        let a2 = one_resample(f, &mu, s_i, 0.0, rho, &st.derive(Tag::Replica, 1))?;
        Ok((lhs, a1 * a2, f.eval(&mu)))
    })?;
    let (lhs, rest): (Vec<f64>, Vec<(f64, f64)>) = rows.into_iter().map(|(l, a, b)| (l, (a, b))).unzip();
    let (a, b) = rest.into_iter().unzip();
    Ok(BracketCheck::from_parts(lhs, a, b))
}

/// The two forms of `S_{k,K,β}(f)` on one grid, with error estimates.
#[derive(Debug, Clone, Serialize)]
pub struct MultiscaleReport {
    /// `α_k g_k + ∫ α dg + α_K (E f² − g_K)` (Stieltjes form).
    pub stieltjes: f64,
    /// `α_K E f² − ∫ α'_s g_s ds` (integrated by parts).
    pub by_parts: f64,
    /// Monte Carlo standard error of `stieltjes − by_parts`.
    pub stderr: f64,
    /// Change of the difference when every other grid point is dropped.
    pub quadrature_error: f64,
    pub s: Vec<f64>,
    /// `g_s = E[(A_s f)²]`, or `E[(A_{s,ε} f)²]` when regularized.
    pub g: Vec<f64>,
    pub mean_f2: f64,
}

impl MultiscaleReport {
    pub fn difference(&self) -> f64 {
        self.stieltjes - self.by_parts
    }

    pub fn forms_agree(&self) -> bool {
        self.difference().abs() <= 3.0 * self.stderr + self.quadrature_error
    }
}

/// Both forms evaluated on per-sample values `g` (one per grid point).
fn forms(s: &[f64], g: &[f64], f2: f64, beta: f64) -> (f64, f64) {
    let alpha = |x: f64| (x / beta).exp();
    let n = s.len();
    let (k, kk) = (s[0], s[n - 1]);
    let mut st = alpha(k) * g[0] + alpha(kk) * (f2 - g[n - 1]);
    let mut bp = alpha(kk) * f2;
    for j in 0..n - 1 {
        let h = s[j + 1] - s[j];
        st += alpha(0.5 * (s[j] + s[j + 1])) * (g[j + 1] - g[j]);
        bp -= 0.5 * h * (alpha(s[j]) * g[j] + alpha(s[j + 1]) * g[j + 1]) / beta;
    }
    (st, bp)
}

/// `S_{k,K,β}(f)` with `α_s = e^{s/β}`, `k = s_grid[0]` and `K` the last point.
#[allow(clippy::too_many_arguments)]
pub fn multiscale_functional(
    f: &Observable,
    domain: &Domain,
    rho: f64,
    beta: f64,
    eps_reg: f64,
    s_grid: &[f64],
    n: usize,
    seed: u64,
) -> Result<MultiscaleReport> {
    if !(beta > 0.0) {
        return Err(invalid("beta", "must be positive"));
    }
    if s_grid.len() < 3 || s_grid.windows(2).any(|w| w[1] <= w[0]) || s_grid[0] < 0.0 {
        return Err(invalid("s_grid", "need at least three increasing non-negative scales"));
    }
    check_scale(s_grid[0], eps_reg)?;
    if n < 2 {
        return Err(invalid("n", "need at least two outer draws"));
    }
    let root = Stream::new(seed);
    let rows = par_indexed(n, |i| {
        let st = root.derive(Tag::Outer, i as u64);
        let mu = sample_poisson(domain, &PoissonParams::new(rho, 0), &st)?;
        let mut g = Vec::with_capacity(s_grid.len());
        for (j, &s) in s_grid.iter().enumerate() {
            let sj = st.derive(Tag::Conditional, j as u64);
            let a1 = one_resample(f, &mu, s, eps_reg, rho, &sj.derive(Tag::Replica, 0))?;
            let a2 = one_resample(f, &mu, s, eps_reg, rho, &sj.derive(Tag::Replica, 1))?;
            g.push(a1 * a2);
        }
        let v = f.eval(&mu);
        Ok((g, v * v))
    })?;
    let coarse: Vec<usize> = {
        let last = s_grid.len() - 1;
        let mut c: Vec<usize> = (0..last).step_by(2).collect();
        c.push(last);
        c
    };
    let s_coarse: Vec<f64> = coarse.iter().map(|&j| s_grid[j]).collect();
    let mut st = Vec::with_capacity(n);
    let mut bp = Vec::with_capacity(n);
    let mut diff_coarse = Vec::with_capacity(n);
    for (g, f2) in &rows {
        let (a, b) = forms(s_grid, g, *f2, beta);
        st.push(a);
        bp.push(b);
        let gc: Vec<f64> = coarse.iter().map(|&j| g[j]).collect();
        let (ac, bc) = forms(&s_coarse, &gc, *f2, beta);
        diff_coarse.push(ac - bc);
    }
    let diff: Vec<f64> = st.iter().zip(&bp).map(|(a, b)| a - b).collect();
    let g: Vec<f64> = (0..s_grid.len()).map(|j| mean(&rows.iter().map(|r| r.0[j]).collect::<Vec<_>>())).collect();
    Ok(MultiscaleReport {
        stieltjes: mean(&st),
        by_parts: mean(&bp),
        stderr: (sample_variance(&diff) / n as f64).sqrt(),
        quadrature_error: (mean(&diff_coarse) - mean(&diff)).abs(),
        s: s_grid.to_vec(),
        g,
        mean_f2: mean(&rows.iter().map(|r| r.1).collect::<Vec<_>>()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observable::{CenteredVoid, Constant, Linear, Profile};
    use std::sync::Arc;

    fn void_obs(dom: &Domain, r: f64, rho: f64) -> Observable {
        Observable::centered(Arc::new(CenteredVoid { side: r, rho }), dom)
    }

    /// `E[(A_s f)²]` for the centred void indicator of `Q_r`.
    fn void_second_moment(rho: f64, r: f64, s: f64, d: i32) -> f64 {
        let p = (-rho * r.powi(d)).exp();
        if s >= r {
            p - p * p
        } else {
            (-2.0 * rho * r.powi(d) + rho * s.powi(d)).exp() - p * p
        }
    }

    #[test]
    fn hitting_times() {
        let dom = Domain::periodic(2, 10.0).unwrap();
        assert_eq!(hitting_time(&dom, &[5.0, 5.0], &[6.0, 4.5]), 2.0);
        assert_eq!(hitting_time(&dom, &[0.5, 0.5], &[9.5, 0.5]), 2.0);
        let g = geometric_grid(0.5, 8.0, 5).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!((g[0], g[4]), (0.5, 8.0));
        assert!((g[2] - 2.0).abs() < 1e-12 && (g[3] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn full_scale_returns_f() {
        let dom = Domain::free(1, 8.0).unwrap();
        let f = Observable::centered(Arc::new(Linear::new(Profile::Bump { radius: 1.0 }, 64.0).unwrap()), &dom);
        let mu = sample_poisson(&dom, &PoissonParams::new(1.0, 0), &Stream::new(3)).unwrap();
        let a = conditional_a_s(&f, &mu, 2.0, 1.0, 3, &Stream::new(4)).unwrap();
        assert!((a - f.eval(&mu)).abs() < 1e-12);
    }

    #[test]
    fn one_particle_closed_form() {
        let dom = Domain::free(1, 6.0).unwrap();
        let (rho, r) = (0.8, 1.0);
        let f = void_obs(&dom, r, rho);
        let p = (-rho * r).exp();
        let mu = Configuration::from_points(dom, &[vec![3.3]]).unwrap();
        let stream = Stream::new(7);
        for s in [0.2, 0.5, 0.59, 0.61, 0.9] {
            let a = conditional_a_s(&f, &mu, s, rho, 20_000, &stream).unwrap();
            let exact = if s >= 0.6 { -p } else { (-rho * (r - s)).exp() - p };
            let q = (-rho * (r - s.min(r))).exp();
            let se = (q * (1.0 - q) / 20_000.0).sqrt().max(1e-12);
            assert!((a - exact).abs() < 4.0 * se, "s={s}: {a} vs {exact}");
        }
        let path = spatial_martingale(&f, &mu, &[0.2, 0.5, 0.9], rho, 4000, &stream).unwrap();
        assert!(path.s.iter().any(|&s| (s - 0.6).abs() < 1e-12));
        assert_eq!(path.jumps.len(), 1);
        // jump from e^{−ρ(r−τ)} − p down to −p
        let jump = -(-rho * (r - 0.6)).exp();
        assert!((path.jumps[0].size - jump).abs() < 0.03, "{:?}", path.jumps);
    }

    #[test]
    fn second_moment_is_increasing() {
        let dom = Domain::free(1, 6.0).unwrap();
        let f = void_obs(&dom, 1.0, 1.0);
        let s = geometric_grid(0.1, 1.2, 6).unwrap();
        let r = multiscale_functional(&f, &dom, 1.0, 1.0, 0.0, &s, 20_000, 3).unwrap();
        for (j, &sj) in s.iter().enumerate() {
            let exact = void_second_moment(1.0, 1.0, sj, 1);
            assert!((r.g[j] - exact).abs() < 0.015, "s={sj}: {} vs {exact}", r.g[j]);
        }
        for w in r.g.windows(2) {
            assert!(w[1] >= w[0] - 0.01);
        }
    }

    #[test]
    fn bracket_constant_is_zero() {
        let dom = Domain::free(1, 6.0).unwrap();
        let f = Observable::centered(Arc::new(Constant(2.0)), &dom);
        let b = bracket_isometry_check(&f, &dom, 1.0, 2.0, 0.0, 50, 1).unwrap();
        assert_eq!(b.lhs, 0.0);
        assert!(b.rhs.abs() < 1e-12 && b.z.abs() <= 3.0, "{b:?}");
    }

    #[test]
    fn bracket_count_observable() {
        let dom = Domain::free(1, 6.0).unwrap();
        let f = Observable::centered(Arc::new(Linear::new(Profile::Indicator { side: 1.0 }, 64.0).unwrap()), &dom);
        let b = bracket_isometry_check(&f, &dom, 1.0, 2.0, 0.0, 4000, 2).unwrap();
        assert!(b.z.abs() <= 3.0, "{b:?}");
        assert!((b.lhs - 1.0).abs() < 0.1, "{b:?}");
    }

    #[test]
    fn bracket_void_indicator() {
        let dom = Domain::free(1, 6.0).unwrap();
        let f = void_obs(&dom, 1.0, 1.0);
        for (s, eps) in [(0.5, 0.0), (0.5, 0.3), (2.0, 0.0)] {
            let b = bracket_isometry_check(&f, &dom, 1.0, s, eps, 4000, 5).unwrap();
            assert!(b.z.abs() <= 3.0, "s={s} eps={eps}: {b:?}");
        }
        let b = bracket_isometry_check(&f, &dom, 1.0, 0.5, 0.0, 4000, 6).unwrap();
        let exact = void_second_moment(1.0, 1.0, 0.5, 1);
        assert!((b.rhs - exact).abs() < 4.0 * b.stderr.max(0.005), "{b:?} vs {exact}");
    }

    #[test]
    fn regularized_converges() {
        let dom = Domain::free(1, 6.0).unwrap();
        let f = void_obs(&dom, 1.0, 1.0);
        let st = Stream::new(8);
        for seed in 0..20 {
            let mu = sample_poisson(&dom, &PoissonParams::new(1.0, 0), &Stream::new(seed)).unwrap();
            let a = conditional_a_s(&f, &mu, 0.4, 1.0, 50, &st).unwrap();
            let r = regularized_a_s(&f, &mu, 0.4, 1e-9, 1.0, 50, &st).unwrap();
            assert_eq!(a, r);
        }
    }

    #[test]
    fn regularized_second_moment() {
        // E[(A_{s,ε} f)²] = (2/ε²)∫_0^ε (ε − t) E[(A_{s+t} f)²] dt
        let dom = Domain::free(1, 6.0).unwrap();
        let f = void_obs(&dom, 1.0, 1.0);
        let (s, eps) = (0.3, 0.5);
        let m = 2000;
        let h = eps / m as f64;
        let exact: f64 = (0..m)
            .map(|i| {
                let t = (i as f64 + 0.5) * h;
                (eps - t) * void_second_moment(1.0, 1.0, s + t, 1)
            })
            .sum::<f64>()
            * h
            * 2.0
            / (eps * eps);
        let r = multiscale_functional(&f, &dom, 1.0, 1.0, eps, &[s, s + 0.1, s + 0.2], 20_000, 9).unwrap();
        let se = 0.01;
        assert!((r.g[0] - exact).abs() < 3.0 * se, "{} vs {exact}", r.g[0]);
    }

    #[test]
    fn multiscale_forms_agree() {
        let dom = Domain::free(1, 6.0).unwrap();
        let f = void_obs(&dom, 1.0, 1.0);
        let s = geometric_grid(0.2, 1.6, 12).unwrap();
        let r = multiscale_functional(&f, &dom, 1.0, 0.5, 0.0, &s, 2000, 4).unwrap();
        assert!(r.forms_agree(), "{r:?}");
    }

    #[test]
    fn measurable_f_gives_alpha_k_ef2() {
        // f supported in Q_k: A_s f = f for s ≥ k, so S = α_k E f²
        let dom = Domain::free(1, 6.0).unwrap();
        let f = Observable::centered(Arc::new(Linear::new(Profile::Indicator { side: 1.0 }, 64.0).unwrap()), &dom);
        let beta = 2.0;
        let s: Vec<f64> = (0..=20).map(|i| 1.0 + 0.1 * i as f64).collect();
        let r = multiscale_functional(&f, &dom, 1.0, beta, 0.0, &s, 500, 5).unwrap();
        let expect = (1.0f64 / beta).exp() * r.mean_f2;
        assert!((r.stieltjes - expect).abs() < 1e-9, "{r:?}");
        assert!((r.by_parts - expect).abs() < 1e-3 * expect, "{r:?}");
    }
}
