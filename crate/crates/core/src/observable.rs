//! Local functions `u(μ)` and their placement in a domain.
//!
//! A [`LocalFunction`] is written relative to an anchor point and depends only
//! on the points of `μ` inside the cube of side `l_u` around that anchor. An
//! [`Observable`] pins a local function to an anchor.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Discrete, Poisson};

use crate::configuration::{Configuration, Domain, Region, MAX_DIM};
use crate::error::{invalid, Result};
use crate::oracle::GridFunction;

pub trait LocalFunction: Send + Sync + Debug {
    /// Side `l_u` of the cube the function looks at.
    fn side(&self) -> f64;

    /// `u(τ_{-anchor} μ)`.
    fn eval_at(&self, mu: &Configuration, anchor: &[f64]) -> f64;

    /// Declared `‖u‖∞`.
    fn sup_bound(&self) -> f64;

    /// `E_ρ[u]` when it is known in closed form.
    fn poisson_mean(&self, _rho: f64, _dim: usize) -> Option<f64> {
        None
    }

    fn name(&self) -> String;
}

/// Displacement of every point from `anchor` (minimum image), restricted to the
/// half-open cube of side `side` around it.
fn local_offsets(mu: &Configuration, anchor: &[f64], side: f64, mut f: impl FnMut(&[f64])) {
    let dom = mu.domain();
    let d = dom.dim();
    let half = 0.5 * side;
    let mut v = [0.0; MAX_DIM];
    for p in mu.points() {
        dom.displacement(anchor, p, &mut v[..d]);
        if v[..d].iter().all(|&c| -half <= c && c < half) {
            f(&v[..d]);
        }
    }
}

/// Single-particle profile `f` of a linear observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    /// `1` on the half-open cube of side `side`.
    Indicator { side: f64 },
    /// Smooth bump `exp(1 - 1/(1 - |x/r|²))` on the ball of radius `r`.
    Bump { radius: f64 },
    /// Tabulated profile, interpolated multilinearly; coordinates relative to the anchor.
    #[serde(skip)]
    Grid(GridFunction),
}

impl Profile {
    pub fn side(&self) -> f64 {
        match self {
            Profile::Indicator { side } => *side,
            Profile::Bump { radius } => 2.0 * radius,
            Profile::Grid(g) => {
                let mut s: f64 = 0.0;
                for k in 0..g.dim() {
                    let lo = g.lo()[k];
                    let hi = lo + (g.shape()[k] - 1) as f64 * g.spacing();
                    s = s.max(2.0 * lo.abs()).max(2.0 * hi.abs());
                }
                // half-open cube must contain the closed grid box
                s * (1.0 + 1e-12) + 1e-12
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Profile::Indicator { side } => {
                let h = 0.5 * side;
                if x.iter().all(|&c| -h <= c && c < h) {
                    1.0
                } else {
                    0.0
                }
            }
            Profile::Bump { radius } => {
                let r2 = x.iter().map(|c| c * c).sum::<f64>() / (radius * radius);
                if r2 < 1.0 {
                    (1.0 - 1.0 / (1.0 - r2)).exp()
                } else {
                    0.0
                }
            }
            Profile::Grid(g) => g.interpolate(x),
        }
    }

    /// `∇f(x)`; the indicator has zero gradient almost everywhere.
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Profile::Indicator { .. } => out.iter_mut().for_each(|v| *v = 0.0),
            Profile::Bump { radius } => {
                let r2 = x.iter().map(|c| c * c).sum::<f64>() / (radius * radius);
                if r2 < 1.0 {
                    let q = 1.0 - r2;
                    let f = (1.0 - 1.0 / q).exp();
                    for (o, &c) in out.iter_mut().zip(x) {
                        *o = -f * 2.0 * c / (radius * radius * q * q);
                    }
                } else {
                    out.iter_mut().for_each(|v| *v = 0.0);
                }
            }
            Profile::Grid(g) => {
                let h = 1e-6 * g.spacing();
                let mut y = [0.0; MAX_DIM];
                let d = x.len();
                for k in 0..d {
                    y[..d].copy_from_slice(x);
                    y[k] = x[k] + h;
                    let up = g.interpolate(&y[..d]);
                    y[k] = x[k] - h;
                    let dn = g.interpolate(&y[..d]);
                    out[k] = (up - dn) / (2.0 * h);
                }
            }
        }
    }

    /// Profile as a grid of spacing `h` centred at the origin, for the oracle.
    pub fn to_grid(&self, dim: usize, h: f64) -> Result<GridFunction> {
        match self {
            Profile::Indicator { side } => GridFunction::indicator_cube(dim, 0.0, *side, h, 0.0),
            Profile::Grid(g) => Ok(g.clone()),
            Profile::Bump { radius } => GridFunction::on_box(dim, -radius, *radius, h, |x| self.value(x)),
        }
    }
}

/// `u(μ) = ∫ f dμ`, clamped to `[-cap, cap]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub profile: Profile,
    pub cap: f64,
}

impl Linear {
    pub fn new(profile: Profile, cap: f64) -> Result<Self> {
        if !(cap > 0.0) {
            return Err(invalid("cap", "declared bound must be positive"));
        }
        Ok(Linear { profile, cap })
    }

    /// Raw `∫ f dμ` without the cap.
    pub fn integral(&self, mu: &Configuration, anchor: &[f64]) -> f64 {
        let mut s = 0.0;
        local_offsets(mu, anchor, self.profile.side(), |v| s += self.profile.value(v));
        s
    }

    /// `∫ |∇f|² dμ`.
    pub fn gradient_energy(&self, mu: &Configuration, anchor: &[f64]) -> f64 {
        let mut s = 0.0;
        let mut g = [0.0; MAX_DIM];
        local_offsets(mu, anchor, self.profile.side(), |v| {
            self.profile.gradient(v, &mut g[..v.len()]);
            s += g[..v.len()].iter().map(|c| c * c).sum::<f64>();
        });
        s
    }
}

impl LocalFunction for Linear {
    fn side(&self) -> f64 {
        self.profile.side()
    }

    fn eval_at(&self, mu: &Configuration, anchor: &[f64]) -> f64 {
        self.integral(mu, anchor).clamp(-self.cap, self.cap)
    }

    fn sup_bound(&self) -> f64 {
        self.cap
    }

    fn poisson_mean(&self, rho: f64, dim: usize) -> Option<f64> {
        match self.profile {
            // E[min(N, cap)] for N ~ Poisson(ρ side^d)
            Profile::Indicator { side } => Some(capped_poisson_mean(rho * side.powi(dim as i32), self.cap)),
            _ => None,
        }
    }

    fn name(&self) -> String {
        format!("linear({:?}, cap={})", self.profile, self.cap)
    }
}

fn capped_poisson_mean(lambda: f64, cap: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let p = Poisson::new(lambda).expect("positive rate");
    let top = cap.floor() as u64;
    let (mut below, mut mass) = (0.0, 0.0);
    for k in 0..=top {
        let pk = p.pmf(k);
        below += k as f64 * pk;
        mass += pk;
    }
    below + cap * (1.0 - mass).max(0.0)
}

/// `min(∫ η dμ, cap)` with `η` a smooth radial plateau: 1 on `B_{1/2}`, 0 off
/// `B_1`, decreasing in between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plateau {
    pub cap: f64,
}

impl Default for Plateau {
    fn default() -> Self {
        Plateau { cap: 3.0 }
    }
}

/// `η(r)` for the plateau observable.
pub fn plateau_eta(r: f64) -> f64 {
    if r <= 0.5 {
        1.0
    } else if r >= 1.0 {
        0.0
    } else {
        // smooth step of s = 2(1 - r) ∈ (0, 1)
        let s = 2.0 * (1.0 - r);
        let a = (-1.0 / s).exp();
        let b = (-1.0 / (1.0 - s)).exp();
        a / (a + b)
    }
}

impl LocalFunction for Plateau {
    fn side(&self) -> f64 {
        2.0
    }

    fn eval_at(&self, mu: &Configuration, anchor: &[f64]) -> f64 {
        let mut s = 0.0;
        local_offsets(mu, anchor, 2.0, |v| s += plateau_eta(v.iter().map(|c| c * c).sum::<f64>().sqrt()));
        s.min(self.cap)
    }

    fn sup_bound(&self) -> f64 {
        self.cap
    }

    fn name(&self) -> String {
        format!("plateau(cap={})", self.cap)
    }
}

/// `1{μ(Q_r) = 0} − e^{−ρ r^d}`: mean zero under `P_ρ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenteredVoid {
    pub side: f64,
    pub rho: f64,
}

impl CenteredVoid {
    pub fn void_probability(&self, dim: usize) -> f64 {
        (-self.rho * self.side.powi(dim as i32)).exp()
    }
}

impl LocalFunction for CenteredVoid {
    fn side(&self) -> f64 {
        self.side
    }

    fn eval_at(&self, mu: &Configuration, anchor: &[f64]) -> f64 {
        let mut n = 0usize;
        local_offsets(mu, anchor, self.side, |_| n += 1);
        let p = self.void_probability(mu.dim());
        if n == 0 {
            1.0 - p
        } else {
            -p
        }
    }

    fn sup_bound(&self) -> f64 {
        1.0
    }

    fn poisson_mean(&self, rho: f64, _dim: usize) -> Option<f64> {
        (rho == self.rho).then_some(0.0)
    }

    fn name(&self) -> String {
        format!("centered_void(side={}, rho={})", self.side, self.rho)
    }
}

/// `u ≡ c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl LocalFunction for Constant {
    fn side(&self) -> f64 {
        0.0
    }

    fn eval_at(&self, _mu: &Configuration, _anchor: &[f64]) -> f64 {
        self.0
    }

    fn sup_bound(&self) -> f64 {
        self.0.abs()
    }

    fn poisson_mean(&self, _rho: f64, _dim: usize) -> Option<f64> {
        Some(self.0)
    }

    fn name(&self) -> String {
        format!("constant({})", self.0)
    }
}

/// Integer points of the half-open cube of side `k` centred at the origin.
pub fn lattice_points(dim: usize, k: f64) -> Vec<Vec<f64>> {
    let half = 0.5 * k;
    let lo = (-half).ceil() as i64;
    let hi = half.ceil() as i64; // exclusive
    let axis: Vec<f64> = (lo..hi).map(|i| i as f64).filter(|&x| -half <= x && x < half).collect();
    let mut pts = vec![Vec::new()];
    for _ in 0..dim {
        let mut next = Vec::with_capacity(pts.len() * axis.len());
        for p in &pts {
            for &a in &axis {
                let mut q = p.clone();
                q.push(a);
                next.push(q);
            }
        }
        pts = next;
    }
    pts
}

/// `w = |Z_K|^{-1} Σ_{y ∈ Z_K} τ_y u` with `Z_K = ℤ^d ∩ Q_K`.
#[derive(Debug, Clone)]
pub struct SpatialAverage {
    inner: Arc<dyn LocalFunction>,
    k: f64,
    shifts: Vec<Vec<f64>>,
}

impl LocalFunction for SpatialAverage {
    fn side(&self) -> f64 {
        self.k + self.inner.side()
    }

    fn eval_at(&self, mu: &Configuration, anchor: &[f64]) -> f64 {
        let mut a = [0.0; MAX_DIM];
        let d = anchor.len();
        let mut s = 0.0;
        for y in &self.shifts {
            for j in 0..d {
                a[j] = anchor[j] + y[j];
            }
            s += self.inner.eval_at(mu, &a[..d]);
        }
        s / self.shifts.len() as f64
    }

    fn sup_bound(&self) -> f64 {
        self.inner.sup_bound()
    }

    fn poisson_mean(&self, rho: f64, dim: usize) -> Option<f64> {
        self.inner.poisson_mean(rho, dim)
    }

    fn name(&self) -> String {
        format!("average(K={}, {})", self.k, self.inner.name())
    }
}

/// The spatial average of `u` over `Z_K`; requires `K ≥ l_u`.
pub fn spatial_average_w(u: Arc<dyn LocalFunction>, dim: usize, k: f64) -> Result<SpatialAverage> {
    if k < u.side() {
        return Err(invalid("K", format!("K = {k} must be at least l_u = {}", u.side())));
    }
    Ok(SpatialAverage {
        shifts: lattice_points(dim, k),
        inner: u,
        k,
    })
}

/// A local function pinned at an anchor point of a domain.
#[derive(Debug, Clone)]
pub struct Observable {
    u: Arc<dyn LocalFunction>,
    anchor: Vec<f64>,
}

impl Observable {
    pub fn new(u: Arc<dyn LocalFunction>, anchor: Vec<f64>) -> Self {
        Observable { u, anchor }
    }

    /// Anchored at the domain centre.
    pub fn centered(u: Arc<dyn LocalFunction>, domain: &Domain) -> Self {
        Observable {
            u,
            anchor: domain.center(),
        }
    }

    pub fn eval(&self, mu: &Configuration) -> f64 {
        self.u.eval_at(mu, &self.anchor)
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn function(&self) -> &Arc<dyn LocalFunction> {
        &self.u
    }

    pub fn side(&self) -> f64 {
        self.u.side()
    }

    pub fn sup_bound(&self) -> f64 {
        self.u.sup_bound()
    }

    /// Half-open support cube `Q_{l_u}` around the anchor.
    pub fn support(&self) -> Region {
        Region::cube(&self.anchor, self.u.side())
    }

    /// `τ_h u`, i.e. the same function anchored at `anchor + h`.
    pub fn shifted(&self, h: &[f64], domain: &Domain) -> Self {
        let anchor = self.anchor.iter().zip(h).map(|(a, b)| domain.wrap_coord(a + b)).collect();
        Observable { u: self.u.clone(), anchor }
    }
}

/// Declarative observable selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableSpec {
    Linear {
        profile: Profile,
        #[serde(default = "default_cap")]
        cap: f64,
    },
    Plateau {
        #[serde(default = "default_plateau_cap")]
        cap: f64,
    },
    CenteredVoid {
        side: f64,
    },
}

fn default_cap() -> f64 {
    64.0
}

fn default_plateau_cap() -> f64 {
    3.0
}

impl ObservableSpec {
    pub fn build(&self, rho: f64) -> Result<Arc<dyn LocalFunction>> {
        Ok(match self {
            ObservableSpec::Linear { profile, cap } => Arc::new(Linear::new(profile.clone(), *cap)?),
            ObservableSpec::Plateau { cap } => Arc::new(Plateau { cap: *cap }),
            ObservableSpec::CenteredVoid { side } => Arc::new(CenteredVoid { side: *side, rho }),
        })
    }
}

/// The built-in family: a capped linear indicator, a smooth bump, the plateau
/// observable and the centred void indicator.
pub fn builtin_observables(rho: f64) -> Vec<Arc<dyn LocalFunction>> {
    vec![
        Arc::new(Linear {
            profile: Profile::Indicator { side: 1.0 },
            cap: default_cap(),
        }),
        Arc::new(Linear {
            profile: Profile::Bump { radius: 1.0 },
            cap: default_cap(),
        }),
        Arc::new(Plateau::default()),
        Arc::new(CenteredVoid { side: 1.0, rho }),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configuration::{sample_poisson, PoissonParams};
    use crate::rng::{Stream, Tag};
    use crate::stats::{mean, sample_variance};
    use rand::Rng;

    fn dom(d: usize) -> Domain {
        Domain::periodic(d, 12.0).unwrap()
    }

    #[test]
    fn empty_configuration_gives_zero() {
        let d = dom(2);
        let mu = Configuration::empty(d);
        for u in builtin_observables(1.0).into_iter().take(3) {
            assert_eq!(Observable::centered(u, &d).eval(&mu), 0.0);
        }
    }

    #[test]
    fn plateau_cap_active() {
        let d = dom(2);
        let mu = Configuration::from_points(d, &[vec![6.0, 6.0], vec![6.1, 6.0], vec![6.0, 5.8], vec![5.9, 6.2]]).unwrap();
        let u = Observable::centered(Arc::new(Plateau::default()), &d);
        assert_eq!(u.eval(&mu), 3.0);
        let three = Configuration::from_points(d, &[vec![6.0, 6.0], vec![6.1, 6.0], vec![6.0, 5.8]]).unwrap();
        assert_eq!(u.eval(&three), 3.0);
        let two = Configuration::from_points(d, &[vec![6.0, 6.0], vec![6.1, 6.0]]).unwrap();
        assert_eq!(u.eval(&two), 2.0);
        assert_eq!(plateau_eta(0.75), 0.5);
    }

    #[test]
    fn centered_void_has_mean_zero() {
        let d = dom(1);
        let u = Observable::centered(Arc::new(CenteredVoid { side: 1.5, rho: 0.8 }), &d);
        let s = Stream::new(4);
        let xs: Vec<f64> = (0..20_000)
            .map(|i| u.eval(&sample_poisson(&d, &PoissonParams::new(0.8, 0), &s.derive(Tag::Outer, i)).unwrap()))
            .collect();
        let m = mean(&xs);
        assert!(m.abs() < 3.0 * (sample_variance(&xs) / xs.len() as f64).sqrt(), "{m}");
    }

    #[test]
    fn capped_mean_matches_poisson() {
        let lin = Linear::new(Profile::Indicator { side: 1.0 }, 2.0).unwrap();
        // E[min(N,2)] for N ~ Poisson(1): 0·e⁻¹ + 1·e⁻¹ + 2(1 − 2e⁻¹)
        let e = (-1.0f64).exp();
        assert!((lin.poisson_mean(1.0, 1).unwrap() - (e + 2.0 * (1.0 - 2.0 * e))).abs() < 1e-12);
        let big = Linear::new(Profile::Indicator { side: 2.0 }, 64.0).unwrap();
        assert!((big.poisson_mean(1.5, 1).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn locality_of_builtins() {
        let d = dom(2);
        let s = Stream::new(9);
        for (j, u) in builtin_observables(1.0).into_iter().enumerate() {
            let obs = Observable::centered(u, &d);
            let q = obs.support();
            for i in 0..200 {
                let sub = s.derive(Tag::Trial, (j * 1000 + i) as u64);
                let mu = sample_poisson(&d, &PoissonParams::new(1.0, 0), &sub).unwrap();
                let base = obs.eval(&mu);
                assert_eq!(obs.eval(&mu.restrict(&q)), base);
                let mut rng = sub.rng();
                let mut nu = mu.clone();
                loop {
                    let x = [rng.gen_range(0.0..12.0), rng.gen_range(0.0..12.0)];
                    if !d.in_region(&x, &q) {
                        nu.push(&x).unwrap();
                        break;
                    }
                }
                assert_eq!(obs.eval(&nu), base);
                assert!(base.abs() <= obs.sup_bound());
            }
        }
    }

    #[test]
    fn lattice_counts() {
        assert_eq!(lattice_points(1, 1.0), vec![vec![0.0]]);
        assert_eq!(lattice_points(1, 2.0), vec![vec![-1.0], vec![0.0]]);
        assert_eq!(lattice_points(2, 4.0).len(), 16);
        assert_eq!(lattice_points(3, 3.0).len(), 27);
    }

    #[test]
    fn average_with_single_shift_is_identity() {
        let d = dom(1);
        let u: Arc<dyn LocalFunction> = Arc::new(Linear::new(Profile::Indicator { side: 1.0 }, 64.0).unwrap());
        let w = spatial_average_w(u.clone(), 1, 1.0).unwrap();
        let mu = sample_poisson(&d, &PoissonParams::new(2.0, 0), &Stream::new(1)).unwrap();
        let a = d.center();
        assert_eq!(w.eval_at(&mu, &a), u.eval_at(&mu, &a));
        assert!(spatial_average_w(u, 1, 0.5).is_err());
    }

    #[test]
    fn average_commutes_with_translation() {
        let d = dom(2);
        let u: Arc<dyn LocalFunction> = Arc::new(Linear::new(Profile::Indicator { side: 1.0 }, 64.0).unwrap());
        let w = Observable::centered(Arc::new(spatial_average_w(u, 2, 4.0).unwrap()), &d);
        let mu = sample_poisson(&d, &PoissonParams::new(1.0, 0), &Stream::new(2)).unwrap();
        let h = [1.0, -2.0];
        // (τ_h w)(μ) = w(τ_{-h} μ)
        let lhs = w.shifted(&h, &d).eval(&mu);
        let rhs = w.eval(&mu.transport(&[-h[0], -h[1]]));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn bump_gradient_matches_difference() {
        let p = Profile::Bump { radius: 1.3 };
        let x = [0.3, -0.4];
        let mut g = [0.0; 2];
        p.gradient(&x, &mut g);
        for k in 0..2 {
            let mut a = x;
            let mut b = x;
            a[k] += 1e-6;
            b[k] -= 1e-6;
            let fd = (p.value(&a) - p.value(&b)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn spec_parses() {
        let s: ObservableSpec = serde_json::from_str(r#"{"kind":"linear","profile":{"shape":"indicator","side":1.0}}"#).unwrap();
        let u = s.build(1.0).unwrap();
        assert_eq!(u.sup_bound(), 64.0);
        assert!(serde_json::from_str::<ObservableSpec>(r#"{"kind":"plateau","cup":3}"#).is_err());
    }
}
