//! Time evolution of configurations.
//!
//! Two schemes are provided. For a constant field `c·Id` every particle is an
//! independent Brownian motion with generator `c·Δ`, sampled exactly. For a
//! general diagonal field the process is approximated by a continuous-space
//! lattice walk with symmetric edge conductances.
//!
//! Each particle draws its noise from a stream keyed by its index, so two
//! configurations that share a prefix of particles share their noise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::configuration::{Configuration, Domain, MAX_DIM};
use crate::error::{invalid, Error, Result};
use crate::field::{CoefficientField, Neighborhood, INTERACTION_RADIUS};
use crate::neighbors::CellList;
use crate::rng::{Stream, Tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ExactGaussian,
    ConductanceChain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeParams {
    pub scheme: Scheme,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_cell")]
    pub cell_size: f64,
}

fn default_dt() -> f64 {
    1e-3
}

fn default_eps() -> f64 {
    0.1
}

fn default_cell() -> f64 {
    INTERACTION_RADIUS
}

/// Largest admissible mesh.
pub const MAX_EPS: f64 = 0.1;
/// Bound on the total jump probability per step.
pub const MAX_JUMP_PROB: f64 = 0.5;

impl SchemeParams {
    pub fn exact() -> Self {
        SchemeParams {
            scheme: Scheme::ExactGaussian,
            dt: default_dt(),
            eps: default_eps(),
            cell_size: default_cell(),
        }
    }

    pub fn chain(dt: f64, eps: f64) -> Self {
        SchemeParams {
            scheme: Scheme::ConductanceChain,
            dt,
            eps,
            cell_size: default_cell(),
        }
    }

    /// The largest stable step for mesh `eps`.
    pub fn chain_auto(dim: usize, lambda: f64, eps: f64) -> Self {
        Self::chain(MAX_JUMP_PROB * eps * eps / (2.0 * dim as f64 * lambda), eps)
    }

    /// Check against a field and dimension.
    pub fn validate(&self, field: &dyn CoefficientField, dim: usize) -> Result<()> {
        match self.scheme {
            Scheme::ExactGaussian => {
                if field.as_constant().is_none() {
                    return Err(Error::UnsupportedField(format!(
                        "exact-gaussian needs a constant field, got {}",
                        field.name()
                    )));
                }
            }
            Scheme::ConductanceChain => {
                if !field.is_diagonal() {
                    return Err(Error::UnsupportedField(format!("conductance-chain needs a diagonal field, got {}", field.name())));
                }
                if !(self.eps > 0.0 && self.eps <= MAX_EPS) {
                    return Err(invalid("eps", format!("mesh must lie in (0, {MAX_EPS}], got {}", self.eps)));
                }
                if !(self.dt > 0.0 && self.dt.is_finite()) {
                    return Err(invalid("dt", format!("time step must be positive, got {}", self.dt)));
                }
                let p = 2.0 * dim as f64 * field.lambda() * self.dt / (self.eps * self.eps);
                if p > MAX_JUMP_PROB {
                    return Err(invalid(
                        "dt",
                        format!("unstable: 2·d·Λ·dt/eps² = {p} exceeds {MAX_JUMP_PROB}"),
                    ));
                }
            }
        }
        if !(self.cell_size >= INTERACTION_RADIUS) {
            return Err(invalid("cell_size", format!("must be at least {INTERACTION_RADIUS}")));
        }
        Ok(())
    }
}

/// Snapshots of one realization at increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial: Configuration,
    pub snapshots: Vec<(f64, Configuration)>,
}

/// A running realization: the configuration plus one generator per particle.
struct Runner<'a> {
    field: &'a dyn CoefficientField,
    params: SchemeParams,
    mu: Configuration,
    rngs: Vec<ChaCha8Rng>,
}

impl<'a> Runner<'a> {
    fn new(mu0: &Configuration, field: &'a dyn CoefficientField, params: SchemeParams, stream: &Stream) -> Result<Self> {
        params.validate(field, mu0.dim())?;
        let rngs = (0..mu0.len()).map(|i| stream.derive(Tag::Particle, i as u64).rng()).collect();
        Ok(Runner {
            field,
            params,
            mu: mu0.clone(),
            rngs,
        })
    }

    fn advance(&mut self, t: f64) {
        if t == 0.0 {
            return;
        }
        match self.params.scheme {
            Scheme::ExactGaussian => self.gaussian(t),
            Scheme::ConductanceChain => {
                let n = (t / self.params.dt).ceil().max(1.0) as usize;
                let dt = t / n as f64;
                for _ in 0..n {
                    self.chain_step(dt);
                }
            }
        }
    }

    fn gaussian(&mut self, t: f64) {
        let c = self.field.as_constant().expect("validated");
        let sd = (2.0 * c * t).sqrt();
        let dom = *self.mu.domain();
        let d = dom.dim();
        let coords = self.mu.coords_mut();
        for (p, rng) in coords.chunks_exact_mut(d).zip(self.rngs.iter_mut()) {
            for x in p.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *x = place(&dom, *x + sd * z);
            }
        }
    }

    fn chain_step(&mut self, dt: f64) {
        let dom = *self.mu.domain();
        let d = dom.dim();
        let eps = self.params.eps;
        let scale = dt / (eps * eps);
        let cells = CellList::build(&self.mu, self.params.cell_size);
        // Thinning: proposal j is picked with probability scale·Λ and accepted
        // with probability c_j/Λ, so it fires with probability scale·c_j.
        let lam = self.field.lambda();
        let slot = scale * lam;
        let mut moves: Vec<(usize, usize, f64)> = Vec::new();
        let mut near = Vec::new();
        let mut buf = Vec::new();
        let mut y = [0.0; MAX_DIM];
        for i in 0..self.mu.len() {
            let u: f64 = self.rngs[i].gen();
            let j = (u / slot) as usize;
            if j >= 2 * d {
                continue;
            }
            let v = u / slot - j as f64;
            let (k, s) = (j / 2, if j.is_multiple_of(2) { 1.0 } else { -1.0 });
            let x = self.mu.point(i);
            y[..d].copy_from_slice(x);
            y[k] = x[k] + s * eps;
            if !dom.is_periodic() && !(0.0..dom.side()).contains(&y[k]) {
                continue;
            }
            gather_candidates(&self.mu, &cells, i, x, INTERACTION_RADIUS + eps, &mut near);
            let c = edge_conductance(self.field, &dom, &near, x, &y[..d], k, &mut buf);
            if v * lam < c {
                moves.push((i, k, s * eps));
            }
        }
        let coords = self.mu.coords_mut();
        for (i, k, step) in moves {
            let v = &mut coords[i * d + k];
            *v = dom.wrap_coord(*v + step);
        }
    }
}

/// Map a coordinate back into the box: wrap on the torus, reflect in free mode.
fn place(dom: &Domain, x: f64) -> f64 {
    if dom.is_periodic() {
        return dom.wrap_coord(x);
    }
    let l = dom.side();
    let m = x.rem_euclid(2.0 * l);
    let r = if m < l { m } else { 2.0 * l - m };
    if r >= l {
        l.next_down_safe()
    } else {
        r
    }
}

trait NextDownSafe {
    fn next_down_safe(self) -> f64;
}

impl NextDownSafe for f64 {
    fn next_down_safe(self) -> f64 {
        f64::from_bits(self.to_bits() - 1)
    }
}

/// Positions of every particle other than `skip` within distance `radius` of `x`.
fn gather_candidates(mu: &Configuration, cells: &CellList, skip: usize, x: &[f64], radius: f64, out: &mut Vec<f64>) {
    out.clear();
    let dom = mu.domain();
    let r2 = radius * radius;
    cells.for_each_candidate(x, |j| {
        if j != skip && dom.distance_sq(x, mu.point(j)) < r2 {
            out.extend_from_slice(mu.point(j));
        }
    });
}

/// Conductance of the edge `x → y` along axis `k`: the `(k,k)` entry of the
/// field at the edge midpoint, evaluated on the environment without the mover
/// plus the mover placed at the midpoint. `env` must contain every other
/// particle within distance 1 of the midpoint. The value is symmetric in `x`
/// and `y`.
fn edge_conductance(field: &dyn CoefficientField, dom: &Domain, env: &[f64], x: &[f64], y: &[f64], k: usize, buf: &mut Vec<f64>) -> f64 {
    let d = dom.dim();
    let mut mid = [0.0; MAX_DIM];
    for j in 0..d {
        mid[j] = 0.5 * (x[j] + y[j]);
    }
    buf.clear();
    buf.extend(std::iter::repeat_n(0.0, d));
    let mut disp = [0.0; MAX_DIM];
    for p in env.chunks_exact(d) {
        dom.displacement(&mid[..d], p, &mut disp[..d]);
        if disp[..d].iter().map(|v| v * v).sum::<f64>() < INTERACTION_RADIUS * INTERACTION_RADIUS {
            buf.extend_from_slice(&disp[..d]);
        }
    }
    field.evaluate(Neighborhood::new(d, buf)).get(k, k)
}

/// Jump rate of `x → y` (adjacent lattice sites along axis `k`) in the
/// environment `env`, which must not contain the mover.
pub fn jump_rate(field: &dyn CoefficientField, env: &Configuration, x: &[f64], y: &[f64], k: usize, eps: f64) -> f64 {
    let mut buf = Vec::new();
    edge_conductance(field, env.domain(), env.coords(), x, y, k, &mut buf) / (eps * eps)
}

/// A sample of `μ_t` given `μ_0`.
pub fn evolve(mu0: &Configuration, field: &dyn CoefficientField, t: f64, params: &SchemeParams, stream: &Stream) -> Result<Configuration> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("t", format!("time must be non-negative, got {t}")));
    }
    let mut r = Runner::new(mu0, field, *params, stream)?;
    r.advance(t);
    Ok(r.mu)
}

/// Two conditionally independent replicas of `μ_t` given `μ_0`.
pub fn evolve_pair(
    mu0: &Configuration,
    field: &dyn CoefficientField,
    t: f64,
    params: &SchemeParams,
    stream: &Stream,
) -> Result<(Configuration, Configuration)> {
    let a = evolve(mu0, field, t, params, &stream.derive(Tag::Replica, 0))?;
    let b = evolve(mu0, field, t, params, &stream.derive(Tag::Replica, 1))?;
    Ok((a, b))
}

/// One realization observed at strictly increasing `times`.
pub fn trajectory(
    mu0: &Configuration,
    field: &dyn CoefficientField,
    times: &[f64],
    params: &SchemeParams,
    stream: &Stream,
) -> Result<Trajectory> {
    let mut prev = 0.0;
    for &t in times {
        if !(t.is_finite() && t > prev || (t == 0.0 && prev == 0.0)) {
            return Err(invalid("snapshots", "times must be non-negative and strictly increasing"));
        }
        prev = t;
    }
    let mut r = Runner::new(mu0, field, *params, stream)?;
    let mut snapshots = Vec::with_capacity(times.len());
    let mut now = 0.0;
    for &t in times {
        r.advance(t - now);
        now = t;
        snapshots.push((t, r.mu.clone()));
    }
    Ok(Trajectory {
        initial: mu0.clone(),
        snapshots,
    })
}
