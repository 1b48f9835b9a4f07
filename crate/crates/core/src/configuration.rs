//! Particle configurations on a finite box or torus, the Poisson law, and the
//! measure operations on them: restriction, transport, counting and
//! conditional resampling.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{Stream, Tag};

pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    Free,
}

/// The simulation window `[0, side)^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    dim: usize,
    side: f64,
    boundary: Boundary,
}

impl Domain {
    pub fn new(dim: usize, side: f64, boundary: Boundary) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(invalid("d", format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(invalid("L_sim", format!("side must be positive, got {side}")));
        }
        Ok(Domain { dim, side, boundary })
    }

    pub fn periodic(dim: usize, side: f64) -> Result<Self> {
        Self::new(dim, side, Boundary::Periodic)
    }

    pub fn free(dim: usize, side: f64) -> Result<Self> {
        Self::new(dim, side, Boundary::Free)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn is_periodic(&self) -> bool {
        self.boundary == Boundary::Periodic
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    /// Geometric center; the origin of the cubes `Q_s` used throughout.
    pub fn center(&self) -> Vec<f64> {
        vec![0.5 * self.side; self.dim]
    }

    pub fn whole(&self) -> Region {
        Region::new(&vec![0.0; self.dim], &vec![self.side; self.dim])
    }

    /// Map a coordinate into `[0, side)`. Free mode leaves it alone.
    pub fn wrap_coord(&self, x: f64) -> f64 {
        if self.is_periodic() {
            let y = x.rem_euclid(self.side);
            // rem_euclid can round up to `side` for tiny negative inputs
            if y >= self.side {
                0.0
            } else {
                y
            }
        } else {
            x
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().all(|&c| (0.0..self.side).contains(&c))
    }

    /// Displacement `b - a`, minimum image in periodic mode.
    pub fn displacement(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        for k in 0..self.dim {
            let mut dx = b[k] - a[k];
            if self.is_periodic() {
                let half = 0.5 * self.side;
                if dx.abs() > 1.5 * self.side {
                    dx -= self.side * (dx / self.side).round();
                } else if dx >= half {
                    dx -= self.side;
                } else if dx < -half {
                    dx += self.side;
                }
            }
            out[k] = dx;
        }
    }

    pub fn distance_sq(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut d = [0.0; MAX_DIM];
        self.displacement(a, b, &mut d[..self.dim]);
        d[..self.dim].iter().map(|x| x * x).sum()
    }

    /// Half-open membership `x ∈ [lo, hi)` per axis, wrapped on the torus.
    pub fn in_region(&self, x: &[f64], r: &Region) -> bool {
        (0..self.dim).all(|k| self.axis_member(x[k], r.lo[k], r.hi[k], false))
    }

    /// Closed membership `x ∈ [lo, hi]` per axis.
    pub fn in_region_closed(&self, x: &[f64], r: &Region) -> bool {
        (0..self.dim).all(|k| self.axis_member(x[k], r.lo[k], r.hi[k], true))
    }

    fn axis_member(&self, x: f64, lo: f64, hi: f64, closed: bool) -> bool {
        let w = hi - lo;
        if self.is_periodic() {
            if w >= self.side {
                return true;
            }
            if w < 0.0 {
                return false;
            }
            let off = (x - lo).rem_euclid(self.side);
            if closed {
                off <= w
            } else {
                off < w
            }
        } else if closed {
            lo <= x && x <= hi
        } else {
            lo <= x && x < hi
        }
    }

    /// Volume of `region ∩ domain`.
    pub fn region_volume(&self, r: &Region) -> f64 {
        (0..self.dim)
            .map(|k| {
                let w = r.hi[k] - r.lo[k];
                if self.is_periodic() {
                    w.clamp(0.0, self.side)
                } else {
                    (r.hi[k].min(self.side) - r.lo[k].max(0.0)).max(0.0)
                }
            })
            .product()
    }
}

/// Axis-aligned box `[lo, hi)` (half-open per coordinate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    dim: usize,
    lo: [f64; MAX_DIM],
    hi: [f64; MAX_DIM],
}

impl Region {
    pub fn new(lo: &[f64], hi: &[f64]) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.len() <= MAX_DIM && !lo.is_empty());
        let mut r = Region {
            dim: lo.len(),
            lo: [0.0; MAX_DIM],
            hi: [0.0; MAX_DIM],
        };
        r.lo[..lo.len()].copy_from_slice(lo);
        r.hi[..hi.len()].copy_from_slice(hi);
        r
    }

    /// The cube `Q_s(center) = center + [-s/2, s/2)^d`.
    pub fn cube(center: &[f64], side: f64) -> Self {
        let lo: Vec<f64> = center.iter().map(|c| c - 0.5 * side).collect();
        let hi: Vec<f64> = center.iter().map(|c| c + 0.5 * side).collect();
        Region::new(&lo, &hi)
    }

    pub fn empty(dim: usize) -> Self {
        Region::new(&vec![0.0; dim], &vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo[..self.dim]
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi[..self.dim]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|k| (self.hi[k] - self.lo[k]).max(0.0)).product()
    }

    pub fn is_empty(&self) -> bool {
        (0..self.dim).any(|k| self.hi[k] <= self.lo[k])
    }

    /// Intersection in unwrapped coordinates.
    pub fn intersect(&self, other: &Region) -> Region {
        let lo: Vec<f64> = (0..self.dim).map(|k| self.lo[k].max(other.lo[k])).collect();
        let hi: Vec<f64> = (0..self.dim)
            .map(|k| self.hi[k].min(other.hi[k]).max(lo[k]))
            .collect();
        Region::new(&lo, &hi)
    }

    pub fn shifted(&self, h: &[f64]) -> Region {
        let lo: Vec<f64> = (0..self.dim).map(|k| self.lo[k] + h[k]).collect();
        let hi: Vec<f64> = (0..self.dim).map(|k| self.hi[k] + h[k]).collect();
        Region::new(&lo, &hi)
    }
}

/// Poisson intensity and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonParams {
    pub rho: f64,
    pub seed: u64,
}

impl PoissonParams {
    pub fn new(rho: f64, seed: u64) -> Self {
        PoissonParams { rho, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(invalid("rho", format!("density must be non-negative, got {}", self.rho)));
        }
        Ok(())
    }
}

/// A finite point configuration. Points are stored flat with stride `dim`.
///
/// The model has no particle identities: every public observable is
/// invariant under reordering. Dynamics use the storage order internally to
/// key per-particle noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    domain: Domain,
    coords: Vec<f64>,
}

impl Configuration {
    pub fn empty(domain: Domain) -> Self {
        Configuration {
            domain,
            coords: Vec::new(),
        }
    }

    /// Build from flat coordinates; every point must lie in the domain.
    pub fn from_flat(domain: Domain, coords: Vec<f64>) -> Result<Self> {
        let d = domain.dim();
        if !coords.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: coords.len() % d,
            });
        }
        if let Some(bad) = coords.chunks_exact(d).find(|p| !domain.contains(p)) {
            return Err(invalid("points", format!("point {bad:?} lies outside the domain")));
        }
        Ok(Configuration { domain, coords })
    }

    pub fn from_points(domain: Domain, points: &[Vec<f64>]) -> Result<Self> {
        let d = domain.dim();
        let mut coords = Vec::with_capacity(points.len() * d);
        for p in points {
            if p.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(domain, coords)
    }

    pub(crate) fn from_flat_unchecked(domain: Domain, coords: Vec<f64>) -> Self {
        debug_assert_eq!(coords.len() % domain.dim(), 0);
        Configuration { domain, coords }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim())
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub(crate) fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    /// Add a point (wrapped into the torus in periodic mode).
    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        let p: Vec<f64> = x.iter().map(|&c| self.domain.wrap_coord(c)).collect();
        if !self.domain.contains(&p) {
            return Err(invalid("point", format!("{x:?} lies outside the domain")));
        }
        self.coords.extend_from_slice(&p);
        Ok(())
    }

    /// The configuration with the `i`-th point removed (`μ - δ_x`).
    pub fn without(&self, i: usize) -> Configuration {
        let d = self.dim();
        let mut coords = Vec::with_capacity(self.coords.len().saturating_sub(d));
        coords.extend_from_slice(&self.coords[..i * d]);
        coords.extend_from_slice(&self.coords[(i + 1) * d..]);
        Configuration::from_flat_unchecked(self.domain, coords)
    }

    /// `μ(U)`.
    pub fn count(&self, region: &Region) -> usize {
        self.points().filter(|p| self.domain.in_region(p, region)).count()
    }

    /// `μ↾U`, preserving storage order.
    pub fn restrict(&self, region: &Region) -> Configuration {
        self.filter(|p| self.domain.in_region(p, region))
    }

    /// `μ↾U` with the closed box `[lo, hi]`.
    pub fn restrict_closed(&self, region: &Region) -> Configuration {
        self.filter(|p| self.domain.in_region_closed(p, region))
    }

    pub fn filter(&self, mut keep: impl FnMut(&[f64]) -> bool) -> Configuration {
        let mut coords = Vec::with_capacity(self.coords.len());
        for p in self.points() {
            if keep(p) {
                coords.extend_from_slice(p);
            }
        }
        Configuration::from_flat_unchecked(self.domain, coords)
    }

    /// `τ_h μ`: every point shifted by `+h`. Periodic mode wraps; free mode
    /// drops points that leave the window.
    pub fn transport(&self, h: &[f64]) -> Configuration {
        let d = self.dim();
        let mut coords = Vec::with_capacity(self.coords.len());
        for p in self.points() {
            let q: Vec<f64> = (0..d).map(|k| self.domain.wrap_coord(p[k] + h[k])).collect();
            if self.domain.contains(&q) {
                coords.extend_from_slice(&q);
            }
        }
        Configuration::from_flat_unchecked(self.domain, coords)
    }

    /// Points inside `region` first (in original order), then the rest.
    /// Returns the reordered configuration and the number of inside points.
    pub fn partition_inside_first(&self, region: &Region) -> (Configuration, usize) {
        let mut inside = Vec::with_capacity(self.coords.len());
        let mut outside = Vec::new();
        for p in self.points() {
            if self.domain.in_region(p, region) {
                inside.extend_from_slice(p);
            } else {
                outside.extend_from_slice(p);
            }
        }
        let n_in = inside.len() / self.dim();
        inside.extend_from_slice(&outside);
        (Configuration::from_flat_unchecked(self.domain, inside), n_in)
    }

    /// Union of two configurations on the same domain.
    pub fn union(&self, other: &Configuration) -> Configuration {
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        Configuration::from_flat_unchecked(self.domain, coords)
    }

    /// Points sorted lexicographically; a canonical form for multiset equality.
    pub fn canonical(&self) -> Vec<Vec<f64>> {
        let mut pts: Vec<Vec<f64>> = self.points().map(|p| p.to_vec()).collect();
        pts.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
        pts
    }

    pub fn same_multiset(&self, other: &Configuration) -> bool {
        self.domain == other.domain && self.canonical() == other.canonical()
    }
}

/// Draw `N ~ Poisson(λ)` then `N` uniform points in `region ∩ domain`.
fn sample_uniform_points<R: Rng>(domain: &Domain, region: &Region, lambda: f64, rng: &mut R, out: &mut Vec<f64>) {
    if lambda <= 0.0 {
        return;
    }
    let n = Poisson::new(lambda).expect("positive intensity").sample(rng) as usize;
    let d = domain.dim();
    let (lo, hi): (Vec<f64>, Vec<f64>) = (0..d)
        .map(|k| {
            if domain.is_periodic() {
                let w = (region.hi()[k] - region.lo()[k]).min(domain.side());
                (region.lo()[k], region.lo()[k] + w)
            } else {
                (region.lo()[k].max(0.0), region.hi()[k].min(domain.side()))
            }
        })
        .unzip();
    out.reserve(n * d);
    for _ in 0..n {
        for k in 0..d {
            let x = lo[k] + (hi[k] - lo[k]) * rng.gen::<f64>();
            let x = domain.wrap_coord(x);
            // guard against lo + w*u rounding onto the open end
            out.push(if domain.is_periodic() { x } else { x.min(hi[k].next_down_compat()) });
        }
    }
}

trait NextDown {
    fn next_down_compat(self) -> f64;
}

impl NextDown for f64 {
    fn next_down_compat(self) -> f64 {
        if self > 0.0 {
            f64::from_bits(self.to_bits() - 1)
        } else {
            self
        }
    }
}

/// Sample the Poisson point process of density `ρ` on the domain.
pub fn sample_poisson(domain: &Domain, params: &PoissonParams, stream: &Stream) -> Result<Configuration> {
    params.validate()?;
    let mut rng = stream.derive(Tag::Poisson, 0).rng();
    let mut coords = Vec::new();
    sample_uniform_points(domain, &domain.whole(), params.rho * domain.volume(), &mut rng, &mut coords);
    Ok(Configuration::from_flat_unchecked(*domain, coords))
}

/// Poisson sample restricted to `region` (exact: Poisson on a subset).
pub fn sample_poisson_in(domain: &Domain, region: &Region, rho: f64, stream: &Stream) -> Result<Configuration> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(invalid("rho", format!("density must be non-negative, got {rho}")));
    }
    let mut rng = stream.derive(Tag::Poisson, 1).rng();
    let mut coords = Vec::new();
    sample_uniform_points(domain, region, rho * domain.region_volume(region), &mut rng, &mut coords);
    Ok(Configuration::from_flat_unchecked(*domain, coords))
}

/// `μ↾Q ∪ ξ↾(domain∖Q)` with `ξ` a fresh Poisson sample. Inside points come
/// first, in their original order, so per-particle noise keyed by index is
/// shared with `μ.partition_inside_first(Q)`.
pub fn resample_outside(mu: &Configuration, q: &Region, params: &PoissonParams, stream: &Stream) -> Result<Configuration> {
    params.validate()?;
    let domain = *mu.domain();
    let inside = mu.restrict(q);
    let fresh = sample_poisson(&domain, params, &stream.derive(Tag::Resample, 0))?;
    let outside = fresh.filter(|p| !domain.in_region(p, q));
    Ok(inside.union(&outside))
}

/// Same as [`resample_outside`] but keeping the closed box `[lo, hi]`.
pub fn resample_outside_closed(mu: &Configuration, q: &Region, params: &PoissonParams, stream: &Stream) -> Result<Configuration> {
    params.validate()?;
    let domain = *mu.domain();
    let inside = mu.restrict_closed(q);
    let fresh = sample_poisson(&domain, params, &stream.derive(Tag::Resample, 0))?;
    let outside = fresh.filter(|p| !domain.in_region_closed(p, q));
    Ok(inside.union(&outside))
}

// ---------------------------------------------------------------- serialization

#[derive(Debug, Serialize, Deserialize)]
struct ConfigurationDoc {
    d: usize,
    #[serde(rename = "L_sim")]
    side: f64,
    mode: Boundary,
    points: Vec<Vec<f64>>,
}

/// Format with 17 significant digits; parses back to the identical `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

impl Configuration {
    pub fn to_json(&self) -> Result<String> {
        let doc = ConfigurationDoc {
            d: self.dim(),
            side: self.domain.side(),
            mode: self.domain.boundary(),
            points: self.points().map(|p| p.to_vec()).collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ConfigurationDoc = serde_json::from_str(s)?;
        let domain = Domain::new(doc.d, doc.side, doc.mode)?;
        Configuration::from_points(domain, &doc.points)
    }

    /// One point per row, header `x0,x1,...`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let header: Vec<String> = (0..self.dim()).map(|k| format!("x{k}")).collect();
        wr.write_record(&header)?;
        for p in self.points() {
            wr.write_record(p.iter().map(|&x| fmt17(x)))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(domain: Domain, r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut coords = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() != domain.dim() {
                return Err(Error::DimensionMismatch {
                    expected: domain.dim(),
                    got: rec.len(),
                });
            }
            for field in rec.iter() {
                coords.push(field.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?);
            }
        }
        Configuration::from_flat(domain, coords)
    }
}
