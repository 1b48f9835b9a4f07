//! Coefficient fields: the local diffusivity rule `a∘` and its stationary
//! extension `a(μ, x) = a∘(τ_{-x} μ)`.
//!
//! A field only ever sees the points of `μ` inside the open unit ball around
//! the evaluation point, re-centered at that point. This makes locality and
//! stationarity hold by construction for any implementation of
//! [`CoefficientField`].

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{Matrix3, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::configuration::{sample_poisson, Configuration, Domain, PoissonParams, MAX_DIM};
use crate::error::{invalid, Result};
use crate::rng::{Stream, Tag};

/// Radius of the ball a field may look at.
pub const INTERACTION_RADIUS: f64 = 1.0;

/// Small symmetric matrix, `dim ≤ 3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixD {
    dim: usize,
    m: [[f64; MAX_DIM]; MAX_DIM],
}

impl MatrixD {
    pub fn zeros(dim: usize) -> Self {
        MatrixD {
            dim,
            m: [[0.0; MAX_DIM]; MAX_DIM],
        }
    }

    pub fn scalar(dim: usize, c: f64) -> Self {
        let mut a = Self::zeros(dim);
        for k in 0..dim {
            a.m[k][k] = c;
        }
        a
    }

    pub fn identity(dim: usize) -> Self {
        Self::scalar(dim, 1.0)
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut a = Self::zeros(diag.len());
        for (k, &c) in diag.iter().enumerate() {
            a.m[k][k] = c;
        }
        a
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let mut a = Self::zeros(rows.len());
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), rows.len());
            a.m[i][..r.len()].copy_from_slice(r);
        }
        a
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.dim).all(|i| (0..i).all(|j| self.m[i][j] == self.m[j][i]))
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| i == j || self.m[i][j] == 0.0))
    }

    /// `ξ · a ξ`.
    pub fn quad(&self, xi: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += xi[i] * self.m[i][j] * xi[j];
            }
        }
        s
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut full = Matrix3::<f64>::zeros();
        for i in 0..self.dim {
            for j in 0..self.dim {
                full[(i, j)] = self.m[i][j];
            }
        }
        let eig = SymmetricEigen::new(full.fixed_view::<3, 3>(0, 0).into_owned());
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // padding rows contribute zeros; drop (3 - dim) of them
        let mut pad = MAX_DIM - self.dim;
        ev.retain(|&x| {
            if pad > 0 && x == 0.0 {
                pad -= 1;
                false
            } else {
                true
            }
        });
        ev.truncate(self.dim);
        ev
    }
}

/// The points of a configuration inside the open unit ball around an
/// evaluation point, as displacements from that point.
#[derive(Debug, Clone, Copy)]
pub struct Neighborhood<'a> {
    dim: usize,
    offsets: &'a [f64],
}

impl<'a> Neighborhood<'a> {
    pub fn new(dim: usize, offsets: &'a [f64]) -> Self {
        debug_assert_eq!(offsets.len() % dim, 0);
        Neighborhood { dim, offsets }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `μ(B_1(x))`, including a particle sitting at `x` itself.
    pub fn count(&self) -> usize {
        self.offsets.len() / self.dim
    }

    pub fn offsets(&self) -> std::slice::ChunksExact<'a, f64> {
        self.offsets.chunks_exact(self.dim)
    }
}

/// A diffusivity rule. Implementations receive only the re-centered local
/// configuration, so the stationary extension and locality are automatic.
///
/// User-supplied fields implement this trait and can be passed anywhere a
/// built-in field is accepted.
pub trait CoefficientField: Send + Sync + Debug {
    /// `a∘` evaluated on the local configuration.
    fn evaluate(&self, nb: Neighborhood<'_>) -> MatrixD;

    /// Upper ellipticity bound `Λ ≥ 1`.
    fn lambda(&self) -> f64;

    /// Lower ellipticity bound; 1 under the standard normalization.
    fn lambda_min(&self) -> f64 {
        1.0
    }

    /// Whether every output is diagonal (required by the lattice scheme).
    fn is_diagonal(&self) -> bool {
        true
    }

    /// `Some(c)` when `a ≡ c·Id`.
    fn as_constant(&self) -> Option<f64> {
        None
    }

    fn name(&self) -> String;
}

/// `a ≡ c·Id`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantField {
    c: f64,
}

impl ConstantField {
    /// `c = 1/2` gives the solvable Brownian case, which sits below the usual
    /// lower bound 1; the field then reports `λ_min = c`.
    pub fn new(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(invalid("c", format!("constant diffusivity must be positive, got {c}")));
        }
        Ok(ConstantField { c })
    }

    pub fn value(&self) -> f64 {
        self.c
    }
}

impl CoefficientField for ConstantField {
    fn evaluate(&self, nb: Neighborhood<'_>) -> MatrixD {
        MatrixD::scalar(nb.dim(), self.c)
    }

    fn lambda(&self) -> f64 {
        self.c.max(1.0)
    }

    fn lambda_min(&self) -> f64 {
        self.c.min(1.0)
    }

    fn as_constant(&self) -> Option<f64> {
        Some(self.c)
    }

    fn name(&self) -> String {
        format!("constant(c={})", self.c)
    }
}

/// `a(μ, x) = (1 + 1{μ(B_1(x)) = 1})·Id`: diffusivity 2 for a particle with
/// no neighbour within distance 1, else 1.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LonelyParticleField;

impl CoefficientField for LonelyParticleField {
    fn evaluate(&self, nb: Neighborhood<'_>) -> MatrixD {
        let c = if nb.count() == 1 { 2.0 } else { 1.0 };
        MatrixD::scalar(nb.dim(), c)
    }

    fn lambda(&self) -> f64 {
        2.0
    }

    fn name(&self) -> String {
        "lonely_particle".into()
    }
}

pub fn builtin_constant(c: f64) -> Result<ConstantField> {
    ConstantField::new(c)
}

pub fn builtin_lonely_particle() -> LonelyParticleField {
    LonelyParticleField
}

/// Declarative field selection, e.g. `{kind = "constant", c = 0.5}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant { c: f64 },
    LonelyParticle {},
}

impl FieldSpec {
    pub fn build(&self) -> Result<Arc<dyn CoefficientField>> {
        Ok(match *self {
            FieldSpec::Constant { c } => Arc::new(ConstantField::new(c)?),
            FieldSpec::LonelyParticle {} => Arc::new(LonelyParticleField),
        })
    }
}

/// Collect displacements `y - x` of points with `|y - x| < 1` into `buf`.
pub fn gather_neighborhood(mu: &Configuration, x: &[f64], buf: &mut Vec<f64>) {
    buf.clear();
    let dom = mu.domain();
    let d = dom.dim();
    let mut disp = [0.0; MAX_DIM];
    let r2 = INTERACTION_RADIUS * INTERACTION_RADIUS;
    for p in mu.points() {
        dom.displacement(x, p, &mut disp[..d]);
        let n2: f64 = disp[..d].iter().map(|v| v * v).sum();
        if n2 < r2 {
            buf.extend_from_slice(&disp[..d]);
        }
    }
}

/// `a(μ, x)`.
pub fn eval_a(field: &dyn CoefficientField, mu: &Configuration, x: &[f64]) -> MatrixD {
    let mut buf = Vec::new();
    gather_neighborhood(mu, x, &mut buf);
    field.evaluate(Neighborhood::new(mu.dim(), &buf))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Ellipticity,
    Symmetry,
    Locality,
    Stationarity,
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub sample: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct FieldReport {
    pub field: String,
    pub samples: usize,
    pub violations: Vec<Violation>,
}

impl FieldReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

/// Sample random `(μ, x, ξ)` and check ellipticity `λ_min ≤ ξ·aξ ≤ Λ`,
/// symmetry, locality (points added beyond distance 1 change nothing) and
/// stationarity under random shifts.
pub fn validate_field(field: &dyn CoefficientField, dim: usize, n_samples: usize, lambda_min: f64, stream: &Stream) -> Result<FieldReport> {
    let side = 6.0;
    let domain = Domain::periodic(dim, side)?;
    let mut violations = Vec::new();
    let lam = field.lambda();
    for s in 0..n_samples {
        let sub = stream.derive(Tag::Validate, s as u64);
        let mut rng = sub.rng();
        let rho = rng.gen_range(0.05..3.0);
        let mu = sample_poisson(&domain, &PoissonParams::new(rho, 0), &sub)?;
        let x: Vec<f64> = if !mu.is_empty() && rng.gen_bool(0.5) {
            mu.point(rng.gen_range(0..mu.len())).to_vec()
        } else {
            (0..dim).map(|_| rng.gen_range(0.0..side)).collect()
        };
        let a = eval_a(field, &mu, &x);

        if !a.is_symmetric() {
            violations.push(Violation {
                kind: ViolationKind::Symmetry,
                sample: s,
                detail: format!("{a:?}"),
            });
        }

        let xi = random_unit(dim, &mut rng);
        let q = a.quad(&xi);
        let tol = 1e-12 * lam.max(1.0);
        if q < lambda_min - tol || q > lam + tol {
            violations.push(Violation {
                kind: ViolationKind::Ellipticity,
                sample: s,
                detail: format!("xi·a·xi = {q} outside [{lambda_min}, {lam}]"),
            });
        }

        // a far point at distance in (1, 2.5)
        let dir = random_unit(dim, &mut rng);
        let r = rng.gen_range(1.0 + 1e-9..2.5);
        let far: Vec<f64> = (0..dim).map(|k| x[k] + r * dir[k]).collect();
        let mut perturbed = mu.clone();
        perturbed.push(&far)?;
        let far_pt = perturbed.point(perturbed.len() - 1).to_vec();
        if domain.distance_sq(&x, &far_pt) >= 1.0 && eval_a(field, &perturbed, &x) != a {
            violations.push(Violation {
                kind: ViolationKind::Locality,
                sample: s,
                detail: format!("adding {far_pt:?} changed a"),
            });
        }

        let h: Vec<f64> = (0..dim).map(|_| rng.gen_range(-side..side)).collect();
        let shifted = mu.transport(&h);
        let xh: Vec<f64> = (0..dim).map(|k| domain.wrap_coord(x[k] + h[k])).collect();
        if eval_a(field, &shifted, &xh) != a {
            violations.push(Violation {
                kind: ViolationKind::Stationarity,
                sample: s,
                detail: format!("shift {h:?} changed a"),
            });
        }
    }
    Ok(FieldReport {
        field: field.name(),
        samples: n_samples,
        violations,
    })
}

fn random_unit<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}
