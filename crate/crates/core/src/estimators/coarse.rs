//! Coarse-graining paths and the telescoping identity they feed.

use serde::Serialize;

use crate::configuration::{Configuration, Domain};
use crate::error::{invalid, Result};
use crate::observable::Observable;

/// Lattice path `0 = z_0, …, z_n = y` with steps of sup-norm at most `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CoarsePath {
    pub target: Vec<i64>,
    pub k: i64,
    pub waypoints: Vec<Vec<i64>>,
}

impl CoarsePath {
    /// Number of steps `n(y)`.
    pub fn len(&self) -> usize {
        self.waypoints.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn steps(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        self.waypoints.windows(2).map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect())
    }

    /// Checks the path invariants; returns a description of the first failure.
    pub fn check(&self) -> std::result::Result<(), String> {
        let d = self.target.len();
        let first = self.waypoints.first().ok_or("no waypoints")?;
        if first.iter().any(|&c| c != 0) {
            return Err("path does not start at the origin".into());
        }
        if self.waypoints.last() != Some(&self.target) {
            return Err("path does not end at the target".into());
        }
        let n = self.waypoints.len();
        for (i, z) in self.waypoints.iter().enumerate() {
            if z.len() != d {
                return Err(format!("waypoint {i} has wrong dimension"));
            }
            if i + 1 < n && z.iter().any(|c| c % self.k != 0) {
                return Err(format!("waypoint {i} is off the coarse lattice"));
            }
        }
        for (i, h) in self.steps().enumerate() {
            if h.iter().any(|c| c.abs() > self.k) {
                return Err(format!("step {i} is longer than k"));
            }
        }
        Ok(())
    }
}

/// Shortest coarse path to `y`.
///
/// Every coordinate that is still more than `k` away moves by `±k` at once,
/// so intermediate points stay in `(kℤ)^d`; one last step lands on `y`. The
/// length is `max_j ⌈|y_j|/k⌉`, which no path with steps of sup-norm `k` can
/// beat.
pub fn coarse_path(y: &[i64], k: i64) -> Result<CoarsePath> {
    if k < 1 {
        return Err(invalid("k", format!("step size must be a positive integer, got {k}")));
    }
    if y.is_empty() {
        return Err(invalid("y", "target must have at least one coordinate"));
    }
    let mut z = vec![0i64; y.len()];
    let mut waypoints = vec![z.clone()];
    while z.iter().zip(y).any(|(a, b)| (b - a).abs() > k) {
        for (a, b) in z.iter_mut().zip(y) {
            let gap = b - *a;
            if gap.abs() > k {
                *a += k * gap.signum();
            }
        }
        waypoints.push(z.clone());
    }
    if z != y {
        waypoints.push(y.to_vec());
    }
    Ok(CoarsePath {
        target: y.to_vec(),
        k,
        waypoints,
    })
}

/// `(u − τ_y u) − Σ_i (τ_{z_i} u − τ_{z_{i+1}} u)` evaluated on `μ`.
pub fn telescope_check(u: &Observable, y: &[i64], k: i64, mu: &Configuration) -> Result<f64> {
    let domain: &Domain = mu.domain();
    if y.len() != domain.dim() {
        return Err(crate::error::Error::DimensionMismatch {
            expected: domain.dim(),
            got: y.len(),
        });
    }
    let path = coarse_path(y, k)?;
    let at = |z: &[i64]| {
        let h: Vec<f64> = z.iter().map(|&c| c as f64).collect();
        u.shifted(&h, domain).eval(mu)
    };
    let vals: Vec<f64> = path.waypoints.iter().map(|z| at(z)).collect();
    let lhs = vals[0] - vals[vals.len() - 1];
    let rhs: f64 = vals.windows(2).map(|w| w[0] - w[1]).sum();
    Ok(lhs - rhs)
}
