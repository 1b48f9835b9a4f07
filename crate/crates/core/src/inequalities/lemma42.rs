//! Principal eigenvalue of `−A + εV` on a finite uniform probability space.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use super::{params, BoundReport};
use crate::error::{invalid, Result};

/// `A` symmetric PSD with `A·1 = 0` and simple kernel, `V` mean zero.
/// Inner products are against the uniform law, `⟨f, g⟩ = (1/n) Σ f_i g_i`.
#[derive(Debug, Clone)]
pub struct SpectralProblem {
    pub a: DMatrix<f64>,
    pub v: DVector<f64>,
    eigen: SymmetricEigen<f64, nalgebra::Dyn>,
}

const KERNEL_TOL: f64 = 1e-10;

impl SpectralProblem {
    pub fn new(a: DMatrix<f64>, v: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if n < 2 || a.ncols() != n || v.len() != n {
            return Err(invalid("A", "need a square matrix of size ≥ 2 matching V"));
        }
        let scale = a.amax().max(1.0);
        if (&a - a.transpose()).amax() > KERNEL_TOL * scale {
            return Err(invalid("A", "matrix is not symmetric"));
        }
        if a.column_sum().amax() > KERNEL_TOL * scale * n as f64 {
            return Err(invalid("A", "constants are not in the kernel"));
        }
        if v.sum().abs() > KERNEL_TOL * v.amax().max(1.0) * n as f64 {
            return Err(invalid("V", "perturbation is not mean zero"));
        }
        let eigen = SymmetricEigen::new(a.clone());
        let mut ev: Vec<f64> = eigen.eigenvalues.iter().copied().collect();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        if ev[0] < -KERNEL_TOL * scale {
            return Err(invalid("A", "matrix is not positive semi-definite"));
        }
        if ev[1] <= KERNEL_TOL * scale {
            return Err(invalid("A", "zero is not a simple eigenvalue"));
        }
        Ok(SpectralProblem { a, v, eigen })
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// The spectral gap `δ`.
    pub fn gap(&self) -> f64 {
        let mut ev: Vec<f64> = self.eigen.eigenvalues.iter().copied().collect();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        ev[1]
    }

    pub fn v_sup(&self) -> f64 {
        self.v.amax()
    }

    /// `⟨V, A^{−1} V⟩` with the pseudo-inverse on constants' complement.
    pub fn v_a_inv_v(&self) -> f64 {
        let scale = self.a.amax().max(1.0);
        let mut s = 0.0;
        for (k, &lam) in self.eigen.eigenvalues.iter().enumerate() {
            if lam > KERNEL_TOL * scale {
                let c = self.eigen.eigenvectors.column(k).dot(&self.v);
                s += c * c / lam;
            }
        }
        s / self.len() as f64
    }

    /// `λ_ε = sup_{‖f‖=1} ⟨f, (−A + εV) f⟩`.
    pub fn principal_eigenvalue(&self, eps: f64) -> f64 {
        let m = -&self.a + DMatrix::from_diagonal(&(&self.v * eps));
        SymmetricEigen::new(m).eigenvalues.max()
    }
}

/// Weighted complete-graph Laplacian with weights in `[0.1, 1]` and a
/// uniform `V` in `[−1, 1]` recentred to mean zero.
pub fn random_spectral_problem<R: Rng>(n: usize, rng: &mut R) -> Result<SpectralProblem> {
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let w = rng.gen_range(0.1..1.0);
            a[(i, j)] = -w;
            a[(j, i)] = -w;
            a[(i, i)] += w;
            a[(j, j)] += w;
        }
    }
    let mut v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let mean = v.mean();
    v.add_scalar_mut(-mean);
    SpectralProblem::new(a, v)
}

/// `0 ≤ λ_ε ≤ ε²⟨V, A^{−1}V⟩ / (1 − 2‖V‖_∞ ε/δ)` for `0 < ε < δ/(2‖V‖_∞)`.
///
/// The report's lhs is `λ_ε`; the note records whether the lower bound held.
pub fn check_lemma42(problem: &SpectralProblem, eps: f64) -> Result<BoundReport> {
    let delta = problem.gap();
    let sup = problem.v_sup();
    if !(eps > 0.0) || (sup > 0.0 && eps >= delta / (2.0 * sup)) {
        return Err(invalid("eps", format!("need 0 < ε < δ/(2‖V‖∞) = {}", delta / (2.0 * sup))));
    }
    let lambda = problem.principal_eigenvalue(eps);
    let rhs = eps * eps * problem.v_a_inv_v() / (1.0 - 2.0 * sup * eps / delta);
    // eigen-solver round-off, relative to the matrix scale
    let tol = 1e-12 * (problem.a.amax() + eps * sup).max(1.0);
    let lower = lambda >= -tol;
    let mut r = BoundReport::new("lemma42", params(&[("n", problem.len() as f64), ("eps", eps), ("delta", delta), ("v_sup", sup)]), lambda, tol, rhs);
    r.pass = r.pass && lower;
    Ok(r.with_note(if lower { "lower bound holds" } else { "lower bound fails" }))
}
