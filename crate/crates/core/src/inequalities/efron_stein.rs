//! Efron–Stein with the interval Poincaré inequality, checked by tensor
//! Gauss–Legendre quadrature for a few particles uniform in `Q_l`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{params, BoundReport};
use crate::error::{invalid, Result};

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev initial guess, then Newton on P_n
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `1/λ_1` of the Neumann Laplacian on `[0, 1]`, found by brute force as the
/// first non-zero eigenvalue of the cell-centred finite-difference matrix.
/// The discrete eigenvalue sits just below `π²`, so the constant errs on the
/// safe side.
pub fn neumann_poincare_constant(cells: usize) -> f64 {
    let n = cells;
    let h2 = (n * n) as f64;
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        if i > 0 {
            a[(i, i - 1)] = -h2;
            diag += h2;
        }
        if i + 1 < n {
            a[(i, i + 1)] = -h2;
            diag += h2;
        }
        a[(i, i)] = diag;
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    1.0 / ev[1]
}

/// Smooth test functions of `n` points in `[0, l]^d`, flattened.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EsFunction {
    Constant,
    /// `x_1`.
    Linear,
    /// `cos(π x_1 / l)`, the equality case.
    Cosine,
    /// `Σ_i sin(2π x_i / l)`, additive.
    SumSines,
    /// `Π_i cos(π x_i / l)`.
    Product,
    /// `(Σ_i x_i / l)²`.
    SquaredSum,
    /// `exp(Σ_i x_i / l)`.
    Exponential,
    /// `exp(−|x − c|²/l²)` with `c` the centre of the cube.
    Gaussian,
}

impl EsFunction {
    pub fn family() -> Vec<EsFunction> {
        use EsFunction::*;
        vec![Constant, Linear, Cosine, SumSines, Product, SquaredSum, Exponential, Gaussian]
    }

    pub fn eval(&self, x: &[f64], l: f64) -> f64 {
        use std::f64::consts::PI;
        use EsFunction::*;
        match self {
            Constant => 1.0,
            Linear => x[0],
            Cosine => (PI * x[0] / l).cos(),
            SumSines => x.iter().map(|v| (2.0 * PI * v / l).sin()).sum(),
            Product => x.iter().map(|v| (PI * v / l).cos()).product(),
            SquaredSum => x.iter().map(|v| v / l).sum::<f64>().powi(2),
            Exponential => x.iter().map(|v| v / l).sum::<f64>().exp(),
            Gaussian => (-x.iter().map(|v| (v / l - 0.5).powi(2)).sum::<f64>()).exp(),
        }
    }

    /// `Σ_k (∂_k f)²` over all coordinates.
    pub fn grad_sq(&self, x: &[f64], l: f64) -> f64 {
        use std::f64::consts::PI;
        use EsFunction::*;
        match self {
            Constant => 0.0,
            Linear => 1.0,
            Cosine => (PI / l * (PI * x[0] / l).sin()).powi(2),
            SumSines => x.iter().map(|v| (2.0 * PI / l * (2.0 * PI * v / l).cos()).powi(2)).sum(),
            Product => (0..x.len())
                .map(|k| {
                    let rest: f64 = x.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, v)| (PI * v / l).cos()).product();
                    (PI / l * (PI * x[k] / l).sin() * rest).powi(2)
                })
                .sum(),
            SquaredSum => {
                let s: f64 = x.iter().map(|v| v / l).sum();
                x.len() as f64 * (2.0 * s / l).powi(2)
            }
            Exponential => {
                let e = x.iter().map(|v| v / l).sum::<f64>().exp();
                x.len() as f64 * (e / l).powi(2)
            }
            Gaussian => {
                let g = self.eval(x, l);
                x.iter().map(|v| (2.0 * (v / l - 0.5) / l * g).powi(2)).sum()
            }
        }
    }
}

/// `(E f, E f², E|∇f|²)` under the uniform law on `[0, l]^dims`.
fn moments(f: EsFunction, dims: usize, l: f64, order: usize) -> (f64, f64, f64) {
    let (nodes, weights) = gauss_legendre(order);
    let xs: Vec<f64> = nodes.iter().map(|z| 0.5 * l * (z + 1.0)).collect();
    let ws: Vec<f64> = weights.iter().map(|w| 0.5 * w).collect();
    let mut idx = vec![0usize; dims];
    let mut x = vec![0.0; dims];
    let (mut m1, mut m2, mut g2) = (0.0, 0.0, 0.0);
    loop {
        let mut w = 1.0;
        for k in 0..dims {
            x[k] = xs[idx[k]];
            w *= ws[idx[k]];
        }
        let v = f.eval(&x, l);
        m1 += w * v;
        m2 += w * v * v;
        g2 += w * f.grad_sq(&x, l);
        let mut k = 0;
        loop {
            if k == dims {
                return (m1, m2, g2);
            }
            idx[k] += 1;
            if idx[k] < order {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// `Var f(X) ≤ C l² Σ_i E|∇_{x_i} f(X)|²` for `n` independent uniform points
/// of `Q_l ⊂ ℝ^d`, with `C` the brute-force Neumann constant of the unit
/// interval (the cube has the same first eigenvalue).
pub fn check_efron_stein(n: usize, l: f64, dim: usize, f: EsFunction, order: usize) -> Result<BoundReport> {
    let dims = n * dim;
    if dims == 0 || dims > 4 {
        return Err(invalid("n", format!("tensor quadrature supports 1 to 4 coordinates, got {dims}")));
    }
    if !(l > 0.0) || order < 2 {
        return Err(invalid("l", "need l > 0 and quadrature order at least 2"));
    }
    let c = neumann_poincare_constant(400);
    let var_and_rhs = |q: usize| {
        let (m1, m2, g2) = moments(f, dims, l, q);
        ((m2 - m1 * m1).max(0.0), c * l * l * g2)
    };
    let (lhs, rhs) = var_and_rhs(order);
    let (lhs2, rhs2) = var_and_rhs(order + 4);
    let err = (lhs - lhs2).abs() + (rhs - rhs2).abs() + 1e-14 * lhs.abs().max(rhs.abs());
    let r = BoundReport::new("efron_stein", params(&[("n", n as f64), ("l", l), ("d", dim as f64), ("order", order as f64), ("C", c)]), lhs, err, rhs);
    Ok(r.with_note(format!("{f:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn quadrature_is_exact_for_polynomials() {
        for n in [1, 2, 5, 12] {
            let (x, w) = gauss_legendre(n);
            for p in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p as i32)).sum();
                let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} p={p}");
            }
        }
    }

    #[test]
    fn neumann_constant_is_near_inverse_pi_squared() {
        let c = neumann_poincare_constant(400);
        assert!(c >= 1.0 / (PI * PI));
        assert!((c * PI * PI - 1.0).abs() < 1e-5);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = [0.3, 1.7, 0.9];
        let l = 2.0;
        for f in EsFunction::family() {
            let mut g2 = 0.0;
            for k in 0..3 {
                let (mut a, mut b) = (x, x);
                a[k] += 1e-6;
                b[k] -= 1e-6;
                g2 += ((f.eval(&a, l) - f.eval(&b, l)) / 2e-6).powi(2);
            }
            assert!((g2 - f.grad_sq(&x, l)).abs() < 1e-6, "{f:?}");
        }
    }

    #[test]
    fn linear_ratio_is_one_twelfth() {
        let r = check_efron_stein(1, 3.0, 1, EsFunction::Linear, 8).unwrap();
        assert!((r.lhs - 9.0 / 12.0).abs() < 1e-12);
        assert!((r.lhs / (r.rhs / r.param("C").unwrap()) - 1.0 / 12.0).abs() < 1e-12);
        assert!(r.pass);
    }

    #[test]
    fn cosine_is_the_equality_case() {
        let r = check_efron_stein(1, 2.0, 1, EsFunction::Cosine, 24).unwrap();
        assert!((r.lhs - 0.5).abs() < 1e-12);
        assert!(r.pass && r.margin >= 0.0 && r.margin < 1e-5);
    }

    #[test]
    fn constant_is_zero() {
        let r = check_efron_stein(3, 1.0, 1, EsFunction::Constant, 6).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        assert!(r.pass);
    }

    #[test]
    fn additive_variance_splits() {
        // Var Σ sin(2πx_i/l) = n/2 by independence
        for n in 1..=3 {
            let r = check_efron_stein(n, 1.5, 1, EsFunction::SumSines, 16).unwrap();
            assert!((r.lhs - 0.5 * n as f64).abs() < 1e-12, "n={n}: {}", r.lhs);
        }
    }

    #[test]
    fn whole_family_passes() {
        for n in 1..=3 {
            for f in EsFunction::family() {
                let r = check_efron_stein(n, 2.0, 1, f, 16).unwrap();
                assert!(r.pass, "{r:?}");
            }
        }
    }
}
