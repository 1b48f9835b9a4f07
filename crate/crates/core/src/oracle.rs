//! Heat-kernel ground truth for independent Brownian particles.
//!
//! With `a ≡ 1/2` each particle is a standard Brownian motion, so for a linear
//! observable `u = ∫ f dμ` one has `u_t = ∫ f_t dμ` with `f_t = Φ_t ⋆ f` and
//! `Var_ρ[u_t] = ρ‖f_t‖²`. Functions live on uniform grids and the
//! convolution is a separable direct sum.

use crate::configuration::MAX_DIM;
use crate::error::{invalid, Error, Result};
use crate::stats::KahanSum;

/// The Gaussian kernel is cut at this many standard deviations.
pub const KERNEL_CUTOFF: f64 = 6.0;

/// Values below this fraction of the sup-norm count as outside the support.
pub const SUPPORT_FLOOR: f64 = 1e-14;

/// Samples of `f` on the nodes `lo + i·h`, `0 ≤ i_k < n_k`; axis 0 varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    dim: usize,
    lo: [f64; MAX_DIM],
    h: f64,
    n: [usize; MAX_DIM],
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(dim: usize, lo: &[f64], h: f64, n: &[usize]) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM || lo.len() != dim || n.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: lo.len().min(n.len()),
            });
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid("h", format!("grid spacing must be positive, got {h}")));
        }
        let mut lo3 = [0.0; MAX_DIM];
        let mut n3 = [1usize; MAX_DIM];
        lo3[..dim].copy_from_slice(lo);
        n3[..dim].copy_from_slice(n);
        Ok(GridFunction {
            dim,
            lo: lo3,
            h,
            n: n3,
            values: vec![0.0; n3.iter().product()],
        })
    }

    /// Tabulate `f` on the grid.
    pub fn sample(dim: usize, lo: &[f64], h: f64, n: &[usize], f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let mut g = Self::zeros(dim, lo, h, n)?;
        let mut x = [0.0; MAX_DIM];
        for idx in 0..g.values.len() {
            g.node_into(idx, &mut x);
            g.values[idx] = f(&x[..dim]);
        }
        Ok(g)
    }

    /// Grid of spacing `h` covering `[a, b]` per axis (a, b multiples of h are
    /// hit exactly when they are).
    pub fn on_box(dim: usize, a: f64, b: f64, h: f64, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let n = ((b - a) / h).round() as usize + 1;
        Self::sample(dim, &vec![a; dim], h, &vec![n; dim], f)
    }

    /// `1_{[c-r/2, c+r/2]^d}` padded by `pad` on every side. The cube faces
    /// fall on nodes when `r/2` and `pad` are multiples of `h`; face nodes
    /// inside the grid carry 1/2 per axis, face nodes on the grid edge carry 1
    /// (the trapezoid end weight already halves them).
    pub fn indicator_cube(dim: usize, center: f64, r: f64, h: f64, pad: f64) -> Result<Self> {
        let half = 0.5 * r;
        let a = center - half - pad;
        let b = center + half + pad;
        let tol = 1e-9 * h;
        let face = if pad > tol { 0.5 } else { 1.0 };
        Self::on_box(dim, a, b, h, |x| {
            x.iter()
                .map(|&xi| {
                    let e = (xi - center).abs() - half;
                    if e < -tol {
                        1.0
                    } else if e <= tol {
                        face
                    } else {
                        0.0
                    }
                })
                .product()
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn shape(&self) -> &[usize] {
        &self.n[..self.dim]
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo[..self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn node_into(&self, mut idx: usize, x: &mut [f64]) {
        for k in 0..self.dim {
            let i = idx % self.n[k];
            idx /= self.n[k];
            x[k] = self.lo[k] + i as f64 * self.h;
        }
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        let mut x = [0.0; MAX_DIM];
        self.node_into(idx, &mut x);
        x[..self.dim].to_vec()
    }

    /// Value at a node given by its multi-index.
    pub fn at(&self, idx: &[usize]) -> f64 {
        let mut flat = 0;
        for k in (0..self.dim).rev() {
            flat = flat * self.n[k] + idx[k];
        }
        self.values[flat]
    }

    /// Multilinear interpolation; zero outside the grid.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        for k in 0..self.dim {
            let s = (x[k] - self.lo[k]) / self.h;
            if s < 0.0 || s > (self.n[k] - 1) as f64 {
                return 0.0;
            }
            let i = (s.floor() as usize).min(self.n[k].saturating_sub(2));
            base[k] = i;
            frac[k] = s - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << self.dim) {
            let mut w = 1.0;
            let mut flat = 0;
            for k in (0..self.dim).rev() {
                let bit = (corner >> k) & 1;
                let i = (base[k] + bit).min(self.n[k] - 1);
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                flat = flat * self.n[k] + i;
            }
            if w != 0.0 {
                acc += w * self.values[flat];
            }
        }
        acc
    }

    fn trapezoid(&self, g: impl Fn(f64) -> f64) -> f64 {
        let mut s = KahanSum::new();
        for (idx, &v) in self.values.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let mut w = 1.0;
            let mut rem = idx;
            for k in 0..self.dim {
                let i = rem % self.n[k];
                rem /= self.n[k];
                if self.n[k] > 1 && (i == 0 || i == self.n[k] - 1) {
                    w *= 0.5;
                }
            }
            s.add(w * g(v));
        }
        s.value() * self.h.powi(self.dim as i32)
    }

    /// Trapezoid `∫ f`.
    pub fn integral(&self) -> f64 {
        self.trapezoid(|v| v)
    }

    /// Trapezoid `∫ f²`.
    pub fn l2_sq(&self) -> f64 {
        self.trapezoid(|v| v * v)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Index range `[first, last]` of values above `SUPPORT_FLOOR·‖f‖∞` along
    /// each axis, or `None` for the zero function.
    pub fn support_indices(&self) -> Option<Vec<(usize, usize)>> {
        let floor = SUPPORT_FLOOR * self.sup_norm();
        let mut r: Vec<(usize, usize)> = vec![(usize::MAX, 0); self.dim];
        let mut any = false;
        for (idx, &v) in self.values.iter().enumerate() {
            if v.abs() <= floor {
                continue;
            }
            any = true;
            let mut rem = idx;
            for (k, rk) in r.iter_mut().enumerate() {
                let i = rem % self.n[k];
                rem /= self.n[k];
                rk.0 = rk.0.min(i);
                rk.1 = rk.1.max(i);
            }
        }
        any.then_some(r)
    }

    /// Values multiplied by the trapezoid end weights.
    fn weighted_values(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        for (idx, x) in v.iter_mut().enumerate() {
            let mut rem = idx;
            for k in 0..self.dim {
                let i = rem % self.n[k];
                rem /= self.n[k];
                if self.n[k] > 1 && (i == 0 || i == self.n[k] - 1) {
                    *x *= 0.5;
                }
            }
        }
        v
    }

    /// Pointwise difference sup-norm on a common grid.
    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Normalized discrete Gaussian with variance `t` on the lattice `hℤ`, cut at
/// `KERNEL_CUTOFF·√t`. Index `R + j` holds the weight of offset `j`.
fn kernel(t: f64, h: f64) -> (usize, Vec<f64>) {
    let reach = (KERNEL_CUTOFF * t.sqrt() / h).floor() as usize;
    let mut w: Vec<f64> = (0..=2 * reach)
        .map(|i| {
            let x = (i as f64 - reach as f64) * h;
            (-x * x / (2.0 * t)).exp()
        })
        .collect();
    let total: f64 = w.iter().copied().collect::<KahanSum>().value();
    w.iter_mut().for_each(|v| *v /= total);
    (reach, w)
}

/// Convolve along `axis`: output node `J` sits at input index `first + J·stride`.
fn convolve_axis(
    values: &[f64],
    shape: &[usize; MAX_DIM],
    axis: usize,
    first: i64,
    stride: usize,
    count: usize,
    reach: usize,
    w: &[f64],
) -> (Vec<f64>, [usize; MAX_DIM]) {
    let n_in = shape[axis];
    let inner: usize = shape[..axis].iter().product();
    let outer: usize = shape[axis + 1..].iter().product();
    let mut out_shape = *shape;
    out_shape[axis] = count;
    let mut out = vec![0.0; inner * count * outer];
    let r = reach as i64;
    for o in 0..outer {
        for jo in 0..count {
            let c = first + (jo * stride) as i64;
            let lo = (c - r).max(0);
            let hi = (c + r).min(n_in as i64 - 1);
            if lo > hi {
                continue;
            }
            for i in lo..=hi {
                let wi = w[(i - c + r) as usize];
                let src = (o * n_in + i as usize) * inner;
                let dst = (o * count + jo) * inner;
                for q in 0..inner {
                    out[dst + q] += wi * values[src + q];
                }
            }
        }
    }
    (out, out_shape)
}

/// `f_t = Φ_t ⋆ f` on the same grid. The grid must extend at least
/// `6√t` beyond the support of `f` on every side.
pub fn heat_convolve(f: &GridFunction, t: f64) -> Result<GridFunction> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("t", format!("time must be non-negative, got {t}")));
    }
    if t == 0.0 {
        return Ok(f.clone());
    }
    let Some(supp) = f.support_indices() else {
        return Ok(f.clone());
    };
    let needed = KERNEL_CUTOFF * t.sqrt();
    let available = supp
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| (a.min(f.n[k] - 1 - b)) as f64 * f.h)
        .fold(f64::INFINITY, f64::min);
    if available + 1e-9 * f.h < needed {
        return Err(Error::InsufficientPadding { needed, available });
    }
    let (reach, w) = kernel(t, f.h);
    let mut values = f.weighted_values();
    let mut shape = f.n;
    for axis in 0..f.dim {
        let (v, s) = convolve_axis(&values, &shape, axis, 0, 1, shape[axis], reach, &w);
        values = v;
        shape = s;
    }
    Ok(GridFunction { values, ..f.clone() })
}

/// `f_t` on a coarser lattice of spacing `m·h` (with `m = round(spacing/h)`,
/// at least 1) covering the support of `f` plus `6√t`. The input needs no
/// padding; it is treated as zero off the grid.
pub fn heat_convolve_onto(f: &GridFunction, t: f64, spacing: f64) -> Result<GridFunction> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid("t", format!("time must be positive, got {t}")));
    }
    let Some(supp) = f.support_indices() else {
        return Ok(f.clone());
    };
    let m = ((spacing / f.h).round() as usize).max(1);
    let (reach, w) = kernel(t, f.h);
    let ext = reach.div_ceil(m) * m;
    let mut values = f.weighted_values();
    let mut shape = f.n;
    let mut lo = f.lo;
    for axis in 0..f.dim {
        let (a, b) = supp[axis];
        let first = a as i64 - ext as i64;
        let count = (b - a + 2 * ext) / m + 1;
        let (v, s) = convolve_axis(&values, &shape, axis, first, m, count, reach, &w);
        values = v;
        shape = s;
        lo[axis] = f.lo[axis] + first as f64 * f.h;
    }
    Ok(GridFunction {
        dim: f.dim,
        lo,
        h: m as f64 * f.h,
        n: shape,
        values,
    })
}

/// `Var_ρ[∫ f dμ] = ρ‖f‖²`.
pub fn var_exact(f: &GridFunction, rho: f64) -> f64 {
    rho * f.l2_sq()
}

/// `ρ‖f_t‖²`, computed on a lattice of spacing about `min(h, √t/4)`
/// wide enough to hold the whole of `f_t`.
pub fn var_exact_t(f: &GridFunction, rho: f64, t: f64) -> Result<f64> {
    if t == 0.0 {
        return Ok(var_exact(f, rho));
    }
    let spacing = (t.sqrt() / 4.0).max(f.h);
    Ok(var_exact(&heat_convolve_onto(f, t, spacing)?, rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::weighted_line_fit;
    use statrs::distribution::{Continuous, ContinuousCDF, Normal};

    fn gauss(var: f64) -> impl Fn(&[f64]) -> f64 {
        move |x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            (-r2 / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).powf(x.len() as f64 / 2.0)
        }
    }

    /// `(1-|·|)_+ ⋆ Φ_t` in closed form.
    fn hat_heat(x: f64, t: f64) -> f64 {
        let s = t.sqrt();
        let n = Normal::new(0.0, 1.0).unwrap();
        let g = |m: f64| m * n.cdf(m / s) + s * n.pdf(m / s);
        g(x + 1.0) - 2.0 * g(x) + g(x - 1.0)
    }

    #[test]
    fn gaussian_convolution_identity() {
        let (s2, t) = (0.5, 0.7);
        let f = GridFunction::on_box(1, -12.0, 12.0, 0.02, gauss(s2)).unwrap();
        let ft = heat_convolve(&f, t).unwrap();
        let exact = GridFunction::on_box(1, -12.0, 12.0, 0.02, gauss(s2 + t)).unwrap();
        assert!(ft.max_abs_diff(&exact) < 1e-8);
        let f2 = GridFunction::on_box(2, -11.0, 11.0, 0.05, gauss(s2)).unwrap();
        let ft2 = heat_convolve(&f2, t).unwrap();
        let ex2 = GridFunction::on_box(2, -11.0, 11.0, 0.05, gauss(s2 + t)).unwrap();
        assert!(ft2.max_abs_diff(&ex2) < 1e-8);
    }

    #[test]
    fn small_time_is_identity() {
        let f = GridFunction::on_box(1, -3.0, 3.0, 0.01, gauss(0.1)).unwrap();
        let ft = heat_convolve(&f, 1e-6).unwrap();
        assert!(ft.max_abs_diff(&f) <= 1e-3 * f.sup_norm());
    }

    #[test]
    fn padding_is_enforced() {
        let f = GridFunction::indicator_cube(1, 0.0, 1.0, 0.1, 2.0).unwrap();
        let err = heat_convolve(&f, 1.0).unwrap_err();
        assert!(matches!(err, Error::InsufficientPadding { .. }));
        assert!(heat_convolve(&f, 0.1).is_ok());
    }

    #[test]
    fn mass_preserved() {
        let f = GridFunction::indicator_cube(2, 0.0, 2.0, 0.05, 6.5).unwrap();
        let ft = heat_convolve(&f, 1.1).unwrap();
        assert!(((ft.integral() - f.integral()) / f.integral()).abs() < 1e-6);
        let fo = heat_convolve_onto(&f, 3.0, 0.4).unwrap();
        assert!(((fo.integral() - f.integral()) / f.integral()).abs() < 1e-6);
    }

    #[test]
    fn var_exact_unit_interval() {
        let f = GridFunction::indicator_cube(1, 0.5, 1.0, 0.01, 0.0).unwrap();
        assert!((var_exact(&f, 2.0) - 2.0).abs() < 1e-12);
        let zero = GridFunction::zeros(1, &[0.0], 0.1, &[10]).unwrap();
        assert_eq!(var_exact(&zero, 3.0), 0.0);
        assert_eq!(var_exact_t(&f, 2.0, 0.0).unwrap(), var_exact(&f, 2.0));
    }

    #[test]
    fn gaussian_variance_closed_form() {
        // f = exp(-|x|²/2σ²): ‖f_t‖² = (σ²/(σ²+t))^d (π(σ²+t))^{d/2}
        let s2: f64 = 0.8;
        for d in 1..=2 {
            let f = GridFunction::on_box(d, -6.0, 6.0, 0.05, |x| (-x.iter().map(|v| v * v).sum::<f64>() / (2.0 * s2)).exp()).unwrap();
            for t in [0.5, 4.0, 30.0] {
                let v = var_exact_t(&f, 1.5, t).unwrap();
                let exact = 1.5 * (s2 / (s2 + t)).powi(d as i32) * (std::f64::consts::PI * (s2 + t)).powf(d as f64 / 2.0);
                assert!(((v - exact) / exact).abs() < 1e-6, "d={d} t={t}: {v} vs {exact}");
            }
        }
    }

    #[test]
    fn variance_strictly_decreasing() {
        let f = GridFunction::indicator_cube(1, 0.0, 1.0, 0.01, 0.0).unwrap();
        let mut prev = var_exact(&f, 1.0);
        for t in [0.01, 0.1, 0.5, 1.0, 3.0, 10.0, 50.0] {
            let v = var_exact_t(&f, 1.0, t).unwrap();
            assert!(v < prev, "t={t}");
            prev = v;
        }
    }

    #[test]
    fn semigroup_property() {
        let f = GridFunction::indicator_cube(1, 0.0, 1.0, 0.02, 8.0).unwrap();
        let two = heat_convolve(&heat_convolve(&f, 0.3).unwrap(), 0.5).unwrap();
        let one = heat_convolve(&f, 0.8).unwrap();
        // discrete kernels compose up to the quadrature error of the indicator
        assert!(two.max_abs_diff(&one) < 2.0 * 0.02f64.powi(2) * 10.0, "{}", two.max_abs_diff(&one));
    }

    #[test]
    fn second_order_refinement() {
        let t = 0.3;
        let err = |h: f64| {
            let f = GridFunction::on_box(1, -6.0, 6.0, h, |x| (1.0 - x[0].abs()).max(0.0)).unwrap();
            let ft = heat_convolve(&f, t).unwrap();
            (0..ft.values().len()).map(|i| (ft.values()[i] - hat_heat(ft.node(i)[0], t)).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.1), err(0.05));
        let ratio = e1 / e2;
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio} ({e1}, {e2})");
    }

    #[test]
    fn indicator_decay_exponent() {
        let r = 1.0;
        for d in 1..=2 {
            let f = GridFunction::indicator_cube(d, 0.0, r, 0.02, 0.0).unwrap();
            let ts: Vec<f64> = (0..8).map(|i| 10.0 * r * r * 10f64.powf(i as f64 / 7.0)).collect();
            let ys: Vec<f64> = ts.iter().map(|&t| var_exact_t(&f, 1.0, t).unwrap().ln()).collect();
            let xs: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
            let (_, slope, _) = weighted_line_fit(&xs, &ys, &vec![1.0; xs.len()]);
            assert!((slope + d as f64 / 2.0).abs() < 0.02, "d={d}: {slope}");
        }
    }

    #[test]
    fn coarse_output_matches_fine() {
        let f = GridFunction::indicator_cube(1, 0.0, 1.0, 0.01, 0.0).unwrap();
        let t = 2.0;
        let coarse = heat_convolve_onto(&f, t, 0.3).unwrap();
        let padded = GridFunction::indicator_cube(1, 0.0, 1.0, 0.01, 9.0).unwrap();
        let fine = heat_convolve(&padded, t).unwrap();
        for i in 0..coarse.values().len() {
            let x = coarse.node(i);
            assert!((coarse.values()[i] - fine.interpolate(&x)).abs() < 1e-9);
        }
    }

    #[test]
    fn interpolation_is_exact_on_linear() {
        let g = GridFunction::on_box(2, 0.0, 1.0, 0.25, |x| 2.0 * x[0] - x[1] + 0.5).unwrap();
        assert!((g.interpolate(&[0.3, 0.7]) - (0.6 - 0.7 + 0.5)).abs() < 1e-12);
        assert_eq!(g.interpolate(&[1.5, 0.0]), 0.0);
    }
}
