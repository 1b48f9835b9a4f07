//! Power-law exponent fits for decay series.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::stats::weighted_line_fit;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub slope_err: f64,
    pub intercept: f64,
}

/// Weighted least squares of `log value` on `log t`.
///
/// Points are weighted by `(value/stderr)²`, the inverse variance of
/// `log value` to first order, and the slope error is the larger of the
/// formal `1/sqrt(Σw(x−x̄)²)` and the residual-based one. If any stderr is
/// zero all weights are equal and only the residual-based error is used.
pub fn fit_decay_exponent(series: &[(f64, f64, f64)]) -> Result<SlopeFit> {
    if series.len() < 2 {
        return Err(invalid("series", "need at least two points"));
    }
    if series.iter().any(|&(t, v, _)| !(t > 0.0 && v > 0.0)) {
        return Err(invalid("series", "times and values must be positive"));
    }
    let xs: Vec<f64> = series.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = series.iter().map(|p| p.1.ln()).collect();
    let weighted = series.iter().all(|p| p.2 > 0.0);
    let ws: Vec<f64> = if weighted {
        series.iter().map(|p| (p.1 / p.2).powi(2)).collect()
    } else {
        vec![1.0; series.len()]
    };
    let (a, b, se) = weighted_line_fit(&xs, &ys, &ws);
    let se = if weighted {
        let sw: f64 = ws.iter().sum();
        let xm = xs.iter().zip(&ws).map(|(x, w)| x * w).sum::<f64>() / sw;
        let formal = 1.0 / xs.iter().zip(&ws).map(|(x, w)| w * (x - xm).powi(2)).sum::<f64>().sqrt();
        if se.is_nan() {
            formal
        } else {
            se.max(formal)
        }
    } else {
        se
    };
    Ok(SlopeFit {
        slope: b,
        slope_err: se,
        intercept: a,
    })
}
