//! Entropy of the Poisson law conditioned on δ-good block counts.

use super::chernoff::ln_poisson_pmf;
use super::{params, BoundReport};
use crate::error::{invalid, Result};
use crate::estimators::{is_delta_good, BlockCounts};

/// `H(g_M) = −log P[M_{L,l} = M]`, block by block.
pub fn entropy_blocks(m: &BlockCounts, rho: f64) -> Vec<f64> {
    let mean = m.mean_count(rho);
    m.counts.iter().map(|&c| -ln_poisson_pmf(c, mean)).collect()
}

fn check_pre(m: &BlockCounts, rho: f64, delta: f64) -> Result<()> {
    if m.small < 1 {
        return Err(invalid("l", "need l ≥ 1"));
    }
    if !(delta > 0.0 && delta < rho / 2.0) {
        return Err(invalid("delta", format!("need 0 < δ < ρ/2, got δ = {delta}, ρ = {rho}")));
    }
    if !is_delta_good(m, rho, delta) {
        return Err(invalid("M", "block counts are not δ-good"));
    }
    Ok(())
}

/// The scale `(L/l)^d (log l + l^d δ²)` multiplying the constant.
fn scale(m: &BlockCounts, delta: f64) -> f64 {
    let l = m.small as f64;
    m.len() as f64 * (l.ln() + l.powi(m.dim as i32) * delta * delta)
}

/// `H(g_M) / ((L/l)^d (log l + l^d δ²))`, the smallest admissible constant.
pub fn entropy_ratio(m: &BlockCounts, rho: f64, delta: f64) -> Result<f64> {
    check_pre(m, rho, delta)?;
    Ok(entropy_blocks(m, rho).iter().sum::<f64>() / scale(m, delta))
}

/// The single constant that makes the bound hold on every sample.
pub fn fit_entropy_constant(samples: &[(BlockCounts, f64, f64)]) -> Result<f64> {
    let mut c = 0.0f64;
    for (m, rho, delta) in samples {
        c = c.max(entropy_ratio(m, *rho, *delta)?);
    }
    Ok(c)
}

/// `H(g_M) ≤ C (L/l)^d (log l + l^d δ²)` with a given (fitted) `C`.
///
/// The note counts blocks that miss the per-block form
/// `−log p(M_i) ≤ ρ l^d δ_i² + C log l`.
pub fn check_entropy(m: &BlockCounts, rho: f64, delta: f64, c: f64) -> Result<BoundReport> {
    check_pre(m, rho, delta)?;
    let blocks = entropy_blocks(m, rho);
    let lhs: f64 = blocks.iter().sum();
    let mean = m.mean_count(rho);
    let l = m.small as f64;
    let block_misses = blocks
        .iter()
        .zip(&m.counts)
        .filter(|(h, &k)| {
            let di = k as f64 / mean - 1.0;
            **h > mean * di * di + c * l.ln()
        })
        .count();
    let r = BoundReport::new(
        "entropy",
        params(&[("rho", rho), ("l", l), ("L", m.big as f64), ("delta", delta), ("d", m.dim as f64), ("C", c)]),
        lhs,
        0.0,
        c * scale(m, delta),
    );
    Ok(r.with_note(format!("fitted C; {block_misses} of {} blocks above the per-block form", m.len())))
}
