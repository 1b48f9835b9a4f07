//! Union and Chernoff bound for the probability that some block is not δ-good.

use statrs::function::gamma::ln_gamma;

use super::{params, BoundReport};
use crate::error::{invalid, Result};

/// `log P[N = k]` for `N ~ Poisson(m)`.
pub fn ln_poisson_pmf(k: u64, m: f64) -> f64 {
    if m == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -m + k as f64 * m.ln() - ln_gamma(k as f64 + 1.0)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Sum of `exp(term(k))` for `k` running away from `start` in direction
/// `step`, stopping once terms are negligible. Terms must decrease
/// monotonically along the walk, which holds on either Poisson tail.
fn tail_sum(start: u64, step: i64, stop: Option<u64>, term: impl Fn(u64) -> f64) -> f64 {
    let mut acc = f64::NEG_INFINITY;
    let mut k = start;
    loop {
        let t = term(k);
        acc = log_add(acc, t);
        if t < acc - 40.0 {
            break;
        }
        if Some(k) == stop {
            break;
        }
        k = (k as i64 + step) as u64;
    }
    acc
}

/// `(log P[N < a], log P[N > b])` for `N ~ Poisson(m)` with `a ≤ m ≤ b`.
pub fn ln_poisson_tails(m: f64, a: u64, b: u64) -> (f64, f64) {
    let lower = if a == 0 {
        f64::NEG_INFINITY
    } else {
        tail_sum(a - 1, -1, Some(0), |k| ln_poisson_pmf(k, m))
    };
    let upper = tail_sum(b + 1, 1, None, |k| ln_poisson_pmf(k, m));
    (lower, upper)
}

/// Exact `P[M_{L,l} ∉ C_{L,l,ρ,δ}]` against `(L/l)^d exp(−ρ l^d δ²/4)`.
///
/// Everything is compared in log space, so points where both sides
/// underflow still get a verdict.
pub fn check_chernoff(rho: f64, l: f64, big: f64, delta: f64, dim: usize) -> Result<BoundReport> {
    if !(rho > 0.0 && l > 0.0 && big >= l) {
        return Err(invalid("rho", "need ρ > 0 and 0 < l ≤ L"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", format!("δ must lie in (0, 1), got {delta}")));
    }
    let ratio = big / l;
    if (ratio - ratio.round()).abs() > 1e-9 {
        return Err(invalid("L", "L/l must be an integer"));
    }
    let q = ratio.round().powi(dim as i32);
    let m = rho * l.powi(dim as i32);
    // |N/m − 1| ≤ δ  ⇔  a ≤ N ≤ b
    let a = (m * (1.0 - delta) - 1e-9 * m).ceil().max(0.0) as u64;
    let b = (m * (1.0 + delta) + 1e-9 * m).floor() as u64;
    let (lo, hi) = ln_poisson_tails(m, a, b);
    let ln_bad = log_add(lo, hi);
    // 1 − (1 − p)^q in log space; ≈ q·p once p underflows
    let ln_lhs = if ln_bad < -700.0 {
        q.ln() + ln_bad
    } else {
        (-(q * (-ln_bad.exp()).ln_1p()).exp_m1()).ln()
    };
    let ln_rhs = q.ln() - m * delta * delta / 4.0;
    // the Laplace step e^x − 1 ≤ x + x² is used at x = λ/(ρ|Q_l|) = δ/2
    let x = delta / 2.0;
    let in_regime = x <= 1.0;
    let mut r = BoundReport::new(
        "chernoff",
        params(&[("rho", rho), ("l", l), ("L", big), ("delta", delta), ("d", dim as f64), ("ln_lhs", ln_lhs), ("ln_rhs", ln_rhs)]),
        ln_lhs.exp(),
        0.0,
        ln_rhs.exp(),
    );
    r.in_regime = in_regime;
    r.pass = ln_lhs <= ln_rhs || !in_regime;
    if ln_rhs >= 0.0 {
        r = r.with_note("bound is at least 1");
    }
    if !in_regime {
        r = r.with_note("outside the quadratic Laplace regime");
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{DiscreteCDF, Poisson};

    #[test]
    fn pmf_matches_statrs() {
        use statrs::distribution::Discrete;
        let p = Poisson::new(7.5).unwrap();
        for k in [0, 3, 7, 20] {
            assert!((ln_poisson_pmf(k, 7.5) - p.ln_pmf(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn tails_match_cdf() {
        let p = Poisson::new(100.0).unwrap();
        let (lo, hi) = ln_poisson_tails(100.0, 70, 130);
        assert!((lo.exp() - p.cdf(69)).abs() < 1e-15);
        assert!((hi.exp() - p.sf(130)).abs() < 1e-15);
    }

    #[test]
    fn worked_example() {
        let r = check_chernoff(1.0, 100.0, 1000.0, 0.3, 1).unwrap();
        assert!((r.rhs - 10.0 * (-2.25f64).exp()).abs() < 1e-12);
        let p = Poisson::new(100.0).unwrap();
        let bad = p.cdf(69) + p.sf(130);
        let exact = 1.0 - (1.0 - bad).powi(10);
        assert!((r.lhs - exact).abs() < 1e-12 * exact.max(1e-300) + 1e-15, "{} vs {exact}", r.lhs);
        assert!(r.pass && r.in_regime);
    }

    #[test]
    fn trivial_when_bound_exceeds_one() {
        let r = check_chernoff(0.5, 10.0, 100.0, 0.1, 1).unwrap();
        assert!(r.rhs >= 1.0 && r.pass);
    }

    #[test]
    fn monotone_in_delta() {
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for i in 1..10 {
            let r = check_chernoff(1.0, 100.0, 1000.0, 0.1 * i as f64, 1).unwrap();
            let (a, b) = (r.param("ln_lhs").unwrap(), r.param("ln_rhs").unwrap());
            assert!(a <= prev.0 && b < prev.1);
            prev = (a, b);
        }
    }

    #[test]
    fn huge_mean_is_finite() {
        let r = check_chernoff(1.0, 1e6, 1e7, 0.05, 1).unwrap();
        let ln_lhs = r.param("ln_lhs").unwrap();
        assert!(ln_lhs.is_finite() && ln_lhs < -1000.0);
        assert!(r.pass);
    }
}
