//! Block counts `M_{L,l}` and the conditional expectation `B_{L,l}`.

use rand::Rng;
use serde::Serialize;

use super::variance::{estimate_ut, Ensemble};
use crate::configuration::{sample_poisson, Configuration, Domain, Region};
use crate::error::{invalid, Result};
use crate::observable::Observable;
use crate::rng::{Stream, Tag};
use crate::stats::mean;

/// Particle counts in the `(L/l)^d` sub-cubes of `Q_L`.
///
/// `Q_L` is centred at the domain centre. Blocks are listed in lexicographic
/// order of their integer position, first coordinate slowest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockCounts {
    pub dim: usize,
    pub big: u64,
    pub small: u64,
    pub counts: Vec<u64>,
}

impl BlockCounts {
    /// Blocks per axis, `L/l`.
    pub fn per_axis(&self) -> usize {
        (self.big / self.small) as usize
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Expected count per block, `ρ l^d`.
    pub fn mean_count(&self, rho: f64) -> f64 {
        rho * (self.small as f64).powi(self.dim as i32)
    }

    /// The big cube `Q_L` in `domain`.
    pub fn region(&self, domain: &Domain) -> Region {
        Region::cube(&domain.center(), self.big as f64)
    }

    /// Sub-cube number `i`.
    pub fn block(&self, domain: &Domain, i: usize) -> Region {
        let q = self.region(domain);
        let m = self.per_axis();
        let l = self.small as f64;
        let mut idx = i;
        let mut lo = vec![0.0; self.dim];
        for k in (0..self.dim).rev() {
            lo[k] = q.lo()[k] + (idx % m) as f64 * l;
            idx /= m;
        }
        let hi: Vec<f64> = lo.iter().map(|a| a + l).collect();
        Region::new(&lo, &hi)
    }
}

fn check_scales(domain: &Domain, big: u64, small: u64) -> Result<()> {
    if small == 0 || big == 0 {
        return Err(invalid("l", "block sides must be positive"));
    }
    if !big.is_multiple_of(small) {
        return Err(invalid("L", format!("L = {big} is not a multiple of l = {small}")));
    }
    if big as f64 > domain.side() {
        return Err(invalid("L", format!("L = {big} exceeds the domain side {}", domain.side())));
    }
    Ok(())
}

/// `M_{L,l}(μ)`.
pub fn block_counts(mu: &Configuration, big: u64, small: u64) -> Result<BlockCounts> {
    let domain = mu.domain();
    check_scales(domain, big, small)?;
    let d = domain.dim();
    let m = (big / small) as usize;
    let mut bc = BlockCounts {
        dim: d,
        big,
        small,
        counts: vec![0; m.pow(d as u32)],
    };
    let q = bc.region(domain);
    let l = small as f64;
    for p in mu.points() {
        if !domain.in_region(p, &q) {
            continue;
        }
        let mut idx = 0usize;
        for k in 0..d {
            let off = if domain.is_periodic() {
                (p[k] - q.lo()[k]).rem_euclid(domain.side())
            } else {
                p[k] - q.lo()[k]
            };
            let j = ((off / l) as usize).min(m - 1);
            idx = idx * m + j;
        }
        bc.counts[idx] += 1;
    }
    Ok(bc)
}

/// Whether every block satisfies `|M_i/(ρ l^d) − 1| ≤ δ`.
pub fn is_delta_good(m: &BlockCounts, rho: f64, delta: f64) -> bool {
    let mean = m.mean_count(rho);
    // same slack as the Chernoff window, so integer endpoints count as good
    m.counts.iter().all(|&c| (c as f64 - mean).abs() <= delta * mean + 1e-9 * mean)
}

/// A configuration distributed as `P_ρ` conditioned on `M_{L,l} = M`:
/// `M_i` uniform points in block `i`, Poisson outside `Q_L`.
pub fn sample_given_counts(domain: &Domain, m: &BlockCounts, rho: f64, stream: &Stream) -> Result<Configuration> {
    check_scales(domain, m.big, m.small)?;
    if m.dim != domain.dim() {
        return Err(crate::error::Error::DimensionMismatch {
            expected: domain.dim(),
            got: m.dim,
        });
    }
    let q = m.region(domain);
    let mut rng = stream.derive(Tag::Conditional, 0).rng();
    let mut mu = Configuration::empty(*domain);
    let mut x = vec![0.0; m.dim];
    for (i, &c) in m.counts.iter().enumerate() {
        let b = m.block(domain, i);
        for _ in 0..c {
            for k in 0..m.dim {
                x[k] = domain.wrap_coord(b.lo()[k] + m.small as f64 * rng.gen::<f64>());
            }
            mu.push(&x)?;
        }
    }
    let fresh = sample_poisson(domain, &crate::configuration::PoissonParams::new(rho, 0), &stream.derive(Tag::Resample, 0))?;
    let outside = fresh.filter(|p| !domain.in_region(p, &q));
    Ok(mu.union(&outside))
}

/// `B_{L,l} u_t` at block counts `M`: average of `estimate_ut` over `n_cond`
/// configurations drawn with [`sample_given_counts`].
pub fn conditional_b(
    u: &Observable,
    ens: &Ensemble<'_>,
    t: f64,
    m: &BlockCounts,
    n_cond: usize,
    n_inner: usize,
    stream: &Stream,
) -> Result<f64> {
    if n_cond < 1 {
        return Err(invalid("n_cond", "need at least one conditional sample"));
    }
    let mut vals = Vec::with_capacity(n_cond);
    for c in 0..n_cond {
        let s = stream.derive(Tag::Conditional, c as u64 + 1);
        let mu = sample_given_counts(&ens.domain, m, ens.rho, &s)?;
        vals.push(estimate_ut(u, &mu, ens.field, t, &ens.scheme, n_inner, &s)?);
    }
    Ok(mean(&vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configuration::PoissonParams;
    use crate::dynamics::SchemeParams;
    use crate::field::builtin_constant;
    use crate::observable::{Linear, LocalFunction, Profile};
    use crate::stats::sample_variance;
    use std::sync::Arc;

    #[test]
    fn empty_and_sums() {
        let dom = Domain::periodic(2, 12.0).unwrap();
        let e = block_counts(&Configuration::empty(dom), 8, 2).unwrap();
        assert_eq!(e.len(), 16);
        assert_eq!(e.total(), 0);
        for s in 0..50 {
            let mu = sample_poisson(&dom, &PoissonParams::new(1.3, 0), &Stream::new(s)).unwrap();
            let m = block_counts(&mu, 8, 2).unwrap();
            assert_eq!(m.total() as usize, mu.count(&m.region(&dom)));
            for i in 0..m.len() {
                assert_eq!(m.counts[i] as usize, mu.count(&m.block(&dom, i)));
            }
        }
        assert!(block_counts(&Configuration::empty(dom), 8, 3).is_err());
        assert!(block_counts(&Configuration::empty(dom), 16, 2).is_err());
    }

    #[test]
    fn counts_are_poisson() {
        let dom = Domain::free(1, 10.0).unwrap();
        let rho = 2.0;
        let xs: Vec<f64> = (0..4000)
            .flat_map(|s| {
                let mu = sample_poisson(&dom, &PoissonParams::new(rho, 0), &Stream::new(s)).unwrap();
                block_counts(&mu, 8, 2).unwrap().counts.into_iter().map(|c| c as f64)
            })
            .collect();
        let n = xs.len() as f64;
        let m = mean(&xs);
        let v = sample_variance(&xs);
        assert!((m - 4.0).abs() < 3.0 * (4.0 / n).sqrt());
        // Var of the sample variance for Poisson(λ) is about (λ + 2λ²)/n
        assert!((v - 4.0).abs() < 3.0 * ((4.0 + 32.0) / n).sqrt());
    }

    #[test]
    fn delta_good() {
        let m = BlockCounts {
            dim: 1,
            big: 4,
            small: 2,
            counts: vec![4, 4],
        };
        assert!(is_delta_good(&m, 2.0, 0.0));
        let m0 = BlockCounts {
            counts: vec![0, 4],
            ..m.clone()
        };
        assert!(!is_delta_good(&m0, 2.0, 0.9));
        assert!(is_delta_good(&m0, 2.0, 1.0));
    }

    #[test]
    fn conditional_sample_has_the_counts() {
        let dom = Domain::periodic(2, 10.0).unwrap();
        let m = BlockCounts {
            dim: 2,
            big: 6,
            small: 3,
            counts: vec![0, 5, 1, 2],
        };
        for s in 0..20 {
            let mu = sample_given_counts(&dom, &m, 1.0, &Stream::new(s)).unwrap();
            assert_eq!(block_counts(&mu, 6, 3).unwrap(), m);
        }
    }

    #[test]
    fn count_function_is_exact_at_time_zero() {
        let dom = Domain::periodic(1, 10.0).unwrap();
        let f = builtin_constant(1.0).unwrap();
        let ens = Ensemble {
            domain: dom,
            rho: 1.0,
            field: &f,
            scheme: SchemeParams::exact(),
        };
        // counts in [3, 7): exactly the union of two blocks of Q_4 = [3, 7)
        let u = Observable::centered(Arc::new(Linear::new(Profile::Indicator { side: 4.0 }, 64.0).unwrap()), &dom);
        let m = BlockCounts {
            dim: 1,
            big: 4,
            small: 2,
            counts: vec![3, 2],
        };
        assert_eq!(conditional_b(&u, &ens, 0.0, &m, 5, 1, &Stream::new(1)).unwrap(), 5.0);
    }

    /// Direct construction against rejection from the unconditioned law.
    #[test]
    fn matches_rejection_sampler() {
        let dom = Domain::periodic(1, 8.0).unwrap();
        let params = PoissonParams::new(1.0, 0);
        let m = BlockCounts {
            dim: 1,
            big: 4,
            small: 4,
            counts: vec![3],
        };
        // u = number of points of Q_L in its left quarter, a non-count statistic
        let u: Arc<dyn LocalFunction> = Arc::new(Linear::new(Profile::Indicator { side: 1.0 }, 64.0).unwrap());
        let obs = Observable::new(u, vec![3.0]);
        let root = Stream::new(9);
        let mut rej = Vec::new();
        let mut i = 0u64;
        while rej.len() < 3000 {
            let mu = sample_poisson(&dom, &params, &root.derive(Tag::Trial, i)).unwrap();
            i += 1;
            if block_counts(&mu, 4, 4).unwrap() == m {
                rej.push(obs.eval(&mu));
            }
        }
        let direct: Vec<f64> = (0..3000)
            .map(|j| obs.eval(&sample_given_counts(&dom, &m, 1.0, &root.derive(Tag::Validate, j)).unwrap()))
            .collect();
        let se = ((sample_variance(&rej) + sample_variance(&direct)) / 3000.0).sqrt();
        assert!((mean(&rej) - mean(&direct)).abs() < 3.0 * se);
        // and both sit on the binomial mean 3 · 1/4
        assert!((mean(&direct) - 0.75).abs() < 3.0 * (3.0 * 0.25 * 0.75 / 3000.0f64).sqrt());
    }
}
