//! Monte Carlo estimators built on the dynamics and the observables.

pub mod blocks;
pub mod coarse;
pub mod martingale;
pub mod variance;

use rayon::prelude::*;

use crate::error::Result;

/// Evaluate `f(0), …, f(n-1)` in parallel, keeping index order.
pub(crate) fn par_indexed<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..n).into_par_iter().map(f).collect()
}

pub use blocks::{block_counts, conditional_b, is_delta_good, sample_given_counts, BlockCounts};
pub use coarse::{coarse_path, telescope_check, CoarsePath};
pub use martingale::{geometric_grid, Jump, 
    bracket_isometry_check, conditional_a_s, hitting_time, multiscale_functional, regularized_a_s, spatial_martingale, BracketCheck,
    MartingalePath, MultiscaleReport,
};
pub use variance::{conditional_a_k, estimate_ut, estimate_var_ut, estimate_var_ut_series, lattice_translates, Ensemble, EstimatorResult, VarOptions};
