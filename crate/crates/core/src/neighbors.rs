//! Cell lists for unit-radius neighbourhood queries.

use crate::configuration::{Configuration, Domain, MAX_DIM};

/// Bucketing of point indices into cubic cells of side at least `min_cell`.
/// Falls back to scanning every point when the box is too small for three
/// distinct cells per axis.
#[derive(Debug, Clone)]
pub struct CellList {
    domain: Domain,
    dim: usize,
    n: usize,
    cell: f64,
    starts: Vec<usize>,
    indices: Vec<usize>,
    len: usize,
}

impl CellList {
    pub fn build(mu: &Configuration, min_cell: f64) -> Self {
        let domain = *mu.domain();
        let dim = domain.dim();
        let n = (domain.side() / min_cell).floor() as usize;
        let len = mu.len();
        if n < 3 {
            return CellList {
                domain,
                dim,
                n: 0,
                cell: domain.side(),
                starts: Vec::new(),
                indices: Vec::new(),
                len,
            };
        }
        let cell = domain.side() / n as f64;
        let total = n.pow(dim as u32);
        let ids: Vec<usize> = mu.points().map(|p| flat_cell(p, dim, n, cell)).collect();
        let mut starts = vec![0usize; total + 1];
        for &c in &ids {
            starts[c + 1] += 1;
        }
        for c in 0..total {
            starts[c + 1] += starts[c];
        }
        let mut fill = starts.clone();
        let mut indices = vec![0usize; len];
        for (i, &c) in ids.iter().enumerate() {
            indices[fill[c]] = i;
            fill[c] += 1;
        }
        CellList {
            domain,
            dim,
            n,
            cell,
            starts,
            indices,
            len,
        }
    }

    pub fn is_brute_force(&self) -> bool {
        self.n == 0
    }

    /// Call `f` on every index whose point may lie within one cell side of `x`.
    /// The set is a superset; callers filter by distance.
    pub fn for_each_candidate(&self, x: &[f64], mut f: impl FnMut(usize)) {
        if self.n == 0 {
            (0..self.len).for_each(f);
            return;
        }
        let n = self.n as i64;
        let periodic = self.domain.is_periodic();
        let mut axes = [[0usize; 3]; MAX_DIM];
        let mut counts = [0usize; MAX_DIM];
        for k in 0..self.dim {
            let xk = self.domain.wrap_coord(x[k]);
            let base = ((xk / self.cell).floor() as i64).clamp(0, n - 1);
            for off in -1..=1 {
                let mut c = base + off;
                if periodic {
                    if c < 0 {
                        c += n;
                    } else if c >= n {
                        c -= n;
                    }
                } else if c < 0 || c >= n {
                    continue;
                }
                axes[k][counts[k]] = c as usize;
                counts[k] += 1;
            }
        }
        let mut visit = |flat: usize| {
            for &i in &self.indices[self.starts[flat]..self.starts[flat + 1]] {
                f(i);
            }
        };
        let m = self.n;
        match self.dim {
            1 => axes[0][..counts[0]].iter().for_each(|&a| visit(a)),
            2 => {
                for &b in &axes[1][..counts[1]] {
                    for &a in &axes[0][..counts[0]] {
                        visit(b * m + a);
                    }
                }
            }
            _ => {
                for &c in &axes[2][..counts[2]] {
                    for &b in &axes[1][..counts[1]] {
                        for &a in &axes[0][..counts[0]] {
                            visit((c * m + b) * m + a);
                        }
                    }
                }
            }
        }
    }
}

fn flat_cell(p: &[f64], dim: usize, n: usize, cell: f64) -> usize {
    let mut flat = 0usize;
    for k in (0..dim).rev() {
        let c = ((p[k] / cell).floor() as usize).min(n - 1);
        flat = flat * n + c;
    }
    flat
}
