//! Symmetric block-banded matrices, clique scatter, and banded Cholesky.
//!
//! The trajectory-wide Gauss-Newton Hessian couples configurations at most
//! `K` blocks apart, so it is stored as a lower scalar band of half-width
//! `(K+1)*d - 1` over the free variables `(q_1; ...; q_{T+1})`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::traj::CliqueIndexing;

/// Symmetric block-banded matrix over `num_blocks` blocks of size
/// `block_dim`, with nonzero blocks `(i, j)` only for `|i - j| <= block_bandwidth`.
///
/// Only the lower scalar triangle is stored. Additions via [`Self::add_sym`]
/// must come from symmetric contributions: entries with `row < col` are
/// dropped on the assumption that the mirrored entry is added too.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockBandedMatrix {
    block_dim: usize,
    num_blocks: usize,
    block_bandwidth: usize,
    /// Lower band, column-major: entry `(c + r_off, c)` at `c * (m + 1) + r_off`.
    band: Vec<f64>,
}

impl BlockBandedMatrix {
    pub fn zeros(num_blocks: usize, block_dim: usize, block_bandwidth: usize) -> Self {
        let m = Self::scalar_bandwidth_for(block_dim, block_bandwidth);
        Self {
            block_dim,
            num_blocks,
            block_bandwidth,
            band: vec![0.0; num_blocks * block_dim * (m + 1)],
        }
    }

    fn scalar_bandwidth_for(block_dim: usize, block_bandwidth: usize) -> usize {
        (block_bandwidth + 1) * block_dim - 1
    }

    /// Scalar dimension of the matrix.
    pub fn dim(&self) -> usize {
        self.num_blocks * self.block_dim
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    pub fn block_bandwidth(&self) -> usize {
        self.block_bandwidth
    }

    /// Scalar half-bandwidth of the stored band.
    pub fn scalar_bandwidth(&self) -> usize {
        Self::scalar_bandwidth_for(self.block_dim, self.block_bandwidth)
    }

    #[inline]
    fn band_index(&self, row: usize, col: usize) -> usize {
        col * (self.scalar_bandwidth() + 1) + (row - col)
    }

    /// Adds `value` at `(row, col)`; entries above the diagonal are dropped
    /// (their mirror must be added by the symmetric caller).
    pub fn add_sym(&mut self, row: usize, col: usize, value: f64) -> Result<()> {
        if row >= self.dim() || col >= self.dim() {
            return Err(Error::OutOfBand { row, col, bandwidth: self.scalar_bandwidth() });
        }
        if row < col {
            return Ok(());
        }
        if row - col > self.scalar_bandwidth() {
            return Err(Error::OutOfBand { row, col, bandwidth: self.scalar_bandwidth() });
        }
        let idx = self.band_index(row, col);
        self.band[idx] += value;
        Ok(())
    }

    /// Entry `(row, col)` with symmetric lookup; zero outside the band.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let (r, c) = if row >= col { (row, col) } else { (col, row) };
        if r - c > self.scalar_bandwidth() || r >= self.dim() {
            0.0
        } else {
            self.band[self.band_index(r, c)]
        }
    }

    /// Adds `shift` to every diagonal entry.
    pub fn add_diagonal(&mut self, shift: f64) {
        let m = self.scalar_bandwidth();
        for c in 0..self.dim() {
            self.band[c * (m + 1)] += shift;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for c in 0..n {
            for r in c..(c + self.scalar_bandwidth() + 1).min(n) {
                let v = self.band[self.band_index(r, c)];
                out[(r, c)] = v;
                out[(c, r)] = v;
            }
        }
        out
    }

    /// Banded Cholesky factorization `A = L L^T`.
    ///
    /// Fails with the index of the first nonpositive pivot if the matrix is
    /// not positive definite.
    pub fn cholesky(&self) -> Result<BandedCholesky> {
        let n = self.dim();
        let m = self.scalar_bandwidth();
        let mut l = vec![0.0; n * (m + 1)];
        let at = |r: usize, c: usize| c * (m + 1) + (r - c);
        for j in 0..n {
            let top = (j + m + 1).min(n);
            for i in j..top {
                let mut s = self.band[at(i, j)];
                let p0 = i.saturating_sub(m);
                for p in p0..j {
                    s -= l[at(i, p)] * l[at(j, p)];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { pivot: j });
                    }
                    l[at(j, j)] = s.sqrt();
                } else {
                    l[at(i, j)] = s / l[at(j, j)];
                }
            }
        }
        Ok(BandedCholesky { dim: n, bandwidth: m, band: l })
    }

    /// Solves `A x = rhs` via banded Cholesky.
    pub fn cholesky_solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if rhs.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "banded solve rhs",
                expected: self.dim(),
                actual: rhs.len(),
            });
        }
        Ok(self.cholesky()?.solve(rhs))
    }
}

/// Lower-triangular banded Cholesky factor.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    dim: usize,
    bandwidth: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    /// Solves `L L^T x = rhs` by forward/backward substitution.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let n = self.dim;
        let m = self.bandwidth;
        let at = |r: usize, c: usize| c * (m + 1) + (r - c);
        let mut x = rhs.clone();
        for i in 0..n {
            let p0 = i.saturating_sub(m);
            let mut s = x[i];
            for p in p0..i {
                s -= self.band[at(i, p)] * x[p];
            }
            x[i] = s / self.band[at(i, i)];
        }
        for i in (0..n).rev() {
            let top = (i + m + 1).min(n);
            let mut s = x[i];
            for r in (i + 1)..top {
                s -= self.band[at(r, i)] * x[r];
            }
            x[i] = s / self.band[at(i, i)];
        }
        x
    }
}

/// Accumulates a clique-local symmetric Hessian block into the banded target.
///
/// The block spans the window configurations of clique `t`; rows and columns
/// touching the fixed prefix `q_0` are dropped.
pub fn scatter_clique_hessian(
    target: &mut BlockBandedMatrix,
    t: usize,
    indexing: &CliqueIndexing,
    block: &DMatrix<f64>,
) -> Result<()> {
    let d = target.block_dim();
    let w = indexing.window();
    if block.nrows() != w * d || block.ncols() != w * d {
        return Err(Error::DimensionMismatch {
            context: "clique Hessian block",
            expected: w * d,
            actual: block.nrows(),
        });
    }
    let start = indexing.window_start(t)?;
    for a in 0..w {
        let ga = start + a;
        if ga == 0 {
            continue; // fixed prefix row
        }
        let fa = ga - 1;
        for b in 0..w {
            let gb = start + b;
            if gb == 0 {
                continue;
            }
            let fb = gb - 1;
            for i in 0..d {
                for j in 0..d {
                    target.add_sym(fa * d + i, fb * d + j, block[(a * d + i, b * d + j)])?;
                }
            }
        }
    }
    Ok(())
}

/// Accumulates a clique-local gradient segment into the trajectory-wide
/// gradient, dropping entries that touch the fixed prefix.
pub fn scatter_clique_gradient(
    target: &mut DVector<f64>,
    t: usize,
    indexing: &CliqueIndexing,
    segment: &DVector<f64>,
) -> Result<()> {
    let w = indexing.window();
    if segment.len() % w != 0 {
        return Err(Error::DimensionMismatch {
            context: "clique gradient segment",
            expected: w,
            actual: segment.len(),
        });
    }
    let d = segment.len() / w;
    let start = indexing.window_start(t)?;
    for a in 0..w {
        let ga = start + a;
        if ga == 0 {
            continue;
        }
        let fa = ga - 1;
        for i in 0..d {
            target[fa * d + i] += segment[a * d + i];
        }
    }
    Ok(())
}
