//! Complex least squares via blocked Householder QR.
//!
//! Design matrices here are very tall (one row per sample) and narrow (tens of
//! columns), so rows are consumed in blocks: each block is stacked under the
//! running triangular factor and re-triangularized. Only O(block) memory is
//! needed and the result matches a monolithic QR solve.

use crate::error::{Error, Result};
use num_complex::Complex64;

/// Condition estimates above this make the solve an error.
pub(crate) const CONDITION_LIMIT: f64 = 1e12;

/// Condition estimates above this trigger the automatic ridge fallback: the
/// solution is already noise-dominated along the weak directions well before
/// the triangle degenerates numerically.
pub(crate) const FALLBACK_CONDITION: f64 = 1e6;

/// Accumulates `min ||A x - b||` row blocks and solves by back-substitution.
pub(crate) struct BlockLstsq {
    n_cols: usize,
    /// Upper-triangular factor, col-major, n_cols x n_cols.
    r: Vec<Complex64>,
    /// Accumulated Q^H b (top n_cols entries).
    qtb: Vec<Complex64>,
    /// Sum of squared residual components rotated past the triangle.
    residual_sq: f64,
    /// Sum of squared column norms of everything pushed (trace of A^H A).
    column_sq: Vec<f64>,
    rows_seen: usize,
}

impl BlockLstsq {
    pub fn new(n_cols: usize) -> Self {
        Self {
            n_cols,
            r: vec![Complex64::ZERO; n_cols * n_cols],
            qtb: vec![Complex64::ZERO; n_cols],
            residual_sq: 0.0,
            column_sq: vec![0.0; n_cols],
            rows_seen: 0,
        }
    }

    /// Feeds a block of `rows` rows in col-major layout (`data[c*rows + r]`)
    /// with the matching right-hand-side entries.
    pub fn push_block(&mut self, data: &[Complex64], rhs: &[Complex64], rows: usize) {
        assert_eq!(data.len(), rows * self.n_cols);
        assert_eq!(rhs.len(), rows);
        let n = self.n_cols;
        for (c, chunk) in data.chunks_exact(rows).enumerate() {
            self.column_sq[c] += chunk.iter().map(|v| v.norm_sqr()).sum::<f64>();
        }
        // work matrix: previous triangle stacked over the new block
        let m = n + rows;
        let mut a = vec![Complex64::ZERO; m * n];
        for c in 0..n {
            for rr in 0..n {
                a[c * m + rr] = self.r[c * n + rr];
            }
            for rr in 0..rows {
                a[c * m + n + rr] = data[c * rows + rr];
            }
        }
        let mut b = vec![Complex64::ZERO; m];
        b[..n].copy_from_slice(&self.qtb);
        b[n..].copy_from_slice(rhs);

        householder_qr(&mut a, &mut b, m, n);

        for c in 0..n {
            for rr in 0..=c {
                self.r[c * n + rr] = a[c * m + rr];
            }
        }
        self.qtb.copy_from_slice(&b[..n]);
        self.residual_sq += b[n..].iter().map(|v| v.norm_sqr()).sum::<f64>();
        self.rows_seen += rows;
    }

    /// Adds a ridge term: sqrt(lambda) * I rows with zero right-hand side.
    pub fn push_ridge(&mut self, lambda: f64) {
        if lambda <= 0.0 {
            return;
        }
        let n = self.n_cols;
        let sq = lambda.sqrt();
        let mut block = vec![Complex64::ZERO; n * n];
        for c in 0..n {
            block[c * n + c] = Complex64::new(sq, 0.0);
        }
        let rhs = vec![Complex64::ZERO; n];
        let cols_before = self.column_sq.clone();
        self.push_block(&block, &rhs, n);
        // ridge rows are regularization, not data; keep the trace honest
        self.column_sq = cols_before;
    }

    /// Ratio of largest to smallest diagonal magnitude of R; cheap estimate of
    /// the condition number.
    pub fn condition_estimate(&self) -> f64 {
        let n = self.n_cols;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for c in 0..n {
            let d = self.r[c * n + c].norm();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if lo == 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    /// Trace of A^H A over the data rows pushed so far.
    pub fn trace(&self) -> f64 {
        self.column_sq.iter().sum()
    }

    pub fn rows_seen(&self) -> usize {
        self.rows_seen
    }

    /// Back-substitutes. Errors if the triangle is singular to working
    /// precision.
    pub fn solve(&self) -> Result<LstsqSolution> {
        let n = self.n_cols;
        let condition = self.condition_estimate();
        if !condition.is_finite() {
            return Err(Error::IllConditioned { condition });
        }
        let mut x = vec![Complex64::ZERO; n];
        for c in (0..n).rev() {
            let mut sum = self.qtb[c];
            for j in c + 1..n {
                sum -= self.r[j * n + c] * x[j];
            }
            x[c] = sum / self.r[c * n + c];
        }
        Ok(LstsqSolution {
            coefficients: x,
            residual_sq: self.residual_sq,
            condition,
        })
    }
}

pub(crate) struct LstsqSolution {
    pub coefficients: Vec<Complex64>,
    pub residual_sq: f64,
    pub condition: f64,
}

/// In-place Householder QR of a col-major m x n matrix (m >= n), applying the
/// same reflections to `b`. On exit the upper triangle of `a` holds R and `b`
/// holds Q^H b.
fn householder_qr(a: &mut [Complex64], b: &mut [Complex64], m: usize, n: usize) {
    debug_assert!(m >= n);
    let mut v = vec![Complex64::ZERO; m];
    for j in 0..n {
        // build the reflector for column j below the diagonal
        let col = &a[j * m..(j + 1) * m];
        let norm_sq: f64 = col[j..].iter().map(|z| z.norm_sqr()).sum();
        let norm = norm_sq.sqrt();
        if norm == 0.0 {
            continue;
        }
        let x0 = col[j];
        let sign = if x0.norm() == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            x0 / x0.norm()
        };
        let beta = -sign * norm;
        let len = m - j;
        v[..len].copy_from_slice(&col[j..]);
        v[0] -= beta;
        let vhv: f64 = v[..len].iter().map(|z| z.norm_sqr()).sum();
        if vhv == 0.0 {
            continue;
        }
        let tau = 2.0 / vhv;
        // apply I - tau v v^H to the remaining columns and to b
        a[j * m + j] = beta;
        for z in &mut a[j * m + j + 1..(j + 1) * m] {
            *z = Complex64::ZERO;
        }
        for c in j + 1..n {
            let col = &mut a[c * m + j..(c + 1) * m];
            let dot: Complex64 = v[..len]
                .iter()
                .zip(col.iter())
                .map(|(vi, ci)| vi.conj() * ci)
                .sum();
            let f = tau * dot;
            for (ci, vi) in col.iter_mut().zip(&v[..len]) {
                *ci -= f * vi;
            }
        }
        let bs = &mut b[j..m];
        let dot: Complex64 = v[..len]
            .iter()
            .zip(bs.iter())
            .map(|(vi, bi)| vi.conj() * bi)
            .sum();
        let f = tau * dot;
        for (bi, vi) in bs.iter_mut().zip(&v[..len]) {
            *bi -= f * vi;
        }
    }
}
