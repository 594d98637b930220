//! Sparse recovery of the integer difference table from measurement rows.
//!
//! Each table column is recovered on its own by orthogonal matching pursuit:
//! repeatedly pick the matrix column best correlated with the residual, add it
//! to the active set, and re-project `y` onto the span of the active columns
//! (incremental Gram-Schmidt with one re-orthogonalization pass). When the
//! system is square it is solved directly. The real-valued solution is rounded
//! to integers and accepted only if the rounded table reproduces the
//! measurements.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::iblt::{Iblt, IbltCell, TableParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoveryError {
    #[error("no measurements")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("solver stopped after {iterations} iterations with residual {residual:e}")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("measurement matrix is singular")]
    Singular,
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Post-quantization acceptance threshold, relative to `max(1, ||y||_inf)`.
    pub residual_tol: f64,
    /// Pursuit stops once `||r||_2 <= convergence_tol * ||y||_2`.
    pub convergence_tol: f64,
    /// Cap on the recovered support; `None` means `m`.
    pub max_sparsity: Option<usize>,
    /// Cap on pursuit iterations; `None` means the sparsity cap.
    pub max_iterations: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            residual_tol: 1e-6,
            convergence_tol: 1e-9,
            max_sparsity: None,
            max_iterations: None,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<(), RecoveryError> {
        if !(self.residual_tol > 0.0) {
            return Err(RecoveryError::InvalidConfig("residual_tol must be positive"));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(RecoveryError::InvalidConfig("convergence_tol must be nonnegative"));
        }
        Ok(())
    }
}

/// Row-major `m x b` real matrix, grown one row at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseRows {
    cols: usize,
    data: Vec<f64>,
}

impl DenseRows {
    pub fn new(cols: usize) -> Self {
        Self {
            cols,
            data: Vec::new(),
        }
    }

    pub fn from_rows(cols: usize, rows: &[Vec<f64>]) -> Result<Self, RecoveryError> {
        let mut out = Self::new(cols);
        for r in rows {
            out.push_row(r)?;
        }
        Ok(out)
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<(), RecoveryError> {
        if row.len() != self.cols {
            return Err(RecoveryError::DimensionMismatch {
                expected: self.cols,
                got: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn rows(&self) -> usize {
        if self.cols == 0 {
            0
        } else {
            self.data.len() / self.cols
        }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows()).map(|i| self.data[i * self.cols + j]).collect()
    }

    /// `Phi x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows()).map(|i| dot(self.row(i), x)).collect()
    }

    fn apply_int(&self, x: &[i64]) -> Vec<f64> {
        (0..self.rows())
            .map(|i| self.row(i).iter().zip(x).map(|(a, &v)| a * v as f64).sum())
            .collect()
    }

    /// `Phi^T r`.
    fn correlate(&self, r: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &ri) in r.iter().enumerate() {
            if ri == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += ri * a;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Sparse solution of `Phi x = y`.
///
/// With fewer rows than columns this runs orthogonal matching pursuit up to
/// the configured sparsity; with a square system it is an LU solve.
pub fn solve_l1(phi: &DenseRows, y: &[f64], cfg: &SolverConfig) -> Result<Vec<f64>, RecoveryError> {
    cfg.validate()?;
    let m = phi.rows();
    let b = phi.cols();
    if m == 0 {
        return Err(RecoveryError::Empty);
    }
    if y.len() != m {
        return Err(RecoveryError::DimensionMismatch {
            expected: m,
            got: y.len(),
        });
    }
    if y.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; b]);
    }
    if m >= b {
        return solve_dense(phi, y);
    }
    pursuit(phi, y, cfg)
}

fn solve_dense(phi: &DenseRows, y: &[f64]) -> Result<Vec<f64>, RecoveryError> {
    let (m, b) = (phi.rows(), phi.cols());
    let a = DMatrix::from_row_slice(m, b, &phi.data);
    let rhs = DVector::from_column_slice(y);
    let x = if m == b {
        a.lu().solve(&rhs).ok_or(RecoveryError::Singular)?
    } else {
        a.svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|_| RecoveryError::Singular)?
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(RecoveryError::Singular);
    }
    Ok(x.iter().copied().collect())
}

fn pursuit(phi: &DenseRows, y: &[f64], cfg: &SolverConfig) -> Result<Vec<f64>, RecoveryError> {
    let (m, b) = (phi.rows(), phi.cols());
    let cap = cfg.max_sparsity.unwrap_or(m).min(m).min(b);
    let budget = cfg.max_iterations.unwrap_or(cap);
    let stop = cfg.convergence_tol * norm2(y);

    let mut col_norm = vec![0.0; b];
    for i in 0..m {
        for (c, a) in col_norm.iter_mut().zip(phi.row(i)) {
            *c += a * a;
        }
    }
    col_norm.iter_mut().for_each(|c| *c = c.sqrt());

    // Columns that are active, or numerically dependent on the active set.
    let mut blocked = vec![false; b];
    let mut active: Vec<usize> = Vec::new();
    // Orthonormal basis of the active span, and the R factor stored by column.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut r_cols: Vec<Vec<f64>> = Vec::new();
    let mut residual = y.to_vec();
    let mut corr = vec![0.0; b];
    let mut iterations = 0;

    while norm2(&residual) > stop && active.len() < cap && iterations < budget {
        iterations += 1;
        phi.correlate(&residual, &mut corr);
        let mut best = None;
        let mut best_score = 0.0;
        for j in 0..b {
            if blocked[j] || col_norm[j] == 0.0 {
                continue;
            }
            let score = corr[j].abs() / col_norm[j];
            if score > best_score {
                best_score = score;
                best = Some(j);
            }
        }
        let Some(j) = best else { break };

        let col = phi.column(j);
        let mut v = col.clone();
        let mut coeffs = vec![0.0; basis.len()];
        for _ in 0..2 {
            for (q, c) in basis.iter().zip(coeffs.iter_mut()) {
                let proj = dot(q, &v);
                *c += proj;
                v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= proj * qi);
            }
        }
        let len = norm2(&v);
        blocked[j] = true;
        if len <= 1e-10 * col_norm[j] {
            continue;
        }
        v.iter_mut().for_each(|vi| *vi /= len);
        let proj = dot(&v, &residual);
        residual.iter_mut().zip(&v).for_each(|(ri, qi)| *ri -= proj * qi);
        coeffs.push(len);
        r_cols.push(coeffs);
        basis.push(v);
        active.push(j);
    }

    let res = norm2(&residual);
    if res > stop {
        return Err(RecoveryError::NoConvergence {
            iterations,
            residual: res,
        });
    }

    // Back substitution on R c = Q^T y.
    let t = active.len();
    let rhs: Vec<f64> = basis.iter().map(|q| dot(q, y)).collect();
    let mut coef = vec![0.0; t];
    for i in (0..t).rev() {
        let mut s = rhs[i];
        for jj in i + 1..t {
            s -= r_cols[jj][i] * coef[jj];
        }
        coef[i] = s / r_cols[i][i];
    }
    let mut x = vec![0.0; b];
    for (&j, c) in active.iter().zip(coef) {
        x[j] = c;
    }
    Ok(x)
}

/// Componentwise round half away from zero.
pub fn quantize(x: &[f64]) -> Vec<i64> {
    x.iter().map(|v| v.round() as i64).collect()
}

/// Stacked difference measurements `y_A - y_B` with their matrix rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryProblem {
    pub phi: DenseRows,
    pub y_sum: Vec<f64>,
    pub y_count: Vec<f64>,
    last_verified: Option<Iblt>,
}

impl RecoveryProblem {
    pub fn new(b: usize) -> Self {
        Self {
            phi: DenseRows::new(b),
            y_sum: Vec::new(),
            y_count: Vec::new(),
            last_verified: None,
        }
    }

    pub fn push(&mut self, phi_row: &[f64], y_sum: f64, y_count: f64) -> Result<(), RecoveryError> {
        self.phi.push_row(phi_row)?;
        self.y_sum.push(y_sum);
        self.y_count.push(y_count);
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.phi.rows()
    }

    /// [`recover_difference`] for a problem that grows one row at a time.
    ///
    /// A table verified on an earlier prefix is re-checked against all rows
    /// when the greedy solver misses it on the longer prefix.
    pub fn recover(&mut self, params: TableParams, cfg: &SolverConfig) -> Result<RecoveredIblt, RecoveryError> {
        let rec = recover_difference(self, params, cfg)?;
        if rec.verified {
            self.last_verified = Some(rec.table.clone());
            return Ok(rec);
        }
        match &self.last_verified {
            Some(prev) if prev.params() == params && self.fits(prev, cfg.residual_tol) => Ok(RecoveredIblt {
                table: prev.clone(),
                verified: true,
            }),
            _ => Ok(rec),
        }
    }

    fn fits(&self, table: &Iblt, tol: f64) -> bool {
        let sums: Vec<i64> = table.cells().iter().map(|c| c.sum).collect();
        let counts: Vec<i64> = table.cells().iter().map(|c| c.count).collect();
        residual_ok(&self.phi, &counts, &self.y_count, tol) && residual_ok(&self.phi, &sums, &self.y_sum, tol)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveredIblt {
    pub table: Iblt,
    pub verified: bool,
}

/// True if `Phi x` reproduces `y` within `tol * max(1, ||y||_inf)` everywhere.
pub fn residual_ok(phi: &DenseRows, x: &[i64], y: &[f64], tol: f64) -> bool {
    let bound = tol * norm_inf(y).max(1.0);
    phi.apply_int(x)
        .iter()
        .zip(y)
        .all(|(p, v)| (p - v).abs() <= bound)
}

fn recover_column(
    phi: &DenseRows,
    y: &[f64],
    cfg: &SolverConfig,
) -> Option<Vec<i64>> {
    let x = quantize(&solve_l1(phi, y, cfg).ok()?);
    residual_ok(phi, &x, y, cfg.residual_tol).then_some(x)
}

/// Recovers both columns of `IBLT_A - IBLT_B` from the stacked difference
/// measurements.
///
/// While the system is under-determined the support is capped at `m - 1`:
/// a support of size `m` fits any `y` exactly, leaving rounding as the only
/// check, and rounding errors vanish against the tolerance of the sum column.
/// The count column is tried first; the sum column is skipped if it fails.
pub fn recover_difference(
    problem: &RecoveryProblem,
    params: TableParams,
    cfg: &SolverConfig,
) -> Result<RecoveredIblt, RecoveryError> {
    let m = problem.rows();
    let b = params.b;
    if problem.phi.cols() != b {
        return Err(RecoveryError::DimensionMismatch {
            expected: b,
            got: problem.phi.cols(),
        });
    }
    if problem.y_sum.len() != m || problem.y_count.len() != m {
        return Err(RecoveryError::DimensionMismatch {
            expected: m,
            got: problem.y_sum.len().min(problem.y_count.len()),
        });
    }
    let zero = Iblt::with_params(params);
    if m == 0 {
        return Ok(RecoveredIblt {
            table: zero,
            verified: true,
        });
    }

    let mut cfg = *cfg;
    if m < b {
        let cap = cfg.max_sparsity.unwrap_or(m).min(m - 1);
        cfg.max_sparsity = Some(cap);
    }

    let Some(counts) = recover_column(&problem.phi, &problem.y_count, &cfg) else {
        return Ok(RecoveredIblt {
            table: zero,
            verified: false,
        });
    };
    let sums = recover_column(&problem.phi, &problem.y_sum, &cfg);
    let verified = sums.is_some();
    let sums = sums.unwrap_or_else(|| vec![0; b]);
    let cells = sums
        .into_iter()
        .zip(counts)
        .map(|(sum, count)| IbltCell { sum, count })
        .collect();
    Ok(RecoveredIblt {
        table: Iblt::from_cells(params, cells).expect("cell count matches b"),
        verified,
    })
}
