//! Sparse linear algebra over interior-node grid functions.
//!
//! Everything here is deterministic: compressed-row storage keeps column
//! indices sorted, and every reduction (dot products, matrix products) runs
//! in fixed left-to-right order so repeated runs are bitwise identical.

use thiserror::Error;

/// Error type for the linear algebra layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    /// Operand shapes are incompatible.
    #[error("dimension mismatch: {context} (got {got}, expected {expected})")]
    DimensionMismatch {
        context: &'static str,
        got: usize,
        expected: usize,
    },
    /// Compressed-row arrays are inconsistent.
    #[error("invalid sparse structure: {0}")]
    InvalidStructure(String),
    /// A symmetry claim failed verification at construction.
    #[error("symmetry claim violated: |a_ij - a_ji| = {deviation:.3e} at ({row}, {col})")]
    NotSymmetric {
        row: usize,
        col: usize,
        deviation: f64,
    },
    /// The operation requires an operator with the symmetric flag set.
    #[error("operation requires a symmetric operator")]
    SymmetryRequired,
    /// Iterative solve hit its iteration cap before the residual target.
    #[error("solve did not converge: residual {residual:.3e} > target {target:.3e} after {iterations} iterations")]
    SolveDidNotConverge {
        iterations: usize,
        residual: f64,
        target: f64,
    },
    /// Conjugate gradients observed non-positive curvature.
    #[error("indefinite operator: curvature {curvature:.3e} at iteration {iteration}")]
    IndefiniteOperator { iteration: usize, curvature: f64 },
    /// A tolerance argument was outside (0, 1).
    #[error("relative tolerance {0} must lie in (0, 1)")]
    InvalidTolerance(f64),
    /// Power iteration hit its cap without the estimate settling.
    #[error("eigenvalue estimate did not settle within {0} iterations")]
    EstimateDidNotSettle(usize),
}

// ---------------------------------------------------------------------------
// GridFunction
// ---------------------------------------------------------------------------

/// Real-valued vector indexed by interior grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// True when every entry is finite (no NaN/Inf).
    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * other`. Panics on length mismatch.
    pub fn axpy(&mut self, alpha: f64, other: &GridFunction) {
        assert_eq!(self.len(), other.len(), "axpy: length mismatch");
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s += alpha * o;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    /// Euclidean norm, accumulated left to right.
    pub fn norm(&self) -> f64 {
        dot(self, self).sqrt()
    }

    /// Max-magnitude entry.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

impl std::ops::Index<usize> for GridFunction {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

impl std::ops::IndexMut<usize> for GridFunction {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.values[i]
    }
}

/// Dot product in fixed left-to-right order.
pub fn dot(a: &GridFunction, b: &GridFunction) -> f64 {
    assert_eq!(a.len(), b.len(), "dot: length mismatch");
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a.values[i] * b.values[i];
    }
    acc
}

// ---------------------------------------------------------------------------
// SparseOperator
// ---------------------------------------------------------------------------

/// Sparse matrix in compressed-row layout with sorted column indices.
///
/// The `symmetric` flag is a verified claim: constructors that accept it
/// check `|a_ij - a_ji| <= 1e-12 * max|a|` entrywise and refuse the claim
/// otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

/// Relative tolerance for verifying symmetry claims.
pub const SYMMETRY_CLAIM_TOL: f64 = 1e-12;

impl SparseOperator {
    /// Build from (row, col, value) triplets. Duplicates are summed; column
    /// indices end up sorted within each row.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
        symmetric: bool,
    ) -> Result<Self, LinalgError> {
        for &(r, c, _) in triplets {
            if r >= rows {
                return Err(LinalgError::InvalidStructure(format!(
                    "row index {r} out of range for {rows} rows"
                )));
            }
            if c >= cols {
                return Err(LinalgError::InvalidStructure(format!(
                    "column index {c} out of range for {cols} columns"
                )));
            }
        }
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
        for &(r, c, v) in triplets {
            per_row[r].push((c, v));
        }
        let mut row_offsets = Vec::with_capacity(rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for row in &mut per_row {
            row.sort_by_key(|&(c, _)| c);
            let mut i = 0;
            while i < row.len() {
                let c = row[i].0;
                let mut v = row[i].1;
                let mut j = i + 1;
                while j < row.len() && row[j].0 == c {
                    v += row[j].1;
                    j += 1;
                }
                col_indices.push(c);
                values.push(v);
                i = j;
            }
            row_offsets.push(col_indices.len());
        }
        let op = Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
            symmetric: false,
        };
        if symmetric {
            op.claim_symmetric()
        } else {
            Ok(op)
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
            symmetric: true,
        }
    }

    pub fn diagonal(entries: &[f64]) -> Self {
        let n = entries.len();
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: entries.to_vec(),
            symmetric: true,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_symmetric_flagged(&self) -> bool {
        self.symmetric
    }

    /// Verify the symmetry claim entrywise and set the flag.
    pub fn claim_symmetric(mut self) -> Result<Self, LinalgError> {
        if self.rows != self.cols {
            return Err(LinalgError::DimensionMismatch {
                context: "symmetry claim on non-square operator",
                got: self.cols,
                expected: self.rows,
            });
        }
        let scale = self.max_abs_value().max(f64::MIN_POSITIVE);
        let t = self.transpose();
        if let Some((r, c, d)) = self.first_entrywise_deviation(&t, SYMMETRY_CLAIM_TOL * scale) {
            return Err(LinalgError::NotSymmetric {
                row: r,
                col: c,
                deviation: d,
            });
        }
        self.symmetric = true;
        Ok(self)
    }

    /// Set the flag without re-verifying; for constructions that are
    /// symmetric bitwise (transposed-product assembly, entrywise averages).
    pub(crate) fn assume_symmetric(mut self) -> Self {
        debug_assert!(self.clone().claim_symmetric().is_ok());
        self.symmetric = true;
        self
    }

    /// Iterate stored entries as (row, col, value), row-major.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (self.row_offsets[r]..self.row_offsets[r + 1])
                .map(move |k| (r, self.col_indices[k], self.values[k]))
        })
    }

    /// Stored value at (row, col), or 0 when the entry is absent.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        let lo = self.row_offsets[row];
        let hi = self.row_offsets[row + 1];
        match self.col_indices[lo..hi].binary_search(&col) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn max_abs_value(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Sparse mat-vec into a caller buffer; rows accumulated left to right.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "apply_into: input length mismatch");
        assert_eq!(out.len(), self.rows, "apply_into: output length mismatch");
        for (r, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            *slot = acc;
        }
    }

    /// Sparse mat-vec.
    pub fn apply(&self, x: &GridFunction) -> Result<GridFunction, LinalgError> {
        if x.len() != self.cols {
            return Err(LinalgError::DimensionMismatch {
                context: "operator apply",
                got: x.len(),
                expected: self.cols,
            });
        }
        let mut out = GridFunction::zeros(self.rows);
        self.apply_into(x.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    pub fn transpose(&self) -> SparseOperator {
        let mut counts = vec![0usize; self.cols];
        for &c in &self.col_indices {
            counts[c] += 1;
        }
        let mut row_offsets = vec![0usize; self.cols + 1];
        for c in 0..self.cols {
            row_offsets[c + 1] = row_offsets[c] + counts[c];
        }
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        let mut next = row_offsets.clone();
        for r in 0..self.rows {
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                let c = self.col_indices[k];
                let slot = next[c];
                col_indices[slot] = r;
                values[slot] = self.values[k];
                next[c] += 1;
            }
        }
        // Walking rows in order keeps each transposed row sorted.
        SparseOperator {
            rows: self.cols,
            cols: self.rows,
            row_offsets,
            col_indices,
            values,
            symmetric: self.symmetric,
        }
    }

    /// `self + c * other` with union sparsity.
    pub fn add_scaled(
        &self,
        c: f64,
        other: &SparseOperator,
    ) -> Result<SparseOperator, LinalgError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::DimensionMismatch {
                context: "operator sum",
                got: other.rows,
                expected: self.rows,
            });
        }
        let mut row_offsets = Vec::with_capacity(self.rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for r in 0..self.rows {
            let (mut i, hi_a) = (self.row_offsets[r], self.row_offsets[r + 1]);
            let (mut j, hi_b) = (other.row_offsets[r], other.row_offsets[r + 1]);
            while i < hi_a || j < hi_b {
                let ca = if i < hi_a {
                    self.col_indices[i]
                } else {
                    usize::MAX
                };
                let cb = if j < hi_b {
                    other.col_indices[j]
                } else {
                    usize::MAX
                };
                if ca < cb {
                    col_indices.push(ca);
                    values.push(self.values[i]);
                    i += 1;
                } else if cb < ca {
                    col_indices.push(cb);
                    values.push(c * other.values[j]);
                    j += 1;
                } else {
                    col_indices.push(ca);
                    values.push(self.values[i] + c * other.values[j]);
                    i += 1;
                    j += 1;
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(SparseOperator {
            rows: self.rows,
            cols: self.cols,
            row_offsets,
            col_indices,
            values,
            symmetric: self.symmetric && other.symmetric,
        })
    }

    pub fn scaled(&self, c: f64) -> SparseOperator {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= c;
        }
        out
    }

    /// `I + c * self`; requires a square operator.
    pub fn shift_identity(&self, c: f64) -> Result<SparseOperator, LinalgError> {
        SparseOperator::identity(self.rows).add_scaled(c, self)
    }

    /// Scale row i by `w[i]` (diagonal left multiplication). Clears the
    /// symmetry flag.
    pub fn scale_rows(&self, w: &[f64]) -> SparseOperator {
        assert_eq!(w.len(), self.rows, "scale_rows: weight length mismatch");
        let mut out = self.clone();
        out.symmetric = false;
        for (r, &scale) in w.iter().enumerate() {
            for k in out.row_offsets[r]..out.row_offsets[r + 1] {
                out.values[k] *= scale;
            }
        }
        out
    }

    /// Scale column j by `w[j]` (diagonal right multiplication). Clears the
    /// symmetry flag.
    pub fn scale_cols(&self, w: &[f64]) -> SparseOperator {
        assert_eq!(w.len(), self.cols, "scale_cols: weight length mismatch");
        let mut out = self.clone();
        out.symmetric = false;
        for k in 0..out.values.len() {
            out.values[k] *= w[out.col_indices[k]];
        }
        out
    }

    /// Sparse product `self * other`, accumulated per output row in
    /// increasing inner-index order.
    pub fn matmul(&self, other: &SparseOperator) -> Result<SparseOperator, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                context: "operator product",
                got: other.rows,
                expected: self.cols,
            });
        }
        let mut row_offsets = Vec::with_capacity(self.rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        let mut acc = vec![0.0f64; other.cols];
        let mut touched: Vec<usize> = Vec::new();
        for r in 0..self.rows {
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                let a = self.values[k];
                let mid = self.col_indices[k];
                for m in other.row_offsets[mid]..other.row_offsets[mid + 1] {
                    let c = other.col_indices[m];
                    if acc[c] == 0.0 && !touched.contains(&c) {
                        touched.push(c);
                    }
                    acc[c] += a * other.values[m];
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                col_indices.push(c);
                values.push(acc[c]);
                acc[c] = 0.0;
            }
            touched.clear();
            row_offsets.push(col_indices.len());
        }
        Ok(SparseOperator {
            rows: self.rows,
            cols: other.cols,
            row_offsets,
            col_indices,
            values,
            symmetric: false,
        })
    }

    /// Principal submatrix on the given (sorted, duplicate-free) index set.
    pub fn restrict(&self, indices: &[usize]) -> SparseOperator {
        let mut position = vec![usize::MAX; self.cols.max(self.rows)];
        for (slot, &i) in indices.iter().enumerate() {
            position[i] = slot;
        }
        let mut triplets = Vec::new();
        for (slot, &i) in indices.iter().enumerate() {
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                let c = self.col_indices[k];
                if position[c] != usize::MAX {
                    triplets.push((slot, position[c], self.values[k]));
                }
            }
        }
        let mut out = SparseOperator::from_triplets(indices.len(), indices.len(), &triplets, false)
            .expect("restriction indices validated by caller");
        out.symmetric = self.symmetric;
        out
    }

    /// Largest |a_ij - b_ij| over the union sparsity pattern, together with
    /// its location; `None` when structurally identical and equal.
    fn first_entrywise_deviation(
        &self,
        other: &SparseOperator,
        tol: f64,
    ) -> Option<(usize, usize, f64)> {
        let mut worst: Option<(usize, usize, f64)> = None;
        for r in 0..self.rows {
            let (mut i, hi_a) = (self.row_offsets[r], self.row_offsets[r + 1]);
            let (mut j, hi_b) = (other.row_offsets[r], other.row_offsets[r + 1]);
            while i < hi_a || j < hi_b {
                let ca = if i < hi_a {
                    self.col_indices[i]
                } else {
                    usize::MAX
                };
                let cb = if j < hi_b {
                    other.col_indices[j]
                } else {
                    usize::MAX
                };
                let (c, d) = if ca < cb {
                    i += 1;
                    (ca, self.values[i - 1].abs())
                } else if cb < ca {
                    j += 1;
                    (cb, other.values[j - 1].abs())
                } else {
                    i += 1;
                    j += 1;
                    (ca, (self.values[i - 1] - other.values[j - 1]).abs())
                };
                if d > tol && worst.is_none_or(|(_, _, w)| d > w) {
                    worst = Some((r, c, d));
                }
            }
        }
        worst
    }

    /// Largest |a_ij - b_ij| over the union sparsity pattern.
    pub fn max_abs_diff(&self, other: &SparseOperator) -> f64 {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        self.first_entrywise_deviation(other, -1.0)
            .map_or(0.0, |(_, _, d)| d)
    }
}

// ---------------------------------------------------------------------------
// Weighted norms
// ---------------------------------------------------------------------------

/// Weight operator selecting which inner product a norm uses.
#[derive(Clone, Copy)]
pub enum NormKind<'a> {
    /// Plain Euclidean norm.
    Identity,
    /// (Ax, x)^{1/2} for the referenced symmetric positive definite operator.
    Operator(&'a SparseOperator),
    /// (A^{-1}x, x)^{1/2}; evaluated by an internal conjugate-gradient solve.
    InverseOperator(&'a SparseOperator),
}

/// Internal tolerance for the solve behind inverse-weighted norms.
const INVERSE_NORM_TOL: f64 = 1e-12;
const INVERSE_NORM_MAX_ITER: usize = 100_000;

/// Weighted norm (Dx, x)^{1/2}.
pub fn weighted_norm(x: &GridFunction, kind: NormKind<'_>) -> Result<f64, LinalgError> {
    Ok(weighted_norm_sq(x, kind)?.max(0.0).sqrt())
}

/// Weighted squared norm (Dx, x).
pub fn weighted_norm_sq(x: &GridFunction, kind: NormKind<'_>) -> Result<f64, LinalgError> {
    match kind {
        NormKind::Identity => Ok(dot(x, x)),
        NormKind::Operator(a) => {
            let ax = a.apply(x)?;
            Ok(dot(&ax, x))
        }
        NormKind::InverseOperator(a) => {
            if x.norm() == 0.0 {
                return Ok(0.0);
            }
            let z = cg_solve(a, x, None, INVERSE_NORM_TOL, INVERSE_NORM_MAX_ITER)?;
            Ok(dot(&z, x))
        }
    }
}

// ---------------------------------------------------------------------------
// Conjugate gradients
// ---------------------------------------------------------------------------

/// Solve `op * x = rhs` for symmetric positive definite `op` by conjugate
/// gradients, optionally warm-started from `guess`.
///
/// On success the true residual satisfies `||op*x - rhs|| <= rel_tol * ||rhs||`.
pub fn cg_solve(
    op: &SparseOperator,
    rhs: &GridFunction,
    guess: Option<&GridFunction>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<GridFunction, LinalgError> {
    if op.rows != op.cols {
        return Err(LinalgError::DimensionMismatch {
            context: "cg_solve on non-square operator",
            got: op.cols,
            expected: op.rows,
        });
    }
    if rhs.len() != op.rows {
        return Err(LinalgError::DimensionMismatch {
            context: "cg_solve right-hand side",
            got: rhs.len(),
            expected: op.rows,
        });
    }
    if !op.symmetric {
        return Err(LinalgError::SymmetryRequired);
    }
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(LinalgError::InvalidTolerance(rel_tol));
    }
    let n = op.rows;
    let rhs_norm = rhs.norm();
    if rhs_norm == 0.0 {
        return Ok(GridFunction::zeros(n));
    }
    let target = rel_tol * rhs_norm;

    let mut x = match guess {
        Some(g) => {
            if g.len() != n {
                return Err(LinalgError::DimensionMismatch {
                    context: "cg_solve initial guess",
                    got: g.len(),
                    expected: n,
                });
            }
            g.clone()
        }
        None => GridFunction::zeros(n),
    };
    let mut r = rhs.clone();
    let ax = op.apply(&x)?;
    r.axpy(-1.0, &ax);
    let mut res_norm = r.norm();
    if res_norm <= target {
        return Ok(x);
    }
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut ap = GridFunction::zeros(n);
    for it in 0..max_iter {
        op.apply_into(p.as_slice(), ap.as_mut_slice());
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(LinalgError::IndefiniteOperator {
                iteration: it,
                curvature: pap,
            });
        }
        let alpha = rr / pap;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        res_norm = r.norm();
        if res_norm <= target {
            // Recurrence residuals drift; confirm against the true residual.
            let mut true_r = rhs.clone();
            let ax = op.apply(&x)?;
            true_r.axpy(-1.0, &ax);
            let true_norm = true_r.norm();
            if true_norm <= target {
                return Ok(x);
            }
            r = true_r;
            res_norm = true_norm;
        }
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        rr = rr_next;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(LinalgError::SolveDidNotConverge {
        iterations: max_iter,
        residual: res_norm,
        target,
    })
}

/// Solve `op * x = rhs` for a square, possibly nonsymmetric `op` by
/// conjugate gradients on the normal equations (CGNR). The convergence test
/// tracks the true residual `||op*x - rhs||`.
pub(crate) fn cgnr_solve(
    op: &SparseOperator,
    rhs: &GridFunction,
    guess: Option<&GridFunction>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<GridFunction, LinalgError> {
    if op.rows != op.cols {
        return Err(LinalgError::DimensionMismatch {
            context: "cgnr_solve on non-square operator",
            got: op.cols,
            expected: op.rows,
        });
    }
    if rhs.len() != op.rows {
        return Err(LinalgError::DimensionMismatch {
            context: "cgnr_solve right-hand side",
            got: rhs.len(),
            expected: op.rows,
        });
    }
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(LinalgError::InvalidTolerance(rel_tol));
    }
    let n = op.rows;
    let rhs_norm = rhs.norm();
    if rhs_norm == 0.0 {
        return Ok(GridFunction::zeros(n));
    }
    let target = rel_tol * rhs_norm;
    let op_t = op.transpose();

    let mut x = match guess {
        Some(g) => g.clone(),
        None => GridFunction::zeros(n),
    };
    let mut r = rhs.clone();
    let ax = op.apply(&x)?;
    r.axpy(-1.0, &ax);
    let mut res_norm = r.norm();
    if res_norm <= target {
        return Ok(x);
    }
    let mut z = op_t.apply(&r)?;
    let mut p = z.clone();
    let mut zz = dot(&z, &z);
    let mut w = GridFunction::zeros(n);
    for it in 0..max_iter {
        op.apply_into(p.as_slice(), w.as_mut_slice());
        let ww = dot(&w, &w);
        if ww == 0.0 {
            return Err(LinalgError::IndefiniteOperator {
                iteration: it,
                curvature: 0.0,
            });
        }
        let alpha = zz / ww;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &w);
        res_norm = r.norm();
        if res_norm <= target {
            return Ok(x);
        }
        op_t.apply_into(r.as_slice(), z.as_mut_slice());
        let zz_next = dot(&z, &z);
        let beta = zz_next / zz;
        zz = zz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(LinalgError::SolveDidNotConverge {
        iterations: max_iter,
        residual: res_norm,
        target,
    })
}

// ---------------------------------------------------------------------------
// Dominant eigenvalue estimate
// ---------------------------------------------------------------------------

const POWER_ITERATION_CAP: usize = 50_000;

/// Deterministic pseudo-random fill for iteration start vectors (splitmix64).
pub(crate) fn deterministic_noise(len: usize, seed: u64) -> GridFunction {
    let mut state = seed;
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        values.push((z >> 11) as f64 / (1u64 << 53) as f64 - 0.5);
    }
    GridFunction::from_vec(values)
}

/// Power-iteration estimate of the largest-magnitude eigenvalue of a
/// symmetric operator, to relative accuracy `tol`.
pub fn operator_norm_estimate(op: &SparseOperator, tol: f64) -> Result<f64, LinalgError> {
    if op.rows != op.cols {
        return Err(LinalgError::DimensionMismatch {
            context: "operator_norm_estimate on non-square operator",
            got: op.cols,
            expected: op.rows,
        });
    }
    if !op.symmetric {
        return Err(LinalgError::SymmetryRequired);
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(LinalgError::InvalidTolerance(tol));
    }
    if op.rows == 0 {
        return Ok(0.0);
    }
    let mut v = deterministic_noise(op.rows, 0x5EED);
    let nv = v.norm();
    v.scale(1.0 / nv);
    let mut estimate = 0.0f64;
    let mut av = GridFunction::zeros(op.rows);
    for _ in 0..POWER_ITERATION_CAP {
        op.apply_into(v.as_slice(), av.as_mut_slice());
        let rayleigh = dot(&av, &v);
        let av_norm = av.norm();
        if av_norm == 0.0 {
            return Ok(0.0);
        }
        let next = rayleigh.abs();
        if (next - estimate).abs() <= tol * next.max(f64::MIN_POSITIVE) {
            return Ok(next);
        }
        estimate = next;
        v = av.clone();
        v.scale(1.0 / av_norm);
    }
    Err(LinalgError::EstimateDidNotSettle(POWER_ITERATION_CAP))
}
