//! Equispaced knot grids and the piecewise-linear hat basis.
//!
//! Knot values are flattened row-major over `(j_1, ..., j_d)`: the last
//! dimension varies fastest. Every matrix indexed by knots (the prior
//! covariance, the design matrix, constraint rows) uses this order.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack tolerated on the unit-domain check before an input is rejected.
/// Coordinates inside the slack are clamped onto `[0, 1]`.
pub const DOMAIN_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "KnotGridFields")]
pub struct KnotGrid {
    dims: Vec<usize>,
}

/// Deserialized form, checked by [`KnotGrid::new`].
#[derive(Deserialize)]
struct KnotGridFields {
    dims: Vec<usize>,
}

impl TryFrom<KnotGridFields> for KnotGrid {
    type Error = Error;

    fn try_from(f: KnotGridFields) -> Result<Self> {
        KnotGrid::new(f.dims)
    }
}

impl KnotGrid {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidArgument(
                "knot grid needs at least one dimension".into(),
            ));
        }
        if let Some(m) = dims.iter().find(|m| **m < 2) {
            return Err(Error::InvalidArgument(format!(
                "each dimension needs at least 2 knots, got {m}"
            )));
        }
        dims.iter()
            .try_fold(1usize, |acc, m| acc.checked_mul(*m))
            .ok_or_else(|| Error::InvalidArgument("knot count overflows".into()))?;
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn total_knots(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn spacing(&self, dim: usize) -> f64 {
        1.0 / (self.dims[dim] - 1) as f64
    }

    /// Knot positions along one dimension: `t_j = j / (m - 1)`.
    pub fn knots(&self, dim: usize) -> Vec<f64> {
        let m = self.dims[dim];
        (0..m).map(|j| self.knot(dim, j)).collect()
    }

    fn knot(&self, dim: usize, j: usize) -> f64 {
        let m = self.dims[dim];
        if j + 1 == m {
            1.0
        } else {
            j as f64 / (m - 1) as f64
        }
    }

    /// Stride of dimension `dim` in the flattened knot index.
    pub fn stride(&self, dim: usize) -> usize {
        self.dims[dim + 1..].iter().product()
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (j, m)| acc * m + j)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.ndim()];
        for k in (0..self.ndim()).rev() {
            out[k] = flat % self.dims[k];
            flat /= self.dims[k];
        }
        out
    }

    /// Coordinates of every knot in flattened order.
    pub fn knot_points(&self) -> Vec<Vec<f64>> {
        (0..self.total_knots())
            .map(|f| {
                self.multi_index(f)
                    .iter()
                    .enumerate()
                    .map(|(k, j)| self.knot(k, *j))
                    .collect()
            })
            .collect()
    }

    /// Hat function `phi_j` of dimension `dim` evaluated at `x`.
    pub fn hat(&self, dim: usize, j: usize, x: f64) -> Result<f64> {
        if dim >= self.ndim() || j >= self.dims[dim] {
            return Err(Error::InvalidArgument(format!(
                "hat index ({dim}, {j}) outside grid {:?}",
                self.dims
            )));
        }
        let x = check_unit(x)?;
        let ratio = ((x - self.knot(dim, j)) / self.spacing(dim)).abs();
        Ok(if ratio <= 1.0 { 1.0 - ratio } else { 0.0 })
    }

    /// Left cell index and the weight of the right knot along one dimension.
    fn cell(&self, dim: usize, x: f64) -> (usize, f64) {
        let m = self.dims[dim];
        let scaled = x * (m - 1) as f64;
        let left = (scaled.floor() as usize).min(m - 2);
        let w = (scaled - left as f64).clamp(0.0, 1.0);
        (left, w)
    }

    /// Nonzero basis values at `x`, as `(flat knot index, weight)` pairs.
    pub fn basis_row(&self, x: &[f64]) -> Result<SparseRow> {
        if x.len() != self.ndim() {
            return Err(Error::Dimension(format!(
                "point has dimension {} but grid has {}",
                x.len(),
                self.ndim()
            )));
        }
        let mut entries: Vec<(usize, f64)> = vec![(0, 1.0)];
        for (k, xk) in x.iter().enumerate() {
            let xk = check_unit(*xk)?;
            let (left, w) = self.cell(k, xk);
            let stride = self.stride(k);
            let mut next = Vec::with_capacity(entries.len() * 2);
            for (idx, val) in &entries {
                if w < 1.0 {
                    next.push((idx + left * stride, val * (1.0 - w)));
                }
                if w > 0.0 {
                    next.push((idx + (left + 1) * stride, val * w));
                }
            }
            entries = next;
        }
        entries.sort_unstable_by_key(|e| e.0);
        Ok(SparseRow { entries })
    }

    pub fn design_matrix(&self, inputs: &[Vec<f64>]) -> Result<SparseMatrix> {
        let rows = inputs
            .iter()
            .map(|x| self.basis_row(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(SparseMatrix {
            ncols: self.total_knots(),
            rows,
        })
    }

    /// Piecewise multilinear interpolation of knot values `xi` at `x`.
    pub fn evaluate(&self, xi: &[f64], x: &[f64]) -> Result<f64> {
        if xi.len() != self.total_knots() {
            return Err(Error::Dimension(format!(
                "knot vector has length {} but grid has {} knots",
                xi.len(),
                self.total_knots()
            )));
        }
        Ok(self.basis_row(x)?.dot(xi))
    }
}

fn check_unit(x: f64) -> Result<f64> {
    if !x.is_finite() || x < -DOMAIN_SLACK || x > 1.0 + DOMAIN_SLACK {
        return Err(Error::OutOfDomain(format!("coordinate {x} not in [0, 1]")));
    }
    Ok(x.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseRow {
    pub entries: Vec<(usize, f64)>,
}

impl SparseRow {
    pub fn dot(&self, v: &[f64]) -> f64 {
        self.entries.iter().map(|(j, a)| a * v[*j]).sum()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }
}

/// Row-sparse matrix; used for the design matrix and constraint rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub ncols: usize,
    pub rows: Vec<SparseRow>,
}

impl SparseMatrix {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows(), self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            for (j, a) in &row.entries {
                d[(i, *j)] += a;
            }
        }
        d
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.nrows(), self.rows.iter().map(|r| r.dot(v.as_slice())))
    }

    /// `self^T v`.
    pub fn tr_mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        for (row, vi) in self.rows.iter().zip(v.iter()) {
            for (j, a) in &row.entries {
                out[*j] += a * vi;
            }
        }
        out
    }

    /// `self * dense` for a dense matrix with `ncols` rows.
    pub fn mul_dense(&self, dense: &DMatrix<f64>) -> DMatrix<f64> {
        // Built transposed so every update is a contiguous column axpy.
        let dt = dense.transpose();
        let mut out = DMatrix::zeros(dense.ncols(), self.nrows());
        for (i, row) in self.rows.iter().enumerate() {
            let mut dst = out.column_mut(i);
            for (j, a) in &row.entries {
                dst.axpy(*a, &dt.column(*j), 1.0);
            }
        }
        out.transpose()
    }

    /// `dense * self^T` for a dense matrix with `ncols` columns.
    pub fn dense_mul_tr(&self, dense: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(dense.nrows(), self.nrows());
        for (i, row) in self.rows.iter().enumerate() {
            for (j, a) in &row.entries {
                let src = dense.column(*j);
                let mut dst = out.column_mut(i);
                dst.axpy(*a, &src, 1.0);
            }
        }
        out
    }

    /// Gram product `self^T self` (dense, `ncols x ncols`).
    pub fn gram(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.ncols, self.ncols);
        for row in &self.rows {
            for (a, va) in &row.entries {
                for (b, vb) in &row.entries {
                    out[(*a, *b)] += va * vb;
                }
            }
        }
        out
    }

    /// `self^T * dense` (dense, `ncols x dense.ncols()`).
    pub fn tr_mul_dense(&self, dense: &DMatrix<f64>) -> DMatrix<f64> {
        let dt = dense.transpose();
        let mut out = DMatrix::zeros(dense.ncols(), self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            let src = dt.column(i);
            for (j, a) in &row.entries {
                out.column_mut(*j).axpy(*a, &src, 1.0);
            }
        }
        out.transpose()
    }

    /// Symmetric sandwich `self * m * self^T` for symmetric `m`.
    pub fn sandwich(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.nrows();
        let nnz = self.rows.iter().map(|r| r.nnz()).max().unwrap_or(0) as f64;
        let pairwise = 0.5 * (n * n) as f64 * nnz * nnz;
        let dense = n as f64 * nnz * (self.ncols + n) as f64;
        if dense < pairwise {
            // Dense route: (self * m) * self^T.
            let mut out = self.dense_mul_tr(&self.mul_dense(m));
            crate::linalg::symmetrize(&mut out);
            return out;
        }
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for k in 0..=i {
                let mut s = 0.0;
                for (a, va) in &self.rows[i].entries {
                    for (b, vb) in &self.rows[k].entries {
                        s += va * vb * m[(*a, *b)];
                    }
                }
                out[(i, k)] = s;
                out[(k, i)] = s;
            }
        }
        out
    }
}

/// Per-dimension affine map from raw inputs onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NormalizationFields")]
pub struct Normalization {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Deserialize)]
struct NormalizationFields {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<NormalizationFields> for Normalization {
    type Error = Error;

    fn try_from(f: NormalizationFields) -> Result<Self> {
        Normalization::new(f.lower, f.upper)
    }
}

impl Normalization {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Dimension(
                "normalization bounds must be nonempty and of equal length".into(),
            ));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite() && u > l) {
                return Err(Error::InvalidArgument(format!(
                    "degenerate input range [{l}, {u}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Bounding box of the data.
    pub fn from_data(inputs: &[Vec<f64>]) -> Result<Self> {
        let first = inputs.first().ok_or(Error::NoObservations)?;
        let d = first.len();
        let mut lower = vec![f64::INFINITY; d];
        let mut upper = vec![f64::NEG_INFINITY; d];
        for x in inputs {
            if x.len() != d {
                return Err(Error::Dimension("ragged input rows".into()));
            }
            for k in 0..d {
                lower[k] = lower[k].min(x[k]);
                upper[k] = upper[k].max(x[k]);
            }
        }
        Self::new(lower, upper)
    }

    pub fn identity(d: usize) -> Self {
        Self {
            lower: vec![0.0; d],
            upper: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "point has dimension {} but model has {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(x.iter()
            .enumerate()
            .map(|(k, v)| (v - self.lower[k]) / (self.upper[k] - self.lower[k]))
            .collect())
    }

    pub fn invert(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(k, v)| self.lower[k] + v * (self.upper[k] - self.lower[k]))
            .collect()
    }
}
