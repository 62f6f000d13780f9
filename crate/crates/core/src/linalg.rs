//! Dense factorization helpers shared by the posterior, QP and samplers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};

/// Relative jitter rungs, as multiples of `trace / n`.
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Cholesky factor of `a + jitter * I`.
#[derive(Debug, Clone)]
pub struct JitteredCholesky {
    pub factor: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl JitteredCholesky {
    pub fn l(&self) -> DMatrix<f64> {
        self.factor.l()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.factor.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(b)
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.factor.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Cholesky with an escalating diagonal jitter. An exact factorization is
/// tried first; then jitter `1e-10 * trace / n`, growing tenfold up to
/// `1e-6 * trace / n`.
pub fn cholesky_jittered(a: &DMatrix<f64>) -> Result<JitteredCholesky> {
    if let Some(factor) = try_cholesky(a, 0.0) {
        return Ok(JitteredCholesky { factor, jitter: 0.0 });
    }
    let n = a.nrows();
    let scale = (a.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * scale;
        if let Some(factor) = try_cholesky(a, jitter) {
            return Ok(JitteredCholesky { factor, jitter });
        }
        rel *= 10.0;
    }
    Err(Error::Factorization(format!(
        "{n}x{n} matrix not positive definite even with jitter {:.1e}",
        JITTER_MAX * scale
    )))
}

fn try_cholesky(a: &DMatrix<f64>, jitter: f64) -> Option<Cholesky<f64, Dyn>> {
    let mut m = a.clone();
    if jitter > 0.0 {
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
    }
    let c = Cholesky::new(m)?;
    // nalgebra accepts tiny positive pivots; reject factors that are
    // numerically singular relative to the largest pivot.
    let diag = c.l_dirty().diagonal();
    let max = diag.max();
    if diag.iter().all(|d| d.is_finite() && *d > max * 1e-150) {
        Some(c)
    } else {
        None
    }
}

/// Factor `F` with `F F^T = a` for a symmetric PSD matrix. Tries Cholesky,
/// then falls back to an eigendecomposition with eigenvalues below
/// `1e-10 * max_eigenvalue` dropped. `F` has as many columns as the kept rank.
pub fn psd_factor(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = try_cholesky(a, 0.0) {
        let l = c.l();
        let diag = l.diagonal();
        if diag.min() > diag.max() * 1e-7 {
            return Ok(l);
        }
    }
    let mut sym = a.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.max().max(0.0);
    if max <= 0.0 {
        return Err(Error::Factorization(
            "covariance has no positive eigenvalues".into(),
        ));
    }
    let tol = max * 1e-10;
    let min = eig.eigenvalues.min();
    if min < -1e-8 * max {
        return Err(Error::Factorization(format!(
            "covariance is not PSD (eigenvalue {min:.3e})"
        )));
    }
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|i| eig.eigenvalues[*i] > tol)
        .collect();
    let mut f = DMatrix::zeros(a.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        f.set_column(c, &(eig.eigenvectors.column(i) * s));
    }
    Ok(f)
}

/// Square factor `F` with `F F^T = a` to rounding, without jitter: an
/// unjittered Cholesky when it exists, otherwise `V sqrt(max(D, 0))` from
/// the symmetric eigendecomposition.
pub fn exact_factor(a: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = try_cholesky(a, 0.0) {
        return c.l();
    }
    let mut sym = a.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let mut f = eig.eigenvectors;
    for (i, v) in eig.eigenvalues.iter().enumerate() {
        let s = v.max(0.0).sqrt();
        f.column_mut(i).scale_mut(s);
    }
    f
}

/// Orthonormal basis of the null space of `lambda`, one basis vector per
/// row of the result (zero rows when `lambda` has full column rank).
pub fn null_space_rows(lambda: &DMatrix<f64>) -> DMatrix<f64> {
    let m = lambda.ncols();
    let gram = lambda.transpose() * lambda;
    let eig = gram.symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let tol = top.max(1e-300) * m as f64 * f64::EPSILON * 100.0;
    let null: Vec<usize> = (0..m).filter(|i| eig.eigenvalues[*i] <= tol).collect();
    DMatrix::from_fn(null.len(), m, |r, c| eig.eigenvectors[(c, null[r])])
}

/// Solves `lambda * x = z` for full-column-rank `lambda` (q >= m) by
/// selecting m linearly independent rows. The remaining rows are checked
/// for consistency.
#[derive(Debug, Clone)]
pub struct RowBasisSolver {
    lambda: DMatrix<f64>,
    basis_rows: Vec<usize>,
    lu: LU<f64, Dyn, Dyn>,
}

impl RowBasisSolver {
    pub fn new(lambda: &DMatrix<f64>) -> Result<Self> {
        let (q, m) = lambda.shape();
        if q < m {
            return Err(Error::RankDeficient { rank: q, required: m });
        }
        // Column-pivoted QR of lambda^T ranks the rows of lambda.
        let qr = lambda.transpose().col_piv_qr();
        let r = qr.r();
        let diag_max = (0..m).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        let tol = diag_max * (q.max(m) as f64) * f64::EPSILON * 10.0;
        let rank = (0..m).take_while(|i| r[(*i, *i)].abs() > tol).count();
        if rank < m {
            return Err(Error::RankDeficient { rank, required: m });
        }
        let mut perm: Vec<usize> = (0..q).collect();
        // Apply the recorded column permutation to the identity ordering.
        let mut ident = DMatrix::<f64>::from_fn(1, q, |_, j| j as f64);
        qr.p().permute_columns(&mut ident);
        for (j, p) in perm.iter_mut().enumerate() {
            *p = ident[(0, j)] as usize;
        }
        let mut basis_rows: Vec<usize> = perm[..m].to_vec();
        basis_rows.sort_unstable();
        let sub = DMatrix::from_fn(m, m, |i, j| lambda[(basis_rows[i], j)]);
        let lu = sub.lu();
        Ok(Self {
            lambda: lambda.clone(),
            basis_rows,
            lu,
        })
    }

    pub fn basis_rows(&self) -> &[usize] {
        &self.basis_rows
    }

    /// Returns `x` and the max absolute residual over all rows.
    pub fn solve(&self, z: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        let zs = DVector::from_iterator(self.basis_rows.len(), self.basis_rows.iter().map(|k| z[*k]));
        let x = self
            .lu
            .solve(&zs)
            .ok_or_else(|| Error::Singular("row basis became singular".into()))?;
        let resid = (&self.lambda * &x - z).amax();
        Ok((x, resid))
    }
}
