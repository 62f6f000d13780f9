//! Gaussian conditioning of knot values on noisy observations, and the
//! truncated-Gaussian law of the constrained coordinates `Lambda xi`.
//!
//! With prior `xi ~ N(0, Gamma)` and observations `y = Phi xi + eps`,
//! `eps ~ N(0, tau2 I)`, the posterior is `N(mu, Sigma)` with
//!
//! ```text
//! mu    = Gamma Phi^T (Phi Gamma Phi^T + tau2 I)^-1 y
//! Sigma = Gamma - Gamma Phi^T (Phi Gamma Phi^T + tau2 I)^-1 Phi Gamma
//! ```
//!
//! The direct path factors the n x n matrix above. The low-rank path writes
//! `Gamma = C C^T`, `B = Phi C`, `A = tau2 I + B^T B` and uses the
//! equivalent m x m forms `mu = C A^-1 B^T y`, `Sigma = tau2 C A^-1 C^T`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::SparseMatrix;
use crate::constraints::LinearConstraintSystem;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, exact_factor, psd_factor, symmetrize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Lower-triangular factor of `cov + jitter_used * I`.
    pub chol: DMatrix<f64>,
    pub jitter_used: f64,
}

impl ConditionedGaussian {
    pub fn from_moments(mean: DVector<f64>, mut cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Dimension(format!(
                "mean of length {} with a {}x{} covariance",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        symmetrize(&mut cov);
        let c = cholesky_jittered(&cov)?;
        Ok(Self {
            chol: c.l(),
            jitter_used: c.jitter,
            mean,
            cov,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn check_inputs(gram: &DMatrix<f64>, phi: &SparseMatrix, y: &DVector<f64>, tau2: f64) -> Result<()> {
    let m = gram.nrows();
    if gram.ncols() != m {
        return Err(Error::Dimension("prior covariance must be square".into()));
    }
    if phi.ncols != m {
        return Err(Error::Dimension(format!(
            "design matrix has {} columns but there are {m} knots",
            phi.ncols
        )));
    }
    if phi.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} design rows for {} observations",
            phi.nrows(),
            y.len()
        )));
    }
    if !(tau2 >= 0.0 && tau2.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise variance must be finite and >= 0, got {tau2}"
        )));
    }
    Ok(())
}

fn noisy_covariance(gram: &DMatrix<f64>, phi: &SparseMatrix, tau2: f64) -> DMatrix<f64> {
    let mut k = phi.sandwich(gram);
    for i in 0..k.nrows() {
        k[(i, i)] += tau2;
    }
    k
}

fn factor_noisy(k: DMatrix<f64>, tau2: f64) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(k).ok_or_else(|| {
        if tau2 == 0.0 {
            Error::Singular(
                "Phi Gamma Phi^T is singular without noise; add jitter or a noise variance".into(),
            )
        } else {
            Error::Factorization("Phi Gamma Phi^T + tau2 I is not positive definite".into())
        }
    })
}

/// Posterior of the knot values through the n x n system.
pub fn condition(
    gram: &DMatrix<f64>,
    phi: &SparseMatrix,
    y: &DVector<f64>,
    tau2: f64,
) -> Result<ConditionedGaussian> {
    check_inputs(gram, phi, y, tau2)?;
    let m = gram.nrows();
    if y.is_empty() {
        return ConditionedGaussian::from_moments(DVector::zeros(m), gram.clone());
    }
    let g_phi_t = phi.dense_mul_tr(gram);
    let chol = factor_noisy(noisy_covariance(gram, phi, tau2), tau2)?;
    let mean = &g_phi_t * chol.solve(y);
    // W = L^-1 Phi Gamma, Sigma = Gamma - W^T W.
    let w = chol
        .l()
        .solve_lower_triangular(&g_phi_t.transpose())
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let cov = gram - w.transpose() * w;
    ConditionedGaussian::from_moments(mean, cov)
}

/// Posterior of the knot values through the m x m low-rank identity.
pub fn condition_woodbury(
    gram: &DMatrix<f64>,
    phi: &SparseMatrix,
    y: &DVector<f64>,
    tau2: f64,
) -> Result<ConditionedGaussian> {
    check_inputs(gram, phi, y, tau2)?;
    if tau2 <= 0.0 {
        return Err(Error::InvalidArgument(
            "the low-rank path needs a positive noise variance".into(),
        ));
    }
    let m = gram.nrows();
    // Any square root of Gamma works; avoiding jitter keeps this path
    // identical to the direct one.
    let c = exact_factor(gram);
    let b = phi.mul_dense(&c);
    let mut a = b.transpose() * &b;
    for i in 0..m {
        a[(i, i)] += tau2;
    }
    let a_chol = Cholesky::new(a)
        .ok_or_else(|| Error::Factorization("tau2 I + B^T B is not positive definite".into()))?;
    let mean = &c * a_chol.solve(&(b.transpose() * y));
    // tau2 C A^-1 C^T = (sqrt(tau2) L_A^-1 C^T)^T (...)
    let v = a_chol
        .l()
        .solve_lower_triangular(&c.transpose())
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let cov = (v.transpose() * v) * tau2;
    ConditionedGaussian::from_moments(mean, cov)
}

/// Truncated Gaussian `TN(mean, cov, lower, upper)`.
///
/// `factor` satisfies `factor * factor^T = cov` (up to the jitter used when
/// it was built from a conditioned posterior). Samplers work in the
/// whitened coordinates `w`, with `z = mean + factor * w` and `w ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedGaussianSpec {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub factor: DMatrix<f64>,
    pub lambda: Option<DMatrix<f64>>,
}

impl TruncatedGaussianSpec {
    pub fn new(
        mean: DVector<f64>,
        mut cov: DMatrix<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self> {
        let q = mean.len();
        if cov.shape() != (q, q) || lower.len() != q || upper.len() != q {
            return Err(Error::Dimension(format!(
                "truncated Gaussian of dimension {q} with mismatched covariance or bounds"
            )));
        }
        check_bounds(&lower, &upper)?;
        symmetrize(&mut cov);
        let factor = psd_factor(&cov)?;
        Ok(Self {
            mean,
            cov,
            lower,
            upper,
            factor,
            lambda: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Dimension of the whitened space.
    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    pub fn is_feasible(&self, z: &DVector<f64>, tol: f64) -> bool {
        z.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
    }

    /// Max bound violation of `z` (0 when feasible).
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        z.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .map(|(v, (l, u))| (l - v).max(v - u).max(0.0))
            .fold(0.0, f64::max)
    }
}

fn check_bounds(lower: &DVector<f64>, upper: &DVector<f64>) -> Result<()> {
    for (k, (l, u)) in lower.iter().zip(upper.iter()).enumerate() {
        if l.is_nan() || u.is_nan() || l > u {
            return Err(Error::InvalidArgument(format!(
                "coordinate {k}: bounds [{l}, {u}] are inconsistent"
            )));
        }
    }
    Ok(())
}

/// Law of `Lambda xi` under the conditioned Gaussian, truncated to the
/// constraint bounds.
pub fn push_forward(
    cg: &ConditionedGaussian,
    sys: &LinearConstraintSystem,
) -> Result<TruncatedGaussianSpec> {
    if sys.ncols() != cg.dim() {
        return Err(Error::Dimension(format!(
            "constraints over {} knots applied to a {}-dimensional posterior",
            sys.ncols(),
            cg.dim()
        )));
    }
    let lambda = sys.dense_lambda();
    let mean = &lambda * &cg.mean;
    let mut cov = &lambda * &cg.cov * lambda.transpose();
    symmetrize(&mut cov);
    let factor = &lambda * &cg.chol;
    let lower = DVector::from_vec(sys.lower.clone());
    let upper = DVector::from_vec(sys.upper.clone());
    check_bounds(&lower, &upper)?;
    Ok(TruncatedGaussianSpec {
        mean,
        cov,
        lower,
        upper,
        factor,
        lambda: Some(lambda),
    })
}

/// Log density of `y ~ N(0, Phi Gamma Phi^T + tau2 I)`.
pub fn log_marginal_likelihood(
    gram: &DMatrix<f64>,
    phi: &SparseMatrix,
    y: &DVector<f64>,
    tau2: f64,
) -> Result<f64> {
    Ok(log_marginal_likelihood_grad(gram, &[], phi, y, tau2)?.0)
}

/// Log marginal likelihood and its gradient. `dgram` holds the derivatives
/// of `Gamma` with respect to each kernel hyperparameter; the returned
/// gradient lists those derivatives in order, followed by the derivative
/// with respect to `tau2`.
pub fn log_marginal_likelihood_grad(
    gram: &DMatrix<f64>,
    dgram: &[DMatrix<f64>],
    phi: &SparseMatrix,
    y: &DVector<f64>,
    tau2: f64,
) -> Result<(f64, Vec<f64>)> {
    check_inputs(gram, phi, y, tau2)?;
    let n = y.len();
    if n == 0 {
        return Err(Error::NoObservations);
    }
    let m = gram.nrows();
    if tau2 > 0.0 && m < n {
        lml_low_rank(gram, dgram, phi, y, tau2)
    } else {
        lml_direct(gram, dgram, phi, y, tau2)
    }
}

fn lml_direct(
    gram: &DMatrix<f64>,
    dgram: &[DMatrix<f64>],
    phi: &SparseMatrix,
    y: &DVector<f64>,
    tau2: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = y.len() as f64;
    let chol = factor_noisy(noisy_covariance(gram, phi, tau2), tau2)?;
    let alpha = chol.solve(y);
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let value = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n * (2.0 * PI).ln();

    let mut grad = Vec::with_capacity(dgram.len() + 1);
    // W = alpha alpha^T - K^-1; d/dtheta = tr(W Phi dGamma Phi^T) / 2
    // = sum(M .* dGamma) / 2 with M = Phi^T W Phi.
    let mut w = chol.inverse();
    w.ger(1.0, &alpha, &alpha, -1.0);
    if !dgram.is_empty() {
        let mm = phi.tr_mul_dense(&phi.tr_mul_dense(&w).transpose());
        for dg in dgram {
            grad.push(0.5 * mm.dot(dg));
        }
    }
    grad.push(0.5 * w.trace());
    Ok((value, grad))
}

fn lml_low_rank(
    gram: &DMatrix<f64>,
    dgram: &[DMatrix<f64>],
    phi: &SparseMatrix,
    y: &DVector<f64>,
    tau2: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = y.len();
    let m = gram.nrows();
    let c = cholesky_jittered(gram)?.l();
    let b = phi.mul_dense(&c);
    let mut a = b.transpose() * &b;
    for i in 0..m {
        a[(i, i)] += tau2;
    }
    let a_chol = Cholesky::new(a)
        .ok_or_else(|| Error::Factorization("tau2 I + B^T B is not positive definite".into()))?;
    let bty = b.transpose() * y;
    let a_inv_bty = a_chol.solve(&bty);
    let quad = (y.dot(y) - bty.dot(&a_inv_bty)) / tau2;
    let log_det_a = 2.0 * a_chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_det = (n as f64 - m as f64) * tau2.ln() + log_det_a;
    let value = -0.5 * quad - 0.5 * log_det - 0.5 * n as f64 * (2.0 * PI).ln();

    let mut grad = Vec::with_capacity(dgram.len() + 1);
    if !dgram.is_empty() {
        // v = Phi^T K^-1 y and M = Phi^T K^-1 Phi, both m-dimensional.
        let p = phi.gram();
        let s = phi.tr_mul_vec(y);
        let pc = phi.tr_mul_dense(&b);
        let v = (&s - &pc * a_chol.solve(&(c.transpose() * &s))) / tau2;
        // Phi^T Phi C A^-1 C^T Phi^T Phi = X^T X with X = L_A^-1 (P C)^T.
        let x = a_chol
            .l()
            .solve_lower_triangular(&pc.transpose())
            .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
        let mm = (&p - x.tr_mul(&x)) / tau2;
        for dg in dgram {
            let quad_term = v.dot(&(dg * &v));
            let trace_term = mm.component_mul(dg).sum();
            grad.push(0.5 * (quad_term - trace_term));
        }
    }
    let alpha = (y - &b * &a_inv_bty) / tau2;
    let a_inv_trace = a_chol.inverse().trace();
    let k_inv_trace = (n as f64 - m as f64 + tau2 * a_inv_trace) / tau2;
    grad.push(0.5 * (alpha.dot(&alpha) - k_inv_trace));
    Ok((value, grad))
}
