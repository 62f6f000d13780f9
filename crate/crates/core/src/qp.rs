//! Posterior mode under linear inequality constraints.
//!
//! The mode minimizes `(xi - mu)^T Sigma^-1 (xi - mu)` subject to
//! `l <= Lambda xi <= u`. With `Sigma = C C^T` and `xi = mu + C w` this is
//! the Euclidean projection of the origin onto a polyhedron in `w`:
//!
//! ```text
//! minimize |w|^2 / 2   subject to   n_i . w >= b_i
//! ```
//!
//! solved with the Goldfarb-Idnani dual active-set method. Starting from
//! the unconstrained minimizer it adds violated constraints one at a time
//! while keeping the iterate dual feasible, so the first primal-feasible
//! iterate is optimal.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::LinearConstraintSystem;
use crate::error::{Error, Result};
use crate::posterior::{ConditionedGaussian, TruncatedGaussianSpec};

/// Condition estimate of the active-set factor beyond which the dual
/// projected-gradient fallback takes over.
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpResult {
    pub mode: DVector<f64>,
    /// Constraint-system rows tight at the solution, ascending.
    pub active_rows: Vec<usize>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Half-space form `normals * w >= offsets`, with a map from each half-space
/// back to the constraint row that produced it.
#[derive(Debug, Clone)]
pub struct HalfSpaces {
    pub normals: DMatrix<f64>,
    pub offsets: DVector<f64>,
    pub source_rows: Vec<usize>,
}

impl HalfSpaces {
    /// Splits `l <= mean + factor w <= u` into one-sided rows; infinite
    /// bounds are dropped.
    pub fn from_bounds(
        mean: &DVector<f64>,
        factor: &DMatrix<f64>,
        lower: &[f64],
        upper: &[f64],
    ) -> Self {
        let r = factor.ncols();
        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut offsets = Vec::new();
        let mut source_rows = Vec::new();
        for k in 0..factor.nrows() {
            let f: DVector<f64> = factor.row(k).transpose();
            if lower[k].is_finite() {
                rows.push(f.clone());
                offsets.push(lower[k] - mean[k]);
                source_rows.push(k);
            }
            if upper[k].is_finite() {
                rows.push(-f);
                offsets.push(mean[k] - upper[k]);
                source_rows.push(k);
            }
        }
        let mut normals = DMatrix::zeros(rows.len(), r);
        for (i, row) in rows.iter().enumerate() {
            normals.set_row(i, &row.transpose());
        }
        Self {
            normals,
            offsets: DVector::from_vec(offsets),
            source_rows,
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    fn slack(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.normals * w - &self.offsets
    }
}

/// Solution of the whitened projection problem.
#[derive(Debug, Clone)]
pub struct Projection {
    pub w: DVector<f64>,
    /// Multiplier per half-space (zero when inactive).
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

/// KKT residual of `(w, u)` for `min |w|^2/2 s.t. N w >= b`: the largest of
/// the stationarity norm, the primal and dual infeasibilities, and the
/// complementarity products.
pub fn kkt_residual(hs: &HalfSpaces, w: &DVector<f64>, u: &DVector<f64>) -> f64 {
    let stationarity = (w - hs.normals.transpose() * u).amax();
    let slack = hs.slack(w);
    let mut worst = stationarity;
    for i in 0..hs.len() {
        worst = worst
            .max((-slack[i]).max(0.0))
            .max((-u[i]).max(0.0))
            .max((u[i] * slack[i]).abs());
    }
    worst
}

/// Goldfarb-Idnani state with `J = I` initially (the Hessian is the identity).
struct DualActiveSet<'a> {
    hs: &'a HalfSpaces,
    w: DVector<f64>,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    active: Vec<usize>,
    u: Vec<f64>,
    row_norms: Vec<f64>,
}

impl<'a> DualActiveSet<'a> {
    fn new(hs: &'a HalfSpaces) -> Self {
        let n = hs.normals.ncols();
        let row_norms = (0..hs.len())
            .map(|i| hs.normals.row(i).norm().max(f64::MIN_POSITIVE))
            .collect();
        Self {
            hs,
            w: DVector::zeros(n),
            j: DMatrix::identity(n, n),
            r: DMatrix::zeros(n, n),
            active: Vec::new(),
            u: Vec::new(),
            row_norms,
        }
    }

    fn dim(&self) -> usize {
        self.w.len()
    }

    fn slack(&self, i: usize) -> f64 {
        self.hs.normals.row(i).transpose().dot(&self.w) - self.hs.offsets[i]
    }

    /// Most violated inactive half-space (scaled by its norm), lowest index
    /// on ties. `preferred` rows are taken first when violated.
    fn pick(&self, tol: f64, preferred: &mut Vec<usize>) -> Option<usize> {
        while let Some(&p) = preferred.first() {
            preferred.remove(0);
            if !self.active.contains(&p) && self.slack(p) < -tol * self.row_norms[p] {
                return Some(p);
            }
        }
        let slack = self.hs.slack(&self.w);
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.hs.len() {
            let v = slack[i] / self.row_norms[i];
            if v < -tol && best.map_or(true, |(_, b)| v < b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| i)
    }

    fn condition_estimate(&self) -> f64 {
        let q = self.active.len();
        if q == 0 {
            return 1.0;
        }
        let diag: Vec<f64> = (0..q).map(|i| self.r[(i, i)].abs()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    /// Back substitution with the leading `q x q` block of `R`.
    fn solve_r(&self, d: &DVector<f64>) -> Vec<f64> {
        let q = self.active.len();
        let mut x = vec![0.0; q];
        for i in (0..q).rev() {
            let mut s = d[i];
            for k in i + 1..q {
                s -= self.r[(i, k)] * x[k];
            }
            x[i] = s / self.r[(i, i)];
        }
        x
    }

    fn rotate_j(&mut self, a: usize, b: usize, c: f64, s: f64) {
        for row in 0..self.j.nrows() {
            let (x, y) = (self.j[(row, a)], self.j[(row, b)]);
            self.j[(row, a)] = c * x + s * y;
            self.j[(row, b)] = -s * x + c * y;
        }
    }

    fn add(&mut self, p: usize, mut d: DVector<f64>, mult: f64) {
        let q = self.active.len();
        let n = self.dim();
        for i in (q + 1..n).rev() {
            let (a, b) = (d[i - 1], d[i]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            d[i - 1] = h;
            d[i] = 0.0;
            self.rotate_j(i - 1, i, c, s);
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        self.active.push(p);
        self.u.push(mult);
    }

    fn drop(&mut self, l: usize) {
        let q = self.active.len();
        self.active.remove(l);
        self.u.remove(l);
        for col in l..q - 1 {
            for row in 0..q {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..q {
            self.r[(row, q - 1)] = 0.0;
        }
        for k in l..q - 1 {
            let (a, b) = (self.r[(k, k)], self.r[(k + 1, k)]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for col in k..q - 1 {
                let (x, y) = (self.r[(k, col)], self.r[(k + 1, col)]);
                self.r[(k, col)] = c * x + s * y;
                self.r[(k + 1, col)] = -s * x + c * y;
            }
            self.r[(k + 1, k)] = 0.0;
            self.rotate_j(k, k + 1, c, s);
        }
    }

    fn run(&mut self, warm: &[usize], max_iter: usize) -> Result<Result<usize>> {
        let tol = 1e-12 * (1.0 + self.hs.offsets.amax());
        let mut preferred: Vec<usize> = warm.iter().copied().filter(|i| *i < self.hs.len()).collect();
        let mut iterations = 0usize;
        while let Some(p) = self.pick(tol, &mut preferred) {
            let np: DVector<f64> = self.hs.normals.row(p).transpose();
            let mut u_p = 0.0;
            loop {
                iterations += 1;
                if iterations > max_iter {
                    return Err(Error::NoConvergence(format!(
                        "dual active set stopped after {max_iter} iterations (best iterate has {} active rows)",
                        self.active.len()
                    )));
                }
                if self.condition_estimate() > MAX_CONDITION {
                    return Ok(Err(Error::Singular("active set is ill conditioned".into())));
                }
                let q = self.active.len();
                let n = self.dim();
                let d = self.j.transpose() * &np;
                let mut z = DVector::zeros(n);
                for k in q..n {
                    z.axpy(d[k], &self.j.column(k), 1.0);
                }
                let rdir = self.solve_r(&d);

                let mut partial: Option<(usize, f64)> = None;
                for (k, rk) in rdir.iter().enumerate() {
                    if *rk > 0.0 {
                        let t = self.u[k] / rk;
                        if partial.map_or(true, |(_, b)| t < b) {
                            partial = Some((k, t));
                        }
                    }
                }
                let zn = z.dot(&np);
                let full = if zn > 1e-14 * np.norm_squared() {
                    Some(-self.slack(p) / zn)
                } else {
                    None
                };
                match (full, partial) {
                    (None, None) => {
                        return Err(Error::Infeasible(
                            "constraint set is empty (dual problem unbounded)".into(),
                        ))
                    }
                    (None, Some((k, t))) => {
                        for (uk, rk) in self.u.iter_mut().zip(rdir.iter()) {
                            *uk -= t * rk;
                        }
                        u_p += t;
                        self.drop(k);
                    }
                    (Some(t2), partial) => {
                        let (t, drop_k) = match partial {
                            Some((k, t1)) if t1 < t2 => (t1, Some(k)),
                            _ => (t2, None),
                        };
                        self.w.axpy(t, &z, 1.0);
                        for (uk, rk) in self.u.iter_mut().zip(rdir.iter()) {
                            *uk -= t * rk;
                        }
                        u_p += t;
                        match drop_k {
                            Some(k) => self.drop(k),
                            None => {
                                let d = self.j.transpose() * &np;
                                self.add(p, d, u_p);
                                break;
                            }
                        }
                    }
                }
            }
        }
        Ok(Ok(iterations))
    }
}

/// Dual projected gradient (FISTA) on `max_{u >= 0} b.u - |N^T u|^2 / 2`.
fn dual_projected_gradient(hs: &HalfSpaces, max_iter: usize) -> (DVector<f64>, DVector<f64>, usize) {
    let p = hs.len();
    let nt = hs.normals.transpose();
    let lip = {
        let g = &hs.normals * &nt;
        g.symmetric_eigen().eigenvalues.max().max(1e-300)
    };
    let step = 1.0 / lip;
    let mut u = DVector::<f64>::zeros(p);
    let mut y = u.clone();
    let mut t = 1.0f64;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let w = &nt * &y;
        let grad = &hs.offsets - &hs.normals * &w;
        let next = (&y + grad * step).map(|v| v.max(0.0));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &u) * ((t - 1.0) / t_next);
        let moved = (&next - &u).amax();
        u = next;
        t = t_next;
        if moved < 1e-15 * (1.0 + u.amax()) {
            break;
        }
    }
    let w = &nt * &u;
    (w, u, it)
}

/// Projects the origin onto `{w : N w >= b}`. `warm` lists half-spaces to
/// try first, typically the active set of a previous solve.
pub fn project_origin(hs: &HalfSpaces, warm: &[usize]) -> Result<Projection> {
    let n = hs.normals.ncols();
    let max_iter = 50 * (hs.len() + n) + 100;
    let mut gi = DualActiveSet::new(hs);
    match gi.run(warm, max_iter)? {
        Ok(iterations) => {
            let mut u = DVector::zeros(hs.len());
            for (k, &i) in gi.active.iter().enumerate() {
                u[i] = gi.u[k];
            }
            let mut active = gi.active.clone();
            active.sort_unstable();
            let kkt = kkt_residual(hs, &gi.w, &u);
            Ok(Projection {
                w: gi.w,
                multipliers: u,
                active,
                iterations,
                kkt_residual: kkt,
            })
        }
        Err(_) => {
            log::warn!("active-set factor degraded; switching to dual projected gradient");
            let (w, u, iterations) = dual_projected_gradient(hs, 200_000);
            let slack = hs.slack(&w);
            let active = (0..hs.len())
                .filter(|i| u[*i] > 0.0 || slack[*i].abs() < 1e-10)
                .collect();
            let kkt = kkt_residual(hs, &w, &u);
            Ok(Projection {
                w,
                multipliers: u,
                active,
                iterations,
                kkt_residual: kkt,
            })
        }
    }
}

/// Mode of the conditioned Gaussian restricted to the constraint set.
pub fn solve_map(cg: &ConditionedGaussian, sys: &LinearConstraintSystem) -> Result<QpResult> {
    solve_map_warm(cg, sys, &[])
}

/// As [`solve_map`], trying the given constraint rows first.
pub fn solve_map_warm(
    cg: &ConditionedGaussian,
    sys: &LinearConstraintSystem,
    warm_rows: &[usize],
) -> Result<QpResult> {
    if sys.ncols() != cg.dim() {
        return Err(Error::Dimension(format!(
            "constraints over {} knots for a {}-dimensional posterior",
            sys.ncols(),
            cg.dim()
        )));
    }
    let lambda = sys.dense_lambda();
    let factor = &lambda * &cg.chol;
    let mean = &lambda * &cg.mean;
    let hs = HalfSpaces::from_bounds(&mean, &factor, &sys.lower, &sys.upper);
    let warm: Vec<usize> = (0..hs.len())
        .filter(|i| warm_rows.contains(&hs.source_rows[*i]))
        .collect();
    let proj = project_origin(&hs, &warm)?;
    let mode = &cg.mean + &cg.chol * &proj.w;
    let mut active_rows: Vec<usize> = proj.active.iter().map(|i| hs.source_rows[*i]).collect();
    active_rows.dedup();
    active_rows.sort_unstable();
    active_rows.dedup();
    Ok(QpResult {
        mode,
        active_rows,
        kkt_residual: proj.kkt_residual,
        iterations: proj.iterations,
    })
}

/// Mode of a truncated Gaussian in its own coordinates.
pub fn spec_mode(spec: &TruncatedGaussianSpec) -> Result<DVector<f64>> {
    let hs = HalfSpaces::from_bounds(
        &spec.mean,
        &spec.factor,
        spec.lower.as_slice(),
        spec.upper.as_slice(),
    );
    let proj = project_origin(&hs, &[])?;
    let mut z = &spec.mean + &spec.factor * &proj.w;
    // Snap roundoff so the mode passes exact feasibility checks.
    for k in 0..z.len() {
        z[k] = z[k].clamp(spec.lower[k], spec.upper[k]);
    }
    Ok(z)
}
