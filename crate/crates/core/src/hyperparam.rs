//! Maximum-likelihood estimation of kernel hyperparameters and noise.
//!
//! Parameters are optimized in log space with box bounds by a projected
//! BFGS method, from a Latin-hypercube set of starting points evaluated in
//! parallel.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{KnotGrid, SparseMatrix};
use crate::error::{Error, Result};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::posterior::log_marginal_likelihood_grad;

/// Lower bound on a free noise variance, relative to the output scale.
pub const NOISE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum NoiseModel {
    /// Estimated by maximum likelihood.
    #[default]
    Free,
    /// Fixed noise variance (0 gives noise-free interpolation).
    Fixed(f64),
    /// Noise variance equal to this multiple of the kernel variance.
    Relative(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub fixed_variance: Option<f64>,
    /// Per-dimension fixed length-scales; empty means all free.
    pub fixed_lengthscales: Vec<Option<f64>>,
    pub noise: NoiseModel,
    pub n_starts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            fixed_variance: None,
            fixed_lengthscales: Vec::new(),
            noise: NoiseModel::Free,
            n_starts: 10,
            max_iter: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlFit {
    pub kernel: KernelSpec,
    pub tau2: f64,
    pub log_likelihood: f64,
    /// Log-likelihood at each starting point (`-inf` where it failed).
    pub start_log_likelihoods: Vec<f64>,
    pub best_start: usize,
}

/// Log-likelihood of the knot-approximated model as a function of the
/// log-parameters `[log sigma2, log l_1.., log tau2]` (the last entry only
/// for free noise).
pub struct MlProblem {
    family: KernelFamily,
    /// Knot coordinates per dimension.
    axes: Vec<Vec<f64>>,
    phi: SparseMatrix,
    y: DVector<f64>,
    noise: NoiseModel,
    dim: usize,
    free: Vec<usize>,
    template: Vec<f64>,
    /// Natural-scale values of fixed parameters, so they round-trip exactly.
    fixed: Vec<Option<f64>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    start_lower: Vec<f64>,
    start_upper: Vec<f64>,
}

fn output_scale(y: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let mean = y.mean();
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var > 0.0 {
        var
    } else {
        (y.norm_squared() / n).max(1e-12)
    }
}

impl MlProblem {
    pub fn new(
        family: KernelFamily,
        grid: &KnotGrid,
        inputs: &[Vec<f64>],
        y: &[f64],
        options: &FitOptions,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::NoObservations);
        }
        if n < 2 {
            return Err(Error::InvalidArgument(
                "maximum likelihood needs at least two observations".into(),
            ));
        }
        let d = grid.ndim();
        if !options.fixed_lengthscales.is_empty() && options.fixed_lengthscales.len() != d {
            return Err(Error::Dimension(format!(
                "{} fixed length-scales for {d} input dimensions",
                options.fixed_lengthscales.len()
            )));
        }
        let phi = grid.design_matrix(inputs)?;
        let y = DVector::from_column_slice(y);
        let scale = output_scale(&y);

        let mut template = vec![0.0; d + 2];
        let mut fixed = vec![None; d + 2];
        let mut free = Vec::new();
        let mut lower = vec![0.0; d + 2];
        let mut upper = vec![0.0; d + 2];
        let mut start_lower = vec![0.0; d + 2];
        let mut start_upper = vec![0.0; d + 2];

        match options.fixed_variance {
            Some(v) if !(v > 0.0 && v.is_finite()) => {
                return Err(Error::InvalidArgument(format!("fixed variance must be > 0, got {v}")))
            }
            Some(v) => {
                template[0] = v.ln();
                fixed[0] = Some(v);
            }
            None => free.push(0),
        }
        lower[0] = (scale * 1e-6).ln();
        upper[0] = (scale * 1e4).ln();
        start_lower[0] = (scale * 1e-2).ln();
        start_upper[0] = (scale * 1e1).ln();

        for k in 0..d {
            let i = 1 + k;
            match options.fixed_lengthscales.get(k).copied().flatten() {
                Some(l) if !(l > 0.0 && l.is_finite()) => {
                    return Err(Error::InvalidArgument(format!(
                        "fixed length-scale must be > 0, got {l}"
                    )))
                }
                Some(l) => {
                    template[i] = l.ln();
                    fixed[i] = Some(l);
                }
                None => free.push(i),
            }
            lower[i] = 1e-3f64.ln();
            upper[i] = 1e2f64.ln();
            start_lower[i] = 1e-2f64.ln();
            start_upper[i] = 1e1f64.ln();
        }

        let t = d + 1;
        match options.noise {
            NoiseModel::Free => free.push(t),
            NoiseModel::Fixed(v) if !(v >= 0.0 && v.is_finite()) => {
                return Err(Error::InvalidArgument(format!("fixed noise must be >= 0, got {v}")))
            }
            NoiseModel::Relative(r) if !(r >= 0.0 && r.is_finite()) => {
                return Err(Error::InvalidArgument(format!("relative noise must be >= 0, got {r}")))
            }
            _ => {}
        }
        lower[t] = (scale * NOISE_FLOOR).ln();
        upper[t] = (scale * 10.0).ln();
        start_lower[t] = (scale * 1e-4).ln();
        start_upper[t] = (scale * 1e-1).ln();

        Ok(Self {
            family,
            axes: (0..grid.ndim()).map(|k| grid.knots(k)).collect(),
            phi,
            y,
            noise: options.noise,
            dim: d,
            free,
            template,
            fixed,
            lower,
            upper,
            start_lower,
            start_upper,
        })
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut full = self.template.clone();
        for (v, &i) in x.iter().zip(&self.free) {
            full[i] = *v;
        }
        full
    }

    /// Kernel and noise variance for free log-parameters `x`.
    pub fn params(&self, x: &[f64]) -> Result<(KernelSpec, f64)> {
        let full = self.expand(x);
        let natural = |i: usize| self.fixed[i].unwrap_or_else(|| full[i].exp());
        let variance = natural(0);
        let ls = (1..=self.dim).map(natural).collect();
        let kernel = KernelSpec::new(self.family, variance, ls)?;
        let tau2 = match self.noise {
            NoiseModel::Free => full[self.dim + 1].exp(),
            NoiseModel::Fixed(v) => v,
            NoiseModel::Relative(r) => r * variance,
        };
        Ok((kernel, tau2))
    }

    /// Free log-parameters for a kernel and noise variance.
    pub fn encode(&self, kernel: &KernelSpec, tau2: f64) -> Vec<f64> {
        let mut full = vec![kernel.variance.ln()];
        full.extend(kernel.lengthscales.iter().map(|l| l.ln()));
        full.push(if tau2 > 0.0 { tau2.ln() } else { f64::NEG_INFINITY });
        self.free.iter().map(|&i| full[i]).collect()
    }

    /// Log-likelihood and its gradient with respect to the free log-parameters.
    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (kernel, tau2) = self.params(x)?;
        let (gram, dgram) = kernel.tensor_gram_with_grads(&self.axes)?;
        let (value, g) = log_marginal_likelihood_grad(&gram, &dgram, &self.phi, &self.y, tau2)?;
        if !value.is_finite() {
            return Err(Error::Factorization("non-finite log-likelihood".into()));
        }
        let d = self.dim;
        let dtau = g[d + 1];
        let mut full = vec![0.0; d + 2];
        full[0] = kernel.variance * g[0];
        if let NoiseModel::Relative(r) = self.noise {
            full[0] += kernel.variance * r * dtau;
        }
        for k in 0..d {
            full[1 + k] = kernel.lengthscales[k] * g[1 + k];
        }
        full[d + 1] = tau2 * dtau;
        Ok((value, self.free.iter().map(|&i| full[i]).collect()))
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.free.iter().map(|&i| self.lower[i]).collect(),
            self.free.iter().map(|&i| self.upper[i]).collect(),
        )
    }

    /// Latin-hypercube starting points over the start ranges.
    pub fn starts(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = self.free.len();
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(k);
        for &i in &self.free {
            let mut strata: Vec<usize> = (0..count).collect();
            strata.shuffle(&mut rng);
            let (lo, hi) = (self.start_lower[i], self.start_upper[i]);
            columns.push(
                strata
                    .iter()
                    .map(|s| {
                        let u: f64 = rng.random();
                        lo + (hi - lo) * (*s as f64 + u) / count as f64
                    })
                    .collect(),
            );
        }
        (0..count)
            .map(|s| columns.iter().map(|c| c[s]).collect())
            .collect()
    }
}

struct Minimized {
    x: Vec<f64>,
    f: f64,
    iterations: usize,
    evaluations: usize,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Projected BFGS minimizing `f` over a box.
fn minimize_box<F>(f: F, x0: &[f64], lo: &[f64], hi: &[f64], max_iter: usize) -> Result<Minimized>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut fx, mut g) = f(&x)?;
    let mut evaluations = 1;
    if n == 0 {
        return Ok(Minimized { x, f: fx, iterations: 0, evaluations });
    }
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut stalls = 0;
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        // Variables pinned at a bound with the gradient pushing outward.
        let pinned: Vec<bool> = (0..n)
            .map(|i| (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0))
            .collect();
        let pg = (0..n)
            .map(|i| if pinned[i] { 0.0 } else { g[i].abs() })
            .fold(0.0, f64::max);
        if pg < 1e-7 {
            break;
        }
        let gv = DVector::from_iterator(n, (0..n).map(|i| if pinned[i] { 0.0 } else { g[i] }));
        let mut d = -(&h * &gv);
        for i in 0..n {
            if pinned[i] {
                d[i] = 0.0;
            }
        }
        if d.dot(&gv) >= 0.0 {
            h = DMatrix::identity(n, n);
            d = -gv.clone();
        }
        // Cap the step at a factor e^3 change in any parameter.
        let dmax = d.amax();
        if dmax > 3.0 {
            d *= 3.0 / dmax;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial: Vec<f64> = (0..n).map(|i| x[i] + step * d[i]).collect();
            project(&mut trial, lo, hi);
            let decrease: f64 = (0..n).map(|i| g[i] * (trial[i] - x[i])).sum();
            evaluations += 1;
            if let Ok((ft, gt)) = f(&trial) {
                if ft <= fx + 1e-4 * decrease.min(0.0) {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fxn, gn)) = accepted else { break };
        let s = DVector::from_iterator(n, (0..n).map(|i| xn[i] - x[i]));
        let yv = DVector::from_iterator(n, (0..n).map(|i| gn[i] - g[i]));
        let sy = s.dot(&yv);
        if sy > 1e-10 * s.norm() * yv.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let a = &i - &s * yv.transpose() * rho;
            let b = &i - &yv * s.transpose() * rho;
            h = &a * &h * &b + &s * s.transpose() * rho;
        }
        let improvement = fx - fxn;
        x = xn;
        fx = fxn;
        g = gn;
        if improvement < 1e-11 * (1.0 + fx.abs()) {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    Ok(Minimized { x, f: fx, iterations, evaluations })
}

/// Maximum-likelihood fit of the kernel hyperparameters and noise variance
/// on inputs already mapped into the unit cube.
pub fn fit_ml(
    family: KernelFamily,
    grid: &KnotGrid,
    inputs: &[Vec<f64>],
    y: &[f64],
    options: &FitOptions,
) -> Result<MlFit> {
    let problem = MlProblem::new(family, grid, inputs, y, options)?;
    let n_starts = if problem.n_free() == 0 { 1 } else { options.n_starts.max(1) };
    let starts = problem.starts(n_starts, options.seed);
    let (lo, hi) = problem.bounds();
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (v, g) = problem.value_and_gradient(x)?;
        Ok((-v, g.into_iter().map(|v| -v).collect()))
    };

    let results: Vec<(f64, Option<Minimized>)> = starts
        .par_iter()
        .map(|x0| {
            let mut x = x0.clone();
            project(&mut x, &lo, &hi);
            let start_ll = objective(&x).map(|(f, _)| -f).unwrap_or(f64::NEG_INFINITY);
            if !start_ll.is_finite() {
                return (start_ll, None);
            }
            let result = minimize_box(objective, &x, &lo, &hi, options.max_iter).ok();
            if let Some(r) = &result {
                log::debug!(
                    "ml start: {} iterations, {} evaluations, log-likelihood {:.6}",
                    r.iterations,
                    r.evaluations,
                    -r.f
                );
            }
            (start_ll, result)
        })
        .collect();

    let mut best: Option<(usize, &Minimized)> = None;
    for (i, (_, r)) in results.iter().enumerate() {
        if let Some(r) = r {
            if best.map_or(true, |(_, b)| r.f < b.f) {
                best = Some((i, r));
            }
        }
    }
    let Some((best_start, best)) = best else {
        return Err(Error::Factorization(
            "every maximum-likelihood start failed to factorize".into(),
        ));
    };
    let (kernel, tau2) = problem.params(&best.x)?;
    log::info!(
        "ml fit: start {best_start} of {n_starts}, log-likelihood {:.6}",
        -best.f
    );
    Ok(MlFit {
        kernel,
        tau2,
        log_likelihood: -best.f,
        start_log_likelihoods: results.iter().map(|(s, _)| *s).collect(),
        best_start,
    })
}
