//! End-to-end constrained emulator: fit hyperparameters, condition the knot
//! values on the data, find the constrained mode, sample the truncated
//! posterior in constraint coordinates, recover knot values and predict.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{KnotGrid, Normalization};
use crate::constraints::{ComposeForm, ConstraintSpec, LinearConstraintSystem};
use crate::diagnostics::quantile_sorted;
use crate::error::{Error, Result};
use crate::hyperparam::{fit_ml, FitOptions};
use crate::io::Dataset;
use crate::kernel::{KernelFamily, KernelSpec};
use crate::linalg::{null_space_rows, RowBasisSolver};
use crate::posterior::{
    condition, condition_woodbury, push_forward, ConditionedGaussian, TruncatedGaussianSpec,
};
use crate::qp::solve_map;
use crate::tmvn::{
    sample_gibbs, sample_hmc, sample_rsm, SampleChain, SamplerKind,
    DEFAULT_BURN_IN, DEFAULT_SAMPLES, DEFAULT_THINNING,
};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_KNOT_BUDGET: usize = 4096;
pub const DEFAULT_KNOTS_1D: usize = 25;
/// Recovered knot values must reproduce every constraint coordinate this well.
pub const RECOVERY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConditioningPath {
    /// Low-rank path when `m < n / 2` and the noise is positive.
    #[default]
    Auto,
    Direct,
    LowRank,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmulatorOptions {
    pub family: KernelFamily,
    pub knots: Vec<usize>,
    pub constraints: Vec<ConstraintSpec>,
    pub compose: ComposeForm,
    pub fit: FitOptions,
    /// Input box mapped onto the unit cube; the data bounding box if unset.
    pub domain: Option<Normalization>,
    pub knot_budget: usize,
    pub path: ConditioningPath,
}

impl Default for EmulatorOptions {
    fn default() -> Self {
        Self {
            family: KernelFamily::Matern52,
            knots: vec![DEFAULT_KNOTS_1D],
            constraints: Vec::new(),
            compose: ComposeForm::Stacked,
            fit: FitOptions::default(),
            domain: None,
            knot_budget: DEFAULT_KNOT_BUDGET,
            path: ConditioningPath::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulatorModel {
    pub format_version: u32,
    pub kernel: KernelSpec,
    pub tau2: f64,
    pub log_likelihood: f64,
    pub grid: KnotGrid,
    pub constraint_specs: Vec<ConstraintSpec>,
    pub compose: ComposeForm,
    pub constraints: Option<LinearConstraintSystem>,
    pub normalization: Normalization,
    pub conditioned: ConditionedGaussian,
    pub mode: DVector<f64>,
    pub mode_active_rows: Vec<usize>,
    pub fitted_from: String,
    pub n_observations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOptions {
    pub sampler: SamplerKind,
    pub count: usize,
    pub burn_in: usize,
    /// Used by Gibbs only.
    pub thinning: usize,
    pub seed: u64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            sampler: SamplerKind::Rsm,
            count: DEFAULT_SAMPLES,
            burn_in: DEFAULT_BURN_IN,
            thinning: DEFAULT_THINNING,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub points: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub mode: Vec<f64>,
    pub quantile_levels: Vec<f64>,
    /// One vector per requested level.
    pub quantiles: Vec<Vec<f64>>,
}

/// Observation indices outside any bound constraint.
pub fn bound_violations(dataset: &Dataset, specs: &[ConstraintSpec]) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, y) in dataset.outputs.iter().enumerate() {
        let bad = specs.iter().any(|s| match s {
            ConstraintSpec::Bounds { lower, upper } => y < lower || y > upper,
            _ => false,
        });
        if bad {
            out.push(i);
        }
    }
    out
}

impl EmulatorModel {
    /// Fits the emulator to a dataset.
    pub fn fit(dataset: &Dataset, options: &EmulatorOptions) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::NoObservations);
        }
        let d = dataset.dim();
        if options.knots.len() != d {
            return Err(Error::Dimension(format!(
                "{} knot counts for {d} input dimensions",
                options.knots.len()
            )));
        }
        let total: usize = options.knots.iter().product();
        if total > options.knot_budget {
            return Err(Error::InvalidArgument(format!(
                "grid {:?} has {total} knots, above the budget of {}",
                options.knots, options.knot_budget
            )));
        }
        let grid = KnotGrid::new(options.knots.clone())?;
        let normalization = match &options.domain {
            Some(n) if n.dim() != d => {
                return Err(Error::Dimension(format!(
                    "domain has dimension {} but data has {d}",
                    n.dim()
                )))
            }
            Some(n) => n.clone(),
            None => Normalization::from_data(&dataset.inputs)?,
        };
        let unit: Vec<Vec<f64>> = dataset
            .inputs
            .iter()
            .map(|x| normalization.apply(x))
            .collect::<Result<_>>()?;
        let constraints = ConstraintSpec::build_all(&options.constraints, &grid, options.compose)?;

        let violations = bound_violations(dataset, &options.constraints);
        if !violations.is_empty() {
            log::warn!(
                "{} observations lie outside the bounds (rows {:?}); the noise term absorbs them",
                violations.len(),
                &violations[..violations.len().min(20)]
            );
        }

        let ml = fit_ml(options.family, &grid, &unit, &dataset.outputs, &options.fit)?;
        let phi = grid.design_matrix(&unit)?;
        let gram = ml.kernel.gram(&grid.knot_points())?;
        let y = DVector::from_column_slice(&dataset.outputs);
        let m = grid.total_knots();
        let n = dataset.len();
        let low_rank = match options.path {
            ConditioningPath::Auto => ml.tau2 > 0.0 && 2 * m < n,
            ConditioningPath::Direct => false,
            ConditioningPath::LowRank => true,
        };
        let conditioned = if low_rank {
            condition_woodbury(&gram, &phi, &y, ml.tau2)?
        } else {
            condition(&gram, &phi, &y, ml.tau2)?
        };
        let (mode, mode_active_rows) = match &constraints {
            Some(sys) => {
                let res = solve_map(&conditioned, sys)?;
                (res.mode, res.active_rows)
            }
            None => (conditioned.mean.clone(), Vec::new()),
        };
        Ok(Self {
            format_version: FORMAT_VERSION,
            kernel: ml.kernel,
            tau2: ml.tau2,
            log_likelihood: ml.log_likelihood,
            grid,
            constraint_specs: options.constraints.clone(),
            compose: options.compose,
            constraints,
            normalization,
            conditioned,
            mode,
            mode_active_rows,
            fitted_from: dataset.fingerprint(),
            n_observations: n,
        })
    }

    /// As [`EmulatorModel::fit`], for inputs of dimension two or more.
    pub fn fit_tensor(dataset: &Dataset, options: &EmulatorOptions) -> Result<Self> {
        if dataset.dim() < 2 {
            return Err(Error::InvalidArgument(
                "tensorized fits need at least two input dimensions".into(),
            ));
        }
        Self::fit(dataset, options)
    }

    pub fn dim(&self) -> usize {
        self.grid.ndim()
    }

    /// Truncated Gaussian of the constraint coordinates `Lambda xi`; the
    /// identity map with infinite bounds when there are no constraints.
    pub fn truncated_spec(&self) -> Result<TruncatedGaussianSpec> {
        match &self.constraints {
            Some(sys) => push_forward(&self.conditioned, sys),
            None => {
                let m = self.conditioned.dim();
                Ok(TruncatedGaussianSpec {
                    mean: self.conditioned.mean.clone(),
                    cov: self.conditioned.cov.clone(),
                    lower: DVector::from_element(m, f64::NEG_INFINITY),
                    upper: DVector::from_element(m, f64::INFINITY),
                    factor: self.conditioned.chol.clone(),
                    lambda: Some(DMatrix::identity(m, m)),
                })
            }
        }
    }

    fn lambda(&self) -> DMatrix<f64> {
        match &self.constraints {
            Some(sys) => sys.dense_lambda(),
            None => DMatrix::identity(self.conditioned.dim(), self.conditioned.dim()),
        }
    }

    /// The truncated spec with unbounded null-space rows appended when
    /// `Lambda` lacks full column rank (for example monotonicity alone), so
    /// that knot values can be recovered from every draw.
    fn sampling_spec(&self) -> Result<(DMatrix<f64>, TruncatedGaussianSpec)> {
        let lambda = self.lambda();
        let spec = self.truncated_spec()?;
        let null = null_space_rows(&lambda);
        if null.nrows() == 0 {
            return Ok((lambda, spec));
        }
        let (q, k, m) = (lambda.nrows(), null.nrows(), lambda.ncols());
        let mut full = DMatrix::zeros(q + k, m);
        full.rows_mut(0, q).copy_from(&lambda);
        full.rows_mut(q, k).copy_from(&null);
        let factor = &full * &self.conditioned.chol;
        let extend = |v: &DVector<f64>, fill: f64| {
            DVector::from_iterator(q + k, v.iter().copied().chain(std::iter::repeat_n(fill, k)))
        };
        let spec = TruncatedGaussianSpec {
            mean: &full * &self.conditioned.mean,
            cov: &factor * factor.transpose(),
            lower: extend(&spec.lower, f64::NEG_INFINITY),
            upper: extend(&spec.upper, f64::INFINITY),
            factor,
            lambda: Some(full.clone()),
        };
        Ok((full, spec))
    }

    /// Draws from the constrained posterior and recovers knot values by
    /// solving `Lambda xi = z`. Reported draws are the constraint
    /// coordinates `Lambda xi`.
    pub fn sample_paths(&self, options: &SampleOptions) -> Result<SampleChain> {
        let q = self.lambda().nrows();
        let (lambda, spec) = self.sampling_spec()?;
        let solver = RowBasisSolver::new(&lambda)?;
        let start = &lambda * &self.mode;
        let start = clamp_into(&spec, start);
        let mut chain = match options.sampler {
            SamplerKind::Rsm => sample_rsm(&spec, &start, options.count, options.seed)?,
            SamplerKind::Hmc => {
                sample_hmc(&spec, &start, options.count, options.burn_in, options.seed)?
            }
            SamplerKind::Gibbs => sample_gibbs(
                &spec,
                &start,
                options.count,
                options.burn_in,
                options.thinning,
                options.seed,
            )?,
            SamplerKind::NaiveRejection => crate::tmvn::sample_naive_rejection(
                &spec,
                options.count,
                options.seed,
                100 * options.count as u64 + 1_000_000,
            )?,
        };
        let scale = 1.0 + spec.mean.amax();
        let mut xi = Vec::with_capacity(chain.len());
        for z in &chain.draws {
            let (x, resid) = solver.solve(z)?;
            if resid > RECOVERY_TOL * scale {
                return Err(Error::Sampler(format!(
                    "knot recovery residual {resid:.3e} exceeds {RECOVERY_TOL:e}"
                )));
            }
            xi.push(x);
        }
        chain.xi = Some(xi);
        if lambda.nrows() > q {
            for z in chain.draws.iter_mut() {
                *z = z.rows(0, q).into_owned();
            }
        }
        Ok(chain)
    }

    /// Basis rows of raw-unit points.
    fn rows(&self, points: &[Vec<f64>]) -> Result<Vec<crate::basis::SparseRow>> {
        points
            .iter()
            .map(|p| {
                let u = self.normalization.apply(p)?;
                self.grid.basis_row(&u)
            })
            .collect()
    }

    /// Unconstrained posterior mean at raw-unit points.
    pub fn posterior_mean(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mu = self.conditioned.mean.as_slice();
        Ok(self.rows(points)?.iter().map(|r| r.dot(mu)).collect())
    }

    /// Constrained mode curve at raw-unit points.
    pub fn mode_curve(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mode = self.mode.as_slice();
        Ok(self.rows(points)?.iter().map(|r| r.dot(mode)).collect())
    }

    /// Path values: one vector per draw, one entry per point.
    pub fn evaluate_paths(&self, chain: &SampleChain, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let xi = chain
            .xi
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("chain carries no knot values".into()))?;
        let rows = self.rows(points)?;
        Ok(xi
            .iter()
            .map(|x| rows.iter().map(|r| r.dot(x.as_slice())).collect())
            .collect())
    }

    /// Sample mean, mode curve and empirical quantiles from a chain.
    pub fn predict_with_chain(
        &self,
        chain: &SampleChain,
        points: &[Vec<f64>],
        levels: &[f64],
    ) -> Result<Prediction> {
        for l in levels {
            if !(0.0..=1.0).contains(l) {
                return Err(Error::InvalidArgument(format!("quantile level {l} outside [0, 1]")));
            }
        }
        let xi = chain
            .xi
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("chain carries no knot values".into()))?;
        if xi.is_empty() {
            return Err(Error::InvalidArgument("chain is empty".into()));
        }
        let rows = self.rows(points)?;
        let mut mean = Vec::with_capacity(points.len());
        let mut quantiles = vec![Vec::with_capacity(points.len()); levels.len()];
        let mut values = vec![0.0; xi.len()];
        for r in &rows {
            for (v, x) in values.iter_mut().zip(xi) {
                *v = r.dot(x.as_slice());
            }
            mean.push(values.iter().sum::<f64>() / values.len() as f64);
            values.sort_by(|a, b| a.total_cmp(b));
            for (q, l) in quantiles.iter_mut().zip(levels) {
                q.push(quantile_sorted(&values, *l));
            }
        }
        let mode = rows.iter().map(|r| r.dot(self.mode.as_slice())).collect();
        Ok(Prediction {
            points: points.to_vec(),
            mean,
            mode,
            quantile_levels: levels.to_vec(),
            quantiles,
        })
    }

    pub fn predict(
        &self,
        points: &[Vec<f64>],
        levels: &[f64],
        options: &SampleOptions,
    ) -> Result<Prediction> {
        let chain = self.sample_paths(options)?;
        self.predict_with_chain(&chain, points, levels)
    }

    /// Regular grid over the model's input domain, `resolution` points per
    /// dimension, last dimension fastest.
    pub fn domain_grid(&self, resolution: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        let res = resolution.max(2);
        let total = res.pow(d as u32);
        (0..total)
            .map(|mut flat| {
                let mut u = vec![0.0; d];
                for k in (0..d).rev() {
                    u[k] = (flat % res) as f64 / (res - 1) as f64;
                    flat /= res;
                }
                self.normalization.invert(&u)
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidArgument(format!("cannot serialize model: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: "model file has no format_version".into(),
            })?;
        if found != FORMAT_VERSION as u64 {
            return Err(Error::Version {
                found: found.min(u32::MAX as u64) as u32,
                expected: FORMAT_VERSION,
            });
        }
        let model: EmulatorModel = serde_json::from_value(value).map_err(|e| Error::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        model.validate()?;
        Ok(model)
    }

    /// Structural consistency checks for a loaded model.
    pub fn validate(&self) -> Result<()> {
        let m = self.grid.total_knots();
        self.kernel.validate()?;
        if self.kernel.dim() != self.grid.ndim() || self.normalization.dim() != self.grid.ndim() {
            return Err(Error::Dimension("kernel, grid and normalization disagree on dimension".into()));
        }
        let cg = &self.conditioned;
        if cg.mean.len() != m || cg.cov.shape() != (m, m) || cg.chol.shape() != (m, m) || self.mode.len() != m {
            return Err(Error::Dimension(format!("model arrays do not match {m} knots")));
        }
        if let Some(sys) = &self.constraints {
            if sys.ncols() != m {
                return Err(Error::Dimension("constraint system does not match the grid".into()));
            }
            LinearConstraintSystem::new(
                sys.lambda.clone(),
                sys.lower.clone(),
                sys.upper.clone(),
                sys.tags.clone(),
            )?;
        }
        if !(self.tau2 >= 0.0) {
            return Err(Error::InvalidArgument("negative noise variance".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Snaps roundoff-level bound violations of a start point.
fn clamp_into(spec: &TruncatedGaussianSpec, mut z: DVector<f64>) -> DVector<f64> {
    for k in 0..z.len() {
        z[k] = z[k].clamp(spec.lower[k], spec.upper[k]);
    }
    z
}
