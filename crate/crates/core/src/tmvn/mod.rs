//! Samplers for truncated multivariate normals `TN(mean, cov, lower, upper)`.
//!
//! Every sampler works in whitened coordinates `z = mean + F w`, where `F`
//! is the spec's factor, so singular covariances are handled throughout.

mod gibbs;
mod hmc;
mod naive;
mod rsm;
pub mod univariate;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::TruncatedGaussianSpec;

pub use gibbs::sample_gibbs;
pub use hmc::{sample_hmc, MAX_BOUNCES};
pub use naive::sample_naive_rejection;
pub use rsm::{sample_rsm, RSM_MIN_ACCEPTANCE, RSM_PROPOSAL_WINDOW};

/// Every stored draw must satisfy its bounds within this tolerance.
pub const FEASIBILITY_TOL: f64 = 1e-8;

pub const DEFAULT_BURN_IN: usize = 100;
pub const DEFAULT_THINNING: usize = 200;
pub const DEFAULT_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Rsm,
    Gibbs,
    Hmc,
    NaiveRejection,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Rsm => "rsm",
            SamplerKind::Gibbs => "gibbs",
            SamplerKind::Hmc => "hmc",
            SamplerKind::NaiveRejection => "naive",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rsm" => Ok(SamplerKind::Rsm),
            "gibbs" => Ok(SamplerKind::Gibbs),
            "hmc" => Ok(SamplerKind::Hmc),
            "naive" | "naive-rejection" => Ok(SamplerKind::NaiveRejection),
            other => Err(Error::InvalidArgument(format!(
                "unknown sampler '{other}' (expected rsm, gibbs or hmc)"
            ))),
        }
    }
}

/// Ordered draws with sampler metadata. `burn_in` counts discarded stored
/// states (so `burn_in * thinning` raw iterations for Gibbs).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleChain {
    pub draws: Vec<DVector<f64>>,
    /// Knot values recovered from `draws`, when the chain came from an emulator.
    pub xi: Option<Vec<DVector<f64>>>,
    pub sampler: SamplerKind,
    pub burn_in: usize,
    pub thinning: usize,
    pub proposals: u64,
    pub accepted: u64,
    pub wall_seconds: f64,
    pub seed: u64,
}

impl SampleChain {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.draws.first().map_or(0, |d| d.len())
    }

    /// Accepted over proposed; 1 for MCMC samplers.
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            1.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }

    /// Trace of coordinate `j` of `draws`.
    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[j]).collect()
    }

    pub fn mean(&self) -> DVector<f64> {
        sample_mean(&self.draws)
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        sample_covariance(&self.draws)
    }
}

pub fn sample_mean(draws: &[DVector<f64>]) -> DVector<f64> {
    let d = draws.first().map_or(0, |x| x.len());
    let mut m = DVector::zeros(d);
    for x in draws {
        m += x;
    }
    if !draws.is_empty() {
        m /= draws.len() as f64;
    }
    m
}

/// Unbiased sample covariance.
pub fn sample_covariance(draws: &[DVector<f64>]) -> DMatrix<f64> {
    let d = draws.first().map_or(0, |x| x.len());
    let mean = sample_mean(draws);
    let mut c = DMatrix::zeros(d, d);
    for x in draws {
        let e = x - &mean;
        c.ger(1.0, &e, &e, 1.0);
    }
    if draws.len() > 1 {
        c /= (draws.len() - 1) as f64;
    }
    c
}

/// Whitened view of a spec: each finite bound becomes a half-space
/// `f . w + g >= 0`.
#[derive(Debug, Clone)]
pub(crate) struct Walls {
    pub normals: Vec<DVector<f64>>,
    pub offsets: Vec<f64>,
}

impl Walls {
    pub fn new(spec: &TruncatedGaussianSpec) -> Self {
        let mut normals = Vec::new();
        let mut offsets = Vec::new();
        for k in 0..spec.dim() {
            let row: DVector<f64> = spec.factor.row(k).transpose();
            if spec.lower[k].is_finite() {
                offsets.push(spec.mean[k] - spec.lower[k]);
                normals.push(row.clone());
            }
            if spec.upper[k].is_finite() {
                offsets.push(spec.upper[k] - spec.mean[k]);
                normals.push(-row);
            }
        }
        Self { normals, offsets }
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }
}

/// Whitened coordinates of a point `z` in the range of the factor.
pub(crate) fn whiten(spec: &TruncatedGaussianSpec, z: &DVector<f64>) -> Result<DVector<f64>> {
    if z.len() != spec.dim() {
        return Err(Error::Dimension(format!(
            "point of length {} for a {}-dimensional spec",
            z.len(),
            spec.dim()
        )));
    }
    let rhs = z - &spec.mean;
    let f = &spec.factor;
    let w = if f.is_square() {
        f.clone().lu().solve(&rhs)
    } else {
        None
    };
    let w = match w {
        Some(w) => w,
        None => f
            .clone()
            .svd(true, true)
            .solve(&rhs, 1e-13 * f.amax().max(1e-300))
            .map_err(|e| Error::Factorization(e.to_string()))?,
    };
    let resid = (f * &w - &rhs).amax();
    let scale = rhs.amax().max(spec.mean.amax()).max(1.0);
    if !(resid <= 1e-7 * scale) {
        return Err(Error::InvalidArgument(format!(
            "point is not reachable from the spec mean through its covariance (residual {resid:.2e})"
        )));
    }
    Ok(w)
}

pub(crate) fn unwhiten(spec: &TruncatedGaussianSpec, w: &DVector<f64>) -> DVector<f64> {
    &spec.mean + &spec.factor * w
}

pub(crate) fn check_start(spec: &TruncatedGaussianSpec, start: &DVector<f64>) -> Result<()> {
    if start.len() != spec.dim() {
        return Err(Error::Dimension(format!(
            "start of length {} for a {}-dimensional spec",
            start.len(),
            spec.dim()
        )));
    }
    let v = spec.max_violation(start);
    if v > FEASIBILITY_TOL {
        return Err(Error::InvalidArgument(format!(
            "start point violates the bounds by {v:.3e}"
        )));
    }
    Ok(())
}

/// Rejects any chain with a draw outside the bounds.
pub(crate) fn verify_draws(spec: &TruncatedGaussianSpec, draws: &[DVector<f64>]) -> Result<()> {
    for (i, d) in draws.iter().enumerate() {
        let v = spec.max_violation(d);
        if !(v <= FEASIBILITY_TOL) {
            return Err(Error::Sampler(format!(
                "draw {i} violates the bounds by {v:.3e}"
            )));
        }
    }
    Ok(())
}
