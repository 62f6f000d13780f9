//! TOML run configuration with an explicit schema version.
//!
//! ```toml
//! schema_version = 1
//!
//! [model]
//! kernel = "matern52"
//! knots = [25]
//! constraints = ["bounds(0,1)", "monotone(dim=1,up)"]
//!
//! [fit]
//! sigma2 = 10.0
//! tau2rel = 0.005
//!
//! [sampling]
//! sampler = "rsm"
//! samples = 10000
//! ```

use serde::{Deserialize, Serialize};

use crate::constraints::{ComposeForm, ConstraintSpec};
use crate::emulator::{
    ConditioningPath, EmulatorOptions, SampleOptions, DEFAULT_KNOTS_1D, DEFAULT_KNOT_BUDGET,
};
use crate::error::{Error, Result};
use crate::hyperparam::{FitOptions, NoiseModel};
use crate::kernel::KernelFamily;
use crate::tmvn::{SamplerKind, DEFAULT_BURN_IN, DEFAULT_SAMPLES, DEFAULT_THINNING};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kernel: KernelFamily,
    /// Knot count per input dimension; 25 per dimension when omitted.
    pub knots: Option<Vec<usize>>,
    pub constraints: Vec<ConstraintSpec>,
    pub compose: ComposeForm,
    pub knot_budget: usize,
    pub path: ConditioningPath,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kernel: KernelFamily::Matern52,
            knots: None,
            constraints: Vec::new(),
            compose: ComposeForm::Stacked,
            knot_budget: DEFAULT_KNOT_BUDGET,
            path: ConditioningPath::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub sigma2: Option<f64>,
    pub lengthscales: Option<Vec<f64>>,
    /// Fixed noise variance.
    pub tau2: Option<f64>,
    /// Noise variance as a fraction of `sigma2`.
    pub tau2rel: Option<f64>,
    pub starts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        let d = FitOptions::default();
        Self {
            sigma2: None,
            lengthscales: None,
            tau2: None,
            tau2rel: None,
            starts: d.n_starts,
            max_iter: d.max_iter,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub sampler: SamplerKind,
    pub samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerKind::Rsm,
            samples: DEFAULT_SAMPLES,
            burn_in: DEFAULT_BURN_IN,
            thinning: DEFAULT_THINNING,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub quantiles: Vec<f64>,
    /// Prediction grid points per dimension.
    pub resolution: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            quantiles: vec![0.025, 0.975],
            resolution: 101,
        }
    }
}

impl Default for Config {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model: ModelConfig::default(),
            fit: FitConfig::default(),
            sampling: SamplingConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    1 + text[..offset.min(text.len())].matches('\n').count()
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        match raw.get("schema_version") {
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "missing schema_version".into(),
                })
            }
            Some(v) => {
                let found = v.as_integer().unwrap_or(-1);
                if found != SCHEMA_VERSION as i64 {
                    return Err(Error::Version {
                        found: found.clamp(0, u32::MAX as i64) as u32,
                        expected: SCHEMA_VERSION,
                    });
                }
            }
        }
        let config: Config = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.fit.tau2.is_some() && self.fit.tau2rel.is_some() {
            return Err(Error::InvalidArgument(
                "set at most one of fit.tau2 and fit.tau2rel".into(),
            ));
        }
        let positive = |v: &f64| v.is_finite() && *v > 0.0;
        let nonnegative = |v: &f64| v.is_finite() && *v >= 0.0;
        if !self.fit.sigma2.iter().all(positive) {
            return Err(Error::InvalidArgument("fit.sigma2 must be positive".into()));
        }
        if !self.fit.lengthscales.iter().flatten().all(positive) {
            return Err(Error::InvalidArgument("fit.lengthscales must be positive".into()));
        }
        if !self.fit.tau2.iter().chain(&self.fit.tau2rel).all(nonnegative) {
            return Err(Error::InvalidArgument("noise variance must be nonnegative".into()));
        }
        if self.fit.starts == 0 {
            return Err(Error::InvalidArgument("fit.starts must be >= 1".into()));
        }
        if self.sampling.samples == 0 {
            return Err(Error::InvalidArgument("sampling.samples must be >= 1".into()));
        }
        if self.sampling.thinning == 0 {
            return Err(Error::InvalidArgument("sampling.thinning must be >= 1".into()));
        }
        if self.output.quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Error::InvalidArgument("quantiles must lie in [0, 1]".into()));
        }
        if let Some(k) = &self.model.knots {
            if k.iter().any(|m| *m < 2) {
                return Err(Error::InvalidArgument("every knot count must be >= 2".into()));
            }
        }
        Ok(())
    }

    pub fn fit_options(&self) -> FitOptions {
        let noise = match (self.fit.tau2, self.fit.tau2rel) {
            (Some(v), _) => NoiseModel::Fixed(v),
            (None, Some(r)) => NoiseModel::Relative(r),
            (None, None) => NoiseModel::Free,
        };
        FitOptions {
            fixed_variance: self.fit.sigma2,
            fixed_lengthscales: self
                .fit
                .lengthscales
                .as_ref()
                .map(|v| v.iter().map(|l| Some(*l)).collect())
                .unwrap_or_default(),
            noise,
            n_starts: self.fit.starts,
            max_iter: self.fit.max_iter,
            seed: self.fit.seed,
        }
    }

    /// Emulator options for data of dimension `d`.
    pub fn emulator_options(&self, d: usize) -> EmulatorOptions {
        EmulatorOptions {
            family: self.model.kernel,
            knots: self.model.knots.clone().unwrap_or_else(|| vec![DEFAULT_KNOTS_1D; d]),
            constraints: self.model.constraints.clone(),
            compose: self.model.compose,
            fit: self.fit_options(),
            domain: None,
            knot_budget: self.model.knot_budget,
            path: self.model.path,
        }
    }

    pub fn sample_options(&self) -> SampleOptions {
        SampleOptions {
            sampler: self.sampling.sampler,
            count: self.sampling.samples,
            burn_in: self.sampling.burn_in,
            thinning: self.sampling.thinning,
            seed: self.sampling.seed,
        }
    }
}
