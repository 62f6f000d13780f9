//! Desk-scale experiments: seeded data generators and the `demo` runners.
//!
//! Every runner writes CSV files into an output directory. All files except
//! `timings.csv` depend only on the seed and options, so reruns are
//! byte-identical.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::basis::Normalization;
use crate::constraints::{ComposeForm, ConstraintSpec, Direction};
use crate::diagnostics::{ess_report, q2};
use crate::emulator::{EmulatorModel, EmulatorOptions, Prediction, SampleOptions};
use crate::error::{Error, Result};
use crate::hyperparam::{FitOptions, NoiseModel};
use crate::io::{format_table, Dataset, TextTable};
use crate::kernel::KernelFamily;
use crate::tmvn::{SampleChain, SamplerKind, DEFAULT_BURN_IN, DEFAULT_SAMPLES, DEFAULT_THINNING};

/// Multi-starts for the kernel table and the tensor fits.
pub const SECONDARY_STARTS: usize = 3;

pub const DEMO_NAMES: [&str; 4] = ["bounded-toy", "sigmoid", "tensor-2d", "tensor-5d"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Demo {
    BoundedToy,
    Sigmoid,
    Tensor2d,
    Tensor5d,
}

impl Demo {
    pub fn name(self) -> &'static str {
        match self {
            Demo::BoundedToy => "bounded-toy",
            Demo::Sigmoid => "sigmoid",
            Demo::Tensor2d => "tensor-2d",
            Demo::Tensor5d => "tensor-5d",
        }
    }

    pub fn all() -> [Demo; 4] {
        [Demo::BoundedToy, Demo::Sigmoid, Demo::Tensor2d, Demo::Tensor5d]
    }
}

impl std::str::FromStr for Demo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Demo::all()
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown demo '{s}'; expected one of: {}",
                    DEMO_NAMES.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoOptions {
    pub seed: u64,
    /// Draws per sampler run in the headline experiments.
    pub samples: usize,
    /// Draws per cell of the sigmoid kernel/noise/constraint grid and of
    /// the tensor demos.
    pub table_samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
    /// Prediction points per dimension for band files.
    pub resolution: usize,
    pub quantiles: [f64; 2],
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: DEFAULT_SAMPLES,
            table_samples: 1000,
            burn_in: DEFAULT_BURN_IN,
            thinning: DEFAULT_THINNING,
            resolution: 101,
            quantiles: [0.025, 0.975],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoReport {
    pub files: Vec<PathBuf>,
}

/// The five-point bounded toy dataset.
pub fn toy_dataset() -> Dataset {
    Dataset::new(
        vec![vec![0.0], vec![0.2], vec![0.5], vec![0.75], vec![1.0]],
        vec![0.0, -0.5, -0.3, 0.5, 0.4],
    )
    .expect("static dataset")
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-10.0 * (x - 0.5)).exp())
}

/// Range of [`sigmoid`] over `[0, 1]`.
pub fn sigmoid_range() -> f64 {
    sigmoid(1.0) - sigmoid(0.0)
}

/// Noisy data from `f` at `n` uniform points of `[0, 1]^d`, with the
/// noise-free values alongside.
pub fn synthetic_dataset(
    f: impl Fn(&[f64]) -> f64,
    d: usize,
    n: usize,
    noise_sd: f64,
    seed: u64,
) -> (Dataset, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
        .collect();
    let truth: Vec<f64> = inputs.iter().map(|x| f(x)).collect();
    let outputs = truth
        .iter()
        .map(|t| t + noise_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    (Dataset::new(inputs, outputs).expect("consistent rows"), truth)
}

/// `n` sigmoid evaluations with noise sd equal to `level` times the range.
pub fn sigmoid_dataset(n: usize, level: f64, seed: u64) -> (Dataset, Vec<f64>) {
    synthetic_dataset(|x| sigmoid(x[0]), 1, n, level * sigmoid_range(), seed)
}

/// Nondecreasing in both inputs on `[0, 1]^2`.
pub fn monotone_2d(x: &[f64]) -> f64 {
    x[0] + x[1] * x[1] + 0.5 * x[0] * x[1]
}

/// Positive on `[0, 1]^5` and nondecreasing in the first two inputs.
pub fn monotone_5d(x: &[f64]) -> f64 {
    0.5 + 1.5 * x[0]
        + x[1] * x[1]
        + 0.4 * (std::f64::consts::PI * x[2]).sin()
        + 0.2 * x[3] * x[4]
        + 0.1 * x[3]
}

/// Random train/test split with `round(fraction * n)` training rows.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut train = idx[..k].to_vec();
    let mut test = idx[k..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Regular grid over `[0, 1]^d`, last dimension fastest.
pub fn unit_grid(d: usize, resolution: usize) -> Vec<Vec<f64>> {
    let res = resolution.max(2);
    (0..res.pow(d as u32))
        .map(|mut flat| {
            let mut u = vec![0.0; d];
            for k in (0..d).rev() {
                u[k] = (flat % res) as f64 / (res - 1) as f64;
                flat /= res;
            }
            u
        })
        .collect()
}

/// Largest decrease of `values` along dimension `dim` of a regular grid
/// built by [`unit_grid`]; zero for a nondecreasing surface.
pub fn max_decrease(values: &[f64], d: usize, resolution: usize, dim: usize) -> f64 {
    let stride = resolution.pow((d - 1 - dim) as u32);
    let mut worst = 0.0f64;
    for (i, v) in values.iter().enumerate() {
        let pos = (i / stride) % resolution;
        if pos + 1 < resolution {
            worst = worst.max(v - values[i + stride]);
        }
    }
    worst
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn write_file(dir: &Path, name: &str, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text)?;
    files.push(path);
    Ok(())
}

fn bands_csv(pred: &Prediction, names: &[String], extra: &[(&str, &[f64])]) -> String {
    let mut header: Vec<String> = names.to_vec();
    header.extend(["mean", "mode", "q_lo", "q_hi"].map(String::from));
    header.extend(extra.iter().map(|(n, _)| n.to_string()));
    let rows: Vec<Vec<f64>> = (0..pred.points.len())
        .map(|i| {
            let mut r = pred.points[i].clone();
            r.extend([pred.mean[i], pred.mode[i], pred.quantiles[0][i], pred.quantiles[1][i]]);
            r.extend(extra.iter().map(|(_, v)| v[i]));
            r
        })
        .collect();
    format_table(&header, &rows)
}

fn unit_domain(d: usize) -> Normalization {
    Normalization::new(vec![0.0; d], vec![1.0; d]).expect("unit box")
}

fn sample_options(opts: &DemoOptions, sampler: SamplerKind, count: usize, seed: u64) -> SampleOptions {
    SampleOptions {
        sampler,
        count,
        burn_in: opts.burn_in,
        thinning: opts.thinning,
        seed,
    }
}

/// Runs a demo and writes its files into `dir`, which is created if needed.
pub fn run_demo(demo: Demo, dir: &Path, opts: &DemoOptions) -> Result<DemoReport> {
    if opts.samples == 0 || opts.table_samples == 0 {
        return Err(Error::InvalidArgument("sample counts must be positive".into()));
    }
    if opts.thinning == 0 {
        return Err(Error::InvalidArgument("thinning must be >= 1".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    match demo {
        Demo::BoundedToy => bounded_toy(dir, opts, &mut files)?,
        Demo::Sigmoid => sigmoid_demo(dir, opts, &mut files)?,
        Demo::Tensor2d => tensor_demo(dir, opts, 2, &mut files)?,
        Demo::Tensor5d => tensor_demo(dir, opts, 5, &mut files)?,
    }
    Ok(DemoReport { files })
}

/// Options for the bounded toy: Matern 5/2, variance 10, 100 knots, bounds
/// `[-alpha, alpha]`, noise-free or ML noise.
pub fn bounded_toy_options(alpha: f64, noisy: bool, seed: u64) -> EmulatorOptions {
    EmulatorOptions {
        family: KernelFamily::Matern52,
        knots: vec![100],
        constraints: vec![ConstraintSpec::Bounds {
            lower: -alpha,
            upper: alpha,
        }],
        fit: FitOptions {
            fixed_variance: Some(10.0),
            noise: if noisy { NoiseModel::Free } else { NoiseModel::Fixed(0.0) },
            seed,
            ..FitOptions::default()
        },
        domain: Some(unit_domain(1)),
        ..EmulatorOptions::default()
    }
}

fn bounded_toy(dir: &Path, opts: &DemoOptions, files: &mut Vec<PathBuf>) -> Result<()> {
    let data = toy_dataset();
    write_file(dir, "data.csv", &data.to_csv(), files)?;
    let mut table = TextTable::new(&[
        "alpha", "noise", "sampler", "lengthscale", "tau2", "status", "draws", "acceptance",
        "ess_q10", "ess_q50", "ess_q90",
    ]);
    let mut timings = TextTable::new(&["alpha", "noise", "sampler", "cpu_seconds", "tn_ess"]);
    let points = unit_grid(1, opts.resolution);
    for alpha in [1.0, 0.75, 0.5] {
        for noisy in [false, true] {
            let label = if noisy { "noisy" } else { "noise-free" };
            let model = EmulatorModel::fit(&data, &bounded_toy_options(alpha, noisy, opts.seed))?;
            let mut band_chain: Option<SampleChain> = None;
            for sampler in [SamplerKind::Rsm, SamplerKind::Gibbs, SamplerKind::Hmc] {
                let so = sample_options(opts, sampler, opts.samples, opts.seed);
                let mut row = vec![
                    fmt(alpha),
                    label.to_string(),
                    sampler.name().to_string(),
                    fmt(model.kernel.lengthscales[0]),
                    fmt(model.tau2),
                ];
                match model.sample_paths(&so) {
                    Ok(chain) => {
                        let rep = ess_report(&chain);
                        row.extend([
                            "ok".to_string(),
                            chain.len().to_string(),
                            fmt(chain.acceptance_rate()),
                            fmt(rep.q10),
                            fmt(rep.q50),
                            fmt(rep.q90),
                        ]);
                        timings.push(vec![
                            fmt(alpha),
                            label.into(),
                            sampler.name().into(),
                            fmt(chain.wall_seconds),
                            fmt(rep.tn_ess),
                        ]);
                        if band_chain.is_none() {
                            band_chain = Some(chain);
                        }
                    }
                    Err(e) => {
                        log::warn!("alpha={alpha} {label} {}: {e}", sampler.name());
                        row.extend(["failed".to_string(), "0".into()]);
                        row.extend(["NaN".to_string(), "NaN".into(), "NaN".into(), "NaN".into()]);
                        timings.push(vec![
                            fmt(alpha),
                            label.into(),
                            sampler.name().into(),
                            "NaN".into(),
                            "NaN".into(),
                        ]);
                    }
                }
                table.push(row);
            }
            if let Some(chain) = band_chain {
                let pred = model.predict_with_chain(&chain, &points, &opts.quantiles)?;
                let name = format!("bands_alpha{alpha}_{label}.csv");
                write_file(dir, &name, &bands_csv(&pred, &["x".into()], &[]), files)?;
            }
        }
    }
    write_file(dir, "samplers.csv", &table.to_csv(), files)?;
    write_file(dir, "timings.csv", &timings.to_csv(), files)?;
    Ok(())
}

/// Options for the sigmoid experiments.
pub fn sigmoid_options(
    family: KernelFamily,
    knots: usize,
    constraints: Vec<ConstraintSpec>,
    noise: NoiseModel,
    seed: u64,
) -> EmulatorOptions {
    EmulatorOptions {
        family,
        knots: vec![knots],
        constraints,
        fit: FitOptions {
            noise,
            seed,
            ..FitOptions::default()
        },
        domain: Some(unit_domain(1)),
        ..EmulatorOptions::default()
    }
}

pub fn sigmoid_constraints(bounded: bool, monotone: bool) -> Vec<ConstraintSpec> {
    let mut c = Vec::new();
    if bounded {
        c.push(ConstraintSpec::Bounds {
            lower: 0.0,
            upper: 1.0,
        });
    }
    if monotone {
        c.push(ConstraintSpec::Monotone {
            dim: 0,
            direction: Direction::Nondecreasing,
        });
    }
    c
}

/// Fits, samples with HMC and scores the constrained sample mean against
/// `truth` at the training inputs. Returns the model, the chain, Q2 and the
/// elapsed seconds for fit plus sampling.
pub fn fit_and_score(
    data: &Dataset,
    truth: &[f64],
    options: &EmulatorOptions,
    sampling: &SampleOptions,
) -> Result<(EmulatorModel, SampleChain, f64, f64)> {
    let t0 = Instant::now();
    let model = EmulatorModel::fit(data, options)?;
    let chain = model.sample_paths(sampling)?;
    let seconds = t0.elapsed().as_secs_f64();
    let paths = model.evaluate_paths(&chain, &data.inputs)?;
    let mean: Vec<f64> = (0..data.len())
        .map(|i| paths.iter().map(|p| p[i]).sum::<f64>() / paths.len() as f64)
        .collect();
    let score = q2(&mean, truth)?;
    Ok((model, chain, score, seconds))
}

fn sigmoid_demo(dir: &Path, opts: &DemoOptions, files: &mut Vec<PathBuf>) -> Result<()> {
    let (data, truth) = sigmoid_dataset(300, 0.1, opts.seed);
    write_file(dir, "data.csv", &data.to_csv(), files)?;
    let points = unit_grid(1, opts.resolution);
    let both = sigmoid_constraints(true, true);

    let mut resolution = TextTable::new(&["knots", "lengthscale", "tau2", "q2", "ess_q10"]);
    let mut timings = TextTable::new(&["experiment", "kernel", "noise_level", "constraint", "knots", "cpu_seconds"]);
    for m in [5usize, 25, 100] {
        let options = sigmoid_options(KernelFamily::Matern52, m, both.clone(), NoiseModel::Free, opts.seed);
        let so = sample_options(opts, SamplerKind::Hmc, opts.samples, opts.seed);
        let (model, chain, score, seconds) = fit_and_score(&data, &truth, &options, &so)?;
        let pred = model.predict_with_chain(&chain, &points, &opts.quantiles)?;
        let f: Vec<f64> = points.iter().map(|p| sigmoid(p[0])).collect();
        let text = bands_csv(&pred, &["x".into()], &[("truth", &f)]);
        write_file(dir, &format!("bands_m{m}.csv"), &text, files)?;
        resolution.push(vec![
            m.to_string(),
            fmt(model.kernel.lengthscales[0]),
            fmt(model.tau2),
            fmt(score),
            fmt(ess_report(&chain).q10),
        ]);
        timings.push(vec![
            "resolution".into(),
            KernelFamily::Matern52.name().into(),
            "0.1".into(),
            "both".into(),
            m.to_string(),
            fmt(seconds),
        ]);
    }
    write_file(dir, "resolution.csv", &resolution.to_csv(), files)?;

    let mut grid = TextTable::new(&["kernel", "noise_level", "constraint", "tau2", "q2"]);
    let kinds = [
        ("bounds", sigmoid_constraints(true, false)),
        ("monotone", sigmoid_constraints(false, true)),
        ("both", both),
    ];
    for family in [KernelFamily::Matern32, KernelFamily::Matern52, KernelFamily::SquaredExponential] {
        for level in [0.005, 0.01, 0.05, 0.1] {
            let (data, truth) = sigmoid_dataset(300, level, opts.seed);
            let tau2 = (level * sigmoid_range()).powi(2);
            for (kind, cons) in &kinds {
                let mut options = sigmoid_options(family, 200, cons.clone(), NoiseModel::Fixed(tau2), opts.seed);
                options.fit.n_starts = SECONDARY_STARTS;
                let so = sample_options(opts, SamplerKind::Hmc, opts.table_samples, opts.seed);
                let (model, _, score, seconds) = fit_and_score(&data, &truth, &options, &so)?;
                grid.push(vec![
                    family.name().into(),
                    fmt(level),
                    kind.to_string(),
                    fmt(model.tau2),
                    fmt(score),
                ]);
                timings.push(vec![
                    "kernels".into(),
                    family.name().into(),
                    fmt(level),
                    kind.to_string(),
                    "200".into(),
                    fmt(seconds),
                ]);
            }
        }
    }
    write_file(dir, "kernels.csv", &grid.to_csv(), files)?;
    write_file(dir, "timings.csv", &timings.to_csv(), files)?;
    Ok(())
}

/// Constrained and unconstrained emulator options for the tensor demos.
pub fn tensor_options(d: usize, constrained: bool, seed: u64) -> EmulatorOptions {
    let (knots, constraints, compose) = if d == 2 {
        (
            vec![8, 8],
            vec![
                ConstraintSpec::Monotone { dim: 0, direction: Direction::Nondecreasing },
                ConstraintSpec::Monotone { dim: 1, direction: Direction::Nondecreasing },
            ],
            ComposeForm::Stacked,
        )
    } else {
        (
            vec![4, 4, 5, 3, 3],
            vec![
                ConstraintSpec::Bounds { lower: 0.0, upper: f64::INFINITY },
                ConstraintSpec::Monotone { dim: 0, direction: Direction::Nondecreasing },
                ConstraintSpec::Monotone { dim: 1, direction: Direction::Nondecreasing },
            ],
            ComposeForm::Minimal,
        )
    };
    EmulatorOptions {
        family: KernelFamily::Matern52,
        knots,
        constraints: if constrained { constraints } else { Vec::new() },
        compose,
        fit: FitOptions {
            n_starts: SECONDARY_STARTS,
            seed,
            ..FitOptions::default()
        },
        domain: Some(unit_domain(d)),
        ..EmulatorOptions::default()
    }
}

/// Synthetic data for the tensor demos: `(dataset, noise-free values)`.
pub fn tensor_dataset(d: usize, seed: u64) -> (Dataset, Vec<f64>) {
    if d == 2 {
        synthetic_dataset(monotone_2d, 2, 500, 0.02, seed)
    } else {
        synthetic_dataset(monotone_5d, 5, 2000, 0.02, seed)
    }
}

/// Q2 on held-out points for the constrained sample mean and the
/// unconstrained posterior mean.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorScore {
    pub constrained_q2: f64,
    pub unconstrained_q2: f64,
    pub constrained: EmulatorModel,
    pub chain: SampleChain,
    pub fit_seconds: f64,
}

pub fn tensor_experiment(d: usize, seed: u64, samples: usize) -> Result<TensorScore> {
    let (data, truth) = tensor_dataset(d, seed);
    let (train, test) = split_indices(data.len(), 0.2, seed);
    let train_data = data.subset(&train);
    let test_points: Vec<Vec<f64>> = test.iter().map(|i| data.inputs[*i].clone()).collect();
    let test_truth: Vec<f64> = test.iter().map(|i| truth[*i]).collect();

    let t0 = Instant::now();
    let free = EmulatorModel::fit(&train_data, &tensor_options(d, false, seed))?;
    let unconstrained_q2 = q2(&free.posterior_mean(&test_points)?, &test_truth)?;
    // The constrained model reuses the unconstrained ML hyperparameters.
    let mut options = tensor_options(d, true, seed);
    options.fit.fixed_variance = Some(free.kernel.variance);
    options.fit.fixed_lengthscales = free.kernel.lengthscales.iter().map(|l| Some(*l)).collect();
    options.fit.noise = NoiseModel::Fixed(free.tau2);
    let constrained = EmulatorModel::fit(&train_data, &options)?;
    let fit_seconds = t0.elapsed().as_secs_f64();
    let so = SampleOptions {
        sampler: SamplerKind::Hmc,
        count: samples,
        burn_in: DEFAULT_BURN_IN,
        thinning: DEFAULT_THINNING,
        seed,
    };
    let chain = constrained.sample_paths(&so)?;
    let paths = constrained.evaluate_paths(&chain, &test_points)?;
    let mean: Vec<f64> = (0..test_points.len())
        .map(|i| paths.iter().map(|p| p[i]).sum::<f64>() / paths.len() as f64)
        .collect();
    let constrained_q2 = q2(&mean, &test_truth)?;
    Ok(TensorScore {
        constrained_q2,
        unconstrained_q2,
        constrained,
        chain,
        fit_seconds,
    })
}

fn tensor_demo(dir: &Path, opts: &DemoOptions, d: usize, files: &mut Vec<PathBuf>) -> Result<()> {
    let (data, _) = tensor_dataset(d, opts.seed);
    write_file(dir, "data.csv", &data.to_csv(), files)?;
    let score = tensor_experiment(d, opts.seed, opts.table_samples)?;
    let model = &score.constrained;

    // Surfaces over the two monotone inputs, remaining inputs at 0.5.
    let res = if d == 2 { 30 } else { 20 };
    let points: Vec<Vec<f64>> = unit_grid(2, res)
        .into_iter()
        .map(|u| {
            let mut x = vec![0.5; d];
            x[0] = u[0];
            x[1] = u[1];
            x
        })
        .collect();
    let pred = model.predict_with_chain(&score.chain, &points, &opts.quantiles)?;
    let names: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    write_file(dir, "surface.csv", &bands_csv(&pred, &names, &[]), files)?;

    let mut worst = 0.0f64;
    for values in [&pred.mean, &pred.mode, &pred.quantiles[0], &pred.quantiles[1]] {
        for dim in 0..2 {
            worst = worst.max(max_decrease(values, 2, res, dim));
        }
    }
    let mut table = TextTable::new(&[
        "dim", "knots", "n_train", "tau2", "q2_constrained", "q2_unconstrained", "max_decrease",
        "ess_q10",
    ]);
    table.push(vec![
        d.to_string(),
        model.grid.total_knots().to_string(),
        model.n_observations.to_string(),
        fmt(model.tau2),
        fmt(score.constrained_q2),
        fmt(score.unconstrained_q2),
        fmt(worst),
        fmt(ess_report(&score.chain).q10),
    ]);
    write_file(dir, "summary.csv", &table.to_csv(), files)?;
    let mut timings = TextTable::new(&["fit_seconds", "sample_seconds"]);
    timings.push(vec![fmt(score.fit_seconds), fmt(score.chain.wall_seconds)]);
    write_file(dir, "timings.csv", &timings.to_csv(), files)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_names_parse() {
        for d in Demo::all() {
            assert_eq!(d.name().parse::<Demo>().unwrap(), d);
        }
        let err = "nope".parse::<Demo>().unwrap_err().to_string();
        assert!(err.contains("bounded-toy") && err.contains("tensor-5d"));
    }

    #[test]
    fn generators_are_seeded() {
        let (a, ta) = sigmoid_dataset(50, 0.1, 3);
        let (b, _) = sigmoid_dataset(50, 0.1, 3);
        let (c, _) = sigmoid_dataset(50, 0.1, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(ta.iter().all(|t| (0.0..=1.0).contains(t)));
    }

    #[test]
    fn test_functions_are_monotone() {
        let g = unit_grid(2, 15);
        let v: Vec<f64> = g.iter().map(|x| monotone_2d(x)).collect();
        assert_eq!(max_decrease(&v, 2, 15, 0), 0.0);
        assert_eq!(max_decrease(&v, 2, 15, 1), 0.0);
        let g5: Vec<Vec<f64>> = unit_grid(5, 4);
        let v5: Vec<f64> = g5.iter().map(|x| monotone_5d(x)).collect();
        assert!(v5.iter().all(|v| *v >= 0.5));
        assert_eq!(max_decrease(&v5, 5, 4, 0), 0.0);
        assert_eq!(max_decrease(&v5, 5, 4, 1), 0.0);
        assert!(max_decrease(&v5, 5, 4, 2) > 0.0);
    }

    #[test]
    fn split_is_a_partition() {
        let (tr, te) = split_indices(10, 0.2, 1);
        assert_eq!(tr.len(), 2);
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}
