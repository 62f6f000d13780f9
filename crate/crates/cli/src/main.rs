use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lineqgp::config::Config;
use lineqgp::constraints::{ComposeForm, ConstraintSpec};
use lineqgp::diagnostics::{ess_report, EssReport};
use lineqgp::emulator::{ConditioningPath, EmulatorModel, SampleOptions};
use lineqgp::error::{Error, Result};
use lineqgp::experiments::{run_demo, Demo, DemoOptions, DEMO_NAMES};
use lineqgp::io::{format_table, read_dataset, read_table};
use lineqgp::kernel::KernelFamily;
use lineqgp::tmvn::{SampleChain, SamplerKind};
use nalgebra::DVector;

/// Gaussian-process emulators under linear inequality constraints.
#[derive(Parser, Debug)]
#[command(name = "lineqgp", version)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit hyperparameters, condition on the data and write a model file.
    Fit(FitArgs),
    /// Predictive mean, mode and quantile band on a grid or point file.
    Predict(PredictArgs),
    /// Sample paths in wide format, one column per path.
    Sample(SampleArgs),
    /// Constrained posterior mode.
    Map(MapArgs),
    /// Effective sample size report for a chain.
    Diagnose(DiagnoseArgs),
    /// Run a built-in experiment.
    Demo(DemoArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Training CSV: input columns then one output column, with header.
    #[arg(long)]
    data: PathBuf,
    /// Model file to write.
    #[arg(long, short)]
    out: PathBuf,
    /// TOML configuration; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kernel: Option<KernelFamily>,
    /// Knots per dimension, comma separated.
    #[arg(long, value_delimiter = ',')]
    knots: Option<Vec<usize>>,
    /// Constraint such as "bounds(0,1)" or "monotone(dim=1,up)"; repeatable.
    #[arg(long = "constraint")]
    constraints: Vec<ConstraintSpec>,
    #[arg(long)]
    compose: Option<ComposeArg>,
    /// Fix a parameter: sigma2=V, tau2=V, tau2rel=V, or lK=V for dimension K.
    #[arg(long = "fix")]
    fixes: Vec<String>,
    #[arg(long)]
    path: Option<PathArg>,
    /// Number of optimizer starts.
    #[arg(long)]
    starts: Option<usize>,
    /// Seed for the optimizer starts.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum ComposeArg {
    Stacked,
    Minimal,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum PathArg {
    Auto,
    Direct,
    Lowrank,
}

#[derive(Args, Debug, Clone)]
struct SamplingArgs {
    /// TOML configuration for the sampling and output sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    sampler: Option<SamplerKind>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thinning: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
struct PointArgs {
    /// CSV of evaluation points (header row, one column per input); a
    /// trailing output column is ignored.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Grid points per dimension over the model domain.
    #[arg(long)]
    resolution: Option<usize>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long, short)]
    model: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    points: PointArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Lower and upper quantile levels.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    quantiles: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long, short)]
    model: PathBuf,
    /// Paths in wide format: input columns then one column per draw.
    #[arg(long, short)]
    out: PathBuf,
    /// Also write the knot values of each draw, one row per draw.
    #[arg(long)]
    chain_out: Option<PathBuf>,
    #[command(flatten)]
    points: PointArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
}

#[derive(Args, Debug)]
struct MapArgs {
    #[arg(long, short)]
    model: PathBuf,
    /// Mode and unconstrained mean at the evaluation points.
    #[arg(long, short)]
    out: PathBuf,
    /// Also write the mode at the knots.
    #[arg(long)]
    knots_out: Option<PathBuf>,
    #[command(flatten)]
    points: PointArgs,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    /// Model to sample from when no chain file is given.
    #[arg(long, short, required_unless_present = "chain")]
    model: Option<PathBuf>,
    /// Knot-value chain written by `sample --chain-out`.
    #[arg(long, conflicts_with = "model")]
    chain: Option<PathBuf>,
    /// Per-coordinate ESS CSV.
    #[arg(long, short)]
    out: PathBuf,
    /// Summary report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    sampling: SamplingArgs,
}

#[derive(Args, Debug)]
struct DemoArgs {
    #[arg(value_parser = clap::builder::PossibleValuesParser::new(DEMO_NAMES))]
    name: String,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draws per headline sampler run.
    #[arg(long)]
    samples: Option<usize>,
    /// Draws per cell of the secondary tables.
    #[arg(long)]
    table_samples: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Sample(a) => sample(a),
        Command::Map(a) => map(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Demo(a) => demo(a),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    match path {
        Some(p) => Config::parse(&std::fs::read_to_string(p)?),
        None => Ok(Config::default()),
    }
}

/// Applies one `--fix`; length-scales go to `lengthscales`, one slot per input.
fn apply_fix(
    config: &mut Config,
    lengthscales: &mut [Option<f64>],
    fix: &str,
    d: usize,
) -> Result<()> {
    let bad = || Error::InvalidArgument(format!("--fix '{fix}': expected NAME=VALUE"));
    let (name, value) = fix.split_once('=').ok_or_else(bad)?;
    let value: f64 = value.trim().parse().map_err(|_| bad())?;
    match name.trim() {
        "sigma2" => config.fit.sigma2 = Some(value),
        "tau2" => {
            config.fit.tau2 = Some(value);
            config.fit.tau2rel = None;
        }
        "tau2rel" => {
            config.fit.tau2rel = Some(value);
            config.fit.tau2 = None;
        }
        other => {
            let k: usize = other
                .strip_prefix('l')
                .and_then(|k| if k.is_empty() { Some(1) } else { k.parse().ok() })
                .filter(|k| (1..=d).contains(k))
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "--fix '{fix}': unknown parameter (use sigma2, tau2, tau2rel or l1..l{d})"
                    ))
                })?;
            lengthscales[k - 1] = Some(value);
        }
    }
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let d = data.dim();
    let mut config = load_config(&a.config)?;
    if let Some(k) = a.kernel {
        config.model.kernel = k;
    }
    if let Some(k) = a.knots {
        config.model.knots = Some(k);
    }
    if !a.constraints.is_empty() {
        config.model.constraints = a.constraints;
    }
    if let Some(c) = a.compose {
        config.model.compose = match c {
            ComposeArg::Stacked => ComposeForm::Stacked,
            ComposeArg::Minimal => ComposeForm::Minimal,
        };
    }
    if let Some(p) = a.path {
        config.model.path = match p {
            PathArg::Auto => ConditioningPath::Auto,
            PathArg::Direct => ConditioningPath::Direct,
            PathArg::Lowrank => ConditioningPath::LowRank,
        };
    }
    if let Some(s) = a.starts {
        config.fit.starts = s;
    }
    if let Some(s) = a.seed {
        config.fit.seed = s;
    }
    let mut lengthscales = match &config.fit.lengthscales {
        Some(ls) if ls.len() != d => {
            return Err(Error::Dimension(format!("{} length-scales for {d} inputs", ls.len())));
        }
        Some(ls) => ls.iter().map(|l| Some(*l)).collect(),
        None => vec![None; d],
    };
    for f in &a.fixes {
        apply_fix(&mut config, &mut lengthscales, f, d)?;
    }
    config.validate()?;
    if lengthscales.iter().flatten().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::InvalidArgument("fixed length-scales must be positive".into()));
    }
    let mut options = config.emulator_options(d);
    // Length-scales given only for some dimensions stay free elsewhere.
    options.fit.fixed_lengthscales = lengthscales;
    let model = EmulatorModel::fit(&data, &options)?;
    model.save(&a.out)?;
    let ls: Vec<String> = model
        .kernel
        .lengthscales
        .iter()
        .enumerate()
        .map(|(k, l)| format!("l{}={l}", k + 1))
        .collect();
    println!(
        "kernel={} sigma2={} {} tau2={} loglik={} knots={} constraint_rows={}",
        model.kernel.family,
        model.kernel.variance,
        ls.join(" "),
        model.tau2,
        model.log_likelihood,
        model.grid.total_knots(),
        model.constraints.as_ref().map_or(0, |s| s.nrows()),
    );
    Ok(())
}

fn sample_options(a: &SamplingArgs) -> Result<(SampleOptions, Config)> {
    let mut config = load_config(&a.config)?;
    let s = &mut config.sampling;
    if let Some(v) = a.sampler {
        s.sampler = v;
    }
    if let Some(v) = a.samples {
        s.samples = v;
    }
    if let Some(v) = a.burn_in {
        s.burn_in = v;
    }
    if let Some(v) = a.thinning {
        s.thinning = v;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    config.validate()?;
    Ok((config.sample_options(), config))
}

fn eval_points(model: &EmulatorModel, a: &PointArgs, default_resolution: usize) -> Result<Vec<Vec<f64>>> {
    let d = model.dim();
    match &a.points {
        Some(path) => {
            let table = read_table(&std::fs::read_to_string(path)?)?;
            if table.header.len() != d && table.header.len() != d + 1 {
                return Err(Error::Dimension(format!(
                    "point file has {} columns for a {d}-input model",
                    table.header.len()
                )));
            }
            Ok(table.rows.into_iter().map(|r| r[..d].to_vec()).collect())
        }
        None => Ok(model.domain_grid(a.resolution.unwrap_or(default_resolution))),
    }
}

fn input_header(d: usize) -> Vec<String> {
    if d == 1 {
        vec!["x".into()]
    } else {
        (1..=d).map(|k| format!("x{k}")).collect()
    }
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = EmulatorModel::load(&a.model)?;
    let (options, config) = sample_options(&a.sampling)?;
    let levels = a.quantiles.unwrap_or_else(|| config.output.quantiles.clone());
    if levels.len() != 2 {
        return Err(Error::InvalidArgument("need exactly two quantile levels".into()));
    }
    let points = eval_points(&model, &a.points, config.output.resolution)?;
    let pred = model.predict(&points, &levels, &options)?;
    let mut header = input_header(model.dim());
    header.extend(["mean", "mode", "q_lo", "q_hi"].map(String::from));
    let rows: Vec<Vec<f64>> = (0..points.len())
        .map(|i| {
            let mut r = points[i].clone();
            r.extend([pred.mean[i], pred.mode[i], pred.quantiles[0][i], pred.quantiles[1][i]]);
            r
        })
        .collect();
    std::fs::write(&a.out, format_table(&header, &rows))?;
    Ok(())
}

fn chain_csv(chain: &SampleChain) -> String {
    let xi = chain.xi.as_ref().unwrap_or(&chain.draws);
    let m = xi.first().map_or(0, |x| x.len());
    let header: Vec<String> = (1..=m).map(|j| format!("xi{j}")).collect();
    let rows: Vec<Vec<f64>> = xi.iter().map(|x| x.as_slice().to_vec()).collect();
    format_table(&header, &rows)
}

fn sample(a: SampleArgs) -> Result<()> {
    let model = EmulatorModel::load(&a.model)?;
    let (options, config) = sample_options(&a.sampling)?;
    let points = eval_points(&model, &a.points, config.output.resolution)?;
    let chain = model.sample_paths(&options)?;
    let paths = model.evaluate_paths(&chain, &points)?;
    let mut header = input_header(model.dim());
    header.extend((1..=paths.len()).map(|k| format!("path{k}")));
    let rows: Vec<Vec<f64>> = (0..points.len())
        .map(|i| {
            let mut r = points[i].clone();
            r.extend(paths.iter().map(|p| p[i]));
            r
        })
        .collect();
    std::fs::write(&a.out, format_table(&header, &rows))?;
    if let Some(path) = &a.chain_out {
        std::fs::write(path, chain_csv(&chain))?;
    }
    println!(
        "sampler={} draws={} acceptance={} seconds={:.3}",
        chain.sampler.name(),
        chain.len(),
        chain.acceptance_rate(),
        chain.wall_seconds
    );
    Ok(())
}

fn map(a: MapArgs) -> Result<()> {
    let model = EmulatorModel::load(&a.model)?;
    let points = eval_points(&model, &a.points, Config::default().output.resolution)?;
    let mode = model.mode_curve(&points)?;
    let mean = model.posterior_mean(&points)?;
    let mut header = input_header(model.dim());
    header.extend(["mode", "mean"].map(String::from));
    let rows: Vec<Vec<f64>> = (0..points.len())
        .map(|i| {
            let mut r = points[i].clone();
            r.extend([mode[i], mean[i]]);
            r
        })
        .collect();
    std::fs::write(&a.out, format_table(&header, &rows))?;
    if let Some(path) = &a.knots_out {
        let knots = model.grid.knot_points();
        let mut header = input_header(model.dim());
        header.push("mode".into());
        let rows: Vec<Vec<f64>> = knots
            .iter()
            .zip(model.mode.iter())
            .map(|(u, v)| {
                let mut r = model.normalization.invert(u);
                r.push(*v);
                r
            })
            .collect();
        std::fs::write(path, format_table(&header, &rows))?;
    }
    println!("active_rows={}", model.mode_active_rows.len());
    Ok(())
}

#[derive(serde::Serialize)]
struct DiagnoseReport {
    draws: usize,
    q10: f64,
    q50: f64,
    q90: f64,
    /// Absent when the chain was read from a file.
    wall_seconds: Option<f64>,
    tn_ess: Option<f64>,
    acceptance_rate: Option<f64>,
    degenerate_coordinates: Vec<usize>,
}

fn diagnose(a: DiagnoseArgs) -> Result<()> {
    let (report, chain_len, timed, acceptance): (EssReport, usize, bool, Option<f64>) =
        match (&a.chain, &a.model) {
            (Some(path), _) => {
                let table = read_table(&std::fs::read_to_string(path)?)?;
                if table.rows.is_empty() {
                    return Err(Error::NoObservations);
                }
                let draws: Vec<DVector<f64>> =
                    table.rows.iter().map(|r| DVector::from_column_slice(r)).collect();
                let chain = SampleChain {
                    draws,
                    xi: None,
                    sampler: SamplerKind::Rsm,
                    burn_in: 0,
                    thinning: 1,
                    proposals: 0,
                    accepted: 0,
                    wall_seconds: 0.0,
                    seed: 0,
                };
                (ess_report(&chain), chain.len(), false, None)
            }
            (None, Some(path)) => {
                let model = EmulatorModel::load(path)?;
                let (options, _) = sample_options(&a.sampling)?;
                let chain = model.sample_paths(&options)?;
                (ess_report(&chain), chain.len(), true, Some(chain.acceptance_rate()))
            }
            (None, None) => unreachable!("clap requires one of --model and --chain"),
        };
    let header = vec!["coordinate".to_string(), "ess".into()];
    let rows: Vec<Vec<f64>> = report
        .per_coordinate
        .iter()
        .enumerate()
        .map(|(j, e)| vec![(j + 1) as f64, *e])
        .collect();
    std::fs::write(&a.out, format_table(&header, &rows))?;
    let summary = DiagnoseReport {
        draws: chain_len,
        q10: report.q10,
        q50: report.q50,
        q90: report.q90,
        wall_seconds: timed.then_some(report.wall_seconds),
        tn_ess: timed.then_some(report.tn_ess).filter(|t| t.is_finite()),
        acceptance_rate: acceptance,
        degenerate_coordinates: report.degenerate_coordinates,
    };
    let text = serde_json::to_string_pretty(&summary).expect("report serializes");
    match &a.report {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn demo(a: DemoArgs) -> Result<()> {
    let which: Demo = a.name.parse()?;
    let mut opts = DemoOptions {
        seed: a.seed,
        ..DemoOptions::default()
    };
    if let Some(s) = a.samples {
        opts.samples = s;
    }
    if let Some(s) = a.table_samples {
        opts.table_samples = s;
    }
    let report = run_demo(which, &a.out, &opts)?;
    for f in &report.files {
        println!("{}", f.display());
    }
    Ok(())
}
