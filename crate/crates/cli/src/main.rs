use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use shapehazard::{
    default_grid, gof, gs_test, ks_test, load_dataset, predict, predict_with_uncertainty, run_harness, solve,
    variance_bootstrap, variance_numerical, BandOptions, FitReport, FitResult, GofReport, GsOptions,
    HarnessVariance, Integration, Kernel, KsOptions, ModelSpec, Schema, SimConfig, SolverConfig,
    SurvivalDataset, Variance, VarianceMethod, WeightPolicy,
};

mod manifest;
mod profile;

use manifest::RunManifest;

const TABLE1_ROW1: &str = include_str!("../configs/table1_row1.json");
const SMOKE: &str = include_str!("../configs/smoke.json");

#[derive(Parser)]
#[command(name = "shapehazard", version, about = "Shape-invariant hazard regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Seed for every random stream; required by stochastic subcommands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel replicates.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Bootstrap replicates.
    #[arg(long, global = true)]
    bootstrap: Option<usize>,
    /// Integrate the score on this many equally spaced points instead of
    /// exactly.
    #[arg(long, global = true)]
    grid_points: Option<usize>,
    /// Half-width of the coefficient search box.
    #[arg(long, global = true)]
    half_width: Option<f64>,
}

#[derive(Args)]
struct DataArgs {
    /// Delimited data file (id, tstart, tstop, status, covariates).
    #[arg(long)]
    data: PathBuf,
    /// JSON map from covariate column to Z1, Z2 or Z3.
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model and write a JSON report and the baseline curve.
    Fit {
        #[command(flatten)]
        input: DataArgs,
        #[arg(long, value_enum, default_value_t = VarianceArg::Auto)]
        variance: VarianceArg,
        #[command(flatten)]
        common: Common,
    },
    /// Predict the cumulative hazard for a covariate profile.
    Predict {
        /// Fit report to predict from; refitted from --data when bands are
        /// requested.
        #[arg(long)]
        fit: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Covariate values as name=value pairs, e.g. "age=1.2,trt=0".
        #[arg(long, default_value = "")]
        profile: String,
        /// Comma-separated prediction times; defaults to 200 points up to the
        /// 95th percentile of observed times.
        #[arg(long)]
        times: Option<String>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Goodness-of-fit tests.
    Gof {
        #[command(flatten)]
        input: DataArgs,
        #[arg(long, value_enum, default_value_t = TestArg::Both)]
        test: TestArg,
        #[arg(long, value_enum, default_value_t = KernelArg::Epanechnikov)]
        kernel: KernelArg,
        /// Bandwidth multiplier applied to every covariate's default.
        #[arg(long)]
        bandwidth_scale: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the simulation harness.
    Simulate {
        /// Simulation config file.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Bundled config: table1_row1 or smoke.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, value_enum, default_value_t = HarnessVarianceArg::None)]
        variance: HarnessVarianceArg,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VarianceArg {
    /// Bootstrap when --bootstrap is given, numerical otherwise.
    Auto,
    Numerical,
    Bootstrap,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum HarnessVarianceArg {
    None,
    Numerical,
    Bootstrap,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TestArg {
    Ks,
    Gs,
    Both,
}

impl TestArg {
    fn name(self) -> &'static str {
        match self {
            TestArg::Ks => "ks",
            TestArg::Gs => "gs",
            TestArg::Both => "both",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Epanechnikov,
    Gaussian,
}

/// Outcome of a subcommand that completed without an input error.
enum Outcome {
    Done,
    NotConverged,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("error: estimation did not converge; report written");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn common_of(cmd: &Command) -> &Common {
    match cmd {
        Command::Fit { common, .. }
        | Command::Predict { common, .. }
        | Command::Gof { common, .. }
        | Command::Simulate { common, .. } => common,
    }
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let common = common_of(&cli.command).clone();
    if let Some(t) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    fs::create_dir_all(&common.out_dir).with_context(|| format!("creating {}", common.out_dir.display()))?;
    let started = Instant::now();
    let mut manifest = RunManifest::new(subcommand_name(&cli.command), common.seed);
    let outcome = match cli.command {
        Command::Fit { input, variance, .. } => cmd_fit(&input, variance, &common, &mut manifest)?,
        Command::Predict {
            fit,
            data,
            schema,
            profile,
            times,
            alpha,
            ..
        } => cmd_predict(
            fit.as_deref(),
            data.as_deref(),
            schema.as_deref(),
            &profile,
            times.as_deref(),
            alpha,
            &common,
            &mut manifest,
        )?,
        Command::Gof {
            input,
            test,
            kernel,
            bandwidth_scale,
            ..
        } => cmd_gof(&input, test, kernel, bandwidth_scale, &common, &mut manifest)?,
        Command::Simulate {
            config,
            preset,
            variance,
            ..
        } => cmd_simulate(config.as_deref(), preset.as_deref(), variance, &common, &mut manifest)?,
    };
    manifest.wall_time_secs = started.elapsed().as_secs_f64();
    manifest.write(&common.out_dir)?;
    Ok(outcome)
}

fn subcommand_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Fit { .. } => "fit",
        Command::Predict { .. } => "predict",
        Command::Gof { .. } => "gof",
        Command::Simulate { .. } => "simulate",
    }
}

fn require_seed(common: &Common, what: &str) -> anyhow::Result<u64> {
    common
        .seed
        .ok_or_else(|| anyhow!("{what} is stochastic; pass --seed"))
}

fn spec_of(common: &Common) -> anyhow::Result<ModelSpec> {
    let mut spec = ModelSpec::default();
    if let Some(k) = common.grid_points {
        spec.integration = Integration::Grid(k);
    }
    spec.validate()?;
    Ok(spec)
}

fn solver_of(common: &Common) -> anyhow::Result<SolverConfig> {
    let mut cfg = SolverConfig::default();
    if let Some(h) = common.half_width {
        cfg.half_width = h;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load(data: &Path, schema: &Path, manifest: &mut RunManifest) -> anyhow::Result<SurvivalDataset> {
    let schema = Schema::from_path(schema).with_context(|| format!("reading schema {}", schema.display()))?;
    let d = load_dataset(data, &schema).with_context(|| format!("reading {}", data.display()))?;
    manifest.inputs.push(data.display().to_string());
    Ok(d)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(dir.join(name), text + "\n").with_context(|| format!("writing {name}"))
}

fn create(dir: &Path, name: &str) -> anyhow::Result<std::io::BufWriter<fs::File>> {
    let f = fs::File::create(dir.join(name)).with_context(|| format!("creating {name}"))?;
    Ok(std::io::BufWriter::new(f))
}

fn cmd_fit(input: &DataArgs, variance: VarianceArg, common: &Common, manifest: &mut RunManifest) -> anyhow::Result<Outcome> {
    manifest.inputs.push(input.schema.display().to_string());
    let data = load(&input.data, &input.schema, manifest)?;
    let spec = spec_of(common)?;
    let policy = WeightPolicy::default();
    let cfg = solver_of(common)?;
    let mut fit = solve(&data, &spec, &policy, &cfg)?;
    let method = match (variance, common.bootstrap) {
        (VarianceArg::Auto, Some(_)) | (VarianceArg::Bootstrap, _) => Some(VarianceMethod::Bootstrap),
        (VarianceArg::Auto, None) | (VarianceArg::Numerical, _) => Some(VarianceMethod::Numerical),
        (VarianceArg::None, _) => None,
    };
    manifest.config = serde_json::json!({
        "variance": method,
        "bootstrap": common.bootstrap,
        "integration": spec.integration,
        "solver": cfg,
    });
    if fit.converged() {
        match method {
            Some(VarianceMethod::Numerical) => {
                let matrix = variance_numerical(&fit, &data, &spec, &policy, &cfg)?;
                fit.variance = Some(Variance {
                    method: VarianceMethod::Numerical,
                    matrix,
                    dropped: 0,
                });
            }
            Some(VarianceMethod::Bootstrap) => {
                let seed = require_seed(common, "the bootstrap")?;
                let b = common.bootstrap.unwrap_or(200);
                let boot = variance_bootstrap(&data, &spec, &policy, &cfg, Some(&fit.beta_hat), b, seed)?;
                fit.variance = Some(Variance {
                    method: VarianceMethod::Bootstrap,
                    matrix: boot.covariance,
                    dropped: boot.dropped,
                });
            }
            None => {}
        }
    }
    let report = FitReport::new(&fit, &data, &spec, 0.95);
    write_json(&common.out_dir, "fit.json", &report)?;
    fit.baseline.write_tsv(create(&common.out_dir, "baseline.tsv")?, "cumhaz")?;
    Ok(if fit.converged() {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    fit_path: Option<&Path>,
    data_path: Option<&Path>,
    schema_path: Option<&Path>,
    profile_text: &str,
    times: Option<&str>,
    alpha: f64,
    common: &Common,
    manifest: &mut RunManifest,
) -> anyhow::Result<Outcome> {
    let spec_from_flags = spec_of(common)?;
    let data = match (data_path, schema_path) {
        (Some(d), Some(s)) => Some(load(d, s, manifest)?),
        (None, None) => None,
        _ => bail!("--data and --schema go together"),
    };
    let (fit, spec, names) = match (fit_path, &data) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let report = FitReport::from_json(&text).context("parsing the fit report")?;
            manifest.inputs.push(p.display().to_string());
            let names = profile::names_from_report(&report);
            (report.fit, report.spec, names)
        }
        (None, Some(d)) => (
            solve(d, &spec_from_flags, &WeightPolicy::default(), &solver_of(common)?)?,
            spec_from_flags,
            d.names().clone(),
        ),
        (None, None) => bail!("pass --fit or --data with --schema"),
    };
    if !fit.converged() {
        return Ok(Outcome::NotConverged);
    }
    let z = profile::parse(profile_text, &names)?;
    let grid: Vec<f64> = match (times, &data) {
        (Some(t), _) => t
            .split(',')
            .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad time {v:?}")))
            .collect::<anyhow::Result<_>>()?,
        (None, Some(d)) => default_grid(d),
        (None, None) => bail!("pass --times when predicting from a fit report alone"),
    };
    manifest.config = serde_json::json!({ "profile": profile_text, "alpha": alpha, "points": grid.len() });

    let mut out = create(&common.out_dir, "prediction.tsv")?;
    match (common.bootstrap, &data) {
        (Some(b), Some(d)) => {
            let seed = require_seed(common, "prediction bands")?;
            let opts = BandOptions {
                alpha,
                replicates: b,
                seed,
            };
            let curve = predict_with_uncertainty(
                &fit,
                d,
                &spec,
                &WeightPolicy::default(),
                &solver_of(common)?,
                &z,
                &grid,
                &opts,
            )?;
            curve.write_tsv(&mut out)?;
        }
        (Some(_), None) => bail!("prediction bands need --data and --schema for the bootstrap"),
        (None, _) => {
            use std::io::Write;
            let est = predict(&fit, &z, &grid, &spec)?;
            writeln!(out, "t\testimate\tsurvival")?;
            for (t, l) in grid.iter().zip(&est) {
                writeln!(out, "{t}\t{l}\t{}", (-l).exp())?;
            }
        }
    }
    Ok(Outcome::Done)
}

fn cmd_gof(
    input: &DataArgs,
    test: TestArg,
    kernel: KernelArg,
    bandwidth_scale: Option<f64>,
    common: &Common,
    manifest: &mut RunManifest,
) -> anyhow::Result<Outcome> {
    let seed = require_seed(common, "goodness of fit")?;
    manifest.inputs.push(input.schema.display().to_string());
    let data = load(&input.data, &input.schema, manifest)?;
    let spec = spec_of(common)?;
    let policy = WeightPolicy::default();
    let cfg = solver_of(common)?;
    let b = common.bootstrap.unwrap_or(200);
    let kernel = match kernel {
        KernelArg::Epanechnikov => Kernel::Epanechnikov,
        KernelArg::Gaussian => Kernel::Gaussian,
    };
    let mut report = GofReport::default();
    let mut converged = true;
    if test != TestArg::Gs {
        let fit = solve(&data, &spec, &policy, &cfg)?;
        if fit.converged() {
            let bandwidths = bandwidth_scale.map(|c| {
                gof::default_bandwidths(&data).into_iter().map(|h| h * c).collect()
            });
            let opts = KsOptions {
                kernel,
                bandwidths,
                replicates: b,
                seed,
                ..KsOptions::default()
            };
            let ks = ks_test(&fit, &data, &spec, &policy, &cfg, &opts)?;
            let mut out = create(&common.out_dir, "discrepancy.tsv")?;
            write_paths(&mut out, &fit, &data, &spec, &ks)?;
            report.ks = Some(ks);
        } else {
            converged = false;
        }
    }
    if test != TestArg::Ks {
        let second = WeightPolicy::contrast_for(&data);
        let opts = GsOptions {
            replicates: b,
            seed,
            ..GsOptions::default()
        };
        report.gs = Some(gs_test(&data, &spec, (&policy, &second), &cfg, &opts)?);
    }
    manifest.config = serde_json::json!({ "bootstrap": b, "kernel": kernel, "test": test.name() });
    write_json(&common.out_dir, "gof.json", &report)?;
    Ok(if converged { Outcome::Done } else { Outcome::NotConverged })
}

/// `D(t)` of every distinct covariate profile, long format.
fn write_paths<W: std::io::Write>(
    out: &mut W,
    fit: &FitResult,
    data: &SurvivalDataset,
    spec: &ModelSpec,
    ks: &shapehazard::KsResult,
) -> anyhow::Result<()> {
    writeln!(out, "profile\tt\tD")?;
    let mut seen: Vec<Vec<f64>> = Vec::new();
    for s in data.subjects() {
        let z = s.covariates.stacked_initial();
        if seen.contains(&z) {
            continue;
        }
        let path = gof::discrepancy_path(fit, data, spec, &s.covariates, ks.kernel, &ks.bandwidths, &ks.q, ks.horizon)?;
        for (t, d) in path {
            writeln!(out, "{}\t{t}\t{d}", seen.len())?;
        }
        seen.push(z);
    }
    Ok(())
}

fn cmd_simulate(
    config: Option<&Path>,
    preset: Option<&str>,
    variance: HarnessVarianceArg,
    common: &Common,
    manifest: &mut RunManifest,
) -> anyhow::Result<Outcome> {
    let seed = require_seed(common, "simulation")?;
    let text = match (config, preset) {
        (Some(p), _) => {
            manifest.inputs.push(p.display().to_string());
            fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?
        }
        (None, Some("table1_row1")) => TABLE1_ROW1.to_string(),
        (None, Some("smoke")) => SMOKE.to_string(),
        (None, Some(other)) => bail!("unknown preset {other:?}; use table1_row1 or smoke"),
        (None, None) => bail!("pass --config or --preset"),
    };
    let mut cfg: SimConfig = serde_json::from_str(&text).context("parsing the simulation config")?;
    cfg.seed = seed;
    let variance = match variance {
        HarnessVarianceArg::None => HarnessVariance::None,
        HarnessVarianceArg::Numerical => HarnessVariance::Numerical,
        HarnessVarianceArg::Bootstrap => HarnessVariance::Bootstrap {
            replicates: common.bootstrap.unwrap_or(200),
        },
    };
    if common.grid_points.is_some() {
        bail!("--grid-points does not apply to simulate; the harness always integrates exactly");
    }
    let solver = solver_of(common)?;
    manifest.config = serde_json::json!({ "sim": cfg, "variance": variance });
    let report = run_harness(&cfg, &solver, variance)?;
    write_json(&common.out_dir, "simulation.json", &report)?;
    report.write_table(create(&common.out_dir, "simulation.tsv")?)?;
    Ok(Outcome::Done)
}
