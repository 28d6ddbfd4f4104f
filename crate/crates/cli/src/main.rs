use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use excess_core::config::RunConfig;
use excess_core::data::{ingest_mortality, ingest_temperature, Granularity, Iso3};
use excess_core::draws_io::DrawsFile;
use excess_core::excess::PointEstimate;
use excess_core::expected::{fit_annual_expected, fit_monthly_expected, TrendKind};
use excess_core::pipeline::{self, CacheLocation, CovariateStage, Inputs, StageCache};
use excess_core::seasonal::fit_temperature_model;
use excess_core::validation::{run_simulation_suite, CvScheme, SimulationSuiteConfig};
use excess_core::{synth, Error};

/// Country-level excess mortality estimation.
#[derive(Parser)]
#[command(name = "excess-engine", version)]
struct Cli {
    /// Print the configuration (defaults, or --config merged over them) as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Run configuration in TOML.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Input directory; overrides run.data_dir.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline into a run directory.
    Run {
        #[arg(long)]
        out: PathBuf,
        /// Recompute every stage instead of reusing <out>/cache.
        #[arg(long)]
        no_cache: bool,
    },
    /// Expected-death baselines.
    Expected {
        #[command(subcommand)]
        action: FitOnly<ExpectedFit>,
    },
    /// Temperature model for month shares.
    Seasonal {
        #[command(subcommand)]
        action: FitOnly<SeasonalFit>,
    },
    /// Hierarchical covariate count model.
    Covariate {
        #[command(subcommand)]
        action: FitOnly<CovariateFit>,
    },
    /// National totals from subnational data for one country.
    Subnational {
        #[command(subcommand)]
        action: FitOnly<SubnationalFit>,
    },
    Excess {
        #[command(subcommand)]
        action: ExcessAction,
    },
    Validate {
        #[command(subcommand)]
        action: ValidateAction,
    },
    /// Write a synthetic 30-country input directory with its run.toml.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2022)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum FitOnly<A: Args> {
    Fit(A),
}

#[derive(Args)]
struct ExpectedFit {
    /// mortality.csv; defaults to the one in the data directory.
    #[arg(long)]
    history: Option<PathBuf>,
    /// CSV with iso3,t,eta_hat,sigma_hat,trend_kind.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SeasonalFit {
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    temperature: Option<PathBuf>,
    /// JSON file for the fitted model.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CovariateFit {
    /// Posterior draws in draws.bin format.
    #[arg(long)]
    draws: PathBuf,
    /// Also export the draws as long-format CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SubnationalFit {
    #[arg(long)]
    country: Iso3,
    /// Monthly death and expected-death draws in draws.bin format.
    #[arg(long)]
    draws: PathBuf,
}

#[derive(Subcommand)]
enum ExcessAction {
    /// Summaries, indicators and ranks from a draws.bin of a run.
    Summarize {
        #[arg(long)]
        draws: PathBuf,
        /// Path of summary.csv; indicators.csv and ranks.csv are written beside it.
        #[arg(long)]
        out: PathBuf,
        /// Directory for plot-ready long-format tables.
        #[arg(long)]
        plots: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ValidateAction {
    /// Leave-one-out cross-validation of the covariate model.
    Cv {
        #[arg(long)]
        scheme: Option<CvScheme>,
        /// Directory for cv_cells.csv and cv_report.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulation studies for the subnational samplers and gamma approximation.
    Sims {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Replications of the share-model study.
        #[arg(long)]
        replications: Option<usize>,
    },
}

struct Session {
    config: RunConfig,
    data_dir: PathBuf,
}

impl Session {
    fn load(cli: &Cli) -> anyhow::Result<Self> {
        let (config, base) = match &cli.config {
            Some(p) => (
                RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
                p.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (RunConfig::default(), PathBuf::from(".")),
        };
        let data_dir = cli.data.clone().unwrap_or_else(|| base.join(&config.run.data_dir));
        Ok(Self { config, data_dir })
    }

    fn inputs(&self) -> anyhow::Result<Inputs> {
        Inputs::load(&self.data_dir).with_context(|| format!("loading inputs from {}", self.data_dir.display()))
    }

    fn input(&self, given: &Option<PathBuf>, name: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.data_dir.join(name))
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn expected_fit(ctx: &Session, args: &ExpectedFit) -> anyhow::Result<()> {
    let data = ingest_mortality(&ctx.input(&args.history, "mortality.csv"))?;
    let trend = ctx.config.expected.trend.unwrap_or(TrendKind::Spline);
    let mut w = csv::Writer::from_path(&args.out)?;
    w.write_record(["iso3", "t", "eta_hat", "sigma_hat", "trend_kind"])?;
    for (c, h) in &data.historic {
        let fit = match h.granularity {
            Granularity::Monthly => fit_monthly_expected(h, trend),
            Granularity::Annual => fit_annual_expected(h),
        }
        .map_err(|e| Error::stage("expected", Some(c.as_str()), e))?;
        let kind = match fit.trend_kind {
            TrendKind::Spline => "spline",
            TrendKind::Linear => "linear",
        };
        for (t, p) in fit.predictions.iter().enumerate() {
            w.write_record([c.as_str(), &(t + 1).to_string(), &p.eta.to_string(), &p.sigma.to_string(), kind])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn seasonal_fit(ctx: &Session, args: &SeasonalFit) -> anyhow::Result<()> {
    let data = ingest_mortality(&ctx.input(&args.history, "mortality.csv"))?;
    let temps = ingest_temperature(&ctx.input(&args.temperature, "temperature.csv"))?;
    let monthly: Vec<_> = data.historic.values().filter(|h| h.granularity == Granularity::Monthly).cloned().collect();
    let model = fit_temperature_model(&monthly, &temps).map_err(|e| Error::stage("seasonal", None, e))?;
    eprintln!("beta = {:.6} (sd {:.6}) from {} country-years", model.beta, model.sd, model.country_years);
    write_json(&args.out, &model)
}

fn covariate_file(stage: &CovariateStage) -> excess_core::Result<DrawsFile> {
    let d = &stage.draws;
    let mut f = DrawsFile::default();
    f.push_matrix("coefficients", &d.coefficients)?;
    f.push("sigma_eps", vec![d.sigma_eps.len()], d.sigma_eps.clone())?;
    f.push_matrix("sigma_beta", &d.sigma_beta)?;
    f.push_matrix("eps", &d.eps)?;
    Ok(f)
}

fn covariate_fit(ctx: &Session, args: &CovariateFit) -> anyhow::Result<()> {
    let inputs = ctx.inputs()?;
    let fitted = pipeline::fit_stages(&ctx.config, &inputs, &mut StageCache::new(None))?;
    eprintln!("{}", fitted.covariate.draws.diagnostics);
    let file = covariate_file(&fitted.covariate)?;
    file.save(&args.draws)?;
    if let Some(p) = &args.csv {
        file.write_csv(std::io::BufWriter::new(std::fs::File::create(p)?))?;
    }
    Ok(())
}

fn subnational_fit(ctx: &Session, args: &SubnationalFit) -> anyhow::Result<()> {
    let inputs = ctx.inputs()?;
    if !inputs.has_subnational(&args.country) {
        return Err(Error::Validation(format!("{}: no rows in subnational.csv", args.country)).into());
    }
    let fitted = pipeline::fit_stages(&ctx.config, &inputs, &mut StageCache::new(None))?;
    let draws = pipeline::predict_for(&ctx.config, &inputs, &fitted.gamma, &fitted.covariate, &args.country)?;
    let mut file = DrawsFile::default();
    file.push_matrix(&format!("{}.deaths", args.country), &draws.deaths)?;
    file.push_matrix(&format!("{}.expected", args.country), &draws.expected)?;
    file.save(&args.draws)?;
    Ok(())
}

fn excess_summarize(ctx: &Session, draws: &Path, out: &Path, plots: Option<&Path>) -> anyhow::Result<()> {
    let inputs = ctx.inputs()?;
    let excess = pipeline::excess_from_draws_file(&DrawsFile::load(draws)?)?;
    let point: PointEstimate = ctx.config.excess.point;
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    pipeline::write_excess_tables(dir, &excess, &inputs.population, &inputs.reported, point)?;
    if out.file_name() != Some("summary.csv".as_ref()) {
        std::fs::rename(dir.join("summary.csv"), out)?;
    }
    if let Some(p) = plots {
        pipeline::write_plot_tables(p, &excess, &inputs.population, point)?;
    }
    Ok(())
}

fn validate_cv(ctx: &Session, scheme: Option<CvScheme>, out: &Path) -> anyhow::Result<()> {
    let inputs = ctx.inputs()?;
    let fitted = pipeline::fit_stages(&ctx.config, &inputs, &mut StageCache::new(None))?;
    let scheme = scheme.unwrap_or(ctx.config.validation.scheme);
    let report = pipeline::cross_validate(&ctx.config, &inputs, &fitted.covariate, scheme)?;
    std::fs::create_dir_all(out)?;
    report.write_cells_csv(std::fs::File::create(out.join("cv_cells.csv"))?)?;
    write_json(&out.join("cv_report.json"), &report)?;
    let m = &report.metrics;
    println!(
        "cells {}  coverage 50/80/95: {:.1}/{:.1}/{:.1}%  bias {:.2}%  abs bias {:.2}%  rmse {:.4} (x1000 {:.3})",
        m.cells,
        100.0 * m.coverage50,
        100.0 * m.coverage80,
        100.0 * m.coverage95,
        m.relative_bias_pct,
        m.absolute_relative_bias_pct,
        m.rmse,
        m.rmse_x1000
    );
    Ok(())
}

/// Returns whether every check passed.
fn validate_sims(out: &Path, seed: Option<u64>, replications: Option<usize>) -> anyhow::Result<bool> {
    let mut config = SimulationSuiteConfig::default();
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(n) = replications {
        config.share_replications = n;
    }
    let report = run_simulation_suite(&config)?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("sims_report.json"), &report)?;
    let mut w = csv::Writer::from_path(out.join("sims_checks.csv"))?;
    w.write_record(["check", "passed", "detail"])?;
    for c in &report.checks {
        w.write_record([c.name.as_str(), &c.passed.to_string(), &c.detail])?;
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    w.flush()?;
    Ok(report.passed())
}

fn execute(cli: &Cli) -> anyhow::Result<ExitCode> {
    let ctx = Session::load(cli)?;
    if cli.print_config {
        print!("{}", ctx.config.to_toml());
        return Ok(ExitCode::SUCCESS);
    }
    let Some(command) = &cli.command else {
        bail!("no subcommand given; see --help");
    };
    match command {
        Command::Run { out, no_cache } => {
            let cache = if *no_cache { CacheLocation::Disabled } else { CacheLocation::InRun };
            let result = pipeline::run(&ctx.config, &ctx.data_dir, out, cache)?;
            for r in &result.stages {
                log::info!("{} {}", r.name, if r.cached { "cached" } else { "computed" });
            }
            println!("run written to {} ({} countries, {} draws)", out.display(), result.excess.countries.len(), result.metadata.draws);
        }
        Command::Expected { action: FitOnly::Fit(a) } => expected_fit(&ctx, a)?,
        Command::Seasonal { action: FitOnly::Fit(a) } => seasonal_fit(&ctx, a)?,
        Command::Covariate { action: FitOnly::Fit(a) } => covariate_fit(&ctx, a)?,
        Command::Subnational { action: FitOnly::Fit(a) } => subnational_fit(&ctx, a)?,
        Command::Excess { action: ExcessAction::Summarize { draws, out, plots } } => {
            excess_summarize(&ctx, draws, out, plots.as_deref())?
        }
        Command::Validate { action: ValidateAction::Cv { scheme, out } } => validate_cv(&ctx, *scheme, out)?,
        Command::Validate { action: ValidateAction::Sims { out, seed, replications } } => {
            if !validate_sims(out, *seed, *replications)? {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Simulate { out, seed } => {
            synth::write_world(out, *seed)?;
            println!("synthetic inputs and run.toml written to {}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map_or(1, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
