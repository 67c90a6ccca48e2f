//! Command-line pipeline for mortality-gap models.
//!
//! Subcommands pass artifacts to each other through files, so each stage
//! can be cached, inspected or rerun independently:
//!
//! ```text
//! mortgap simulate --spec sim.cfg --out panel.csv
//! mortgap fit      --data panel.csv --baseline 1961:2000 --out run/
//! mortgap forecast --fit run/fit_dp.txt ... --holdout 2001:2015 --out run/
//! mortgap evaluate --data panel.csv --baseline 1961:2000 --holdout 2001:2015 \
//!                  --fit run/fit_dp.txt ... --forecast run/forecast_dp.txt ... --out run/
//! mortgap plot-data ... --out run/
//! mortgap grid     --data panel.csv --baselines 1961:2000,1971:2000 --holdout 2001:2015 --out runs/
//! ```
//!
//! Exit codes: 0 success, 1 usage or data error, 2 at least one model did
//! not converge (its artifacts are still written).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "mortgap",
    version,
    about = "Fit, forecast and evaluate mortality-gap count models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panel CSV from a simulation spec
    Simulate(SimulateArgs),
    /// Fit models on a baseline window and write fit artifacts
    Fit(FitArgs),
    /// Project fitted models over a holdout window
    Forecast(ForecastArgs),
    /// Score fits and forecasts; write comparison tables
    Evaluate(EvaluateArgs),
    /// Emit tidy rows for accuracy heatmaps and gap-vs-time scatters
    PlotData(PlotDataArgs),
    /// Run the full baseline x age-range x model grid in one call
    Grid(GridArgs),
}

fn parse_window(text: &str) -> Result<(i32, i32), String> {
    let (start, end) = text
        .split_once(':')
        .ok_or_else(|| format!("expected START:END, got {text:?}"))?;
    let start: i32 = start
        .trim()
        .parse()
        .map_err(|_| format!("bad start year {start:?}"))?;
    let end: i32 = end
        .trim()
        .parse()
        .map_err(|_| format!("bad end year {end:?}"))?;
    if start > end {
        return Err(format!("window {start}:{end} is reversed"));
    }
    Ok((start, end))
}

/// Data source shared by every command that reads a panel.
#[derive(Args, Clone)]
struct DataArgs {
    /// Long-format CSV with one row per (age, year, population) cell
    #[arg(long)]
    data: PathBuf,
    /// Column-name overrides, e.g. "age=Age,count=Deaths"
    #[arg(long)]
    schema: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation spec (key = value lines)
    #[arg(long)]
    spec: PathBuf,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
    /// Override the seed in the spec
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Estimation window, inclusive
    #[arg(long, value_parser = parse_window)]
    baseline: (i32, i32),
    /// Holdout window; validated against the baseline when given
    #[arg(long, value_parser = parse_window)]
    holdout: Option<(i32, i32)>,
    /// Drop age groups below this label's lower bound
    #[arg(long)]
    age_min: Option<String>,
    /// Comma-separated subset of dp, bp, skellam
    #[arg(long, default_value = "dp,bp,skellam")]
    models: String,
    /// Iteration cap for Newton and BFGS
    #[arg(long, default_value_t = 2000)]
    max_iterations: usize,
    /// Output directory for fit_<model>.txt artifacts
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ForecastArgs {
    /// Fit artifact(s) to project (repeatable)
    #[arg(long, required = true)]
    fit: Vec<PathBuf>,
    /// Forecast window; must start the year after each fit ends
    #[arg(long, value_parser = parse_window)]
    holdout: (i32, i32),
    /// Output directory for forecast_<model>.txt artifacts
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_window)]
    baseline: (i32, i32),
    #[arg(long, value_parser = parse_window)]
    holdout: Option<(i32, i32)>,
    #[arg(long)]
    age_min: Option<String>,
    /// Fit artifact(s) to score (repeatable)
    #[arg(long, required = true)]
    fit: Vec<PathBuf>,
    /// Forecast artifact(s); when given, one per fit model is required
    #[arg(long)]
    forecast: Vec<PathBuf>,
    /// Cells with |gap| below this are excluded from MAPE
    #[arg(long, default_value_t = 1.0)]
    mape_min_abs: f64,
    /// Output directory for report and test tables
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotDataArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_window)]
    baseline: (i32, i32),
    #[arg(long, value_parser = parse_window)]
    holdout: Option<(i32, i32)>,
    #[arg(long)]
    age_min: Option<String>,
    #[arg(long, required = true)]
    fit: Vec<PathBuf>,
    #[arg(long)]
    forecast: Vec<PathBuf>,
    /// Output directory for heatmap.csv and scatter.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated estimation windows, e.g. 1961:2000,1971:2000
    #[arg(long)]
    baselines: String,
    #[arg(long, value_parser = parse_window)]
    holdout: (i32, i32),
    /// Comma-separated age cutoffs; "all" keeps every age group
    #[arg(long, default_value = "all")]
    age_mins: String,
    #[arg(long, default_value = "dp,bp,skellam")]
    models: String,
    #[arg(long, default_value_t = 1.0)]
    mape_min_abs: f64,
    #[arg(long, default_value_t = 2000)]
    max_iterations: usize,
    /// Root output directory; one subdirectory per configuration
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are not usage errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => commands::simulate(&args),
        Command::Fit(args) => commands::fit(&args),
        Command::Forecast(args) => commands::forecast(&args),
        Command::Evaluate(args) => commands::evaluate(&args),
        Command::PlotData(args) => commands::plot_data(&args),
        Command::Grid(args) => commands::grid(&args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
