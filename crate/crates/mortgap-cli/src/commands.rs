//! Subcommand implementations.
//!
//! Commands exchange data through artifact files written by the library, so
//! every number in a table can be recomputed by calling the library on the
//! same artifacts.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use mortgap::eval::{
    dm_by_age_group, dm_csv, evaluate_fit, render_dm_table, render_report_table, report_csv,
    singleton_age_groups, EvalReport,
};
use mortgap::fit::{fit_model, read_fit, write_fit, FitResult, ModelKind, OptimSettings};
use mortgap::forecast::{forecast_gap, read_forecast, write_forecast, ForecastResult};
use mortgap::panel::{load_panel, write_panel_csv, CsvSchema, GapPanel, MortalityPanel};
use mortgap::sim::SimSpec;
use mortgap::Error;

use crate::{
    DataArgs, EvaluateArgs, FitArgs, ForecastArgs, GridArgs, PlotDataArgs, SimulateArgs,
};

pub enum CliError {
    /// Bad flags or inconsistent windows; the library was never reached.
    Usage(String),
    /// The library rejected the data or artifacts.
    Data(Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(message) => write!(f, "{message}"),
            CliError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

type CmdResult<T> = Result<T, CliError>;

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

// ---------------------------------------------------------------------------
// shared plumbing

fn load_data(args: &DataArgs) -> CmdResult<MortalityPanel> {
    let schema = match &args.schema {
        Some(spec) => CsvSchema::with_overrides(spec).map_err(CliError::Usage)?,
        None => CsvSchema::default(),
    };
    Ok(load_panel(&args.data, &schema)?)
}

/// Baseline must precede the holdout without overlap, and both windows must
/// lie inside the data. Baseline bounds themselves are validated by
/// subsetting.
fn check_windows(
    panel: &MortalityPanel,
    baseline: (i32, i32),
    holdout: Option<(i32, i32)>,
) -> CmdResult<()> {
    if let Some((hs, he)) = holdout {
        if hs <= baseline.1 {
            return Err(usage(format!(
                "holdout {hs}:{he} overlaps the baseline ending {}",
                baseline.1
            )));
        }
        let (first, last) = (panel.years()[0], *panel.years().last().expect("nonempty"));
        if hs < first || he > last {
            return Err(usage(format!(
                "holdout {hs}:{he} outside the data years {first}:{last}"
            )));
        }
    }
    Ok(())
}

fn ensure_dir(path: &Path) -> CmdResult<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| usage(format!("cannot create {}: {e}", path.display())))
}

fn parse_models(text: &str) -> CmdResult<Vec<ModelKind>> {
    let mut models = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let model = ModelKind::parse(part)
            .ok_or_else(|| usage(format!("unknown model {part:?} (expected dp, bp or skellam)")))?;
        if !models.contains(&model) {
            models.push(model);
        }
    }
    if models.is_empty() {
        return Err(usage("no models requested"));
    }
    Ok(models)
}

fn model_order(model: ModelKind) -> usize {
    ModelKind::ALL
        .iter()
        .position(|m| *m == model)
        .expect("every model is listed")
}

/// Reads fit and forecast artifacts, rejecting duplicates and forecasts
/// without a matching fit; both lists come back in a fixed model order.
fn read_artifacts(
    fit_paths: &[PathBuf],
    forecast_paths: &[PathBuf],
) -> CmdResult<(Vec<FitResult>, Vec<ForecastResult>)> {
    let mut fits: Vec<FitResult> = Vec::new();
    for path in fit_paths {
        let fit = read_fit(path)?;
        if fits.iter().any(|f| f.model == fit.model) {
            return Err(usage(format!("two fit artifacts for the {} model", fit.model)));
        }
        fits.push(fit);
    }
    let mut forecasts: Vec<ForecastResult> = Vec::new();
    for path in forecast_paths {
        let forecast = read_forecast(path)?;
        if forecasts.iter().any(|f| f.model == forecast.model) {
            return Err(usage(format!(
                "two forecast artifacts for the {} model",
                forecast.model
            )));
        }
        if !fits.iter().any(|f| f.model == forecast.model) {
            return Err(usage(format!(
                "forecast artifact for the {} model has no fit artifact",
                forecast.model
            )));
        }
        forecasts.push(forecast);
    }
    if !forecasts.is_empty() {
        for fit in &fits {
            if !forecasts.iter().any(|f| f.model == fit.model) {
                return Err(usage(format!(
                    "fit artifact for the {} model has no forecast artifact",
                    fit.model
                )));
            }
        }
    }
    fits.sort_by_key(|f| model_order(f.model));
    forecasts.sort_by_key(|f| model_order(f.model));
    Ok((fits, forecasts))
}

fn check_labels(fit: &FitResult, gap: &GapPanel) -> CmdResult<()> {
    if (fit.labels.0.as_str(), fit.labels.1.as_str()) != gap.labels() {
        return Err(CliError::Data(Error::ArtifactMismatch {
            reason: format!(
                "fit populations ({}, {}) do not match the panel's ({}, {})",
                fit.labels.0,
                fit.labels.1,
                gap.labels().0,
                gap.labels().1
            ),
        }));
    }
    Ok(())
}

fn check_forecast_window(forecast: &ForecastResult, holdout: &GapPanel) -> CmdResult<()> {
    if forecast.ages != holdout.ages() || forecast.years != holdout.years() {
        return Err(CliError::Data(Error::ArtifactMismatch {
            reason: format!(
                "{} forecast covers years {:?}, holdout panel has {:?}",
                forecast.model,
                forecast.years,
                holdout.years()
            ),
        }));
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> CmdResult<()> {
    std::fs::write(path, text).map_err(|e| {
        CliError::Data(Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    })
}

// ---------------------------------------------------------------------------
// simulate

pub fn simulate(args: &SimulateArgs) -> CmdResult<ExitCode> {
    let mut spec = SimSpec::load(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let panel = mortgap::sim::simulate_panel(&spec)?;
    write_panel_csv(&panel, &CsvSchema::default(), &args.out)?;
    println!(
        "wrote {}: {} age groups x {} years, populations {} and {}",
        args.out.display(),
        panel.n_ages(),
        panel.n_years(),
        panel.labels().0,
        panel.labels().1
    );
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// fit

fn fit_window(
    panel: &MortalityPanel,
    baseline: (i32, i32),
    age_min: Option<&str>,
    models: &[ModelKind],
    settings: &OptimSettings,
    out: &Path,
) -> CmdResult<Vec<FitResult>> {
    let sub = panel.subset(age_min, Some(baseline))?;
    let mut fits = Vec::new();
    for &model in models {
        let fit = fit_model(model, &sub, settings)?;
        write_fit(&fit, out.join(format!("fit_{}.txt", model.short_name())))?;
        let status = if fit.converged {
            "converged"
        } else {
            "DID NOT CONVERGE"
        };
        println!(
            "fit {}: log_lik {:.4}, {} parameters, {} iterations, {status}",
            model,
            fit.log_lik,
            fit.n_params(),
            fit.iterations
        );
        for warning in &fit.warnings {
            println!("  warning: {warning}");
        }
        fits.push(fit);
    }
    Ok(fits)
}

pub fn fit(args: &FitArgs) -> CmdResult<ExitCode> {
    let panel = load_data(&args.data)?;
    check_windows(&panel, args.baseline, args.holdout)?;
    let models = parse_models(&args.models)?;
    ensure_dir(&args.out)?;
    let settings = OptimSettings {
        max_iterations: args.max_iterations,
        ..OptimSettings::default()
    };
    let fits = fit_window(
        &panel,
        args.baseline,
        args.age_min.as_deref(),
        &models,
        &settings,
        &args.out,
    )?;
    if fits.iter().all(|f| f.converged) {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(2))
    }
}

// ---------------------------------------------------------------------------
// forecast

fn forecast_fit(fit: &FitResult, holdout: (i32, i32), out: &Path) -> CmdResult<ForecastResult> {
    let origin = *fit.years.last().expect("fit has years");
    let (hs, he) = holdout;
    if hs != origin + 1 {
        return Err(usage(format!(
            "holdout {hs}:{he} must start the year after the {} fit window ends ({origin})",
            fit.model
        )));
    }
    let forecast = forecast_gap(fit, (he - origin) as usize)?;
    write_forecast(
        &forecast,
        out.join(format!("forecast_{}.txt", fit.model.short_name())),
    )?;
    println!(
        "forecast {}: {} years from {}, period drift ({:.5}, {:.5})",
        fit.model,
        forecast.years.len(),
        origin,
        forecast.drift[0],
        forecast.drift[1]
    );
    Ok(forecast)
}

pub fn forecast(args: &ForecastArgs) -> CmdResult<ExitCode> {
    ensure_dir(&args.out)?;
    for path in &args.fit {
        let fit = read_fit(path)?;
        forecast_fit(&fit, args.holdout, &args.out)?;
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// evaluate

fn build_reports(
    in_gap: &GapPanel,
    hold_gap: Option<&GapPanel>,
    fits: &[FitResult],
    forecasts: &[ForecastResult],
    mape_min_abs: f64,
) -> CmdResult<Vec<EvalReport>> {
    let mut reports = Vec::new();
    for fit in fits {
        check_labels(fit, in_gap)?;
        let holdout_pair = match (
            forecasts.iter().find(|f| f.model == fit.model),
            hold_gap,
        ) {
            (Some(forecast), Some(panel)) => Some((forecast, panel)),
            (Some(_), None) => {
                return Err(usage("forecast artifacts given without a holdout window"))
            }
            (None, _) => None,
        };
        reports.push(evaluate_fit(fit, in_gap, holdout_pair, mape_min_abs)?);
    }
    Ok(reports)
}

fn report_header(
    in_gap: &GapPanel,
    hold_gap: Option<&GapPanel>,
    mape_min_abs: f64,
) -> String {
    let mut header = format!(
        "populations = {} vs {}\nbaseline = {}..{}\n",
        in_gap.labels().0,
        in_gap.labels().1,
        in_gap.years()[0],
        in_gap.years().last().expect("nonempty"),
    );
    if let Some(hold) = hold_gap {
        header.push_str(&format!(
            "holdout = {}..{}\n",
            hold.years()[0],
            hold.years().last().expect("nonempty")
        ));
    }
    header.push_str(&format!(
        "age_groups = {} .. {} ({})\nmape_min_abs = {}\n\n",
        in_gap.ages()[0],
        in_gap.ages().last().expect("nonempty"),
        in_gap.ages().len(),
        mape_min_abs
    ));
    header
}

/// Writes report.txt and report.csv; returns the rendered text.
fn write_report_files(
    dir: &Path,
    header: &str,
    reports: &[EvalReport],
) -> CmdResult<String> {
    let text = format!("{header}{}", render_report_table(reports));
    write_file(&dir.join("report.txt"), &text)?;
    write_file(&dir.join("report.csv"), &report_csv(reports))?;
    Ok(text)
}

/// Writes dm_skellam_vs_<model>.{txt,csv} for every Poisson-family forecast
/// when a Skellam forecast is present; returns the rendered tables.
fn write_dm_files(
    dir: &Path,
    hold_gap: &GapPanel,
    forecasts: &[ForecastResult],
) -> CmdResult<Vec<String>> {
    let Some(skellam) = forecasts.iter().find(|f| f.model == ModelKind::Skellam) else {
        return Ok(Vec::new());
    };
    check_forecast_window(skellam, hold_gap)?;
    let groups = singleton_age_groups(hold_gap.ages());
    let mut tables = Vec::new();
    for other in forecasts
        .iter()
        .filter(|f| f.model != ModelKind::Skellam)
    {
        check_forecast_window(other, hold_gap)?;
        let results = dm_by_age_group(hold_gap, &skellam.gap, &other.gap, &groups)?;
        let text = render_dm_table(ModelKind::Skellam, other.model, &results);
        write_file(
            &dir.join(format!("dm_skellam_vs_{}.txt", other.model.short_name())),
            &text,
        )?;
        write_file(
            &dir.join(format!("dm_skellam_vs_{}.csv", other.model.short_name())),
            &dm_csv(ModelKind::Skellam, other.model, &results),
        )?;
        tables.push(text);
    }
    Ok(tables)
}

pub fn evaluate(args: &EvaluateArgs) -> CmdResult<ExitCode> {
    let panel = load_data(&args.data)?;
    check_windows(&panel, args.baseline, args.holdout)?;
    let in_gap = panel
        .subset(args.age_min.as_deref(), Some(args.baseline))?
        .to_gap();
    let hold_gap = args
        .holdout
        .map(|window| -> CmdResult<GapPanel> {
            Ok(panel.subset(args.age_min.as_deref(), Some(window))?.to_gap())
        })
        .transpose()?;
    let (fits, forecasts) = read_artifacts(&args.fit, &args.forecast)?;
    let reports = build_reports(
        &in_gap,
        hold_gap.as_ref(),
        &fits,
        &forecasts,
        args.mape_min_abs,
    )?;
    ensure_dir(&args.out)?;
    let header = report_header(&in_gap, hold_gap.as_ref(), args.mape_min_abs);
    let text = write_report_files(&args.out, &header, &reports)?;
    print!("{text}");
    if let Some(hold) = &hold_gap {
        for table in write_dm_files(&args.out, hold, &forecasts)? {
            println!("\n{table}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// plot data

/// Heatmap rows (model, age, year, rmse over the holdout) and scatter rows
/// (model, age, year, observed gap, predicted gap, phase in|out).
fn write_plot_files(
    dir: &Path,
    in_gap: &GapPanel,
    hold_gap: Option<&GapPanel>,
    fits: &[FitResult],
    forecasts: &[ForecastResult],
) -> CmdResult<()> {
    let mut heatmap = String::from("model,age,year,rmse\n");
    if let Some(hold) = hold_gap {
        for forecast in forecasts {
            check_forecast_window(forecast, hold)?;
            for (i, age) in hold.ages().iter().enumerate() {
                for (j, year) in hold.years().iter().enumerate() {
                    let error = forecast.gap.get(i, j) - hold.gaps().get(i, j) as f64;
                    heatmap.push_str(&format!(
                        "{},{age},{year},{}\n",
                        forecast.model.short_name(),
                        error.abs()
                    ));
                }
            }
        }
    }
    write_file(&dir.join("heatmap.csv"), &heatmap)?;

    let mut scatter = String::from("model,age,year,observed_gap,predicted_gap,phase\n");
    for fit in fits {
        check_labels(fit, in_gap)?;
        if fit.ages != in_gap.ages() || fit.years != in_gap.years() {
            return Err(CliError::Data(Error::ArtifactMismatch {
                reason: format!(
                    "{} fit covers years {:?}, baseline panel has {:?}",
                    fit.model,
                    fit.years,
                    in_gap.years()
                ),
            }));
        }
        let fitted = fit.fitted_gap()?;
        for (i, age) in in_gap.ages().iter().enumerate() {
            for (j, year) in in_gap.years().iter().enumerate() {
                scatter.push_str(&format!(
                    "{},{age},{year},{},{},in\n",
                    fit.model.short_name(),
                    in_gap.gaps().get(i, j),
                    fitted.get(i, j)
                ));
            }
        }
        let (Some(forecast), Some(hold)) = (
            forecasts.iter().find(|f| f.model == fit.model),
            hold_gap,
        ) else {
            continue;
        };
        for (i, age) in hold.ages().iter().enumerate() {
            for (j, year) in hold.years().iter().enumerate() {
                scatter.push_str(&format!(
                    "{},{age},{year},{},{},out\n",
                    fit.model.short_name(),
                    hold.gaps().get(i, j),
                    forecast.gap.get(i, j)
                ));
            }
        }
    }
    write_file(&dir.join("scatter.csv"), &scatter)
}

pub fn plot_data(args: &PlotDataArgs) -> CmdResult<ExitCode> {
    let panel = load_data(&args.data)?;
    check_windows(&panel, args.baseline, args.holdout)?;
    let in_gap = panel
        .subset(args.age_min.as_deref(), Some(args.baseline))?
        .to_gap();
    let hold_gap = args
        .holdout
        .map(|window| -> CmdResult<GapPanel> {
            Ok(panel.subset(args.age_min.as_deref(), Some(window))?.to_gap())
        })
        .transpose()?;
    let (fits, forecasts) = read_artifacts(&args.fit, &args.forecast)?;
    ensure_dir(&args.out)?;
    write_plot_files(&args.out, &in_gap, hold_gap.as_ref(), &fits, &forecasts)?;
    println!(
        "wrote {} and {}",
        args.out.join("heatmap.csv").display(),
        args.out.join("scatter.csv").display()
    );
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// grid

pub fn grid(args: &GridArgs) -> CmdResult<ExitCode> {
    let baselines: Vec<(i32, i32)> = args
        .baselines
        .split(',')
        .map(|part| crate::parse_window(part.trim()).map_err(usage))
        .collect::<CmdResult<_>>()?;
    if baselines.is_empty() {
        return Err(usage("no baselines requested"));
    }
    let age_mins: Vec<Option<String>> = args
        .age_mins
        .split(',')
        .map(|part| {
            let part = part.trim();
            (part != "all" && !part.is_empty()).then(|| part.to_string())
        })
        .collect();
    let models = parse_models(&args.models)?;
    let panel = load_data(&args.data)?;
    let settings = OptimSettings {
        max_iterations: args.max_iterations,
        ..OptimSettings::default()
    };
    let (hs, he) = args.holdout;
    let mut all_converged = true;
    for &(bs, be) in &baselines {
        check_windows(&panel, (bs, be), Some(args.holdout))?;
        if hs != be + 1 {
            return Err(usage(format!(
                "holdout {hs}:{he} must start the year after baseline {bs}:{be}"
            )));
        }
        for age_min in &age_mins {
            let dir = args.out.join(format!(
                "b{bs}-{be}_age-{}",
                age_min.as_deref().unwrap_or("all")
            ));
            ensure_dir(&dir)?;
            println!(
                "--- baseline {bs}:{be}, ages {} ---",
                age_min.as_deref().unwrap_or("all")
            );
            let fits = fit_window(&panel, (bs, be), age_min.as_deref(), &models, &settings, &dir)?;
            all_converged &= fits.iter().all(|f| f.converged);
            let mut forecasts = Vec::new();
            for fit in &fits {
                forecasts.push(forecast_fit(fit, args.holdout, &dir)?);
            }
            let in_gap = panel.subset(age_min.as_deref(), Some((bs, be)))?.to_gap();
            let hold_gap = panel.subset(age_min.as_deref(), Some(args.holdout))?.to_gap();
            let reports = build_reports(
                &in_gap,
                Some(&hold_gap),
                &fits,
                &forecasts,
                args.mape_min_abs,
            )?;
            let header = report_header(&in_gap, Some(&hold_gap), args.mape_min_abs);
            let text = write_report_files(&dir, &header, &reports)?;
            print!("{text}");
            for table in write_dm_files(&dir, &hold_gap, &forecasts)? {
                println!("\n{table}");
            }
            write_plot_files(&dir, &in_gap, Some(&hold_gap), &fits, &forecasts)?;
            println!("wrote {}\n", dir.display());
        }
    }
    if all_converged {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(2))
    }
}
