//! Model comparison: information criteria, error metrics, and the
//! Diebold-Mariano test of pairwise forecast accuracy.
//!
//! A caveat on cross-family criteria: the gap model's likelihood lives on
//! observed differences while the count models' likelihoods live on pairs
//! of counts, so their information criteria compare fit on different sample
//! spaces. The report prints them side by side regardless; read the gap
//! model's column with that in mind.

use std::path::Path;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::fit::{FitResult, ModelKind};
use crate::forecast::ForecastResult;
use crate::grid::Grid;
use crate::panel::GapPanel;

/// Default threshold below which a cell's absolute gap is too small to
/// contribute a percentage error.
pub const DEFAULT_MAPE_MIN_ABS: f64 = 1.0;

// ---------------------------------------------------------------------------
// information criteria

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InformationCriteria {
    pub aic: f64,
    /// Small-sample correction; absent when `n <= p + 1`.
    pub aicc: Option<f64>,
    pub bic: f64,
}

/// AIC, AICc and BIC from a log-likelihood, parameter count and sample size.
///
/// The sample size is the number of observation cells: each cell is one
/// observed pair for the count models and one observed difference for the
/// gap model.
pub fn information_criteria(log_lik: f64, p: usize, n: usize) -> InformationCriteria {
    let pf = p as f64;
    let aic = 2.0 * pf - 2.0 * log_lik;
    let aicc = if n > p + 1 {
        Some(aic + (2.0 * pf * pf + 2.0 * pf) / ((n - p - 1) as f64))
    } else {
        None
    };
    InformationCriteria {
        aic,
        aicc,
        bic: pf * (n as f64).ln() - 2.0 * log_lik,
    }
}

// ---------------------------------------------------------------------------
// error metrics

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    pub rmse: f64,
    pub mae: f64,
    /// Mean absolute percentage error; absent when every cell was excluded.
    pub mape: Option<f64>,
    /// Cells contributing to RMSE and MAE.
    pub cells_used: usize,
    /// Cells whose absolute actual value fell below the MAPE threshold.
    pub mape_excluded: usize,
}

/// RMSE, MAE and MAPE of a predicted surface against an actual one.
///
/// Every aligned cell contributes to RMSE and MAE. Cells with
/// `|actual| < mape_min_abs` are excluded from MAPE (division by a
/// near-zero gap) and counted instead.
pub fn error_metrics(
    actual: &Grid<f64>,
    predicted: &Grid<f64>,
    mape_min_abs: f64,
) -> Result<ErrorMetrics> {
    if !actual.same_shape(predicted) {
        return Err(Error::DimensionMismatch {
            reason: format!(
                "actual surface is {}x{}, predicted is {}x{}",
                actual.n_ages(),
                actual.n_years(),
                predicted.n_ages(),
                predicted.n_years()
            ),
        });
    }
    if actual.is_empty() {
        return Err(Error::EmptyInput {
            what: "error-metric cell set",
        });
    }
    let mut sq_sum = 0.0;
    let mut abs_sum = 0.0;
    let mut pct_sum = 0.0;
    let mut pct_n = 0usize;
    for (age, year, a) in actual.cells() {
        let e = predicted.get(age, year) - a;
        sq_sum += e * e;
        abs_sum += e.abs();
        if a.abs() >= mape_min_abs {
            pct_sum += (e / a).abs() * 100.0;
            pct_n += 1;
        }
    }
    let n = actual.len() as f64;
    let metrics = ErrorMetrics {
        rmse: (sq_sum / n).sqrt(),
        mae: abs_sum / n,
        mape: (pct_n > 0).then(|| pct_sum / pct_n as f64),
        cells_used: actual.len(),
        mape_excluded: actual.len() - pct_n,
    };
    // power-mean inequality; small slack for rounding
    assert!(
        metrics.rmse >= metrics.mae * (1.0 - 1e-12),
        "RMSE {} below MAE {}",
        metrics.rmse,
        metrics.mae
    );
    Ok(metrics)
}

/// Convenience wrapper scoring a surface against integer gap observations.
pub fn gap_error_metrics(
    actual: &Grid<i64>,
    predicted: &Grid<f64>,
    mape_min_abs: f64,
) -> Result<ErrorMetrics> {
    error_metrics(&actual.map(|v| v as f64), predicted, mape_min_abs)
}

// ---------------------------------------------------------------------------
// Diebold-Mariano test

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Significance {
    None,
    FivePercent,
    OnePercent,
    TenthPercent,
}

impl Significance {
    pub fn from_p_value(p: f64) -> Self {
        if p < 0.001 {
            Significance::TenthPercent
        } else if p < 0.01 {
            Significance::OnePercent
        } else if p < 0.05 {
            Significance::FivePercent
        } else {
            Significance::None
        }
    }

    /// Star convention: `*` 5%, `**` 1%, `***` 0.1%.
    pub fn stars(self) -> &'static str {
        match self {
            Significance::None => "",
            Significance::FivePercent => "*",
            Significance::OnePercent => "**",
            Significance::TenthPercent => "***",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DmOutcome {
    Computed {
        statistic: f64,
        /// Two-sided, standard normal reference.
        p_value: f64,
        significance: Significance,
    },
    /// The loss differential had zero sample variance, so the statistic is
    /// undefined; its mean records which series lost (zero: identical).
    Degenerate { mean_differential: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmResult {
    pub group: String,
    /// Number of error pairs.
    pub n: usize,
    pub outcome: DmOutcome,
}

/// Diebold-Mariano test with squared-error loss.
///
/// The loss differential is `d_t = e1_t^2 - e2_t^2`; the statistic is
/// `mean(d) / sqrt(var(d) / N)` with the plain sample variance
/// (denominator `N - 1`). Multi-step forecast errors are autocorrelated,
/// which this plain variance ignores; no long-run correction is applied.
/// Negative statistics favor the first series.
pub fn dm_test(errors_1: &[f64], errors_2: &[f64]) -> Result<DmOutcome> {
    if errors_1.len() != errors_2.len() {
        return Err(Error::LengthMismatch {
            a: errors_1.len(),
            b: errors_2.len(),
        });
    }
    let n = errors_1.len();
    if n < 2 {
        return Err(Error::DmTooShort { got: n });
    }
    let d: Vec<f64> = errors_1
        .iter()
        .zip(errors_2)
        .map(|(a, b)| a * a - b * b)
        .collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let variance = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    if variance == 0.0 {
        return Ok(DmOutcome::Degenerate {
            mean_differential: mean,
        });
    }
    let statistic = mean / (variance / n as f64).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p_value = 2.0 * normal.cdf(-statistic.abs());
    Ok(DmOutcome::Computed {
        statistic,
        p_value,
        significance: Significance::from_p_value(p_value),
    })
}

/// An age-group partition entry: a display name and its member age labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeGroup {
    pub name: String,
    pub ages: Vec<String>,
}

/// One group per panel age label, in panel order.
pub fn singleton_age_groups(ages: &[String]) -> Vec<AgeGroup> {
    ages.iter()
        .map(|a| AgeGroup {
            name: a.clone(),
            ages: vec![a.clone()],
        })
        .collect()
}

fn group_year_errors(
    actual: &GapPanel,
    forecast: &Grid<f64>,
    rows: &[usize],
) -> Vec<f64> {
    (0..actual.years().len())
        .map(|j| {
            rows.iter()
                .map(|&i| forecast.get(i, j) - actual.gaps().get(i, j) as f64)
                .sum()
        })
        .collect()
}

/// Diebold-Mariano tests per age group over the holdout years.
///
/// Gaps of the ages within a group are summed per year before the error
/// series are formed, giving one test per group with one error pair per
/// holdout year. Groups with no member ages are skipped.
pub fn dm_by_age_group(
    actual: &GapPanel,
    forecast_1: &Grid<f64>,
    forecast_2: &Grid<f64>,
    groups: &[AgeGroup],
) -> Result<Vec<DmResult>> {
    for (name, grid) in [("first", forecast_1), ("second", forecast_2)] {
        if grid.n_ages() != actual.ages().len() || grid.n_years() != actual.years().len() {
            return Err(Error::DimensionMismatch {
                reason: format!(
                    "{} forecast is {}x{}, holdout panel is {}x{}",
                    name,
                    grid.n_ages(),
                    grid.n_years(),
                    actual.ages().len(),
                    actual.years().len()
                ),
            });
        }
    }
    let mut results = Vec::new();
    for group in groups {
        if group.ages.is_empty() {
            continue;
        }
        let rows: Vec<usize> = group
            .ages
            .iter()
            .map(|label| {
                actual
                    .ages()
                    .iter()
                    .position(|a| a == label)
                    .ok_or_else(|| Error::UnknownAgeLabel {
                        group: group.name.clone(),
                        label: label.clone(),
                    })
            })
            .collect::<Result<_>>()?;
        let e1 = group_year_errors(actual, forecast_1, &rows);
        let e2 = group_year_errors(actual, forecast_2, &rows);
        results.push(DmResult {
            group: group.name.clone(),
            n: e1.len(),
            outcome: dm_test(&e1, &e2)?,
        });
    }
    Ok(results)
}

// ---------------------------------------------------------------------------
// report assembly

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: ModelKind,
    pub log_lik: f64,
    pub n_params: usize,
    pub n_obs: usize,
    pub criteria: InformationCriteria,
    /// Fitted gap scored against the estimation window.
    pub in_sample: ErrorMetrics,
    /// Forecast gap scored against the holdout window, when one was given.
    pub out_of_sample: Option<ErrorMetrics>,
}

fn check_alignment(
    what: &str,
    ages: &[String],
    years: &[i32],
    panel_ages: &[String],
    panel_years: &[i32],
) -> Result<()> {
    if ages != panel_ages {
        return Err(Error::ArtifactMismatch {
            reason: format!(
                "{what} age groups {:?} do not match the panel's {:?}",
                ages, panel_ages
            ),
        });
    }
    if years != panel_years {
        return Err(Error::ArtifactMismatch {
            reason: format!(
                "{what} years {:?} do not match the panel's {:?}",
                years, panel_years
            ),
        });
    }
    Ok(())
}

/// Scores a fit in sample and, optionally, its forecast out of sample.
///
/// The fitted and forecast surfaces must cover exactly the ages and years
/// of the panels they are scored against.
pub fn evaluate_fit(
    fit: &FitResult,
    in_sample: &GapPanel,
    holdout: Option<(&ForecastResult, &GapPanel)>,
    mape_min_abs: f64,
) -> Result<EvalReport> {
    check_alignment("fit", &fit.ages, &fit.years, in_sample.ages(), in_sample.years())?;
    let in_metrics = gap_error_metrics(in_sample.gaps(), &fit.fitted_gap()?, mape_min_abs)?;
    let out_metrics = holdout
        .map(|(forecast, panel)| {
            if forecast.model != fit.model {
                return Err(Error::ArtifactMismatch {
                    reason: format!(
                        "forecast was made from a {} fit, report is for {}",
                        forecast.model, fit.model
                    ),
                });
            }
            check_alignment(
                "forecast",
                &forecast.ages,
                &forecast.years,
                panel.ages(),
                panel.years(),
            )?;
            gap_error_metrics(panel.gaps(), &forecast.gap, mape_min_abs)
        })
        .transpose()?;
    Ok(EvalReport {
        model: fit.model,
        log_lik: fit.log_lik,
        n_params: fit.n_params(),
        n_obs: fit.n_obs,
        criteria: information_criteria(fit.log_lik, fit.n_params(), fit.n_obs),
        in_sample: in_metrics,
        out_of_sample: out_metrics,
    })
}

// ---------------------------------------------------------------------------
// rendering

/// Orders column values and annotates the best and second best.
fn rank_annotations(values: &[Option<f64>], larger_is_better: bool) -> Vec<&'static str> {
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (values[a].unwrap(), values[b].unwrap());
        if larger_is_better {
            y.partial_cmp(&x).expect("finite criteria")
        } else {
            x.partial_cmp(&y).expect("finite criteria")
        }
    });
    let mut out = vec![""; values.len()];
    if order.len() >= 2 {
        out[order[0]] = " (1st)";
        out[order[1]] = " (2nd)";
    }
    out
}

fn render_aligned(headers: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    let emit = |out: &mut String, cells: &[String]| {
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            if i == 0 {
                out.push_str(&format!("{:<width$}", cell, width = widths[i]));
            } else {
                out.push_str(&format!("{:>width$}", cell, width = widths[i]));
            }
        }
        while out.ends_with(' ') {
            out.pop();
        }
        out.push('\n');
    };
    emit(&mut out, &headers.to_vec());
    for row in rows {
        emit(&mut out, row);
    }
    out
}

fn fmt_value(v: Option<f64>, annotation: &str) -> String {
    match v {
        Some(v) => format!("{v:.3}{annotation}"),
        None => "-".to_string(),
    }
}

/// Criteria and error tables across models, best two per column annotated.
///
/// Column order follows the comparison-table convention: criteria first
/// (BIC, AIC, AICc), then in-sample errors, then an out-of-sample block
/// when any report has one. Lower is better in every column.
pub fn render_report_table(reports: &[EvalReport]) -> String {
    let columns: Vec<(&str, bool, Box<dyn Fn(&EvalReport) -> Option<f64>>)> = vec![
        ("BIC", false, Box::new(|r: &EvalReport| Some(r.criteria.bic))),
        ("AIC", false, Box::new(|r: &EvalReport| Some(r.criteria.aic))),
        ("AICc", false, Box::new(|r: &EvalReport| r.criteria.aicc)),
        ("RMSE", false, Box::new(|r: &EvalReport| Some(r.in_sample.rmse))),
        ("MAE", false, Box::new(|r: &EvalReport| Some(r.in_sample.mae))),
        ("MAPE%", false, Box::new(|r: &EvalReport| r.in_sample.mape)),
    ];
    let out_columns: Vec<(&str, Box<dyn Fn(&EvalReport) -> Option<f64>>)> = vec![
        (
            "RMSE",
            Box::new(|r: &EvalReport| r.out_of_sample.map(|m| m.rmse)),
        ),
        (
            "MAE",
            Box::new(|r: &EvalReport| r.out_of_sample.map(|m| m.mae)),
        ),
        (
            "MAPE%",
            Box::new(|r: &EvalReport| r.out_of_sample.and_then(|m| m.mape)),
        ),
    ];

    let mut text = String::from("In-sample\n");
    let mut headers = vec!["model".to_string()];
    headers.extend(columns.iter().map(|(h, _, _)| h.to_string()));
    let mut rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| vec![r.model.short_name().to_string()])
        .collect();
    for (_, larger_better, get) in &columns {
        let values: Vec<Option<f64>> = reports.iter().map(|r| get(r)).collect();
        let marks = rank_annotations(&values, *larger_better);
        for (i, row) in rows.iter_mut().enumerate() {
            row.push(fmt_value(values[i], marks[i]));
        }
    }
    text.push_str(&render_aligned(&headers, &rows));

    if reports.iter().any(|r| r.out_of_sample.is_some()) {
        text.push_str("\nOut-of-sample\n");
        let mut headers = vec!["model".to_string()];
        headers.extend(out_columns.iter().map(|(h, _)| h.to_string()));
        let mut rows: Vec<Vec<String>> = reports
            .iter()
            .map(|r| vec![r.model.short_name().to_string()])
            .collect();
        for (_, get) in &out_columns {
            let values: Vec<Option<f64>> = reports.iter().map(|r| get(r)).collect();
            let marks = rank_annotations(&values, false);
            for (i, row) in rows.iter_mut().enumerate() {
                row.push(fmt_value(values[i], marks[i]));
            }
        }
        text.push_str(&render_aligned(&headers, &rows));
    }
    text
}

/// Aligned table of per-group test results for one model pair.
///
/// Negative statistics favor the first model. Stars: `*` 5%, `**` 1%,
/// `***` 0.1%.
pub fn render_dm_table(model_1: ModelKind, model_2: ModelKind, results: &[DmResult]) -> String {
    let headers: Vec<String> = ["age group", "n", "DM", "p", ""]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| match r.outcome {
            DmOutcome::Computed {
                statistic,
                p_value,
                significance,
            } => vec![
                r.group.clone(),
                r.n.to_string(),
                format!("{statistic:.3}"),
                format!("{p_value:.4}"),
                significance.stars().to_string(),
            ],
            DmOutcome::Degenerate { mean_differential } => vec![
                r.group.clone(),
                r.n.to_string(),
                "degenerate".to_string(),
                format!("mean diff {mean_differential:.3}"),
                String::new(),
            ],
        })
        .collect();
    format!(
        "Forecast accuracy: {} vs {} (negative favors {})\n{}",
        model_1.short_name(),
        model_2.short_name(),
        model_1.short_name(),
        render_aligned(&headers, &rows)
    )
}

// ---------------------------------------------------------------------------
// tidy machine-readable rows

fn push_metric(out: &mut String, model: ModelKind, section: &str, metric: &str, value: f64) {
    out.push_str(&format!("{},{section},{metric},{value}\n", model.short_name()));
}

/// Tidy rows `model,section,metric,value`, one metric per line.
///
/// No quoting is needed: model names and metric names contain no commas.
pub fn report_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("model,section,metric,value\n");
    for r in reports {
        let m = r.model;
        push_metric(&mut out, m, "fit", "log_lik", r.log_lik);
        push_metric(&mut out, m, "fit", "n_params", r.n_params as f64);
        push_metric(&mut out, m, "fit", "n_obs", r.n_obs as f64);
        push_metric(&mut out, m, "fit", "aic", r.criteria.aic);
        if let Some(aicc) = r.criteria.aicc {
            push_metric(&mut out, m, "fit", "aicc", aicc);
        }
        push_metric(&mut out, m, "fit", "bic", r.criteria.bic);
        for (section, metrics) in [
            ("in_sample", Some(r.in_sample)),
            ("out_of_sample", r.out_of_sample),
        ] {
            let Some(metrics) = metrics else { continue };
            push_metric(&mut out, m, section, "rmse", metrics.rmse);
            push_metric(&mut out, m, section, "mae", metrics.mae);
            if let Some(mape) = metrics.mape {
                push_metric(&mut out, m, section, "mape", mape);
            }
            push_metric(&mut out, m, section, "cells_used", metrics.cells_used as f64);
            push_metric(
                &mut out,
                m,
                section,
                "mape_excluded",
                metrics.mape_excluded as f64,
            );
        }
    }
    out
}

/// Tidy rows `model_1,model_2,group,n,statistic,p_value,stars` with
/// `degenerate` in the statistic column when the test was undefined.
pub fn dm_csv(model_1: ModelKind, model_2: ModelKind, results: &[DmResult]) -> String {
    let mut out = String::from("model_1,model_2,group,n,statistic,p_value,stars\n");
    for r in results {
        match r.outcome {
            DmOutcome::Computed {
                statistic,
                p_value,
                significance,
            } => out.push_str(&format!(
                "{},{},{},{},{statistic},{p_value},{}\n",
                model_1.short_name(),
                model_2.short_name(),
                r.group,
                r.n,
                significance.stars()
            )),
            DmOutcome::Degenerate { mean_differential } => out.push_str(&format!(
                "{},{},{},{},degenerate,{mean_differential},\n",
                model_1.short_name(),
                model_2.short_name(),
                r.group,
                r.n
            )),
        }
    }
    out
}

pub fn write_text(text: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
