//! Forecasting the gap by extrapolating the period effects.
//!
//! The two fitted period-effect series (reference year zero included) are
//! treated as a bivariate random walk with drift. Forecasts move the last
//! in-sample period effects along the estimated drift; everything else
//! about a future cell comes from the fitted intercepts and age effects,
//! never from the stored in-sample period effects of other years.

use std::path::Path;

use crate::design::PREDICTOR_LIMIT;
use crate::error::{Error, Result};
use crate::fit::{FitResult, KeyValues, ModelKind};
use crate::grid::Grid;

/// Estimated bivariate random walk with drift.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomWalkDrift {
    /// Mean first difference per block.
    pub drift: [f64; 2],
    /// Sample covariance of the first differences (denominator: number of
    /// differences minus one).
    pub covariance: [[f64; 2]; 2],
    /// Last observed value per block, the forecast origin.
    pub origin: [f64; 2],
    /// Number of first differences the estimates are based on.
    pub n_diffs: usize,
}

impl RandomWalkDrift {
    /// Point forecast `origin + h * drift` for each block.
    pub fn forecast(&self, horizon: usize) -> [f64; 2] {
        let h = horizon as f64;
        [
            self.origin[0] + h * self.drift[0],
            self.origin[1] + h * self.drift[1],
        ]
    }

    /// Forecast-error covariance after `horizon` steps: `h * covariance`.
    pub fn forecast_covariance(&self, horizon: usize) -> [[f64; 2]; 2] {
        let h = horizon as f64;
        [
            [h * self.covariance[0][0], h * self.covariance[0][1]],
            [h * self.covariance[1][0], h * self.covariance[1][1]],
        ]
    }
}

/// The two period-effect series of a fit, reference year first.
pub fn period_series(fit: &FitResult) -> Vec<[f64; 2]> {
    let mut series = vec![[0.0, 0.0]];
    for (a, b) in fit.blocks[0]
        .period_effects
        .iter()
        .zip(&fit.blocks[1].period_effects)
    {
        series.push([*a, *b]);
    }
    series
}

/// Estimates the random walk with drift from a bivariate series.
pub fn fit_rwd(series: &[[f64; 2]]) -> Result<RandomWalkDrift> {
    let t = series.len();
    if t < 3 {
        return Err(Error::SeriesTooShort { got: t });
    }
    let diffs: Vec<[f64; 2]> = series
        .windows(2)
        .map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1]])
        .collect();
    let n = diffs.len();
    let nf = n as f64;
    let drift = [
        diffs.iter().map(|d| d[0]).sum::<f64>() / nf,
        diffs.iter().map(|d| d[1]).sum::<f64>() / nf,
    ];
    let mut covariance = [[0.0; 2]; 2];
    for d in &diffs {
        let c = [d[0] - drift[0], d[1] - drift[1]];
        covariance[0][0] += c[0] * c[0];
        covariance[0][1] += c[0] * c[1];
        covariance[1][1] += c[1] * c[1];
    }
    let denom = (n - 1) as f64;
    covariance[0][0] /= denom;
    covariance[0][1] /= denom;
    covariance[1][1] /= denom;
    covariance[1][0] = covariance[0][1];
    Ok(RandomWalkDrift {
        drift,
        covariance,
        origin: *series.last().expect("series has at least 3 entries"),
        n_diffs: n,
    })
}

/// A forecast gap surface with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub model: ModelKind,
    pub labels: (String, String),
    pub ages: Vec<String>,
    /// Last in-sample year; forecasts start the year after.
    pub origin_year: i32,
    pub years: Vec<i32>,
    /// Point forecast of the mean gap per cell.
    pub gap: Grid<f64>,
    /// Forecast block intensities (the common shock of the bivariate model
    /// cancels in the gap and is not included here).
    pub intensity_a: Grid<f64>,
    pub intensity_b: Grid<f64>,
    pub drift: [f64; 2],
    pub innovation_covariance: [[f64; 2]; 2],
}

/// Projects the fitted model `horizon` years past its last in-sample year.
pub fn forecast_gap(fit: &FitResult, horizon: usize) -> Result<ForecastResult> {
    if horizon == 0 {
        return Err(Error::ZeroHorizon);
    }
    let rwd = fit_rwd(&period_series(fit))?;
    let n_ages = fit.ages.len();
    let mut intensity_a = Grid::filled(n_ages, horizon, 0.0);
    let mut intensity_b = Grid::filled(n_ages, horizon, 0.0);
    for h in 1..=horizon {
        let period = rwd.forecast(h);
        for age in 0..n_ages {
            for (block, grid) in [(0, &mut intensity_a), (1, &mut intensity_b)] {
                let lp =
                    fit.blocks[block].intercept + fit.blocks[block].age_effect(age) + period[block];
                if lp > PREDICTOR_LIMIT {
                    return Err(Error::PredictorOverflow {
                        value: lp,
                        limit: PREDICTOR_LIMIT,
                        age,
                        year: h - 1,
                    });
                }
                grid.set(age, h - 1, lp.exp());
            }
        }
    }
    let gap = intensity_a.zip_map(&intensity_b, |a, b| a - b)?;
    let origin_year = *fit.years.last().expect("fit has years");
    Ok(ForecastResult {
        model: fit.model,
        labels: fit.labels.clone(),
        ages: fit.ages.clone(),
        origin_year,
        years: (1..=horizon).map(|h| origin_year + h as i32).collect(),
        gap,
        intensity_a,
        intensity_b,
        drift: rwd.drift,
        innovation_covariance: rwd.covariance,
    })
}

// ---------------------------------------------------------------------------
// forecast artifacts

fn join_row(grid: &Grid<f64>, row: usize) -> String {
    grid.row(row)
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Serializes a forecast to the artifact text format.
pub fn write_forecast_text(forecast: &ForecastResult) -> String {
    let mut out = String::new();
    let mut line = |key: &str, value: String| {
        out.push_str(key);
        out.push_str(" = ");
        out.push_str(&value);
        out.push('\n');
    };
    line("format", "mortgap-forecast v1".into());
    line("model", forecast.model.short_name().into());
    line("label_a", forecast.labels.0.clone());
    line("label_b", forecast.labels.1.clone());
    line("ages", forecast.ages.join(","));
    line("origin_year", forecast.origin_year.to_string());
    line(
        "years",
        format!(
            "{}..{}",
            forecast.years[0],
            forecast.years[forecast.years.len() - 1]
        ),
    );
    line(
        "drift",
        format!("{},{}", forecast.drift[0], forecast.drift[1]),
    );
    let c = &forecast.innovation_covariance;
    line(
        "innovation_covariance",
        format!("{},{},{},{}", c[0][0], c[0][1], c[1][0], c[1][1]),
    );
    for i in 0..forecast.ages.len() {
        line(&format!("gap_{i}"), join_row(&forecast.gap, i));
        line(&format!("intensity_a_{i}"), join_row(&forecast.intensity_a, i));
        line(&format!("intensity_b_{i}"), join_row(&forecast.intensity_b, i));
    }
    out
}

pub fn write_forecast(forecast: &ForecastResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_forecast_text(forecast)).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses the forecast artifact text format.
pub fn parse_forecast_text(text: &str, path: &str) -> Result<ForecastResult> {
    let kv = KeyValues::parse(text, path)?;
    let (line, format) = kv.required("format")?;
    if format != "mortgap-forecast v1" {
        return Err(kv.error(line, format!("unsupported format {format:?}")));
    }
    let (line, model_text) = kv.required("model")?;
    let model = ModelKind::parse(model_text)
        .ok_or_else(|| kv.error(line, format!("unknown model {model_text:?}")))?;
    let labels = (
        kv.required("label_a")?.1.to_string(),
        kv.required("label_b")?.1.to_string(),
    );
    let ages: Vec<String> = kv
        .required("ages")?
        .1
        .split(',')
        .map(|a| a.trim().to_string())
        .collect();
    let origin_year: i32 = kv.integer("origin_year")?;
    let years = kv.year_range("years")?;
    let drift_values = kv.float_list("drift")?;
    let cov_values = kv.float_list("innovation_covariance")?;
    if drift_values.len() != 2 || cov_values.len() != 4 {
        return Err(kv.error(0, "drift needs 2 values, covariance needs 4".into()));
    }
    let mut grids = [
        Grid::filled(ages.len(), years.len(), 0.0),
        Grid::filled(ages.len(), years.len(), 0.0),
        Grid::filled(ages.len(), years.len(), 0.0),
    ];
    for (which, key) in ["gap", "intensity_a", "intensity_b"].iter().enumerate() {
        for i in 0..ages.len() {
            let row = kv.float_list(&format!("{key}_{i}"))?;
            if row.len() != years.len() {
                return Err(kv.error(
                    0,
                    format!("{key}_{i} has {} values, expected {}", row.len(), years.len()),
                ));
            }
            for (j, v) in row.into_iter().enumerate() {
                grids[which].set(i, j, v);
            }
        }
    }
    let [gap, intensity_a, intensity_b] = grids;
    Ok(ForecastResult {
        model,
        labels,
        ages,
        origin_year,
        years,
        gap,
        intensity_a,
        intensity_b,
        drift: [drift_values[0], drift_values[1]],
        innovation_covariance: [
            [cov_values[0], cov_values[1]],
            [cov_values[2], cov_values[3]],
        ],
    })
}

pub fn read_forecast(path: impl AsRef<Path>) -> Result<ForecastResult> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_forecast_text(&text, &path.display().to_string())
}
