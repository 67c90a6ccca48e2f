//! Maximum-likelihood fitting of the three count models.
//!
//! All three models share the log-linear age-period predictor of
//! [`crate::design`], one parameter block per series:
//!
//! * double Poisson: independent Poisson counts per series, fitted by
//!   Newton iterations on each block;
//! * bivariate Poisson: common-shock counts with an extra shock rate,
//!   fitted by EM;
//! * Skellam: the signed gap directly, with one positive and one negative
//!   intensity block, fitted by BFGS.
//!
//! [`negative_log_likelihood`] and [`negative_log_likelihood_gradient`]
//! expose the exact objective the fitters optimize, over a packed
//! parameter vector (see [`crate::design::ParamLayout`]; the bivariate
//! extra parameter is the log shock rate).

mod bfgs;
mod bivariate;
mod poisson;
mod skellam;

use std::fmt;
use std::path::Path;

use crate::design::{AgePeriodParams, ParamLayout};
use crate::dist::{bp_conditional_mean_x3, log_bivariate_poisson_pmf, log_poisson_pmf};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::panel::{GapPanel, MortalityPanel};

pub use bivariate::fit_bivariate_poisson;
pub use poisson::fit_double_poisson;
pub use skellam::fit_skellam;

/// Which of the three count models to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    DoublePoisson,
    BivariatePoisson,
    Skellam,
}

impl ModelKind {
    pub fn parse(text: &str) -> Option<ModelKind> {
        match text.trim().to_ascii_lowercase().as_str() {
            "dp" => Some(ModelKind::DoublePoisson),
            "bp" => Some(ModelKind::BivariatePoisson),
            "skellam" => Some(ModelKind::Skellam),
            _ => None,
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            ModelKind::DoublePoisson => "dp",
            ModelKind::BivariatePoisson => "bp",
            ModelKind::Skellam => "skellam",
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            ModelKind::DoublePoisson => "double Poisson",
            ModelKind::BivariatePoisson => "bivariate Poisson",
            ModelKind::Skellam => "Skellam",
        }
    }

    /// Packed parameter layout for a panel of the given shape.
    pub fn layout(&self, n_ages: usize, n_years: usize) -> ParamLayout {
        ParamLayout {
            n_ages,
            n_years,
            n_blocks: 2,
            n_extras: match self {
                ModelKind::BivariatePoisson => 1,
                _ => 0,
            },
        }
    }

    pub const ALL: [ModelKind; 3] = [
        ModelKind::DoublePoisson,
        ModelKind::BivariatePoisson,
        ModelKind::Skellam,
    ];
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Data a likelihood can be evaluated on.
#[derive(Debug, Clone, Copy)]
pub enum ModelData<'a> {
    Counts(&'a MortalityPanel),
    Gaps(&'a GapPanel),
}

impl ModelData<'_> {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            ModelData::Counts(panel) => (panel.n_ages(), panel.n_years()),
            ModelData::Gaps(panel) => (panel.n_ages(), panel.n_years()),
        }
    }
}

/// Optimizer controls shared by the three fitters.
#[derive(Debug, Clone)]
pub struct OptimSettings {
    /// Newton / BFGS iteration cap.
    pub max_iterations: usize,
    /// EM sweep cap (EM converges linearly, so it gets a higher cap).
    pub em_max_iterations: usize,
    /// Gradient tolerance, relative to each coordinate's fitted-mean margin.
    pub grad_tol: f64,
    /// EM stops when the relative log-likelihood change drops below this.
    pub loglik_tol: f64,
    /// Effects of margins with zero observed events are fixed here.
    pub effect_floor: f64,
}

impl Default for OptimSettings {
    fn default() -> Self {
        OptimSettings {
            max_iterations: 2000,
            em_max_iterations: 5000,
            grad_tol: 1e-8,
            loglik_tol: 1e-8,
            effect_floor: -30.0,
        }
    }
}

/// A fitted model: parameter blocks, fit diagnostics and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: ModelKind,
    pub labels: (String, String),
    pub ages: Vec<String>,
    pub years: Vec<i32>,
    /// One block per series; for Skellam these are the positive-part and
    /// negative-part gap intensities.
    pub blocks: Vec<AgePeriodParams>,
    /// Common-shock rate, bivariate Poisson only.
    pub lambda3: Option<f64>,
    pub log_lik: f64,
    pub n_obs: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Bivariate Poisson collapsed to the independence boundary.
    pub degenerated: bool,
    pub warnings: Vec<String>,
    /// Log-likelihood after each iteration (Newton steps, EM sweeps or
    /// accepted BFGS steps). Not serialized.
    pub trace: Vec<f64>,
}

impl FitResult {
    pub fn n_params(&self) -> usize {
        self.blocks.iter().map(AgePeriodParams::n_params).sum::<usize>()
            + usize::from(self.lambda3.is_some())
    }

    pub fn layout(&self) -> ParamLayout {
        self.model.layout(self.ages.len(), self.years.len())
    }

    /// Packed parameter vector matching [`Self::layout`]; the bivariate
    /// extra is ln(lambda3), negative infinity at the boundary.
    pub fn theta(&self) -> Result<Vec<f64>> {
        let extras: Vec<f64> = match self.lambda3 {
            Some(l3) => vec![l3.ln()],
            None => vec![],
        };
        self.layout().pack(&self.blocks, &extras)
    }

    /// Fitted mean gap surface. The common shock cancels in the gap, so
    /// for every model this is the difference of the two block intensities.
    pub fn fitted_gap(&self) -> Result<Grid<f64>> {
        let a = self.blocks[0].intensity_surface()?;
        let b = self.blocks[1].intensity_surface()?;
        a.zip_map(&b, |x, y| x - y)
    }

    /// Fitted mean counts per series; `None` for the Skellam model, which
    /// never sees counts.
    pub fn fitted_counts(&self) -> Result<Option<(Grid<f64>, Grid<f64>)>> {
        if self.model == ModelKind::Skellam {
            return Ok(None);
        }
        let shock = self.lambda3.unwrap_or(0.0);
        let a = self.blocks[0].intensity_surface()?.map(|v| v + shock);
        let b = self.blocks[1].intensity_surface()?.map(|v| v + shock);
        Ok(Some((a, b)))
    }
}

/// Fits `model` to a count panel (the Skellam model fits the differenced
/// gaps).
pub fn fit_model(
    model: ModelKind,
    panel: &MortalityPanel,
    settings: &OptimSettings,
) -> Result<FitResult> {
    match model {
        ModelKind::DoublePoisson => fit_double_poisson(panel, settings),
        ModelKind::BivariatePoisson => fit_bivariate_poisson(panel, settings),
        ModelKind::Skellam => fit_skellam(&panel.to_gap(), settings),
    }
}

fn unpack_for(
    model: ModelKind,
    data: &ModelData,
    theta: &[f64],
) -> Result<(Vec<AgePeriodParams>, Vec<f64>, ParamLayout)> {
    let (n_ages, n_years) = data.shape();
    let layout = model.layout(n_ages, n_years);
    let (blocks, extras) = layout.unpack(theta)?;
    Ok((blocks, extras, layout))
}

fn counts_of<'a>(model: ModelKind, data: &ModelData<'a>) -> Result<&'a MortalityPanel> {
    match data {
        ModelData::Counts(panel) => Ok(panel),
        ModelData::Gaps(_) => Err(Error::DataKind {
            model: model.display_name(),
            needs: "count",
        }),
    }
}

/// Negative log-likelihood of `model` at the packed parameters `theta`.
pub fn negative_log_likelihood(model: ModelKind, data: &ModelData, theta: &[f64]) -> Result<f64> {
    let (blocks, extras, _) = unpack_for(model, data, theta)?;
    match model {
        ModelKind::DoublePoisson => {
            let panel = counts_of(model, data)?;
            let la = blocks[0].intensity_surface()?;
            let lb = blocks[1].intensity_surface()?;
            let mut ll = 0.0;
            for (i, j, x) in panel.counts_a().cells() {
                ll += log_poisson_pmf(x, la.get(i, j))?;
            }
            for (i, j, y) in panel.counts_b().cells() {
                ll += log_poisson_pmf(y, lb.get(i, j))?;
            }
            Ok(-ll)
        }
        ModelKind::BivariatePoisson => {
            let panel = counts_of(model, data)?;
            let l1 = blocks[0].intensity_surface()?;
            let l2 = blocks[1].intensity_surface()?;
            let l3 = extras[0].exp();
            let mut ll = 0.0;
            for (i, j, x) in panel.counts_a().cells() {
                let y = panel.counts_b().get(i, j);
                ll += log_bivariate_poisson_pmf(x, y, l1.get(i, j), l2.get(i, j), l3)?;
            }
            Ok(-ll)
        }
        ModelKind::Skellam => {
            let lc = blocks[0].intensity_surface()?;
            let ld = blocks[1].intensity_surface()?;
            let mut ll = 0.0;
            match data {
                ModelData::Gaps(gaps) => {
                    for (i, j, z) in gaps.gaps().cells() {
                        ll += skellam::cell_terms(z, lc.get(i, j), ld.get(i, j))?.log_pmf;
                    }
                }
                ModelData::Counts(panel) => {
                    for (i, j, x) in panel.counts_a().cells() {
                        let z = x as i64 - panel.counts_b().get(i, j) as i64;
                        ll += skellam::cell_terms(z, lc.get(i, j), ld.get(i, j))?.log_pmf;
                    }
                }
            }
            Ok(-ll)
        }
    }
}

/// Gradient of the negative log-likelihood over the packed parameters.
pub fn negative_log_likelihood_gradient(
    model: ModelKind,
    data: &ModelData,
    theta: &[f64],
) -> Result<Vec<f64>> {
    let (blocks, extras, layout) = unpack_for(model, data, theta)?;
    let mut grad = vec![0.0; layout.total_len()];
    // adds d(loglik)/d(linear predictor) of one cell into a block's
    // intercept, age and period coordinates, negated for the nll
    let add = |grad: &mut [f64], block: usize, i: usize, j: usize, dlp: f64| {
        grad[layout.intercept_index(block)] -= dlp;
        if i >= 1 {
            grad[layout.age_index(block, i)] -= dlp;
        }
        if j >= 1 {
            grad[layout.period_index(block, j)] -= dlp;
        }
    };
    match model {
        ModelKind::DoublePoisson => {
            let panel = counts_of(model, data)?;
            let la = blocks[0].intensity_surface()?;
            let lb = blocks[1].intensity_surface()?;
            for (i, j, x) in panel.counts_a().cells() {
                add(&mut grad, 0, i, j, x as f64 - la.get(i, j));
            }
            for (i, j, y) in panel.counts_b().cells() {
                add(&mut grad, 1, i, j, y as f64 - lb.get(i, j));
            }
        }
        ModelKind::BivariatePoisson => {
            let panel = counts_of(model, data)?;
            let l1 = blocks[0].intensity_surface()?;
            let l2 = blocks[1].intensity_surface()?;
            let l3 = extras[0].exp();
            let extra_index = layout.total_len() - 1;
            for (i, j, x) in panel.counts_a().cells() {
                let y = panel.counts_b().get(i, j);
                let s = bp_conditional_mean_x3(x, y, l1.get(i, j), l2.get(i, j), l3)?;
                add(&mut grad, 0, i, j, x as f64 - l1.get(i, j) - s);
                add(&mut grad, 1, i, j, y as f64 - l2.get(i, j) - s);
                grad[extra_index] -= s - l3;
            }
        }
        ModelKind::Skellam => {
            let lc = blocks[0].intensity_surface()?;
            let ld = blocks[1].intensity_surface()?;
            let cell = |grad: &mut [f64], i: usize, j: usize, z: i64| -> Result<()> {
                let terms = skellam::cell_terms(z, lc.get(i, j), ld.get(i, j))?;
                let zf = z as f64;
                add(grad, 0, i, j, -lc.get(i, j) + 0.5 * zf + terms.half_v_ratio);
                add(grad, 1, i, j, -ld.get(i, j) - 0.5 * zf + terms.half_v_ratio);
                Ok(())
            };
            match data {
                ModelData::Gaps(gaps) => {
                    for (i, j, z) in gaps.gaps().cells() {
                        cell(&mut grad, i, j, z)?;
                    }
                }
                ModelData::Counts(panel) => {
                    for (i, j, x) in panel.counts_a().cells() {
                        let z = x as i64 - panel.counts_b().get(i, j) as i64;
                        cell(&mut grad, i, j, z)?;
                    }
                }
            }
        }
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// fit artifacts: a line-oriented key = value text format

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn check_label(label: &str, what: &str) -> Result<()> {
    if label.contains(',') || label.contains('\n') || label.contains('=') {
        return Err(Error::ArtifactMismatch {
            reason: format!("{what} {label:?} contains a reserved character"),
        });
    }
    Ok(())
}

/// Serializes a fit to the artifact text format.
pub fn write_fit_text(fit: &FitResult) -> Result<String> {
    for age in &fit.ages {
        check_label(age, "age label")?;
    }
    check_label(&fit.labels.0, "population label")?;
    check_label(&fit.labels.1, "population label")?;
    let mut out = String::new();
    let mut line = |key: &str, value: String| {
        out.push_str(key);
        out.push_str(" = ");
        out.push_str(&value);
        out.push('\n');
    };
    line("format", "mortgap-fit v1".into());
    line("model", fit.model.short_name().into());
    line("label_a", fit.labels.0.clone());
    line("label_b", fit.labels.1.clone());
    line("ages", fit.ages.join(","));
    line(
        "years",
        format!("{}..{}", fit.years[0], fit.years[fit.years.len() - 1]),
    );
    line("n_obs", fit.n_obs.to_string());
    line("log_lik", fit.log_lik.to_string());
    line("iterations", fit.iterations.to_string());
    line("converged", fit.converged.to_string());
    line("degenerated", fit.degenerated.to_string());
    if let Some(l3) = fit.lambda3 {
        line("lambda3", l3.to_string());
    }
    for warning in &fit.warnings {
        line("warning", warning.replace('\n', " "));
    }
    for (block, tag) in fit.blocks.iter().zip(["a", "b"]) {
        line(&format!("block_{tag}_intercept"), block.intercept.to_string());
        line(&format!("block_{tag}_age"), join_floats(&block.age_effects));
        line(
            &format!("block_{tag}_period"),
            join_floats(&block.period_effects),
        );
    }
    Ok(out)
}

pub fn write_fit(fit: &FitResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = write_fit_text(fit)?;
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) struct KeyValues {
    path: String,
    entries: Vec<(usize, String, String)>,
}

impl KeyValues {
    pub(crate) fn parse(text: &str, path: &str) -> Result<KeyValues> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::BadArtifact {
                path: path.to_string(),
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            entries.push((i + 1, key.trim().to_string(), value.trim().to_string()));
        }
        Ok(KeyValues {
            path: path.to_string(),
            entries,
        })
    }

    pub(crate) fn error(&self, line: usize, message: String) -> Error {
        Error::BadArtifact {
            path: self.path.clone(),
            line,
            message,
        }
    }

    pub(crate) fn required(&self, key: &str) -> Result<(usize, &str)> {
        self.entries
            .iter()
            .find(|(_, k, _)| k == key)
            .map(|(line, _, v)| (*line, v.as_str()))
            .ok_or_else(|| self.error(0, format!("missing key {key:?}")))
    }

    pub(crate) fn optional(&self, key: &str) -> Option<(usize, &str)> {
        self.entries
            .iter()
            .find(|(_, k, _)| k == key)
            .map(|(line, _, v)| (*line, v.as_str()))
    }

    pub(crate) fn all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries
            .iter()
            .filter(move |(_, k, _)| k == key)
            .map(|(_, _, v)| v.as_str())
    }

    pub(crate) fn float(&self, key: &str) -> Result<f64> {
        let (line, v) = self.required(key)?;
        v.parse()
            .map_err(|_| self.error(line, format!("{key} value {v:?} is not a number")))
    }

    pub(crate) fn integer<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let (line, v) = self.required(key)?;
        v.parse()
            .map_err(|_| self.error(line, format!("{key} value {v:?} is not an integer")))
    }

    pub(crate) fn boolean(&self, key: &str) -> Result<bool> {
        let (line, v) = self.required(key)?;
        v.parse()
            .map_err(|_| self.error(line, format!("{key} value {v:?} is not true/false")))
    }

    pub(crate) fn float_list(&self, key: &str) -> Result<Vec<f64>> {
        let (line, v) = self.required(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|part| {
                part.trim()
                    .parse()
                    .map_err(|_| self.error(line, format!("{key} entry {part:?} is not a number")))
            })
            .collect()
    }

    pub(crate) fn year_range(&self, key: &str) -> Result<Vec<i32>> {
        let (line, v) = self.required(key)?;
        let (start, end) = v
            .split_once("..")
            .ok_or_else(|| self.error(line, format!("{key} value {v:?} is not start..end")))?;
        let start: i32 = start
            .trim()
            .parse()
            .map_err(|_| self.error(line, format!("bad year {start:?}")))?;
        let end: i32 = end
            .trim()
            .parse()
            .map_err(|_| self.error(line, format!("bad year {end:?}")))?;
        if end < start {
            return Err(self.error(line, format!("year range {v:?} is reversed")));
        }
        Ok((start..=end).collect())
    }
}

/// Parses the artifact text format back into a [`FitResult`] (with an
/// empty trace).
pub fn parse_fit_text(text: &str, path: &str) -> Result<FitResult> {
    let kv = KeyValues::parse(text, path)?;
    let (line, format) = kv.required("format")?;
    if format != "mortgap-fit v1" {
        return Err(kv.error(line, format!("unsupported format {format:?}")));
    }
    let (line, model_text) = kv.required("model")?;
    let model = ModelKind::parse(model_text)
        .ok_or_else(|| kv.error(line, format!("unknown model {model_text:?}")))?;
    let labels = (
        kv.required("label_a")?.1.to_string(),
        kv.required("label_b")?.1.to_string(),
    );
    let (ages_line, ages_text) = kv.required("ages")?;
    let ages: Vec<String> = ages_text.split(',').map(|a| a.trim().to_string()).collect();
    if ages.is_empty() || ages.iter().any(String::is_empty) {
        return Err(kv.error(ages_line, "empty age label list".into()));
    }
    let years = kv.year_range("years")?;
    let lambda3 = match kv.optional("lambda3") {
        Some(_) => Some(kv.float("lambda3")?),
        None => None,
    };
    if (lambda3.is_some()) != (model == ModelKind::BivariatePoisson) {
        return Err(kv.error(0, "lambda3 must appear exactly for the bp model".into()));
    }
    let mut blocks = Vec::new();
    for tag in ["a", "b"] {
        let block = AgePeriodParams {
            intercept: kv.float(&format!("block_{tag}_intercept"))?,
            age_effects: kv.float_list(&format!("block_{tag}_age"))?,
            period_effects: kv.float_list(&format!("block_{tag}_period"))?,
        };
        if block.n_ages() != ages.len() || block.n_years() != years.len() {
            return Err(kv.error(
                0,
                format!(
                    "block {tag} is {}x{}, panel is {}x{}",
                    block.n_ages(),
                    block.n_years(),
                    ages.len(),
                    years.len()
                ),
            ));
        }
        blocks.push(block);
    }
    Ok(FitResult {
        model,
        labels,
        ages,
        years,
        blocks,
        lambda3,
        log_lik: kv.float("log_lik")?,
        n_obs: kv.integer("n_obs")?,
        iterations: kv.integer("iterations")?,
        converged: kv.boolean("converged")?,
        degenerated: kv.boolean("degenerated")?,
        warnings: kv.all("warning").map(str::to_string).collect(),
        trace: Vec::new(),
    })
}

pub fn read_fit(path: impl AsRef<Path>) -> Result<FitResult> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_fit_text(&text, &path.display().to_string())
}
