//! Newton fitting of one Poisson block and of the double Poisson model.
//!
//! A block is a single log-linear age-period surface. The Newton system is
//! accumulated directly from the cells (each cell touches at most three
//! coordinates: intercept, its age effect, its period effect), so no design
//! matrix is ever materialized. The double Poisson model is two independent
//! blocks fitted side by side.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::design::{AgePeriodParams, PREDICTOR_LIMIT};
use crate::dist::{ln_factorial, log_poisson_pmf};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::panel::MortalityPanel;

use super::{FitResult, ModelKind, OptimSettings};

/// One fitted block plus its diagnostics.
pub(crate) struct BlockFit {
    pub params: AgePeriodParams,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
    /// Partial objective (log-likelihood without the count constants)
    /// after each Newton step.
    pub trace: Vec<f64>,
}

// Local coordinate slots: 0 is the intercept, 1..n_ages the age effects,
// n_ages..n_ages+n_years-1 the period effects.
fn period_slot(n_ages: usize, year: usize) -> usize {
    n_ages - 1 + year
}

fn apply_step(
    params: &AgePeriodParams,
    active: &[usize],
    n_ages: usize,
    step: &DVector<f64>,
    scale: f64,
) -> AgePeriodParams {
    let mut out = params.clone();
    for (pos, &slot) in active.iter().enumerate() {
        let delta = scale * step[pos];
        if slot == 0 {
            out.intercept += delta;
        } else if slot < n_ages {
            out.age_effects[slot - 1] += delta;
        } else {
            out.period_effects[slot - n_ages] += delta;
        }
    }
    out
}

/// Poisson log-likelihood without the count constants, or a cell-naming
/// error if a linear predictor overflows.
fn partial_objective(response: &Grid<f64>, params: &AgePeriodParams) -> Result<f64> {
    let mut obj = 0.0;
    for (i, j, r) in response.cells() {
        let lp = params.intercept + params.age_effect(i) + params.period_effect(j);
        if lp > PREDICTOR_LIMIT {
            return Err(Error::PredictorOverflow {
                value: lp,
                limit: PREDICTOR_LIMIT,
                age: i,
                year: j,
            });
        }
        obj += r * lp - lp.exp();
    }
    Ok(obj)
}

/// Fits one Poisson block to a nonnegative response surface by damped
/// Newton iterations.
///
/// Non-reference margins with zero total response have no finite maximum;
/// their effects are fixed at `settings.effect_floor` and reported in the
/// warnings. A zero reference margin (first age row or first year column)
/// leaves the intercept unidentified and is an error.
pub(crate) fn fit_poisson_block(
    response: &Grid<f64>,
    settings: &OptimSettings,
    context: &str,
    init: Option<&AgePeriodParams>,
) -> Result<BlockFit> {
    let (n_ages, n_years) = (response.n_ages(), response.n_years());
    let p = n_ages + n_years - 1;

    let mut row_sum = vec![0.0; n_ages];
    let mut col_sum = vec![0.0; n_years];
    let mut total = 0.0;
    for (i, j, r) in response.cells() {
        if !r.is_finite() || r < 0.0 {
            return Err(Error::NotIdentified {
                context: context.to_string(),
                reason: format!("response at cell (age {i}, year {j}) is {r}"),
            });
        }
        row_sum[i] += r;
        col_sum[j] += r;
        total += r;
    }
    if row_sum[0] == 0.0 || col_sum[0] == 0.0 {
        let which = if row_sum[0] == 0.0 { "age row" } else { "year column" };
        return Err(Error::NotIdentified {
            context: context.to_string(),
            reason: format!(
                "the reference {which} has no events, so the intercept is not identified"
            ),
        });
    }

    let mut warnings = Vec::new();
    let mut fixed = vec![false; p];
    let mut params = match init {
        Some(start) if start.n_ages() == n_ages && start.n_years() == n_years => start.clone(),
        _ => {
            let mut start = AgePeriodParams::zeros(n_ages, n_years);
            start.intercept = (total / (n_ages * n_years) as f64).max(1e-10).ln();
            start
        }
    };
    for (a, &sum) in row_sum.iter().enumerate().skip(1) {
        if sum == 0.0 {
            fixed[a] = true;
            params.age_effects[a - 1] = settings.effect_floor;
            warnings.push(format!(
                "{context}: age group index {a} has no events; effect fixed at {}",
                settings.effect_floor
            ));
        }
    }
    for (t, &sum) in col_sum.iter().enumerate().skip(1) {
        if sum == 0.0 {
            fixed[period_slot(n_ages, t)] = true;
            params.period_effects[t - 1] = settings.effect_floor;
            warnings.push(format!(
                "{context}: year index {t} has no events; effect fixed at {}",
                settings.effect_floor
            ));
        }
    }

    let active: Vec<usize> = (0..p).filter(|&slot| !fixed[slot]).collect();
    let mut position = vec![usize::MAX; p];
    for (pos, &slot) in active.iter().enumerate() {
        position[slot] = pos;
    }

    let mut obj = partial_objective(response, &params)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=settings.max_iterations {
        iterations = it;
        let mut g = DVector::<f64>::zeros(active.len());
        let mut h = DMatrix::<f64>::zeros(active.len(), active.len());
        let mut mu_margin = vec![0.0; p];
        for (i, j, r) in response.cells() {
            let lp = params.intercept + params.age_effect(i) + params.period_effect(j);
            let mu = lp.exp();
            let mut slots = [Some(0usize), None, None];
            if i >= 1 {
                slots[1] = Some(i);
            }
            if j >= 1 {
                slots[2] = Some(period_slot(n_ages, j));
            }
            for slot in slots.into_iter().flatten() {
                mu_margin[slot] += mu;
                if !fixed[slot] {
                    g[position[slot]] += r - mu;
                }
            }
            for u in slots.into_iter().flatten() {
                if fixed[u] {
                    continue;
                }
                for v in slots.into_iter().flatten() {
                    if !fixed[v] {
                        h[(position[u], position[v])] += mu;
                    }
                }
            }
        }

        if active
            .iter()
            .all(|&slot| g[position[slot]].abs() <= settings.grad_tol * (1.0 + mu_margin[slot]))
        {
            converged = true;
            break;
        }

        let chol = match Cholesky::new(h.clone()) {
            Some(c) => c,
            None => {
                // one ridge retry on a near-singular system
                let ridge = 1e-8 * h.diagonal().max().max(1.0);
                let mut damped = h;
                for k in 0..active.len() {
                    damped[(k, k)] += ridge;
                }
                Cholesky::new(damped).ok_or(Error::SolveFailed {
                    context: "poisson newton step",
                })?
            }
        };
        let step = chol.solve(&g);
        let decrement = g.dot(&step).max(0.0);

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate = apply_step(&params, &active, n_ages, &step, scale);
            match partial_objective(response, &candidate) {
                Ok(new_obj)
                    if new_obj.is_finite()
                        && new_obj + 1e-12 * (1.0 + obj.abs())
                            >= obj + 1e-4 * scale * decrement =>
                {
                    params = candidate;
                    obj = new_obj;
                    accepted = true;
                    break;
                }
                _ => scale *= 0.5,
            }
        }
        trace.push(obj);
        if !accepted {
            // no ascent left: accept the point if the decrement says we are
            // at the numerical optimum
            converged = 0.5 * decrement <= 1e-10 * (1.0 + obj.abs());
            break;
        }
        if 0.5 * decrement <= 1e-13 * (1.0 + obj.abs()) {
            converged = true;
            break;
        }
    }

    if !converged {
        warnings.push(format!(
            "{context}: Newton stopped after {iterations} iterations without meeting the gradient tolerance"
        ));
    }
    Ok(BlockFit {
        params,
        iterations,
        converged,
        warnings,
        trace,
    })
}

/// Fits the double Poisson model: two independent blocks, one per series.
pub fn fit_double_poisson(panel: &MortalityPanel, settings: &OptimSettings) -> Result<FitResult> {
    let ra = panel.counts_a().map(|c| c as f64);
    let rb = panel.counts_b().map(|c| c as f64);
    let (label_a, label_b) = panel.labels();
    let fit_a = fit_poisson_block(&ra, settings, &format!("series {label_a}"), None)?;
    let fit_b = fit_poisson_block(&rb, settings, &format!("series {label_b}"), None)?;

    let surface_a = fit_a.params.intensity_surface()?;
    let surface_b = fit_b.params.intensity_surface()?;
    let mut log_lik = 0.0;
    for (i, j, x) in panel.counts_a().cells() {
        log_lik += log_poisson_pmf(x, surface_a.get(i, j))?;
    }
    for (i, j, y) in panel.counts_b().cells() {
        log_lik += log_poisson_pmf(y, surface_b.get(i, j))?;
    }

    // joint trace: partial objectives plus the fixed count constants
    let constants: f64 = panel
        .counts_a()
        .as_slice()
        .iter()
        .chain(panel.counts_b().as_slice())
        .map(|&c| -ln_factorial(c))
        .sum();
    let steps = fit_a.trace.len().max(fit_b.trace.len()).max(1);
    let last = |t: &[f64]| t.last().copied();
    let trace: Vec<f64> = (0..steps)
        .map(|k| {
            let a = fit_a.trace.get(k).copied().or(last(&fit_a.trace));
            let b = fit_b.trace.get(k).copied().or(last(&fit_b.trace));
            match (a, b) {
                (Some(a), Some(b)) => a + b + constants,
                _ => log_lik, // a block converged with no steps taken
            }
        })
        .collect();

    let mut warnings = fit_a.warnings;
    warnings.extend(fit_b.warnings);
    Ok(FitResult {
        model: ModelKind::DoublePoisson,
        labels: (label_a.to_string(), label_b.to_string()),
        ages: panel.ages().to_vec(),
        years: panel.years().to_vec(),
        blocks: vec![fit_a.params, fit_b.params],
        lambda3: None,
        log_lik,
        n_obs: panel.n_ages() * panel.n_years(),
        iterations: fit_a.iterations.max(fit_b.iterations),
        converged: fit_a.converged && fit_b.converged,
        degenerated: false,
        warnings,
        trace,
    })
}
