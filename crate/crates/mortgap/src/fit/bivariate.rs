//! EM fitting of the common-shock bivariate Poisson model.
//!
//! The complete-data model splits each count pair into two private Poisson
//! variates and a shared shock. The E-step is the posterior mean of the
//! shock per cell; the M-step refits both blocks on the shock-corrected
//! pseudo-responses (full Newton refits, which keeps every sweep an exact
//! M-step and the observed likelihood provably nondecreasing) and sets the
//! shock rate to the mean posterior shock.
//!
//! Whether the shock belongs on the zero boundary is decided by the score
//! of the shock rate at zero: if it is nonpositive at the independence fit,
//! the model degenerates to double Poisson and says so.

use crate::dist::bp_cell_terms;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::panel::MortalityPanel;

use super::poisson::fit_poisson_block;
use super::{fit_double_poisson, FitResult, ModelKind, OptimSettings};

/// One fused sweep input: the log-likelihood at the current parameters and
/// the posterior shock mean per cell (the E-step).
fn e_step(
    panel: &MortalityPanel,
    surface_1: &Grid<f64>,
    surface_2: &Grid<f64>,
    lambda3: f64,
) -> Result<(f64, Grid<f64>)> {
    let mut ll = 0.0;
    let mut shock = Grid::filled(panel.n_ages(), panel.n_years(), 0.0);
    for (i, j, x) in panel.counts_a().cells() {
        let y = panel.counts_b().get(i, j);
        let cell = bp_cell_terms(x, y, surface_1.get(i, j), surface_2.get(i, j), lambda3)?;
        ll += cell.log_pmf;
        shock.set(i, j, cell.shock_mean);
    }
    Ok((ll, shock))
}

/// Fits the bivariate Poisson model by EM from a double Poisson start.
pub fn fit_bivariate_poisson(
    panel: &MortalityPanel,
    settings: &OptimSettings,
) -> Result<FitResult> {
    let dp = fit_double_poisson(panel, settings)?;
    let n_cells = (panel.n_ages() * panel.n_years()) as f64;
    let surface_a = dp.blocks[0].intensity_surface()?;
    let surface_b = dp.blocks[1].intensity_surface()?;

    // score of the shock rate at the zero boundary, evaluated at the
    // independence fit: sum of x y / (l1 l2) - 1 over cells
    let mut boundary_score = 0.0;
    let mut covariance = 0.0;
    let mut mean_min = 0.0;
    for (i, j, x) in panel.counts_a().cells() {
        let y = panel.counts_b().get(i, j);
        let (l1, l2) = (surface_a.get(i, j), surface_b.get(i, j));
        boundary_score += (x as f64 * y as f64) / (l1 * l2) - 1.0;
        covariance += (x as f64 - l1) * (y as f64 - l2);
        mean_min += l1.min(l2);
    }
    covariance /= n_cells;
    mean_min /= n_cells;

    let degenerate = |mut dp: FitResult, warnings: Vec<String>| {
        dp.model = ModelKind::BivariatePoisson;
        dp.lambda3 = Some(0.0);
        dp.degenerated = true;
        dp.warnings.extend(warnings);
        dp
    };

    if boundary_score <= 0.0 {
        // the likelihood decreases in the shock at zero: the boundary is
        // the maximum and the model is exactly double Poisson
        return Ok(degenerate(
            dp,
            vec!["shock rate degenerated to zero; counts fit as independent".into()],
        ));
    }

    let floor = 1e-4 * (1.0 + mean_min);
    let mut lambda3 = covariance.clamp(floor, mean_min.max(floor));
    let mut blocks = dp.blocks.clone();
    let (label_a, label_b) = panel.labels();
    let context_a = format!("series {label_a}");
    let context_b = format!("series {label_b}");

    let mut prev_ll: Option<f64> = None;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut degenerated = false;
    let mut iterations = 0;
    let mut warnings: Vec<String> = Vec::new();

    loop {
        // the log-likelihood at the current parameters doubles as the
        // monotonicity and convergence check on the previous M-step
        let (ll, shock) = e_step(
            panel,
            &blocks[0].intensity_surface()?,
            &blocks[1].intensity_surface()?,
            lambda3,
        )?;
        if let Some(prev) = prev_ll {
            if ll < prev - 1e-10 * (1.0 + prev.abs()) {
                return Err(Error::EmNotMonotone {
                    iteration: iterations,
                    previous: prev,
                    current: ll,
                });
            }
        }
        trace.push(ll);
        if let Some(prev) = prev_ll {
            if (ll - prev).abs() <= settings.loglik_tol * (1.0 + prev.abs()) {
                converged = true;
                break;
            }
        }
        prev_ll = Some(ll);
        if iterations >= settings.em_max_iterations {
            break;
        }
        iterations += 1;

        // M-step
        let shock_sum: f64 = shock.as_slice().iter().sum();
        let new_lambda3 = shock_sum / n_cells;
        if new_lambda3 <= 1e-12 * (1.0 + mean_min) {
            degenerated = true;
            break;
        }
        let response_a = panel.counts_a().zip_map(&shock, |x, s| x as f64 - s)?;
        let response_b = panel.counts_b().zip_map(&shock, |y, s| y as f64 - s)?;
        let fit_a = fit_poisson_block(&response_a, settings, &context_a, Some(&blocks[0]))?;
        let fit_b = fit_poisson_block(&response_b, settings, &context_b, Some(&blocks[1]))?;
        blocks = vec![fit_a.params, fit_b.params];
        lambda3 = new_lambda3;
        warnings = fit_a.warnings;
        warnings.extend(fit_b.warnings);
    }

    let final_ll = *trace.last().expect("at least one E-step ran");
    if degenerated || final_ll < dp.log_lik {
        // the shock collapsed, or EM stalled below the independence fit:
        // the boundary fit is the better answer
        let mut result = degenerate(
            dp,
            vec!["shock rate degenerated to zero; counts fit as independent".into()],
        );
        result.iterations = iterations;
        return Ok(result);
    }
    if !converged {
        warnings.push(format!(
            "EM stopped after {iterations} sweeps without meeting the likelihood tolerance"
        ));
    }

    Ok(FitResult {
        model: ModelKind::BivariatePoisson,
        labels: (label_a.to_string(), label_b.to_string()),
        ages: panel.ages().to_vec(),
        years: panel.years().to_vec(),
        blocks,
        lambda3: Some(lambda3),
        log_lik: final_ll,
        n_obs: panel.n_ages() * panel.n_years(),
        iterations,
        converged,
        degenerated: false,
        warnings,
        trace,
    })
}
