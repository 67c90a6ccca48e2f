//! Dense BFGS minimizer with Armijo backtracking.
//!
//! The objective closure returns the value and gradient together (the
//! Skellam objective shares its Bessel evaluations between the two). An
//! infinite value marks an inadmissible trial point and makes the line
//! search retreat; the gradient is only inspected at accepted points.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) struct Minimum {
    pub theta: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each accepted step.
    pub trace: Vec<f64>,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const CURVATURE_GUARD: f64 = 1e-10;

/// Minimizes `eval` from `theta0`. `is_converged(theta, gradient)` is
/// consulted after every accepted step; hitting `max_iterations` or running
/// out of ascent reports `converged = false` instead of an error.
pub(crate) fn minimize<F, C>(
    mut eval: F,
    theta0: Vec<f64>,
    max_iterations: usize,
    mut is_converged: C,
) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    C: FnMut(&[f64], &[f64]) -> bool,
{
    let n = theta0.len();
    let mut theta = DVector::from_vec(theta0);
    let (mut value, grad0) = eval(theta.as_slice())?;
    if !value.is_finite() {
        return Err(Error::SolveFailed {
            context: "bfgs: objective not finite at the initial point",
        });
    }
    let mut gradient = DVector::from_vec(grad0);
    let mut inv_hessian = DMatrix::<f64>::identity(n, n);
    let mut scaled = false;
    let mut trace = Vec::new();
    let mut converged = is_converged(theta.as_slice(), gradient.as_slice());
    let mut iterations = 0;
    let mut stalls = 0;

    while !converged && iterations < max_iterations {
        iterations += 1;
        let mut direction = -(&inv_hessian * &gradient);
        let mut slope = gradient.dot(&direction);
        if !(slope < 0.0) {
            // curvature information went bad; restart from steepest descent
            inv_hessian = DMatrix::identity(n, n);
            scaled = false;
            direction = -gradient.clone();
            slope = -gradient.norm_squared();
            if slope == 0.0 {
                converged = true;
                break;
            }
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate = &theta + step * &direction;
            let (cand_value, cand_grad) = eval(candidate.as_slice())?;
            if cand_value.is_finite() && cand_value <= value + ARMIJO_C1 * step * slope {
                accepted = Some((candidate, cand_value, cand_grad));
                break;
            }
            step *= 0.5;
        }
        let Some((new_theta, new_value, new_grad)) = accepted else {
            // the line search cannot improve: numerical optimum
            break;
        };
        let new_gradient = DVector::from_vec(new_grad);

        let s = &new_theta - &theta;
        let y = &new_gradient - &gradient;
        let sy = s.dot(&y);
        if sy > CURVATURE_GUARD * s.norm() * y.norm() {
            if !scaled {
                // Oren-Luenberger scaling before the first update
                let yy = y.norm_squared();
                if yy > 0.0 {
                    inv_hessian = DMatrix::identity(n, n) * (sy / yy);
                }
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &inv_hessian * &y;
            let yhy = y.dot(&hy);
            // H <- H - rho (H y s' + s y' H) + rho^2 (y' H y) s s' + rho s s'
            inv_hessian -= rho * (&hy * s.transpose() + &s * hy.transpose());
            inv_hessian += (rho * rho * yhy + rho) * (&s * s.transpose());
        }

        let improvement = value - new_value;
        theta = new_theta;
        value = new_value;
        gradient = new_gradient;
        trace.push(value);
        converged = is_converged(theta.as_slice(), gradient.as_slice());

        if !converged && improvement <= 1e-15 * (1.0 + value.abs()) {
            stalls += 1;
            if stalls >= 3 {
                break; // stuck at the numerical floor of the objective
            }
        } else {
            stalls = 0;
        }
    }

    Ok(Minimum {
        theta: theta.as_slice().to_vec(),
        value,
        gradient: gradient.as_slice().to_vec(),
        iterations,
        converged,
        trace,
    })
}
