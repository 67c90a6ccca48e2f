//! Synthetic panel generation and independent pmf oracles.
//!
//! A [`SimSpec`] describes two log-linear age-period intensity surfaces and
//! a count family (independent Poisson pairs, or bivariate Poisson with a
//! common shock). [`simulate_panel`] draws every cell from its own RNG
//! substream, so the panel is identical regardless of traversal order and
//! individual cells can be reproduced in isolation.
//!
//! The oracle functions recompute pmfs by direct summation without any
//! Bessel evaluation, giving the distribution kernels an independent
//! cross-check.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::design::AgePeriodParams;
use crate::dist::sample::{sample_bivariate_poisson, sample_poisson};
use crate::dist::special::{ln_factorial, LogSumExp};
use crate::dist::TOLERANCES;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::panel::MortalityPanel;

/// Count family to simulate from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimFamily {
    /// Independent Poisson draws for the two series.
    DoublePoisson,
    /// Common-shock bivariate Poisson draws.
    BivariatePoisson,
}

/// How the common-shock rate varies over cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda3Spec {
    /// Same shock rate in every cell.
    Constant(f64),
    /// Shock rate `scale * sqrt(lambda1 * lambda2)` per cell, which keeps
    /// the count correlation roughly flat across cells of very different
    /// size.
    Scaled(f64),
}

/// Full description of a synthetic panel.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub family: SimFamily,
    pub n_ages: usize,
    pub n_years: usize,
    pub start_year: i32,
    pub labels: (String, String),
    pub seed: u64,
    pub block_a: AgePeriodParams,
    pub block_b: AgePeriodParams,
    pub lambda3: Option<Lambda3Spec>,
}

/// Five-year age-group labels "0-4", "5-9", ..., ending in an open group.
pub fn auto_age_labels(n_ages: usize) -> Vec<String> {
    (0..n_ages)
        .map(|i| {
            let lo = 5 * i;
            if i + 1 == n_ages {
                format!("{lo}+")
            } else {
                format!("{}-{}", lo, lo + 4)
            }
        })
        .collect()
}

fn parse_effects(value: &str, len: usize) -> std::result::Result<Vec<f64>, String> {
    let trimmed = value.trim();
    if let Some(args) = trimmed
        .strip_prefix("linear(")
        .and_then(|v| v.strip_suffix(')'))
    {
        let parts: Vec<&str> = args.split(',').map(str::trim).collect();
        let slope: f64 = parts[0]
            .parse()
            .map_err(|_| format!("bad slope {:?}", parts[0]))?;
        let quad: f64 = match parts.len() {
            1 => 0.0,
            2 => parts[1]
                .parse()
                .map_err(|_| format!("bad quadratic term {:?}", parts[1]))?,
            _ => return Err(format!("linear(...) takes 1 or 2 arguments, got {trimmed:?}")),
        };
        return Ok((1..=len)
            .map(|k| {
                let k = k as f64;
                slope * k + quad * k * k
            })
            .collect());
    }
    let values: Vec<f64> = trimmed
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad effect value {v:?}"))
        })
        .collect::<std::result::Result<_, _>>()?;
    if values.len() != len {
        return Err(format!("expected {len} effect values, got {}", values.len()));
    }
    Ok(values)
}

impl SimSpec {
    /// Parses the key = value spec format:
    ///
    /// ```text
    /// family = bp            # dp | bp
    /// ages = 17
    /// years = 40
    /// start_year = 1961
    /// labels = alpha, beta
    /// seed = 42
    /// intercept_a = 6.0
    /// age_a = linear(0.08)   # or an explicit comma list of ages-1 values
    /// period_a = linear(-0.01)
    /// intercept_b = 5.8
    /// age_b = linear(0.07)
    /// period_b = linear(-0.012)
    /// lambda3 = 25.0         # bp only; or lambda3_scale = 0.3
    /// ```
    pub fn parse(text: &str, path: &str) -> Result<SimSpec> {
        let err = |line: usize, message: String| Error::SimSpec {
            path: path.to_string(),
            line,
            message,
        };
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(i + 1, format!("expected key = value, got {line:?}")))?;
            entries.push((i + 1, key.trim().to_string(), value.trim().to_string()));
        }
        let lookup = |key: &str| -> Option<(usize, &str)> {
            entries
                .iter()
                .find(|(_, k, _)| k == key)
                .map(|(line, _, v)| (*line, v.as_str()))
        };
        let required = |key: &str| -> Result<(usize, &str)> {
            lookup(key).ok_or_else(|| err(0, format!("missing required key {key:?}")))
        };
        for (line, key, _) in &entries {
            let known = [
                "family", "ages", "years", "start_year", "labels", "seed",
                "intercept_a", "age_a", "period_a", "intercept_b", "age_b",
                "period_b", "lambda3", "lambda3_scale",
            ];
            if !known.contains(&key.as_str()) {
                return Err(err(*line, format!("unknown key {key:?}")));
            }
        }

        let (line, family_text) = required("family")?;
        let family = match family_text {
            "dp" => SimFamily::DoublePoisson,
            "bp" => SimFamily::BivariatePoisson,
            other => return Err(err(line, format!("family must be dp or bp, got {other:?}"))),
        };
        let parse_num = |key: &str| -> Result<(usize, f64)> {
            let (line, v) = required(key)?;
            let value = v
                .parse::<f64>()
                .map_err(|_| err(line, format!("{key} value {v:?} is not a number")))?;
            Ok((line, value))
        };
        let (line, ages_v) = parse_num("ages")?;
        if ages_v < 1.0 || ages_v.fract() != 0.0 {
            return Err(err(line, format!("ages must be a positive integer, got {ages_v}")));
        }
        let n_ages = ages_v as usize;
        let (line, years_v) = parse_num("years")?;
        if years_v < 1.0 || years_v.fract() != 0.0 {
            return Err(err(line, format!("years must be a positive integer, got {years_v}")));
        }
        let n_years = years_v as usize;
        let (_, start_v) = parse_num("start_year")?;
        let start_year = start_v as i32;
        let (line, labels_text) = required("labels")?;
        let label_parts: Vec<&str> = labels_text.split(',').map(str::trim).collect();
        if label_parts.len() != 2 || label_parts.iter().any(|l| l.is_empty()) {
            return Err(err(line, format!("labels must be two names, got {labels_text:?}")));
        }
        let labels = (label_parts[0].to_string(), label_parts[1].to_string());
        let seed = match lookup("seed") {
            Some((line, v)) => v
                .parse::<u64>()
                .map_err(|_| err(line, format!("seed {v:?} is not a nonnegative integer")))?,
            None => 0,
        };

        let block = |suffix: &str| -> Result<AgePeriodParams> {
            let (_, intercept) = parse_num(&format!("intercept_{suffix}"))?;
            let (line, age_text) = required(&format!("age_{suffix}"))?;
            let age_effects =
                parse_effects(age_text, n_ages - 1).map_err(|m| err(line, m))?;
            let (line, period_text) = required(&format!("period_{suffix}"))?;
            let period_effects =
                parse_effects(period_text, n_years - 1).map_err(|m| err(line, m))?;
            Ok(AgePeriodParams {
                intercept,
                age_effects,
                period_effects,
            })
        };
        let block_a = block("a")?;
        let block_b = block("b")?;

        let lambda3 = match (lookup("lambda3"), lookup("lambda3_scale")) {
            (Some(_), Some((line, _))) => {
                return Err(err(line, "give lambda3 or lambda3_scale, not both".into()))
            }
            (Some((line, v)), None) => {
                let value: f64 = v
                    .parse()
                    .map_err(|_| err(line, format!("lambda3 {v:?} is not a number")))?;
                if !(value >= 0.0) {
                    return Err(err(line, format!("lambda3 must be >= 0, got {value}")));
                }
                Some(Lambda3Spec::Constant(value))
            }
            (None, Some((line, v))) => {
                let value: f64 = v
                    .parse()
                    .map_err(|_| err(line, format!("lambda3_scale {v:?} is not a number")))?;
                if !(value >= 0.0) {
                    return Err(err(line, format!("lambda3_scale must be >= 0, got {value}")));
                }
                Some(Lambda3Spec::Scaled(value))
            }
            (None, None) => None,
        };
        match (family, &lambda3) {
            (SimFamily::DoublePoisson, Some(_)) => {
                return Err(err(0, "lambda3 only applies to family = bp".into()))
            }
            (SimFamily::BivariatePoisson, None) => {
                return Err(err(0, "family = bp requires lambda3 or lambda3_scale".into()))
            }
            _ => {}
        }

        Ok(SimSpec {
            family,
            n_ages,
            n_years,
            start_year,
            labels,
            seed,
            block_a,
            block_b,
            lambda3,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SimSpec> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// The two intensity surfaces implied by the parameter blocks.
    pub fn intensities(&self) -> Result<(Grid<f64>, Grid<f64>)> {
        for (block, which) in [(&self.block_a, "first"), (&self.block_b, "second")] {
            if block.n_ages() != self.n_ages || block.n_years() != self.n_years {
                return Err(Error::DimensionMismatch {
                    reason: format!(
                        "{which} parameter block is {}x{}, spec is {}x{}",
                        block.n_ages(),
                        block.n_years(),
                        self.n_ages,
                        self.n_years
                    ),
                });
            }
        }
        Ok((
            self.block_a.intensity_surface()?,
            self.block_b.intensity_surface()?,
        ))
    }

    /// Shock rate for one cell, given the cell's two intensities.
    pub fn lambda3_at(&self, l1: f64, l2: f64) -> f64 {
        match self.lambda3 {
            None => 0.0,
            Some(Lambda3Spec::Constant(v)) => v,
            Some(Lambda3Spec::Scaled(scale)) => scale * (l1 * l2).sqrt(),
        }
    }
}

/// Draws a complete panel from the spec.
///
/// Cell (i, j) uses RNG stream `i * n_years + j` of a ChaCha8 generator
/// seeded with `spec.seed`, so each cell's draw is independent of every
/// other cell and of traversal order. Within a cell the first series is
/// drawn before the second (and the shock variate last under bp).
pub fn simulate_panel(spec: &SimSpec) -> Result<MortalityPanel> {
    let (intens_a, intens_b) = spec.intensities()?;
    let mut counts_a = Grid::filled(spec.n_ages, spec.n_years, 0u64);
    let mut counts_b = Grid::filled(spec.n_ages, spec.n_years, 0u64);
    for i in 0..spec.n_ages {
        for j in 0..spec.n_years {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream((i * spec.n_years + j) as u64);
            let l1 = intens_a.get(i, j);
            let l2 = intens_b.get(i, j);
            let (a, b) = match spec.family {
                SimFamily::DoublePoisson => {
                    let a = sample_poisson(&mut rng, l1)?;
                    let b = sample_poisson(&mut rng, l2)?;
                    (a, b)
                }
                SimFamily::BivariatePoisson => {
                    sample_bivariate_poisson(&mut rng, l1, l2, spec.lambda3_at(l1, l2))?
                }
            };
            counts_a.set(i, j, a);
            counts_b.set(i, j, b);
        }
    }
    let years: Vec<i32> = (0..spec.n_years)
        .map(|j| spec.start_year + j as i32)
        .collect();
    MortalityPanel::new(
        auto_age_labels(spec.n_ages),
        years,
        counts_a,
        counts_b,
        spec.labels.clone(),
    )
}

fn log_poisson_term(k: u64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * lambda.ln() - lambda - ln_factorial(k)
}

/// P(X - Y = z) for independent Poisson X, Y by direct convolution.
///
/// Sums `P(X = z + k) P(Y = k)` outward from the peak term until the
/// remaining terms are negligible. Independent of the Bessel evaluation
/// used by the distribution kernels.
pub fn skellam_pmf_by_convolution(z: i64, lambda1: f64, lambda2: f64) -> Result<f64> {
    for lambda in [lambda1, lambda2] {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::DomainPositive {
                what: "convolution oracle rate",
                value: lambda,
            });
        }
    }
    // Peak of ln P(X = z + k) + ln P(Y = k) over k: k (z + k) = l1 l2.
    let zf = z as f64;
    let peak = 0.5 * (-zf + (zf * zf + 4.0 * lambda1 * lambda2).sqrt());
    let k_min = (-zf).max(0.0) as i64; // need z + k >= 0 and k >= 0
    let k_peak = (peak.round() as i64).max(k_min);
    let term = |k: i64| log_poisson_term((z + k) as u64, lambda1) + log_poisson_term(k as u64, lambda2);

    let mut sum = LogSumExp::new();
    let peak_log = term(k_peak);
    sum.add(peak_log);
    let cutoff = peak_log - TOLERANCES.tail_nats;
    let mut converged_up = false;
    let mut converged_down = k_peak == k_min;
    for step in 1..=TOLERANCES.max_series_terms as i64 {
        if !converged_up {
            let t = term(k_peak + step);
            sum.add(t);
            if t < cutoff {
                converged_up = true;
            }
        }
        if !converged_down {
            let k = k_peak - step;
            let t = term(k);
            sum.add(t);
            if k == k_min || t < cutoff {
                converged_down = true;
            }
        }
        if converged_up && converged_down {
            return Ok(sum.value().exp());
        }
    }
    Err(Error::OracleTruncation {
        what: format!("convolution for z = {z}, rates {lambda1}, {lambda2}"),
    })
}

/// P(X = x, Y = y) for the common-shock bivariate Poisson by finite
/// enumeration over the shock count. Exact up to summation rounding.
pub fn bivariate_poisson_pmf_by_enumeration(
    x: u64,
    y: u64,
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
) -> Result<f64> {
    for lambda in [lambda1, lambda2] {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::DomainPositive {
                what: "enumeration oracle rate",
                value: lambda,
            });
        }
    }
    if !(lambda3 >= 0.0) || !lambda3.is_finite() {
        return Err(Error::DomainNonNegative {
            what: "enumeration oracle shock rate",
            value: lambda3,
        });
    }
    let mut sum = LogSumExp::new();
    for k in 0..=x.min(y) {
        sum.add(
            log_poisson_term(x - k, lambda1)
                + log_poisson_term(y - k, lambda2)
                + log_poisson_term(k, lambda3),
        );
        if lambda3 == 0.0 {
            break; // only the k = 0 term is nonzero
        }
    }
    Ok(sum.value().exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{bivariate_poisson_pmf, skellam_pmf};

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
    }

    const SPEC_TEXT: &str = "\
family = bp
ages = 4
years = 6
start_year = 1990
labels = alpha, beta
seed = 7
intercept_a = 3.0
age_a = linear(0.2)
period_a = linear(-0.05)
intercept_b = 2.8
age_b = 0.1, 0.3, 0.4
period_b = linear(-0.04, 0.001)
lambda3 = 2.5
";

    #[test]
    fn spec_parses_both_effect_forms() {
        let spec = SimSpec::parse(SPEC_TEXT, "spec.cfg").unwrap();
        assert_eq!(spec.family, SimFamily::BivariatePoisson);
        assert_eq!((spec.n_ages, spec.n_years), (4, 6));
        assert_eq!(spec.block_a.age_effects, vec![0.2, 0.4, 0.6000000000000001]);
        assert_eq!(spec.block_b.age_effects, vec![0.1, 0.3, 0.4]);
        assert_eq!(spec.block_b.period_effects[1], -0.04 * 2.0 + 0.001 * 4.0);
        assert_eq!(spec.lambda3, Some(Lambda3Spec::Constant(2.5)));
        assert_eq!(spec.lambda3_at(100.0, 400.0), 2.5);
    }

    #[test]
    fn spec_rejects_inconsistencies() {
        let dp_with_shock = SPEC_TEXT.replace("family = bp", "family = dp");
        assert!(SimSpec::parse(&dp_with_shock, "spec.cfg").is_err());
        let bp_without_shock = SPEC_TEXT.replace("lambda3 = 2.5", "");
        assert!(SimSpec::parse(&bp_without_shock, "spec.cfg").is_err());
        let short_ages = SPEC_TEXT.replace("age_b = 0.1, 0.3, 0.4", "age_b = 0.1, 0.3");
        assert!(SimSpec::parse(&short_ages, "spec.cfg").is_err());
        let unknown = format!("{SPEC_TEXT}mystery = 1\n");
        assert!(SimSpec::parse(&unknown, "spec.cfg").is_err());
    }

    #[test]
    fn scaled_shock_follows_cell_size() {
        let text = SPEC_TEXT.replace("lambda3 = 2.5", "lambda3_scale = 0.3");
        let spec = SimSpec::parse(&text, "spec.cfg").unwrap();
        assert_eq!(spec.lambda3_at(100.0, 400.0), 0.3 * 200.0);
    }

    #[test]
    fn auto_labels_are_five_year_groups() {
        assert_eq!(auto_age_labels(3), vec!["0-4", "5-9", "10+"]);
        assert_eq!(auto_age_labels(1), vec!["0+"]);
    }

    #[test]
    fn simulation_is_deterministic_in_the_seed() {
        let spec = SimSpec::parse(SPEC_TEXT, "spec.cfg").unwrap();
        let one = simulate_panel(&spec).unwrap();
        let two = simulate_panel(&spec).unwrap();
        assert_eq!(one, two);
        let mut reseeded = spec.clone();
        reseeded.seed = 8;
        assert_ne!(simulate_panel(&reseeded).unwrap(), one);
    }

    #[test]
    fn simulated_means_track_the_intensities() {
        // One large flat panel: every cell has the same rates, so the
        // cell average estimates the intensity.
        let text = "\
family = dp
ages = 40
years = 50
start_year = 2000
labels = a, b
seed = 11
intercept_a = 4.0
age_a = linear(0)
period_a = linear(0)
intercept_b = 3.0
age_b = linear(0)
period_b = linear(0)
";
        let spec = SimSpec::parse(text, "flat.cfg").unwrap();
        let panel = simulate_panel(&spec).unwrap();
        let n = (spec.n_ages * spec.n_years) as f64;
        let mean_a: f64 = panel.counts_a().as_slice().iter().map(|&c| c as f64).sum::<f64>() / n;
        let mean_b: f64 = panel.counts_b().as_slice().iter().map(|&c| c as f64).sum::<f64>() / n;
        // se of the mean is sqrt(lambda / n) ~ 0.165 and 0.1
        assert!((mean_a - 4.0f64.exp()).abs() < 0.9, "mean_a = {mean_a}");
        assert!((mean_b - 3.0f64.exp()).abs() < 0.6, "mean_b = {mean_b}");
    }

    #[test]
    fn convolution_oracle_matches_bessel_kernel() {
        for &(z, l1, l2) in &[
            (0i64, 1.0, 1.0),
            (3, 2.5, 4.0),
            (-7, 10.0, 30.0),
            (25, 100.0, 80.0),
            (-4, 700.0, 720.0),
            (120, 5000.0, 4800.0),
        ] {
            let oracle = skellam_pmf_by_convolution(z, l1, l2).unwrap();
            let kernel = skellam_pmf(z, l1, l2).unwrap();
            assert!(
                rel_close(oracle, kernel, 1e-11),
                "z = {z}, rates ({l1}, {l2}): oracle {oracle:e} vs kernel {kernel:e}"
            );
        }
    }

    #[test]
    fn convolution_oracle_sums_to_one() {
        let (l1, l2) = (6.0, 9.5);
        let total: f64 = (-80..=80)
            .map(|z| skellam_pmf_by_convolution(z, l1, l2).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12, "total = {total}");
    }

    #[test]
    fn enumeration_oracle_matches_kernel() {
        for &(x, y, l1, l2, l3) in &[
            (0u64, 0u64, 1.0, 2.0, 0.5),
            (4, 7, 3.0, 5.0, 1.5),
            (12, 3, 8.0, 2.0, 1.0),
            (40, 45, 30.0, 35.0, 6.0),
            (5, 9, 4.0, 8.0, 0.0),
        ] {
            let oracle = bivariate_poisson_pmf_by_enumeration(x, y, l1, l2, l3).unwrap();
            let kernel = bivariate_poisson_pmf(x, y, l1, l2, l3).unwrap();
            assert!(
                rel_close(oracle, kernel, 1e-12),
                "({x}, {y}; {l1}, {l2}, {l3}): oracle {oracle:e} vs kernel {kernel:e}"
            );
        }
    }

    #[test]
    fn enumeration_oracle_sums_to_one() {
        let (l1, l2, l3) = (3.0, 4.5, 1.2);
        let mut total = 0.0;
        for x in 0..60 {
            for y in 0..60 {
                total += bivariate_poisson_pmf_by_enumeration(x, y, l1, l2, l3).unwrap();
            }
        }
        assert!((total - 1.0).abs() < 1e-10, "total = {total}");
    }
}
