//! Log-linear age-period predictor with a reference-cell parameterisation.
//!
//! Each count series gets log lambda_{x,t} = mu + beta^age_x + beta^per_t
//! with the first age and first year pinned to zero (and not stored), so a
//! block over A ages and T years carries 1 + (A-1) + (T-1) free values.
//! Flat parameter vectors concatenate the blocks in series order with any
//! scalar extras at the end.

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Linear predictors above this overflow exp() in f64.
pub const PREDICTOR_LIMIT: f64 = 700.0;

/// One series' intercept and effects; `age_effects[i]` belongs to age index
/// i + 1 and `period_effects[j]` to year index j + 1 (index 0 is the
/// reference cell in both directions).
#[derive(Debug, Clone, PartialEq)]
pub struct AgePeriodParams {
    pub intercept: f64,
    pub age_effects: Vec<f64>,
    pub period_effects: Vec<f64>,
}

impl AgePeriodParams {
    pub fn zeros(n_ages: usize, n_years: usize) -> Self {
        AgePeriodParams {
            intercept: 0.0,
            age_effects: vec![0.0; n_ages.saturating_sub(1)],
            period_effects: vec![0.0; n_years.saturating_sub(1)],
        }
    }

    pub fn n_ages(&self) -> usize {
        self.age_effects.len() + 1
    }

    pub fn n_years(&self) -> usize {
        self.period_effects.len() + 1
    }

    /// Number of free parameters: 1 + (A-1) + (T-1).
    pub fn n_params(&self) -> usize {
        1 + self.age_effects.len() + self.period_effects.len()
    }

    #[inline]
    pub fn age_effect(&self, age: usize) -> f64 {
        if age == 0 {
            0.0
        } else {
            self.age_effects[age - 1]
        }
    }

    #[inline]
    pub fn period_effect(&self, year: usize) -> f64 {
        if year == 0 {
            0.0
        } else {
            self.period_effects[year - 1]
        }
    }

    /// mu + beta^age_x + beta^per_t with bounds checking.
    pub fn linear_predictor(&self, age: usize, year: usize) -> Result<f64> {
        if age >= self.n_ages() {
            return Err(Error::IndexOutOfRange {
                what: "age index",
                index: age,
                size: self.n_ages(),
            });
        }
        if year >= self.n_years() {
            return Err(Error::IndexOutOfRange {
                what: "year index",
                index: year,
                size: self.n_years(),
            });
        }
        Ok(self.intercept + self.age_effect(age) + self.period_effect(year))
    }

    /// exp of the predictor over the whole grid; errors on any cell whose
    /// predictor would overflow exp().
    pub fn intensity_surface(&self) -> Result<Grid<f64>> {
        let (n_ages, n_years) = (self.n_ages(), self.n_years());
        let mut out = Grid::filled(n_ages, n_years, 0.0);
        for age in 0..n_ages {
            let base = self.intercept + self.age_effect(age);
            for year in 0..n_years {
                let lp = base + self.period_effect(year);
                if lp > PREDICTOR_LIMIT {
                    return Err(Error::PredictorOverflow {
                        value: lp,
                        limit: PREDICTOR_LIMIT,
                        age,
                        year,
                    });
                }
                out.set(age, year, lp.exp());
            }
        }
        Ok(out)
    }
}

/// Shape of a flat parameter vector: `n_blocks` age-period blocks followed
/// by `n_extras` scalars.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamLayout {
    pub n_ages: usize,
    pub n_years: usize,
    pub n_blocks: usize,
    pub n_extras: usize,
}

impl ParamLayout {
    pub fn block_len(&self) -> usize {
        1 + (self.n_ages - 1) + (self.n_years - 1)
    }

    pub fn total_len(&self) -> usize {
        self.n_blocks * self.block_len() + self.n_extras
    }

    /// Flattens blocks and extras to `[block_0, block_1, ..., extras]`,
    /// each block as `[intercept, age effects, period effects]`.
    pub fn pack(&self, blocks: &[AgePeriodParams], extras: &[f64]) -> Result<Vec<f64>> {
        if blocks.len() != self.n_blocks || extras.len() != self.n_extras {
            return Err(Error::DimensionMismatch {
                reason: format!(
                    "pack got {} blocks and {} extras, layout has {} and {}",
                    blocks.len(),
                    extras.len(),
                    self.n_blocks,
                    self.n_extras
                ),
            });
        }
        let mut out = Vec::with_capacity(self.total_len());
        for block in blocks {
            if block.n_ages() != self.n_ages || block.n_years() != self.n_years {
                return Err(Error::DimensionMismatch {
                    reason: format!(
                        "block is {} ages x {} years, layout is {} x {}",
                        block.n_ages(),
                        block.n_years(),
                        self.n_ages,
                        self.n_years
                    ),
                });
            }
            out.push(block.intercept);
            out.extend_from_slice(&block.age_effects);
            out.extend_from_slice(&block.period_effects);
        }
        out.extend_from_slice(extras);
        Ok(out)
    }

    /// Inverse of [`pack`]; rejects vectors of the wrong length.
    pub fn unpack(&self, theta: &[f64]) -> Result<(Vec<AgePeriodParams>, Vec<f64>)> {
        if theta.len() != self.total_len() {
            return Err(Error::ParamLength {
                got: theta.len(),
                want: self.total_len(),
            });
        }
        let mut blocks = Vec::with_capacity(self.n_blocks);
        let mut offset = 0;
        for _ in 0..self.n_blocks {
            let intercept = theta[offset];
            offset += 1;
            let age_effects = theta[offset..offset + self.n_ages - 1].to_vec();
            offset += self.n_ages - 1;
            let period_effects = theta[offset..offset + self.n_years - 1].to_vec();
            offset += self.n_years - 1;
            blocks.push(AgePeriodParams {
                intercept,
                age_effects,
                period_effects,
            });
        }
        Ok((blocks, theta[offset..].to_vec()))
    }

    /// Flat index of a block's intercept.
    pub fn intercept_index(&self, block: usize) -> usize {
        block * self.block_len()
    }

    /// Flat index of a block's age effect for age index >= 1.
    pub fn age_index(&self, block: usize, age: usize) -> usize {
        debug_assert!(age >= 1 && age < self.n_ages);
        block * self.block_len() + age
    }

    /// Flat index of a block's period effect for year index >= 1.
    pub fn period_index(&self, block: usize, year: usize) -> usize {
        debug_assert!(year >= 1 && year < self.n_years);
        block * self.block_len() + (self.n_ages - 1) + year
    }
}
