//! Dense age x year grid used for counts, gaps and intensities.

use crate::error::{Error, Result};

/// Row-major rectangular grid; rows are age groups, columns are years.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    n_ages: usize,
    n_years: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn filled(n_ages: usize, n_years: usize, value: T) -> Self {
        Grid {
            n_ages,
            n_years,
            data: vec![value; n_ages * n_years],
        }
    }

    /// Builds from row-major data; `data.len()` must equal `n_ages * n_years`.
    pub fn from_vec(n_ages: usize, n_years: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n_ages * n_years {
            return Err(Error::DimensionMismatch {
                reason: format!(
                    "grid data length {} != {} ages x {} years",
                    data.len(),
                    n_ages,
                    n_years
                ),
            });
        }
        Ok(Grid {
            n_ages,
            n_years,
            data,
        })
    }

    pub fn n_ages(&self) -> usize {
        self.n_ages
    }

    pub fn n_years(&self) -> usize {
        self.n_years
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, age: usize, year: usize) -> T {
        debug_assert!(age < self.n_ages && year < self.n_years);
        self.data[age * self.n_years + year]
    }

    #[inline]
    pub fn set(&mut self, age: usize, year: usize, value: T) {
        debug_assert!(age < self.n_ages && year < self.n_years);
        self.data[age * self.n_years + year] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, age: usize) -> &[T] {
        &self.data[age * self.n_years..(age + 1) * self.n_years]
    }

    /// Cell iteration in row-major order: `(age, year, value)`.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        let n_years = self.n_years;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, &v)| (i / n_years, i % n_years, v))
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            n_ages: self.n_ages,
            n_years: self.n_years,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map<U: Copy, V: Copy>(&self, other: &Grid<U>, f: impl Fn(T, U) -> V) -> Result<Grid<V>> {
        if self.n_ages != other.n_ages || self.n_years != other.n_years {
            return Err(Error::DimensionMismatch {
                reason: format!(
                    "grids are {}x{} and {}x{}",
                    self.n_ages, self.n_years, other.n_ages, other.n_years
                ),
            });
        }
        Ok(Grid {
            n_ages: self.n_ages,
            n_years: self.n_years,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn same_shape<U: Copy>(&self, other: &Grid<U>) -> bool {
        self.n_ages == other.n_ages && self.n_years == other.n_years
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_layout() {
        let g = Grid::from_vec(2, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(g.get(0, 0), 1);
        assert_eq!(g.get(0, 2), 3);
        assert_eq!(g.get(1, 0), 4);
        assert_eq!(g.row(1), &[4, 5, 6]);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(Grid::from_vec(2, 3, vec![1, 2, 3]).is_err());
    }

    #[test]
    fn cells_enumerate_in_order() {
        let g = Grid::from_vec(2, 2, vec![10, 11, 12, 13]).unwrap();
        let cells: Vec<_> = g.cells().collect();
        assert_eq!(cells, vec![(0, 0, 10), (0, 1, 11), (1, 0, 12), (1, 1, 13)]);
    }
}
