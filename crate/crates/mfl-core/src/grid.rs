//! Uniform time grids and sampled paths.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Uniform partition of `[0, T]` into `n` steps, points `t_i = i T / n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T> {
    horizon: T,
    steps: usize,
}

impl<T: Scalar> TimeGrid<T> {
    pub fn new(horizon: T, steps: usize) -> Result<Self> {
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(Error::InvalidGrid(format!("horizon {horizon} must be positive")));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("step count must be positive".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    /// Number of steps `n`; the grid has `n + 1` points.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> T {
        self.horizon / T::of_usize(self.steps)
    }

    pub fn point(&self, i: usize) -> T {
        debug_assert!(i <= self.steps);
        self.horizon * T::of_usize(i) / T::of_usize(self.steps)
    }

    pub fn points(&self) -> impl Iterator<Item = T> + '_ {
        (0..=self.steps).map(move |i| self.point(i))
    }

    /// Grid with the same horizon and half the step size.
    pub fn refined(&self) -> Self {
        Self { horizon: self.horizon, steps: self.steps * 2 }
    }

    /// Grid with the same horizon and `factor` times fewer steps.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps % factor != 0 {
            return Err(Error::InvalidGrid(format!(
                "cannot coarsen {} steps by factor {factor}",
                self.steps
            )));
        }
        Ok(Self { horizon: self.horizon, steps: self.steps / factor })
    }
}

/// Vector-valued path sampled on a [`TimeGrid`]; values stored row-major as
/// `(n + 1) × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path<T> {
    grid: TimeGrid<T>,
    dim: usize,
    values: Vec<T>,
}

impl<T: Scalar> Path<T> {
    pub fn new(grid: TimeGrid<T>, dim: usize, values: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch("path dimension must be >= 1".into()));
        }
        if values.len() != grid.len() * dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values ({} points x dim {dim}), got {}",
                grid.len() * dim,
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, dim, values })
    }

    pub fn zeros(grid: TimeGrid<T>, dim: usize) -> Self {
        Self { grid, dim, values: vec![T::zero(); grid.len() * dim] }
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, i: usize) -> &[T] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Scalar value at point `i`; panics unless `dim == 1`.
    pub fn scalar(&self, i: usize) -> T {
        assert_eq!(self.dim, 1, "scalar() requires a 1-dimensional path");
        self.values[i]
    }

    pub fn terminal(&self) -> &[T] {
        self.value(self.grid.steps())
    }

    pub fn raw(&self) -> &[T] {
        &self.values
    }

    /// Euclidean norm of the increment between points `i` and `j`.
    pub fn increment_norm(&self, i: usize, j: usize) -> T {
        let a = self.value(i);
        let b = self.value(j);
        let mut acc = T::zero();
        for k in 0..self.dim {
            let d = b[k] - a[k];
            acc += d * d;
        }
        acc.sqrt()
    }

    /// Largest Euclidean norm over all grid points.
    pub fn sup_norm(&self) -> T {
        let mut best = T::zero();
        for i in 0..self.len() {
            let v = self.value(i);
            let mut acc = T::zero();
            for k in 0..self.dim {
                acc += v[k] * v[k];
            }
            best = best.max(acc.sqrt());
        }
        best
    }

    /// Restriction to every `factor`-th point (same horizon, coarser grid).
    pub fn subsample(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.coarsened(factor)?;
        let mut values = Vec::with_capacity(grid.len() * self.dim);
        for i in 0..grid.len() {
            values.extend_from_slice(self.value(i * factor));
        }
        Ok(Self { grid, dim: self.dim, values })
    }

    pub fn same_grid(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "grids differ: ({}, {}) vs ({}, {})",
                self.grid.horizon(),
                self.grid.steps(),
                other.grid.horizon(),
                other.grid.steps()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_points_are_uniform_and_anchored() {
        let g = TimeGrid::new(2.0_f64, 8).unwrap();
        assert_eq!(g.point(0), 0.0);
        assert_eq!(g.point(8), 2.0);
        assert!((g.dt() - 0.25).abs() < 1e-15);
        let pts: Vec<f64> = g.points().collect();
        for w in pts.windows(2) {
            assert!((w[1] - w[0] - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(TimeGrid::new(0.0_f64, 4).is_err());
        assert!(TimeGrid::new(-1.0_f64, 4).is_err());
        assert!(TimeGrid::new(1.0_f64, 0).is_err());
    }

    #[test]
    fn path_subsample_keeps_endpoints() {
        let g = TimeGrid::new(1.0_f64, 8).unwrap();
        let vals: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let p = Path::new(g, 1, vals).unwrap();
        let q = p.subsample(4).unwrap();
        assert_eq!(q.len(), 3);
        assert_eq!(q.scalar(0), 0.0);
        assert_eq!(q.scalar(1), 4.0);
        assert_eq!(q.scalar(2), 8.0);
    }

    #[test]
    fn generic_over_f32() {
        let g = TimeGrid::new(1.0_f32, 4).unwrap();
        assert!((g.dt() - 0.25).abs() < 1e-6);
    }
}
