//! Exact fBM sampling from the Cholesky factor of the full path covariance.
//! O(n³) setup and O(n²) per sample; serves as the distributional oracle for
//! the circulant-embedding generator.

use crate::error::{Error, Result};
use crate::grid::{Path, TimeGrid};
use crate::linalg::Mat;
use crate::scalar::SimScalar;
use crate::stream::StreamKey;

use super::{fbm_covariance, FbmPath, Hurst};

/// Default cap on the grid size; the covariance factorization is cubic.
pub const DEFAULT_MAX_STEPS: usize = 4096;

pub struct CholeskyFbm<T> {
    grid: TimeGrid<T>,
    hurst: Hurst<T>,
    dim: usize,
    factor: Mat<T>,
}

impl<T: SimScalar> CholeskyFbm<T> {
    pub fn new(grid: TimeGrid<T>, hurst: Hurst<T>, dim: usize) -> Result<Self> {
        Self::with_cap(grid, hurst, dim, DEFAULT_MAX_STEPS)
    }

    pub fn with_cap(
        grid: TimeGrid<T>,
        hurst: Hurst<T>,
        dim: usize,
        max_steps: usize,
    ) -> Result<Self> {
        Self::build(grid, hurst.value(), Some(hurst), dim, max_steps)
    }

    /// Brownian boundary mode (`H = 1/2`) for covariance cross-checks; the
    /// strict [`Hurst`] domain excludes this value on purpose, so the sampled
    /// path reports the nearest admissible Hurst metadata internally.
    pub fn brownian_boundary(grid: TimeGrid<T>, dim: usize) -> Result<Self> {
        Self::build(grid, T::of(0.5), None, dim, DEFAULT_MAX_STEPS)
    }

    fn build(
        grid: TimeGrid<T>,
        h: T,
        hurst: Option<Hurst<T>>,
        dim: usize,
        max_steps: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch("fBM dimension must be >= 1".into()));
        }
        let n = grid.steps();
        if n > max_steps {
            return Err(Error::GridTooLarge { n, cap: max_steps, what: "Cholesky fBM generator" });
        }
        let mut cov = Mat::zeros(n, n);
        let mut max_diag = T::zero();
        for i in 0..n {
            for j in 0..n {
                let c = fbm_covariance(grid.point(i + 1), grid.point(j + 1), h)?;
                cov[(i, j)] = c;
                if i == j {
                    max_diag = max_diag.max(c);
                }
            }
        }
        let factor = cov
            .cholesky(T::of(1e-12) * max_diag)
            .map_err(|e| Error::NotPositiveDefinite(format!("fBM covariance: {e}")))?;
        // the boundary mode keeps H = 1/2 + ulp as metadata
        let hurst = match hurst {
            Some(h) => h,
            None => Hurst::new(T::of(0.5 + 1e-12)).expect("just above the boundary"),
        };
        Ok(Self { grid, hurst, dim, factor })
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn sample(&self, key: &StreamKey) -> FbmPath<T> {
        let mut rng = key.rng();
        let n = self.grid.steps();
        let mut z = vec![T::zero(); n];
        let mut values = vec![T::zero(); self.grid.len() * self.dim];
        for comp in 0..self.dim {
            for zi in z.iter_mut() {
                *zi = T::standard_normal(&mut rng);
            }
            // lower-triangular product row by row
            for i in 0..n {
                let row = self.factor.row(i);
                let mut acc = T::zero();
                for j in 0..=i {
                    acc += row[j] * z[j];
                }
                values[(i + 1) * self.dim + comp] = acc;
            }
        }
        FbmPath {
            path: Path::new(self.grid, self.dim, values).expect("constructed consistently"),
            hurst: self.hurst,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cap_is_enforced() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let h = Hurst::new(0.75).unwrap();
        assert!(matches!(
            CholeskyFbm::with_cap(grid, h, 1, 32),
            Err(Error::GridTooLarge { .. })
        ));
    }

    #[test]
    fn terminal_variance_matches_power_law() {
        // Var B_T = T^{2H}, within 4 SE over 10^4 draws
        let t_end = 1.5;
        let h = 0.8;
        let grid = TimeGrid::new(t_end, 32).unwrap();
        let sampler = CholeskyFbm::new(grid, Hurst::new(h).unwrap(), 1).unwrap();
        let key = StreamKey::root(11).child("tv");
        let n_mc = 10_000;
        let mut acc = 0.0;
        for r in 0..n_mc {
            let p = sampler.sample(&key.index(r));
            let v = p.path.scalar(32);
            acc += v * v;
        }
        let est = acc / n_mc as f64;
        let target = t_end.powf(2.0 * h);
        let se = (2.0 / n_mc as f64).sqrt() * target;
        assert!((est - target).abs() < 4.0 * se, "est {est} target {target}");
    }

    #[test]
    fn brownian_boundary_matches_bm_covariance() {
        // H = 1/2 mode: empirical covariance is min(s, t)
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let sampler = CholeskyFbm::brownian_boundary(grid, 1).unwrap();
        let key = StreamKey::root(3).child("bb");
        let n_mc = 20_000;
        let mut acc = vec![0.0; 9 * 9];
        for r in 0..n_mc {
            let p = sampler.sample(&key.index(r));
            for i in 0..=8 {
                for j in 0..=8 {
                    acc[i * 9 + j] += p.path.scalar(i) * p.path.scalar(j);
                }
            }
        }
        for i in 1..=8 {
            for j in 1..=8 {
                let est = acc[i * 9 + j] / n_mc as f64;
                let c = grid.point(i).min(grid.point(j));
                let ci = grid.point(i);
                let cj = grid.point(j);
                let se = ((c * c + ci * cj) / n_mc as f64).sqrt();
                assert!((est - c).abs() < 4.0 * se, "({i},{j}) est {est} vs {c}");
            }
        }
    }

    #[test]
    fn deterministic_given_key() {
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let h = Hurst::new(0.6).unwrap();
        let key = StreamKey::root(99);
        let a = CholeskyFbm::new(grid, h, 2).unwrap().sample(&key);
        let b = CholeskyFbm::new(grid, h, 2).unwrap().sample(&key);
        assert_eq!(a.path.raw(), b.path.raw());
    }
}
