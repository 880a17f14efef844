//! Exact fBM sampling by circulant embedding of the increment covariance
//! (Davies-Harte). Setup is one FFT of the embedded autocovariance; each
//! sample costs one FFT of size `2n`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::scalar::{Scalar, SimScalar};
use crate::stream::StreamKey;

use super::{FbmPath, Hurst};
use crate::grid::Path;

/// Negative circulant eigenvalues with magnitude below this are clamped to
/// zero; anything more negative aborts the construction.
const EIGENVALUE_CLAMP: f64 = 1e-10;

/// Reusable Davies-Harte sampler: the eigenvalue square roots and the FFT
/// plan are computed once and shared across samples (and threads).
pub struct DaviesHarteSampler<T: SimScalar> {
    grid: TimeGrid<T>,
    hurst: Hurst<T>,
    dim: usize,
    /// `sqrt(λ_k / (2m))` for 1 <= k < n and `sqrt(λ_k / m)` at k ∈ {0, n}.
    weights: Vec<T>,
    fft: Arc<dyn Fft<T>>,
}

/// Autocovariance of the fractional Gaussian noise increments at lag `k`.
fn fgn_autocovariance<T: Scalar>(k: usize, two_h: T, dt: T) -> T {
    let k = T::of_usize(k);
    let half = T::of(0.5);
    half * dt.powf(two_h)
        * ((k + T::one()).powf(two_h) - T::of(2.0) * k.powf(two_h)
            + (k - T::one()).abs().powf(two_h))
}

impl<T: SimScalar> DaviesHarteSampler<T> {
    pub fn new(grid: TimeGrid<T>, hurst: Hurst<T>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch("fBM dimension must be >= 1".into()));
        }
        let n = grid.steps();
        let m = 2 * n;
        let two_h = T::of(2.0) * hurst.value();
        let dt = grid.dt();

        // first row of the circulant embedding of the Toeplitz increment covariance
        let mut row: Vec<Complex<T>> = Vec::with_capacity(m);
        for k in 0..=n {
            row.push(Complex::new(fgn_autocovariance(k, two_h, dt), T::zero()));
        }
        for k in n + 1..m {
            row.push(Complex::new(fgn_autocovariance(m - k, two_h, dt), T::zero()));
        }

        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(m.max(1));
        fft.process(&mut row);

        let clamp = T::of(EIGENVALUE_CLAMP);
        let mut weights = Vec::with_capacity(n + 1);
        let m_t = T::of_usize(m);
        for (k, v) in row.iter().take(n + 1).enumerate() {
            let lambda = v.re;
            let lambda = if lambda < T::zero() {
                if lambda < -clamp {
                    return Err(Error::NegativeCirculantEigenvalue {
                        min_eigenvalue: lambda.as_f64(),
                    });
                }
                T::zero()
            } else {
                lambda
            };
            let denom = if k == 0 || k == n { m_t } else { T::of(2.0) * m_t };
            weights.push((lambda / denom).sqrt());
        }

        Ok(Self { grid, hurst, dim, weights, fft })
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    /// Draw one d-dimensional path; components are independent and consumed
    /// from `key` in component order.
    pub fn sample(&self, key: &StreamKey) -> FbmPath<T> {
        let mut rng = key.rng();
        let n = self.grid.steps();
        let m = 2 * n;
        let mut spectrum = vec![Complex::new(T::zero(), T::zero()); m];
        let mut values = vec![T::zero(); self.grid.len() * self.dim];

        for comp in 0..self.dim {
            spectrum[0] = Complex::new(self.weights[0] * T::standard_normal(&mut rng), T::zero());
            if n > 0 {
                spectrum[n] =
                    Complex::new(self.weights[n] * T::standard_normal(&mut rng), T::zero());
            }
            for k in 1..n {
                let u = T::standard_normal(&mut rng);
                let v = T::standard_normal(&mut rng);
                let w = Complex::new(self.weights[k] * u, self.weights[k] * v);
                spectrum[k] = w;
                spectrum[m - k] = w.conj();
            }
            self.fft.process(&mut spectrum);
            // first n real parts are the fGN; cumulative sums give the path
            let mut acc = T::zero();
            for i in 0..n {
                acc += spectrum[i].re;
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
    use crate::fbm::fbm_covariance;

    #[test]
    fn starts_at_zero_vector() {
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let h = Hurst::new(0.75).unwrap();
        let p = DaviesHarteSampler::new(grid, h, 3).unwrap().sample(&StreamKey::root(1));
        assert_eq!(p.value(0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn seeded_determinism_across_sampler_instances() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let h = Hurst::new(0.8).unwrap();
        let key = StreamKey::root(42).child("fbm");
        let a = DaviesHarteSampler::new(grid, h, 2).unwrap().sample(&key);
        let b = DaviesHarteSampler::new(grid, h, 2).unwrap().sample(&key);
        assert_eq!(a.path.raw(), b.path.raw());
    }

    #[test]
    fn empirical_increment_variance_matches_power_law() {
        // per-step increment variance is Δ^{2H}; checked at 4 standard errors
        let n = 64;
        let grid = TimeGrid::new(1.0f64, n).unwrap();
        let h = Hurst::new(0.75).unwrap();
        let sampler = DaviesHarteSampler::new(grid, h, 1).unwrap();
        let key = StreamKey::root(2024).child("incvar");
        let n_mc = 10_000;
        let mut sum_sq = vec![0.0; n];
        for r in 0..n_mc {
            let p = sampler.sample(&key.index(r as u64));
            for i in 0..n {
                let d = p.path.scalar(i + 1) - p.path.scalar(i);
                sum_sq[i] += d * d;
            }
        }
        let target = grid.dt().powf(1.5); // Δ^{2H}, H = 0.75
        // Var of a sample variance of N(0, σ²) is 2σ⁴/n
        let se = (2.0 / n_mc as f64).sqrt() * target;
        for (i, s) in sum_sq.iter().enumerate() {
            let est = s / n_mc as f64;
            assert!(
                (est - target).abs() < 4.0 * se,
                "step {i}: est {est} vs target {target} (se {se})"
            );
        }
    }

    #[test]
    fn empirical_covariance_matches_formula() {
        // full covariance matrix against the closed form, 4 SE entrywise
        let n = 16;
        let grid = TimeGrid::new(1.0, n).unwrap();
        let h = 0.7;
        let sampler = DaviesHarteSampler::new(grid, Hurst::new(h).unwrap(), 1).unwrap();
        let key = StreamKey::root(7).child("cov");
        let n_mc = 20_000;
        let mut acc = vec![0.0; (n + 1) * (n + 1)];
        for r in 0..n_mc {
            let p = sampler.sample(&key.index(r as u64));
            for i in 0..=n {
                for j in i..=n {
                    acc[i * (n + 1) + j] += p.path.scalar(i) * p.path.scalar(j);
                }
            }
        }
        for i in 1..=n {
            for j in i..=n {
                let est = acc[i * (n + 1) + j] / n_mc as f64;
                let ti = grid.point(i);
                let tj = grid.point(j);
                let c = fbm_covariance(ti, tj, h).unwrap();
                let cii = fbm_covariance(ti, ti, h).unwrap();
                let cjj = fbm_covariance(tj, tj, h).unwrap();
                let se = ((c * c + cii * cjj) / n_mc as f64).sqrt();
                assert!(
                    (est - c).abs() < 4.0 * se,
                    "entry ({i},{j}): est {est} vs {c}, se {se}"
                );
            }
        }
    }

    #[test]
    fn components_are_independent() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let sampler = DaviesHarteSampler::new(grid, Hurst::new(0.75).unwrap(), 2).unwrap();
        let key = StreamKey::root(5).child("indep");
        let n_mc = 20_000;
        let mut cross = 0.0;
        for r in 0..n_mc {
            let p = sampler.sample(&key.index(r as u64));
            let v = p.value(8);
            cross += v[0] * v[1];
        }
        let est = cross / n_mc as f64;
        // Var(XY) = 1 for independent standard normals at t = 1
        assert!(est.abs() < 4.0 / (n_mc as f64).sqrt(), "cross moment {est}");
    }
}
