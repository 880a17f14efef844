//! Fractional Brownian motion: law, generators and path-regularity
//! functionals.
//!
//! A d-dimensional fBM with Hurst parameter `H` is the centred Gaussian
//! process starting from 0 with componentwise covariance
//! `E[B_t B_s] = (t^{2H} + s^{2H} - |t-s|^{2H}) / 2` and independent
//! components. This module restricts to `H > 1/2`.

mod chol_gen;
mod davies_harte;
mod regularity;
mod volterra;

pub use chol_gen::CholeskyFbm;
pub use davies_harte::DaviesHarteSampler;
pub use regularity::{
    estimate_holder_exponent, holder_seminorm, neg_holder_seminorm, HolderFit, ScanConfig,
};
pub use volterra::{gamma_fn, volterra_constant, volterra_kernel, KernelConfig, VolterraSampler};

use crate::error::{Error, Result};
use crate::grid::{Path, TimeGrid};
use crate::scalar::{Scalar, SimScalar};
use crate::stream::StreamKey;

/// Hurst parameter, restricted to the Young regime `1/2 < H < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hurst<T>(T);

impl<T: Scalar> Hurst<T> {
    pub fn new(value: T) -> Result<Self> {
        if value > T::of(0.5) && value < T::one() && value.is_finite() {
            Ok(Self(value))
        } else {
            Err(Error::InvalidHurst(value.as_f64()))
        }
    }

    pub fn value(&self) -> T {
        self.0
    }
}

/// Componentwise fBM covariance `(t^{2H} + s^{2H} - |t-s|^{2H}) / 2`.
///
/// The formula itself is evaluable on the closed boundary `H = 1/2`
/// (standard Brownian motion), which the generators reject; `h` is therefore
/// taken raw and validated against `[1/2, 1)`.
pub fn fbm_covariance<T: Scalar>(s: T, t: T, h: T) -> Result<T> {
    if s < T::zero() {
        return Err(Error::NegativeTime(s.as_f64()));
    }
    if t < T::zero() {
        return Err(Error::NegativeTime(t.as_f64()));
    }
    if !(h >= T::of(0.5) && h < T::one()) {
        return Err(Error::InvalidHurst(h.as_f64()));
    }
    let two_h = T::of(2.0) * h;
    Ok(T::of(0.5) * (t.powf(two_h) + s.powf(two_h) - (t - s).abs().powf(two_h)))
}

/// Discretized d-dimensional fBM sample.
#[derive(Debug, Clone)]
pub struct FbmPath<T> {
    pub path: Path<T>,
    pub hurst: Hurst<T>,
}

impl<T: Scalar> FbmPath<T> {
    pub fn grid(&self) -> &TimeGrid<T> {
        self.path.grid()
    }

    pub fn dim(&self) -> usize {
        self.path.dim()
    }

    pub fn value(&self, i: usize) -> &[T] {
        self.path.value(i)
    }

    /// Increment `B_{t_{i+1}} - B_{t_i}` written into `out`.
    pub fn increment_into(&self, i: usize, out: &mut [T]) {
        let a = self.path.value(i);
        let b = self.path.value(i + 1);
        for k in 0..self.dim() {
            out[k] = b[k] - a[k];
        }
    }
}

/// Sample a standard e-dimensional Brownian path on `grid`.
pub fn sample_bm<T: SimScalar>(grid: TimeGrid<T>, dim: usize, key: &StreamKey) -> Path<T> {
    let mut rng = key.rng();
    let sqrt_dt = grid.dt().sqrt();
    let mut values = vec![T::zero(); grid.len() * dim];
    for i in 1..grid.len() {
        for k in 0..dim {
            values[i * dim + k] =
                values[(i - 1) * dim + k] + sqrt_dt * T::standard_normal(&mut rng);
        }
    }
    Path::new(grid, dim, values).expect("constructed consistently")
}

/// Independent fBM and Brownian drivers on a common grid.
///
/// The two paths are drawn from the disjoint substreams `key/"fbm"` and
/// `key/"wiener"`.
#[derive(Debug, Clone)]
pub struct DriverPair<T> {
    pub fbm: FbmPath<T>,
    pub bm: Path<T>,
}

impl<T: SimScalar> DriverPair<T> {
    pub fn sample(
        grid: TimeGrid<T>,
        hurst: Hurst<T>,
        fbm_dim: usize,
        bm_dim: usize,
        key: &StreamKey,
    ) -> Result<Self> {
        let fbm = sample_fbm(grid, hurst, fbm_dim, &key.child("fbm"))?;
        let bm = sample_bm(grid, bm_dim, &key.child("wiener"));
        Ok(Self { fbm, bm })
    }
}

/// One-shot Davies-Harte sample. Fails with
/// [`Error::NegativeCirculantEigenvalue`] when the circulant embedding is not
/// nonnegative; see [`sample_fbm`] for the fallback behaviour.
pub fn sample_fbm_davies_harte<T: SimScalar>(
    grid: TimeGrid<T>,
    hurst: Hurst<T>,
    dim: usize,
    key: &StreamKey,
) -> Result<FbmPath<T>> {
    Ok(DaviesHarteSampler::new(grid, hurst, dim)?.sample(key))
}

/// One-shot exact Cholesky sample (the distributional oracle generator).
pub fn sample_fbm_cholesky<T: SimScalar>(
    grid: TimeGrid<T>,
    hurst: Hurst<T>,
    dim: usize,
    key: &StreamKey,
) -> Result<FbmPath<T>> {
    Ok(CholeskyFbm::new(grid, hurst, dim)?.sample(key))
}

/// Davies-Harte with the documented fallback: if the circulant embedding has
/// an eigenvalue below the clamping tolerance, log the event and use the
/// exact Cholesky generator instead.
pub fn sample_fbm<T: SimScalar>(
    grid: TimeGrid<T>,
    hurst: Hurst<T>,
    dim: usize,
    key: &StreamKey,
) -> Result<FbmPath<T>> {
    match DaviesHarteSampler::new(grid, hurst, dim) {
        Ok(sampler) => Ok(sampler.sample(key)),
        Err(Error::NegativeCirculantEigenvalue { min_eigenvalue }) => {
            log::warn!(
                "circulant embedding not nonnegative (min eigenvalue {min_eigenvalue}); \
                 falling back to Cholesky"
            );
            sample_fbm_cholesky(grid, hurst, dim, key)
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hurst_domain() {
        assert!(Hurst::new(0.75_f64).is_ok());
        assert!(Hurst::new(0.5_f64).is_err());
        assert!(Hurst::new(1.0_f64).is_err());
        assert!(Hurst::new(0.4_f64).is_err());
        assert!(Hurst::new(f64::NAN).is_err());
    }

    #[test]
    fn covariance_at_equal_times_is_power_law() {
        // s = t gives t^{2H}; at t = 1 every H gives 1
        assert!((fbm_covariance(1.0f64, 1.0, 0.7).unwrap() - 1.0).abs() < 1e-15);
        let t = 0.37_f64;
        let h = 0.8;
        assert!((fbm_covariance(t, t, h).unwrap() - t.powf(2.0 * h)).abs() < 1e-15);
    }

    #[test]
    fn covariance_brownian_boundary_is_min() {
        for (s, t) in [(0.2f64, 0.9), (1.5, 0.3), (0.0, 1.0)] {
            let c = fbm_covariance(s, t, 0.5).unwrap();
            assert!((c - s.min(t)).abs() < 1e-15);
        }
    }

    #[test]
    fn unit_increment_variance_for_any_h() {
        // cov(t,t) - 2cov(s,t) + cov(s,s) = |t-s|^{2H} = 1 when |t-s| = 1
        for h in [0.55f64, 0.7, 0.9] {
            for s in [0.0f64, 0.5, 2.0] {
                let t = s + 1.0;
                let v = fbm_covariance(t, t, h).unwrap() - 2.0 * fbm_covariance(s, t, h).unwrap()
                    + fbm_covariance(s, s, h).unwrap();
                assert!((v - 1.0).abs() < 1e-12, "h={h} s={s} v={v}");
            }
        }
    }

    #[test]
    fn covariance_rejects_bad_input() {
        assert!(matches!(fbm_covariance(-0.1, 1.0, 0.7), Err(Error::NegativeTime(_))));
        assert!(matches!(fbm_covariance(0.1, -1.0, 0.7), Err(Error::NegativeTime(_))));
        assert!(fbm_covariance(0.1, 1.0, 0.49).is_err());
    }

    proptest! {
        #[test]
        fn covariance_symmetric(s in 0.0..5.0f64, t in 0.0..5.0f64, h in 0.5..0.999f64) {
            let a = fbm_covariance(s, t, h).unwrap();
            let b = fbm_covariance(t, s, h).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn covariance_diagonal(t in 0.0..5.0f64, h in 0.5..0.999f64) {
            let c = fbm_covariance(t, t, h).unwrap();
            prop_assert!((c - t.powf(2.0 * h)).abs() <= 1e-12 * (1.0 + c.abs()));
        }
    }
}
