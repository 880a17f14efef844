//! Path-regularity functionals on sampled paths: the η-Hölder seminorm
//! `sup_{s<t} |h_t - h_s| / (t-s)^η`, its negative-order companion
//! `|h|_{-κ} = sup_{s<t} |t-s|^{κ-1} |∫_s^t h_r dr|`, and a dyadic-scale
//! regression estimator for the Hölder exponent.

use crate::error::{Error, Result};
use crate::grid::Path;
use crate::scalar::Scalar;

/// Controls for the all-pairs grid scans.
#[derive(Debug, Clone, Copy)]
pub struct ScanConfig {
    /// Largest admissible step count for the O(n²) scan.
    pub cap: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self { cap: 4096 }
    }
}

impl ScanConfig {
    pub fn with_cap(cap: usize) -> Self {
        Self { cap }
    }
}

/// Discrete η-Hölder seminorm over all grid pairs (a lower bound of the
/// continuum seminorm). The scan walks lags in increasing order and stops
/// exactly once the diameter bound `diam / (kΔ)^η` can no longer beat the
/// current maximum, which never changes the result.
pub fn holder_seminorm<T: Scalar>(path: &Path<T>, eta: T, cfg: &ScanConfig) -> Result<T> {
    if !(eta > T::zero() && eta <= T::one()) {
        return Err(Error::InvalidArgument(format!("Hölder exponent {eta} outside (0, 1]")));
    }
    let n = path.grid().steps();
    if n > cfg.cap {
        return Err(Error::GridTooLarge { n, cap: cfg.cap, what: "Hölder seminorm scan" });
    }
    let dt = path.grid().dt();
    let diameter = path_diameter(path);
    if diameter == T::zero() {
        return Ok(T::zero());
    }
    let mut best = T::zero();
    for lag in 1..=n {
        let weight = (dt * T::of_usize(lag)).powf(-eta);
        if diameter * weight <= best {
            break;
        }
        for i in 0..=(n - lag) {
            let v = path.increment_norm(i, i + lag) * weight;
            if v > best {
                best = v;
            }
        }
    }
    Ok(best)
}

/// Discrete `|h|_{-κ}` with the inner integral by the trapezoid rule.
pub fn neg_holder_seminorm<T: Scalar>(path: &Path<T>, kappa: T, cfg: &ScanConfig) -> Result<T> {
    if !(kappa > T::zero() && kappa < T::one()) {
        return Err(Error::InvalidArgument(format!("exponent {kappa} outside (0, 1)")));
    }
    let n = path.grid().steps();
    if n > cfg.cap {
        return Err(Error::GridTooLarge { n, cap: cfg.cap, what: "negative-Hölder scan" });
    }
    let dt = path.grid().dt();
    let dim = path.dim();
    let half = T::of(0.5);
    // cumulative trapezoid integral, componentwise
    let mut cum = vec![T::zero(); (n + 1) * dim];
    for i in 0..n {
        let a = path.value(i);
        let b = path.value(i + 1);
        for k in 0..dim {
            cum[(i + 1) * dim + k] = cum[i * dim + k] + half * dt * (a[k] + b[k]);
        }
    }
    let mut best = T::zero();
    for lag in 1..=n {
        let weight = (dt * T::of_usize(lag)).powf(kappa - T::one());
        for i in 0..=(n - lag) {
            let mut acc = T::zero();
            for k in 0..dim {
                let d = cum[(i + lag) * dim + k] - cum[i * dim + k];
                acc += d * d;
            }
            let v = acc.sqrt() * weight;
            if v > best {
                best = v;
            }
        }
    }
    Ok(best)
}

fn path_diameter<T: Scalar>(path: &Path<T>) -> T {
    // exact for dim 1; an upper bound via per-component ranges otherwise,
    // which is all the early-exit needs
    let dim = path.dim();
    let mut lo = vec![T::infinity(); dim];
    let mut hi = vec![T::neg_infinity(); dim];
    for i in 0..path.len() {
        let v = path.value(i);
        for k in 0..dim {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    let mut acc = T::zero();
    for k in 0..dim {
        let r = hi[k] - lo[k];
        acc += r * r;
    }
    acc.sqrt()
}

/// Result of the dyadic-scale Hölder-exponent regression.
#[derive(Debug, Clone, Copy)]
pub struct HolderFit<T> {
    pub exponent: T,
    pub stderr: T,
}

/// Estimate the Hölder exponent by regressing the log RMS increment against
/// the log lag over dyadic lags `1, 2, 4, ..., n/4`.
pub fn estimate_holder_exponent<T: Scalar>(path: &Path<T>) -> Result<HolderFit<T>> {
    let n = path.grid().steps();
    if n < 64 || !n.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "exponent estimation needs a power-of-two step count >= 64, got {n}"
        )));
    }
    let dt = path.grid().dt();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut lag = 1;
    while lag <= n / 4 {
        let mut acc = T::zero();
        let mut count = 0usize;
        for i in 0..=(n - lag) {
            let d = path.increment_norm(i, i + lag);
            acc += d * d;
            count += 1;
        }
        let rms = (acc / T::of_usize(count)).sqrt();
        if rms == T::zero() {
            return Err(Error::Degenerate("constant path has no scaling exponent".into()));
        }
        xs.push((dt * T::of_usize(lag)).ln());
        ys.push(rms.ln());
        lag *= 2;
    }
    let (slope, se) = ols_slope(&xs, &ys);
    Ok(HolderFit { exponent: slope, stderr: se })
}

/// OLS slope and its standard error.
fn ols_slope<T: Scalar>(xs: &[T], ys: &[T]) -> (T, T) {
    let n = T::of_usize(xs.len());
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut rss = T::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        let r = y - intercept - slope * x;
        rss += r * r;
    }
    let dof = (xs.len().max(3) - 2) as f64;
    let se = (rss / T::of(dof) / sxx).sqrt();
    (slope, se)
}
