//! The fast Itô process `dy = (1/ε) b(x, y) dt + (1/√ε) σ(x, y) dW` with
//! frozen or coupled slow input, the linear family `b = -Γy + ζ(x, y)` with
//! closed-form stationary law, and the moment / Hölder-scaling diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::{holder_seminorm, ScanConfig};
use crate::grid::{Path, TimeGrid};
use crate::linalg::{self, Mat};
use crate::scalar::{Scalar, SimScalar};
use crate::stats::{fit_rate, RateFit};
use crate::stream::{run_replicas, StreamKey};

/// Coefficients of the fast dynamics. `x` enters as a parameter.
pub trait FastModel<T>: Sync {
    fn slow_dim(&self) -> usize;
    /// Fast state dimension m.
    fn dim(&self) -> usize;
    /// Wiener dimension e.
    fn noise_dim(&self) -> usize;
    fn drift(&self, x: &[T], y: &[T], out: &mut [T]);
    /// `m × e`, row-major.
    fn diffusion(&self, x: &[T], y: &[T], out: &mut [T]);

    /// Γ of the linear decomposition `b(x,y) = -Γ y + ζ(x,y)`, when the
    /// model declares one.
    fn stiff_matrix(&self) -> Option<&Mat<T>> {
        None
    }

    /// Constant diffusion matrix, when σ does not depend on (x, y).
    fn constant_diffusion(&self) -> Option<&Mat<T>> {
        None
    }

    /// Whether the remainder ζ vanishes identically (pure
    /// Ornstein-Uhlenbeck), enabling single-step exact transitions.
    fn remainder_is_zero(&self) -> bool {
        false
    }
}

/// Ornstein-Uhlenbeck parameters: `dY = -Γ Y dt + σ dW`.
#[derive(Debug, Clone)]
pub struct OuParams<T> {
    pub gamma: Mat<T>,
    pub sigma: Mat<T>,
}

impl<T: Scalar> OuParams<T> {
    pub fn scalar(gamma: T, sigma: T) -> Self {
        Self { gamma: Mat::scalar(gamma), sigma: Mat::scalar(sigma) }
    }
}

/// Stationary covariance `Σ_∞` of the OU family: the symmetric PSD solution
/// of the Lyapunov equation `Γ Σ + Σ Γᵀ = σ σᵀ`.
pub fn ou_invariant_covariance<T: Scalar>(params: &OuParams<T>) -> Result<Mat<T>> {
    if !linalg::is_positive_stable(&params.gamma) {
        return Err(Error::InvalidArgument("Γ must be positive stable".into()));
    }
    let q = params.sigma.matmul(&params.sigma.transpose());
    linalg::solve_lyapunov(&params.gamma, &q)
}

/// The linear benchmark model (ζ ≡ 0).
pub struct OuModel<T> {
    params: OuParams<T>,
    slow_dim: usize,
}

impl<T: Scalar> OuModel<T> {
    pub fn new(params: OuParams<T>) -> Self {
        Self { params, slow_dim: 1 }
    }

    pub fn params(&self) -> &OuParams<T> {
        &self.params
    }
}

impl<T: Scalar> FastModel<T> for OuModel<T> {
    fn slow_dim(&self) -> usize {
        self.slow_dim
    }

    fn dim(&self) -> usize {
        self.params.gamma.rows()
    }

    fn noise_dim(&self) -> usize {
        self.params.sigma.cols()
    }

    fn drift(&self, _x: &[T], y: &[T], out: &mut [T]) {
        self.params.gamma.mul_vec_into(y, out);
        for v in out.iter_mut() {
            *v = -*v;
        }
    }

    fn diffusion(&self, _x: &[T], _y: &[T], out: &mut [T]) {
        out.copy_from_slice(self.params.sigma.data());
    }

    fn stiff_matrix(&self) -> Option<&Mat<T>> {
        Some(&self.params.gamma)
    }

    fn constant_diffusion(&self) -> Option<&Mat<T>> {
        Some(&self.params.sigma)
    }

    fn remainder_is_zero(&self) -> bool {
        true
    }
}

/// Fast model assembled from drift/diffusion closures.
pub struct ClosureFastModel<B, S> {
    pub slow_dim: usize,
    pub dim: usize,
    pub noise_dim: usize,
    pub drift: B,
    pub diffusion: S,
    pub stiff: Option<Mat<f64>>,
}

impl<B, S> FastModel<f64> for ClosureFastModel<B, S>
where
    B: Fn(&[f64], &[f64], &mut [f64]) + Sync,
    S: Fn(&[f64], &[f64], &mut [f64]) + Sync,
{
    fn slow_dim(&self) -> usize {
        self.slow_dim
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn drift(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.drift)(x, y, out)
    }

    fn diffusion(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, y, out)
    }

    fn stiff_matrix(&self) -> Option<&Mat<f64>> {
        self.stiff.as_ref()
    }
}

/// Structural checks on a fast model: positive-stable Γ (when declared) and
/// a dissipativity spot-check `⟨y, b(x,y)⟩ ≤ -β₁|y|² + C|x|² + C` on a
/// deterministic point cloud.
pub fn validate_fast_model<T: Scalar, M: FastModel<T> + ?Sized>(
    model: &M,
    beta1: T,
    c: T,
) -> Result<()> {
    if let Some(gamma) = model.stiff_matrix() {
        if !linalg::is_positive_stable(gamma) {
            return Err(Error::InvalidArgument(
                "declared stiff matrix Γ is not positive stable".into(),
            ));
        }
    }
    let m = model.dim();
    let nx = model.slow_dim();
    let mut b = vec![T::zero(); m];
    // low-discrepancy-ish lattice over [-3, 3]^{n+m}
    let points = 64usize;
    for p in 0..points {
        let mut x = vec![T::zero(); nx];
        let mut y = vec![T::zero(); m];
        for (k, xv) in x.iter_mut().enumerate() {
            let u = ((p * 29 + k * 17 + 7) % 64) as f64 / 63.0;
            *xv = T::of(6.0 * u - 3.0);
        }
        for (k, yv) in y.iter_mut().enumerate() {
            let u = ((p * 41 + k * 13 + 3) % 64) as f64 / 63.0;
            *yv = T::of(6.0 * u - 3.0);
        }
        model.drift(&x, &y, &mut b);
        let lhs = linalg::dot(&y, &b);
        let rhs = -beta1 * linalg::dot(&y, &y) + c * linalg::dot(&x, &x) + c;
        if lhs > rhs + T::of(1e-9) {
            return Err(Error::InvalidArgument(format!(
                "dissipativity violated at sampled point: ⟨y,b⟩ = {lhs} > {rhs}"
            )));
        }
    }
    Ok(())
}

/// Slow input for the fast solver: a frozen point or a path on the macro grid.
pub enum SlowInput<'a, T> {
    Frozen(&'a [T]),
    Path(&'a Path<T>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FastIntegrator {
    /// Euler-Maruyama micro-steps with `h ≤ c ε`.
    EulerMaruyama,
    /// Exponential (Duhamel) update of the linear part; exact transitions for
    /// the pure OU family.
    Exponential,
}

#[derive(Debug, Clone, Copy)]
pub struct FastSimConfig<T> {
    /// Micro-step factor `c` in `h_micro ≤ c ε`.
    pub micro_factor: T,
    pub integrator: FastIntegrator,
    pub blowup_bound: T,
}

impl<T: Scalar> Default for FastSimConfig<T> {
    fn default() -> Self {
        Self {
            micro_factor: T::of(0.1),
            integrator: FastIntegrator::EulerMaruyama,
            blowup_bound: T::of(1e9),
        }
    }
}

impl<T: Scalar> FastSimConfig<T> {
    pub fn exponential() -> Self {
        Self { integrator: FastIntegrator::Exponential, ..Self::default() }
    }
}

/// Precomputed exponential-integrator operators for one (substep, ε) pair:
/// `y ← E y + Γ⁻¹(I - E) ζ + ξ`, `E = exp(-Γh/ε)`,
/// `ξ ~ N(0, Σ_∞ - E Σ_∞ Eᵀ)`.
pub(crate) struct ExpOuStepper<T> {
    pub propagator: Mat<T>,
    pub zeta_op: Mat<T>,
    /// Cholesky factor of the transition covariance; `None` for zero noise.
    pub noise_factor: Option<Mat<T>>,
}

impl<T: Scalar> ExpOuStepper<T> {
    pub fn new(gamma: &Mat<T>, sigma: &Mat<T>, h_over_eps: T) -> Result<Self> {
        let m = gamma.rows();
        let propagator = gamma.scale(-h_over_eps).expm();
        let i_minus_e = Mat::identity(m).sub(&propagator);
        let zeta_op = gamma.inverse()?.matmul(&i_minus_e);
        let sig_inf = ou_invariant_covariance(&OuParams {
            gamma: gamma.clone(),
            sigma: sigma.clone(),
        })?;
        let cov = sig_inf.sub(&propagator.matmul(&sig_inf).matmul(&propagator.transpose()));
        let noise_factor = if cov.max_abs() < T::of(1e-300) {
            None
        } else {
            Some(cov.cholesky(T::of(1e-14) * cov.trace())?)
        };
        Ok(Self { propagator, zeta_op, noise_factor })
    }

    pub fn step<M: FastModel<T> + ?Sized>(
        &self,
        model: &M,
        x: &[T],
        y: &mut [T],
        scratch: &mut StepScratch<T>,
        mut draw: impl FnMut() -> T,
    ) {
        let m = y.len();
        // ζ(x, y) = b(x, y) + Γ y
        model.drift(x, y, &mut scratch.b);
        model
            .stiff_matrix()
            .expect("exponential stepper needs Γ")
            .mul_vec_into(y, &mut scratch.gy);
        for k in 0..m {
            scratch.zeta[k] = scratch.b[k] + scratch.gy[k];
        }
        self.propagator.mul_vec_into(y, &mut scratch.ey);
        self.zeta_op.mul_vec_into(&scratch.zeta, &mut scratch.zc);
        for k in 0..m {
            y[k] = scratch.ey[k] + scratch.zc[k];
        }
        if let Some(l) = &self.noise_factor {
            for z in scratch.z.iter_mut() {
                *z = draw();
            }
            for r in 0..m {
                let row = l.row(r);
                let mut acc = T::zero();
                for c in 0..=r {
                    acc += row[c] * scratch.z[c];
                }
                y[r] += acc;
            }
        }
    }
}

pub(crate) struct StepScratch<T> {
    b: Vec<T>,
    gy: Vec<T>,
    zeta: Vec<T>,
    ey: Vec<T>,
    zc: Vec<T>,
    z: Vec<T>,
    sig: Vec<T>,
}

impl<T: Scalar> StepScratch<T> {
    pub fn new(m: usize, e: usize) -> Self {
        Self {
            b: vec![T::zero(); m],
            gy: vec![T::zero(); m],
            zeta: vec![T::zero(); m],
            ey: vec![T::zero(); m],
            zc: vec![T::zero(); m],
            z: vec![T::zero(); e.max(m)],
            sig: vec![T::zero(); m * e],
        }
    }
}

/// One Euler-Maruyama micro step of the ε-scaled dynamics.
#[inline]
pub(crate) fn euler_micro_step<T: Scalar, M: FastModel<T> + ?Sized>(
    model: &M,
    x: &[T],
    y: &mut [T],
    h: T,
    eps: T,
    scratch: &mut StepScratch<T>,
    mut draw: impl FnMut() -> T,
) {
    let m = model.dim();
    let e = model.noise_dim();
    model.drift(x, y, &mut scratch.b);
    model.diffusion(x, y, &mut scratch.sig);
    let sqrt_h_eps = (h / eps).sqrt();
    for z in scratch.z[..e].iter_mut() {
        *z = draw();
    }
    for r in 0..m {
        let mut acc = y[r] + scratch.b[r] * h / eps;
        for c in 0..e {
            acc += scratch.sig[r * e + c] * sqrt_h_eps * scratch.z[c];
        }
        y[r] = acc;
    }
}

/// Simulate the fast process on the macro grid with internal micro
/// sub-stepping (`ceil(Δ/(c ε))` sub-steps per macro step, or a single exact
/// transition for the pure OU family under the exponential integrator).
pub fn simulate_fast<T: SimScalar, M: FastModel<T> + ?Sized>(
    model: &M,
    x_input: SlowInput<'_, T>,
    y0: &[T],
    eps: T,
    grid: &TimeGrid<T>,
    key: &StreamKey,
    cfg: &FastSimConfig<T>,
) -> Result<Path<T>> {
    let m = model.dim();
    if y0.len() != m {
        return Err(Error::DimensionMismatch("fast initial state".into()));
    }
    if let SlowInput::Path(p) = &x_input {
        if p.grid() != grid {
            return Err(Error::GridMismatch("slow input path grid".into()));
        }
    }
    if !(eps > T::zero()) {
        return Err(Error::InvalidArgument(format!("ε = {eps} must be positive")));
    }
    let dt = grid.dt();
    let n_sub = micro_substeps(dt, eps, cfg, model.remainder_is_zero())?;
    let h = dt / T::of_usize(n_sub);

    let stepper = match cfg.integrator {
        FastIntegrator::Exponential => {
            let gamma = model.stiff_matrix().ok_or_else(|| {
                Error::InvalidArgument(
                    "exponential integrator needs a declared linear part Γ".into(),
                )
            })?;
            let sigma = model.constant_diffusion().ok_or_else(|| {
                Error::InvalidArgument(
                    "exponential integrator needs a constant diffusion matrix".into(),
                )
            })?;
            Some(ExpOuStepper::new(gamma, sigma, h / eps)?)
        }
        FastIntegrator::EulerMaruyama => None,
    };

    let mut rng = key.rng();
    let mut scratch = StepScratch::new(m, model.noise_dim());
    let mut y = y0.to_vec();
    let mut values = vec![T::zero(); grid.len() * m];
    values[..m].copy_from_slice(y0);
    for i in 0..grid.steps() {
        let x = match &x_input {
            SlowInput::Frozen(x) => *x,
            SlowInput::Path(p) => p.value(i),
        };
        for _ in 0..n_sub {
            match &stepper {
                Some(s) => s.step(model, x, &mut y, &mut scratch, || T::standard_normal(&mut rng)),
                None => euler_micro_step(model, x, &mut y, h, eps, &mut scratch, || {
                    T::standard_normal(&mut rng)
                }),
            }
        }
        let norm = linalg::norm2(&y);
        if !norm.is_finite() || norm > cfg.blowup_bound {
            return Err(Error::BlowUp { step: i + 1, norm: norm.as_f64() });
        }
        values[(i + 1) * m..(i + 2) * m].copy_from_slice(&y);
    }
    Path::new(*grid, m, values)
}

pub(crate) fn micro_substeps<T: Scalar>(
    dt: T,
    eps: T,
    cfg: &FastSimConfig<T>,
    remainder_is_zero: bool,
) -> Result<usize> {
    if cfg.integrator == FastIntegrator::Exponential && remainder_is_zero {
        return Ok(1);
    }
    let ratio = (dt / (cfg.micro_factor * eps)).ceil().as_f64();
    if !ratio.is_finite() || ratio > 1e9 {
        return Err(Error::UnderResolved(format!(
            "macro step {dt} needs {ratio} micro sub-steps at ε = {eps}"
        )));
    }
    Ok((ratio as usize).max(1))
}

/// One row of the sup-moment diagnostic table.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MomentRow {
    pub eps: f64,
    pub estimate: f64,
    pub stderr: f64,
}

/// `sup_t Ê|y^ε_t|^p` per ε with the flatness verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentBoundReport {
    pub p: f64,
    pub rows: Vec<MomentRow>,
    pub max_min_ratio: f64,
    pub flat: bool,
    pub ratio_threshold: f64,
    pub replicas: usize,
}

/// Appendix-style moment diagnostic: the table of `sup_t Ê|y^ε_t|^p` over an
/// ε-schedule, flat iff the max/min ratio stays below `ratio_threshold`.
#[allow(clippy::too_many_arguments)]
pub fn check_moment_bound<M: FastModel<f64> + ?Sized>(
    model: &M,
    x: &[f64],
    y0: &[f64],
    eps_list: &[f64],
    p: f64,
    grid: &TimeGrid<f64>,
    n_mc: usize,
    ratio_threshold: f64,
    key: &StreamKey,
    cfg: &FastSimConfig<f64>,
) -> Result<MomentBoundReport> {
    let mut rows = Vec::with_capacity(eps_list.len());
    for (j, &eps) in eps_list.iter().enumerate() {
        let ekey = key.index(j as u64);
        let paths = run_replicas(&ekey, n_mc, |_, k| {
            simulate_fast(model, SlowInput::Frozen(x), y0, eps, grid, &k, cfg)
        });
        let mut sums = vec![0.0; grid.len()];
        let mut sq = vec![0.0; grid.len()];
        for path in &paths {
            let path = path.as_ref().map_err(|e| Error::NotConverged(e.to_string()))?;
            for i in 0..grid.len() {
                let v = linalg::norm2(path.value(i)).powf(p);
                sums[i] += v;
                sq[i] += v * v;
            }
        }
        let mut best = f64::NEG_INFINITY;
        let mut best_se = 0.0;
        for i in 0..grid.len() {
            let mean = sums[i] / n_mc as f64;
            if mean > best {
                best = mean;
                let var = (sq[i] / n_mc as f64 - mean * mean).max(0.0);
                best_se = (var / n_mc as f64).sqrt();
            }
        }
        rows.push(MomentRow { eps, estimate: best, stderr: best_se });
    }
    let max = rows.iter().map(|r| r.estimate).fold(f64::NEG_INFINITY, f64::max);
    let min = rows.iter().map(|r| r.estimate).fold(f64::INFINITY, f64::min);
    let ratio = if min > 0.0 { max / min } else if max == 0.0 { 1.0 } else { f64::INFINITY };
    Ok(MomentBoundReport {
        p,
        rows,
        max_min_ratio: ratio,
        flat: ratio < ratio_threshold,
        ratio_threshold,
        replicas: n_mc,
    })
}

/// One row of the Hölder-scaling diagnostic.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HolderRow {
    pub eps: f64,
    /// `Ê ‖y^ε‖_θ^p`
    pub holder_moment: f64,
    pub holder_stderr: f64,
    /// `Ê ‖y^ε‖_∞^p`
    pub sup_moment: f64,
}

/// Fitted scaling of `Ê‖y^ε‖_θ^p` in ε against the `ε^{-p/2}` envelope.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HolderBoundReport {
    pub theta: f64,
    pub p: f64,
    pub rows: Vec<HolderRow>,
    pub fit: RateFit,
    /// PASS window `[-p/2 - 0.3p, -p/2 + 0.3p]` for the fitted slope.
    pub slope_window: (f64, f64),
    pub pass: bool,
    /// Max/min ratio of the sup-norm moments (reported flat alongside).
    pub sup_ratio: f64,
    pub replicas: usize,
}

/// Hölder-seminorm scaling diagnostic. The macro grid must resolve the
/// fastest scale: `n ε_min ≥ 10 T` is required.
#[allow(clippy::too_many_arguments)]
pub fn check_holder_bound<M: FastModel<f64> + ?Sized>(
    model: &M,
    x: &[f64],
    y0: &[f64],
    eps_list: &[f64],
    theta: f64,
    p: f64,
    grid: &TimeGrid<f64>,
    n_mc: usize,
    key: &StreamKey,
    cfg: &FastSimConfig<f64>,
) -> Result<HolderBoundReport> {
    if !(theta > 0.0 && theta < 0.5) {
        return Err(Error::InvalidArgument(format!("θ = {theta} outside (0, 1/2)")));
    }
    let eps_min = eps_list.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let n = grid.steps() as f64;
    if n * eps_min < 10.0 * grid.horizon() {
        return Err(Error::UnderResolved(format!(
            "need n·ε_min ≥ 10·T to resolve the fastest scale: n = {n}, ε_min = {eps_min}"
        )));
    }
    let scan = ScanConfig::with_cap(grid.steps());
    let mut rows = Vec::with_capacity(eps_list.len());
    for (j, &eps) in eps_list.iter().enumerate() {
        let ekey = key.index(j as u64);
        let stats: Vec<Result<(f64, f64)>> = run_replicas(&ekey, n_mc, |_, k| {
            let path = simulate_fast(model, SlowInput::Frozen(x), y0, eps, grid, &k, cfg)?;
            let seminorm = holder_seminorm(&path, theta, &scan)?;
            Ok((seminorm.powf(p), path.sup_norm().powf(p)))
        });
        let mut hm = 0.0;
        let mut hsq = 0.0;
        let mut sup = 0.0;
        for s in stats {
            let (h_p, s_p) = s?;
            hm += h_p;
            hsq += h_p * h_p;
            sup += s_p;
        }
        let mean = hm / n_mc as f64;
        let var = (hsq / n_mc as f64 - mean * mean).max(0.0);
        rows.push(HolderRow {
            eps,
            holder_moment: mean,
            holder_stderr: (var / n_mc as f64).sqrt(),
            sup_moment: sup / n_mc as f64,
        });
    }
    let eps_v: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let mom: Vec<f64> = rows.iter().map(|r| r.holder_moment).collect();
    let fit = fit_rate(&eps_v, &mom)?;
    let window = (-p / 2.0 - 0.3 * p, -p / 2.0 + 0.3 * p);
    let pass = fit.slope >= window.0 && fit.slope <= window.1;
    let sup_max = rows.iter().map(|r| r.sup_moment).fold(f64::NEG_INFINITY, f64::max);
    let sup_min = rows.iter().map(|r| r.sup_moment).fold(f64::INFINITY, f64::min);
    Ok(HolderBoundReport {
        theta,
        p,
        rows,
        fit,
        slope_window: window,
        pass,
        sup_ratio: if sup_min > 0.0 { sup_max / sup_min } else { f64::INFINITY },
        replicas: n_mc,
    })
}
