//! Coupled slow-fast simulation
//!
//! ```text
//! dx = g(x, y) dt + a(ε) f(x, y) dB^H,   a(ε) = √ε or 1
//! dy = (1/τ) b(x, y) dt + (1/√τ) σ(x, y) dW,   τ = ε or δ
//! ```
//!
//! per macro step: advance `y` over micro sub-steps with `x` frozen at the
//! step start while accumulating the drift integral `∫ g(x_i, y_s) ds` at
//! micro resolution, then advance `x` with the accumulated drift plus the
//! left-point fBM term. The matched averaged dynamics run on the same fBM
//! realization, and the deviation is `z^ε = (x^ε - x̄)/√ε`.

use serde::{Deserialize, Serialize};

use crate::cell::XyField;
use crate::error::{Error, Result};
use crate::fastproc::{
    euler_micro_step, micro_substeps, ExpOuStepper, FastIntegrator, FastModel, FastSimConfig,
    StepScratch,
};
use crate::fbm::FbmPath;
use crate::grid::{Path, TimeGrid};
use crate::linalg;
use crate::scalar::SimScalar;
use crate::stream::StreamKey;

/// Scaling of the slow fBM term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalingMode {
    /// `a(ε) = √ε`, fully coupled `f(x, y)`.
    SqrtEps,
    /// `a(ε) = 1`, `f = f(x)` only.
    Unit,
}

/// Slow fBM coefficient: fully coupled or state-only.
pub enum SlowFbmCoeff<'a> {
    /// `f(x, y)`, `n × d` entries.
    Coupled(XyField<'a>),
    /// `f(x)`, `n × d` entries.
    StateOnly(&'a (dyn Fn(&[f64], &mut [f64]) + Sync)),
}

/// The coupled system; constructors enforce the case pairing (unit scaling
/// requires a y-independent fBM coefficient).
pub struct SlowFastSystem<'a, M: ?Sized> {
    pub slow_drift: XyField<'a>,
    pub fbm_coeff: SlowFbmCoeff<'a>,
    pub fast: &'a M,
    pub scaling: ScalingMode,
    pub slow_dim: usize,
    pub fbm_dim: usize,
    /// Optional runtime bound on `|g|` over the visited states.
    pub drift_bound: Option<f64>,
}

impl<'a, M: FastModel<f64> + ?Sized> SlowFastSystem<'a, M> {
    /// Small-noise regime: `dx = g(x,y) dt + √ε f(x,y) dB^H`.
    pub fn case1(
        slow_drift: XyField<'a>,
        fbm_coeff: XyField<'a>,
        fast: &'a M,
        slow_dim: usize,
        fbm_dim: usize,
    ) -> Self {
        Self {
            slow_drift,
            fbm_coeff: SlowFbmCoeff::Coupled(fbm_coeff),
            fast,
            scaling: ScalingMode::SqrtEps,
            slow_dim,
            fbm_dim,
            drift_bound: None,
        }
    }

    /// Order-one fBM regime: `dx = g(x,y) dt + f(x) dB^H`.
    pub fn case2(
        slow_drift: XyField<'a>,
        fbm_coeff: &'a (dyn Fn(&[f64], &mut [f64]) + Sync),
        fast: &'a M,
        slow_dim: usize,
        fbm_dim: usize,
    ) -> Self {
        Self {
            slow_drift,
            fbm_coeff: SlowFbmCoeff::StateOnly(fbm_coeff),
            fast,
            scaling: ScalingMode::Unit,
            slow_dim,
            fbm_dim,
            drift_bound: None,
        }
    }

    fn amplitude(&self, eps: f64) -> f64 {
        match self.scaling {
            ScalingMode::SqrtEps => eps.sqrt(),
            ScalingMode::Unit => 1.0,
        }
    }
}

/// Time-scale parameters; `delta` activates the doubly-fast regime and must
/// not exceed `eps` (equality is the single-scale control).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TwoScaleConfig {
    pub eps: f64,
    pub delta: Option<f64>,
}

impl TwoScaleConfig {
    pub fn single(eps: f64) -> Self {
        Self { eps, delta: None }
    }

    pub fn two_scale(eps: f64, delta: f64) -> Self {
        Self { eps, delta: Some(delta) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::InvalidArgument(format!("ε = {} outside (0, 1]", self.eps)));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d <= self.eps) {
                return Err(Error::InvalidArgument(format!(
                    "δ = {d} must lie in (0, ε = {}] (δ = ε is the control case)",
                    self.eps
                )));
            }
        }
        Ok(())
    }

    /// Clock of the fast equation: δ when present, else ε.
    pub fn fast_scale(&self) -> f64 {
        self.delta.unwrap_or(self.eps)
    }

    pub fn scale_ratio(&self) -> f64 {
        self.fast_scale() / self.eps
    }
}

/// Coupled trajectory with the driver record.
#[derive(Debug, Clone)]
pub struct SlowFastTrajectory {
    pub slow: Path<f64>,
    pub fast: Path<f64>,
    /// Fast-equation Gaussian noise aggregated per macro step (audit trail).
    pub noise_record: Path<f64>,
    pub fbm: FbmPath<f64>,
    pub config: TwoScaleConfig,
}

/// Simulate the coupled system on the macro grid of `fbm`. The fBM
/// realization is consumed increment-for-increment, so reusing one `fbm`
/// across ε values or against the averaged run couples them exactly.
pub fn simulate_two_scale<M: FastModel<f64> + ?Sized>(
    system: &SlowFastSystem<'_, M>,
    cfg: &TwoScaleConfig,
    x0: &[f64],
    y0: &[f64],
    fbm: &FbmPath<f64>,
    w_key: &StreamKey,
    fast_cfg: &FastSimConfig<f64>,
) -> Result<SlowFastTrajectory> {
    cfg.validate()?;
    let n = system.slow_dim;
    let m = system.fast.dim();
    let e = system.fast.noise_dim();
    let d = system.fbm_dim;
    if x0.len() != n || y0.len() != m {
        return Err(Error::DimensionMismatch("initial state dimensions".into()));
    }
    if fbm.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "fBM driver has dimension {}, system needs {d}",
            fbm.dim()
        )));
    }
    let grid = *fbm.grid();
    let tau = cfg.fast_scale();
    let dt = grid.dt();
    let n_sub = micro_substeps(dt, tau, fast_cfg, false)?;
    let h = dt / n_sub as f64;
    let amp = system.amplitude(cfg.eps);

    let stepper = match fast_cfg.integrator {
        FastIntegrator::Exponential => {
            let gamma = system.fast.stiff_matrix().ok_or_else(|| {
                Error::InvalidArgument("exponential integrator needs a declared Γ".into())
            })?;
            let sigma = system.fast.constant_diffusion().ok_or_else(|| {
                Error::InvalidArgument("exponential integrator needs constant diffusion".into())
            })?;
            Some(ExpOuStepper::new(gamma, sigma, h / tau)?)
        }
        FastIntegrator::EulerMaruyama => None,
    };

    let mut rng = w_key.rng();
    let mut scratch = StepScratch::new(m, e);
    let mut x = x0.to_vec();
    let mut y = y0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = vec![0.0; n * d];
    let mut drift_acc = vec![0.0; n];

    let mut slow_values = vec![0.0; grid.len() * n];
    let mut fast_values = vec![0.0; grid.len() * m];
    let mut noise_values = vec![0.0; grid.len() * e];
    slow_values[..n].copy_from_slice(x0);
    fast_values[..m].copy_from_slice(y0);

    for i in 0..grid.steps() {
        // fBM coefficient at the macro-left point
        match &system.fbm_coeff {
            SlowFbmCoeff::Coupled(field) => field(&x, &y, &mut f),
            SlowFbmCoeff::StateOnly(field) => field(&x, &mut f),
        }
        // micro loop: freeze x, accumulate ∫ g(x_i, y_s) ds at resolution h
        drift_acc.fill(0.0);
        let mut noise_acc = vec![0.0; e];
        for _ in 0..n_sub {
            (system.slow_drift)(&x, &y, &mut g);
            if let Some(bound) = system.drift_bound {
                let norm = linalg::norm2(&g);
                if norm > bound {
                    return Err(Error::InvalidArgument(format!(
                        "slow drift norm {norm} exceeds the configured bound {bound}"
                    )));
                }
            }
            linalg::axpy(h, &g, &mut drift_acc);
            match &stepper {
                Some(s) => {
                    s.step(system.fast, &x, &mut y, &mut scratch, || {
                        f64::standard_normal(&mut rng)
                    });
                }
                None => {
                    let mut slot = 0usize;
                    euler_micro_step(system.fast, &x, &mut y, h, tau, &mut scratch, || {
                        let z = f64::standard_normal(&mut rng);
                        if slot < e {
                            noise_acc[slot] += h.sqrt() * z;
                            slot += 1;
                        }
                        z
                    });
                }
            }
        }
        // slow update with the macro-left fBM increment
        let (ba, bb) = (fbm.value(i), fbm.value(i + 1));
        for r in 0..n {
            let mut acc = x[r] + drift_acc[r];
            for c in 0..d {
                acc += amp * f[r * d + c] * (bb[c] - ba[c]);
            }
            x[r] = acc;
        }
        let norm = linalg::norm2(&x).max(linalg::norm2(&y));
        if !norm.is_finite() || norm > fast_cfg.blowup_bound {
            return Err(Error::BlowUp { step: i + 1, norm });
        }
        slow_values[(i + 1) * n..(i + 2) * n].copy_from_slice(&x);
        fast_values[(i + 1) * m..(i + 2) * m].copy_from_slice(&y);
        for c in 0..e {
            noise_values[(i + 1) * e + c] = noise_values[i * e + c] + noise_acc[c];
        }
    }
    Ok(SlowFastTrajectory {
        slow: Path::new(grid, n, slow_values)?,
        fast: Path::new(grid, m, fast_values)?,
        noise_record: Path::new(grid, e, noise_values)?,
        fbm: fbm.clone(),
        config: *cfg,
    })
}

/// Single-scale coupled simulation (`τ = ε`).
pub fn simulate_slow_fast<M: FastModel<f64> + ?Sized>(
    system: &SlowFastSystem<'_, M>,
    eps: f64,
    x0: &[f64],
    y0: &[f64],
    fbm: &FbmPath<f64>,
    w_key: &StreamKey,
    fast_cfg: &FastSimConfig<f64>,
) -> Result<SlowFastTrajectory> {
    simulate_two_scale(system, &TwoScaleConfig::single(eps), x0, y0, fbm, w_key, fast_cfg)
}

/// Which averaged dynamics to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AveragedKind {
    /// `dx̄ = ḡ(x̄) dt` (deterministic).
    Ode,
    /// `dx̄ = ḡ(x̄) dt + f(x̄) dB^H` on the SAME fBM realization.
    YoungSde,
}

/// Integrate the averaged dynamics with the effective drift `gbar` and, for
/// the Young case, the state-only coefficient `f` against the shared driver.
pub fn solve_averaged(
    gbar: &(dyn Fn(&[f64], &mut [f64]) + Sync),
    f: Option<&(dyn Fn(&[f64], &mut [f64]) + Sync)>,
    kind: AveragedKind,
    x0: &[f64],
    grid: &TimeGrid<f64>,
    fbm: Option<&FbmPath<f64>>,
    fbm_dim: usize,
) -> Result<Path<f64>> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fv = vec![0.0; n * fbm_dim];
    let dt = grid.dt();
    let mut values = vec![0.0; grid.len() * n];
    values[..n].copy_from_slice(x0);
    if kind == AveragedKind::YoungSde {
        let fbm = fbm.ok_or_else(|| {
            Error::InvalidArgument("Young averaged dynamics need the shared fBM".into())
        })?;
        if fbm.grid() != grid {
            return Err(Error::GridMismatch("averaged grid vs fBM grid".into()));
        }
    }
    for i in 0..grid.steps() {
        // both coefficients at the left point
        gbar(&x, &mut g);
        if kind == AveragedKind::YoungSde {
            let field = f.ok_or_else(|| {
                Error::InvalidArgument("Young averaged dynamics need the coefficient f".into())
            })?;
            field(&x, &mut fv);
        }
        for r in 0..n {
            x[r] += g[r] * dt;
        }
        if kind == AveragedKind::YoungSde {
            let fbm = fbm.expect("checked above");
            let (ba, bb) = (fbm.value(i), fbm.value(i + 1));
            for r in 0..n {
                let mut acc = 0.0;
                for c in 0..fbm_dim {
                    acc += fv[r * fbm_dim + c] * (bb[c] - ba[c]);
                }
                x[r] += acc;
            }
        }
        if !linalg::norm2(&x).is_finite() {
            return Err(Error::BlowUp { step: i + 1, norm: f64::NAN });
        }
        values[(i + 1) * n..(i + 2) * n].copy_from_slice(&x);
    }
    Path::new(*grid, n, values)
}

/// Deviation `z^ε = (x^ε - x̄)/√ε` on the shared grid.
pub fn deviation(traj: &SlowFastTrajectory, xbar: &Path<f64>, eps: f64) -> Result<Path<f64>> {
    traj.slow.same_grid(xbar)?;
    if traj.slow.dim() != xbar.dim() {
        return Err(Error::DimensionMismatch("slow path vs averaged path".into()));
    }
    let scale = 1.0 / eps.sqrt();
    let n = traj.slow.dim();
    let mut values = vec![0.0; traj.slow.len() * n];
    for i in 0..traj.slow.len() {
        let a = traj.slow.value(i);
        let b = xbar.value(i);
        for c in 0..n {
            values[i * n + c] = (a[c] - b[c]) * scale;
        }
    }
    Path::new(*traj.slow.grid(), n, values)
}
