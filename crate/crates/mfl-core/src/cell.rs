//! The Poisson (cell) problem `-L^x Ψ = ĝ` for the corrector Ψ and the
//! effective coefficients built from it.
//!
//! `L^x = ½ a_ij ∂²_{y_i y_j} + b_i ∂_{y_i}` with `a = σσ*` is the generator
//! of the fast process with the slow variable frozen at `x`. The corrector is
//! computed two ways: the truncated semigroup integral
//! `Ψ(x,y) = ∫_0^∞ E[ĝ(x, Y_t^{x,y})] dt` by Monte Carlo, and in closed form
//! for the linear family. Averages against the invariant measure `μ^x`
//! produce the effective drift `ḡ`, the effective fBM coefficient `f̄` and
//! the fluctuation diffusion `V̄ = ∫ (D_yΨ σ)(D_yΨ σ)* dμ^x` with its PSD
//! square root.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fastproc::{simulate_fast, FastModel, FastSimConfig, OuParams, SlowInput};
use crate::grid::TimeGrid;
use crate::linalg::Mat;
use crate::stream::{run_replicas, StreamKey};

/// Function of the frozen slow point and the fast state, written to `out`.
pub type XyField<'a> = &'a (dyn Fn(&[f64], &[f64], &mut [f64]) + Sync);

/// Sampler for the invariant measure `μ^x`.
pub enum InvariantSampler {
    /// Exact Gaussian draws `mean + L z` (linear family).
    Gaussian { mean: Vec<f64>, factor: Mat<f64> },
    /// Long-run ergodic time average along the unscaled fast dynamics.
    Ergodic {
        y0: Vec<f64>,
        burn_in: f64,
        horizon: f64,
        dt: f64,
        /// Estimates whose standard error stays above this fail with
        /// [`Error::NotConverged`].
        se_tol: Option<f64>,
    },
}

impl InvariantSampler {
    /// Exact sampler for the OU family: `N(0, Σ_∞)`.
    pub fn gaussian_for_ou(params: &OuParams<f64>) -> Result<Self> {
        let cov = crate::fastproc::ou_invariant_covariance(params)?;
        let factor = cov.cholesky(1e-14 * cov.trace().max(1e-300))?;
        Ok(Self::Gaussian { mean: vec![0.0; factor.rows()], factor })
    }

    /// Ergodic sampler with burn-in `5/γ_min` when the model declares its
    /// linear part, else five unit times.
    pub fn ergodic<M: FastModel<f64> + ?Sized>(model: &M, horizon: f64, dt: f64) -> Self {
        let gamma_min = model
            .stiff_matrix()
            .map(|g| {
                let (vals, _) = g.add(&g.transpose()).scale(0.5).sym_eigen();
                vals[0].max(1e-3)
            })
            .unwrap_or(1.0);
        Self::Ergodic {
            y0: vec![0.0; model.dim()],
            burn_in: 5.0 / gamma_min,
            horizon,
            dt,
            se_tol: None,
        }
    }
}

/// Monte Carlo estimate with componentwise standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Estimate {
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Average `f(x, ·)` against the invariant measure.
pub fn effective_average<M: FastModel<f64> + ?Sized>(
    f: XyField<'_>,
    out_dim: usize,
    model: &M,
    x: &[f64],
    sampler: &InvariantSampler,
    n_samples: usize,
    key: &StreamKey,
) -> Result<Estimate> {
    match sampler {
        InvariantSampler::Gaussian { mean, factor } => {
            let m = mean.len();
            let sums: Vec<Vec<f64>> = run_replicas(key, n_samples, |_, k| {
                use crate::scalar::SimScalar;
                let mut rng = k.rng();
                let z: Vec<f64> = (0..m).map(|_| f64::standard_normal(&mut rng)).collect();
                let mut y = mean.clone();
                for r in 0..m {
                    let row = factor.row(r);
                    for c in 0..=r {
                        y[r] += row[c] * z[c];
                    }
                }
                let mut out = vec![0.0; out_dim];
                f(x, &y, &mut out);
                out
            });
            let mut mean_v = vec![0.0; out_dim];
            let mut sq_v = vec![0.0; out_dim];
            for v in &sums {
                for k in 0..out_dim {
                    mean_v[k] += v[k];
                    sq_v[k] += v[k] * v[k];
                }
            }
            let nf = n_samples as f64;
            for k in 0..out_dim {
                mean_v[k] /= nf;
                sq_v[k] = ((sq_v[k] / nf - mean_v[k] * mean_v[k]).max(0.0) / nf).sqrt();
            }
            Ok(Estimate { value: mean_v, stderr: sq_v })
        }
        InvariantSampler::Ergodic { y0, burn_in, horizon, dt, se_tol } => {
            let total = burn_in + horizon;
            let steps = (total / dt).ceil() as usize;
            let grid = TimeGrid::new(total, steps)?;
            let path = simulate_fast(
                model,
                SlowInput::Frozen(x),
                y0,
                1.0,
                &grid,
                key,
                &FastSimConfig::default(),
            )?;
            let skip = (burn_in / grid.dt()).ceil() as usize;
            let kept = grid.len() - skip;
            // batch means over 20 blocks give an SE honest about
            // autocorrelation
            let batches = 20usize.min(kept / 2).max(1);
            let per_batch = kept / batches;
            let mut out = vec![0.0; out_dim];
            let mut total_v = vec![0.0; out_dim];
            let mut batch_means = vec![vec![0.0; out_dim]; batches];
            for j in 0..batches * per_batch {
                f(x, path.value(skip + j), &mut out);
                for k in 0..out_dim {
                    total_v[k] += out[k];
                    batch_means[j / per_batch][k] += out[k];
                }
            }
            let used = (batches * per_batch) as f64;
            for k in 0..out_dim {
                total_v[k] /= used;
            }
            for b in &mut batch_means {
                for v in b.iter_mut() {
                    *v /= per_batch as f64;
                }
            }
            let mut stderr = vec![0.0; out_dim];
            for k in 0..out_dim {
                let mut var = 0.0;
                for b in &batch_means {
                    var += (b[k] - total_v[k]) * (b[k] - total_v[k]);
                }
                var /= (batches.max(2) - 1) as f64;
                stderr[k] = (var / batches as f64).sqrt();
            }
            if let Some(tol) = se_tol {
                let worst = stderr.iter().cloned().fold(0.0, f64::max);
                if worst > *tol {
                    return Err(Error::NotConverged(format!(
                        "ergodic average stderr {worst} above tolerance {tol} after {steps} steps"
                    )));
                }
            }
            Ok(Estimate { value: total_v, stderr })
        }
    }
}

/// `ḡ(x) = ∫ g(x, y) μ^x(dy)`.
pub fn effective_drift<M: FastModel<f64> + ?Sized>(
    g: XyField<'_>,
    out_dim: usize,
    model: &M,
    x: &[f64],
    sampler: &InvariantSampler,
    n_samples: usize,
    key: &StreamKey,
) -> Result<Estimate> {
    effective_average(g, out_dim, model, x, sampler, n_samples, key)
}

/// `f̄(x) = ∫ f(x, y) μ^x(dy)`; `entries` counts the flattened n×d
/// coefficient entries.
pub fn effective_fbm_coeff<M: FastModel<f64> + ?Sized>(
    f: XyField<'_>,
    entries: usize,
    model: &M,
    x: &[f64],
    sampler: &InvariantSampler,
    n_samples: usize,
    key: &StreamKey,
) -> Result<Estimate> {
    effective_average(f, entries, model, x, sampler, n_samples, key)
}

/// Cell problem data: the frozen slow point, the raw drift and its estimated
/// average, so that `ĝ = g - ḡ` is centered up to Monte Carlo error.
pub struct CellProblem<'a, M: ?Sized> {
    pub x: Vec<f64>,
    pub fast: &'a M,
    pub raw_drift: XyField<'a>,
    pub out_dim: usize,
    pub gbar: Estimate,
}

impl<'a, M: FastModel<f64> + ?Sized> CellProblem<'a, M> {
    /// Center the raw drift by estimating `ḡ(x)` with `n_samples` draws.
    pub fn center(
        x: Vec<f64>,
        fast: &'a M,
        raw_drift: XyField<'a>,
        out_dim: usize,
        sampler: &InvariantSampler,
        n_samples: usize,
        key: &StreamKey,
    ) -> Result<Self> {
        let gbar = effective_drift(raw_drift, out_dim, fast, &x, sampler, n_samples, key)?;
        Ok(Self { x, fast, raw_drift, out_dim, gbar })
    }

    /// Exactly centered problem when `ḡ(x)` is known in closed form.
    pub fn with_exact_gbar(
        x: Vec<f64>,
        fast: &'a M,
        raw_drift: XyField<'a>,
        out_dim: usize,
        gbar: Vec<f64>,
    ) -> Self {
        let stderr = vec![0.0; gbar.len()];
        Self { x, fast, raw_drift, out_dim, gbar: Estimate { value: gbar, stderr } }
    }

    /// Centered target `ĝ(x, y) = g(x, y) - ḡ(x)`.
    pub fn ghat(&self, y: &[f64], out: &mut [f64]) {
        (self.raw_drift)(&self.x, y, out);
        for (o, g) in out.iter_mut().zip(&self.gbar.value) {
            *o -= g;
        }
    }

    /// Centering invariant: the Monte Carlo average of `ĝ(x, ·)` under the
    /// invariant measure vanishes within 3 standard errors.
    pub fn check_centering(
        &self,
        sampler: &InvariantSampler,
        n_samples: usize,
        key: &StreamKey,
    ) -> Result<()> {
        let ghat = |x: &[f64], y: &[f64], out: &mut [f64]| {
            (self.raw_drift)(x, y, out);
            for (o, g) in out.iter_mut().zip(&self.gbar.value) {
                *o -= g;
            }
        };
        let est =
            effective_average(&ghat, self.out_dim, self.fast, &self.x, sampler, n_samples, key)?;
        for k in 0..self.out_dim {
            let tol = 3.0 * (est.stderr[k] + self.gbar.stderr[k]) + 1e-12;
            if est.value[k].abs() > tol {
                return Err(Error::NotConverged(format!(
                    "centered drift component {k} averages to {} (tolerance {tol})",
                    est.value[k]
                )));
            }
        }
        Ok(())
    }
}

/// Fitted exponential mixing `‖E u(Y_t) - ∫u dμ‖ ≈ C e^{-ct}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecayFit {
    /// C
    pub amplitude: f64,
    /// c
    pub rate: f64,
    pub r_squared: f64,
    /// Constant test functions carry no decay information.
    pub skipped: bool,
}

/// Truncation horizon `8/ĉ` from the fitted rate (truncation bias
/// `e^{-8} ≈ 3e-4` of the leading constant).
pub fn default_t_max(decay: &DecayFit) -> f64 {
    8.0 / decay.rate
}

/// Fit the ergodic decay of `E u(Y_t)` toward its invariant average from an
/// ensemble started at `y0`.
#[allow(clippy::too_many_arguments)]
pub fn ergodic_decay_check<M: FastModel<f64> + ?Sized>(
    model: &M,
    x: &[f64],
    u: &(dyn Fn(&[f64]) -> f64 + Sync),
    mu_average: f64,
    y0: &[f64],
    grid: &TimeGrid<f64>,
    n_mc: usize,
    key: &StreamKey,
) -> Result<DecayFit> {
    let paths = run_replicas(key, n_mc, |_, k| {
        simulate_fast(model, SlowInput::Frozen(x), y0, 1.0, grid, &k, &FastSimConfig::default())
            .map(|p| (0..p.len()).map(|i| u(p.value(i))).collect::<Vec<f64>>())
    });
    let mut mean = vec![0.0; grid.len()];
    let mut sq = vec![0.0; grid.len()];
    for p in paths {
        let p = p?;
        for (i, v) in p.iter().enumerate() {
            mean[i] += v;
            sq[i] += v * v;
        }
    }
    let nf = n_mc as f64;
    for i in 0..grid.len() {
        mean[i] /= nf;
        sq[i] = ((sq[i] / nf - mean[i] * mean[i]).max(0.0) / nf).sqrt();
    }
    let initial_gap = (u(y0) - mu_average).abs();
    if initial_gap < 1e-12 {
        return Ok(DecayFit { amplitude: 0.0, rate: 0.0, r_squared: 1.0, skipped: true });
    }
    // log-linear fit on the leading stretch still above the Monte Carlo floor
    let mut ts = Vec::new();
    let mut lns = Vec::new();
    for i in 0..grid.len() {
        let gap = (mean[i] - mu_average).abs();
        if gap > 4.0 * sq[i] && gap > 1e-3 * initial_gap {
            ts.push(grid.point(i));
            lns.push(gap.ln());
        } else if !ts.is_empty() {
            break;
        }
    }
    if ts.len() < 3 {
        return Err(Error::Degenerate(format!(
            "only {} usable decay points above the noise floor",
            ts.len()
        )));
    }
    let n = ts.len() as f64;
    let mx = ts.iter().sum::<f64>() / n;
    let my = lns.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&t, &l) in ts.iter().zip(&lns) {
        sxx += (t - mx) * (t - mx);
        sxy += (t - mx) * (l - my);
        syy += (l - my) * (l - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut rss = 0.0;
    for (&t, &l) in ts.iter().zip(&lns) {
        let r = l - intercept - slope * t;
        rss += r * r;
    }
    let r_squared = if syy > 0.0 { 1.0 - rss / syy } else { 1.0 };
    if r_squared < 0.9 {
        log::warn!("ergodic decay fit is not exponential: R² = {r_squared:.3}");
    }
    Ok(DecayFit { amplitude: intercept.exp(), rate: -slope, r_squared, skipped: false })
}

/// Pointwise corrector estimate from the truncated semigroup integral.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellEstimate {
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `(C/c) e^{-c t_max}` from the decay fit.
    pub bias_bound: f64,
}

/// Monte Carlo corrector `Ψ(x, y) ≈ (1/N) Σ ∫_0^{t_max} ĝ(x, Y_t) dt` along
/// unscaled fast paths started at `y`.
pub fn solve_cell_mc<M: FastModel<f64> + ?Sized>(
    problem: &CellProblem<'_, M>,
    y: &[f64],
    t_max: f64,
    n_paths: usize,
    dt: f64,
    decay: &DecayFit,
    key: &StreamKey,
) -> Result<CellEstimate> {
    if decay.r_squared < 0.9 && !decay.skipped {
        log::warn!(
            "decay fit R² = {:.3} below 0.9; truncation bias bound is unreliable",
            decay.r_squared
        );
    }
    let steps = (t_max / dt).ceil() as usize;
    let grid = TimeGrid::new(t_max, steps)?;
    let out_dim = problem.out_dim;
    let integrals: Vec<Result<Vec<f64>>> = run_replicas(key, n_paths, |_, k| {
        let path = simulate_fast(
            problem.fast,
            SlowInput::Frozen(&problem.x),
            y,
            1.0,
            &grid,
            &k,
            &FastSimConfig::default(),
        )?;
        let mut acc = vec![0.0; out_dim];
        let mut g = vec![0.0; out_dim];
        let h = grid.dt();
        for i in 0..grid.steps() {
            problem.ghat(path.value(i), &mut g);
            for c in 0..out_dim {
                acc[c] += g[c] * h;
            }
        }
        Ok(acc)
    });
    let mut mean = vec![0.0; out_dim];
    let mut sq = vec![0.0; out_dim];
    for v in integrals {
        let v = v?;
        for c in 0..out_dim {
            mean[c] += v[c];
            sq[c] += v[c] * v[c];
        }
    }
    let nf = n_paths as f64;
    let mut stderr = vec![0.0; out_dim];
    for c in 0..out_dim {
        mean[c] /= nf;
        stderr[c] = (((sq[c] / nf - mean[c] * mean[c]).max(0.0)) / nf).sqrt();
        // the estimated ḡ biases every ĝ evaluation; its error integrates
        // up over [0, t_max]
        stderr[c] += problem.gbar.stderr[c] * t_max;
    }
    let bias_bound = if decay.skipped || decay.rate <= 0.0 {
        0.0
    } else {
        decay.amplitude / decay.rate * (-decay.rate * t_max).exp()
    };
    Ok(CellEstimate { value: mean, stderr, bias_bound })
}

/// Closed-form corrector for the linear family: `ĝ(x, y) = C(x) y` with
/// `b = -Γy` gives `Ψ(x, y) = C(x) Γ^{-1} y` and `D_yΨ = C(x) Γ^{-1}`.
#[derive(Debug, Clone)]
pub struct LinearCorrector {
    /// `C Γ^{-1}`, `n × m`.
    pub coeff: Mat<f64>,
}

pub fn solve_cell_analytic_linear(c: &Mat<f64>, gamma: &Mat<f64>) -> Result<LinearCorrector> {
    let inv = gamma
        .inverse()
        .map_err(|_| Error::SingularMatrix("analytic linear corrector needs invertible Γ"))?;
    Ok(LinearCorrector { coeff: c.matmul(&inv) })
}

impl LinearCorrector {
    pub fn eval(&self, y: &[f64], out: &mut [f64]) {
        self.coeff.mul_vec_into(y, out);
    }

    /// `D_yΨ`, constant for the linear corrector.
    pub fn dy(&self) -> &Mat<f64> {
        &self.coeff
    }
}

/// Corrector evaluable in a neighborhood of each probe point.
pub trait Corrector: Sync {
    fn out_dim(&self) -> usize;
    fn eval(&self, y: &[f64], out: &mut [f64]);
}

impl Corrector for LinearCorrector {
    fn out_dim(&self) -> usize {
        self.coeff.rows()
    }

    fn eval(&self, y: &[f64], out: &mut [f64]) {
        LinearCorrector::eval(self, y, out)
    }
}

/// Corrector backed by an arbitrary evaluation closure.
pub struct ClosureCorrector<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> Corrector for ClosureCorrector<F> {
    fn out_dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, y: &[f64], out: &mut [f64]) {
        (self.f)(y, out)
    }
}

/// Residual report for `|L^x Ψ + ĝ|` over a probe set.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ResidualReport {
    pub max_abs: f64,
    pub mean_abs: f64,
    pub points: usize,
}

/// Apply the generator by central finite differences and report the Poisson
/// residual at the probe points.
pub fn poisson_residual<M: FastModel<f64> + ?Sized, C: Corrector + ?Sized>(
    corrector: &C,
    problem: &CellProblem<'_, M>,
    y_points: &[Vec<f64>],
    fd_step: f64,
) -> Result<ResidualReport> {
    if fd_step <= 0.0 || !fd_step.is_finite() {
        return Err(Error::InvalidArgument(format!("finite-difference step {fd_step}")));
    }
    let m = problem.fast.dim();
    let e = problem.fast.noise_dim();
    let n = corrector.out_dim();
    let mut b = vec![0.0; m];
    let mut sig = vec![0.0; m * e];
    let mut ghat = vec![0.0; n];
    let mut buf_p = vec![0.0; n];
    let mut buf_m = vec![0.0; n];
    let mut buf_pp = vec![0.0; n];
    let mut buf_pm = vec![0.0; n];
    let mut buf_mp = vec![0.0; n];
    let mut buf_mm = vec![0.0; n];
    let mut base = vec![0.0; n];
    let mut max_abs = 0.0f64;
    let mut mean_abs = 0.0f64;
    for y in y_points {
        problem.fast.drift(&problem.x, y, &mut b);
        problem.fast.diffusion(&problem.x, y, &mut sig);
        problem.ghat(y, &mut ghat);
        corrector.eval(y, &mut base);
        let mut lpsi = vec![0.0; n];
        let mut yp = y.clone();
        // first-order term b_i ∂_i Ψ
        for i in 0..m {
            yp[i] = y[i] + fd_step;
            corrector.eval(&yp, &mut buf_p);
            yp[i] = y[i] - fd_step;
            corrector.eval(&yp, &mut buf_m);
            yp[i] = y[i];
            for c in 0..n {
                lpsi[c] += b[i] * (buf_p[c] - buf_m[c]) / (2.0 * fd_step);
            }
        }
        // second-order term ½ a_ij ∂²_ij Ψ, a = σσ*
        for i in 0..m {
            for j in 0..m {
                let mut a_ij = 0.0;
                for k in 0..e {
                    a_ij += sig[i * e + k] * sig[j * e + k];
                }
                if a_ij == 0.0 {
                    continue;
                }
                if i == j {
                    yp[i] = y[i] + fd_step;
                    corrector.eval(&yp, &mut buf_p);
                    yp[i] = y[i] - fd_step;
                    corrector.eval(&yp, &mut buf_m);
                    yp[i] = y[i];
                    for c in 0..n {
                        lpsi[c] += 0.5 * a_ij * (buf_p[c] - 2.0 * base[c] + buf_m[c])
                            / (fd_step * fd_step);
                    }
                } else {
                    yp[i] = y[i] + fd_step;
                    yp[j] = y[j] + fd_step;
                    corrector.eval(&yp, &mut buf_pp);
                    yp[j] = y[j] - fd_step;
                    corrector.eval(&yp, &mut buf_pm);
                    yp[i] = y[i] - fd_step;
                    corrector.eval(&yp, &mut buf_mm);
                    yp[j] = y[j] + fd_step;
                    corrector.eval(&yp, &mut buf_mp);
                    yp[i] = y[i];
                    yp[j] = y[j];
                    for c in 0..n {
                        lpsi[c] += 0.5 * a_ij * (buf_pp[c] - buf_pm[c] - buf_mp[c] + buf_mm[c])
                            / (4.0 * fd_step * fd_step);
                    }
                }
            }
        }
        for c in 0..n {
            let r = (lpsi[c] + ghat[c]).abs();
            max_abs = max_abs.max(r);
            mean_abs += r;
        }
    }
    mean_abs /= (y_points.len() * n) as f64;
    Ok(ResidualReport { max_abs, mean_abs, points: y_points.len() })
}

/// Effective fluctuation diffusion and its PSD square root.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FluctuationDiffusion {
    /// `V̄ = ∫ (D_yΨ σ)(D_yΨ σ)* dμ^x`, `n × n` row-major.
    pub vbar: Vec<f64>,
    pub vbar_sqrt: Vec<f64>,
    pub dim: usize,
    /// Total negative eigenvalue mass clamped to reach PSD.
    pub clamped_mass: f64,
}

impl FluctuationDiffusion {
    pub fn vbar_mat(&self) -> Mat<f64> {
        Mat::from_vec(self.dim, self.dim, self.vbar.clone())
    }

    pub fn vbar_sqrt_mat(&self) -> Mat<f64> {
        Mat::from_vec(self.dim, self.dim, self.vbar_sqrt.clone())
    }
}

/// Average `V(x, y) = (D_yΨ σ)(D_yΨ σ)*` against the invariant measure, then
/// take the symmetric PSD square root. Average-then-root: the quadratic
/// variation of the limiting martingale averages `V` itself.
pub fn effective_fluctuation_diffusion<M: FastModel<f64> + ?Sized>(
    dy_psi: &(dyn Fn(&[f64], &mut [f64]) + Sync),
    n: usize,
    model: &M,
    x: &[f64],
    sampler: &InvariantSampler,
    n_samples: usize,
    key: &StreamKey,
) -> Result<FluctuationDiffusion> {
    let m = model.dim();
    let e = model.noise_dim();
    let v_field = |x: &[f64], y: &[f64], out: &mut [f64]| {
        let mut dpsi = vec![0.0; n * m];
        let mut sig = vec![0.0; m * e];
        dy_psi(y, &mut dpsi);
        model.diffusion(x, y, &mut sig);
        // (DΨ σ) is n × e
        let mut ds = vec![0.0; n * e];
        for r in 0..n {
            for c in 0..e {
                let mut acc = 0.0;
                for k in 0..m {
                    acc += dpsi[r * m + k] * sig[k * e + c];
                }
                ds[r * e + c] = acc;
            }
        }
        for r in 0..n {
            for q in 0..n {
                let mut acc = 0.0;
                for c in 0..e {
                    acc += ds[r * e + c] * ds[q * e + c];
                }
                out[r * n + q] = acc;
            }
        }
    };
    let est = effective_average(&v_field, n * n, model, x, sampler, n_samples, key)?;
    let mut vbar = Mat::from_vec(n, n, est.value);
    // exact symmetry before the eigensolve
    vbar = vbar.add(&vbar.transpose()).scale(0.5);
    let (sqrt, clamped) = vbar.psd_sqrt();
    if clamped > 1e-6 * vbar.trace().abs() {
        log::warn!("PSD clamping removed eigenvalue mass {clamped} (trace {})", vbar.trace());
    }
    Ok(FluctuationDiffusion {
        vbar: vbar.data().to_vec(),
        vbar_sqrt: sqrt.data().to_vec(),
        dim: n,
        clamped_mass: clamped,
    })
}

/// Corrector point estimate for the JSON report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsiPointEstimate {
    pub point: Vec<f64>,
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
    pub bias_bound: f64,
}

/// Full cell report: effective coefficients at one slow point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellReport {
    pub x: Vec<f64>,
    pub psi_estimates: Vec<PsiPointEstimate>,
    pub gbar: Vec<f64>,
    pub gbar_stderr: Vec<f64>,
    pub fbar: Vec<f64>,
    /// Row-major `n × n`.
    pub v_bar: Vec<f64>,
    pub v_bar_sqrt: Vec<f64>,
    pub decay_fit: DecayFitReport,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecayFitReport {
    pub c_amplitude: f64,
    pub c_rate: f64,
    pub r2: f64,
}

impl From<DecayFit> for DecayFitReport {
    fn from(d: DecayFit) -> Self {
        Self { c_amplitude: d.amplitude, c_rate: d.rate, r2: d.r_squared }
    }
}

/// Central finite-difference Jacobian of an effective coefficient in the
/// slow variable, step `1e-4 (1 + |x|)` per coordinate (used for `Dḡ` when
/// no closed form is available).
pub fn finite_diff_jacobian(
    f: &(dyn Fn(&[f64], &mut [f64]) + Sync),
    x: &[f64],
    out_dim: usize,
) -> Mat<f64> {
    let n = x.len();
    let mut jac = Mat::zeros(out_dim, n);
    let mut xp = x.to_vec();
    let mut up = vec![0.0; out_dim];
    let mut dn = vec![0.0; out_dim];
    for j in 0..n {
        let h = 1e-4 * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        f(&xp, &mut up);
        xp[j] = x[j] - h;
        f(&xp, &mut dn);
        xp[j] = x[j];
        for i in 0..out_dim {
            jac[(i, j)] = (up[i] - dn[i]) / (2.0 * h);
        }
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fastproc::OuModel;

    fn ou(gamma: f64, sigma: f64) -> OuModel<f64> {
        OuModel::new(OuParams::scalar(gamma, sigma))
    }

    fn gaussian(model: &OuModel<f64>) -> InvariantSampler {
        InvariantSampler::gaussian_for_ou(model.params()).unwrap()
    }

    #[test]
    fn effective_drift_odd_function_vanishes() {
        let model = ou(1.0, 2f64.sqrt());
        let sampler = gaussian(&model);
        let g = |_x: &[f64], y: &[f64], out: &mut [f64]| out[0] = y[0];
        let est =
            effective_drift(&g, 1, &model, &[0.3], &sampler, 20_000, &StreamKey::root(1)).unwrap();
        assert!(est.value[0].abs() < 3.0 * est.stderr[0], "mean {}", est.value[0]);
    }

    #[test]
    fn effective_drift_quadratic_matches_stationary_variance() {
        // g = y² under OU(γ, σ): σ²/(2γ); the exact sampler and the ergodic
        // time average agree
        let (gamma, sigma) = (1.0, 2f64.sqrt());
        let model = ou(gamma, sigma);
        let target = sigma * sigma / (2.0 * gamma);
        let g = |_x: &[f64], y: &[f64], out: &mut [f64]| out[0] = y[0] * y[0];
        let exact =
            effective_drift(&g, 1, &model, &[0.0], &gaussian(&model), 20_000, &StreamKey::root(2))
                .unwrap();
        assert!(
            (exact.value[0] - target).abs() < 3.0 * exact.stderr[0],
            "exact-route {} vs {target}",
            exact.value[0]
        );
        let ergodic_sampler = InvariantSampler::Ergodic {
            y0: vec![0.0],
            burn_in: 5.0,
            horizon: 400.0,
            dt: 0.01,
            se_tol: None,
        };
        let erg =
            effective_drift(&g, 1, &model, &[0.0], &ergodic_sampler, 1, &StreamKey::root(3))
                .unwrap();
        assert!(
            (erg.value[0] - target).abs() < 4.0 * erg.stderr[0].max(0.01),
            "ergodic-route {} ± {} vs {target}",
            erg.value[0],
            erg.stderr[0]
        );
    }

    #[test]
    fn effective_drift_y_independent_is_exact() {
        let model = ou(1.0, 1.0);
        let g = |x: &[f64], _y: &[f64], out: &mut [f64]| out[0] = x[0];
        let est =
            effective_drift(&g, 1, &model, &[1.7], &gaussian(&model), 200, &StreamKey::root(4))
                .unwrap();
        assert!((est.value[0] - 1.7).abs() < 1e-12);
        // one-pass variance of a constant sample is pure cancellation noise
        assert!(est.stderr[0] < 1e-7);
    }

    #[test]
    fn ergodic_average_reports_nonconvergence() {
        let model = ou(1.0, 1.0);
        let sampler = InvariantSampler::Ergodic {
            y0: vec![0.0],
            burn_in: 1.0,
            horizon: 5.0,
            dt: 0.01,
            se_tol: Some(1e-6),
        };
        let g = |_x: &[f64], y: &[f64], out: &mut [f64]| out[0] = y[0] * y[0];
        assert!(matches!(
            effective_drift(&g, 1, &model, &[0.0], &sampler, 1, &StreamKey::root(5)),
            Err(Error::NotConverged(_))
        ));
    }

    #[test]
    fn effective_fbm_coeff_examples() {
        let model = ou(1.5, 1.0);
        let sampler = gaussian(&model);
        // f = f(x): exact passthrough
        let fx = |x: &[f64], _y: &[f64], out: &mut [f64]| out[0] = 2.0 * x[0];
        let est =
            effective_fbm_coeff(&fx, 1, &model, &[0.5], &sampler, 100, &StreamKey::root(6))
                .unwrap();
        assert!((est.value[0] - 1.0).abs() < 1e-12);
        // f = sin(y): odd under the symmetric invariant law
        let fsin = |_x: &[f64], y: &[f64], out: &mut [f64]| out[0] = y[0].sin();
        let est =
            effective_fbm_coeff(&fsin, 1, &model, &[0.0], &sampler, 20_000, &StreamKey::root(7))
                .unwrap();
        assert!(est.value[0].abs() < 3.0 * est.stderr[0]);
    }

    #[test]
    fn analytic_linear_corrector_examples() {
        // scalar: C = 1, γ: Ψ = y/γ
        let c = solve_cell_analytic_linear(&Mat::scalar(1.0), &Mat::scalar(2.0)).unwrap();
        let mut out = [0.0];
        c.eval(&[1.0], &mut out);
        assert!((out[0] - 0.5).abs() < 1e-14);
        // C = 0: Ψ ≡ 0
        let c0 = solve_cell_analytic_linear(&Mat::scalar(0.0), &Mat::scalar(2.0)).unwrap();
        c0.eval(&[3.0], &mut out);
        assert_eq!(out[0], 0.0);
        // Γ = diag(1, 2), C = I: Ψ = (y₁, y₂/2)
        let cm = solve_cell_analytic_linear(&Mat::identity(2), &Mat::diag(&[1.0, 2.0])).unwrap();
        let mut o2 = [0.0, 0.0];
        cm.eval(&[1.0, 1.0], &mut o2);
        assert!((o2[0] - 1.0).abs() < 1e-14 && (o2[1] - 0.5).abs() < 1e-14);
        // singular Γ rejected
        assert!(solve_cell_analytic_linear(&Mat::identity(2), &Mat::diag(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn decay_rate_matches_ou_autocorrelation() {
        // u(y) = y relaxes at rate γ; u(y) = y² at rate 2γ
        let gamma = 1.0;
        let model = ou(gamma, 1.0);
        let grid = TimeGrid::new(3.0, 60).unwrap();
        let fit = ergodic_decay_check(
            &model,
            &[0.0],
            &|y: &[f64]| y[0],
            0.0,
            &[2.0],
            &grid,
            20_000,
            &StreamKey::root(8),
        )
        .unwrap();
        assert!(!fit.skipped);
        assert!((fit.rate - gamma).abs() < 0.15 * gamma, "rate {}", fit.rate);
        assert!(fit.r_squared > 0.9);

        let var = 0.5; // σ²/(2γ)
        let fit2 = ergodic_decay_check(
            &model,
            &[0.0],
            &|y: &[f64]| y[0] * y[0],
            var,
            &[2.0],
            &grid,
            20_000,
            &StreamKey::root(9),
        )
        .unwrap();
        assert!((fit2.rate - 2.0 * gamma).abs() < 0.2 * 2.0 * gamma, "rate {}", fit2.rate);
    }

    #[test]
    fn decay_constant_function_skipped() {
        let model = ou(1.0, 1.0);
        let grid = TimeGrid::new(2.0, 20).unwrap();
        let fit = ergodic_decay_check(
            &model,
            &[0.0],
            &|_y: &[f64]| 4.2,
            4.2,
            &[1.0],
            &grid,
            100,
            &StreamKey::root(10),
        )
        .unwrap();
        assert!(fit.skipped);
        assert_eq!(fit.rate, 0.0);
    }

    #[test]
    fn mc_corrector_matches_linear_closed_form() {
        // OU γ = 2: ĝ = y gives Ψ(1) = 1/γ = 0.5 within 2%
        let gamma = 2.0;
        let model = ou(gamma, 1.0);
        let g = |_x: &[f64], y: &[f64], out: &mut [f64]| out[0] = y[0];
        let problem = CellProblem::with_exact_gbar(vec![0.0], &model, &g, 1, vec![0.0]);
        let decay = DecayFit { amplitude: 1.0, rate: gamma, r_squared: 0.99, skipped: false };
        let est = solve_cell_mc(
            &problem,
            &[1.0],
            default_t_max(&decay),
            100_000,
            0.005,
            &decay,
            &StreamKey::root(11),
        )
        .unwrap();
        let err = (est.value[0] - 0.5).abs();
        assert!(err < 0.01, "Ψ(1) = {} (err {err}, se {})", est.value[0], est.stderr[0]);
    }

    #[test]
    fn mc_corrector_odd_target_at_origin_vanishes() {
        let model = ou(1.0, 1.0);
        let g = |_x: &[f64], y: &[f64], out: &mut [f64]| out[0] = y[0];
        let problem = CellProblem::with_exact_gbar(vec![0.0], &model, &g, 1, vec![0.0]);
        let decay = DecayFit { amplitude: 1.0, rate: 1.0, r_squared: 0.99, skipped: false };
        let est = solve_cell_mc(&problem, &[0.0], 8.0, 20_000, 0.01, &decay, &StreamKey::root(12))
            .unwrap();
        assert!(
            est.value[0].abs() < 3.0 * est.stderr[0],
            "{} vs se {}",
            est.value[0],
            est.stderr[0]
        );
    }

    #[test]
    fn mc_corrector_quadratic_benchmark() {
        // ĝ = y² - σ²/(2γ) gives Ψ(y) = (y² - σ²/(2γ))/(2γ); at γ = 2,
        // σ = 1, y = 1.3: Ψ = 0.36
        let (gamma, sigma) = (2.0, 1.0);
        let model = ou(gamma, sigma);
        let v = sigma * sigma / (2.0 * gamma);
        let g = move |_x: &[f64], y: &[f64], out: &mut [f64]| out[0] = y[0] * y[0];
        let problem = CellProblem::with_exact_gbar(vec![0.0], &model, &g, 1, vec![v]);
        let decay =
            DecayFit { amplitude: 1.0, rate: 2.0 * gamma, r_squared: 0.99, skipped: false };
        let est = solve_cell_mc(
            &problem,
            &[1.3],
            default_t_max(&decay),
            100_000,
            0.004,
            &decay,
            &StreamKey::root(13),
        )
        .unwrap();
        assert!(
            (est.value[0] - 0.36).abs() < 0.02 * 0.36 + 2.0 * est.stderr[0],
            "Ψ(1.3) = {} ± {}",
            est.value[0],
            est.stderr[0]
        );
    }

    #[test]
    fn centering_invariant_holds_for_estimated_gbar() {
        let model = ou(1.0, 1.0);
        let sampler = gaussian(&model);
        let g = |x: &[f64], y: &[f64], out: &mut [f64]| out[0] = y[0] * y[0] + x[0];
        let problem =
            CellProblem::center(vec![0.5], &model, &g, 1, &sampler, 20_000, &StreamKey::root(14))
                .unwrap();
        problem.check_centering(&sampler, 20_000, &StreamKey::root(15)).unwrap();
    }

    #[test]
    fn corrector_linearity_in_target() {
        // Ψ is linear in ĝ; common random numbers per replica index make the
        // identity nearly exact
        let gamma = 1.0;
        let model = ou(gamma, 1.0);
        let (a, b) = (2.0, -0.7);
        let g1 = |_x: &[f64], y: &[f64], out: &mut [f64]| out[0] = y[0];
        let g2 = |_x: &[f64], y: &[f64], out: &mut [f64]| out[0] = y[0] * y[0] - 0.5;
        let combo = move |_x: &[f64], y: &[f64], out: &mut [f64]| {
            out[0] = a * y[0] + b * (y[0] * y[0] - 0.5)
        };
        let key = StreamKey::root(16);
        let decay = DecayFit { amplitude: 1.0, rate: gamma, r_squared: 0.99, skipped: false };
        let solve = |g: XyField<'_>| {
            let problem = CellProblem::with_exact_gbar(vec![0.0], &model, g, 1, vec![0.0]);
            solve_cell_mc(&problem, &[0.8], 8.0, 20_000, 0.01, &decay, &key).unwrap()
        };
        let p1 = solve(&g1);
        let p2 = solve(&g2);
        let pc = solve(&combo);
        let lhs = pc.value[0];
        let rhs = a * p1.value[0] + b * p2.value[0];
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn poisson_residual_examples() {
        let gamma = 2.0;
        let model = ou(gamma, 1.0);
        // analytic linear solution: residual is pure finite-difference noise
        let g = |_x: &[f64], y: &[f64], out: &mut [f64]| out[0] = y[0];
        let problem = CellProblem::with_exact_gbar(vec![0.0], &model, &g, 1, vec![0.0]);
        let corr = solve_cell_analytic_linear(&Mat::scalar(1.0), &Mat::scalar(gamma)).unwrap();
        let pts: Vec<Vec<f64>> = vec![vec![-1.0], vec![0.2], vec![1.5]];
        let rep = poisson_residual(&corr, &problem, &pts, 1e-4).unwrap();
        assert!(rep.max_abs < 1e-6, "residual {}", rep.max_abs);

        // Ψ ≡ 0 with ĝ ≡ 0
        let g0 = |_x: &[f64], _y: &[f64], out: &mut [f64]| out[0] = 0.0;
        let problem0 = CellProblem::with_exact_gbar(vec![0.0], &model, &g0, 1, vec![0.0]);
        let zero = ClosureCorrector { dim: 1, f: |_y: &[f64], out: &mut [f64]| out[0] = 0.0 };
        let rep0 = poisson_residual(&zero, &problem0, &pts, 1e-4).unwrap();
        assert_eq!(rep0.max_abs, 0.0);

        // quadratic closed form treated as a black box
        let v = 1.0 / (2.0 * gamma);
        let gq = move |_x: &[f64], y: &[f64], out: &mut [f64]| out[0] = y[0] * y[0] - v;
        let problemq = CellProblem::with_exact_gbar(vec![0.0], &model, &gq, 1, vec![0.0]);
        let quad = ClosureCorrector {
            dim: 1,
            f: move |y: &[f64], out: &mut [f64]| out[0] = (y[0] * y[0] - v) / (2.0 * gamma),
        };
        let repq = poisson_residual(&quad, &problemq, &pts, 1e-4).unwrap();
        assert!(repq.max_abs < 1e-6, "quadratic residual {}", repq.max_abs);
    }

    #[test]
    fn fluctuation_diffusion_scalar_and_diagonal() {
        // scalar OU, ĝ = y: DΨ = 1/γ, V̄ = σ²/γ²
        let (gamma, sigma) = (1.0, 2f64.sqrt());
        let model = ou(gamma, sigma);
        let dy = move |_y: &[f64], out: &mut [f64]| out[0] = 1.0 / gamma;
        let v = effective_fluctuation_diffusion(
            &dy,
            1,
            &model,
            &[0.0],
            &gaussian(&model),
            200,
            &StreamKey::root(17),
        )
        .unwrap();
        let target = sigma * sigma / (gamma * gamma);
        assert!((v.vbar[0] - target).abs() < 1e-10, "V̄ {}", v.vbar[0]);
        assert!((v.vbar_sqrt[0] - sigma / gamma).abs() < 1e-10);
        assert_eq!(v.clamped_mass, 0.0);

        // DΨ ≡ 0: zero matrix
        let dz = |_y: &[f64], out: &mut [f64]| out.fill(0.0);
        let v0 = effective_fluctuation_diffusion(
            &dz,
            1,
            &model,
            &[0.0],
            &gaussian(&model),
            50,
            &StreamKey::root(18),
        )
        .unwrap();
        assert_eq!(v0.vbar[0], 0.0);

        // 2-d diagonal benchmark: diag(σ₁²/γ₁², σ₂²/γ₂²)
        let params = OuParams { gamma: Mat::diag(&[1.0, 2.0]), sigma: Mat::diag(&[1.0, 0.5]) };
        let model2 = OuModel::new(params.clone());
        let dy2 = |_y: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            out[0] = 1.0; // DΨ = Γ^{-1} for C = I
            out[3] = 0.5;
        };
        let sampler2 = InvariantSampler::gaussian_for_ou(&params).unwrap();
        let v2 = effective_fluctuation_diffusion(
            &dy2,
            2,
            &model2,
            &[0.0],
            &sampler2,
            100,
            &StreamKey::root(19),
        )
        .unwrap();
        let m = v2.vbar_mat();
        assert!((m[(0, 0)] - 1.0).abs() < 1e-10);
        assert!((m[(1, 1)] - 0.0625).abs() < 1e-10);
        assert!(m[(0, 1)].abs() < 1e-10);
        // reconstruction contract
        let s = v2.vbar_sqrt_mat();
        assert!(s.matmul(&s.transpose()).sub(&m).max_abs() < 1e-8);
    }

    #[test]
    fn regularity_spot_checks() {
        // linear benchmark: D_yΨ constant in y (closed form); quadratic
        // corrector: derivative growth at most linear on a box
        let gamma = 2.0;
        let corr = solve_cell_analytic_linear(&Mat::scalar(1.0), &Mat::scalar(gamma)).unwrap();
        assert_eq!(corr.dy()[(0, 0)], 1.0 / gamma);
        let v = 0.25;
        let quad = move |y: f64| (y * y - v) / (2.0 * gamma);
        let fd = |y: f64| (quad(y + 1e-5) - quad(y - 1e-5)) / 2e-5;
        for y in [-3.0, -1.0, 0.0, 1.0, 3.0] {
            assert!(fd(y).abs() <= (1.0 + y.abs()) / gamma + 1e-6);
        }
    }

    #[test]
    fn finite_diff_jacobian_linear_map() {
        let f = |x: &[f64], out: &mut [f64]| {
            out[0] = 2.0 * x[0] - x[1];
            out[1] = 0.5 * x[1];
        };
        let j = finite_diff_jacobian(&f, &[0.3, -0.7], 2);
        assert!((j[(0, 0)] - 2.0).abs() < 1e-8);
        assert!((j[(0, 1)] + 1.0).abs() < 1e-8);
        assert!(j[(1, 0)].abs() < 1e-8);
        assert!((j[(1, 1)] - 0.5).abs() < 1e-8);
    }
}
