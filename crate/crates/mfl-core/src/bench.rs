//! Named linear benchmark scenarios with closed-form effective coefficients.
//!
//! Both scenarios couple a scalar slow variable to a scalar
//! Ornstein-Uhlenbeck fast process `dy = -(γ/τ) y dt + (σ/√τ) dW`:
//!
//! - `case1-ou`: `dx = c y dt` (fBM coefficient ≡ 0, small-noise scaling).
//!   The averaged dynamics are frozen at `x₀` and the fluctuation limit is
//!   the pure Wiener integral with variance rate `V̄ = (cσ/γ)²`.
//! - `case2-linear`: `dx = (a x + c y) dt + β x dB^H`. The averaged
//!   dynamics are `dx̄ = a x̄ dt + β x̄ dB^H` with closed form
//!   `x̄ = x₀ exp(at + βB^H_t)`, and the limit carries both the `Df z̄ dB^H`
//!   term and the corrector-driven Wiener term.
//!
//! The corrector for `ĝ = c y` is `Ψ = c y / γ` with `D_yΨ = c/γ`, giving
//! `V̄ = (cσ/γ)²` in both cases.

use crate::error::{Error, Result};
use crate::fastproc::{OuModel, OuParams};
use crate::limit::{EffectiveCoefficients, Regime};
use crate::multiscale::SlowFastSystem;

/// Scalar linear slow-fast benchmark.
#[derive(Debug, Clone, Copy)]
pub struct LinearBenchmark {
    pub regime: Regime,
    /// Slow drift slope in x.
    pub a: f64,
    /// Slow drift load on y.
    pub c: f64,
    /// fBM coefficient slope (case 2).
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub x0: f64,
    pub y0: f64,
}

impl LinearBenchmark {
    /// Pure-corrector case-1 benchmark: `f ≡ 0`, `g(x, y) = y`,
    /// OU(γ = 1, σ = √2); the limit at `t` is `N(0, 2t)`.
    pub fn case1_ou() -> Self {
        Self {
            regime: Regime::Case1,
            a: 0.0,
            c: 1.0,
            beta: 0.0,
            gamma: 1.0,
            sigma: 2f64.sqrt(),
            x0: 0.0,
            y0: 0.0,
        }
    }

    /// Linear case-2 benchmark with `f(x) = βx`.
    pub fn case2_linear() -> Self {
        Self {
            regime: Regime::Case2,
            a: -0.5,
            c: 1.0,
            beta: 0.3,
            gamma: 1.0,
            sigma: 2f64.sqrt(),
            x0: 1.0,
            y0: 0.0,
        }
    }

    pub fn fast_model(&self) -> OuModel<f64> {
        OuModel::new(OuParams::scalar(self.gamma, self.sigma))
    }

    /// `D_yΨ = c/γ` for the corrector of `ĝ = c y`.
    pub fn corrector_slope(&self) -> f64 {
        self.c / self.gamma
    }

    /// `V̄ = (cσ/γ)²`.
    pub fn vbar(&self) -> f64 {
        (self.c * self.sigma / self.gamma).powi(2)
    }

    /// Exact stationary variance `σ²/(2γ)` of the fast process.
    pub fn fast_variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.gamma)
    }

    /// Variance of the case-1 limit at time `t` (no fBM drive):
    /// `v' = 2 a v + V̄`.
    pub fn case1_limit_variance(&self, t: f64) -> f64 {
        crate::limit::limit_variance_ode(self.a, self.vbar(), t)
    }

    /// Closed-form averaged path value for case 2: `x₀ exp(at + β B^H_t)`.
    pub fn averaged_closed_form(&self, t: f64, bh: f64) -> f64 {
        self.x0 * (self.a * t + self.beta * bh).exp()
    }

    pub fn effective(&self) -> LinearEffective {
        LinearEffective {
            a: self.a,
            beta: self.beta,
            vbar_sqrt: self.vbar().sqrt(),
        }
    }

    /// Build the coupled system and hand it to `body` (the coefficient
    /// closures borrow from the stack frame).
    pub fn with_system<R>(
        &self,
        body: impl FnOnce(&SlowFastSystem<'_, OuModel<f64>>) -> R,
    ) -> R {
        let model = self.fast_model();
        let (a, c, beta) = (self.a, self.c, self.beta);
        let drift = move |x: &[f64], y: &[f64], out: &mut [f64]| out[0] = a * x[0] + c * y[0];
        match self.regime {
            Regime::Case1 => {
                let f = |_x: &[f64], _y: &[f64], out: &mut [f64]| out[0] = 0.0;
                let system = SlowFastSystem::case1(&drift, &f, &model, 1, 1);
                body(&system)
            }
            Regime::Case2 | Regime::TwoScale => {
                let f = move |x: &[f64], out: &mut [f64]| out[0] = beta * x[0];
                let system = SlowFastSystem::case2(&drift, &f, &model, 1, 1);
                body(&system)
            }
        }
    }
}

/// Closed-form effective coefficients of [`LinearBenchmark`].
#[derive(Debug, Clone, Copy)]
pub struct LinearEffective {
    pub a: f64,
    pub beta: f64,
    pub vbar_sqrt: f64,
}

impl EffectiveCoefficients for LinearEffective {
    fn slow_dim(&self) -> usize {
        1
    }

    fn fbm_dim(&self) -> usize {
        1
    }

    fn gbar(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.a * x[0];
    }

    fn dgbar(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = self.a;
    }

    fn fbar(&self, _x: &[f64], out: &mut [f64]) {
        // the case-1 benchmark has f ≡ 0, so the averaged coefficient vanishes
        out[0] = 0.0;
    }

    fn f(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.beta * x[0];
    }

    fn df_contract(&self, _x: &[f64], z: &[f64], out: &mut [f64]) {
        out[0] = self.beta * z[0];
    }

    fn vbar_sqrt(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = self.vbar_sqrt;
    }
}

/// Scenario registry exposed to the CLI and the experiment drivers.
pub fn scenario(name: &str) -> Result<LinearBenchmark> {
    match name {
        "case1-ou" => Ok(LinearBenchmark::case1_ou()),
        "case2-linear" => Ok(LinearBenchmark::case2_linear()),
        "two-scale-linear" => {
            Ok(LinearBenchmark { regime: Regime::TwoScale, ..LinearBenchmark::case2_linear() })
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown scenario '{other}' (available: {})",
            SCENARIOS.join(", ")
        ))),
    }
}

pub const SCENARIOS: [&str; 3] = ["case1-ou", "case2-linear", "two-scale-linear"];
