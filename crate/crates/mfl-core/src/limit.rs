//! Limiting fluctuation dynamics.
//!
//! Three regimes share one linear Young-Itô equation along the averaged path:
//!
//! ```text
//! case 1:    dz̄ = Dḡ(x̄) z̄ dt + f̄(x̄) dB^H        + V̄^{1/2}(x̄) dŴ
//! case 2:    dz̄ = Dḡ(x̄) z̄ dt + (Df(x̄) z̄) dB^H  + V̄^{1/2}(x̄) dŴ
//! two-scale: dz̄ = Dḡ(x̄) z̄ dt + (Df(x̄) z̄) dB^H                  (no Ŵ)
//! ```
//!
//! `B^H` is the realization that produced `x̄` when coupling is requested;
//! `Ŵ` is always fresh and independent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::FbmPath;
use crate::grid::Path;
use crate::stats::{ks_distance, KsReference, KsResult};
use crate::stream::{run_replicas, StreamKey};

/// Scaling regime of the fluctuation limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Case1,
    Case2,
    TwoScale,
}

/// Effective coefficient fields evaluated along the averaged path. All
/// matrices are row-major.
pub trait EffectiveCoefficients: Sync {
    fn slow_dim(&self) -> usize;
    fn fbm_dim(&self) -> usize;
    /// `ḡ(x)`, length n.
    fn gbar(&self, x: &[f64], out: &mut [f64]);
    /// `Dḡ(x)`, n × n.
    fn dgbar(&self, x: &[f64], out: &mut [f64]);
    /// `f̄(x)`, n × d (case-1 limit drive).
    fn fbar(&self, x: &[f64], out: &mut [f64]);
    /// Slow fBM coefficient `f(x)`, n × d (case-2 averaged dynamics).
    fn f(&self, x: &[f64], out: &mut [f64]);
    /// Contraction `(Df(x) z)`, n × d (case-2 limit drive).
    fn df_contract(&self, x: &[f64], z: &[f64], out: &mut [f64]);
    /// `V̄^{1/2}(x)`, n × n.
    fn vbar_sqrt(&self, x: &[f64], out: &mut [f64]);
}

/// Limit dynamics bound to an averaged path.
pub struct LimitSpec<'a, E: ?Sized> {
    pub eff: &'a E,
    pub xbar: &'a Path<f64>,
    pub regime: Regime,
}

/// Euler path of the limiting linear Young-Itô SDE with a fresh independent
/// `Ŵ` drawn from `w_key`. `z̄` starts from `z0` (zero by default in the
/// experiments, since `x^ε` and `x̄` share the initial point).
pub fn simulate_limit<E: EffectiveCoefficients + ?Sized>(
    spec: &LimitSpec<'_, E>,
    fbm: &FbmPath<f64>,
    w_key: &StreamKey,
    z0: &[f64],
) -> Result<Path<f64>> {
    let n = spec.eff.slow_dim();
    let grid = *spec.xbar.grid();
    let wiener = crate::fbm::sample_bm(grid, n, &w_key.child("wiener-hat-drive"));
    simulate_limit_with_wiener(spec, fbm, &wiener, z0)
}

/// Same dynamics driven by a supplied Wiener path (used by the coupled
/// comparison, where `Ŵ` is the aggregated Brownian record of the fast
/// process that produced `z^ε`).
pub fn simulate_limit_with_wiener<E: EffectiveCoefficients + ?Sized>(
    spec: &LimitSpec<'_, E>,
    fbm: &FbmPath<f64>,
    wiener: &Path<f64>,
    z0: &[f64],
) -> Result<Path<f64>> {
    let n = spec.eff.slow_dim();
    let d = spec.eff.fbm_dim();
    if z0.len() != n {
        return Err(Error::DimensionMismatch("limit initial state".into()));
    }
    if spec.xbar.dim() != n {
        return Err(Error::DimensionMismatch("averaged path dimension".into()));
    }
    if fbm.grid() != spec.xbar.grid() {
        return Err(Error::GridMismatch("fBM grid vs averaged path grid".into()));
    }
    if fbm.dim() != d {
        return Err(Error::DimensionMismatch("fBM driver dimension".into()));
    }
    if wiener.grid() != spec.xbar.grid() || wiener.dim() != n {
        return Err(Error::GridMismatch("Wiener drive grid/dimension".into()));
    }
    let grid = *spec.xbar.grid();
    let dt = grid.dt();

    let mut z = z0.to_vec();
    let mut dg = vec![0.0; n * n];
    let mut drive = vec![0.0; n * d];
    let mut vs = vec![0.0; n * n];
    let mut noise = vec![0.0; n];
    let mut values = vec![0.0; grid.len() * n];
    values[..n].copy_from_slice(z0);

    for i in 0..grid.steps() {
        let x = spec.xbar.value(i);
        spec.eff.dgbar(x, &mut dg);
        match spec.regime {
            Regime::Case1 => spec.eff.fbar(x, &mut drive),
            Regime::Case2 | Regime::TwoScale => spec.eff.df_contract(x, &z, &mut drive),
        }
        let has_wiener = spec.regime != Regime::TwoScale;
        if has_wiener {
            spec.eff.vbar_sqrt(x, &mut vs);
            let (wa, wb) = (wiener.value(i), wiener.value(i + 1));
            for (k, nz) in noise.iter_mut().enumerate() {
                *nz = wb[k] - wa[k];
            }
        }
        let (ba, bb) = (fbm.value(i), fbm.value(i + 1));
        let z_old = z.clone();
        for r in 0..n {
            let mut acc = z_old[r];
            for c in 0..n {
                acc += dg[r * n + c] * z_old[c] * dt;
            }
            for c in 0..d {
                acc += drive[r * d + c] * (bb[c] - ba[c]);
            }
            if has_wiener {
                for c in 0..n {
                    acc += vs[r * n + c] * noise[c];
                }
            }
            z[r] = acc;
        }
        if !crate::linalg::norm2(&z).is_finite() {
            return Err(Error::BlowUp { step: i + 1, norm: f64::NAN });
        }
        values[(i + 1) * n..(i + 2) * n].copy_from_slice(&z);
    }
    Path::new(grid, n, values)
}

/// Closed-form variance of the scalar case-1 limit with constant
/// coefficients and no fBM drive: `v' = 2 a v + V̄`, `v(0) = 0`, so
/// `v(t) = V̄ (e^{2at} - 1)/(2a)` with the `a → 0` limit `V̄ t`.
pub fn limit_variance_ode(a: f64, vbar: f64, t: f64) -> f64 {
    let x = 2.0 * a * t;
    if x.abs() < 1e-12 {
        vbar * t * (1.0 + 0.5 * x)
    } else {
        vbar * x.exp_m1() / (2.0 * a)
    }
}

/// Report of the weak-uniqueness probe: two independently seeded limit
/// ensembles compared in law.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub ks: KsResult,
    pub n_mc: usize,
}

/// Generate two limit ensembles from disjoint master keys (fresh `B^H`, `x̄`
/// and `Ŵ` per replica) and compare terminal marginals componentwise; the
/// worst component is reported with a Bonferroni-adjusted level.
pub fn weak_uniqueness_probe<E, FX>(
    eff: &E,
    regime: Regime,
    make_xbar_and_fbm: FX,
    z0: &[f64],
    n_mc: usize,
    key_a: &StreamKey,
    key_b: &StreamKey,
    significance: f64,
) -> Result<UniquenessReport>
where
    E: EffectiveCoefficients + ?Sized,
    FX: Fn(&StreamKey) -> Result<(Path<f64>, FbmPath<f64>)> + Sync,
{
    let n = eff.slow_dim();
    let run = |key: &StreamKey| -> Result<Vec<Vec<f64>>> {
        let out: Vec<Result<Vec<f64>>> = run_replicas(key, n_mc, |_, k| {
            let (xbar, fbm) = make_xbar_and_fbm(&k)?;
            let spec = LimitSpec { eff, xbar: &xbar, regime };
            let z = simulate_limit(&spec, &fbm, &k.child("wiener-hat"), z0)?;
            Ok(z.terminal().to_vec())
        });
        out.into_iter().collect()
    };
    let a = run(key_a)?;
    let b = run(key_b)?;
    let level = significance / n as f64;
    let mut worst: Option<KsResult> = None;
    for c in 0..n {
        let ac: Vec<f64> = a.iter().map(|v| v[c]).collect();
        let bc: Vec<f64> = b.iter().map(|v| v[c]).collect();
        let r = ks_distance(&ac, KsReference::Sample(&bc), level)?;
        if worst.as_ref().map_or(true, |w| r.statistic > w.statistic) {
            worst = Some(r);
        }
    }
    Ok(UniquenessReport { ks: worst.expect("n >= 1"), n_mc })
}
