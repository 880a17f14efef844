//! Ensemble statistics and quantitative verdicts: Kolmogorov-Smirnov
//! distances, moment summaries with standard errors and log-log rate fits.
//!
//! Every verdict carries its threshold and the sample sizes that produced it.

pub mod experiments;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Replica values (terminal states or path functionals) with experiment
/// metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ensemble {
    /// replicas × components, row-major.
    pub values: Vec<f64>,
    pub components: usize,
    pub eps: Option<f64>,
    pub delta: Option<f64>,
    pub regime: String,
    pub master_seed: u64,
    pub replicas: usize,
    pub grid_steps: usize,
    pub horizon: f64,
}

impl Ensemble {
    pub fn component(&self, k: usize) -> Vec<f64> {
        assert!(k < self.components);
        (0..self.replicas).map(|i| self.values[i * self.components + k]).collect()
    }
}

/// Moment summary of a scalar sample.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    /// Standard error of the mean: sample std / sqrt(n).
    pub stderr: f64,
}

pub fn moments(xs: &[f64]) -> Result<Moments> {
    if xs.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = xs.len();
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for &x in xs {
        let d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let variance = if n > 1 { m2 * nf / (nf - 1.0) } else { 0.0 };
    let sd = m2.sqrt();
    let skewness = if sd > 0.0 { m3 / (sd * sd * sd) } else { 0.0 };
    let kurtosis = if m2 > 0.0 { m4 / (m2 * m2) } else { 0.0 };
    Ok(Moments { n, mean, variance, skewness, kurtosis, stderr: variance.sqrt() / nf.sqrt() })
}

/// Reference distribution for a one-sample KS comparison.
pub enum KsReference<'a> {
    Sample(&'a [f64]),
    /// Analytic CDF.
    Cdf(&'a dyn Fn(f64) -> f64),
}

/// KS statistic together with the asymptotic threshold at the configured
/// significance level.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub threshold: f64,
    pub significance: f64,
    pub n_a: usize,
    pub n_b: Option<usize>,
    pub pass: bool,
}

/// Default significance level for KS verdicts.
pub const KS_DEFAULT_SIGNIFICANCE: f64 = 0.01;

/// Kolmogorov asymptotic critical coefficient `sqrt(-ln(α/2) / 2)`.
fn ks_coefficient(alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt()
}

/// Sup-norm CDF distance between a sample and a reference (two-sample or
/// analytic), with the asymptotic pass threshold.
pub fn ks_distance(a: &[f64], b: KsReference<'_>, significance: f64) -> Result<KsResult> {
    if a.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut sa: Vec<f64> = a.to_vec();
    sa.sort_by(|x, y| x.total_cmp(y));
    let c = ks_coefficient(significance);
    match b {
        KsReference::Sample(b) => {
            if b.is_empty() {
                return Err(Error::EmptySample);
            }
            let mut sb: Vec<f64> = b.to_vec();
            sb.sort_by(|x, y| x.total_cmp(y));
            let (na, nb) = (sa.len(), sb.len());
            let mut stat: f64 = 0.0;
            let (mut i, mut j) = (0usize, 0usize);
            while i < na && j < nb {
                let x = sa[i].min(sb[j]);
                while i < na && sa[i] <= x {
                    i += 1;
                }
                while j < nb && sb[j] <= x {
                    j += 1;
                }
                stat = stat.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
            }
            let threshold = c * ((na + nb) as f64 / (na as f64 * nb as f64)).sqrt();
            Ok(KsResult {
                statistic: stat,
                threshold,
                significance,
                n_a: na,
                n_b: Some(nb),
                pass: stat < threshold,
            })
        }
        KsReference::Cdf(cdf) => {
            let n = sa.len() as f64;
            let mut stat: f64 = 0.0;
            for (i, &x) in sa.iter().enumerate() {
                let f = cdf(x);
                stat = stat.max((f - i as f64 / n).abs());
                stat = stat.max(((i + 1) as f64 / n - f).abs());
            }
            let threshold = c / n.sqrt();
            Ok(KsResult {
                statistic: stat,
                threshold,
                significance,
                n_a: sa.len(),
                n_b: None,
                pass: stat < threshold,
            })
        }
    }
}

/// Standard normal CDF with mean `mu` and standard deviation `sd`.
pub fn normal_cdf(mu: f64, sd: f64) -> impl Fn(f64) -> f64 {
    let dist = Normal::new(mu, sd).expect("valid normal parameters");
    move |x| dist.cdf(x)
}

/// Log-log least-squares rate fit `error ≈ C ε^slope`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_stderr: f64,
    /// 95% confidence interval for the slope.
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub points: usize,
}

pub fn fit_rate(eps: &[f64], errors: &[f64]) -> Result<RateFit> {
    if eps.len() != errors.len() {
        return Err(Error::DimensionMismatch("eps and error lists differ in length".into()));
    }
    if eps.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least 3 points, got {}",
            eps.len()
        )));
    }
    if eps.iter().chain(errors).any(|&v| v <= 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument("rate fit needs positive finite entries".into()));
    }
    let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::Degenerate("all abscissae equal in rate fit".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut rss = 0.0;
    for (&x, &y) in xs.iter().zip(&ys) {
        let r = y - intercept - slope * x;
        rss += r * r;
    }
    let r_squared = if syy > 0.0 { 1.0 - rss / syy } else { 1.0 };
    let dof = (xs.len() - 2).max(1) as f64;
    let slope_stderr = (rss / dof / sxx).sqrt();
    let tq = if xs.len() > 2 {
        StudentsT::new(0.0, 1.0, dof).expect("valid dof").inverse_cdf(0.975)
    } else {
        // dof clamp keeps the CI finite on the minimal 3-point fit
        12.706
    };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        slope_stderr,
        ci_lower: slope - tq * slope_stderr,
        ci_upper: slope + tq * slope_stderr,
        points: xs.len(),
    })
}

/// One verdict row of a convergence report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// `"<"` or `">"`: how the value must relate to the threshold to pass.
    pub direction: String,
    pub pass: bool,
    pub samples: usize,
}

impl Verdict {
    pub fn below(name: &str, value: f64, threshold: f64, samples: usize) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            direction: "<".into(),
            pass: value < threshold,
            samples,
        }
    }

    pub fn above(name: &str, value: f64, threshold: f64, samples: usize) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            direction: ">".into(),
            pass: value > threshold,
            samples,
        }
    }
}
