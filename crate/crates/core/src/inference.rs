//! Confidence intervals for a ratio of two means, the one-sample proportion
//! test and the accuracy threshold check.
//!
//! With `v_x = s_x²/n_x`, `v_y = s_y²/n_y` and the paired covariance term
//! `c = r·s_x·s_y/n` (zero for independent samples), the three interval
//! constructions are:
//!
//! * **Fieller**: `{ρ : (x̄ − ρȳ)² ≤ z²(v_x + ρ²v_y − 2ρc)}`, bounded only when
//!   `ȳ² > z²v_y`;
//! * **Delta**: `ρ̂ ± z·ρ̂·√(v_x/x̄² + v_y/ȳ² − 2c/(x̄ȳ))`;
//! * **Recommended**: the same variance on the log scale, back-transformed,
//!   so the interval is positive and log-symmetric.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Result, SynergyError};

/// Summary statistics of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl SampleSummary {
    pub fn new(n: usize, mean: f64, sd: f64) -> Result<Self> {
        let s = SampleSummary { n, mean, sd };
        s.validate()?;
        Ok(s)
    }

    /// Mean and sample standard deviation (n − 1 denominator).
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(SynergyError::domain("need at least two observations"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SynergyError::domain("observations must be finite"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        Self::new(values.len(), mean, (ss / (n - 1.0)).sqrt())
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(SynergyError::domain(format!("n must be >= 2 (got {})", self.n)));
        }
        if !(self.sd >= 0.0) || !self.sd.is_finite() || !self.mean.is_finite() {
            return Err(SynergyError::domain(format!(
                "need finite mean and sd >= 0 (got mean {}, sd {})",
                self.mean, self.sd
            )));
        }
        Ok(())
    }

    fn var_of_mean(&self) -> f64 {
        self.sd * self.sd / self.n as f64
    }
}

/// Pearson correlation of paired observations.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(SynergyError::domain("paired samples need equal lengths >= 2"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    Fieller,
    Delta,
    Recommended,
}

impl CiMethod {
    pub const ALL: [CiMethod; 3] = [CiMethod::Fieller, CiMethod::Delta, CiMethod::Recommended];
}

/// Paired designs carry the correlation between the paired measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Design {
    Paired { r: f64 },
    Independent,
}

/// Source of the critical value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Critical {
    #[default]
    Normal,
    /// Student t with `n_x + n_y − 2` degrees of freedom (`n − 1` if paired).
    StudentT,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioCI {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub method: CiMethod,
    pub design: Design,
    pub level: f64,
}

impl RatioCI {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Two-sided standard normal critical value for `level`.
pub fn normal_critical(level: f64) -> Result<f64> {
    check_level(level)?;
    let n = Normal::standard();
    Ok(n.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(SynergyError::domain(format!("level must lie in (0, 1) (got {level})")));
    }
    Ok(())
}

fn critical_value(level: f64, critical: Critical, df: f64) -> Result<f64> {
    check_level(level)?;
    match critical {
        Critical::Normal => normal_critical(level),
        Critical::StudentT => {
            let t = StudentsT::new(0.0, 1.0, df).map_err(|e| SynergyError::domain(format!("t distribution: {e}")))?;
            Ok(t.inverse_cdf(1.0 - (1.0 - level) / 2.0))
        }
    }
}

/// Clamps round-off negatives of a quantity that is non-negative in exact
/// arithmetic; genuinely negative values are a domain error.
fn nonneg(value: f64, scale: f64, what: &str) -> Result<f64> {
    if value >= 0.0 {
        Ok(value)
    } else if value >= -1e-12 * scale.abs().max(f64::MIN_POSITIVE) {
        Ok(0.0)
    } else {
        Err(SynergyError::domain(format!("negative {what} ({value})")))
    }
}

/// Interval for `numerator.mean / denominator.mean`.
pub fn ratio_ci(
    numerator: &SampleSummary,
    denominator: &SampleSummary,
    method: CiMethod,
    design: Design,
    level: f64,
) -> Result<RatioCI> {
    ratio_ci_with(numerator, denominator, method, design, level, Critical::Normal)
}

pub fn ratio_ci_with(
    numerator: &SampleSummary,
    denominator: &SampleSummary,
    method: CiMethod,
    design: Design,
    level: f64,
    critical: Critical,
) -> Result<RatioCI> {
    numerator.validate()?;
    denominator.validate()?;
    if !(denominator.mean > 0.0) || !(numerator.mean > 0.0) {
        return Err(SynergyError::domain(format!(
            "ratio intervals need positive means (got {} / {})",
            numerator.mean, denominator.mean
        )));
    }
    let (cov, df) = match design {
        Design::Paired { r } => {
            if numerator.n != denominator.n {
                return Err(SynergyError::domain(format!(
                    "paired design needs equal n (got {} and {})",
                    numerator.n, denominator.n
                )));
            }
            if !(-1.0..=1.0).contains(&r) {
                return Err(SynergyError::domain(format!("correlation must lie in [-1, 1] (got {r})")));
            }
            (r * numerator.sd * denominator.sd / numerator.n as f64, numerator.n as f64 - 1.0)
        }
        Design::Independent => (0.0, (numerator.n + denominator.n) as f64 - 2.0),
    };
    let z = critical_value(level, critical, df)?;

    let (x, y) = (numerator.mean, denominator.mean);
    let (vx, vy) = (numerator.var_of_mean(), denominator.var_of_mean());
    let estimate = x / y;

    let rel_scale = vx / (x * x) + vy / (y * y);
    let rel_var = nonneg(rel_scale - 2.0 * cov / (x * y), rel_scale, "relative variance")?;

    let (lower, upper) = match method {
        CiMethod::Delta => {
            let half = z * estimate * rel_var.sqrt();
            (estimate - half, estimate + half)
        }
        CiMethod::Recommended => {
            let half = z * rel_var.sqrt();
            let centre = estimate.ln();
            ((centre - half).exp(), (centre + half).exp())
        }
        CiMethod::Fieller => fieller_roots(x, y, vx, vy, cov, z)?,
    };

    Ok(RatioCI { estimate, lower, upper, method, design, level })
}

/// Roots of `a ρ² − 2bρ + c = 0` bounding Fieller's set.
fn fieller_roots(x: f64, y: f64, vx: f64, vy: f64, cov: f64, z: f64) -> Result<(f64, f64)> {
    let z2 = z * z;
    let a = y * y - z2 * vy;
    if !(a > 0.0) {
        return Err(SynergyError::UnboundedInterval);
    }
    let b = x * y - z2 * cov;
    let c = x * x - z2 * vx;
    let disc = nonneg(b * b - a * c, b * b, "Fieller discriminant")?;
    let root = disc.sqrt();
    // Stable form: one root from q/a, the other from c/q.
    let q = if b >= 0.0 { b + root } else { b - root };
    if q == 0.0 {
        return Ok((0.0, 0.0));
    }
    let r1 = q / a;
    let r2 = c / q;
    Ok((r1.min(r2), r1.max(r2)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProportionTestResult {
    pub p_hat: f64,
    pub z: f64,
    /// Upper-tail probability `P(Z ≥ z)`.
    pub p_value: f64,
}

/// One-sample z test of `H1: p > p0`, no continuity correction.
pub fn proportion_test(successes: u64, n: u64, p0: f64) -> Result<ProportionTestResult> {
    if n == 0 {
        return Err(SynergyError::domain("proportion test needs n >= 1"));
    }
    if successes > n {
        return Err(SynergyError::domain(format!("successes ({successes}) exceed n ({n})")));
    }
    proportion_z(successes as f64 / n as f64, n, p0)
}

/// Same test from an already-computed sample proportion.
pub fn proportion_z(p_hat: f64, n: u64, p0: f64) -> Result<ProportionTestResult> {
    if n == 0 {
        return Err(SynergyError::domain("proportion test needs n >= 1"));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(SynergyError::domain(format!("p0 must lie in (0, 1) (got {p0})")));
    }
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(SynergyError::domain(format!("p_hat must lie in [0, 1] (got {p_hat})")));
    }
    let z = (p_hat - p0) / (p0 * (1.0 - p0) / n as f64).sqrt();
    let p_value = Normal::standard().sf(z);
    Ok(ProportionTestResult { p_hat, z, p_value })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCheck {
    pub proportion: f64,
    pub pass: bool,
}

/// Share of successes and whether it strictly exceeds `threshold`.
pub fn accuracy_check(success_flags: &[bool], threshold: f64) -> Result<AccuracyCheck> {
    if success_flags.is_empty() {
        return Err(SynergyError::domain("accuracy check needs at least one flag"));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(SynergyError::domain(format!("threshold must lie in (0, 1) (got {threshold})")));
    }
    let hits = success_flags.iter().filter(|&&f| f).count();
    let proportion = hits as f64 / success_flags.len() as f64;
    Ok(AccuracyCheck { proportion, pass: proportion > threshold })
}
