//! Metric transformations and ratio-of-means effect sizes.
//!
//! Every performance value is mapped onto a common "higher is better, real
//! zero" scale before ratios are taken:
//!
//! * lower-is-better metrics with floor `X_min` use `1 / (X - X_min)`;
//! * higher-is-better metrics with a ceiling `X_max` are rescaled to `[0, 1]`
//!   and mapped to odds `X' / (1 - X')`;
//! * everything else is left alone.
//!
//! The synergy ratio compares the human-computer team to the better of the
//! two single-agent baselines: `X_HC / max(X_H, X_C)`.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, SynergyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

impl Direction {
    /// Parses the short dataset spellings (`higher` / `lower`) as well as the
    /// long names.
    pub fn parse(s: &str) -> Option<Direction> {
        match s.trim().to_ascii_lowercase().as_str() {
            "higher" | "higher_better" | "higherbetter" => Some(Direction::HigherBetter),
            "lower" | "lower_better" | "lowerbetter" => Some(Direction::LowerBetter),
            _ => None,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Direction::HigherBetter => "higher",
            Direction::LowerBetter => "lower",
        }
    }
}

/// Direction of desirability and bounds of a performance metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub name: String,
    pub direction: Direction,
    pub lower_bound: f64,
    pub upper_bound: Option<f64>,
}

impl MetricSpec {
    /// Validates the bounds. A lower-is-better metric may not also carry an
    /// upper bound: the reciprocal and odds transforms are never composed.
    pub fn new(
        name: impl Into<String>,
        direction: Direction,
        lower_bound: f64,
        upper_bound: Option<f64>,
    ) -> Result<Self> {
        let name = name.into();
        if !lower_bound.is_finite() {
            return Err(SynergyError::Config(format!("metric {name:?}: lower bound must be finite")));
        }
        if let Some(up) = upper_bound {
            if !up.is_finite() || up <= lower_bound {
                return Err(SynergyError::Config(format!(
                    "metric {name:?}: upper bound {up} must be finite and exceed lower bound {lower_bound}"
                )));
            }
            if direction == Direction::LowerBetter {
                return Err(SynergyError::Config(format!(
                    "metric {name:?}: lower-is-better metrics cannot also take the upper-bound transform"
                )));
            }
        }
        Ok(MetricSpec { name, direction, lower_bound, upper_bound })
    }

    /// Higher-is-better, floor 0, no ceiling.
    pub fn unbounded(name: impl Into<String>) -> Self {
        MetricSpec { name: name.into(), direction: Direction::HigherBetter, lower_bound: 0.0, upper_bound: None }
    }

    /// Higher-is-better proportion on `[0, 1]`.
    pub fn proportion(name: impl Into<String>) -> Self {
        MetricSpec { name: name.into(), direction: Direction::HigherBetter, lower_bound: 0.0, upper_bound: Some(1.0) }
    }

    /// Lower-is-better with the given floor.
    pub fn lower_is_better(name: impl Into<String>, floor: f64) -> Self {
        MetricSpec { name: name.into(), direction: Direction::LowerBetter, lower_bound: floor, upper_bound: None }
    }

    /// Whether `x` lies within the declared bounds (inclusive).
    pub fn contains(&self, x: f64) -> bool {
        x.is_finite() && x >= self.lower_bound && self.upper_bound.is_none_or(|up| x <= up)
    }

    fn full_transform_applies(&self) -> bool {
        self.direction == Direction::LowerBetter || self.upper_bound.is_some()
    }
}

/// `1 / (x - X_min)`. Strictly decreasing on `(X_min, ∞)`.
pub fn transform_lower(x: f64, spec: &MetricSpec) -> Result<f64> {
    let gap = x - spec.lower_bound;
    if !(gap > 0.0) || !gap.is_finite() {
        return Err(SynergyError::domain(format!("lower-bound transform needs x > {} (got {x})", spec.lower_bound)));
    }
    Ok(1.0 / gap)
}

/// Odds of the value rescaled onto `[0, 1]`: `x' / (1 - x')` with
/// `x' = (x - X_min) / (X_max - X_min)`. Maps the floor to a real zero.
pub fn transform_upper(x: f64, spec: &MetricSpec) -> Result<f64> {
    let up =
        spec.upper_bound.ok_or_else(|| SynergyError::domain(format!("metric {:?} has no upper bound", spec.name)))?;
    let lo = spec.lower_bound;
    if !(x >= lo && x < up) {
        return Err(SynergyError::domain(format!("upper-bound transform needs {lo} <= x < {up} (got {x})")));
    }
    let scaled = (x - lo) / (up - lo);
    Ok(scaled / (1.0 - scaled))
}

/// Inverse of the odds map on the unit scale: `t / (1 + t)`.
pub fn odds_to_unit(t: f64) -> f64 {
    t / (1.0 + t)
}

/// Applies whichever single transform the metric calls for.
pub fn transform_pipeline(x: f64, spec: &MetricSpec) -> Result<f64> {
    match (spec.direction, spec.upper_bound) {
        (Direction::LowerBetter, None) => transform_lower(x, spec),
        (Direction::LowerBetter, Some(_)) => Err(SynergyError::Config(format!(
            "metric {:?}: lower-is-better metrics cannot also take the upper-bound transform",
            spec.name
        ))),
        (Direction::HigherBetter, Some(_)) => transform_upper(x, spec),
        (Direction::HigherBetter, None) => Ok(x),
    }
}

/// Only the desirable-lower-bound part of the pipeline: reciprocal for
/// lower-is-better metrics, identity otherwise.
pub fn transform_lower_only(x: f64, spec: &MetricSpec) -> Result<f64> {
    match spec.direction {
        Direction::LowerBetter => transform_lower(x, spec),
        Direction::HigherBetter => Ok(x),
    }
}

/// A ratio that may legitimately be infinite (positive over zero) or not
/// apply at all (no upper bound known for the odds transform).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatioValue {
    Finite(f64),
    Infinite,
    NotApplicable,
}

impl RatioValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            RatioValue::Finite(v) => Some(v),
            _ => None,
        }
    }

    /// Finite values as-is, `Infinite` as `f64::INFINITY`.
    pub fn as_f64(self) -> Option<f64> {
        match self {
            RatioValue::Finite(v) => Some(v),
            RatioValue::Infinite => Some(f64::INFINITY),
            RatioValue::NotApplicable => None,
        }
    }

    /// Synergy is a ratio strictly above one.
    pub fn is_synergy(self) -> bool {
        match self {
            RatioValue::Finite(v) => v > 1.0,
            RatioValue::Infinite => true,
            RatioValue::NotApplicable => false,
        }
    }
}

impl fmt::Display for RatioValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RatioValue::Finite(v) => write!(f, "{v}"),
            RatioValue::Infinite => f.write_str("inf"),
            RatioValue::NotApplicable => f.write_str("n/a"),
        }
    }
}

impl Serialize for RatioValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RatioValue::Finite(v) => s.serialize_f64(*v),
            RatioValue::Infinite => s.serialize_str("inf"),
            RatioValue::NotApplicable => s.serialize_str("n/a"),
        }
    }
}

impl<'de> Deserialize<'de> for RatioValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(RatioValue::Finite(v)),
            Raw::Text(t) => match t.as_str() {
                "inf" => Ok(RatioValue::Infinite),
                "n/a" => Ok(RatioValue::NotApplicable),
                other => Err(serde::de::Error::custom(format!("expected a number, \"inf\" or \"n/a\", got {other:?}"))),
            },
        }
    }
}

/// Plain ratio of two (already transformed) means.
///
/// A zero denominator yields `Infinite` when the numerator is positive and
/// `UndefinedRatio` when it is zero.
pub fn compute_rho(numerator: f64, denominator: f64) -> Result<RatioValue> {
    if !numerator.is_finite() || !denominator.is_finite() || numerator < 0.0 || denominator < 0.0 {
        return Err(SynergyError::domain(format!(
            "ratio needs finite non-negative inputs (got {numerator} / {denominator})"
        )));
    }
    if denominator == 0.0 {
        return if numerator > 0.0 { Ok(RatioValue::Infinite) } else { Err(SynergyError::UndefinedRatio) };
    }
    Ok(RatioValue::Finite(numerator / denominator))
}

/// Which performance served as the denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Baseline {
    H,
    C,
    HC,
    B,
    /// `X_H` and `X_C` tie, so either is the maximum.
    MaxHC,
}

/// Human-alone, computer-alone and team performance on one metric.
///
/// A baseline flagged impossible (the agent cannot do the task at all)
/// enters every ratio as performance zero, whatever the metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceTriple {
    pub x_h: f64,
    pub x_c: f64,
    pub x_hc: f64,
    pub metric: MetricSpec,
    #[serde(default)]
    pub impossible_h: bool,
    #[serde(default)]
    pub impossible_c: bool,
}

impl PerformanceTriple {
    pub fn new(x_h: f64, x_c: f64, x_hc: f64, metric: MetricSpec) -> Self {
        PerformanceTriple { x_h, x_c, x_hc, metric, impossible_h: false, impossible_c: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioResult {
    /// Team relative to the human-alone baseline.
    pub rho: RatioValue,
    pub rho_hat: RatioValue,
    pub rho_hat_prime: RatioValue,
    pub baseline_label: Baseline,
}

fn transformed_triple(t: &PerformanceTriple, f: impl Fn(f64, &MetricSpec) -> Result<f64>) -> Result<(f64, f64, f64)> {
    let h = if t.impossible_h { 0.0 } else { f(t.x_h, &t.metric)? };
    let c = if t.impossible_c { 0.0 } else { f(t.x_c, &t.metric)? };
    let hc = f(t.x_hc, &t.metric)?;
    Ok((h, c, hc))
}

fn synergy_ratio(h: f64, c: f64, hc: f64) -> Result<(RatioValue, Baseline)> {
    let label = if h > c {
        Baseline::H
    } else if c > h {
        Baseline::C
    } else {
        Baseline::MaxHC
    };
    Ok((compute_rho(hc, h.max(c))?, label))
}

/// Synergy ratio `X_HC / max(X_H, X_C)`.
///
/// With `transformed = false` the raw values are used and `rho_hat_prime`
/// is `NotApplicable`. With `transformed = true`, `rho_hat` takes only the
/// lower-bound transform (so it equals the raw ratio for higher-is-better
/// metrics) and `rho_hat_prime` takes the full pipeline; `rho_hat_prime` is
/// `NotApplicable` for higher-is-better metrics without a known ceiling.
pub fn compute_rho_hat(t: &PerformanceTriple, transformed: bool) -> Result<RatioResult> {
    let identity = |x: f64, _: &MetricSpec| Ok(x);
    let (h, c, hc) =
        if transformed { transformed_triple(t, transform_lower_only)? } else { transformed_triple(t, identity)? };
    let (rho_hat, baseline_label) = synergy_ratio(h, c, hc)?;
    let rho = match compute_rho(hc, h) {
        Ok(v) => v,
        Err(SynergyError::UndefinedRatio) => RatioValue::NotApplicable,
        Err(e) => return Err(e),
    };

    let rho_hat_prime = if transformed && t.metric.full_transform_applies() {
        let (h2, c2, hc2) = transformed_triple(t, transform_pipeline)?;
        synergy_ratio(h2, c2, hc2)?.0
    } else {
        RatioValue::NotApplicable
    };

    Ok(RatioResult { rho, rho_hat, rho_hat_prime, baseline_label })
}
