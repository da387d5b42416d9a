//! Per-subject task cost: paid human time plus language-model API calls.
//!
//! Amounts are exact rationals so that sums and scalings never drift; they
//! are rounded to cents only for display.

use std::fmt;
use std::ops::{Add, Mul};

use num_rational::Ratio;
use serde::{Serialize, Serializer};

use crate::error::{Result, SynergyError};

/// An exact, non-negative decimal quantity (dollars, minutes, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Amount(Ratio<i128>);

/// Inputs given as floating point are snapped to this many decimal places.
const FLOAT_DECIMALS: u32 = 6;

impl Amount {
    pub const ZERO: Amount = Amount(Ratio::new_raw(0, 1));

    pub fn from_integer(n: i128) -> Self {
        Amount(Ratio::from_integer(n))
    }

    /// Parses a plain decimal literal such as `16.28` or `0.06`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || SynergyError::domain(format!("not a non-negative decimal: {s:?}"));
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if (int.is_empty() && frac.is_empty())
            || !int.chars().all(|c| c.is_ascii_digit())
            || !frac.chars().all(|c| c.is_ascii_digit())
            || frac.len() > 30
        {
            return Err(bad());
        }
        let digits = format!("{int}{frac}");
        let numer: i128 = if digits.is_empty() { 0 } else { digits.parse().map_err(|_| bad())? };
        let denom = 10i128.checked_pow(frac.len() as u32).ok_or_else(bad)?;
        Ok(Amount(Ratio::new(numer, denom)))
    }

    /// Snaps a float to millionths. Negative or non-finite input is an error.
    pub fn from_f64(x: f64) -> Result<Self> {
        if !x.is_finite() || x < 0.0 {
            return Err(SynergyError::domain(format!("amount must be finite and non-negative (got {x})")));
        }
        let scale = 10i128.pow(FLOAT_DECIMALS);
        let scaled = (x * scale as f64).round();
        if scaled > 1e30 {
            return Err(SynergyError::domain(format!("amount too large: {x}")));
        }
        Ok(Amount(Ratio::new(scaled as i128, scale)))
    }

    pub fn ratio(self) -> Ratio<i128> {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    /// Rounded to the nearest cent, halves away from zero.
    pub fn cents(self) -> i128 {
        (self.0 * Ratio::from_integer(100)).round().to_integer()
    }

    fn div_int(self, d: i128) -> Amount {
        Amount(self.0 / Ratio::from_integer(d))
    }
}

impl Add for Amount {
    type Output = Amount;
    fn add(self, rhs: Amount) -> Amount {
        Amount(self.0 + rhs.0)
    }
}

impl Mul for Amount {
    type Output = Amount;
    fn mul(self, rhs: Amount) -> Amount {
        Amount(self.0 * rhs.0)
    }
}

impl fmt::Display for Amount {
    /// Dollars with two decimals.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.cents();
        write!(f, "${}.{:02}", c / 100, c % 100)
    }
}

impl Serialize for Amount {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.to_f64())
    }
}

/// Pricing of one model call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostParams {
    /// Dollars per 1000 tokens.
    pub token_price: Amount,
    /// Average completion tokens per call.
    pub tokens_per_call: u64,
    /// Prompt tokens sent with every call.
    pub prompt_tokens: u64,
}

impl CostParams {
    /// $0.06 per 1000 tokens, 66 completion tokens and a 578-token prompt.
    pub fn davinci_2022() -> Self {
        CostParams { token_price: Amount::parse("0.06").expect("literal"), tokens_per_call: 66, prompt_tokens: 578 }
    }

    pub fn per_call_cost(&self) -> Amount {
        let tokens = Amount::from_integer(i128::from(self.tokens_per_call + self.prompt_tokens));
        (tokens * self.token_price).div_int(1000)
    }
}

/// Time and API usage of one subject on one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostRecord {
    /// Dollars per hour.
    pub hourly_rate: Amount,
    pub minutes: Amount,
    pub api_calls: u64,
}

/// `rate * minutes / 60 + calls * per_call_cost`.
pub fn subject_cost(rec: &CostRecord, params: &CostParams) -> Amount {
    let human = (rec.hourly_rate * rec.minutes).div_int(60);
    let machine = Amount::from_integer(i128::from(rec.api_calls)) * params.per_call_cost();
    human + machine
}
