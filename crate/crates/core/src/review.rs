//! Systematic-review records: loading, rounding-aware audit of published
//! ratios, summary statistics and robustness subsets.
//!
//! Published tables print inputs rounded to a fixed number of decimals, so
//! an exact recomputation can disagree with a published ratio in the last
//! digit. The audit therefore recomputes each ratio over the box of inputs
//! that round to the printed values (±half a unit in the last printed
//! place) and accepts a published ratio that lies within that range widened
//! by its own output rounding (±0.005).

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SynergyError};
use crate::metrics::{compute_rho_hat, Direction, MetricSpec, PerformanceTriple, RatioValue};
use crate::stats;

/// Slack for a published ratio printed to two decimals.
pub const OUTPUT_ROUNDING: f64 = 0.005;
/// Default histogram bin width.
pub const DEFAULT_BIN_WIDTH: f64 = 0.05;

const BUNDLED: &str = include_str!("../data/review_table.csv");

pub const DATASET_HEADER: [&str; 12] = [
    "study_id",
    "task",
    "measure",
    "direction",
    "lower_bound",
    "upper_bound",
    "x_h",
    "x_c",
    "x_hc",
    "published_rho_hat",
    "published_rho_hat_prime",
    "anomaly_flag",
];

/// One experimental result from a reviewed study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub study_id: String,
    pub task: String,
    pub measure: String,
    pub metric: MetricSpec,
    pub x_h: f64,
    pub x_c: f64,
    pub x_hc: f64,
    /// Printed decimal places of `x_h`, `x_c`, `x_hc`.
    pub decimals: [u8; 3],
    pub published_rho_hat: Option<f64>,
    pub published_rho_hat_prime: Option<f64>,
    /// Printed decimal places of the two published ratios.
    pub published_decimals: [u8; 2],
    /// Curated note for rows whose published ratios are known not to match
    /// a recomputation.
    pub anomaly_flag: Option<String>,
}

impl StudyRecord {
    pub fn triple(&self) -> PerformanceTriple {
        PerformanceTriple::new(self.x_h, self.x_c, self.x_hc, self.metric.clone())
    }

    /// Rounding half-widths of the three inputs.
    pub fn half_widths(&self) -> [f64; 3] {
        self.decimals.map(|d| 0.5 * 10f64.powi(-i32::from(d)))
    }
}

fn decimals_of(s: &str) -> u8 {
    s.split_once('.').map_or(0, |(_, frac)| frac.chars().take_while(|c| c.is_ascii_digit()).count() as u8)
}

fn parse_num(s: &str, col: &str, row: usize) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| SynergyError::data(row, format!("{col}: not a number: {s:?}")))?;
    if !v.is_finite() {
        return Err(SynergyError::data(row, format!("{col}: must be finite")));
    }
    Ok(v)
}

fn parse_opt(s: &str, col: &str, row: usize) -> Result<Option<f64>> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse_num(s, col, row).map(Some)
    }
}

fn parse_row(rec: &csv::StringRecord, row: usize) -> Result<StudyRecord> {
    if rec.len() != DATASET_HEADER.len() {
        return Err(SynergyError::data(row, format!("expected {} fields, found {}", DATASET_HEADER.len(), rec.len())));
    }
    let f = |i: usize| rec.get(i).unwrap_or("").trim();
    let study_id = f(0).to_string();
    if study_id.is_empty() {
        return Err(SynergyError::data(row, "empty study_id"));
    }
    let direction = Direction::parse(f(3))
        .ok_or_else(|| SynergyError::data(row, format!("direction: expected higher/lower, got {:?}", f(3))))?;
    let lower = if f(4).is_empty() { 0.0 } else { parse_num(f(4), "lower_bound", row)? };
    let upper = parse_opt(f(5), "upper_bound", row)?;
    let metric = MetricSpec::new(f(2), direction, lower, upper).map_err(|e| SynergyError::data(row, e.to_string()))?;

    let mut xs = [0.0; 3];
    let mut decimals = [0u8; 3];
    for (k, col) in [(6, "x_h"), (7, "x_c"), (8, "x_hc")].into_iter().enumerate() {
        let raw = f(col.0);
        xs[k] = parse_num(raw, col.1, row)?;
        decimals[k] = decimals_of(raw);
        if !metric.contains(xs[k]) {
            return Err(SynergyError::data(
                row,
                format!(
                    "{} = {} lies outside [{}, {}]",
                    col.1,
                    xs[k],
                    metric.lower_bound,
                    metric.upper_bound.map_or("inf".to_string(), |u| u.to_string())
                ),
            ));
        }
    }
    let published_rho_hat = parse_opt(f(9), "published_rho_hat", row)?;
    let published_rho_hat_prime = parse_opt(f(10), "published_rho_hat_prime", row)?;
    for (v, col) in [(published_rho_hat, "published_rho_hat"), (published_rho_hat_prime, "published_rho_hat_prime")] {
        if matches!(v, Some(p) if p <= 0.0) {
            return Err(SynergyError::data(row, format!("{col} must be positive")));
        }
    }
    let flag = f(11);
    Ok(StudyRecord {
        study_id,
        task: f(1).to_string(),
        measure: f(2).to_string(),
        metric,
        x_h: xs[0],
        x_c: xs[1],
        x_hc: xs[2],
        decimals,
        published_rho_hat,
        published_rho_hat_prime,
        published_decimals: [decimals_of(f(9)), decimals_of(f(10))],
        anomaly_flag: (!flag.is_empty()).then(|| flag.to_string()),
    })
}

/// Parses and validates a review dataset. Errors carry the 1-based data row.
pub fn read_dataset<R: Read>(reader: R) -> Result<Vec<StudyRecord>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| SynergyError::data(0, e.to_string()))?;
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != DATASET_HEADER {
        return Err(SynergyError::data(0, format!("header must be {}", DATASET_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| SynergyError::data(i + 1, e.to_string()))?;
        out.push(parse_row(&rec, i + 1)?);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<StudyRecord>> {
    let f = std::fs::File::open(path.as_ref())
        .map_err(|e| SynergyError::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_dataset(f)
}

/// The 79-result review table shipped with the crate.
pub fn bundled_dataset() -> Vec<StudyRecord> {
    read_dataset(BUNDLED.as_bytes()).expect("bundled dataset is valid")
}

/// Raw text of the bundled dataset.
pub fn bundled_dataset_csv() -> &'static str {
    BUNDLED
}

/// Writes records in the dataset schema, reproducing printed precision.
pub fn write_dataset<W: Write>(writer: W, records: &[StudyRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let io = |e: csv::Error| SynergyError::Io(e.to_string());
    w.write_record(DATASET_HEADER).map_err(io)?;
    for r in records {
        let x = |v: f64, d: u8| format!("{:.*}", usize::from(d), v);
        let opt = |v: Option<f64>| v.map(|p| p.to_string()).unwrap_or_default();
        let published = |v: Option<f64>, d: u8| v.map(|p| x(p, d)).unwrap_or_default();
        w.write_record([
            r.study_id.clone(),
            r.task.clone(),
            r.measure.clone(),
            r.metric.direction.short_name().to_string(),
            r.metric.lower_bound.to_string(),
            opt(r.metric.upper_bound),
            x(r.x_h, r.decimals[0]),
            x(r.x_c, r.decimals[1]),
            x(r.x_hc, r.decimals[2]),
            published(r.published_rho_hat, r.published_decimals[0]),
            published(r.published_rho_hat_prime, r.published_decimals[1]),
            r.anomaly_flag.clone().unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Consistent,
    Anomalous,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioCheck {
    /// Recomputed from the printed inputs.
    pub recomputed: RatioValue,
    /// Range of the ratio over the input rounding box.
    pub interval_low: f64,
    pub interval_high: f64,
    pub published: Option<f64>,
    pub verdict: Verdict,
}

impl RatioCheck {
    fn not_applicable(published: Option<f64>) -> Self {
        RatioCheck {
            recomputed: RatioValue::NotApplicable,
            interval_low: f64::NAN,
            interval_high: f64::NAN,
            published,
            verdict: Verdict::NotApplicable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// 1-based data row.
    pub row: usize,
    pub study_id: String,
    pub task: String,
    pub measure: String,
    pub rho_hat: RatioCheck,
    pub rho_hat_prime: RatioCheck,
    pub verdict: Verdict,
    pub anomaly_flag: Option<String>,
}

/// Transform on the extended half-line: the floor of a lower-is-better
/// metric and the ceiling of a bounded one map to `+inf`.
fn transform_extended(x: f64, spec: &MetricSpec, full: bool) -> f64 {
    match spec.direction {
        Direction::LowerBetter => {
            let gap = x - spec.lower_bound;
            if gap <= 0.0 {
                f64::INFINITY
            } else {
                1.0 / gap
            }
        }
        Direction::HigherBetter => match (full, spec.upper_bound) {
            (true, Some(up)) => {
                let s = ((x - spec.lower_bound) / (up - spec.lower_bound)).max(0.0);
                if s >= 1.0 {
                    f64::INFINITY
                } else {
                    s / (1.0 - s)
                }
            }
            _ => x,
        },
    }
}

/// Range of `X_HC' / max(X_H', X_C')` over the rounding box. Each transform
/// is monotone in its argument, so the extremes sit at box corners.
fn ratio_interval(rec: &StudyRecord, full: bool) -> (f64, f64) {
    let spec = &rec.metric;
    let clamp = |v: f64| {
        let v = v.max(spec.lower_bound);
        spec.upper_bound.map_or(v, |u| v.min(u))
    };
    let hw = rec.half_widths();
    let centre = [rec.x_h, rec.x_c, rec.x_hc];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for corner in 0..8u8 {
        let v: Vec<f64> = (0..3)
            .map(|k| {
                let sign = if corner & (1 << k) != 0 { 1.0 } else { -1.0 };
                transform_extended(clamp(centre[k] + sign * hw[k]), spec, full)
            })
            .collect();
        let denom = v[0].max(v[1]);
        let r = v[2] / denom;
        if r.is_nan() {
            return (0.0, f64::INFINITY);
        }
        lo = lo.min(r);
        hi = hi.max(r);
    }
    (lo, hi)
}

fn check(rec: &StudyRecord, full: bool, recomputed: RatioValue, published: Option<f64>) -> RatioCheck {
    let (lo, hi) = ratio_interval(rec, full);
    let verdict = match published {
        None => Verdict::NotApplicable,
        Some(p) if p >= lo - OUTPUT_ROUNDING && p <= hi + OUTPUT_ROUNDING => Verdict::Consistent,
        Some(_) => Verdict::Anomalous,
    };
    RatioCheck { recomputed, interval_low: lo, interval_high: hi, published, verdict }
}

/// Recomputes `ρ̂` (lower-bound transform only) and `ρ̂'` (full pipeline)
/// and compares them with the published values. `row` is copied into the
/// report.
pub fn audit_row(rec: &StudyRecord, row: usize) -> Result<AuditReport> {
    let ratios = compute_rho_hat(&rec.triple(), true)?;
    let rho_hat = check(rec, false, ratios.rho_hat, rec.published_rho_hat);
    let rho_hat_prime = match ratios.rho_hat_prime {
        RatioValue::NotApplicable => RatioCheck::not_applicable(rec.published_rho_hat_prime),
        v => check(rec, true, v, rec.published_rho_hat_prime),
    };
    let verdicts = [rho_hat.verdict, rho_hat_prime.verdict];
    let verdict = if verdicts.contains(&Verdict::Anomalous) {
        Verdict::Anomalous
    } else if verdicts.contains(&Verdict::Consistent) {
        Verdict::Consistent
    } else {
        Verdict::NotApplicable
    };
    Ok(AuditReport {
        row,
        study_id: rec.study_id.clone(),
        task: rec.task.clone(),
        measure: rec.measure.clone(),
        rho_hat,
        rho_hat_prime,
        verdict,
        anomaly_flag: rec.anomaly_flag.clone(),
    })
}

pub fn audit_dataset(records: &[StudyRecord]) -> Result<Vec<AuditReport>> {
    records.iter().enumerate().map(|(i, r)| audit_row(r, i + 1)).collect()
}

/// Which ratio a summary is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Published synergy ratio with the lower-bound transform applied: for
    /// lower-is-better metrics this is the table's transformed column (no
    /// upper transform applies to them), otherwise the `ρ̂` column.
    PublishedRhoHat,
    /// The published `ρ̂` column exactly as printed.
    PublishedRhoHatAsPrinted,
    RecomputedRhoHat,
    RecomputedRhoHatPrime,
}

impl Selection {
    pub fn value(self, rec: &StudyRecord) -> Option<f64> {
        let recomputed = || compute_rho_hat(&rec.triple(), true).ok();
        match self {
            Selection::PublishedRhoHat => match rec.metric.direction {
                Direction::LowerBetter => {
                    rec.published_rho_hat_prime.or_else(|| recomputed().and_then(|r| r.rho_hat.as_f64()))
                }
                Direction::HigherBetter => rec.published_rho_hat,
            },
            Selection::PublishedRhoHatAsPrinted => rec.published_rho_hat,
            Selection::RecomputedRhoHat => recomputed().and_then(|r| r.rho_hat.as_f64()),
            Selection::RecomputedRhoHatPrime => recomputed().and_then(|r| r.rho_hat_prime.as_f64()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: usize,
}

impl HistogramBin {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.bin_low + self.bin_high)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSummary {
    pub selection: Selection,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub synergy_count: usize,
    /// Share of ratios strictly greater than one.
    pub synergy_fraction: f64,
    pub min: f64,
    pub max: f64,
    pub bin_width: f64,
    /// Bins are `[low, high)`; infinite ratios are counted in `n_infinite`
    /// instead.
    pub histogram: Vec<HistogramBin>,
    pub n_infinite: usize,
}

impl ReviewSummary {
    /// Two-column TSV: bin midpoint and count.
    pub fn histogram_tsv(&self) -> String {
        let mut s = String::from("bin_mid\tcount\n");
        for b in &self.histogram {
            s.push_str(&format!("{}\t{}\n", round_edge(b.midpoint()), b.count));
        }
        s
    }
}

fn round_edge(x: f64) -> f64 {
    (x * 1e10).round() / 1e10
}

fn histogram(values: &[f64], width: f64) -> Vec<HistogramBin> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Vec::new();
    }
    // The epsilon keeps values printed on a bin edge (0.95 / 0.05) in the
    // upper bin despite binary representation.
    let index = |v: f64| (v / width + 1e-9).floor() as i64;
    let first = finite.iter().map(|&v| index(v)).min().unwrap_or(0);
    let last = finite.iter().map(|&v| index(v)).max().unwrap_or(0);
    let mut bins: Vec<HistogramBin> = (first..=last)
        .map(|k| HistogramBin {
            bin_low: round_edge(k as f64 * width),
            bin_high: round_edge((k + 1) as f64 * width),
            count: 0,
        })
        .collect();
    for v in finite {
        bins[(index(v) - first) as usize].count += 1;
    }
    bins
}

/// Summary statistics of the selected ratio over `records`. Records without
/// a value for the selection are skipped.
pub fn summarize(records: &[StudyRecord], which: Selection, bin_width: f64) -> Result<ReviewSummary> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(SynergyError::domain(format!("bin width must be positive (got {bin_width})")));
    }
    let values: Vec<f64> = records.iter().filter_map(|r| which.value(r)).collect();
    if values.is_empty() {
        return Err(SynergyError::domain("nothing to summarise"));
    }
    let n = values.len();
    let synergy_count = values.iter().filter(|&&v| v > 1.0).count();
    Ok(ReviewSummary {
        selection: which,
        n,
        mean: stats::mean(&values).unwrap_or(f64::NAN),
        median: stats::median(&values).unwrap_or(f64::NAN),
        synergy_count,
        synergy_fraction: synergy_count as f64 / n as f64,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        bin_width,
        histogram: histogram(&values, bin_width),
        n_infinite: values.iter().filter(|v| v.is_infinite()).count(),
    })
}

/// One record per study: the one with the highest published synergy ratio
/// (first in file order on ties). Studies appear in order of first mention.
pub fn subset_top_per_study(records: &[StudyRecord]) -> Vec<StudyRecord> {
    let key = |r: &StudyRecord| {
        Selection::PublishedRhoHat
            .value(r)
            .or_else(|| Selection::RecomputedRhoHat.value(r))
            .unwrap_or(f64::NEG_INFINITY)
    };
    let mut order: Vec<&str> = Vec::new();
    let mut best: HashMap<&str, (f64, &StudyRecord)> = HashMap::new();
    for r in records {
        let v = key(r);
        match best.get_mut(r.study_id.as_str()) {
            None => {
                order.push(&r.study_id);
                best.insert(&r.study_id, (v, r));
            }
            Some(slot) if v > slot.0 => *slot = (v, r),
            Some(_) => {}
        }
    }
    order.into_iter().map(|id| best[id].1.clone()).collect()
}

pub fn subset_by_direction(records: &[StudyRecord], direction: Direction) -> Vec<StudyRecord> {
    records.iter().filter(|r| r.metric.direction == direction).cloned().collect()
}
