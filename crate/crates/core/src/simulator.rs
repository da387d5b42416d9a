//! Synthetic two-task experiments from the multiplicative performance model
//! `s_ij = β · a_i / d_j · f^C_ij · g^O_ij · e_ij`, and Monte-Carlo recovery
//! studies for the synergy estimators.
//!
//! Ability `a_i` and error `e_ij` are lognormal, so `ln s` is exactly
//! Gaussian and the random-intercept model is correctly specified.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SynergyError};
use crate::inference::{pearson_r, ratio_ci, CiMethod, Design, SampleSummary};
use crate::regression::{fit_lmm, fit_ols, FitMethod, LongRecord, RegressionFit};
use crate::stats::compensated_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyDesign {
    /// Every subject does one task in each condition.
    WithinSubjectCrossover,
    /// Every subject does both tasks in a single condition.
    BetweenSubjects,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_subjects: usize,
    /// Baseline speed β.
    pub beta: f64,
    pub task_difficulty: (f64, f64),
    /// Facilitation `f` of the computer-assisted condition.
    pub condition_effect: f64,
    /// Effect `g` of doing a task in the second position.
    pub order_effect: f64,
    pub ability_log_sd: f64,
    pub error_log_sd: f64,
    pub design: StudyDesign,
    pub base_seed: u64,
}

impl Default for SimConfig {
    /// A study shaped like the programming experiment: 97 subjects and a
    /// 27% speed-up.
    fn default() -> Self {
        SimConfig {
            n_subjects: 97,
            beta: 40.0,
            task_difficulty: (1.0, 1.0),
            condition_effect: 1.27,
            order_effect: 1.0,
            ability_log_sd: 0.2,
            error_log_sd: 0.3,
            design: StudyDesign::WithinSubjectCrossover,
            base_seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("beta", self.beta),
            ("task_difficulty.0", self.task_difficulty.0),
            ("task_difficulty.1", self.task_difficulty.1),
            ("condition_effect", self.condition_effect),
            ("order_effect", self.order_effect),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SynergyError::Config(format!("{name} must be positive and finite (got {v})")));
            }
        }
        for (name, v) in [("ability_log_sd", self.ability_log_sd), ("error_log_sd", self.error_log_sd)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SynergyError::Config(format!("{name} must be non-negative and finite (got {v})")));
            }
        }
        if self.n_subjects < 2 {
            return Err(SynergyError::Config(format!("n_subjects must be at least 2 (got {})", self.n_subjects)));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig =
            serde_json::from_str(text).map_err(|e| SynergyError::Config(format!("invalid config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| SynergyError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }
}

/// Seed for replicate `index`, a SplitMix64 mix of `(base_seed, index)`.
pub fn replicate_seed(base_seed: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(base_seed.wrapping_add(mix(index.wrapping_add(0x9E37_79B9_7F4A_7C15))))
}

/// Long-format records for one simulated study, ordered by subject then
/// position.
///
/// Subjects are split across four counterbalancing cells (which task gets
/// the computer condition, or which condition in the between-subjects
/// design, crossed with which task comes first) as evenly as possible, with
/// the assignment shuffled by the seed.
pub fn generate(config: &SimConfig) -> Result<Vec<LongRecord>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.base_seed);
    let mut cells: Vec<u8> = (0..config.n_subjects).map(|i| (i % 4) as u8).collect();
    cells.shuffle(&mut rng);

    let width = config.n_subjects.to_string().len().max(3);
    let mut out = Vec::with_capacity(2 * config.n_subjects);
    for (i, &cell) in cells.iter().enumerate() {
        let z_a: f64 = StandardNormal.sample(&mut rng);
        let a = (config.ability_log_sd * z_a).exp();
        let first_task = (cell >> 1) & 1;
        let mut obs = Vec::with_capacity(2);
        for task in 0..2u8 {
            let z_e: f64 = StandardNormal.sample(&mut rng);
            let e = (config.error_log_sd * z_e).exp();
            let condition = match config.design {
                StudyDesign::WithinSubjectCrossover => u8::from(task == (cell & 1)),
                StudyDesign::BetweenSubjects => cell & 1,
            };
            let order = u8::from(task != first_task);
            let d = if task == 0 { config.task_difficulty.0 } else { config.task_difficulty.1 };
            let f = if condition == 1 { config.condition_effect } else { 1.0 };
            let g = if order == 1 { config.order_effect } else { 1.0 };
            let outcome = config.beta * a / d * f * g * e;
            obs.push(LongRecord::new(format!("s{:0width$}", i + 1), condition, task, order, outcome));
        }
        obs.sort_by_key(|r| r.order);
        out.extend(obs);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimator {
    RatioOfMeans,
    #[serde(rename = "LMM")]
    Lmm,
    #[serde(rename = "OLS")]
    Ols,
}

impl Estimator {
    pub fn parse(s: &str) -> Option<Estimator> {
        match s.to_ascii_lowercase().as_str() {
            "ratio" | "ratio-of-means" | "ratioofmeans" => Some(Estimator::RatioOfMeans),
            "lmm" => Some(Estimator::Lmm),
            "ols" => Some(Estimator::Ols),
            _ => None,
        }
    }
}

/// One replicate's point estimate of the condition ratio with its
/// nominal-95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEstimate {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl ReplicateEstimate {
    /// Containment with a relative slack of 1e-9, so that a noise-free fit
    /// whose interval collapses onto the truth still counts as covering it.
    pub fn covers(&self, truth: f64) -> bool {
        let slack = 1e-9 * truth.abs();
        self.ci_low - slack <= truth && truth <= self.ci_high + slack
    }
}

fn from_fit(fit: &RegressionFit) -> ReplicateEstimate {
    let c = fit.coefficients.iter().find(|c| c.effect == crate::regression::Effect::Condition);
    let c = c.expect("every fit has a condition coefficient");
    ReplicateEstimate { estimate: c.exp_estimate, ci_low: c.ci_low.exp(), ci_high: c.ci_high.exp() }
}

fn ratio_of_means(data: &[LongRecord], design: StudyDesign) -> Result<ReplicateEstimate> {
    let ci = match design {
        StudyDesign::WithinSubjectCrossover => {
            let (mut x, mut y) = (Vec::new(), Vec::new());
            for pair in data.chunks(2) {
                let (with, without) = if pair[0].condition == 1 { (&pair[0], &pair[1]) } else { (&pair[1], &pair[0]) };
                x.push(with.outcome);
                y.push(without.outcome);
            }
            let r = pearson_r(&x, &y)?;
            ratio_ci(
                &SampleSummary::from_values(&x)?,
                &SampleSummary::from_values(&y)?,
                CiMethod::Recommended,
                Design::Paired { r },
                0.95,
            )?
        }
        StudyDesign::BetweenSubjects => {
            let (mut x, mut y) = (Vec::new(), Vec::new());
            for pair in data.chunks(2) {
                let m = 0.5 * (pair[0].outcome + pair[1].outcome);
                if pair[0].condition == 1 {
                    x.push(m)
                } else {
                    y.push(m)
                }
            }
            ratio_ci(
                &SampleSummary::from_values(&x)?,
                &SampleSummary::from_values(&y)?,
                CiMethod::Recommended,
                Design::Independent,
                0.95,
            )?
        }
    };
    Ok(ReplicateEstimate { estimate: ci.estimate, ci_low: ci.lower, ci_high: ci.upper })
}

/// Runs one estimator on one simulated dataset.
pub fn estimate(data: &[LongRecord], design: StudyDesign, estimator: Estimator) -> Result<ReplicateEstimate> {
    match estimator {
        Estimator::RatioOfMeans => ratio_of_means(data, design),
        Estimator::Lmm => fit_lmm(data, FitMethod::ML).map(|f| from_fit(&f)),
        Estimator::Ols => fit_ols(data).map(|f| from_fit(&f)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub estimator: Estimator,
    /// Replicates that produced an estimate.
    pub replicates: usize,
    pub failures: usize,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub rmse: f64,
    pub ci_coverage: f64,
}

/// Generates and fits `n_reps` replicates, replicate `k` seeded by
/// `replicate_seed(config.base_seed, k)`. Replicates run on the current
/// rayon pool; results are combined in replicate order so the report does
/// not depend on the number of threads.
pub fn recovery_study(config: &SimConfig, estimator: Estimator, n_reps: usize) -> Result<RecoveryReport> {
    config.validate()?;
    if n_reps == 0 {
        return Err(SynergyError::Config("n_reps must be at least 1".into()));
    }
    let results: Vec<Option<ReplicateEstimate>> = (0..n_reps as u64)
        .into_par_iter()
        .map(|k| {
            let cfg = SimConfig { base_seed: replicate_seed(config.base_seed, k), ..config.clone() };
            let data = generate(&cfg).ok()?;
            estimate(&data, cfg.design, estimator).ok()
        })
        .collect();

    let ok: Vec<ReplicateEstimate> = results.iter().flatten().copied().collect();
    let truth = config.condition_effect;
    let failures = n_reps - ok.len();
    if ok.is_empty() {
        return Err(SynergyError::domain(format!("all {n_reps} replicates failed")));
    }
    let m = ok.len() as f64;
    let mean_estimate = compensated_sum(ok.iter().map(|e| e.estimate)) / m;
    let mse = compensated_sum(ok.iter().map(|e| (e.estimate - truth).powi(2))) / m;
    let covered = ok.iter().filter(|e| e.covers(truth)).count();
    Ok(RecoveryReport {
        estimator,
        replicates: ok.len(),
        failures,
        truth,
        mean_estimate,
        bias: mean_estimate - truth,
        rmse: mse.sqrt(),
        ci_coverage: covered as f64 / m,
    })
}
