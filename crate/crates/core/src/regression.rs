//! Log-linear regression of crossover outcomes with a per-subject random
//! intercept.
//!
//! The multiplicative performance model `s = β·a_i/d_j·f^C·g^O·e` becomes
//! linear after taking logs:
//!
//! ```text
//! ln s_ij = β0 + β1·C_ij + β2·T_j + β3·O_ij + v_i + ε_ij
//! ```
//!
//! with `v_i ~ N(0, σ_u²)` and `ε_ij ~ N(0, σ_e²)`. `exp(β1)` is the ratio of
//! means between the two conditions.
//!
//! Estimation profiles the likelihood over `λ = σ_u²/σ_e²`. For a fixed `λ`
//! each subject's covariance block is `σ_e²(I + λJ)`, whose inverse is
//! `I − λ/(1+λn_i)·J`, so the GLS solution and `σ̂_e²` are closed form and the
//! search is one-dimensional.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, SymmetricEigen, Vector4};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, SynergyError};
use crate::inference::normal_critical;
use crate::optim::brent_minimize;

const N_FIXED: usize = 4;
/// Upper end of the variance-ratio search bracket.
pub const LAMBDA_MAX: f64 = 1e4;
const LAMBDA_TOL: f64 = 1e-9;

/// One subject-by-task observation of a two-condition, two-task crossover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRecord {
    pub subject_id: String,
    pub condition: u8,
    pub task: u8,
    pub order: u8,
    /// Speed, cost or any other strictly positive outcome.
    pub outcome: f64,
    /// Optional grading score, used by [`filter_successful`].
    pub score: Option<f64>,
}

impl LongRecord {
    pub fn new(subject_id: impl Into<String>, condition: u8, task: u8, order: u8, outcome: f64) -> Self {
        LongRecord { subject_id: subject_id.into(), condition, task, order, outcome, score: None }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    subject: String,
    condition: String,
    task: String,
    order: String,
    outcome: String,
    #[serde(default)]
    score: Option<String>,
}

fn parse_indicator(s: &str, what: &str, row: usize) -> Result<u8> {
    match s.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(SynergyError::data(row, format!("{what} must be 0 or 1 (got {other:?})"))),
    }
}

fn parse_real(s: &str, what: &str, row: usize) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| SynergyError::data(row, format!("{what} is not a number: {s:?}")))?;
    if !v.is_finite() {
        return Err(SynergyError::data(row, format!("{what} must be finite")));
    }
    Ok(v)
}

/// Reads `subject,condition,task,order,outcome[,score]`.
pub fn read_long_csv<R: Read>(reader: R) -> Result<Vec<LongRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| SynergyError::data(0, e.to_string()))?.clone();
    for required in ["subject", "condition", "task", "order", "outcome"] {
        if !headers.iter().any(|h| h == required) {
            return Err(SynergyError::data(0, format!("missing column {required:?}")));
        }
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let n = i + 1;
        let row = row.map_err(|e| SynergyError::data(n, e.to_string()))?;
        if row.subject.is_empty() {
            return Err(SynergyError::data(n, "empty subject id"));
        }
        let score = match row.score.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(s) => Some(parse_real(s, "score", n)?),
        };
        out.push(LongRecord {
            subject_id: row.subject,
            condition: parse_indicator(&row.condition, "condition", n)?,
            task: parse_indicator(&row.task, "task", n)?,
            order: parse_indicator(&row.order, "order", n)?,
            outcome: parse_real(&row.outcome, "outcome", n)?,
            score,
        });
    }
    Ok(out)
}

pub fn load_long_csv(path: impl AsRef<Path>) -> Result<Vec<LongRecord>> {
    let f = std::fs::File::open(path.as_ref())
        .map_err(|e| SynergyError::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_long_csv(f)
}

/// Writes the long format. Outcomes use the shortest representation that
/// parses back to the same `f64`, so output is byte-stable.
pub fn write_long_csv<W: Write>(writer: W, data: &[LongRecord]) -> Result<()> {
    let with_score = data.iter().any(|r| r.score.is_some());
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let io = |e: csv::Error| SynergyError::Io(e.to_string());
    if with_score {
        w.write_record(["subject", "condition", "task", "order", "outcome", "score"]).map_err(io)?;
    } else {
        w.write_record(["subject", "condition", "task", "order", "outcome"]).map_err(io)?;
    }
    for r in data {
        let mut fields = vec![
            r.subject_id.clone(),
            r.condition.to_string(),
            r.task.to_string(),
            r.order.to_string(),
            r.outcome.to_string(),
        ];
        if with_score {
            fields.push(r.score.map(|s| s.to_string()).unwrap_or_default());
        }
        w.write_record(&fields).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Effect {
    Intercept,
    Condition,
    Task,
    Order,
}

impl Effect {
    pub const ALL: [Effect; N_FIXED] = [Effect::Intercept, Effect::Condition, Effect::Task, Effect::Order];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMethod {
    ML,
    REML,
    OLS,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub effect: Effect,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    /// Two-sided Wald p-value.
    pub p: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub exp_estimate: f64,
}

/// Subject random intercept. The variance and its standard deviation are
/// both reported; `se_of_variance` comes from the observed information and
/// is NaN (`null` in JSON) when the curvature is not negative definite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomEffect {
    pub variance: f64,
    pub sd: f64,
    pub se_of_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub coefficients: Vec<Coefficient>,
    pub random_effect: Option<RandomEffect>,
    pub residual_sd: f64,
    /// `σ_u² / σ_e²` at the optimum (0 for OLS).
    pub variance_ratio: f64,
    pub n_obs: usize,
    pub n_subjects: usize,
    pub log_likelihood: f64,
    pub method: FitMethod,
    pub level: f64,
}

impl RegressionFit {
    pub fn coef(&self, effect: Effect) -> &Coefficient {
        &self.coefficients[effect.index()]
    }

    /// Estimated ratio of means between conditions, `exp(β1)`.
    pub fn condition_ratio(&self) -> f64 {
        self.coef(Effect::Condition).exp_estimate
    }

    /// Aligned text table: Effect, Estimate, SE, p, CI LL, CI UL, e^Estimate,
    /// followed by the subject random effect when present.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let pct = (self.level * 100.0).round();
        let _ = writeln!(
            s,
            "{:<12}{:>10}{:>10}{:>10}{:>12}{:>12}{:>12}",
            "Effect",
            "Estimate",
            "SE",
            "p",
            format!("{pct}% CI LL"),
            format!("{pct}% CI UL"),
            "e^Estimate"
        );
        for c in &self.coefficients {
            let _ = writeln!(
                s,
                "{:<12}{:>10.3}{:>10.3}{:>10.3}{:>12.3}{:>12.3}{:>12.3}",
                format!("{:?}", c.effect),
                c.estimate,
                c.se,
                c.p,
                c.ci_low,
                c.ci_high,
                c.exp_estimate
            );
        }
        if let Some(re) = &self.random_effect {
            let _ = writeln!(s, "{:<12}{:>10.3}{:>10.3}", "Subject RE", re.variance, re.se_of_variance);
            let _ = writeln!(s, "{:<12}{:>10.3}", "Subject SD", re.sd);
        }
        let _ = writeln!(
            s,
            "method {:?}, {} observations from {} subjects, log-likelihood {:.4}, residual sd {:.4}",
            self.method, self.n_obs, self.n_subjects, self.log_likelihood, self.residual_sd
        );
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmmOptions {
    pub method: FitMethod,
    pub level: f64,
    /// Skip the search and evaluate at this variance ratio.
    pub fixed_variance_ratio: Option<f64>,
}

impl Default for LmmOptions {
    fn default() -> Self {
        LmmOptions { method: FitMethod::ML, level: 0.95, fixed_variance_ratio: None }
    }
}

/// Design row `[1, C, T, O]`.
fn design_row(r: &LongRecord) -> Vector4<f64> {
    Vector4::new(1.0, f64::from(r.condition), f64::from(r.task), f64::from(r.order))
}

fn validate_records(data: &[LongRecord]) -> Result<()> {
    if data.is_empty() {
        return Err(SynergyError::domain("no observations"));
    }
    for (i, r) in data.iter().enumerate() {
        if !(r.outcome > 0.0) || !r.outcome.is_finite() {
            return Err(SynergyError::domain(format!(
                "record {} (subject {}): outcome must be positive and finite (got {})",
                i + 1,
                r.subject_id,
                r.outcome
            )));
        }
        if r.condition > 1 || r.task > 1 || r.order > 1 {
            return Err(SynergyError::domain(format!("record {}: indicators must be 0 or 1", i + 1)));
        }
    }
    if data.len() <= N_FIXED {
        return Err(SynergyError::domain(format!("need more than {N_FIXED} observations (got {})", data.len())));
    }
    Ok(())
}

fn check_rank(data: &[LongRecord]) -> Result<()> {
    let mut xtx = Matrix4::zeros();
    for r in data {
        let x = design_row(r);
        xtx += x * x.transpose();
    }
    for k in 0..N_FIXED {
        if xtx[(k, k)] == 0.0 {
            return Err(SynergyError::Rank(format!("{:?} indicator is identically zero", Effect::ALL[k])));
        }
    }
    // Correlation-scale eigenvalues are unit-free.
    let scale = Vector4::from_fn(|k, _| 1.0 / xtx[(k, k)].sqrt());
    let scaled = Matrix4::from_fn(|i, j| xtx[(i, j)] * scale[i] * scale[j]);
    let eig = SymmetricEigen::new(scaled);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < 1e-10 {
        return Err(SynergyError::Rank("columns [1, condition, task, order] are linearly dependent".into()));
    }
    Ok(())
}

/// Per-subject sufficient statistics.
struct Group {
    n: f64,
    xtx: Matrix4<f64>,
    xt1: Vector4<f64>,
    xty: Vector4<f64>,
    sum_y: f64,
    rows: Vec<(Vector4<f64>, f64)>,
}

struct Prepared {
    groups: Vec<Group>,
    n_obs: usize,
    /// Mean log outcome, subtracted from every response so that rescaling
    /// the outcomes leaves the variance search untouched.
    y_offset: f64,
}

impl Prepared {
    fn new(data: &[LongRecord]) -> Self {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut groups: Vec<Group> = Vec::new();
        let y_offset = crate::stats::mean(&data.iter().map(|r| r.outcome.ln()).collect::<Vec<_>>()).unwrap_or(0.0);
        for r in data {
            let g = *index.entry(r.subject_id.as_str()).or_insert_with(|| {
                groups.push(Group {
                    n: 0.0,
                    xtx: Matrix4::zeros(),
                    xt1: Vector4::zeros(),
                    xty: Vector4::zeros(),
                    sum_y: 0.0,
                    rows: Vec::new(),
                });
                groups.len() - 1
            });
            let x = design_row(r);
            let y = r.outcome.ln() - y_offset;
            let grp = &mut groups[g];
            grp.n += 1.0;
            grp.xtx += x * x.transpose();
            grp.xt1 += x;
            grp.xty += x * y;
            grp.sum_y += y;
            grp.rows.push((x, y));
        }
        Prepared { groups, n_obs: data.len(), y_offset }
    }
}

/// GLS quantities at one variance ratio.
struct Profile {
    beta: Vector4<f64>,
    /// `(Xᵀ H⁻¹ X)⁻¹` with `H = I + λZZᵀ`.
    m_inv: Matrix4<f64>,
    log_det_m: f64,
    /// `rᵀ H⁻¹ r`.
    rss: f64,
    /// `ln det H = Σ ln(1 + λ n_i)`.
    log_det_h: f64,
}

fn profile_at(p: &Prepared, lambda: f64) -> Result<Profile> {
    let mut m = Matrix4::zeros();
    let mut b = Vector4::zeros();
    let mut log_det_h = 0.0;
    for g in &p.groups {
        let denom = 1.0 + lambda * g.n;
        if !(denom > 0.0) {
            return Err(SynergyError::domain("variance ratio out of range"));
        }
        let w = lambda / denom;
        m += g.xtx - g.xt1 * g.xt1.transpose() * w;
        b += g.xty - g.xt1 * (g.sum_y * w);
        log_det_h += denom.ln();
    }
    let chol = m.cholesky().ok_or_else(|| SynergyError::Rank("GLS normal matrix is not positive definite".into()))?;
    let beta = chol.solve(&b);
    let m_inv = chol.inverse();
    let log_det_m = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();

    let mut rss = 0.0;
    for g in &p.groups {
        let w = lambda / (1.0 + lambda * g.n);
        let (mut ss, mut s) = (0.0, 0.0);
        for (x, y) in &g.rows {
            let r = y - x.dot(&beta);
            ss += r * r;
            s += r;
        }
        rss += ss - w * s * s;
    }
    Ok(Profile { beta, m_inv, log_det_m, rss: rss.max(f64::MIN_POSITIVE), log_det_h })
}

fn residual_dof(n_obs: usize, method: FitMethod) -> f64 {
    match method {
        FitMethod::REML | FitMethod::OLS => (n_obs - N_FIXED) as f64,
        FitMethod::ML => n_obs as f64,
    }
}

/// Log-likelihood (ML) or restricted log-likelihood (REML) with `β` and
/// `σ_e²` profiled out.
fn profiled_loglik(p: &Prepared, prof: &Profile, method: FitMethod) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let dof = residual_dof(p.n_obs, method);
    let sigma2 = prof.rss / dof;
    let core = -0.5 * dof * ((two_pi * sigma2).ln() + 1.0) - 0.5 * prof.log_det_h;
    match method {
        FitMethod::REML => core - 0.5 * prof.log_det_m,
        _ => core,
    }
}

/// Derivative of the profiled log-likelihood with respect to `λ`.
fn profiled_score(p: &Prepared, lambda: f64, method: FitMethod) -> Result<f64> {
    let prof = profile_at(p, lambda)?;
    let dof = residual_dof(p.n_obs, method);
    let (mut d_rss, mut d_log_det_h, mut d_log_det_m) = (0.0, 0.0, 0.0);
    for g in &p.groups {
        let denom = 1.0 + lambda * g.n;
        let s = g.sum_y - g.xt1.dot(&prof.beta);
        d_rss -= s * s / (denom * denom);
        d_log_det_h += g.n / denom;
        d_log_det_m -= (g.xt1.transpose() * prof.m_inv * g.xt1)[0] / (denom * denom);
    }
    let core = -0.5 * dof * d_rss / prof.rss - 0.5 * d_log_det_h;
    Ok(match method {
        FitMethod::REML => core - 0.5 * d_log_det_m,
        _ => core,
    })
}

/// Sharpens an interior optimum by bisecting the sign change of the score,
/// which pins `λ` down to a few ulps where the likelihood itself is flat.
fn polish_lambda(p: &Prepared, lambda: f64, method: FitMethod) -> f64 {
    let score = |l: f64| profiled_score(p, l, method).unwrap_or(f64::NAN);
    let (mut a, mut b) = (lambda * (1.0 - 1e-4), lambda * (1.0 + 1e-4));
    let (sa, sb) = (score(a), score(b));
    if !(sa > 0.0 && sb < 0.0) {
        return lambda;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let sm = score(m);
        if sm.is_nan() {
            return lambda;
        }
        if sm > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Log-likelihood as a function of the two variance components, `β` at its
/// GLS value. Used for the curvature of the random-effect variance.
fn variance_loglik(p: &Prepared, method: FitMethod, sigma_u2: f64, sigma_e2: f64) -> Result<f64> {
    if !(sigma_e2 > 0.0) {
        return Err(SynergyError::domain("residual variance must be positive"));
    }
    let prof = profile_at(p, sigma_u2 / sigma_e2)?;
    let n = p.n_obs as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    let base = -0.5 * (n * (two_pi * sigma_e2).ln() + prof.log_det_h + prof.rss / sigma_e2);
    Ok(match method {
        FitMethod::REML => {
            let k = N_FIXED as f64;
            base + 0.5 * k * two_pi.ln() - 0.5 * (prof.log_det_m - k * sigma_e2.ln())
        }
        _ => base,
    })
}

fn variance_se(p: &Prepared, method: FitMethod, su2: f64, se2: f64) -> f64 {
    let hu = 1e-5 * su2.max(se2);
    let he = 1e-5 * se2;
    let f = |a: f64, b: f64| variance_loglik(p, method, a, b);
    let eval = || -> Result<Matrix2<f64>> {
        let f0 = f(su2, se2)?;
        let fuu = (f(su2 + hu, se2)? - 2.0 * f0 + f(su2 - hu, se2)?) / (hu * hu);
        let fee = (f(su2, se2 + he)? - 2.0 * f0 + f(su2, se2 - he)?) / (he * he);
        let fue = (f(su2 + hu, se2 + he)? - f(su2 + hu, se2 - he)? - f(su2 - hu, se2 + he)? + f(su2 - hu, se2 - he)?)
            / (4.0 * hu * he);
        Ok(Matrix2::new(fuu, fue, fue, fee))
    };
    let Ok(h) = eval() else { return f64::NAN };
    let info = -h;
    if !(info[(0, 0)] > 0.0) || !(info.determinant() > 0.0) {
        return f64::NAN;
    }
    match info.try_inverse() {
        Some(cov) if cov[(0, 0)] > 0.0 => cov[(0, 0)].sqrt(),
        _ => f64::NAN,
    }
}

fn wald_coefficients(beta: &Vector4<f64>, cov: &Matrix4<f64>, level: f64) -> Result<Vec<Coefficient>> {
    let zcrit = normal_critical(level)?;
    let normal = Normal::standard();
    Ok(Effect::ALL
        .iter()
        .map(|&effect| {
            let k = effect.index();
            let estimate = beta[k];
            let se = cov[(k, k)].max(0.0).sqrt();
            let z = if se > 0.0 {
                estimate / se
            } else if estimate == 0.0 {
                0.0
            } else {
                f64::INFINITY.copysign(estimate)
            };
            let p = (2.0 * normal.sf(z.abs())).min(1.0);
            Coefficient {
                effect,
                estimate,
                se,
                z,
                p,
                ci_low: estimate - zcrit * se,
                ci_high: estimate + zcrit * se,
                exp_estimate: estimate.exp(),
            }
        })
        .collect())
}

/// Grid of candidate variance ratios: 0 and log-spaced points up to
/// [`LAMBDA_MAX`].
fn lambda_grid() -> Vec<f64> {
    let mut g = vec![0.0];
    g.extend((-24..=16).map(|k| 10f64.powf(k as f64 / 4.0)));
    g
}

fn search_lambda(p: &Prepared, method: FitMethod) -> Result<f64> {
    if p.groups.iter().all(|g| g.n <= 1.0) {
        // One observation per subject: the random intercept is absorbed
        // into the residual and the profile is flat.
        return Ok(0.0);
    }
    let grid = lambda_grid();
    let mut values = Vec::with_capacity(grid.len());
    for &l in &grid {
        values.push(profiled_loglik(p, &profile_at(p, l)?, method));
    }
    let best = values.iter().enumerate().fold(0, |b, (i, v)| if *v > values[b] { i } else { b });
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];

    let neg = |l: f64| match profile_at(p, l) {
        Ok(prof) => -profiled_loglik(p, &prof, method),
        Err(_) => f64::INFINITY,
    };
    let m = brent_minimize(neg, lo, hi, LAMBDA_TOL, LAMBDA_TOL, 500);
    let (mut lambda, mut ll) = (m.x, -m.fx);
    if values[best] > ll {
        lambda = grid[best];
        ll = values[best];
    }
    // Boundary solution: accept zero when it is at least as good.
    if values[0] + 1e-12 * (1.0 + ll.abs()) >= ll {
        return Ok(0.0);
    }
    let polished = polish_lambda(p, lambda, method);
    if let Ok(prof) = profile_at(p, polished) {
        if profiled_loglik(p, &prof, method) + 1e-12 * (1.0 + ll.abs()) >= ll {
            lambda = polished;
        }
    }
    Ok(lambda)
}

/// Random-intercept fit by maximum likelihood.
pub fn fit_lmm(data: &[LongRecord], method: FitMethod) -> Result<RegressionFit> {
    fit_lmm_with(data, &LmmOptions { method, ..LmmOptions::default() })
}

pub fn fit_lmm_with(data: &[LongRecord], opts: &LmmOptions) -> Result<RegressionFit> {
    if opts.method == FitMethod::OLS {
        return fit_ols_with_level(data, opts.level);
    }
    validate_records(data)?;
    let prepared = Prepared::new(data);
    if prepared.groups.len() < 2 {
        return Err(SynergyError::domain(format!(
            "mixed model needs at least 2 subjects (got {})",
            prepared.groups.len()
        )));
    }
    check_rank(data)?;

    let lambda = match opts.fixed_variance_ratio {
        Some(l) if l >= 0.0 && l.is_finite() => l,
        Some(l) => return Err(SynergyError::domain(format!("invalid variance ratio {l}"))),
        None => search_lambda(&prepared, opts.method)?,
    };
    let prof = profile_at(&prepared, lambda)?;
    let log_likelihood = profiled_loglik(&prepared, &prof, opts.method);
    let sigma_e2 = prof.rss / residual_dof(prepared.n_obs, opts.method);
    let sigma_u2 = lambda * sigma_e2;

    let cov = prof.m_inv * sigma_e2;
    let mut beta = prof.beta;
    beta[0] += prepared.y_offset;
    let coefficients = wald_coefficients(&beta, &cov, opts.level)?;
    let se_var = variance_se(&prepared, opts.method, sigma_u2, sigma_e2);

    Ok(RegressionFit {
        coefficients,
        random_effect: Some(RandomEffect { variance: sigma_u2, sd: sigma_u2.sqrt(), se_of_variance: se_var }),
        residual_sd: sigma_e2.sqrt(),
        variance_ratio: lambda,
        n_obs: prepared.n_obs,
        n_subjects: prepared.groups.len(),
        log_likelihood,
        method: opts.method,
        level: opts.level,
    })
}

/// Ordinary least squares on the log outcome, via Householder QR.
pub fn fit_ols(data: &[LongRecord]) -> Result<RegressionFit> {
    fit_ols_with_level(data, 0.95)
}

pub fn fit_ols_with_level(data: &[LongRecord], level: f64) -> Result<RegressionFit> {
    validate_records(data)?;
    check_rank(data)?;
    let n = data.len();
    let x = DMatrix::from_fn(n, N_FIXED, |i, j| design_row(&data[i])[j]);
    let y = DVector::from_iterator(n, data.iter().map(|r| r.outcome.ln()));

    let qr = x.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &y;
    let beta_d =
        r.solve_upper_triangular(&qty).ok_or_else(|| SynergyError::Rank("triangular factor is singular".into()))?;
    let beta = Vector4::from_iterator(beta_d.iter().cloned());
    let resid = &y - &x * &beta_d;
    let rss = resid.norm_squared();

    let r4 = Matrix4::from_fn(|i, j| r[(i, j)]);
    let r_inv = r4.try_inverse().ok_or_else(|| SynergyError::Rank("triangular factor is singular".into()))?;
    let s2 = rss / (n - N_FIXED) as f64;
    let cov = r_inv * r_inv.transpose() * s2;
    let coefficients = wald_coefficients(&beta, &cov, level)?;

    let two_pi = 2.0 * std::f64::consts::PI;
    let sigma2_ml = (rss / n as f64).max(f64::MIN_POSITIVE);
    let log_likelihood = -0.5 * n as f64 * ((two_pi * sigma2_ml).ln() + 1.0);
    let n_subjects = data.iter().map(|r| r.subject_id.as_str()).collect::<std::collections::HashSet<_>>().len();

    Ok(RegressionFit {
        coefficients,
        random_effect: None,
        residual_sd: s2.sqrt(),
        variance_ratio: 0.0,
        n_obs: n,
        n_subjects,
        log_likelihood,
        method: FitMethod::OLS,
        level,
    })
}

/// Grading scores keyed by `(subject, task)`.
pub type ScoreMap = BTreeMap<(String, u8), f64>;

/// Collects the optional `score` column into a [`ScoreMap`].
pub fn scores_from_records(data: &[LongRecord]) -> Result<ScoreMap> {
    let mut map = ScoreMap::new();
    for (i, r) in data.iter().enumerate() {
        let s = r.score.ok_or_else(|| SynergyError::data(i + 1, format!("no score for subject {}", r.subject_id)))?;
        map.insert((r.subject_id.clone(), r.task), s);
    }
    Ok(map)
}

/// Keeps observations whose score is at least `threshold`.
pub fn filter_successful(data: &[LongRecord], scores: &ScoreMap, threshold: f64) -> Result<Vec<LongRecord>> {
    let mut out = Vec::with_capacity(data.len());
    for (i, r) in data.iter().enumerate() {
        let s = scores.get(&(r.subject_id.clone(), r.task)).ok_or_else(|| {
            SynergyError::data(i + 1, format!("no score for subject {} task {}", r.subject_id, r.task))
        })?;
        if *s >= threshold {
            out.push(r.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Deterministic crossover layout: subject `i` falls in cell `i % 4`.
    fn crossover(n_subjects: usize, outcome: impl Fn(usize, u8, u8, u8) -> f64) -> Vec<LongRecord> {
        let mut out = Vec::new();
        for i in 0..n_subjects {
            let cond_task = (i % 2) as u8;
            let first_task = ((i / 2) % 2) as u8;
            for task in 0..2u8 {
                let c = u8::from(task == cond_task);
                let o = u8::from(task != first_task);
                out.push(LongRecord::new(format!("s{i}"), c, task, o, outcome(i, c, task, o)));
            }
        }
        out
    }

    fn noisy(i: usize, c: u8, t: u8, o: u8) -> f64 {
        let a = 1.0 + 0.3 * ((i * 7 % 5) as f64 - 2.0) / 2.0;
        let e = 1.0 + 0.1 * (((i * 3 + t as usize * 5 + o as usize) % 7) as f64 - 3.0) / 3.0;
        0.03 * a * 1.27f64.powi(c.into()) * 0.8f64.powi(o.into()) * if t == 1 { 0.9 } else { 1.0 } * e
    }

    #[test]
    fn noise_free_multiplicative_data_is_recovered() {
        let data = crossover(12, |i, c, t, o| {
            let a = [0.7, 1.0, 1.4, 0.9, 1.1, 1.3][i % 6];
            let d = if t == 1 { 1.5 } else { 1.0 };
            0.05 * a / d * 2f64.powi(c.into()) * 0.8f64.powi(o.into())
        });
        let fit = fit_lmm(&data, FitMethod::ML).unwrap();
        assert_abs_diff_eq!(fit.condition_ratio(), 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.coef(Effect::Order).exp_estimate, 0.8, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.coef(Effect::Task).exp_estimate, 1.0 / 1.5, epsilon = 1e-6);
    }

    #[test]
    fn single_observation_per_subject_reduces_to_ols() {
        let data: Vec<_> = crossover(16, noisy)
            .into_iter()
            .enumerate()
            .map(|(k, mut r)| {
                r.subject_id = format!("u{k}");
                r
            })
            .collect();
        let lmm = fit_lmm(&data, FitMethod::ML).unwrap();
        let ols = fit_ols(&data).unwrap();
        assert_eq!(lmm.variance_ratio, 0.0);
        assert_eq!(lmm.random_effect.unwrap().variance, 0.0);
        for e in Effect::ALL {
            assert_abs_diff_eq!(lmm.coef(e).estimate, ols.coef(e).estimate, epsilon = 1e-10);
        }
    }

    #[test]
    fn fixed_zero_ratio_matches_ols() {
        let data = crossover(20, noisy);
        let opts = LmmOptions { fixed_variance_ratio: Some(0.0), ..LmmOptions::default() };
        let lmm = fit_lmm_with(&data, &opts).unwrap();
        let ols = fit_ols(&data).unwrap();
        for e in Effect::ALL {
            assert_abs_diff_eq!(lmm.coef(e).estimate, ols.coef(e).estimate, epsilon = 1e-10);
        }
        // ML at λ = 0 reproduces the OLS Gaussian log-likelihood.
        assert_abs_diff_eq!(lmm.log_likelihood, ols.log_likelihood, epsilon = 1e-9);
    }

    #[test]
    fn exp_estimate_is_exp_of_estimate() {
        let fit = fit_lmm(&crossover(20, noisy), FitMethod::REML).unwrap();
        for c in &fit.coefficients {
            assert_eq!(c.exp_estimate, c.estimate.exp());
            assert!(c.ci_low <= c.estimate && c.estimate <= c.ci_high);
        }
        let re = fit.random_effect.unwrap();
        assert!(re.variance >= 0.0);
        assert_eq!(re.sd, re.variance.sqrt());
    }

    #[test]
    fn rank_and_domain_errors() {
        let mut data = crossover(8, noisy);
        for r in &mut data {
            r.task = 0;
        }
        assert!(matches!(fit_lmm(&data, FitMethod::ML), Err(SynergyError::Rank(_))));
        assert!(matches!(fit_ols(&data), Err(SynergyError::Rank(_))));

        // Order equal to task everywhere is collinear.
        let mut data = crossover(8, noisy);
        for r in &mut data {
            r.order = r.task;
        }
        assert!(matches!(fit_ols(&data), Err(SynergyError::Rank(_))));

        let mut data = crossover(8, noisy);
        data[3].outcome = 0.0;
        assert!(matches!(fit_lmm(&data, FitMethod::ML), Err(SynergyError::Domain(_))));
        assert!(matches!(fit_ols(&data), Err(SynergyError::Domain(_))));

        let mut single = crossover(8, noisy);
        for r in &mut single {
            r.subject_id = "only".into();
        }
        assert!(matches!(fit_lmm(&single, FitMethod::ML), Err(SynergyError::Domain(_))));
        // OLS does not care about subjects.
        assert!(fit_ols(&single).is_ok());
    }

    #[test]
    fn filter_by_score() {
        let mut data = crossover(8, noisy);
        for (k, r) in data.iter_mut().enumerate() {
            r.score = Some(k as f64 / 16.0);
        }
        let scores = scores_from_records(&data).unwrap();
        assert_eq!(filter_successful(&data, &scores, 0.0).unwrap(), data);
        assert_eq!(filter_successful(&data, &scores, 0.5).unwrap().len(), 8);
        assert!(filter_successful(&data, &scores, 1.01).unwrap().is_empty());

        let mut partial = scores.clone();
        partial.remove(&("s3".to_string(), 1));
        let err = filter_successful(&data, &partial, 0.5).unwrap_err();
        assert!(matches!(err, SynergyError::Data { .. }));
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let mut data = crossover(4, noisy);
        data[0].score = Some(0.95);
        let mut buf = Vec::new();
        write_long_csv(&mut buf, &data).unwrap();
        let back = read_long_csv(buf.as_slice()).unwrap();
        assert_eq!(back, data);

        let bad = "subject,condition,task,order,outcome\na,2,0,0,1.0\n";
        assert!(matches!(read_long_csv(bad.as_bytes()), Err(SynergyError::Data { row: 1, .. })));
        let missing = "subject,condition,task,outcome\na,1,0,1.0\n";
        assert!(matches!(read_long_csv(missing.as_bytes()), Err(SynergyError::Data { row: 0, .. })));
    }

    #[test]
    fn table_has_expected_columns() {
        let fit = fit_lmm(&crossover(20, noisy), FitMethod::ML).unwrap();
        let t = fit.to_table();
        assert!(t.starts_with("Effect"));
        for col in ["Estimate", "SE", "CI LL", "CI UL", "e^Estimate", "Subject RE", "Condition"] {
            assert!(t.contains(col), "{col}");
        }
    }
}
