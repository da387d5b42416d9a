use std::fmt;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use synergy_core::review::ReviewSummary;
use synergy_core::{
    audit_dataset, bundled_dataset, compute_rho_hat, filter_successful, fit_lmm_with, generate, load_dataset,
    load_long_csv, pearson_r, ratio_ci_with, recovery_study, scores_from_records, subset_by_direction,
    subset_top_per_study, summarize, transform_pipeline, write_long_csv, CiMethod, Critical, Design, Direction,
    Estimator, FitMethod, LmmOptions, MetricSpec, PerformanceTriple, SampleSummary, Selection, SimConfig, StudyDesign,
    StudyRecord, SynergyError, Verdict,
};

use crate::{
    CiArgs, Command, CoverageArgs, CriticalArg, DatasetArgs, DesignArg, DirectionArg, EstimatorArg, MethodArg,
    MetricArgs, RatioArgs, RegressArgs, RegressMethodArg, ReviewCommand, SelectionArg, SimArgs, SimulateArgs,
    StudyDesignArg, SummaryArgs, TransformArgs,
};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or an invalid configuration: exit 2.
    Usage(String),
    Core(SynergyError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(SynergyError::Config(_)) => 2,
            CliError::Core(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<SynergyError> for CliError {
    fn from(e: SynergyError) -> Self {
        CliError::Core(e)
    }
}

type CmdResult = Result<String, CliError>;

fn to_json<T: Serialize>(value: &T) -> CmdResult {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Core(SynergyError::Io(e.to_string())))
}

pub fn run(command: Command) -> CmdResult {
    match command {
        Command::Ratio(a) => ratio(a),
        Command::Transform(a) => transform(a),
        Command::Ci(a) => ci(a),
        Command::Regress(a) => regress(a),
        Command::Review(c) => review(c),
        Command::Simulate(a) => simulate(a),
        Command::Coverage(a) => coverage(a),
    }
}

fn metric(m: &MetricArgs) -> Result<MetricSpec, CliError> {
    let direction = match m.direction {
        DirectionArg::Higher => Direction::HigherBetter,
        DirectionArg::Lower => Direction::LowerBetter,
    };
    Ok(MetricSpec::new("metric", direction, m.lower_bound, m.upper_bound)?)
}

fn ratio(a: RatioArgs) -> CmdResult {
    let t = PerformanceTriple::new(a.x_h, a.x_c, a.x_hc, metric(&a.metric)?);
    to_json(&compute_rho_hat(&t, a.transformed)?)
}

fn transform(a: TransformArgs) -> CmdResult {
    let spec = metric(&a.metric)?;
    let applies = spec.direction == Direction::LowerBetter || spec.upper_bound.is_some();
    let transformed = if applies { json!(transform_pipeline(a.value, &spec)?) } else { json!("n/a") };
    to_json(&json!({
        "value": a.value,
        "direction": spec.direction.short_name(),
        "transformed": transformed,
    }))
}

type Columns = (Vec<Option<f64>>, Vec<Option<f64>>);

fn read_columns(path: &Path) -> Result<Columns, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| SynergyError::Io(format!("{}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| SynergyError::Data { row: 0, message: e.to_string() })?;
    if headers.iter().collect::<Vec<_>>() != ["x", "y"] {
        return Err(SynergyError::Data { row: 0, message: "header must be x,y".into() }.into());
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| SynergyError::Data { row, message: e.to_string() })?;
        let cell = |k: usize| -> Result<Option<f64>, CliError> {
            let s = rec.get(k).unwrap_or("");
            if s.is_empty() {
                return Ok(None);
            }
            let v: f64 = s.parse().map_err(|_| SynergyError::Data { row, message: format!("not a number: {s:?}") })?;
            if !v.is_finite() {
                return Err(SynergyError::Data { row, message: "values must be finite".into() }.into());
            }
            Ok(Some(v))
        };
        xs.push(cell(0)?);
        ys.push(cell(1)?);
    }
    Ok((xs, ys))
}

fn summaries(a: &CiArgs) -> Result<(SampleSummary, SampleSummary, Design), CliError> {
    if let Some(path) = &a.data {
        let (xs, ys) = read_columns(path)?;
        return match a.design {
            DesignArg::Paired => {
                let mut x = Vec::new();
                let mut y = Vec::new();
                for (row, (px, py)) in xs.iter().zip(&ys).enumerate() {
                    match (px, py) {
                        (Some(u), Some(v)) => {
                            x.push(*u);
                            y.push(*v);
                        }
                        _ => {
                            return Err(SynergyError::Data {
                                row: row + 1,
                                message: "paired data needs both x and y".into(),
                            }
                            .into())
                        }
                    }
                }
                let r = pearson_r(&x, &y)?;
                Ok((SampleSummary::from_values(&x)?, SampleSummary::from_values(&y)?, Design::Paired { r }))
            }
            DesignArg::Independent => {
                let x: Vec<f64> = xs.into_iter().flatten().collect();
                let y: Vec<f64> = ys.into_iter().flatten().collect();
                Ok((SampleSummary::from_values(&x)?, SampleSummary::from_values(&y)?, Design::Independent))
            }
        };
    }
    let (Some(mx), Some(sx), Some(nx), Some(my), Some(sy), Some(ny)) =
        (a.mean_x, a.sd_x, a.n_x, a.mean_y, a.sd_y, a.n_y)
    else {
        return Err(CliError::Usage(
            "give either --data or all six of --mean-x/--sd-x/--n-x/--mean-y/--sd-y/--n-y".into(),
        ));
    };
    let design = match a.design {
        DesignArg::Independent => Design::Independent,
        DesignArg::Paired => {
            let r = a.r.ok_or_else(|| CliError::Usage("--design paired needs --r".into()))?;
            if !(-1.0..=1.0).contains(&r) {
                return Err(CliError::Usage(format!("--r must lie in [-1, 1] (got {r})")));
            }
            if nx != ny {
                return Err(CliError::Usage("paired summaries need --n-x equal to --n-y".into()));
            }
            Design::Paired { r }
        }
    };
    Ok((SampleSummary::new(nx, mx, sx)?, SampleSummary::new(ny, my, sy)?, design))
}

fn ci(a: CiArgs) -> CmdResult {
    let (x, y, design) = summaries(&a)?;
    let critical = match a.critical {
        CriticalArg::Normal => Critical::Normal,
        CriticalArg::T => Critical::StudentT,
    };
    let methods: Vec<CiMethod> = match a.method {
        MethodArg::All => CiMethod::ALL.to_vec(),
        MethodArg::Fieller => vec![CiMethod::Fieller],
        MethodArg::Delta => vec![CiMethod::Delta],
        MethodArg::Recommended => vec![CiMethod::Recommended],
    };
    let mut intervals = Vec::new();
    for m in &methods {
        match ratio_ci_with(&x, &y, *m, design, a.level, critical) {
            Ok(ci) => intervals.push(json!({ "method": m, "lower": ci.lower, "upper": ci.upper })),
            // With several methods requested, an unbounded Fieller set is
            // reported in place; on its own it is an error.
            Err(SynergyError::UnboundedInterval) if methods.len() > 1 => {
                intervals.push(json!({ "method": m, "error": SynergyError::UnboundedInterval.to_string() }))
            }
            Err(e) => return Err(e.into()),
        }
    }
    to_json(&json!({
        "estimate": x.mean / y.mean,
        "level": a.level,
        "design": design,
        "critical": critical,
        "numerator": x,
        "denominator": y,
        "intervals": intervals,
    }))
}

fn regress(a: RegressArgs) -> CmdResult {
    let mut data = load_long_csv(&a.data)?;
    if let Some(t) = a.score_threshold {
        let scores = scores_from_records(&data)?;
        data = filter_successful(&data, &scores, t)?;
    }
    let method = match a.method {
        RegressMethodArg::Lmm => FitMethod::ML,
        RegressMethodArg::Reml => FitMethod::REML,
        RegressMethodArg::Ols => FitMethod::OLS,
    };
    let fit = fit_lmm_with(&data, &LmmOptions { method, level: a.level, ..LmmOptions::default() })?;
    let table = fit.to_table();
    eprint!("{table}");
    to_json(&json!({
        "rho_hat": fit.condition_ratio(),
        "fit": fit,
        "table": table,
    }))
}

fn dataset(d: &DatasetArgs) -> Result<Vec<StudyRecord>, CliError> {
    Ok(match &d.dataset {
        Some(p) => load_dataset(p)?,
        None => bundled_dataset(),
    })
}

fn selection(s: SelectionArg) -> Selection {
    match s {
        SelectionArg::Published => Selection::PublishedRhoHat,
        SelectionArg::AsPrinted => Selection::PublishedRhoHatAsPrinted,
        SelectionArg::Recomputed => Selection::RecomputedRhoHat,
        SelectionArg::RecomputedPrime => Selection::RecomputedRhoHatPrime,
    }
}

fn summary_of(records: &[StudyRecord], a: &SummaryArgs) -> Result<ReviewSummary, CliError> {
    if !(a.bin_width > 0.0 && a.bin_width.is_finite()) {
        return Err(CliError::Usage(format!("--bin must be positive (got {})", a.bin_width)));
    }
    Ok(summarize(records, selection(a.selection), a.bin_width)?)
}

fn review(c: ReviewCommand) -> CmdResult {
    match c {
        ReviewCommand::Summarize(a) => to_json(&summary_of(&dataset(&a.dataset)?, &a)?),
        ReviewCommand::Audit(d) => {
            let reports = audit_dataset(&dataset(&d)?)?;
            let count = |v: Verdict| reports.iter().filter(|r| r.verdict == v).count();
            let anomalous: Vec<usize> =
                reports.iter().filter(|r| r.verdict == Verdict::Anomalous).map(|r| r.row).collect();
            to_json(&json!({
                "rows": reports.len(),
                "consistent": count(Verdict::Consistent),
                "anomalous": count(Verdict::Anomalous),
                "not_applicable": count(Verdict::NotApplicable),
                "anomalous_rows": anomalous,
                "reports": reports,
            }))
        }
        ReviewCommand::Hist { summary, tsv } => {
            let s = summary_of(&dataset(&summary.dataset)?, &summary)?;
            if let Some(path) = &tsv {
                std::fs::write(path, s.histogram_tsv())
                    .map_err(|e| SynergyError::Io(format!("{}: {e}", path.display())))?;
            }
            to_json(&json!({
                "n": s.n,
                "bin_width": s.bin_width,
                "bins": s.histogram,
                "tsv": tsv,
            }))
        }
        ReviewCommand::TopPerStudy(a) => {
            let top = subset_top_per_study(&dataset(&a.dataset)?);
            let s = summary_of(&top, &a)?;
            let picked: Vec<Value> = top
                .iter()
                .map(|r| json!({ "study_id": r.study_id, "task": r.task, "measure": r.measure, "value": selection(a.selection).value(r) }))
                .collect();
            to_json(&json!({ "summary": s, "records": picked }))
        }
        ReviewCommand::ByDirection(a) => {
            let recs = dataset(&a.dataset)?;
            let mut out = serde_json::Map::new();
            for (key, dir) in [("higher", Direction::HigherBetter), ("lower", Direction::LowerBetter)] {
                let subset = subset_by_direction(&recs, dir);
                let v = if subset.is_empty() {
                    json!({ "n": 0 })
                } else {
                    serde_json::to_value(summary_of(&subset, &a)?).expect("summary serialises")
                };
                out.insert(key.to_string(), v);
            }
            to_json(&Value::Object(out))
        }
    }
}

fn sim_config(a: &SimArgs, seed: u64) -> Result<SimConfig, CliError> {
    let mut cfg = match &a.config {
        Some(p) => SimConfig::load_json(p)?,
        None => SimConfig::default(),
    };
    if let Some(v) = a.n_subjects {
        cfg.n_subjects = v;
    }
    if let Some(v) = a.beta {
        cfg.beta = v;
    }
    if let Some(v) = a.difficulty_1 {
        cfg.task_difficulty.0 = v;
    }
    if let Some(v) = a.difficulty_2 {
        cfg.task_difficulty.1 = v;
    }
    if let Some(v) = a.condition_effect {
        cfg.condition_effect = v;
    }
    if let Some(v) = a.order_effect {
        cfg.order_effect = v;
    }
    if let Some(v) = a.ability_log_sd {
        cfg.ability_log_sd = v;
    }
    if let Some(v) = a.error_log_sd {
        cfg.error_log_sd = v;
    }
    if let Some(d) = a.design {
        cfg.design = match d {
            StudyDesignArg::Crossover => StudyDesign::WithinSubjectCrossover,
            StudyDesignArg::Between => StudyDesign::BetweenSubjects,
        };
    }
    cfg.base_seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| CliError::Usage(e.to_string())),
    }
}

fn simulate(a: SimulateArgs) -> CmdResult {
    let cfg = sim_config(&a.sim, a.seed)?;
    let data = with_threads(a.sim.threads, || generate(&cfg))??;
    match &a.out {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| SynergyError::Io(format!("{}: {e}", path.display())))?;
            write_long_csv(file, &data)?;
            to_json(&json!({ "config": cfg, "records": data.len(), "out": path }))
        }
        None => to_json(&json!({ "config": cfg, "records": data.len(), "data": data })),
    }
}

fn coverage(a: CoverageArgs) -> CmdResult {
    let cfg = sim_config(&a.sim, a.seed)?;
    if a.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let estimator = match a.estimator {
        EstimatorArg::Lmm => Estimator::Lmm,
        EstimatorArg::Ols => Estimator::Ols,
        EstimatorArg::Ratio => Estimator::RatioOfMeans,
    };
    let report = with_threads(a.sim.threads, || recovery_study(&cfg, estimator, a.reps))??;
    to_json(&json!({ "config": cfg, "report": report }))
}
