//! `synergy`: command-line front end for the synergy estimators.
//!
//! Every command prints a single JSON document on stdout and exits 0;
//! domain and data errors exit 1 and usage or configuration errors exit 2,
//! with a diagnostic on stderr.

mod commands;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "synergy", version, about = "Ratio-of-means synergy estimators, review audit and simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synergy ratio X_HC / max(X_H, X_C) for one performance triple.
    Ratio(RatioArgs),
    /// Apply the bound transforms to a single value.
    Transform(TransformArgs),
    /// Confidence intervals for a ratio of means.
    Ci(CiArgs),
    /// Log-scale regression of a long-format crossover dataset.
    Regress(RegressArgs),
    /// Review-table audit and summaries.
    #[command(subcommand)]
    Review(ReviewCommand),
    /// Generate one synthetic crossover dataset.
    Simulate(SimulateArgs),
    /// Monte-Carlo recovery and coverage of an estimator.
    Coverage(CoverageArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DirectionArg {
    Higher,
    Lower,
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    #[arg(long, value_enum, default_value = "higher")]
    pub direction: DirectionArg,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub lower_bound: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub upper_bound: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RatioArgs {
    #[arg(long = "x-h", allow_negative_numbers = true)]
    pub x_h: f64,
    #[arg(long = "x-c", allow_negative_numbers = true)]
    pub x_c: f64,
    #[arg(long = "x-hc", allow_negative_numbers = true)]
    pub x_hc: f64,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Also report the transformed ratios.
    #[arg(long)]
    pub transformed: bool,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub value: f64,
    #[command(flatten)]
    pub metric: MetricArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    All,
    Fieller,
    Delta,
    Recommended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DesignArg {
    Independent,
    Paired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriticalArg {
    Normal,
    T,
}

fn parse_level(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("level must lie strictly between 0 and 1 (got {v})"))
    }
}

#[derive(Debug, Args)]
pub struct CiArgs {
    /// CSV with columns x,y. Paired designs read one pair per row;
    /// independent samples may leave cells empty.
    #[arg(long, conflicts_with_all = ["mean_x", "mean_y"])]
    pub data: Option<PathBuf>,
    #[arg(long, requires_all = ["sd_x", "n_x", "mean_y", "sd_y", "n_y"])]
    pub mean_x: Option<f64>,
    #[arg(long)]
    pub sd_x: Option<f64>,
    #[arg(long)]
    pub n_x: Option<usize>,
    #[arg(long, requires = "mean_x")]
    pub mean_y: Option<f64>,
    #[arg(long)]
    pub sd_y: Option<f64>,
    #[arg(long)]
    pub n_y: Option<usize>,
    /// Correlation of paired measurements (summary input only).
    #[arg(long, allow_negative_numbers = true)]
    pub r: Option<f64>,
    #[arg(long, value_enum, default_value = "all")]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value = "independent")]
    pub design: DesignArg,
    #[arg(long, default_value = "0.95", value_parser = parse_level)]
    pub level: f64,
    #[arg(long, value_enum, default_value = "normal")]
    pub critical: CriticalArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegressMethodArg {
    Lmm,
    Reml,
    Ols,
}

#[derive(Debug, Args)]
pub struct RegressArgs {
    /// Long-format CSV: subject,condition,task,order,outcome[,score].
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "lmm")]
    pub method: RegressMethodArg,
    /// Keep only subject-task observations scoring at least this much.
    #[arg(long)]
    pub score_threshold: Option<f64>,
    #[arg(long, default_value = "0.95", value_parser = parse_level)]
    pub level: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectionArg {
    Published,
    AsPrinted,
    Recomputed,
    RecomputedPrime,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Review table CSV; the bundled table when omitted.
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SummaryArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[arg(long, value_enum, default_value = "published")]
    pub selection: SelectionArg,
    #[arg(long = "bin", default_value_t = 0.05)]
    pub bin_width: f64,
}

#[derive(Debug, Subcommand)]
pub enum ReviewCommand {
    /// Mean, median, synergy share and histogram of the selected ratio.
    Summarize(SummaryArgs),
    /// Recompute every published ratio over its rounding interval.
    Audit(DatasetArgs),
    /// Histogram of the selected ratio, optionally written as TSV.
    Hist {
        #[command(flatten)]
        summary: SummaryArgs,
        #[arg(long)]
        tsv: Option<PathBuf>,
    },
    /// Summary over the single best result of each study.
    TopPerStudy(SummaryArgs),
    /// Summaries of the higher-is-better and lower-is-better subsets.
    ByDirection(SummaryArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StudyDesignArg {
    Crossover,
    Between,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// JSON configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_subjects: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub difficulty_1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub difficulty_2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub condition_effect: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub order_effect: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub ability_log_sd: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub error_log_sd: Option<f64>,
    #[arg(long, value_enum)]
    pub design: Option<StudyDesignArg>,
    /// Worker threads (defaults to the number of CPUs). Results do not
    /// depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub seed: u64,
    /// Write the long-format CSV here instead of embedding the records in
    /// the JSON output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Lmm,
    Ols,
    Ratio,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, value_enum, default_value = "lmm")]
    pub estimator: EstimatorArg,
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(payload) => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{payload}").and_then(|_| out.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
                _ => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
