use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "csccs",
    version,
    about = "Screen drugs for effects on a continuous lab measurement"
)]
pub struct Cli {
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON run configuration. Flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort with planted effects.
    Simulate(SimulateArgs),
    /// Estimate era parameters and write the drug eras.
    BuildEras(DataArgs),
    /// Fit a model and write ranked coefficients.
    Fit(FitArgs),
    /// Score drugs with the Pairwise Mean baseline.
    Pm(PmArgs),
    /// Score a ranking against labels.
    Evaluate(EvaluateArgs),
    /// Top-K shortlist with labels, optionally re-ranked by Pairwise Mean.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Csccs,
    Csccsa,
    Pm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EraModeArg {
    Changepoint,
    Cdm30,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DedupeArg {
    Strict,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    None,
    Bystander,
    Comorbidity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NegativesArg {
    AllOthers,
    LabeledOnly,
    ExcludeIncrease,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Prescription CSV (patient_id,drug,date).
    #[arg(long)]
    pub prescriptions: Option<PathBuf>,
    /// Measurement CSV (patient_id,date,value).
    #[arg(long)]
    pub measurements: Option<PathBuf>,
    /// Field delimiter of both CSVs.
    #[arg(long)]
    pub delimiter: Option<char>,
    /// chrono format string of the date columns.
    #[arg(long)]
    pub date_format: Option<String>,
    /// Same-day measurements: reject (strict) or average (mean).
    #[arg(long, value_enum)]
    pub dedupe: Option<DedupeArg>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum)]
    pub era_mode: Option<EraModeArg>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    /// Longest gap in days between differenced measurements (csccsa).
    #[arg(long)]
    pub tau_days: Option<i64>,
    /// Fit at this penalty instead of searching the path.
    #[arg(long, conflicts_with = "target_support")]
    pub lambda: Option<f64>,
    /// Pick the path point whose support is closest to this size.
    #[arg(long)]
    pub target_support: Option<usize>,
    #[arg(long)]
    pub n_lambdas: Option<usize>,
    /// Length of the shortlist.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Drop drugs with fewer exposed measurements (patients for pm).
    #[arg(long)]
    pub min_count: Option<u32>,
    /// Run the path on unit-norm columns.
    #[arg(long)]
    pub standardize: bool,
    /// Pairwise Mean window in days.
    #[arg(long)]
    pub window_days: Option<i32>,
    /// Also write design.mtx and response.txt.
    #[arg(long)]
    pub dump_design: bool,
}

#[derive(Debug, Args)]
pub struct PmArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub window_days: Option<i32>,
    #[arg(long)]
    pub min_count: Option<u32>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Ranking TSV written by `fit` or `pm`.
    #[arg(long)]
    pub ranking: Option<PathBuf>,
    /// Label CSV (drug,label) with labels `decrease` or `increase`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Precision cutoffs.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Other rankings whose drugs join the evaluated universe.
    #[arg(long)]
    pub universe: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub negatives: Option<NegativesArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Ranking TSV written by `fit`.
    #[arg(long)]
    pub ranking: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// With prescriptions and measurements, re-rank the shortlist by Pairwise Mean.
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub window_days: Option<i32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub patients: Option<usize>,
    #[arg(long)]
    pub drugs: Option<usize>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioArg>,
    /// Causal drug index of a confounding scenario.
    #[arg(long, default_value_t = 0)]
    pub causal: usize,
    /// Bystander drug index of a confounding scenario.
    #[arg(long, default_value_t = 5)]
    pub bystander: usize,
    /// Co-prescription (bystander) or onset (comorbidity) rate.
    #[arg(long, default_value_t = 0.9)]
    pub rate: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
