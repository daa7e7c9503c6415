//! Run configuration: JSON file values, then command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use csccs_core::exposure_design::DEFAULT_TAU_DAYS;
use csccs_core::ingest::IngestConfig;
use csccs_core::lasso_solver::{DEFAULT_N_LAMBDAS, DEFAULT_TARGET_SUPPORT};
use csccs_core::pipeline::{DEFAULT_MIN_COUNT, DEFAULT_TOP_K};
use csccs_core::pm_baseline::DEFAULT_WINDOW_DAYS;
use csccs_core::synth_gen::{Confounding, SynthConfig};
use csccs_core::{DedupePolicy, EraMode, FitConfig, Model, NegativeMode, Selection};
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub prescriptions: Option<PathBuf>,
    pub measurements: Option<PathBuf>,
    pub delimiter: char,
    pub date_format: String,
    pub dedupe: DedupePolicy,
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig {
            prescriptions: None,
            measurements: None,
            delimiter: ',',
            date_format: csccs_core::ehr_model::ISO_DATE.to_string(),
            dedupe: DedupePolicy::Strict,
        }
    }
}

impl InputConfig {
    pub fn has_data(&self) -> bool {
        self.prescriptions.is_some() || self.measurements.is_some()
    }

    pub fn ingest_config(&self) -> anyhow::Result<IngestConfig> {
        let (Some(p), Some(m)) = (&self.prescriptions, &self.measurements) else {
            return Err(UsageError("both --prescriptions and --measurements are required".into()).into());
        };
        if !self.delimiter.is_ascii() {
            return Err(UsageError(format!("delimiter `{}` is not ASCII", self.delimiter)).into());
        }
        let mut cfg = IngestConfig::new(p, m);
        cfg.delimiter = self.delimiter as u8;
        cfg.date_format = self.date_format.clone();
        cfg.dedupe_policy = self.dedupe;
        Ok(cfg)
    }

    fn apply(&mut self, args: &InputArgs) {
        if let Some(p) = &args.prescriptions {
            self.prescriptions = Some(p.clone());
        }
        if let Some(m) = &args.measurements {
            self.measurements = Some(m.clone());
        }
        if let Some(d) = args.delimiter {
            self.delimiter = d;
        }
        if let Some(f) = &args.date_format {
            self.date_format = f.clone();
        }
        if let Some(d) = args.dedupe {
            self.dedupe = match d {
                DedupeArg::Strict => DedupePolicy::Strict,
                DedupeArg::Mean => DedupePolicy::Mean,
            };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub model: Model,
    pub tau_days: i64,
    pub lambda: Option<f64>,
    pub target_support: Option<usize>,
    pub n_lambdas: usize,
    pub top_k: usize,
    pub min_count: u32,
    pub standardize: bool,
    pub window_days: i32,
    pub dump_design: bool,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            model: Model::Csccs,
            tau_days: DEFAULT_TAU_DAYS,
            lambda: None,
            target_support: None,
            n_lambdas: DEFAULT_N_LAMBDAS,
            top_k: DEFAULT_TOP_K,
            min_count: DEFAULT_MIN_COUNT,
            standardize: false,
            window_days: DEFAULT_WINDOW_DAYS,
            dump_design: false,
        }
    }
}

impl FitSection {
    pub fn fit_config(&self) -> anyhow::Result<FitConfig> {
        let selection = match (self.lambda, self.target_support) {
            (Some(_), Some(_)) => return Err(UsageError("set either lambda or target_support, not both".into()).into()),
            (Some(l), None) => Selection::Lambda(l),
            (None, t) => Selection::TargetSupport(t.unwrap_or(DEFAULT_TARGET_SUPPORT)),
        };
        let mut cfg = FitConfig::new(self.model);
        cfg.tau_days = self.tau_days;
        cfg.selection = selection;
        cfg.n_lambdas = self.n_lambdas;
        cfg.min_count = self.min_count;
        cfg.standardize = self.standardize;
        cfg.window_days = self.window_days;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub ranking: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub k: Vec<usize>,
    pub universe: Vec<PathBuf>,
    pub negatives: NegativeMode,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            ranking: None,
            labels: None,
            k: vec![5, 10, 20, 40],
            universe: Vec::new(),
            negatives: NegativeMode::AllOthers,
        }
    }
}

/// Everything one invocation needs. Serialized into the output directory
/// as `effective-config.json`; the thread count and the output directory are
/// left out so that runs differing only in those produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub input: InputConfig,
    pub era_mode: EraMode,
    pub fit: FitSection,
    pub evaluate: EvaluateSection,
    pub simulate: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: SynthConfig::default().seed,
            out: None,
            input: InputConfig::default(),
            era_mode: EraMode::Changepoint,
            fit: FitSection::default(),
            evaluate: EvaluateSection::default(),
            simulate: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn out_dir(&self) -> anyhow::Result<&Path> {
        match &self.out {
            Some(p) => Ok(p),
            None => Err(UsageError("--out is required".into()).into()),
        }
    }

    fn apply_out(&mut self, out: &Option<PathBuf>) {
        if let Some(o) = out {
            self.out = Some(o.clone());
        }
    }

    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.simulate.seed = self.seed;
    }

    pub fn apply_data(&mut self, args: &DataArgs) {
        self.input.apply(&args.input);
        if let Some(m) = args.era_mode {
            self.era_mode = match m {
                EraModeArg::Changepoint => EraMode::Changepoint,
                EraModeArg::Cdm30 => EraMode::Cdm30,
            };
        }
        self.apply_out(&args.out);
    }

    pub fn apply_fit(&mut self, args: &FitArgs) {
        self.apply_data(&args.data);
        let f = &mut self.fit;
        if let Some(m) = args.model {
            f.model = match m {
                ModelArg::Csccs => Model::Csccs,
                ModelArg::Csccsa => Model::Csccsa,
                ModelArg::Pm => Model::Pm,
            };
        }
        if let Some(t) = args.tau_days {
            f.tau_days = t;
        }
        if let Some(l) = args.lambda {
            f.lambda = Some(l);
            f.target_support = None;
        }
        if let Some(t) = args.target_support {
            f.target_support = Some(t);
            f.lambda = None;
        }
        if let Some(n) = args.n_lambdas {
            f.n_lambdas = n;
        }
        if let Some(k) = args.top_k {
            f.top_k = k;
        }
        if let Some(c) = args.min_count {
            f.min_count = c;
        }
        if let Some(w) = args.window_days {
            f.window_days = w;
        }
        f.standardize |= args.standardize;
        f.dump_design |= args.dump_design;
    }

    pub fn apply_pm(&mut self, args: &PmArgs) {
        self.input.apply(&args.input);
        self.apply_out(&args.out);
        self.fit.model = Model::Pm;
        if let Some(w) = args.window_days {
            self.fit.window_days = w;
        }
        if let Some(c) = args.min_count {
            self.fit.min_count = c;
        }
        if let Some(k) = args.top_k {
            self.fit.top_k = k;
        }
    }

    pub fn apply_evaluate(&mut self, args: &EvaluateArgs) {
        self.apply_out(&args.out);
        let e = &mut self.evaluate;
        if let Some(r) = &args.ranking {
            e.ranking = Some(r.clone());
        }
        if let Some(l) = &args.labels {
            e.labels = Some(l.clone());
        }
        if let Some(k) = &args.k {
            e.k = k.clone();
        }
        if !args.universe.is_empty() {
            e.universe = args.universe.clone();
        }
        if let Some(n) = args.negatives {
            e.negatives = match n {
                NegativesArg::AllOthers => NegativeMode::AllOthers,
                NegativesArg::LabeledOnly => NegativeMode::LabeledOnly,
                NegativesArg::ExcludeIncrease => NegativeMode::ExcludeIncrease,
            };
        }
    }

    pub fn apply_report(&mut self, args: &ReportArgs) {
        self.apply_out(&args.out);
        self.input.apply(&args.input);
        if let Some(r) = &args.ranking {
            self.evaluate.ranking = Some(r.clone());
        }
        if let Some(l) = &args.labels {
            self.evaluate.labels = Some(l.clone());
        }
        if let Some(k) = args.top_k {
            self.fit.top_k = k;
        }
        if let Some(w) = args.window_days {
            self.fit.window_days = w;
        }
    }

    pub fn apply_simulate(&mut self, args: &SimulateArgs) -> anyhow::Result<()> {
        self.apply_out(&args.out);
        let s = &mut self.simulate;
        if let Some(n) = args.patients {
            s.n_patients = n;
        }
        if let Some(m) = args.drugs {
            s.n_drugs = m;
        }
        if let Some(sd) = args.noise_sd {
            s.noise_sd = sd;
        }
        if let Some(scenario) = args.scenario {
            if args.causal == args.bystander && scenario != ScenarioArg::None {
                bail!(UsageError("--causal and --bystander must differ".into()));
            }
            s.confounding = match scenario {
                ScenarioArg::None => Confounding::None,
                ScenarioArg::Bystander => Confounding::Bystander {
                    causal: args.causal,
                    bystander: args.bystander,
                    co_rate: args.rate,
                },
                ScenarioArg::Comorbidity => Confounding::Comorbidity {
                    causal: args.causal,
                    bystander: args.bystander,
                    rate: args.rate,
                },
            };
        }
        Ok(())
    }
}
