//! End-to-end wiring: cohort → eras → exposure → design → fit → report.

use serde::{Deserialize, Serialize};

use crate::ehr_model::{Cohort, DrugId};
use crate::era_builder::{build_eras, estimate_era_params, DrugEra, EraMode, EraParams};
use crate::error::Error;
use crate::evaluation::{ensemble_rank, RankedList};
use crate::exposure_design::{
    build_csccs_design, build_csccsa_design, compute_exposure, DesignKind, DesignMatrix, ExposureMatrix,
    DEFAULT_TAU_DAYS,
};
use crate::lasso_solver::{
    fit_lasso, lambda_max, lasso_path_with, LassoProblem, PathOptions, DEFAULT_MAX_SWEEPS, DEFAULT_N_LAMBDAS,
    DEFAULT_TARGET_SUPPORT, DEFAULT_TOLERANCE,
};
use crate::pm_baseline::{pm_scores, DEFAULT_WINDOW_DAYS};
use crate::report::CoefficientReport;

pub const DEFAULT_TOP_K: usize = 40;
pub const DEFAULT_MIN_COUNT: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Csccs,
    Csccsa,
    Pm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    Lambda(f64),
    TargetSupport(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub model: Model,
    pub tau_days: i64,
    pub selection: Selection,
    pub n_lambdas: usize,
    pub min_count: u32,
    pub standardize: bool,
    pub window_days: i32,
    pub tolerance: f64,
    pub max_sweeps: u32,
}

impl FitConfig {
    pub fn new(model: Model) -> Self {
        FitConfig {
            model,
            tau_days: DEFAULT_TAU_DAYS,
            selection: Selection::TargetSupport(DEFAULT_TARGET_SUPPORT),
            n_lambdas: DEFAULT_N_LAMBDAS,
            min_count: DEFAULT_MIN_COUNT,
            standardize: false,
            window_days: DEFAULT_WINDOW_DAYS,
            tolerance: DEFAULT_TOLERANCE,
            max_sweeps: DEFAULT_MAX_SWEEPS,
        }
    }
}

/// Cohort with its eras and exposure matrix.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cohort: Cohort,
    pub era_params: EraParams,
    pub eras: Vec<DrugEra>,
    pub exposure: ExposureMatrix,
}

pub fn prepare(cohort: Cohort, era_mode: EraMode) -> Prepared {
    let era_params = match era_mode {
        EraMode::Changepoint => estimate_era_params(&cohort),
        EraMode::Cdm30 => EraParams::cdm_default(cohort.n_drugs()),
    };
    let eras = build_eras(&cohort, &era_params);
    let exposure = compute_exposure(&cohort, &eras);
    Prepared {
        cohort,
        era_params,
        eras,
        exposure,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitMetrics {
    pub model: Model,
    pub n_patients: usize,
    pub n_rows: usize,
    pub n_eligible_drugs: usize,
    pub lambda_max: Option<f64>,
    pub selected_lambda: Option<f64>,
    pub support: usize,
    pub target_support: Option<usize>,
    pub target_reached: Option<bool>,
    pub kkt_violation: Option<f64>,
    pub sweeps: Option<u32>,
    pub converged: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub report: CoefficientReport,
    pub metrics: FitMetrics,
    pub design: Option<DesignMatrix>,
}

impl FitOutcome {
    /// Drugs with a nonzero score, in ranked order.
    pub fn support(&self, cohort: &Cohort) -> Vec<DrugId> {
        self.report
            .entries
            .iter()
            .filter(|e| e.score != 0.0)
            .filter_map(|e| cohort.drug_id(&e.drug))
            .collect()
    }
}

pub fn build_design(prepared: &Prepared, kind: DesignKind, tau_days: i64) -> Result<DesignMatrix, Error> {
    Ok(match kind {
        DesignKind::Csccs => build_csccs_design(&prepared.cohort, &prepared.exposure)?,
        DesignKind::Csccsa => build_csccsa_design(&prepared.cohort, &prepared.exposure, tau_days)?,
    })
}

pub fn fit_model(prepared: &Prepared, config: &FitConfig) -> Result<FitOutcome, Error> {
    let kind = match config.model {
        Model::Pm => return Ok(fit_pm(prepared, config)),
        Model::Csccs => DesignKind::Csccs,
        Model::Csccsa => DesignKind::Csccsa,
    };
    let mut design = build_design(prepared, kind, config.tau_days)?;
    design.filter_min_count(config.min_count);
    let n_eligible = design.excluded.iter().filter(|e| !**e).count();

    let (solution, lmax, target, reached) = match config.selection {
        Selection::Lambda(lambda) => {
            let problem = LassoProblem {
                design: &design,
                lambda,
                tolerance: config.tolerance,
                max_sweeps: config.max_sweeps,
            };
            (fit_lasso(&problem)?, lambda_max(&design), None, None)
        }
        Selection::TargetSupport(target) => {
            let path = lasso_path_with(
                &design,
                &PathOptions {
                    n_lambdas: config.n_lambdas,
                    target_support: target,
                    tolerance: config.tolerance,
                    max_sweeps: config.max_sweeps,
                    standardize: config.standardize,
                    ..PathOptions::default()
                },
            )?;
            let chosen = path.selected_solution().clone();
            (chosen, path.lambda_max, Some(target), Some(path.target_reached))
        }
    };

    let report = CoefficientReport::from_lasso(&design, &solution.beta, &prepared.cohort);
    let metrics = FitMetrics {
        model: config.model,
        n_patients: design.n_patients,
        n_rows: design.n_rows(),
        n_eligible_drugs: n_eligible,
        lambda_max: Some(lmax),
        selected_lambda: Some(solution.lambda),
        support: solution.support(),
        target_support: target,
        target_reached: reached,
        kkt_violation: Some(solution.kkt_violation),
        sweeps: Some(solution.sweeps),
        converged: Some(solution.converged),
    };
    Ok(FitOutcome {
        report,
        metrics,
        design: Some(design),
    })
}

fn fit_pm(prepared: &Prepared, config: &FitConfig) -> FitOutcome {
    let scores = pm_scores(&prepared.cohort, config.window_days);
    let report = CoefficientReport::from_pm(&scores, &prepared.cohort, config.min_count);
    let metrics = FitMetrics {
        model: Model::Pm,
        n_patients: prepared.cohort.n_patients(),
        n_rows: prepared.cohort.n_measurements(),
        n_eligible_drugs: report.entries.len(),
        lambda_max: None,
        selected_lambda: None,
        support: report.entries.iter().filter(|e| e.score != 0.0).count(),
        target_support: None,
        target_reached: None,
        kkt_violation: None,
        sweeps: None,
        converged: None,
    };
    FitOutcome {
        report,
        metrics,
        design: None,
    }
}

/// PM re-ranking of the top `top_k` selected drugs of a lasso fit.
pub fn ensemble(prepared: &Prepared, outcome: &FitOutcome, top_k: usize, window_days: i32) -> RankedList {
    let support: Vec<DrugId> = outcome.support(&prepared.cohort).into_iter().take(top_k).collect();
    ensemble_rank(&support, &prepared.cohort, window_days)
}
