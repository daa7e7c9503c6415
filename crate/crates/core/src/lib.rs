//! Self-controlled regression estimators for finding drugs that shift a
//! continuous clinical measurement, from longitudinal prescription and
//! measurement records.
//!
//! The pipeline:
//!
//! 1. [`ingest`] reads prescription and measurement CSVs and
//!    [`ehr_model::validate_cohort`] builds the case-series [`Cohort`].
//! 2. [`era_builder`] turns prescriptions into drug eras, with per-drug era
//!    lengths derived from change points in inter-prescription gaps.
//! 3. [`exposure_design`] marks exposure at each measurement and assembles a
//!    within-patient centered design or an adjacent-difference design.
//! 4. [`lasso_solver`] fits the L1-penalized model along a λ path.
//! 5. [`pm_baseline`] and [`evaluation`] provide the Pairwise Mean baseline,
//!    ROC/AUROC, precision@K and the ensemble ranking.
//!
//! [`synth_gen`] produces data with planted effects for end-to-end checks.

pub mod ehr_model;
pub mod era_builder;
pub mod error;
pub mod evaluation;
pub mod exposure_design;
pub mod ingest;
pub mod lasso_solver;
pub mod pipeline;
pub mod pm_baseline;
pub mod report;
pub mod synth_gen;

pub use ehr_model::{validate_cohort, Cohort, CohortConfig, Day, DedupePolicy, DrugId, PatientId, RawEvents};
pub use era_builder::{DrugEra, EraMode, EraParams};
pub use error::{Error, Result};
pub use evaluation::{EvalResult, LabelSet, NegativeMode, RankedList};
pub use exposure_design::{DesignKind, DesignMatrix, ExposureMatrix};
pub use lasso_solver::{LassoSolution, PathResult};
pub use pipeline::{FitConfig, Model, Selection};
pub use report::CoefficientReport;
