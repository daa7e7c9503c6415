//! Drug-era construction from prescription dates.
//!
//! Each prescription seeds an era `[date, date + n]`; adjacent eras of one
//! drug in one patient merge while the latter start minus the former end is
//! at most the persistence window. Per-drug `n` and window come either from
//! the fixed 30/30 default or from a two-level change-point analysis of
//! inter-prescription gaps.

pub mod changepoint;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ehr_model::{Cohort, Day, DrugId, PatientId};
use crate::error::ChangePointError;

pub use changepoint::{fit_changepoint, fit_changepoint_with, ChangePointFit, ChangePointOptions};

/// Drugs need this many pooled gaps before their gap series is fitted.
pub const MIN_GAPS: usize = 50;
/// 0.04 year, rounded to whole days.
pub const NON_RECURRENT_DURATION: i32 = 15;
pub const CDM_DEFAULT_DAYS: i32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DrugEra {
    pub patient: PatientId,
    pub drug: DrugId,
    pub start: Day,
    pub end: Day,
}

/// Pooled, ascending day gaps between consecutive prescriptions of one drug.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GapSeries {
    pub drug: DrugId,
    pub gaps: Vec<u32>,
}

impl GapSeries {
    pub fn len(&self) -> usize {
        self.gaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaps.is_empty()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.gaps.iter().map(|&g| f64::from(g)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EraRule {
    pub recurrent: bool,
    pub duration_days: i32,
    pub persistence_window: i32,
}

impl EraRule {
    pub const NON_RECURRENT: EraRule = EraRule {
        recurrent: false,
        duration_days: NON_RECURRENT_DURATION,
        persistence_window: 0,
    };

    pub const CDM_DEFAULT: EraRule = EraRule {
        recurrent: false,
        duration_days: CDM_DEFAULT_DAYS,
        persistence_window: CDM_DEFAULT_DAYS,
    };
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EraMode {
    #[default]
    Changepoint,
    Cdm30,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EraParams {
    pub mode: EraMode,
    /// Rule per drug, indexed by [`DrugId`].
    pub rules: Vec<EraRule>,
    /// Mean change-point value (days) over recurrent drugs.
    pub gamma: Option<f64>,
    /// First-level fit per drug, when the drug had enough gaps.
    pub drug_fits: Vec<Option<ChangePointFit>>,
    /// Fit over the sorted per-drug change-point values.
    pub second_level: Option<ChangePointFit>,
}

impl EraParams {
    pub fn cdm_default(n_drugs: usize) -> Self {
        EraParams {
            mode: EraMode::Cdm30,
            rules: vec![EraRule::CDM_DEFAULT; n_drugs],
            gamma: None,
            drug_fits: vec![None; n_drugs],
            second_level: None,
        }
    }

    pub fn rule(&self, drug: DrugId) -> EraRule {
        self.rules[drug.index()]
    }
}

pub fn compute_gaps(cohort: &Cohort, drug: DrugId) -> GapSeries {
    let mut gaps = Vec::new();
    for patient in cohort.patients() {
        if let Some(dates) = patient.prescriptions.get(&drug) {
            for pair in dates.windows(2) {
                let gap = pair[1] - pair[0];
                assert!(gap >= 1, "prescription dates must be strictly increasing");
                gaps.push(gap as u32);
            }
        }
    }
    gaps.sort_unstable();
    GapSeries { drug, gaps }
}

fn round_half_up(x: f64) -> i32 {
    (x + 0.5).floor() as i32
}

/// Splits recurrent from non-recurrent drugs with a second change-point fit
/// over the ascending per-drug change-point values.
///
/// Drugs absent from `fits` are non-recurrent. Ties in change-point value are
/// ordered by drug index, so the result does not depend on input order.
pub fn classify_recurrent(n_drugs: usize, fits: &[(DrugId, ChangePointFit)]) -> EraParams {
    let mut drug_fits = vec![None; n_drugs];
    for (drug, fit) in fits {
        drug_fits[drug.index()] = Some(*fit);
    }
    let mut params = EraParams {
        mode: EraMode::Changepoint,
        rules: vec![EraRule::NON_RECURRENT; n_drugs],
        gamma: None,
        drug_fits,
        second_level: None,
    };
    if fits.len() < 2 {
        log::warn!(
            "only {} drug(s) with a change-point fit; all drugs treated as non-recurrent",
            fits.len()
        );
        return params;
    }

    let mut sorted: Vec<(f64, DrugId)> = fits.iter().map(|(d, f)| (f.value_at_psi, *d)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let values: Vec<f64> = sorted.iter().map(|s| s.0).collect();

    let n_recurrent = match fit_changepoint(&values) {
        Ok(fit) => {
            params.second_level = Some(fit);
            fit.psi.floor() as usize
        }
        Err(ChangePointError::TooShort { .. }) => largest_jump_split(&values),
        Err(ChangePointError::Degenerate) => {
            log::warn!("all drug change points are equal; all drugs treated as non-recurrent");
            return params;
        }
    };
    if n_recurrent == 0 {
        return params;
    }

    let recurrent = &sorted[..n_recurrent];
    let gamma = recurrent.iter().map(|s| s.0).sum::<f64>() / n_recurrent as f64;
    let days = round_half_up(gamma / 2.0);
    for &(_, drug) in recurrent {
        params.rules[drug.index()] = EraRule {
            recurrent: true,
            duration_days: days,
            persistence_window: days,
        };
    }
    params.gamma = Some(gamma);
    params
}

// Two or three values: the boundary goes at the widest step; all-equal means none.
fn largest_jump_split(values: &[f64]) -> usize {
    values
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] > w[0])
        .max_by(|a, b| (a.1[1] - a.1[0]).total_cmp(&(b.1[1] - b.1[0])).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i + 1)
        .unwrap_or(0)
}

/// Fits every drug with at least [`MIN_GAPS`] gaps and classifies them.
///
/// Per-drug fits run in parallel; the result is identical for any thread count.
pub fn estimate_era_params(cohort: &Cohort) -> EraParams {
    let drugs: Vec<DrugId> = cohort.drug_ids().collect();
    let fits: Vec<(DrugId, ChangePointFit)> = drugs
        .par_iter()
        .filter_map(|&drug| {
            let series = compute_gaps(cohort, drug);
            if series.len() < MIN_GAPS {
                return None;
            }
            match fit_changepoint(&series.as_f64()) {
                Ok(fit) => Some((drug, fit)),
                Err(err) => {
                    log::debug!("drug {}: {err}", cohort.drug_name(drug));
                    None
                }
            }
        })
        .collect();
    classify_recurrent(cohort.n_drugs(), &fits)
}

/// Merges the seeded eras of one (patient, drug) stream.
///
/// `dates` must be ascending. The return is the merge fixpoint: every pair
/// of consecutive eras is separated by more than the persistence window.
pub fn merge_eras(dates: &[Day], rule: EraRule) -> Vec<(Day, Day)> {
    let mut eras: Vec<(Day, Day)> = Vec::new();
    for &date in dates {
        let seeded = (date, date + rule.duration_days);
        match eras.last_mut() {
            Some(last) if seeded.0 - last.1 <= rule.persistence_window => {
                last.1 = last.1.max(seeded.1);
            }
            _ => eras.push(seeded),
        }
    }
    eras
}

/// Eras for every (patient, drug), ordered by patient, drug and start.
pub fn build_eras(cohort: &Cohort, params: &EraParams) -> Vec<DrugEra> {
    let mut out = Vec::new();
    for patient in cohort.patients() {
        for (&drug, dates) in &patient.prescriptions {
            out.extend(
                merge_eras(dates, params.rule(drug))
                    .into_iter()
                    .map(|(start, end)| DrugEra {
                        patient: patient.id,
                        drug,
                        start,
                        end,
                    }),
            );
        }
    }
    out
}
