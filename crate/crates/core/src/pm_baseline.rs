//! Pairwise Mean baseline: average post-minus-pre change of the measurement
//! around each patient's first prescription of a drug.

use rayon::prelude::*;
use serde::Serialize;

use crate::ehr_model::{Cohort, Day, DrugId, Measurement};

/// Two years.
pub const DEFAULT_WINDOW_DAYS: i32 = 730;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PmScore {
    pub drug: DrugId,
    /// Mean of `after − before` window means; negative means the measurement fell.
    pub score: f64,
    /// Patients with measurements in both windows.
    pub count: u32,
}

fn window_mean(ms: &[Measurement], from: Day, to: Day) -> Option<f64> {
    // inclusive [from, to]
    let lo = ms.partition_point(|m| m.date < from);
    let hi = ms.partition_point(|m| m.date <= to);
    (hi > lo).then(|| ms[lo..hi].iter().map(|m| m.value).sum::<f64>() / (hi - lo) as f64)
}

/// Score of one drug, or `None` when no patient has both windows populated.
///
/// Before is `[first − window, first)`, after is `(first, first + window]`;
/// measurements on the first-prescription day fall in neither.
pub fn pm_score(cohort: &Cohort, drug: DrugId, window_days: i32) -> Option<PmScore> {
    let mut total = 0.0;
    let mut count = 0u32;
    for patient in cohort.patients() {
        let Some(first) = patient.prescriptions.get(&drug).map(|d| d[0]) else {
            continue;
        };
        let ms = &patient.measurements;
        let before = window_mean(ms, first - window_days, first - 1);
        let after = window_mean(ms, first + 1, first + window_days);
        if let (Some(b), Some(a)) = (before, after) {
            total += a - b;
            count += 1;
        }
    }
    (count > 0).then(|| PmScore {
        drug,
        score: total / f64::from(count),
        count,
    })
}

/// Scores for every drug with at least one qualifying patient, by drug index.
pub fn pm_scores(cohort: &Cohort, window_days: i32) -> Vec<PmScore> {
    assert!(window_days > 0, "window must be positive");
    let drugs: Vec<DrugId> = cohort.drug_ids().collect();
    drugs
        .par_iter()
        .filter_map(|&d| pm_score(cohort, d, window_days))
        .collect()
}
