//! Small random cohorts for the solver checks.

use csccs_core::ehr_model::{MeasurementRecord, PrescriptionRecord};
use csccs_core::era_builder::build_eras;
use csccs_core::exposure_design::compute_exposure;
use csccs_core::{validate_cohort, Cohort, CohortConfig, Day, DrugId, EraParams, ExposureMatrix, RawEvents};
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub struct Instance {
    pub cohort: Cohort,
    pub exposure: ExposureMatrix,
}

impl Instance {
    /// Raw 0/1 exposure over all cohort measurements, in cohort row order.
    pub fn raw_exposure(&self) -> DMatrix<f64> {
        let m = self.cohort.n_drugs();
        DMatrix::from_fn(self.exposure.n_rows(), m, |r, c| {
            if self.exposure.is_exposed(r, DrugId(c as u32)) {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn patient_of_row(&self) -> Vec<usize> {
        self.cohort
            .patients()
            .iter()
            .flat_map(|p| std::iter::repeat_n(p.id.index(), p.measurements.len()))
            .collect()
    }

    pub fn response(&self) -> Vec<f64> {
        self.cohort
            .patients()
            .iter()
            .flat_map(|p| p.measurements.iter().map(|m| m.value))
            .collect()
    }
}

/// Up to `max_patients` patients with 1..=`max_occasions` measurements
/// each and `n_drugs` drugs under the 30-day era rule. With `twin`, the
/// second drug is prescribed exactly when the first is.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    max_patients: usize,
    max_occasions: usize,
    n_drugs: usize,
    twin: bool,
) -> Option<Instance> {
    const SPAN: usize = 400;
    let baseline = Normal::new(100.0, 15.0).expect("valid normal");
    let noise = Normal::new(0.0, 5.0).expect("valid normal");
    let n_patients = rng.random_range(2..=max_patients);
    let mut raw = RawEvents::default();
    for p in 0..n_patients {
        let patient = format!("p{p:02}");
        let alpha = baseline.sample(rng);
        let j = rng.random_range(1..=max_occasions);
        for day in sample(rng, SPAN, j) {
            raw.measurements.push(MeasurementRecord {
                patient: patient.clone(),
                date: Day(day as i32),
                value: alpha + noise.sample(rng),
            });
        }
        let mut first_drug_days = Vec::new();
        for m in 0..n_drugs {
            let days: Vec<i32> = if twin && m == 1 {
                first_drug_days.clone()
            } else if rng.random_bool(0.6) {
                let k = rng.random_range(1..=3);
                sample(rng, SPAN, k).into_iter().map(|d| d as i32).collect()
            } else {
                Vec::new()
            };
            if m == 0 {
                first_drug_days = days.clone();
            }
            for d in days {
                raw.prescriptions.push(PrescriptionRecord {
                    patient: patient.clone(),
                    drug: format!("d{m:02}"),
                    date: Day(d),
                });
            }
        }
    }
    let cohort = validate_cohort(raw, &CohortConfig::default()).ok()?;
    if cohort.n_drugs() == 0 {
        return None;
    }
    let params = EraParams::cdm_default(cohort.n_drugs());
    let eras = build_eras(&cohort, &params);
    let exposure = compute_exposure(&cohort, &eras);
    Some(Instance { cohort, exposure })
}
