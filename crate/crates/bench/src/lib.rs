//! Shared fixtures for the benchmarks.

use csccs_core::pipeline::{prepare, Prepared};
use csccs_core::synth_gen::{generate, SynthConfig};
use csccs_core::{validate_cohort, CohortConfig, EraMode};

/// Synthetic cohort with change-point eras already built.
pub fn prepared_cohort(n_patients: usize, n_drugs: usize) -> Prepared {
    let config = SynthConfig {
        n_patients,
        n_drugs,
        ..SynthConfig::default()
    };
    let data = generate(&config).expect("valid synthetic config");
    let cohort = validate_cohort(data.raw_events(), &CohortConfig::default()).expect("generated cohort validates");
    prepare(cohort, EraMode::Changepoint)
}

/// Sorted gap-like series: a flat run followed by a steep tail.
pub fn gap_series(len: usize) -> Vec<f64> {
    let knee = len * 9 / 10;
    (0..len)
        .map(|i| {
            let wobble = ((i * 7919) % 13) as f64 * 0.1;
            if i < knee {
                30.0 + wobble
            } else {
                30.0 + 25.0 * (i - knee) as f64 + wobble
            }
        })
        .collect()
}
