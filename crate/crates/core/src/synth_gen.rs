//! Synthetic prescription and measurement data with planted drug effects.
//!
//! Each patient has a baseline `α_i`; every measurement is
//! `α_i + Σ_m β*_m x_ijm + ε_ij` with `ε ~ N(0, σ²)`, where `x` comes from
//! eras built over the generated prescriptions with the true era rules.
//! Recurrent drugs are prescribed in courses with log-normal refill gaps,
//! non-recurrent drugs as sparse isolated prescriptions.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::ehr_model::{Day, MeasurementRecord, PrescriptionRecord, RawEvents};
use crate::era_builder::{merge_eras, EraRule, NON_RECURRENT_DURATION};
use crate::error::{Error, SynthError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedEffect {
    pub drug: usize,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Confounding {
    #[default]
    None,
    /// `bystander` is prescribed on the same days as `causal` for a
    /// `co_rate` share of `causal` users, and rarely on its own.
    Bystander {
        causal: usize,
        bystander: usize,
        co_rate: f64,
    },
    /// A `rate` share of `causal` users later start a `bystander` course.
    Comorbidity { causal: usize, bystander: usize, rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_patients: usize,
    pub n_drugs: usize,
    pub start: Day,
    pub span_days: i32,
    pub baseline_mean: f64,
    pub baseline_sd: f64,
    pub noise_sd: f64,
    pub effects: Vec<PlantedEffect>,
    pub measurements_per_year: f64,
    /// Share of drugs (the lowest indices) that are recurrent.
    pub recurrent_fraction: f64,
    /// Probability that a patient uses any given drug.
    pub user_fraction: f64,
    pub recurrent_gap_median: f64,
    pub recurrent_gap_sigma: f64,
    pub course_days_mean: f64,
    pub max_courses: u32,
    pub non_recurrent_per_year: f64,
    /// True era length and persistence window of recurrent drugs.
    pub recurrent_era_days: i32,
    pub confounding: Confounding,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            n_patients: 2000,
            n_drugs: 100,
            start: Day::from_ymd(2000, 1, 1).expect("valid date"),
            span_days: 3650,
            baseline_mean: 110.0,
            baseline_sd: 15.0,
            noise_sd: 10.0,
            effects: [-25.0, -22.0, -30.0, -20.0, -27.0]
                .iter()
                .enumerate()
                .map(|(drug, &beta)| PlantedEffect { drug, beta })
                .collect(),
            measurements_per_year: 2.0,
            recurrent_fraction: 0.3,
            user_fraction: 0.08,
            recurrent_gap_median: 30.0,
            recurrent_gap_sigma: 0.25,
            course_days_mean: 365.0,
            max_courses: 2,
            non_recurrent_per_year: 0.3,
            recurrent_era_days: 30,
            confounding: Confounding::None,
        }
    }
}

impl SynthConfig {
    pub fn n_recurrent(&self) -> usize {
        (self.recurrent_fraction * self.n_drugs as f64).round() as usize
    }

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: &str| Err(SynthError::InvalidConfig(msg.to_string()));
        if self.n_drugs == 0 {
            return bad("n_drugs must be positive");
        }
        if self.span_days <= 0 {
            return bad("span_days must be positive");
        }
        if !(0.0..=1.0).contains(&self.recurrent_fraction) || !(0.0..=1.0).contains(&self.user_fraction) {
            return bad("fractions must lie in [0, 1]");
        }
        let rates = [
            self.recurrent_gap_median,
            self.course_days_mean,
            self.non_recurrent_per_year,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad("rates must be positive");
        }
        if !(self.noise_sd >= 0.0 && self.baseline_sd >= 0.0 && self.recurrent_gap_sigma >= 0.0) {
            return bad("standard deviations must be non-negative");
        }
        if self.max_courses == 0 || self.recurrent_era_days < 0 {
            return bad("max_courses must be positive and recurrent_era_days non-negative");
        }
        if self.effects.len() > self.n_drugs || self.effects.iter().any(|e| e.drug >= self.n_drugs) {
            return bad("planted effect refers to an unknown drug");
        }
        match self.confounding {
            Confounding::None => {}
            Confounding::Bystander {
                causal,
                bystander,
                co_rate: rate,
            }
            | Confounding::Comorbidity {
                causal,
                bystander,
                rate,
            } => {
                if causal >= self.n_drugs || bystander >= self.n_drugs || causal == bystander {
                    return bad("confounding drugs must be two distinct known drugs");
                }
                if !(0.0..=1.0).contains(&rate) {
                    return bad("confounding rate must lie in [0, 1]");
                }
            }
        }
        if self.n_patients == 0 || self.measurements_per_year.is_nan() || self.measurements_per_year <= 0.0 {
            return Err(SynthError::NoMeasurements);
        }
        Ok(())
    }
}

pub fn drug_name(idx: usize) -> String {
    format!("drug_{idx:03}")
}

pub fn patient_name(idx: usize) -> String {
    format!("p{idx:05}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthTruth {
    /// Planted coefficient per drug name; drugs absent here have no effect.
    pub effects: BTreeMap<String, f64>,
    pub recurrent: BTreeMap<String, bool>,
    pub baselines: BTreeMap<String, f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub prescriptions: Vec<PrescriptionRecord>,
    pub measurements: Vec<MeasurementRecord>,
    /// True eras per (patient, drug) index pair, used to generate exposures.
    pub eras: BTreeMap<(usize, usize), Vec<(Day, Day)>>,
    pub truth: SynthTruth,
}

impl SynthData {
    pub fn raw_events(&self) -> RawEvents {
        RawEvents {
            prescriptions: self.prescriptions.clone(),
            measurements: self.measurements.clone(),
        }
    }

    pub fn prescriptions_csv(&self) -> String {
        let mut out = String::from("patient_id,drug,date\n");
        for r in &self.prescriptions {
            out.push_str(&format!("{},{},{}\n", r.patient, r.drug, r.date));
        }
        out
    }

    pub fn measurements_csv(&self) -> String {
        let mut out = String::from("patient_id,date,value\n");
        for r in &self.measurements {
            out.push_str(&format!("{},{},{}\n", r.patient, r.date, r.value));
        }
        out
    }

    pub fn truth_json(&self) -> String {
        serde_json::to_string_pretty(&self.truth).expect("truth serializes") + "\n"
    }

    /// `drug,label` rows for planted effects: negative → decrease, positive → increase.
    pub fn labels_csv(&self) -> String {
        let mut out = String::from("drug,label\n");
        for (drug, beta) in &self.truth.effects {
            let label = if *beta < 0.0 { "decrease" } else { "increase" };
            out.push_str(&format!("{drug},{label}\n"));
        }
        out
    }

    /// Writes `prescriptions.csv`, `measurements.csv`, `truth.json` and `labels.csv`.
    pub fn write_to(&self, dir: &Path) -> Result<(), Error> {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let files = [
            ("prescriptions.csv", self.prescriptions_csv()),
            ("measurements.csv", self.measurements_csv()),
            ("truth.json", self.truth_json()),
            ("labels.csv", self.labels_csv()),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            fs::File::create(&path)
                .and_then(|mut f| f.write_all(body.as_bytes()))
                .map_err(|source| Error::Io { path, source })?;
        }
        Ok(())
    }
}

struct Sampler {
    rng: ChaCha8Rng,
    gap: LogNormal<f64>,
    course: Exp<f64>,
}

impl Sampler {
    fn day_in(&mut self, start: Day, span: i32) -> Day {
        start + self.rng.random_range(0..=span)
    }

    fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        Poisson::new(mean).expect("positive mean").sample(&mut self.rng) as u64
    }

    fn recurrent_course(&mut self, from: Day, last: Day) -> Vec<Day> {
        let length = self.course.sample(&mut self.rng).round() as i32;
        let stop = (from + length).min(last);
        let mut dates = vec![from];
        let mut day = from;
        loop {
            let gap = (self.gap.sample(&mut self.rng).round() as i32).max(1);
            day = day + gap;
            if day > stop {
                break;
            }
            dates.push(day);
        }
        dates
    }
}

/// Generates one synthetic data set; identical configs give identical output.
pub fn generate(config: &SynthConfig) -> Result<SynthData, SynthError> {
    config.validate()?;
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        gap: LogNormal::new(config.recurrent_gap_median.ln(), config.recurrent_gap_sigma)
            .map_err(|e| SynthError::InvalidConfig(e.to_string()))?,
        course: Exp::new(1.0 / config.course_days_mean).map_err(|e| SynthError::InvalidConfig(e.to_string()))?,
    };
    let noise = Normal::new(0.0, config.noise_sd).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let baseline =
        Normal::new(config.baseline_mean, config.baseline_sd).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;

    let n_rec = config.n_recurrent();
    let last_day = config.start + config.span_days;
    let years = f64::from(config.span_days) / 365.25;
    let mut beta = vec![0.0; config.n_drugs];
    for e in &config.effects {
        beta[e.drug] = e.beta;
    }
    let rule_for = |drug: usize| {
        if drug < n_rec {
            EraRule {
                recurrent: true,
                duration_days: config.recurrent_era_days,
                persistence_window: config.recurrent_era_days,
            }
        } else {
            EraRule {
                recurrent: false,
                duration_days: NON_RECURRENT_DURATION,
                persistence_window: 0,
            }
        }
    };

    let (causal, bystander) = match config.confounding {
        Confounding::None => (None, None),
        Confounding::Bystander { causal, bystander, .. } | Confounding::Comorbidity { causal, bystander, .. } => {
            (Some(causal), Some(bystander))
        }
    };

    let mut prescriptions = Vec::new();
    let mut measurements = Vec::new();
    let mut eras = BTreeMap::new();
    let mut baselines = BTreeMap::new();

    for i in 0..config.n_patients {
        let patient = patient_name(i);
        let alpha = baseline.sample(&mut s.rng);
        baselines.insert(patient.clone(), alpha);

        let n_meas = s.poisson(config.measurements_per_year * years);
        let mut days: Vec<Day> = (0..n_meas).map(|_| s.day_in(config.start, config.span_days)).collect();
        days.sort_unstable();
        days.dedup();

        let mut by_drug: Vec<Vec<Day>> = vec![Vec::new(); config.n_drugs];
        for (m, dates) in by_drug.iter_mut().enumerate() {
            if Some(m) == bystander {
                continue;
            }
            if !s.rng.random_bool(config.user_fraction) {
                continue;
            }
            if m < n_rec {
                let courses = s.rng.random_range(1..=config.max_courses);
                for _ in 0..courses {
                    let from = s.day_in(config.start, config.span_days);
                    dates.extend(s.recurrent_course(from, last_day));
                }
            } else {
                let count = s.poisson(config.non_recurrent_per_year * years).max(1);
                for _ in 0..count {
                    dates.push(s.day_in(config.start, config.span_days));
                }
            }
        }

        if let (Some(a), Some(b)) = (causal, bystander) {
            let a_dates = {
                let mut d = by_drug[a].clone();
                d.sort_unstable();
                d
            };
            match config.confounding {
                Confounding::Bystander { co_rate, .. } => {
                    if !a_dates.is_empty() && s.rng.random_bool(co_rate) {
                        by_drug[b] = a_dates;
                    } else if s.rng.random_bool(co_rate * config.user_fraction / 6.0) {
                        let from = s.day_in(config.start, config.span_days);
                        by_drug[b] = s.recurrent_course(from, last_day);
                    }
                }
                Confounding::Comorbidity { rate, .. } => {
                    if !a_dates.is_empty() && s.rng.random_bool(rate) {
                        let from = a_dates[0] + s.rng.random_range(30..=365);
                        if from <= last_day {
                            by_drug[b] = s.recurrent_course(from, last_day);
                        }
                    }
                }
                Confounding::None => unreachable!(),
            }
        }

        let mut exposure_sum = vec![0.0; days.len()];
        for (m, dates) in by_drug.iter_mut().enumerate() {
            if dates.is_empty() {
                continue;
            }
            dates.sort_unstable();
            dates.dedup();
            let spans = merge_eras(dates, rule_for(m));
            if beta[m] != 0.0 {
                for (k, d) in days.iter().enumerate() {
                    if spans.iter().any(|(lo, hi)| lo <= d && d <= hi) {
                        exposure_sum[k] += beta[m];
                    }
                }
            }
            for &date in dates.iter() {
                prescriptions.push(PrescriptionRecord {
                    patient: patient.clone(),
                    drug: drug_name(m),
                    date,
                });
            }
            eras.insert((i, m), spans);
        }

        for (k, &date) in days.iter().enumerate() {
            let eps = if config.noise_sd > 0.0 {
                noise.sample(&mut s.rng)
            } else {
                0.0
            };
            measurements.push(MeasurementRecord {
                patient: patient.clone(),
                date,
                value: alpha + exposure_sum[k] + eps,
            });
        }
    }

    Ok(SynthData {
        prescriptions,
        measurements,
        eras,
        truth: SynthTruth {
            effects: config.effects.iter().map(|e| (drug_name(e.drug), e.beta)).collect(),
            recurrent: (0..config.n_drugs).map(|m| (drug_name(m), m < n_rec)).collect(),
            baselines,
            seed: config.seed,
        },
    })
}
