//! Domain types for longitudinal prescription and measurement data, and the
//! validation step that turns raw events into an immutable [`Cohort`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Add, Sub};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::CohortError;

/// Calendar day, counted from 1970-01-01.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Day(pub i32);

pub const ISO_DATE: &str = "%Y-%m-%d";

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid epoch")
}

impl Day {
    pub fn from_date(date: NaiveDate) -> Self {
        Day((date - epoch()).num_days() as i32)
    }

    pub fn from_ymd(year: i32, month: u32, day: u32) -> Option<Self> {
        NaiveDate::from_ymd_opt(year, month, day).map(Self::from_date)
    }

    /// Parses a date using a `chrono` format string.
    pub fn parse(text: &str, format: &str) -> Option<Self> {
        NaiveDate::parse_from_str(text.trim(), format).ok().map(Self::from_date)
    }

    pub fn parse_iso(text: &str) -> Option<Self> {
        Self::parse(text, ISO_DATE)
    }

    pub fn to_date(self) -> NaiveDate {
        epoch() + chrono::Duration::days(i64::from(self.0))
    }
}

impl fmt::Display for Day {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_date().format(ISO_DATE))
    }
}

impl Add<i32> for Day {
    type Output = Day;
    fn add(self, days: i32) -> Day {
        Day(self.0 + days)
    }
}

impl Sub<i32> for Day {
    type Output = Day;
    fn sub(self, days: i32) -> Day {
        Day(self.0 - days)
    }
}

impl Sub<Day> for Day {
    type Output = i32;
    fn sub(self, other: Day) -> i32 {
        self.0 - other.0
    }
}

/// Dense patient index into a [`Cohort`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatientId(pub u32);

/// Dense drug index into a [`Cohort`]'s drug dictionary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DrugId(pub u32);

impl PatientId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl DrugId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Bijection between string identifiers and contiguous indices.
///
/// Indices are assigned in lexicographic order of the names, so the mapping
/// does not depend on the order in which names were encountered.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut names: Vec<String> = names.into_iter().map(Into::into).collect();
        names.sort_unstable();
        names.dedup();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i as u32)).collect();
        Interner { names, index }
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: u32) -> &str {
        &self.names[idx as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PrescriptionRecord {
    pub patient: String,
    pub drug: String,
    pub date: Day,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub patient: String,
    pub date: Day,
    pub value: f64,
}

/// Parsed but not yet validated input.
#[derive(Debug, Clone, Default)]
pub struct RawEvents {
    pub prescriptions: Vec<PrescriptionRecord>,
    pub measurements: Vec<MeasurementRecord>,
}

/// What to do with two measurements of one patient on the same day.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DedupePolicy {
    #[default]
    Strict,
    Mean,
}

#[derive(Debug, Clone, Default)]
pub struct CohortConfig {
    pub dedupe: DedupePolicy,
    /// Inclusive bounds every event date must fall within.
    pub bounds: Option<(Day, Day)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub date: Day,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub id: PatientId,
    /// Strictly ascending by date; never empty.
    pub measurements: Vec<Measurement>,
    /// Strictly ascending, de-duplicated prescription dates per drug.
    pub prescriptions: BTreeMap<DrugId, Vec<Day>>,
}

impl PatientRecord {
    pub fn n_measurements(&self) -> usize {
        self.measurements.len()
    }

    /// First and last event date of this patient, prescriptions included.
    pub fn observation_period(&self) -> (Day, Day) {
        let mut lo = self.measurements[0].date;
        let mut hi = self.measurements[self.measurements.len() - 1].date;
        for dates in self.prescriptions.values() {
            lo = lo.min(dates[0]);
            hi = hi.max(dates[dates.len() - 1]);
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CohortSummary {
    pub input_patients: usize,
    /// Patients with prescriptions but no measurement, dropped from the case series.
    pub dropped_patients: Vec<String>,
    pub merged_measurements: usize,
    pub duplicate_prescriptions: usize,
}

/// Validated case series: every admitted patient has at least one measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    patients: Vec<PatientRecord>,
    patient_names: Interner,
    drugs: Interner,
    summary: CohortSummary,
}

impl Cohort {
    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }

    pub fn patient(&self, id: PatientId) -> &PatientRecord {
        &self.patients[id.index()]
    }

    pub fn patient_names(&self) -> &Interner {
        &self.patient_names
    }

    pub fn drugs(&self) -> &Interner {
        &self.drugs
    }

    pub fn drug_name(&self, id: DrugId) -> &str {
        self.drugs.name(id.0)
    }

    pub fn drug_id(&self, name: &str) -> Option<DrugId> {
        self.drugs.get(name).map(DrugId)
    }

    pub fn drug_ids(&self) -> impl Iterator<Item = DrugId> + '_ {
        (0..self.drugs.len() as u32).map(DrugId)
    }

    pub fn patient_name(&self, id: PatientId) -> &str {
        self.patient_names.name(id.0)
    }

    pub fn n_patients(&self) -> usize {
        self.patients.len()
    }

    pub fn n_drugs(&self) -> usize {
        self.drugs.len()
    }

    pub fn n_measurements(&self) -> usize {
        self.patients.iter().map(|p| p.measurements.len()).sum()
    }

    /// Start offset of each patient's measurement block in cohort row order,
    /// plus the total row count as the final element.
    pub fn row_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.patients.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for p in &self.patients {
            acc += p.measurements.len();
            offsets.push(acc);
        }
        offsets
    }

    pub fn summary(&self) -> &CohortSummary {
        &self.summary
    }
}

fn check_bounds(bounds: Option<(Day, Day)>, patient: &str, date: Day) -> Result<(), CohortError> {
    match bounds {
        Some((lo, hi)) if date < lo || date > hi => Err(CohortError::OutOfBounds {
            patient: patient.to_string(),
            date: date.to_string(),
        }),
        _ => Ok(()),
    }
}

/// Builds a [`Cohort`] from raw events.
///
/// The result does not depend on the order of the input records.
pub fn validate_cohort(raw: RawEvents, config: &CohortConfig) -> Result<Cohort, CohortError> {
    let RawEvents {
        mut prescriptions,
        mut measurements,
    } = raw;

    for m in &measurements {
        if !m.value.is_finite() {
            return Err(CohortError::NonFiniteValue {
                patient: m.patient.clone(),
                date: m.date.to_string(),
            });
        }
        check_bounds(config.bounds, &m.patient, m.date)?;
    }
    for p in &prescriptions {
        check_bounds(config.bounds, &p.patient, p.date)?;
    }

    let input_patients = {
        let mut all: Vec<&str> = measurements
            .iter()
            .map(|m| m.patient.as_str())
            .chain(prescriptions.iter().map(|p| p.patient.as_str()))
            .collect();
        all.sort_unstable();
        all.dedup();
        all.len()
    };

    // Measurements grouped by (patient, date); values sorted so the mean is order-independent.
    measurements.sort_by(|a, b| {
        (a.patient.as_str(), a.date)
            .cmp(&(b.patient.as_str(), b.date))
            .then(a.value.total_cmp(&b.value))
    });
    let mut merged_measurements = 0;
    let mut per_patient: BTreeMap<String, Vec<Measurement>> = BTreeMap::new();
    let mut i = 0;
    while i < measurements.len() {
        let mut j = i + 1;
        while j < measurements.len()
            && measurements[j].patient == measurements[i].patient
            && measurements[j].date == measurements[i].date
        {
            j += 1;
        }
        let group = &measurements[i..j];
        if group.len() > 1 && config.dedupe == DedupePolicy::Strict {
            return Err(CohortError::DuplicateMeasurement {
                patient: group[0].patient.clone(),
                date: group[0].date.to_string(),
            });
        }
        merged_measurements += group.len() - 1;
        let value = group.iter().map(|m| m.value).sum::<f64>() / group.len() as f64;
        per_patient
            .entry(group[0].patient.clone())
            .or_default()
            .push(Measurement {
                date: group[0].date,
                value,
            });
        i = j;
    }

    let drugs = Interner::from_names(prescriptions.iter().map(|p| p.drug.clone()));
    let patient_names = Interner::from_names(per_patient.keys().cloned());

    prescriptions.sort_unstable();
    let before = prescriptions.len();
    prescriptions.dedup();
    let duplicate_prescriptions = before - prescriptions.len();

    let mut patients: Vec<PatientRecord> = per_patient
        .into_iter()
        .enumerate()
        .map(|(idx, (_, measurements))| PatientRecord {
            id: PatientId(idx as u32),
            measurements,
            prescriptions: BTreeMap::new(),
        })
        .collect();

    let mut dropped_patients = Vec::new();
    for rx in prescriptions {
        match patient_names.get(&rx.patient) {
            Some(pid) => {
                let drug = DrugId(drugs.get(&rx.drug).expect("drug interned"));
                patients[pid as usize]
                    .prescriptions
                    .entry(drug)
                    .or_default()
                    .push(rx.date);
            }
            None => {
                if dropped_patients.last() != Some(&rx.patient) {
                    dropped_patients.push(rx.patient);
                }
            }
        }
    }
    if !dropped_patients.is_empty() {
        log::info!("dropped {} patient(s) without measurements", dropped_patients.len());
    }

    Ok(Cohort {
        patients,
        patient_names,
        drugs,
        summary: CohortSummary {
            input_patients,
            dropped_patients,
            merged_measurements,
            duplicate_prescriptions,
        },
    })
}
