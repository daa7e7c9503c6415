//! CSV ingestion of prescription and measurement files.
//!
//! Prescriptions carry the columns `patient_id, drug, date`; measurements
//! carry `patient_id, date, value`. Columns are located by header name, so
//! extra columns and any column order are accepted.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ehr_model::{Day, DedupePolicy, MeasurementRecord, PrescriptionRecord, RawEvents, ISO_DATE};
use crate::error::{IngestError, RowError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestConfig {
    pub prescriptions_path: PathBuf,
    pub measurements_path: PathBuf,
    /// `chrono` format string; ISO-8601 calendar dates by default.
    pub date_format: String,
    pub dedupe_policy: DedupePolicy,
    pub delimiter: u8,
}

impl IngestConfig {
    pub fn new(prescriptions: impl Into<PathBuf>, measurements: impl Into<PathBuf>) -> Self {
        IngestConfig {
            prescriptions_path: prescriptions.into(),
            measurements_path: measurements.into(),
            date_format: ISO_DATE.to_string(),
            dedupe_policy: DedupePolicy::Strict,
            delimiter: b',',
        }
    }
}

/// Conservative drug-name normalization: surrounding whitespace removed, case folded.
pub fn normalize_drug(name: &str) -> String {
    name.trim().to_lowercase()
}

type RowOutcome<T> = Result<T, RowError>;

struct Table {
    columns: Vec<usize>,
    rows: Vec<(u64, csv::StringRecord)>,
}

fn read_table<R: Read>(reader: R, path: &Path, delimiter: u8, required: &[&'static str]) -> Result<Table, IngestError> {
    let csv_err = |source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(IngestError::Empty {
            path: path.to_path_buf(),
        });
    }
    let mut columns = Vec::with_capacity(required.len());
    for &name in required {
        let idx =
            headers
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(name))
                .ok_or(IngestError::MissingColumn {
                    path: path.to_path_buf(),
                    column: name,
                })?;
        columns.push(idx);
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, record));
    }
    if rows.is_empty() {
        return Err(IngestError::Empty {
            path: path.to_path_buf(),
        });
    }
    Ok(Table { columns, rows })
}

fn field<'a>(record: &'a csv::StringRecord, idx: usize, name: &str, line: u64) -> RowOutcome<&'a str> {
    match record.get(idx).map(str::trim) {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(RowError {
            line,
            message: format!("empty or missing `{name}` field"),
        }),
    }
}

fn date_field(text: &str, format: &str, line: u64) -> RowOutcome<Day> {
    Day::parse(text, format).ok_or_else(|| RowError {
        line,
        message: format!("cannot parse date `{text}` with format `{format}`"),
    })
}

/// Parses every data row of a prescription table; one outcome per row.
pub fn read_prescription_rows<R: Read>(
    reader: R,
    path: &Path,
    config: &IngestConfig,
) -> Result<Vec<RowOutcome<PrescriptionRecord>>, IngestError> {
    let table = read_table(reader, path, config.delimiter, &["patient_id", "drug", "date"])?;
    let (pc, dc, tc) = (table.columns[0], table.columns[1], table.columns[2]);
    Ok(table
        .rows
        .iter()
        .map(|(line, rec)| {
            let patient = field(rec, pc, "patient_id", *line)?;
            let drug = field(rec, dc, "drug", *line)?;
            let date = date_field(field(rec, tc, "date", *line)?, &config.date_format, *line)?;
            Ok(PrescriptionRecord {
                patient: patient.to_string(),
                drug: normalize_drug(drug),
                date,
            })
        })
        .collect())
}

/// Parses every data row of a measurement table; one outcome per row.
pub fn read_measurement_rows<R: Read>(
    reader: R,
    path: &Path,
    config: &IngestConfig,
) -> Result<Vec<RowOutcome<MeasurementRecord>>, IngestError> {
    let table = read_table(reader, path, config.delimiter, &["patient_id", "date", "value"])?;
    let (pc, tc, vc) = (table.columns[0], table.columns[1], table.columns[2]);
    Ok(table
        .rows
        .iter()
        .map(|(line, rec)| {
            let patient = field(rec, pc, "patient_id", *line)?;
            let date = date_field(field(rec, tc, "date", *line)?, &config.date_format, *line)?;
            let raw = field(rec, vc, "value", *line)?;
            let value = raw
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| RowError {
                    line: *line,
                    message: format!("value `{raw}` is not a finite number"),
                })?;
            Ok(MeasurementRecord {
                patient: patient.to_string(),
                date,
                value,
            })
        })
        .collect())
}

fn split_outcomes<T>(path: &Path, rows: Vec<RowOutcome<T>>) -> Result<Vec<T>, IngestError> {
    let mut records = Vec::with_capacity(rows.len());
    let mut errors = Vec::new();
    for row in rows {
        match row {
            Ok(r) => records.push(r),
            Err(e) => errors.push(e),
        }
    }
    if errors.is_empty() {
        Ok(records)
    } else {
        Err(IngestError::Rows {
            path: path.to_path_buf(),
            errors,
        })
    }
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a prescription file. Exact duplicate rows collapse to one record.
pub fn parse_prescriptions(path: &Path, config: &IngestConfig) -> Result<Vec<PrescriptionRecord>, IngestError> {
    let rows = read_prescription_rows(open(path)?, path, config)?;
    let mut records = split_outcomes(path, rows)?;
    records.sort_unstable();
    records.dedup();
    Ok(records)
}

/// Reads a measurement file.
///
/// Exact duplicate rows always collapse. Under [`DedupePolicy::Mean`] all
/// measurements of one patient on one day are replaced by their mean; under
/// [`DedupePolicy::Strict`] conflicting same-day values are kept and rejected
/// later by cohort validation.
pub fn parse_measurements(path: &Path, config: &IngestConfig) -> Result<Vec<MeasurementRecord>, IngestError> {
    let rows = read_measurement_rows(open(path)?, path, config)?;
    let records = split_outcomes(path, rows)?;
    Ok(collapse_measurements(records, config.dedupe_policy))
}

fn collapse_measurements(records: Vec<MeasurementRecord>, policy: DedupePolicy) -> Vec<MeasurementRecord> {
    let mut groups: BTreeMap<(String, Day), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry((r.patient, r.date)).or_default().push(r.value);
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((patient, date), mut values) in groups {
        values.sort_by(f64::total_cmp);
        values.dedup();
        match policy {
            DedupePolicy::Mean => {
                let value = values.iter().sum::<f64>() / values.len() as f64;
                out.push(MeasurementRecord { patient, date, value });
            }
            DedupePolicy::Strict => out.extend(values.into_iter().map(|value| MeasurementRecord {
                patient: patient.clone(),
                date,
                value,
            })),
        }
    }
    out
}

/// Reads both input files, each on its own worker.
pub fn load_events(config: &IngestConfig) -> Result<RawEvents, IngestError> {
    let (prescriptions, measurements) = rayon::join(
        || parse_prescriptions(&config.prescriptions_path, config),
        || parse_measurements(&config.measurements_path, config),
    );
    Ok(RawEvents {
        prescriptions: prescriptions?,
        measurements: measurements?,
    })
}
