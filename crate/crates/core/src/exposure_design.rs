//! Exposure indicators and the two self-controlled regression designs.
//!
//! The centered design subtracts each patient's mean response and mean
//! exposure from every occasion, eliminating the per-patient baseline. The
//! differenced design instead takes earlier-minus-later differences of
//! consecutive measurements no more than `tau` days apart.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ehr_model::{Cohort, DrugId, PatientId};
use crate::era_builder::DrugEra;
use crate::error::DesignError;

/// Default pair span for the differenced design: four years.
pub const DEFAULT_TAU_DAYS: i64 = 1461;

/// Binary exposure per measurement occasion, in compressed row form.
///
/// Rows follow cohort order: patients by index, then measurements by date.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExposureMatrix {
    row_offsets: Vec<usize>,
    drugs: Vec<DrugId>,
    n_drugs: usize,
}

impl ExposureMatrix {
    pub fn n_rows(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn n_drugs(&self) -> usize {
        self.n_drugs
    }

    /// Drugs exposed at `row`, ascending.
    pub fn row(&self, row: usize) -> &[DrugId] {
        &self.drugs[self.row_offsets[row]..self.row_offsets[row + 1]]
    }

    pub fn is_exposed(&self, row: usize, drug: DrugId) -> bool {
        self.row(row).binary_search(&drug).is_ok()
    }

    /// Number of exposed occasions per drug.
    pub fn column_sums(&self) -> Vec<u32> {
        let mut sums = vec![0; self.n_drugs];
        for d in &self.drugs {
            sums[d.index()] += 1;
        }
        sums
    }
}

/// `x[i,j,m] = 1` iff measurement `j` of patient `i` lies inside an era of
/// drug `m`, bounds inclusive.
pub fn compute_exposure(cohort: &Cohort, eras: &[DrugEra]) -> ExposureMatrix {
    let mut by_patient: Vec<Vec<DrugEra>> = vec![Vec::new(); cohort.n_patients()];
    for era in eras {
        by_patient[era.patient.index()].push(*era);
    }

    let blocks: Vec<Vec<Vec<DrugId>>> = cohort
        .patients()
        .par_iter()
        .zip(by_patient.par_iter_mut())
        .map(|(patient, eras)| {
            eras.sort_unstable_by_key(|e| (e.drug, e.start));
            let mut rows: Vec<Vec<DrugId>> = vec![Vec::new(); patient.measurements.len()];
            for drug_eras in eras.chunk_by(|a, b| a.drug == b.drug) {
                let drug = drug_eras[0].drug;
                for (row, m) in rows.iter_mut().zip(&patient.measurements) {
                    // last era starting on or before the measurement
                    let idx = drug_eras.partition_point(|e| e.start <= m.date);
                    if idx > 0 && m.date <= drug_eras[idx - 1].end {
                        row.push(drug);
                    }
                }
            }
            rows
        })
        .collect();

    let mut row_offsets = vec![0];
    let mut drugs = Vec::new();
    for rows in blocks {
        for row in rows {
            drugs.extend(row);
            row_offsets.push(drugs.len());
        }
    }
    ExposureMatrix {
        row_offsets,
        drugs,
        n_drugs: cohort.n_drugs(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Csccs,
    Csccsa,
}

/// Where a design row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowOrigin {
    /// A centered measurement occasion.
    Occasion { patient: PatientId, index: u32 },
    /// An earlier-minus-later difference of two consecutive occasions.
    Pair {
        patient: PatientId,
        earlier: u32,
        later: u32,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseColumn {
    pub rows: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseColumn {
    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(&self.values)
            .map(|(&r, &v)| v * dense[r as usize])
            .sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    fn push(&mut self, row: usize, value: f64) {
        if value != 0.0 {
            self.rows.push(row as u32);
            self.values.push(value);
        }
    }
}

/// Sparse regression problem `(y, X)` over drug columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub kind: DesignKind,
    pub y: Vec<f64>,
    pub columns: Vec<SparseColumn>,
    pub origins: Vec<RowOrigin>,
    /// Exposed occasions per drug over the admitted patients, the L1 norm of
    /// the raw exposure column.
    pub counts: Vec<u32>,
    /// Columns removed by [`DesignMatrix::filter_min_count`].
    pub excluded: Vec<bool>,
    pub n_patients: usize,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    /// `Xᵀ v`.
    pub fn xt(&self, v: &[f64]) -> Vec<f64> {
        self.columns.iter().map(|c| c.dot(v)).collect()
    }

    /// `X β`.
    pub fn x_times(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows()];
        for (col, &b) in self.columns.iter().zip(beta) {
            if b != 0.0 {
                for (&r, &v) in col.rows.iter().zip(&col.values) {
                    out[r as usize] += v * b;
                }
            }
        }
        out
    }

    /// Row-major dense copy of `X`.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n_cols()]; self.n_rows()];
        for (m, col) in self.columns.iter().enumerate() {
            for (&r, &v) in col.rows.iter().zip(&col.values) {
                dense[r as usize][m] = v;
            }
        }
        dense
    }

    /// Empties every column whose count is below `min_count`; those drugs
    /// then receive a zero coefficient and are left out of reports.
    pub fn filter_min_count(&mut self, min_count: u32) {
        for (m, col) in self.columns.iter_mut().enumerate() {
            if self.counts[m] < min_count {
                *col = SparseColumn::default();
                self.excluded[m] = true;
            }
        }
    }

    /// Writes `X` in Matrix Market coordinate format, 1-based indices.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> io::Result<()> {
        let nnz: usize = self.columns.iter().map(SparseColumn::nnz).sum();
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.n_rows(), self.n_cols(), nnz)?;
        for (m, col) in self.columns.iter().enumerate() {
            for (&r, &v) in col.rows.iter().zip(&col.values) {
                writeln!(w, "{} {} {:e}", r + 1, m + 1, v)?;
            }
        }
        Ok(())
    }

    /// Writes `y`, one value per line.
    pub fn write_response<W: Write>(&self, mut w: W) -> io::Result<()> {
        for v in &self.y {
            writeln!(w, "{v:e}")?;
        }
        Ok(())
    }
}

struct Block {
    y: Vec<f64>,
    entries: Vec<(DrugId, u32, f64)>,
    origins: Vec<RowOrigin>,
    exposed: Vec<DrugId>,
}

fn assemble(kind: DesignKind, n_drugs: usize, blocks: Vec<Option<Block>>) -> Result<DesignMatrix, DesignError> {
    let mut y = Vec::new();
    let mut origins = Vec::new();
    let mut columns = vec![SparseColumn::default(); n_drugs];
    let mut counts = vec![0u32; n_drugs];
    let mut n_patients = 0;
    for block in blocks.into_iter().flatten() {
        let offset = y.len();
        n_patients += 1;
        for (drug, local, value) in block.entries {
            columns[drug.index()].push(offset + local as usize, value);
        }
        for d in block.exposed {
            counts[d.index()] += 1;
        }
        y.extend(block.y);
        origins.extend(block.origins);
    }
    if y.is_empty() {
        return Err(DesignError::Empty);
    }
    Ok(DesignMatrix {
        kind,
        y,
        columns,
        origins,
        counts,
        excluded: vec![false; n_drugs],
        n_patients,
    })
}

fn check_shape(cohort: &Cohort, exposure: &ExposureMatrix) -> Result<(), DesignError> {
    if exposure.n_rows() != cohort.n_measurements() {
        return Err(DesignError::ShapeMismatch {
            exposure: exposure.n_rows(),
            cohort: cohort.n_measurements(),
        });
    }
    Ok(())
}

/// Within-patient mean-centered design.
///
/// Patients with a single measurement center to all-zero rows and are left
/// out. Columns are not standardized.
pub fn build_csccs_design(cohort: &Cohort, exposure: &ExposureMatrix) -> Result<DesignMatrix, DesignError> {
    check_shape(cohort, exposure)?;
    let offsets = cohort.row_offsets();
    let blocks: Vec<Option<Block>> = cohort
        .patients()
        .par_iter()
        .map(|patient| {
            let j = patient.measurements.len();
            if j < 2 {
                return None;
            }
            let first_row = offsets[patient.id.index()];
            let jf = j as f64;
            let mean_y = patient.measurements.iter().map(|m| m.value).sum::<f64>() / jf;
            let y: Vec<f64> = patient.measurements.iter().map(|m| m.value - mean_y).collect();

            let mut exposed: Vec<(DrugId, u32)> = (0..j)
                .flat_map(|local| exposure.row(first_row + local).iter().map(move |&d| (d, local as u32)))
                .collect();
            exposed.sort_unstable();

            let mut entries = Vec::new();
            for rows in exposed.chunk_by(|a, b| a.0 == b.0) {
                let drug = rows[0].0;
                if rows.len() == j {
                    continue;
                }
                let mean_x = rows.len() as f64 / jf;
                let mut hit = rows.iter().map(|r| r.1).peekable();
                for local in 0..j as u32 {
                    let x = if hit.peek() == Some(&local) {
                        hit.next();
                        1.0
                    } else {
                        0.0
                    };
                    entries.push((drug, local, x - mean_x));
                }
            }
            // entries must be row-ordered within each column
            entries.sort_unstable_by_key(|e| (e.0, e.1));
            Some(Block {
                y,
                entries,
                origins: (0..j as u32)
                    .map(|index| RowOrigin::Occasion {
                        patient: patient.id,
                        index,
                    })
                    .collect(),
                exposed: exposed.into_iter().map(|e| e.0).collect(),
            })
        })
        .collect();
    assemble(DesignKind::Csccs, cohort.n_drugs(), blocks)
}

/// Differenced design over consecutive measurement pairs at most `tau_days` apart.
///
/// Each row is earlier minus later. Pairs chain: occasions (1,2) and (2,3)
/// both contribute. Only patients with at least one pair are admitted.
pub fn build_csccsa_design(
    cohort: &Cohort,
    exposure: &ExposureMatrix,
    tau_days: i64,
) -> Result<DesignMatrix, DesignError> {
    if tau_days <= 0 {
        return Err(DesignError::InvalidTau(tau_days));
    }
    check_shape(cohort, exposure)?;
    let offsets = cohort.row_offsets();
    let blocks: Vec<Option<Block>> = cohort
        .patients()
        .par_iter()
        .map(|patient| {
            let first_row = offsets[patient.id.index()];
            let ms = &patient.measurements;
            let mut y = Vec::new();
            let mut entries = Vec::new();
            let mut origins = Vec::new();
            for (j, pair) in ms.windows(2).enumerate() {
                if i64::from(pair[1].date - pair[0].date) > tau_days {
                    continue;
                }
                let local = y.len() as u32;
                y.push(pair[0].value - pair[1].value);
                let earlier = exposure.row(first_row + j);
                let later = exposure.row(first_row + j + 1);
                for d in earlier.iter().filter(|d| later.binary_search(d).is_err()) {
                    entries.push((*d, local, 1.0));
                }
                for d in later.iter().filter(|d| earlier.binary_search(d).is_err()) {
                    entries.push((*d, local, -1.0));
                }
                origins.push(RowOrigin::Pair {
                    patient: patient.id,
                    earlier: j as u32,
                    later: j as u32 + 1,
                });
            }
            if y.is_empty() {
                return None;
            }
            entries.sort_unstable_by_key(|e| (e.0, e.1));
            let exposed = (0..ms.len())
                .flat_map(|local| exposure.row(first_row + local).iter().copied())
                .collect();
            Some(Block {
                y,
                entries,
                origins,
                exposed,
            })
        })
        .collect();
    assemble(DesignKind::Csccsa, cohort.n_drugs(), blocks)
}

/// Per-patient baselines implied by a coefficient vector,
/// `ᾱ_i = ȳ_i − x̄_iᵀ β`, for every cohort patient.
pub fn recover_baselines(cohort: &Cohort, exposure: &ExposureMatrix, beta: &[f64]) -> Vec<f64> {
    let offsets = cohort.row_offsets();
    cohort
        .patients()
        .iter()
        .map(|p| {
            let j = p.measurements.len() as f64;
            let first = offsets[p.id.index()];
            let mean_y = p.measurements.iter().map(|m| m.value).sum::<f64>() / j;
            let mean_xb = (0..p.measurements.len())
                .map(|l| exposure.row(first + l).iter().map(|d| beta[d.index()]).sum::<f64>())
                .sum::<f64>()
                / j;
            mean_y - mean_xb
        })
        .collect()
}
