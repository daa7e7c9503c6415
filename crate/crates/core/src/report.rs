//! Text formats written and read by the pipeline: coefficient and score
//! TSVs, the era table and the era-parameter dump.

use serde::Serialize;

use crate::ehr_model::Cohort;
use crate::era_builder::{DrugEra, EraMode, EraParams};
use crate::error::Error;
use crate::evaluation::RankedList;
use crate::exposure_design::DesignMatrix;
use crate::pm_baseline::PmScore;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportEntry {
    pub drug: String,
    pub count: u32,
    pub score: f64,
    pub rank: usize,
}

/// Ranked per-drug scores: lasso coefficients or Pairwise Mean scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientReport {
    /// Header of the score column: `beta` or `score`.
    pub score_column: String,
    pub entries: Vec<ReportEntry>,
}

impl CoefficientReport {
    fn from_ranked(score_column: &str, ranked: &RankedList, count_of: impl Fn(&str) -> u32) -> Self {
        let scores = ranked
            .scored
            .iter()
            .map(|(d, s)| (d.as_str(), *s))
            .chain(ranked.zero_block.iter().map(|d| (d.as_str(), 0.0)));
        CoefficientReport {
            score_column: score_column.to_string(),
            entries: scores
                .enumerate()
                .map(|(i, (drug, score))| ReportEntry {
                    drug: drug.to_string(),
                    count: count_of(drug),
                    score,
                    rank: i + 1,
                })
                .collect(),
        }
    }

    /// Every drug kept by the count filter, nonzero coefficients ascending,
    /// zero coefficients after them.
    pub fn from_lasso(design: &DesignMatrix, beta: &[f64], cohort: &Cohort) -> Self {
        let eligible = (0..design.n_cols()).filter(|&m| !design.excluded[m]);
        let ranked = RankedList::from_scores(eligible.map(|m| (cohort.drugs().name(m as u32).to_string(), beta[m])));
        Self::from_ranked("beta", &ranked, |d| {
            design.counts[cohort.drug_id(d).expect("known drug").index()]
        })
    }

    /// Pairwise Mean scores with at least `min_count` contributing patients.
    pub fn from_pm(scores: &[PmScore], cohort: &Cohort, min_count: u32) -> Self {
        let kept: Vec<&PmScore> = scores.iter().filter(|s| s.count >= min_count).collect();
        let ranked = RankedList::from_scores(kept.iter().map(|s| (cohort.drug_name(s.drug).to_string(), s.score)));
        Self::from_ranked("score", &ranked, |d| {
            kept.iter()
                .find(|s| cohort.drug_name(s.drug) == d)
                .map_or(0, |s| s.count)
        })
    }

    pub fn ranked_list(&self) -> RankedList {
        RankedList::from_scores(self.entries.iter().map(|e| (e.drug.clone(), e.score)))
    }

    pub fn top(&self, k: usize) -> CoefficientReport {
        CoefficientReport {
            score_column: self.score_column.clone(),
            entries: self.entries.iter().take(k).cloned().collect(),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("drug\tcount\t{}\trank\n", self.score_column);
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", e.drug, e.count, e.score, e.rank));
        }
        out
    }

    /// Parses a report written by [`CoefficientReport::to_tsv`].
    pub fn parse_tsv(text: &str) -> Result<Self, Error> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Format("empty report".into()))?
            .split('\t')
            .collect();
        if header.len() != 4 || header[0] != "drug" || header[1] != "count" || header[3] != "rank" {
            return Err(Error::Format(format!("unexpected report header {header:?}")));
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::Format(format!("report line {}: `{line}`", n + 2));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            entries.push(ReportEntry {
                drug: f[0].to_string(),
                count: f[1].parse().map_err(|_| bad())?,
                score: f[2].parse().map_err(|_| bad())?,
                rank: f[3].parse().map_err(|_| bad())?,
            });
        }
        Ok(CoefficientReport {
            score_column: header[2].to_string(),
            entries,
        })
    }
}

pub fn eras_csv(eras: &[DrugEra], cohort: &Cohort) -> String {
    let mut out = String::from("patient_id,drug,start_date,end_date\n");
    for e in eras {
        out.push_str(&format!(
            "{},{},{},{}\n",
            cohort.patient_name(e.patient),
            cohort.drug_name(e.drug),
            e.start,
            e.end
        ));
    }
    out
}

#[derive(Debug, Serialize)]
struct DrugParamsJson<'a> {
    drug: &'a str,
    recurrent: bool,
    duration_days: i32,
    persistence_window: i32,
    gaps: usize,
    change_point_rank: Option<f64>,
    change_point_days: Option<f64>,
}

#[derive(Debug, Serialize)]
struct EraParamsJson<'a> {
    mode: EraMode,
    gamma_days: Option<f64>,
    n_recurrent: usize,
    second_level_psi: Option<f64>,
    drugs: Vec<DrugParamsJson<'a>>,
}

/// JSON dump of era parameters with per-drug change points.
pub fn era_params_json(params: &EraParams, cohort: &Cohort) -> String {
    let drugs = cohort
        .drug_ids()
        .map(|d| {
            let rule = params.rule(d);
            let fit = params.drug_fits[d.index()];
            DrugParamsJson {
                drug: cohort.drug_name(d),
                recurrent: rule.recurrent,
                duration_days: rule.duration_days,
                persistence_window: rule.persistence_window,
                gaps: crate::era_builder::compute_gaps(cohort, d).len(),
                change_point_rank: fit.map(|f| f.psi),
                change_point_days: fit.map(|f| f.value_at_psi),
            }
        })
        .collect();
    let doc = EraParamsJson {
        mode: params.mode,
        gamma_days: params.gamma,
        n_recurrent: params.rules.iter().filter(|r| r.recurrent).count(),
        second_level_psi: params.second_level.map(|f| f.psi),
        drugs,
    };
    serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
}

/// `fpr,tpr` rows.
pub fn roc_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for (f, t) in points {
        out.push_str(&format!("{f},{t}\n"));
    }
    out
}
