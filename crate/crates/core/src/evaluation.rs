//! Evaluation of ranked drug lists against a label set.
//!
//! A [`RankedList`] orders drugs by ascending score (most negative first).
//! Drugs a variable-selection step assigned exactly zero form a trailing
//! block whose members are tied with one another, so they enter the ROC
//! sweep together as one diagonal segment.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::ehr_model::{Cohort, DrugId};
use crate::error::EvalError;
use crate::ingest::normalize_drug;
use crate::pm_baseline::pm_score;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSet {
    positives: BTreeSet<String>,
    negatives: BTreeSet<String>,
}

impl LabelSet {
    pub fn new<I, J>(positives: I, negatives: J) -> Result<Self, EvalError>
    where
        I: IntoIterator,
        I::Item: Into<String>,
        J: IntoIterator,
        J::Item: Into<String>,
    {
        let positives: BTreeSet<String> = positives.into_iter().map(Into::into).collect();
        let negatives: BTreeSet<String> = negatives.into_iter().map(Into::into).collect();
        if let Some(both) = positives.intersection(&negatives).next() {
            return Err(EvalError::ConflictingLabel(both.clone()));
        }
        Ok(LabelSet { positives, negatives })
    }

    /// Reads `drug,label` rows with `label` one of `decrease` (positive) or
    /// `increase` (negative). Drug names are normalized like ingested ones.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, crate::Error> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| crate::Error::Format(e.to_string()))?;
            let drug = normalize_drug(row.get(0).unwrap_or(""));
            let label = row.get(1).unwrap_or("").to_ascii_lowercase();
            match label.as_str() {
                "decrease" => pos.push(drug),
                "increase" => neg.push(drug),
                _ => return Err(EvalError::UnknownLabel { drug, label }.into()),
            }
        }
        Ok(LabelSet::new(pos, neg)?)
    }

    pub fn is_positive(&self, drug: &str) -> bool {
        self.positives.contains(drug)
    }

    pub fn is_negative(&self, drug: &str) -> bool {
        self.negatives.contains(drug)
    }

    pub fn positives(&self) -> &BTreeSet<String> {
        &self.positives
    }

    pub fn negatives(&self) -> &BTreeSet<String> {
        &self.negatives
    }
}

/// Which drugs count as negatives for ROC purposes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeMode {
    /// Everything not labeled positive.
    #[default]
    AllOthers,
    /// Only drugs labeled as increasing; unlabeled drugs are ignored.
    LabeledOnly,
    /// Unlabeled drugs only; drugs labeled as increasing are ignored.
    ExcludeIncrease,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RankedList {
    /// Nonzero scores, ascending; ties ordered by name.
    pub scored: Vec<(String, f64)>,
    /// Zero-scored drugs, by name.
    pub zero_block: Vec<String>,
}

impl RankedList {
    pub fn from_scores<I: IntoIterator<Item = (String, f64)>>(scores: I) -> Self {
        let mut scored = Vec::new();
        let mut zero_block = Vec::new();
        for (drug, score) in scores {
            if score == 0.0 {
                zero_block.push(drug);
            } else {
                scored.push((drug, score));
            }
        }
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        zero_block.sort();
        RankedList { scored, zero_block }
    }

    pub fn len(&self) -> usize {
        self.scored.len() + self.zero_block.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drugs in ranked order, zero block last.
    pub fn drugs(&self) -> impl Iterator<Item = &str> {
        self.scored
            .iter()
            .map(|(d, _)| d.as_str())
            .chain(self.zero_block.iter().map(String::as_str))
    }

    /// Restricts the list to `universe`; universe members this list does not
    /// rank join the zero block.
    pub fn over_universe(&self, universe: &BTreeSet<String>) -> RankedList {
        let mut seen = BTreeSet::new();
        let mut scores = Vec::new();
        for (d, s) in &self.scored {
            if universe.contains(d) {
                seen.insert(d.as_str());
                scores.push((d.clone(), *s));
            }
        }
        for d in universe {
            if !seen.contains(d.as_str()) {
                scores.push((d.clone(), 0.0));
            }
        }
        RankedList::from_scores(scores)
    }

    /// Keeps the first `k` drugs in ranked order.
    pub fn truncate(&self, k: usize) -> RankedList {
        let take_scored = self.scored.len().min(k);
        let take_zero = k.saturating_sub(take_scored).min(self.zero_block.len());
        RankedList {
            scored: self.scored[..take_scored].to_vec(),
            zero_block: self.zero_block[..take_zero].to_vec(),
        }
    }
}

/// Union of the drugs in several lists, for pooled evaluation.
pub fn union_of(lists: &[&RankedList]) -> BTreeSet<String> {
    lists.iter().flat_map(|l| l.drugs().map(str::to_string)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
struct RankKey {
    tier: u8,
    score: f64,
}

/// Groups of tied drugs in ranked order, as (positives, negatives) per group.
fn tie_groups(ranked: &RankedList, labels: &LabelSet, mode: NegativeMode) -> Vec<(u64, u64)> {
    let class = |d: &str| -> Option<bool> {
        if labels.is_positive(d) {
            return Some(true);
        }
        let labeled_neg = labels.is_negative(d);
        match mode {
            NegativeMode::AllOthers => Some(false),
            NegativeMode::LabeledOnly => labeled_neg.then_some(false),
            NegativeMode::ExcludeIncrease => (!labeled_neg).then_some(false),
        }
    };
    let keyed = ranked
        .scored
        .iter()
        .map(|(d, s)| (d.as_str(), RankKey { tier: 0, score: *s }))
        .chain(
            ranked
                .zero_block
                .iter()
                .map(|d| (d.as_str(), RankKey { tier: 1, score: 0.0 })),
        );
    let mut groups: Vec<(RankKey, u64, u64)> = Vec::new();
    for (drug, key) in keyed {
        let Some(is_pos) = class(drug) else { continue };
        match groups.last_mut() {
            Some(g) if g.0 == key => {
                if is_pos {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((key, u64::from(is_pos), u64::from(!is_pos))),
        }
    }
    groups.into_iter().map(|(_, p, n)| (p, n)).collect()
}

fn totals(groups: &[(u64, u64)]) -> Result<(u64, u64), EvalError> {
    let p: u64 = groups.iter().map(|g| g.0).sum();
    let n: u64 = groups.iter().map(|g| g.1).sum();
    if p == 0 {
        return Err(EvalError::NoPositives);
    }
    if n == 0 {
        return Err(EvalError::NoNegatives);
    }
    Ok((p, n))
}

/// Mann–Whitney estimate: the fraction of (positive, negative) pairs in
/// which the positive ranks earlier, ties counting one half.
pub fn auroc(ranked: &RankedList, labels: &LabelSet, mode: NegativeMode) -> Result<f64, EvalError> {
    let groups = tie_groups(ranked, labels, mode);
    let (total_pos, total_neg) = totals(&groups)?;
    let mut neg_remaining = total_neg;
    // twice the pair count, kept integral
    let mut doubled: u64 = 0;
    for (p, n) in groups {
        neg_remaining -= n;
        doubled += 2 * p * neg_remaining + p * n;
    }
    Ok(doubled as f64 / (2 * total_pos * total_neg) as f64)
}

/// ROC points `(FPR, TPR)` from `(0,0)` to `(1,1)`, one per tie group.
pub fn roc_points(ranked: &RankedList, labels: &LabelSet, mode: NegativeMode) -> Result<Vec<(f64, f64)>, EvalError> {
    let groups = tie_groups(ranked, labels, mode);
    let (total_pos, total_neg) = totals(&groups)?;
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (p, n) in groups {
        tp += p;
        fp += n;
        points.push((fp as f64 / total_neg as f64, tp as f64 / total_pos as f64));
    }
    Ok(points)
}

/// Area under a piecewise-linear curve.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrecisionAtK {
    pub precision: f64,
    pub hits: usize,
    /// Denominator actually used; smaller than K when the list is shorter.
    pub denominator: usize,
    pub truncated: bool,
}

pub fn precision_at_k(
    ranked: &RankedList,
    labels: &LabelSet,
    ks: &[usize],
) -> Result<BTreeMap<usize, PrecisionAtK>, EvalError> {
    if ks.is_empty() {
        return Err(EvalError::NoCutoffs);
    }
    if ks.contains(&0) {
        return Err(EvalError::ZeroCutoff);
    }
    let hits: Vec<bool> = ranked.drugs().map(|d| labels.is_positive(d)).collect();
    Ok(ks
        .iter()
        .map(|&k| {
            let denominator = k.min(hits.len());
            let found = hits[..denominator].iter().filter(|h| **h).count();
            let precision = if denominator == 0 {
                0.0
            } else {
                found as f64 / denominator as f64
            };
            (
                k,
                PrecisionAtK {
                    precision,
                    hits: found,
                    denominator,
                    truncated: denominator < k,
                },
            )
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub roc_points: Vec<(f64, f64)>,
    pub auroc: f64,
    pub precision_at_k: BTreeMap<usize, PrecisionAtK>,
    pub n_positives: usize,
    pub n_ranked: usize,
}

pub fn evaluate(
    ranked: &RankedList,
    labels: &LabelSet,
    mode: NegativeMode,
    ks: &[usize],
) -> Result<EvalResult, EvalError> {
    Ok(EvalResult {
        roc_points: roc_points(ranked, labels, mode)?,
        auroc: auroc(ranked, labels, mode)?,
        precision_at_k: precision_at_k(ranked, labels, ks)?,
        n_positives: ranked.drugs().filter(|d| labels.is_positive(d)).count(),
        n_ranked: ranked.len(),
    })
}

/// Re-ranks a selected support by Pairwise Mean score. Support drugs with
/// no qualifying patient go to the zero block.
pub fn ensemble_rank(selected: &[DrugId], cohort: &Cohort, window_days: i32) -> RankedList {
    let mut scored = Vec::new();
    let mut zero_block = Vec::new();
    for &drug in selected {
        let name = cohort.drug_name(drug).to_string();
        match pm_score(cohort, drug, window_days) {
            Some(s) if s.score != 0.0 => scored.push((name, s.score)),
            Some(_) => zero_block.push(name),
            None => {
                log::info!("ensemble: `{name}` has no patient with both PM windows");
                zero_block.push(name);
            }
        }
    }
    let mut list = RankedList::from_scores(scored);
    zero_block.sort();
    list.zero_block = zero_block;
    list
}
