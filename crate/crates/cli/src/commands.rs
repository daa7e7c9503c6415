use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use csccs_core::ehr_model::CohortSummary;
use csccs_core::evaluation::{evaluate as score_ranking, union_of, PrecisionAtK};
use csccs_core::pipeline::{self, FitMetrics, Prepared};
use csccs_core::report::{era_params_json, eras_csv, roc_csv, CoefficientReport};
use csccs_core::{ingest, synth_gen, validate_cohort, Cohort, CohortConfig, EraMode, LabelSet, Model, RankedList};
use serde::Serialize;

use crate::config::RunConfig;

fn write(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn prepare_out(cfg: &RunConfig) -> anyhow::Result<&Path> {
    let out = cfg.out_dir()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(out, "effective-config.json", &to_json(cfg))?;
    Ok(out)
}

fn load_cohort(cfg: &RunConfig) -> anyhow::Result<Cohort> {
    let ingest_cfg = cfg.input.ingest_config()?;
    let t = Instant::now();
    let raw = ingest::load_events(&ingest_cfg)?;
    let cohort = validate_cohort(
        raw,
        &CohortConfig {
            dedupe: cfg.input.dedupe,
            bounds: None,
        },
    )?;
    let s = cohort.summary();
    log::info!(
        "cohort: {} patients, {} drugs, {} measurements ({:.2?})",
        cohort.n_patients(),
        cohort.n_drugs(),
        cohort.n_measurements(),
        t.elapsed()
    );
    if !s.dropped_patients.is_empty() {
        log::info!("{} patients without a measurement dropped", s.dropped_patients.len());
    }
    Ok(cohort)
}

fn load_labels(path: &Path) -> anyhow::Result<LabelSet> {
    let file = File::open(path).with_context(|| format!("opening labels {}", path.display()))?;
    LabelSet::from_csv(file).with_context(|| format!("reading labels {}", path.display()))
}

fn load_ranking(path: &Path) -> anyhow::Result<CoefficientReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading ranking {}", path.display()))?;
    CoefficientReport::parse_tsv(&text).with_context(|| format!("parsing ranking {}", path.display()))
}

fn required<'a>(value: &'a Option<std::path::PathBuf>, flag: &str) -> anyhow::Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| crate::UsageError(format!("{flag} is required")).into())
}

pub fn simulate(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let t = Instant::now();
    let data = synth_gen::generate(&cfg.simulate)?;
    data.write_to(out)?;
    log::info!(
        "simulated {} prescriptions and {} measurements ({:.2?})",
        data.prescriptions.len(),
        data.measurements.len(),
        t.elapsed()
    );
    Ok(())
}

#[derive(Serialize)]
struct EraSummary {
    mode: EraMode,
    gamma_days: Option<f64>,
    n_recurrent: usize,
    n_eras: usize,
}

fn era_summary(prepared: &Prepared) -> EraSummary {
    EraSummary {
        mode: prepared.era_params.mode,
        gamma_days: prepared.era_params.gamma,
        n_recurrent: prepared.era_params.rules.iter().filter(|r| r.recurrent).count(),
        n_eras: prepared.eras.len(),
    }
}

fn write_eras(out: &Path, prepared: &Prepared) -> anyhow::Result<()> {
    write(out, "eras.csv", &eras_csv(&prepared.eras, &prepared.cohort))?;
    write(
        out,
        "era-params.json",
        &era_params_json(&prepared.era_params, &prepared.cohort),
    )
}

fn prepare(cfg: &RunConfig) -> anyhow::Result<Prepared> {
    let cohort = load_cohort(cfg)?;
    let t = Instant::now();
    let prepared = pipeline::prepare(cohort, cfg.era_mode);
    log::info!("eras: {} built ({:.2?})", prepared.eras.len(), t.elapsed());
    Ok(prepared)
}

pub fn build_eras(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let prepared = prepare(cfg)?;
    write_eras(out, &prepared)?;

    #[derive(Serialize)]
    struct Metrics<'a> {
        cohort: &'a CohortSummary,
        eras: EraSummary,
    }
    write(
        out,
        "metrics.json",
        &to_json(&Metrics {
            cohort: prepared.cohort.summary(),
            eras: era_summary(&prepared),
        }),
    )
}

/// Nonzero-score entries, at most `k`.
fn shortlist(report: &CoefficientReport, k: usize) -> CoefficientReport {
    CoefficientReport {
        score_column: report.score_column.clone(),
        entries: report
            .entries
            .iter()
            .filter(|e| e.score != 0.0)
            .take(k)
            .cloned()
            .collect(),
    }
}

pub fn fit(cfg: &RunConfig) -> anyhow::Result<()> {
    let fit_cfg = cfg.fit.fit_config()?;
    let out = prepare_out(cfg)?;
    let prepared = prepare(cfg)?;
    if fit_cfg.model != Model::Pm {
        write_eras(out, &prepared)?;
    }

    let t = Instant::now();
    let outcome = pipeline::fit_model(&prepared, &fit_cfg)?;
    log::info!(
        "fit {:?}: support {} ({:.2?})",
        fit_cfg.model,
        outcome.metrics.support,
        t.elapsed()
    );
    if outcome.metrics.target_reached == Some(false) {
        log::warn!(
            "no path point reaches support {}; using the densest fit ({} drugs)",
            outcome.metrics.target_support.unwrap_or_default(),
            outcome.metrics.support
        );
    }
    if outcome.metrics.converged == Some(false) {
        log::warn!("coordinate descent stopped at the sweep limit");
    }

    let short = shortlist(&outcome.report, cfg.fit.top_k);
    write(out, "coefficients.tsv", &outcome.report.to_tsv())?;
    write(out, "shortlist.tsv", &short.to_tsv())?;

    #[derive(Serialize)]
    struct Metrics<'a> {
        cohort: &'a CohortSummary,
        #[serde(skip_serializing_if = "Option::is_none")]
        eras: Option<EraSummary>,
        fit: &'a FitMetrics,
        shortlist_len: usize,
    }
    write(
        out,
        "metrics.json",
        &to_json(&Metrics {
            cohort: prepared.cohort.summary(),
            eras: (fit_cfg.model != Model::Pm).then(|| era_summary(&prepared)),
            fit: &outcome.metrics,
            shortlist_len: short.entries.len(),
        }),
    )?;

    if cfg.fit.dump_design {
        match &outcome.design {
            Some(design) => {
                let mtx = out.join("design.mtx");
                design.write_matrix_market(BufWriter::new(File::create(&mtx)?))?;
                design.write_response(BufWriter::new(File::create(out.join("response.txt"))?))?;
            }
            None => log::warn!("the pm model has no design matrix to dump"),
        }
    }
    Ok(())
}

pub fn evaluate(cfg: &RunConfig) -> anyhow::Result<()> {
    let e = &cfg.evaluate;
    let ranking_path = required(&e.ranking, "--ranking")?;
    let labels_path = required(&e.labels, "--labels")?;
    let out = prepare_out(cfg)?;

    let labels = load_labels(labels_path)?;
    let mut ranked = load_ranking(ranking_path)?.ranked_list();
    if !e.universe.is_empty() {
        let others = e
            .universe
            .iter()
            .map(|p| load_ranking(p).map(|r| r.ranked_list()))
            .collect::<anyhow::Result<Vec<_>>>()?;
        let mut lists: Vec<&RankedList> = vec![&ranked];
        lists.extend(others.iter());
        let universe = union_of(&lists);
        ranked = ranked.over_universe(&universe);
    }

    let result = score_ranking(&ranked, &labels, e.negatives, &e.k)?;
    write(out, "roc.csv", &roc_csv(&result.roc_points))?;

    #[derive(Serialize)]
    struct Metrics<'a> {
        auroc: f64,
        negatives: csccs_core::NegativeMode,
        n_ranked: usize,
        n_positives: usize,
        precision_at_k: &'a std::collections::BTreeMap<usize, PrecisionAtK>,
    }
    for (k, p) in &result.precision_at_k {
        if p.truncated {
            log::warn!("precision@{k}: ranking has only {} drugs", p.denominator);
        }
    }
    write(
        out,
        "metrics.json",
        &to_json(&Metrics {
            auroc: result.auroc,
            negatives: e.negatives,
            n_ranked: result.n_ranked,
            n_positives: result.n_positives,
            precision_at_k: &result.precision_at_k,
        }),
    )
}

fn label_of(labels: Option<&LabelSet>, drug: &str) -> &'static str {
    match labels {
        Some(l) if l.is_positive(drug) => "decrease",
        Some(l) if l.is_negative(drug) => "increase",
        _ => "",
    }
}

pub fn report(cfg: &RunConfig) -> anyhow::Result<()> {
    let ranking_path = required(&cfg.evaluate.ranking, "--ranking")?;
    let out = prepare_out(cfg)?;
    let labels = cfg.evaluate.labels.as_deref().map(load_labels).transpose()?;
    let short = shortlist(&load_ranking(ranking_path)?, cfg.fit.top_k);

    let mut text = format!("drug\tcount\t{}\trank\tlabel\n", short.score_column);
    for e in &short.entries {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            e.drug,
            e.count,
            e.score,
            e.rank,
            label_of(labels.as_ref(), &e.drug)
        ));
    }
    write(out, "shortlist.tsv", &text)?;

    if cfg.input.has_data() {
        let cohort = load_cohort(cfg)?;
        let support: Vec<_> = short
            .entries
            .iter()
            .filter_map(|e| {
                let id = cohort.drug_id(&e.drug);
                if id.is_none() {
                    log::warn!("ensemble: `{}` does not occur in the data", e.drug);
                }
                id
            })
            .collect();
        let ranked = csccs_core::evaluation::ensemble_rank(&support, &cohort, cfg.fit.window_days);
        let mut text = String::from("drug\tpm_score\trank\tlabel\n");
        let rows = ranked
            .scored
            .iter()
            .map(|(d, s)| (d.as_str(), *s))
            .chain(ranked.zero_block.iter().map(|d| (d.as_str(), 0.0)));
        for (i, (drug, score)) in rows.enumerate() {
            text.push_str(&format!(
                "{drug}\t{score}\t{}\t{}\n",
                i + 1,
                label_of(labels.as_ref(), drug)
            ));
        }
        write(out, "ensemble.tsv", &text)?;
    }
    Ok(())
}
