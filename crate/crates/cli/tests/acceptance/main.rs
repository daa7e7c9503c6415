//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p csccs-cli --test acceptance`.

mod instances;
mod oracles;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use csccs_core::era_builder::changepoint::fit_changepoint;
use csccs_core::era_builder::{merge_eras, EraRule};
use csccs_core::evaluation::{auroc, precision_at_k, roc_points, trapezoid_area};
use csccs_core::exposure_design::{build_csccs_design, build_csccsa_design, recover_baselines};
use csccs_core::lasso_solver::{fit_lasso, lambda_max, lasso_path, soft_threshold, LassoProblem};
use csccs_core::pipeline::{fit_model, prepare};
use csccs_core::synth_gen::{generate, Confounding, PlantedEffect, SynthConfig};
use csccs_core::{
    validate_cohort, CohortConfig, Day, DesignMatrix, EraMode, FitConfig, LabelSet, Model, NegativeMode, RankedList,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use instances::random_instance;

type Outcome = Result<String, String>;
type EraCase<'a> = (&'a [i32], EraRule, &'a [(i32, i32)]);
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(elapsed: Duration, budget: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed < budget, || {
        format!("{what} took {elapsed:.2?}, budget {budget:.0?}")
    })
}

fn dense(design: &DesignMatrix) -> DMatrix<f64> {
    let rows = design.to_dense();
    DMatrix::from_fn(design.n_rows(), design.n_cols(), |r, c| rows[r][c])
}

fn fixed_effect_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut checked, mut attempts) = (0, 0);
    let (mut worst_beta, mut worst_alpha): (f64, f64) = (0.0, 0.0);
    while checked < 50 {
        attempts += 1;
        ensure(attempts < 10_000, || "could not draw 50 full-rank instances".into())?;
        let m = rng.random_range(1..=5);
        let Some(inst) = random_instance(&mut rng, 10, 8, m, false) else {
            continue;
        };
        let x = inst.raw_exposure();
        let Some((beta_ref, alpha_ref)) =
            oracles::fixed_effects(&x, &inst.patient_of_row(), inst.cohort.n_patients(), &inst.response())
        else {
            continue;
        };
        let design = build_csccs_design(&inst.cohort, &inst.exposure).map_err(|e| e.to_string())?;
        let problem = LassoProblem {
            tolerance: 1e-13,
            ..LassoProblem::new(&design, 0.0)
        };
        let sol = fit_lasso(&problem).map_err(|e| e.to_string())?;
        ensure(sol.converged, || format!("instance {checked}: no convergence"))?;
        let alpha = recover_baselines(&inst.cohort, &inst.exposure, &sol.beta);
        for (a, b) in sol.beta.iter().zip(&beta_ref) {
            worst_beta = worst_beta.max((a - b).abs());
        }
        for (a, b) in alpha.iter().zip(&alpha_ref) {
            worst_alpha = worst_alpha.max((a - b).abs());
        }
        checked += 1;
    }
    let elapsed = start.elapsed();
    ensure(worst_beta <= 1e-8, || format!("max |Δβ| = {worst_beta:e}"))?;
    ensure(worst_alpha <= 1e-8, || format!("max |Δα| = {worst_alpha:e}"))?;
    within_budget(elapsed, Duration::from_secs(1), "50 instances")?;
    Ok(format!(
        "50 instances, max |Δβ| = {worst_beta:.1e}, max |Δα| = {worst_alpha:.1e}, {elapsed:.2?}"
    ))
}

fn lasso_correctness() -> Outcome {
    for (z, t, want) in [(3.0, 1.0, 2.0), (-3.0, 1.0, -2.0), (0.5, 1.0, 0.0)] {
        ensure(soft_threshold(z, t) == want, || {
            format!("soft_threshold({z}, {t}) != {want}")
        })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (mut checked, mut solves) = (0, 0);
    let (mut worst_obj, mut worst_kkt): (f64, f64) = (0.0, 0.0);
    while checked < 100 {
        let m = rng.random_range(2..=20);
        let twin = checked % 5 == 0;
        let Some(inst) = random_instance(&mut rng, 20, 8, m, twin) else {
            continue;
        };
        let design = if checked % 2 == 0 {
            build_csccs_design(&inst.cohort, &inst.exposure)
        } else {
            build_csccsa_design(&inst.cohort, &inst.exposure, 200)
        };
        let Ok(design) = design else { continue };
        let lmax = lambda_max(&design);
        if lmax == 0.0 {
            continue;
        }
        let x = dense(&design);
        let lambda = lmax * 10f64.powf(-rng.random_range(0.0..2.0));
        let sol = fit_lasso(&LassoProblem::new(&design, lambda)).map_err(|e| e.to_string())?;
        let reference = oracles::ista(&x, &design.y, lambda);
        let f_cd = oracles::lasso_objective(&x, &design.y, &sol.beta, lambda);
        let f_ref = oracles::lasso_objective(&x, &design.y, &reference, lambda);
        let rel = (f_cd - f_ref).abs() / f_ref.abs().max(f64::MIN_POSITIVE);
        ensure(rel <= 1e-6, || {
            format!("instance {checked}: objective {f_cd} vs ISTA {f_ref}")
        })?;
        worst_obj = worst_obj.max(rel);

        let path = lasso_path(&design, 20, 3).map_err(|e| e.to_string())?;
        for s in path.solutions.iter().chain(std::iter::once(&sol)) {
            let independent = oracles::kkt_residual(&x, &design.y, &s.beta, s.lambda);
            ensure(s.kkt_violation <= 1e-8 && independent <= 1e-8, || {
                format!(
                    "instance {checked}, λ = {}: KKT {} (independent {independent})",
                    s.lambda, s.kkt_violation
                )
            })?;
            worst_kkt = worst_kkt.max(independent);
            solves += 1;
        }
        checked += 1;
    }
    Ok(format!(
        "100 instances, max objective gap {worst_obj:.1e}, max KKT {worst_kkt:.1e} over {solves} solves"
    ))
}

fn changepoint_recovery() -> Outcome {
    let start = Instant::now();
    let planted = |k: usize, at: usize, slope: f64| -> Vec<f64> {
        (1..=k).map(|r| 1.0 + slope * (r as f64 - at as f64).max(0.0)).collect()
    };
    for (k, at, slope) in [(100, 80, 5.0), (60, 50, 2.0), (200, 150, 1.0), (100, 90, 10.0)] {
        let y = planted(k, at, slope);
        let oracle = oracles::grid_changepoint(&y);
        let fit = fit_changepoint(&y).map_err(|e| e.to_string())?;
        ensure((fit.psi - oracle as f64).abs() <= 1.0, || {
            format!("noise-free K={k}: ψ = {} vs oracle {oracle}", fit.psi)
        })?;
    }

    let noise = Normal::new(0.0, 0.5).expect("valid normal");
    let mut hits = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = planted(100, 80, 1.0);
        for v in &mut y {
            *v += noise.sample(&mut rng);
        }
        let oracle = oracles::grid_changepoint(&y);
        let fit = fit_changepoint(&y).map_err(|e| e.to_string())?;
        if (fit.psi - oracle as f64).abs() <= 2.0 {
            hits += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(hits >= 95, || format!("noisy recovery in {hits}/100 seeds"))?;
    within_budget(elapsed, Duration::from_secs(5), "change-point checks")?;
    Ok(format!(
        "noise-free within ±1 rank, noisy within ±2 ranks in {hits}/100 seeds, {elapsed:.2?}"
    ))
}

fn era_construction() -> Outcome {
    let rule = |n, pw| EraRule {
        recurrent: true,
        duration_days: n,
        persistence_window: pw,
    };
    let days = |xs: &[i32]| xs.iter().map(|&d| Day(d)).collect::<Vec<_>>();
    let hand: [EraCase; 3] = [
        (&[0, 20], rule(30, 30), &[(0, 50)]),
        (&[0, 100], rule(30, 30), &[(0, 30), (100, 130)]),
        (&[7], EraRule::NON_RECURRENT, &[(7, 22)]),
    ];
    for (dates, r, want) in hand {
        let got: Vec<(i32, i32)> = merge_eras(&days(dates), r).iter().map(|e| (e.0 .0, e.1 .0)).collect();
        ensure(got == want, || format!("hand example {dates:?}: {got:?} != {want:?}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for stream in 0..1000 {
        let n_rx = rng.random_range(1..=30);
        let mut dates: Vec<i32> = (0..n_rx).map(|_| rng.random_range(0..2000)).collect();
        dates.sort_unstable();
        dates.dedup();
        let (n, pw) = (rng.random_range(1..=60), rng.random_range(0..=60));
        let eras: Vec<(i32, i32)> = merge_eras(&days(&dates), rule(n, pw))
            .iter()
            .map(|e| (e.0 .0, e.1 .0))
            .collect();
        let ctx = || format!("stream {stream} (n={n}, pw={pw}, dates={dates:?})");
        ensure(eras.windows(2).all(|w| w[1].0 - w[0].1 > pw), || {
            format!("{}: gap ≤ pw", ctx())
        })?;
        let remerged = oracles::merge_fixpoint(eras.clone(), pw);
        ensure(remerged == eras, || {
            format!("{}: merging again changes the eras", ctx())
        })?;
        for d in &dates {
            let covering = eras.iter().filter(|e| e.0 <= *d && *d <= e.1).count();
            ensure(covering == 1, || format!("{}: day {d} covered {covering} times", ctx()))?;
        }
        let reference = oracles::merge_fixpoint(dates.iter().map(|&d| (d, d + n)).collect(), pw);
        ensure(eras == reference, || {
            format!("{}: {eras:?} != fixpoint {reference:?}", ctx())
        })?;
    }
    Ok(
        "3 hand examples exact; 1000 random streams separated, idempotent, covering, equal to the fixpoint oracle"
            .into(),
    )
}

struct RecoveryStats {
    auroc: f64,
    top40: usize,
    kkt: f64,
}

fn planted_recovery(
    model: Model,
    prepared: &csccs_core::pipeline::Prepared,
    labels: &LabelSet,
) -> Result<RecoveryStats, String> {
    let outcome = fit_model(prepared, &FitConfig::new(model)).map_err(|e| e.to_string())?;
    let ranked = outcome.report.ranked_list();
    let auc = auroc(&ranked, labels, NegativeMode::AllOthers).map_err(|e| e.to_string())?;
    let top: BTreeSet<&str> = ranked.drugs().take(40).collect();
    Ok(RecoveryStats {
        auroc: auc,
        top40: labels.positives().iter().filter(|d| top.contains(d.as_str())).count(),
        kkt: outcome.metrics.kkt_violation.unwrap_or(0.0),
    })
}

fn synthetic_recovery() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    pool.install(|| {
        let start = Instant::now();
        let config = SynthConfig::default();
        ensure(
            config.effects.iter().all(|e| e.beta.abs() >= 2.0 * config.noise_sd),
            || "planted effects smaller than 2σ".into(),
        )?;
        let data = generate(&config).map_err(|e| e.to_string())?;
        let cohort = validate_cohort(data.raw_events(), &CohortConfig::default()).map_err(|e| e.to_string())?;
        let positives: Vec<String> = config
            .effects
            .iter()
            .map(|e| csccs_core::synth_gen::drug_name(e.drug))
            .collect();
        let labels = LabelSet::new(positives, Vec::<String>::new()).map_err(|e| e.to_string())?;
        let prepared = prepare(cohort, EraMode::Changepoint);

        let mut lines = Vec::new();
        for model in [Model::Csccs, Model::Csccsa] {
            let s = planted_recovery(model, &prepared, &labels)?;
            ensure(s.auroc >= 0.90, || format!("{model:?} AUROC {}", s.auroc))?;
            ensure(s.top40 == 5, || {
                format!("{model:?}: only {} planted drugs in the top 40", s.top40)
            })?;
            ensure(s.kkt <= 1e-8, || format!("{model:?}: KKT {}", s.kkt))?;
            lines.push(format!("{model:?} AUROC {:.3}, {}/5 in top 40", s.auroc, s.top40));
        }
        let pm = planted_recovery(Model::Pm, &prepared, &labels)?;
        lines.push(format!("PM AUROC {:.3} (reported)", pm.auroc));
        let elapsed = start.elapsed();
        within_budget(elapsed, Duration::from_secs(60), "synthetic pipeline")?;
        Ok(format!("{}; single-threaded {elapsed:.2?}", lines.join("; ")))
    })
}

fn bystander_scenario() -> Outcome {
    let (causal, bystander) = (0, 5);
    let (causal_name, bystander_name) = (
        csccs_core::synth_gen::drug_name(causal),
        csccs_core::synth_gen::drug_name(bystander),
    );
    let mut wins = 0;
    let mut pm_confused = 0;
    let mut min_share: f64 = 1.0;
    for seed in 0..100 {
        let config = SynthConfig {
            seed,
            n_patients: 1000,
            n_drugs: 30,
            effects: vec![PlantedEffect {
                drug: causal,
                beta: -25.0,
            }],
            confounding: Confounding::Bystander {
                causal,
                bystander,
                co_rate: 0.9,
            },
            ..SynthConfig::default()
        };
        let data = generate(&config).map_err(|e| e.to_string())?;
        let causal_days: BTreeSet<(&str, Day)> = data
            .prescriptions
            .iter()
            .filter(|r| r.drug == causal_name)
            .map(|r| (r.patient.as_str(), r.date))
            .collect();
        let uses: Vec<_> = data.prescriptions.iter().filter(|r| r.drug == bystander_name).collect();
        let shared = uses
            .iter()
            .filter(|r| causal_days.contains(&(r.patient.as_str(), r.date)))
            .count();
        let share = shared as f64 / uses.len().max(1) as f64;
        ensure(share >= 0.8, || {
            format!("seed {seed}: bystander co-prescribed in only {share:.2} of uses")
        })?;
        min_share = min_share.min(share);

        let cohort = validate_cohort(data.raw_events(), &CohortConfig::default()).map_err(|e| e.to_string())?;
        let prepared = prepare(cohort, EraMode::Changepoint);
        let fit = fit_model(&prepared, &FitConfig::new(Model::Csccs)).map_err(|e| e.to_string())?;
        let ranked: Vec<&str> = fit.report.entries.iter().map(|e| e.drug.as_str()).collect();
        let pos = |d: &str| ranked.iter().position(|x| *x == d);
        let causal_score = fit
            .report
            .entries
            .iter()
            .find(|e| e.drug == causal_name)
            .map(|e| e.score);
        let bystander_score = fit
            .report
            .entries
            .iter()
            .find(|e| e.drug == bystander_name)
            .map(|e| e.score);
        // strictly above: earlier in the ranking and not tied with it
        if let (Some(pc), Some(sc)) = (pos(&causal_name), causal_score) {
            let above = match (pos(&bystander_name), bystander_score) {
                (Some(pb), Some(sb)) => pc < pb && sc < sb,
                _ => sc != 0.0,
            };
            if above {
                wins += 1;
            }
        }
        let pm = fit_model(&prepared, &FitConfig::new(Model::Pm)).map_err(|e| e.to_string())?;
        if pm
            .report
            .entries
            .iter()
            .any(|e| e.drug == bystander_name && e.score < 0.0)
        {
            pm_confused += 1;
        }
    }
    ensure(wins >= 90, || {
        format!("causal strictly above bystander in {wins}/100 seeds")
    })?;
    Ok(format!(
        "causal above bystander in {wins}/100 seeds (co-prescription share ≥ {min_share:.2}); PM bystander score negative in {pm_confused}/100 (reported)"
    ))
}

fn evaluation_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut lists = 0;
    let mut worst_area: f64 = 0.0;
    while lists < 500 {
        let len = rng.random_range(2..=200);
        let scores: Vec<(String, f64)> = (0..len)
            .map(|i| (format!("drug{i:03}"), f64::from(rng.random_range(-6..=6_i32)) * 0.5))
            .collect();
        let positives: Vec<String> = scores
            .iter()
            .filter(|_| rng.random_bool(0.3))
            .map(|s| s.0.clone())
            .collect();
        let labels = LabelSet::new(positives, Vec::<String>::new()).map_err(|e| e.to_string())?;
        let ranked = RankedList::from_scores(scores.clone());
        let Ok(auc) = auroc(&ranked, &labels, NegativeMode::AllOthers) else {
            continue;
        };
        let items: Vec<((u8, f64), bool)> = scores
            .iter()
            .map(|(d, s)| (if *s == 0.0 { (1, 0.0) } else { (0, *s) }, labels.is_positive(d)))
            .collect();
        let brute = oracles::brute_force_auroc(&items);
        ensure(auc == brute, || {
            format!("list {lists}: AUROC {auc} vs brute force {brute}")
        })?;
        let points = roc_points(&ranked, &labels, NegativeMode::AllOthers).map_err(|e| e.to_string())?;
        let area = trapezoid_area(&points);
        ensure((area - auc).abs() <= 1e-12, || {
            format!("list {lists}: trapezoid {area} vs {auc}")
        })?;
        worst_area = worst_area.max((area - auc).abs());
        lists += 1;
    }

    let ranked = RankedList::from_scores([
        ("a".to_string(), -3.0),
        ("b".to_string(), -2.0),
        ("c".to_string(), -1.0),
    ]);
    let labels = LabelSet::new(["a", "c"].map(String::from), Vec::<String>::new()).map_err(|e| e.to_string())?;
    let p = precision_at_k(&ranked, &labels, &[2, 3, 5]).map_err(|e| e.to_string())?;
    ensure(p[&2].precision == 0.5, || format!("P@2 = {}", p[&2].precision))?;
    ensure(p[&3].precision == 2.0 / 3.0, || format!("P@3 = {}", p[&3].precision))?;
    ensure(p[&5].truncated && p[&5].denominator == 3, || {
        "P@5 not flagged as truncated".into()
    })?;
    ensure(!p[&2].truncated && !p[&3].truncated, || "P@2/P@3 flagged".into())?;
    Ok(format!(
        "500 lists: AUROC equals brute force exactly, max |trapezoid − AUROC| = {worst_area:.1e}; precision@K hand examples exact"
    ))
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).expect("under root").to_path_buf();
                out.insert(rel, fs::read(&path).expect("readable file"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn run_pipeline(dir: &Path, threads: usize) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    fs::write(
        dir.join("run.json"),
        r#"{"fit": {"top_k": 30}, "simulate": {"n_patients": 1500}}"#,
    )
    .map_err(|e| e.to_string())?;
    let data = [
        "--prescriptions",
        "sim/prescriptions.csv",
        "--measurements",
        "sim/measurements.csv",
    ];
    let steps: Vec<Vec<&str>> = vec![
        vec!["simulate", "--out", "sim"],
        [&["build-eras", "--out", "eras"][..], &data].concat(),
        [
            &[
                "fit",
                "--model",
                "csccs",
                "--target-support",
                "200",
                "--dump-design",
                "--out",
                "csccs",
            ][..],
            &data,
        ]
        .concat(),
        [
            &["fit", "--model", "csccsa", "--tau-days", "1461", "--out", "csccsa"][..],
            &data,
        ]
        .concat(),
        [&["pm", "--out", "pm"][..], &data].concat(),
        vec![
            "evaluate",
            "--ranking",
            "csccs/coefficients.tsv",
            "--labels",
            "sim/labels.csv",
            "--k",
            "5,10,20,40",
            "--universe",
            "pm/coefficients.tsv",
            "--out",
            "eval",
        ],
        [
            &[
                "report",
                "--ranking",
                "csccs/coefficients.tsv",
                "--labels",
                "sim/labels.csv",
                "--out",
                "report",
            ][..],
            &data,
        ]
        .concat(),
    ];
    let threads = threads.to_string();
    for step in steps {
        let status = Command::new(env!("CARGO_BIN_EXE_csccs"))
            .current_dir(dir)
            .env("RUST_LOG", "error")
            .args(["--threads", &threads, "--seed", "7", "--config", "run.json"])
            .args(&step)
            .status()
            .map_err(|e| e.to_string())?;
        ensure(status.success(), || {
            format!("`csccs {}` failed: {status}", step.join(" "))
        })?;
    }
    Ok(())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let one = tmp.path().join("threads-1");
    let eight = tmp.path().join("threads-8");
    run_pipeline(&one, 1)?;
    run_pipeline(&eight, 8)?;
    let (a, b) = (snapshot(&one), snapshot(&eight));
    let names: BTreeSet<&PathBuf> = a.keys().chain(b.keys()).collect();
    let differing: Vec<String> = names
        .iter()
        .filter(|n| a.get(**n) != b.get(**n))
        .map(|n| n.display().to_string())
        .collect();
    ensure(differing.is_empty(), || format!("outputs differ: {differing:?}"))?;
    let bytes: usize = a.values().map(Vec::len).sum();
    Ok(format!(
        "{} files ({bytes} bytes) byte-identical at --threads 1 and 8",
        a.len()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("fixed-effect equivalence", fixed_effect_equivalence),
        ("lasso correctness", lasso_correctness),
        ("change-point recovery", changepoint_recovery),
        ("era construction", era_construction),
        ("synthetic recovery", synthetic_recovery),
        ("bystander scenario", bystander_scenario),
        ("evaluation oracles", evaluation_oracles),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}) [{elapsed:.2?}]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail}) [{elapsed:.2?}]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
