//! L1-penalized least squares, `½‖y − Xβ‖² + λ‖β‖₁`, solved by cyclic
//! coordinate descent over the sparse columns of a [`DesignMatrix`].

use serde::Serialize;

use crate::error::LassoError;
use crate::exposure_design::{DesignMatrix, SparseColumn};

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_SWEEPS: u32 = 10_000;
pub const DEFAULT_TARGET_SUPPORT: usize = 200;
pub const DEFAULT_N_LAMBDAS: usize = 100;
/// Smallest grid λ as a fraction of λ_max.
pub const LAMBDA_MIN_RATIO: f64 = 1e-3;

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LassoProblem<'a> {
    pub design: &'a DesignMatrix,
    pub lambda: f64,
    pub tolerance: f64,
    pub max_sweeps: u32,
}

impl<'a> LassoProblem<'a> {
    pub fn new(design: &'a DesignMatrix, lambda: f64) -> Self {
        LassoProblem {
            design,
            lambda,
            tolerance: DEFAULT_TOLERANCE,
            max_sweeps: DEFAULT_MAX_SWEEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LassoSolution {
    pub lambda: f64,
    pub beta: Vec<f64>,
    pub objective: f64,
    /// Largest KKT residual, relative to `max(1, ‖Xᵀy‖∞)`.
    pub kkt_violation: f64,
    pub sweeps: u32,
    pub converged: bool,
}

impl LassoSolution {
    pub fn support(&self) -> usize {
        self.beta.iter().filter(|b| **b != 0.0).count()
    }
}

pub fn objective(design: &DesignMatrix, beta: &[f64], lambda: f64) -> f64 {
    let fitted = design.x_times(beta);
    let rss: f64 = design.y.iter().zip(&fitted).map(|(y, f)| (y - f) * (y - f)).sum();
    0.5 * rss + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// `max(1, ‖Xᵀy‖∞)`, the scale KKT residuals are reported against.
fn kkt_scale(design: &DesignMatrix) -> f64 {
    lambda_max(design).max(1.0)
}

/// Largest subgradient-optimality violation at `beta`, relative to
/// `max(1, ‖Xᵀy‖∞)`. Active coordinates need `X_mᵀr = λ·sign(β_m)`, inactive
/// ones `|X_mᵀr| ≤ λ`.
pub fn kkt_violation(design: &DesignMatrix, beta: &[f64], lambda: f64) -> f64 {
    let fitted = design.x_times(beta);
    let residual: Vec<f64> = design.y.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    raw_kkt(&design.columns, &residual, beta, lambda) / kkt_scale(design)
}

fn raw_kkt(columns: &[SparseColumn], residual: &[f64], beta: &[f64], lambda: f64) -> f64 {
    columns
        .iter()
        .zip(beta)
        .map(|(col, &b)| {
            let g = col.dot(residual);
            if b != 0.0 {
                (g - lambda * b.signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Smallest λ whose solution is all zero, `max_m |X_mᵀ y|`.
pub fn lambda_max(design: &DesignMatrix) -> f64 {
    design
        .columns
        .iter()
        .map(|c| c.dot(&design.y).abs())
        .fold(0.0, f64::max)
}

fn validate(design: &DesignMatrix, lambda: f64) -> Result<(), LassoError> {
    if design.n_rows() == 0 {
        return Err(LassoError::EmptyDesign);
    }
    if design.columns.iter().all(|c| c.squared_norm() == 0.0) {
        return Err(LassoError::AllZeroColumns);
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(LassoError::InvalidLambda(lambda));
    }
    Ok(())
}

pub fn fit_lasso(problem: &LassoProblem<'_>) -> Result<LassoSolution, LassoError> {
    validate(problem.design, problem.lambda)?;
    let mut beta = vec![0.0; problem.design.n_cols()];
    Ok(Solver::new(problem.design).solve(problem.lambda, &mut beta, problem.tolerance, problem.max_sweeps))
}

struct Solver<'a> {
    design: &'a DesignMatrix,
    sq_norms: Vec<f64>,
    scale: f64,
}

impl<'a> Solver<'a> {
    fn new(design: &'a DesignMatrix) -> Self {
        Solver {
            design,
            sq_norms: design.columns.iter().map(SparseColumn::squared_norm).collect(),
            scale: kkt_scale(design),
        }
    }

    /// One pass of coordinate updates over `coords`; returns the largest |Δβ|.
    fn sweep(&self, coords: impl Iterator<Item = usize>, lambda: f64, beta: &mut [f64], residual: &mut [f64]) -> f64 {
        let mut max_change: f64 = 0.0;
        for m in coords {
            let norm = self.sq_norms[m];
            if norm == 0.0 {
                beta[m] = 0.0;
                continue;
            }
            let col = &self.design.columns[m];
            let old = beta[m];
            let z = col.dot(residual) + norm * old;
            let new = soft_threshold(z, lambda) / norm;
            let delta = new - old;
            if delta != 0.0 {
                for (&r, &v) in col.rows.iter().zip(&col.values) {
                    residual[r as usize] -= delta * v;
                }
                beta[m] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        max_change
    }

    /// Cyclic coordinate descent from the warm start in `beta`.
    ///
    /// Full sweeps alternate with passes over the active set; the run stops
    /// once a full sweep moves no coefficient by more than
    /// `tol·max(1, ‖β‖∞)` and the KKT residual is within `tol`.
    fn solve(&self, lambda: f64, beta: &mut [f64], tol: f64, max_sweeps: u32) -> LassoSolution {
        let fitted = self.design.x_times(beta);
        let mut residual: Vec<f64> = self.design.y.iter().zip(&fitted).map(|(y, f)| y - f).collect();
        let n = beta.len();
        let mut sweeps = 0;
        let mut converged = false;
        let mut kkt = f64::INFINITY;

        while sweeps < max_sweeps {
            let change = self.sweep(0..n, lambda, beta, &mut residual);
            sweeps += 1;
            let threshold = tol * beta.iter().fold(1.0f64, |a, b| a.max(b.abs()));
            if change <= threshold {
                kkt = raw_kkt(&self.design.columns, &residual, beta, lambda) / self.scale;
                if kkt <= tol {
                    converged = true;
                    break;
                }
            }
            let active: Vec<usize> = (0..n).filter(|&m| beta[m] != 0.0).collect();
            while sweeps < max_sweeps {
                let change = self.sweep(active.iter().copied(), lambda, beta, &mut residual);
                sweeps += 1;
                let threshold = tol * beta.iter().fold(1.0f64, |a, b| a.max(b.abs()));
                if change <= threshold {
                    break;
                }
            }
        }
        if !converged {
            kkt = raw_kkt(&self.design.columns, &residual, beta, lambda) / self.scale;
            log::warn!("lasso at lambda={lambda:e} stopped after {sweeps} sweeps, kkt={kkt:e}");
        }
        let rss: f64 = residual.iter().map(|r| r * r).sum();
        LassoSolution {
            lambda,
            beta: beta.to_vec(),
            objective: 0.5 * rss + lambda * beta.iter().map(|b| b.abs()).sum::<f64>(),
            kkt_violation: kkt,
            sweeps,
            converged,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathOptions {
    pub n_lambdas: usize,
    pub target_support: usize,
    pub min_ratio: f64,
    pub tolerance: f64,
    pub max_sweeps: u32,
    /// Fit on unit-norm columns and map coefficients back to the raw scale.
    pub standardize: bool,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions {
            n_lambdas: DEFAULT_N_LAMBDAS,
            target_support: DEFAULT_TARGET_SUPPORT,
            min_ratio: LAMBDA_MIN_RATIO,
            tolerance: DEFAULT_TOLERANCE,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathResult {
    pub lambda_max: f64,
    /// Descending.
    pub lambdas: Vec<f64>,
    pub solutions: Vec<LassoSolution>,
    pub selected: usize,
    pub target_support: usize,
    pub target_reached: bool,
    /// Grid steps where the support shrank as λ decreased.
    pub support_drops: usize,
}

impl PathResult {
    pub fn selected_solution(&self) -> &LassoSolution {
        &self.solutions[self.selected]
    }
}

pub fn lasso_path(design: &DesignMatrix, n_lambdas: usize, target_support: usize) -> Result<PathResult, LassoError> {
    lasso_path_with(
        design,
        &PathOptions {
            n_lambdas,
            target_support,
            ..PathOptions::default()
        },
    )
}

/// Warm-started path over a log-spaced grid from λ_max down to
/// `λ_max·min_ratio`, selecting the grid point whose support is closest to
/// the target (ties go to the larger λ).
pub fn lasso_path_with(design: &DesignMatrix, options: &PathOptions) -> Result<PathResult, LassoError> {
    if options.n_lambdas < 2 {
        return Err(LassoError::TooFewLambdas(options.n_lambdas));
    }
    if options.target_support == 0 {
        return Err(LassoError::InvalidTarget);
    }
    validate(design, 0.0)?;

    let scales: Option<Vec<f64>> = options.standardize.then(|| {
        design
            .columns
            .iter()
            .map(|c| {
                let n = c.squared_norm().sqrt();
                if n > 0.0 {
                    n
                } else {
                    1.0
                }
            })
            .collect()
    });
    let scaled;
    let working = match &scales {
        Some(s) => {
            let mut d = design.clone();
            for (col, &sc) in d.columns.iter_mut().zip(s) {
                col.values.iter_mut().for_each(|v| *v /= sc);
            }
            scaled = d;
            &scaled
        }
        None => design,
    };

    let lmax = lambda_max(working);
    let last = (options.n_lambdas - 1) as f64;
    let lambdas: Vec<f64> = (0..options.n_lambdas)
        .map(|k| lmax * options.min_ratio.powf(k as f64 / last))
        .collect();

    let solver = Solver::new(working);
    let mut beta = vec![0.0; working.n_cols()];
    let mut solutions = Vec::with_capacity(lambdas.len());
    for &lambda in &lambdas {
        let mut sol = solver.solve(lambda, &mut beta, options.tolerance, options.max_sweeps);
        if let Some(s) = &scales {
            sol.beta.iter_mut().zip(s).for_each(|(b, sc)| *b /= sc);
        }
        solutions.push(sol);
    }

    let supports: Vec<usize> = solutions.iter().map(LassoSolution::support).collect();
    let support_drops = supports.windows(2).filter(|w| w[1] < w[0]).count();
    if support_drops > 0 {
        log::debug!("support shrank at {support_drops} grid step(s)");
    }
    let target = options.target_support;
    let selected = supports
        .iter()
        .enumerate()
        .min_by_key(|(i, &s)| (s.abs_diff(target), *i))
        .map(|(i, _)| i)
        .expect("grid is non-empty");
    let target_reached = supports.iter().any(|&s| s >= target);
    if !target_reached {
        log::warn!(
            "target support {target} unreachable; densest path solution has {} nonzero coefficient(s)",
            supports[selected]
        );
    }

    Ok(PathResult {
        lambda_max: lmax,
        lambdas,
        solutions,
        selected,
        target_support: target,
        target_reached,
        support_drops,
    })
}
