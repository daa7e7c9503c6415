//! Reference computations that share no code with the library.

use nalgebra::{DMatrix, DVector};

/// Fixed-effect least squares `y = Xβ + Dα` with one indicator column per
/// patient, solved through the normal equations. `None` when the stacked
/// matrix is rank deficient.
pub fn fixed_effects(
    x: &DMatrix<f64>,
    patient_of_row: &[usize],
    n_patients: usize,
    y: &[f64],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let (rows, m) = x.shape();
    let a = DMatrix::from_fn(rows, m + n_patients, |r, c| {
        if c < m {
            x[(r, c)]
        } else if patient_of_row[r] == c - m {
            1.0
        } else {
            0.0
        }
    });
    let ata = a.transpose() * &a;
    let eig = ata.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 1e-9 * max.max(1.0) {
        return None;
    }
    let aty = a.transpose() * DVector::from_column_slice(y);
    let theta = ata.cholesky()?.solve(&aty);
    Some((
        theta.rows(0, m).iter().copied().collect(),
        theta.rows(m, n_patients).iter().copied().collect(),
    ))
}

pub fn lasso_objective(x: &DMatrix<f64>, y: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let r = DVector::from_column_slice(y) - x * DVector::from_column_slice(beta);
    0.5 * r.norm_squared() + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Proximal gradient with step `1/L`, `L` the largest eigenvalue of `XᵀX`.
pub fn ista(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Vec<f64> {
    let m = x.ncols();
    let xtx = x.transpose() * x;
    let xty = x.transpose() * DVector::from_column_slice(y);
    let lipschitz = xtx.clone().symmetric_eigen().eigenvalues.max();
    if lipschitz <= 0.0 {
        return vec![0.0; m];
    }
    let step = 1.0 / lipschitz;
    let mut beta = DVector::zeros(m);
    for _ in 0..2_000_000 {
        let grad = &xtx * &beta - &xty;
        let z = &beta - grad * step;
        let next = z.map(|v| v.signum() * (v.abs() - lambda * step).max(0.0));
        let delta = (&next - &beta).amax();
        beta = next;
        if delta <= 1e-13 * beta.amax().max(1.0) {
            break;
        }
    }
    beta.iter().copied().collect()
}

/// Largest KKT residual of a lasso solution, relative to `max(1, ‖Xᵀy‖∞)`.
pub fn kkt_residual(x: &DMatrix<f64>, y: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let yv = DVector::from_column_slice(y);
    let r = &yv - x * DVector::from_column_slice(beta);
    let g = x.transpose() * r;
    let scale = (x.transpose() * &yv).amax().max(1.0);
    let worst = beta
        .iter()
        .zip(g.iter())
        .map(|(&b, &gj)| {
            if b != 0.0 {
                (gj - lambda * b.signum()).abs()
            } else {
                (gj.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max);
    worst / scale
}

/// Integer ψ in `[2, K-2]` minimizing the SSE of `a + b·r + c·(r − ψ)₊`,
/// each candidate solved by SVD least squares.
pub fn grid_changepoint(values: &[f64]) -> usize {
    let k = values.len();
    let y = DVector::from_column_slice(values);
    (2..=k - 2)
        .map(|psi| {
            let x = DMatrix::from_fn(k, 3, |i, j| {
                let r = (i + 1) as f64;
                match j {
                    0 => 1.0,
                    1 => r,
                    _ => (r - psi as f64).max(0.0),
                }
            });
            let coef = x.clone().svd(true, true).solve(&y, 1e-12).expect("svd solve");
            (psi, (&y - &x * coef).norm_squared())
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty grid")
        .0
}

/// Repeatedly merges adjacent intervals no more than `window` days apart
/// until nothing changes.
pub fn merge_fixpoint(mut eras: Vec<(i32, i32)>, window: i32) -> Vec<(i32, i32)> {
    loop {
        let mut changed = false;
        let mut i = 0;
        while i + 1 < eras.len() {
            if eras[i + 1].0 - eras[i].1 <= window {
                eras[i].1 = eras[i].1.max(eras[i + 1].1);
                eras.remove(i + 1);
                changed = true;
            } else {
                i += 1;
            }
        }
        if !changed {
            return eras;
        }
    }
}

/// Mann–Whitney pair count over `(rank key, is_positive)` items, lower key
/// ranked first, equal keys counting half.
pub fn brute_force_auroc(items: &[((u8, f64), bool)]) -> f64 {
    let mut pairs = 0.0;
    let mut n = 0.0;
    for (pk, pos) in items {
        if !pos {
            continue;
        }
        for (nk, neg) in items {
            if *neg {
                continue;
            }
            n += 1.0;
            if pk < nk {
                pairs += 1.0;
            } else if pk == nk {
                pairs += 0.5;
            }
        }
    }
    pairs / n
}
