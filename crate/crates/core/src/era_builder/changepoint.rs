//! Single-breakpoint segmented regression over rank space, fitted by
//! iterative linearization of the broken-line model
//! `y_r = a + b·r + c·(r − ψ)₊`.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::ChangePointError;

/// Shortest series the four-term linearized regression can be fitted on.
pub const MIN_FIT_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangePointFit {
    /// Breakpoint in 1-based rank units.
    pub psi: f64,
    /// Series value at the breakpoint, interpolated between neighbouring ranks.
    pub value_at_psi: f64,
    pub sse: f64,
    pub iterations: u32,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChangePointOptions {
    pub max_iterations: u32,
    /// Stop once |Δψ| falls below this fraction of the series length.
    pub relative_tolerance: f64,
    /// Starting breakpoint as a fraction of the series length.
    pub initial_fraction: f64,
}

impl Default for ChangePointOptions {
    fn default() -> Self {
        ChangePointOptions {
            max_iterations: 100,
            relative_tolerance: 1e-4,
            initial_fraction: 0.9,
        }
    }
}

pub fn fit_changepoint(values: &[f64]) -> Result<ChangePointFit, ChangePointError> {
    fit_changepoint_with(values, &ChangePointOptions::default())
}

/// Fits one breakpoint to `values` indexed by rank `1..=K`.
///
/// At each iterate ψ the response is regressed on `{1, r, (r−ψ)₊, −1[r>ψ]}`
/// and ψ moves by the ratio of the last two coefficients. Steps that raise
/// the broken-line SSE are halved. ψ stays in `[2, K−2]` so both segments
/// keep at least two points.
pub fn fit_changepoint_with(values: &[f64], options: &ChangePointOptions) -> Result<ChangePointFit, ChangePointError> {
    let k = values.len();
    if k < MIN_FIT_LEN {
        return Err(ChangePointError::TooShort {
            len: k,
            min: MIN_FIT_LEN,
        });
    }
    let (lo_v, hi_v) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if hi_v - lo_v <= f64::EPSILON * hi_v.abs().max(1.0) {
        return Err(ChangePointError::Degenerate);
    }

    let kf = k as f64;
    let lo = 2.0;
    let hi = kf - 2.0;
    let clamp = |psi: f64| psi.clamp(lo, hi);
    let tol = options.relative_tolerance * kf;

    let mut psi = clamp(options.initial_fraction * kf);
    let mut sse = broken_line_sse(values, psi);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < options.max_iterations {
        iterations += 1;
        let Some((slope_change, shift)) = linearized_coefficients(values, psi) else {
            break;
        };
        if slope_change.abs() < 1e-12 {
            break;
        }
        let step = shift / slope_change;
        let mut candidate = clamp(psi + step);
        let mut candidate_sse = broken_line_sse(values, candidate);
        let mut halvings = 0;
        while candidate_sse > sse && halvings < 30 {
            halvings += 1;
            candidate = clamp(psi + step / f64::from(1u32 << halvings.min(31)));
            candidate_sse = broken_line_sse(values, candidate);
        }
        let delta = (candidate - psi).abs();
        if candidate_sse <= sse {
            psi = candidate;
            sse = candidate_sse;
        }
        if delta < tol {
            converged = true;
            break;
        }
    }

    Ok(ChangePointFit {
        psi,
        value_at_psi: interpolate_rank(values, psi),
        sse,
        iterations,
        converged,
    })
}

/// Value at fractional 1-based rank `psi`, linear between neighbours.
pub fn interpolate_rank(values: &[f64], psi: f64) -> f64 {
    let k = values.len();
    let pos = (psi - 1.0).clamp(0.0, (k - 1) as f64);
    let below = pos.floor() as usize;
    let above = (below + 1).min(k - 1);
    let frac = pos - below as f64;
    values[below] + frac * (values[above] - values[below])
}

// Ranks are rescaled to (0, 1] so the normal equations stay well conditioned
// on long series; the ψ update is invariant to that rescaling.
fn linearized_coefficients(values: &[f64], psi: f64) -> Option<(f64, f64)> {
    let k = values.len() as f64;
    let s_psi = psi / k;
    let mut xtx = Matrix4::<f64>::zeros();
    let mut xty = Vector4::<f64>::zeros();
    for (i, &y) in values.iter().enumerate() {
        let s = (i + 1) as f64 / k;
        let (u, v) = if s > s_psi { (s - s_psi, -1.0) } else { (0.0, 0.0) };
        let row = Vector4::new(1.0, s, u, v);
        xtx += row * row.transpose();
        xty += row * y;
    }
    let coef = xtx.lu().solve(&xty)?;
    if !coef.iter().all(|c| c.is_finite()) {
        return None;
    }
    // coefficient of U is in rescaled units; converting the step back to ranks
    // multiplies by K
    Some((coef[2], coef[3] * k))
}

/// Residual sum of squares of the continuous broken line with breakpoint `psi`.
pub fn broken_line_sse(values: &[f64], psi: f64) -> f64 {
    let k = values.len() as f64;
    let s_psi = psi / k;
    let design = |i: usize| {
        let s = (i + 1) as f64 / k;
        Vector3::new(1.0, s, (s - s_psi).max(0.0))
    };
    let mut xtx = Matrix3::<f64>::zeros();
    let mut xty = Vector3::<f64>::zeros();
    for (i, &y) in values.iter().enumerate() {
        let row = design(i);
        xtx += row * row.transpose();
        xty += row * y;
    }
    let Some(coef) = xtx.lu().solve(&xty) else {
        return f64::INFINITY;
    };
    values
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let r = y - design(i).dot(&coef);
            r * r
        })
        .sum()
}
