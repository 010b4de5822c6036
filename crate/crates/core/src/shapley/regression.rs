use nalgebra::{DMatrix, DVector};

use super::sampling::WeightedCoalition;
use crate::error::{Error, Result};

/// Ridge added to the normal-equation diagonal when the plain system is singular.
pub const RIDGE: f64 = 1e-10;

// a Cholesky pivot below this fraction of the largest diagonal entry counts as singular
const PIVOT_TOLERANCE: f64 = 1e-13;

/// Base value and per-feature Shapley values from the constrained regression.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapleyValues {
    pub phi0: f64,
    pub phi: Vec<f64>,
}

/// Fits `v(z) ~ phi0 + sum_i phi_i z_i` by kernel-weighted least squares with
/// `phi0 = v_empty` and `sum_i phi_i = v_full - v_empty` imposed exactly.
///
/// The sum constraint is eliminated by writing the last feature's value as
/// the remainder, which leaves an unconstrained `(M-1)`-dimensional problem.
pub fn solve_weighted_regression(
    samples: &[WeightedCoalition],
    players: usize,
    v_empty: f64,
    v_full: f64,
) -> Result<ShapleyValues> {
    if players == 0 {
        return Err(Error::Config("regression needs at least one player".into()));
    }
    let delta = v_full - v_empty;
    if players == 1 {
        return Ok(ShapleyValues {
            phi0: v_empty,
            phi: vec![delta],
        });
    }
    if samples.is_empty() {
        return Err(Error::Config("regression needs at least one sample".into()));
    }

    let last = players - 1;
    let dim = players - 1;
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let mut x = vec![0.0; dim];

    for (row, sample) in samples.iter().enumerate() {
        let c = &sample.coalition;
        if c.players() != players {
            return Err(Error::Input(format!(
                "sample {row} has {} players, expected {players}",
                c.players()
            )));
        }
        let outcome = sample.outcome.ok_or_else(|| {
            Error::Input(format!("sample {row} ({c}) has no evaluated outcome"))
        })?;
        let w = sample.weight;
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::Input(format!(
                "sample {row} ({c}) has invalid weight {w}"
            )));
        }
        let z_last = if c.contains(last) { 1.0 } else { 0.0 };
        let y = outcome - v_empty - z_last * delta;
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = (if c.contains(i) { 1.0 } else { 0.0 }) - z_last;
        }
        for i in 0..dim {
            if x[i] == 0.0 {
                continue;
            }
            let wxi = w * x[i];
            rhs[i] += wxi * y;
            for j in i..dim {
                gram[(i, j)] += wxi * x[j];
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
    }

    let reduced = match cholesky_solve(&gram, &rhs) {
        Some(sol) => sol,
        None => {
            log::debug!("normal equations singular; retrying with ridge {RIDGE}");
            let mut ridged = gram.clone();
            for i in 0..dim {
                ridged[(i, i)] += RIDGE;
            }
            cholesky_solve(&ridged, &rhs).ok_or_else(|| {
                let diag_min = (0..dim).map(|i| gram[(i, i)]).fold(f64::INFINITY, f64::min);
                let diag_max = (0..dim).map(|i| gram[(i, i)]).fold(0.0, f64::max);
                Error::Numerical(format!(
                    "singular reduced system: {players} players, {} samples, \
                     gram diagonal in [{diag_min:e}, {diag_max:e}], ridge {RIDGE:e} insufficient",
                    samples.len()
                ))
            })?
        }
    };

    let mut phi: Vec<f64> = reduced.iter().copied().collect();
    let partial: f64 = phi.iter().sum();
    phi.push(delta - partial);
    Ok(ShapleyValues { phi0: v_empty, phi })
}

fn cholesky_solve(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = (0..gram.nrows()).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    if scale <= 0.0 {
        return None;
    }
    let chol = gram.clone().cholesky()?;
    let l = chol.l_dirty();
    let smallest = (0..gram.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if !(smallest > PIVOT_TOLERANCE * scale) {
        return None;
    }
    let sol = chol.solve(rhs);
    sol.iter().all(|v| v.is_finite()).then_some(sol)
}
