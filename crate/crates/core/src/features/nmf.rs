use ndarray::{Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmfConfig {
    pub max_iter: usize,
    /// Stop once the relative drop in reconstruction error falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-4,
            seed: 0,
        }
    }
}

/// Result of [`nmf`]: `V ~ W H` with `W: n x k`, `H: k x m`.
#[derive(Debug, Clone)]
pub struct Nmf {
    pub w: Array2<f64>,
    pub h: Array2<f64>,
    /// Frobenius reconstruction error after initialisation and after every iteration.
    pub errors: Vec<f64>,
}

impl Nmf {
    pub fn iterations(&self) -> usize {
        self.errors.len() - 1
    }

    pub fn final_error(&self) -> f64 {
        *self.errors.last().expect("errors always holds the initial value")
    }
}

pub fn frobenius_error(v: ArrayView2<'_, f64>, w: &Array2<f64>, h: &Array2<f64>) -> f64 {
    let approx = w.dot(h);
    Zip::from(v)
        .and(&approx)
        .fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b))
        .sqrt()
}

/// Non-negative matrix factorisation by Lee-Seung multiplicative updates on
/// the Frobenius loss. Zero entries stay zero, so a zero row of `V` yields a
/// zero row of `W`.
pub fn nmf(v: ArrayView2<'_, f64>, k: usize, config: &NmfConfig) -> Result<Nmf> {
    let (n, m) = v.dim();
    if k == 0 || k > n.min(m) {
        return Err(Error::Config(format!(
            "NMF rank {k} outside 1..={} for a {n}x{m} matrix",
            n.min(m)
        )));
    }
    if let Some(bad) = v.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(Error::Domain(format!(
            "NMF input must be finite and nonnegative, found {bad}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scale = (v.mean().unwrap_or(0.0) / k as f64).sqrt();
    // (0, 1] so no factor entry starts at an absorbing zero
    let mut w = Array2::from_shape_simple_fn((n, k), || scale * (1.0 - rng.random::<f64>()));
    let mut h = Array2::from_shape_simple_fn((k, m), || scale * (1.0 - rng.random::<f64>()));

    let mut errors = vec![frobenius_error(v, &w, &h)];
    for _ in 0..config.max_iter {
        let prev = *errors.last().unwrap();
        if prev == 0.0 {
            break;
        }

        let numer = w.t().dot(&v);
        let denom = w.t().dot(&w).dot(&h);
        Zip::from(&mut h)
            .and(&numer)
            .and(&denom)
            .for_each(|x, &a, &b| *x = ratio_update(*x, a, b));

        let numer = v.dot(&h.t());
        let denom = w.dot(&h.dot(&h.t()));
        Zip::from(&mut w)
            .and(&numer)
            .and(&denom)
            .for_each(|x, &a, &b| *x = ratio_update(*x, a, b));

        let err = frobenius_error(v, &w, &h);
        errors.push(err);
        if (prev - err) / prev < config.tol {
            break;
        }
    }
    Ok(Nmf { w, h, errors })
}

#[inline]
fn ratio_update(current: f64, numer: f64, denom: f64) -> f64 {
    // denom == 0 only when the paired factor column is all zero, in which case
    // this entry has no influence on the product
    if denom > 0.0 {
        current * numer / denom
    } else {
        0.0
    }
}
