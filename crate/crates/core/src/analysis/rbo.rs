use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RBO_P: f64 = 0.9;

/// Feature indices ordered from most to least important.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranking {
    items: Vec<usize>,
}

impl Ranking {
    pub fn new(items: Vec<usize>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(items.len());
        if let Some(dup) = items.iter().find(|i| !seen.insert(**i)) {
            return Err(Error::Input(format!("ranking lists item {dup} twice")));
        }
        Ok(Self { items })
    }

    /// Indices sorted by descending value; ties go to the lower index.
    pub fn by_descending(values: &[f64]) -> Self {
        let mut items: Vec<usize> = (0..values.len()).collect();
        items.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        Self { items }
    }

    /// Features with positive value, largest first.
    pub fn positive(values: &[f64]) -> Self {
        let mut r = Self::by_descending(values);
        r.items.retain(|&i| values[i] > 0.0);
        r
    }

    /// Features with negative value, most negative first.
    pub fn negative(values: &[f64]) -> Self {
        let negated: Vec<f64> = values.iter().map(|v| -v).collect();
        let mut r = Self::by_descending(&negated);
        r.items.retain(|&i| values[i] < 0.0);
        r
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Extrapolated rank-biased overlap of two equal-length rankings.
///
/// With `A_d = |a[..d] ∩ b[..d]| / d` and `k` the list length,
/// `rbo = A_k p^k + ((1 - p) / p) Σ_{d=1..k} A_d p^d`. The depth weights sum
/// to one analytically; the sum is divided by their computed total so that
/// identical lists score exactly 1 and disjoint prefixes exactly 0.
pub fn rbo(a: &Ranking, b: &Ranking, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!("RBO persistence {p} outside (0, 1)")));
    }
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "rankings differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let k = a.len();
    if k == 0 {
        return Err(Error::Input("cannot compare empty rankings".into()));
    }

    let mut seen_a = HashSet::with_capacity(k);
    let mut seen_b = HashSet::with_capacity(k);
    let mut overlap = 0usize;
    let scale = (1.0 - p) / p;
    let mut pd = 1.0;
    let mut weighted = 0.0;
    let mut total = 0.0;
    let mut agreement = 0.0;
    for d in 1..=k {
        let (x, y) = (a.items[d - 1], b.items[d - 1]);
        if x == y {
            overlap += 1;
        } else {
            if seen_b.contains(&x) {
                overlap += 1;
            }
            if seen_a.contains(&y) {
                overlap += 1;
            }
        }
        seen_a.insert(x);
        seen_b.insert(y);
        pd *= p;
        agreement = overlap as f64 / d as f64;
        let w = scale * pd;
        weighted += w * agreement;
        total += w;
    }
    weighted += agreement * pd;
    total += pd;
    Ok((weighted / total).clamp(0.0, 1.0))
}
