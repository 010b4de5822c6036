use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::coalition::{check_players, proper_pool_size, Coalition};
use super::kernel::{binomial, shapley_kernel_weight};
use crate::error::{Error, Result};

/// A proper coalition with its kernel weight and, once evaluated, its game value.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCoalition {
    pub coalition: Coalition,
    pub weight: f64,
    pub outcome: Option<f64>,
}

impl WeightedCoalition {
    fn new(coalition: Coalition, weight: f64) -> Self {
        Self {
            coalition,
            weight,
            outcome: None,
        }
    }
}

/// How the Monte Carlo sampler picks coalitions from the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionWeighting {
    /// Selection probability proportional to the Shapley kernel weight.
    #[default]
    Kernel,
    Uniform,
}

/// Lazily yields every proper coalition of `m` players in non-increasing
/// kernel-weight order.
///
/// Weight depends only on `min(s, m - s)`, so coalitions come in levels
/// `1, 2, ..., m / 2`. Within a level, the coalitions of the smaller size are
/// taken in lexicographic order of their member lists and each is followed
/// directly by its complement, so sizes `s` and `m - s` alternate. When
/// `m = 2s`, only the coalitions containing feature 0 lead a pair.
#[derive(Debug, Clone)]
pub struct PriorityCoalitions {
    m: usize,
    level: usize,
    weight: f64,
    // current combination as ascending member indices; None = start of a level
    combo: Option<Vec<usize>>,
    complement: Option<u32>,
}

impl PriorityCoalitions {
    fn advance_combo(&mut self) -> bool {
        let Some(combo) = self.combo.as_mut() else {
            return false;
        };
        let k = combo.len();
        let m = self.m;
        let mut i = k;
        while i > 0 {
            i -= 1;
            if combo[i] < m - k + i {
                combo[i] += 1;
                for j in i + 1..k {
                    combo[j] = combo[j - 1] + 1;
                }
                // at the middle level, pairs led by sets without feature 0 are already out
                return !(2 * k == m && combo[0] != 0);
            }
        }
        false
    }
}

impl Iterator for PriorityCoalitions {
    type Item = WeightedCoalition;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(bits) = self.complement.take() {
            let coalition = Coalition::from_bits_unchecked(bits, self.m);
            return Some(WeightedCoalition::new(coalition, self.weight));
        }
        loop {
            if self.level == 0 || 2 * self.level > self.m {
                return None;
            }
            if self.combo.is_none() {
                self.combo = Some((0..self.level).collect());
                self.weight = shapley_kernel_weight(self.m, self.level).ok()?;
            } else if !self.advance_combo() {
                self.level += 1;
                self.combo = None;
                continue;
            }
            let bits = self
                .combo
                .as_ref()?
                .iter()
                .fold(0u32, |acc, &i| acc | (1 << i));
            let full = (1u32 << self.m) - 1;
            self.complement = Some(full & !bits);
            let coalition = Coalition::from_bits_unchecked(bits, self.m);
            return Some(WeightedCoalition::new(coalition, self.weight));
        }
    }
}

fn check_enumerable(m: usize) -> Result<()> {
    check_players(m)?;
    if m < 2 {
        return Err(Error::Config(format!(
            "coalition enumeration needs at least 2 players, got {m}"
        )));
    }
    Ok(())
}

fn check_budget(m: usize, budget: usize) -> Result<()> {
    let pool = proper_pool_size(m);
    if budget == 0 {
        return Err(Error::Config("sampling budget must be positive".into()));
    }
    if budget > pool {
        return Err(Error::Config(format!(
            "budget {budget} exceeds the {pool} proper coalitions of {m} players"
        )));
    }
    Ok(())
}

/// All `2^m - 2` proper coalitions, highest kernel weight first.
pub fn enumerate_coalitions_priority(m: usize) -> Result<PriorityCoalitions> {
    check_enumerable(m)?;
    Ok(PriorityCoalitions {
        m,
        level: 1,
        weight: 0.0,
        combo: None,
        complement: None,
    })
}

/// The first `budget` coalitions of the priority order. Deterministic.
pub fn sample_coalitions_priority(m: usize, budget: usize) -> Result<Vec<WeightedCoalition>> {
    check_enumerable(m)?;
    check_budget(m, budget)?;
    Ok(enumerate_coalitions_priority(m)?.take(budget).collect())
}

/// Kernel-weighted Monte Carlo sampling without replacement.
pub fn sample_coalitions_montecarlo(
    m: usize,
    budget: usize,
    seed: u64,
) -> Result<Vec<WeightedCoalition>> {
    sample_coalitions_montecarlo_with(m, budget, seed, SelectionWeighting::Kernel)
}

/// Draws `budget` distinct proper coalitions, one at a time, each with
/// probability proportional to its selection weight among those not yet drawn.
///
/// A draw first picks a size class by its remaining mass, then a uniformly
/// random unseen subset of that size.
pub fn sample_coalitions_montecarlo_with(
    m: usize,
    budget: usize,
    seed: u64,
    weighting: SelectionWeighting,
) -> Result<Vec<WeightedCoalition>> {
    check_enumerable(m)?;
    check_budget(m, budget)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // index s - 1 holds size class s
    let kernel: Vec<f64> = (1..m)
        .map(|s| shapley_kernel_weight(m, s))
        .collect::<Result<_>>()?;
    let selection: Vec<f64> = match weighting {
        SelectionWeighting::Kernel => kernel.clone(),
        SelectionWeighting::Uniform => vec![1.0; m - 1],
    };
    let mut remaining: Vec<u64> = (1..m).map(|s| binomial(m, s)).collect();
    let mut seen: HashSet<u32> = HashSet::with_capacity(budget);
    let mut out = Vec::with_capacity(budget);

    while out.len() < budget {
        let masses: Vec<f64> = remaining
            .iter()
            .zip(&selection)
            .map(|(&r, &w)| r as f64 * w)
            .collect();
        let total: f64 = masses.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut class = masses.len() - 1;
        for (idx, &mass) in masses.iter().enumerate() {
            if mass > 0.0 && target < mass {
                class = idx;
                break;
            }
            target -= mass;
        }
        // float slack can land past the end; fall back to the last class with mass
        while remaining[class] == 0 {
            class -= 1;
        }
        let size = class + 1;
        let bits = loop {
            let candidate = random_subset(&mut rng, m, size);
            if !seen.contains(&candidate) {
                break candidate;
            }
        };
        seen.insert(bits);
        remaining[class] -= 1;
        out.push(WeightedCoalition::new(
            Coalition::from_bits_unchecked(bits, m),
            kernel[class],
        ));
    }
    Ok(out)
}

/// Uniform random `k`-subset of `0..n` (Floyd's algorithm).
fn random_subset(rng: &mut ChaCha8Rng, n: usize, k: usize) -> u32 {
    let mut bits = 0u32;
    for j in n - k..n {
        let t = rng.random_range(0..=j);
        if bits & (1 << t) != 0 {
            bits |= 1 << j;
        } else {
            bits |= 1 << t;
        }
    }
    bits
}
