//! Kernel SHAP over coalitions of features.
//!
//! Shapley values are recovered as the solution of a kernel-weighted linear
//! regression over evaluated coalitions. The empty and full coalitions carry
//! infinite kernel weight, so they enter as equality constraints rather than
//! as regression rows. Three coalition sources are supported: the full pool,
//! a deterministic prefix of the pool ordered by kernel weight, and kernel
//! weighted Monte Carlo draws without replacement.

mod coalition;
mod kernel;
mod regression;
mod sampling;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use coalition::{proper_pool_size, Coalition, MAX_PLAYERS};
pub use kernel::{binomial, shapley_kernel_weight};
pub use regression::{solve_weighted_regression, ShapleyValues, RIDGE};
pub use sampling::{
    enumerate_coalitions_priority, sample_coalitions_montecarlo,
    sample_coalitions_montecarlo_with, sample_coalitions_priority, PriorityCoalitions,
    SelectionWeighting, WeightedCoalition,
};

use crate::error::{Error, Result};

/// A cooperative game: maps a coalition of features to a scalar outcome.
///
/// Implementations must be safe to evaluate from several threads at once.
pub trait Game: Sync {
    fn value(&self, coalition: &Coalition) -> Result<f64>;
}

impl<G: Game + ?Sized> Game for &G {
    fn value(&self, coalition: &Coalition) -> Result<f64> {
        (**self).value(coalition)
    }
}

/// Adapts an infallible closure into a [`Game`].
pub struct FnGame<F>(pub F);

impl<F> Game for FnGame<F>
where
    F: Fn(&Coalition) -> f64 + Sync,
{
    fn value(&self, coalition: &Coalition) -> Result<f64> {
        Ok((self.0)(coalition))
    }
}

/// A game given by its full value table, indexed by coalition bits.
#[derive(Debug, Clone)]
pub struct TableGame {
    players: usize,
    values: Vec<f64>,
}

impl TableGame {
    pub fn new(players: usize, values: Vec<f64>) -> Result<Self> {
        if players == 0 || players > 24 {
            return Err(Error::Config(format!(
                "value tables support 1..=24 players, got {players}"
            )));
        }
        if values.len() != 1 << players {
            return Err(Error::Input(format!(
                "value table for {players} players needs {} entries, got {}",
                1usize << players,
                values.len()
            )));
        }
        Ok(Self { players, values })
    }

    /// Evaluates every coalition of `game` once and stores the results.
    pub fn tabulate<G: Game>(game: &G, players: usize) -> Result<Self> {
        if players == 0 || players > 24 {
            return Err(Error::Config(format!(
                "value tables support 1..=24 players, got {players}"
            )));
        }
        let values = (0..1u32 << players)
            .into_par_iter()
            .map(|bits| {
                let c = Coalition::from_bits_unchecked(bits, players);
                game.value(&c).map_err(|e| Error::Game {
                    coalition: c,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { players, values })
    }

    pub fn players(&self) -> usize {
        self.players
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Game for TableGame {
    fn value(&self, coalition: &Coalition) -> Result<f64> {
        if coalition.players() != self.players {
            return Err(Error::Input(format!(
                "coalition over {} players queried on a {}-player table",
                coalition.players(),
                self.players
            )));
        }
        Ok(self.values[coalition.bits() as usize])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Exact,
    Priority,
    MonteCarlo,
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplerKind::Exact => "exact",
            SamplerKind::Priority => "priority",
            SamplerKind::MonteCarlo => "montecarlo",
        })
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(SamplerKind::Exact),
            "priority" => Ok(SamplerKind::Priority),
            "montecarlo" | "monte-carlo" => Ok(SamplerKind::MonteCarlo),
            other => Err(Error::Config(format!("unknown sampler `{other}`"))),
        }
    }
}

/// Sampler choice for [`explain`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub sampler: SamplerKind,
    /// Number of proper coalitions to evaluate; ignored by the exact sampler.
    /// Budgets beyond the pool are clamped to it.
    pub budget: Option<usize>,
    pub seed: u64,
    #[serde(default)]
    pub weighting: SelectionWeighting,
}

impl ExplainConfig {
    pub fn exact() -> Self {
        Self {
            sampler: SamplerKind::Exact,
            budget: None,
            seed: 0,
            weighting: SelectionWeighting::Kernel,
        }
    }

    pub fn priority(budget: usize) -> Self {
        Self {
            sampler: SamplerKind::Priority,
            budget: Some(budget),
            ..Self::exact()
        }
    }

    pub fn montecarlo(budget: usize, seed: u64) -> Self {
        Self {
            sampler: SamplerKind::MonteCarlo,
            budget: Some(budget),
            seed,
            weighting: SelectionWeighting::Kernel,
        }
    }
}

/// Shapley attribution of a game's full-coalition value to its features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    /// Base value, `v(empty)`.
    pub phi0: f64,
    pub phi: Vec<f64>,
    pub v_full: f64,
    pub sampler: SamplerKind,
    /// Requested budget (pool size for the exact sampler).
    pub budget: usize,
    /// Proper coalitions actually evaluated.
    pub evaluated: usize,
    pub seed: Option<u64>,
    /// Set when `phi` has been divided by feature coverage; such vectors no
    /// longer satisfy efficiency.
    #[serde(default)]
    pub size_normalized: bool,
}

impl Explanation {
    pub fn players(&self) -> usize {
        self.phi.len()
    }

    /// `|phi0 + sum(phi) - v_full|`.
    pub fn efficiency_residual(&self) -> f64 {
        (self.phi0 + self.phi.iter().sum::<f64>() - self.v_full).abs()
    }
}

/// Evaluates `v(empty)`, `v(full)` and the sampled coalitions, then solves the
/// constrained regression.
///
/// Coalition evaluations run in parallel; outcomes are attached to samples by
/// position, so results do not depend on scheduling.
pub fn explain<G: Game>(game: &G, players: usize, config: &ExplainConfig) -> Result<Explanation> {
    let empty = Coalition::empty(players)?;
    let full = Coalition::full(players)?;
    let eval = |c: &Coalition| {
        game.value(c).map_err(|e| Error::Game {
            coalition: *c,
            source: Box::new(e),
        })
    };
    let v_empty = eval(&empty)?;
    let v_full = eval(&full)?;

    let pool = proper_pool_size(players);
    let (requested, seed) = match config.sampler {
        SamplerKind::Exact => (pool, None),
        SamplerKind::Priority => (require_budget(config)?, None),
        SamplerKind::MonteCarlo => (require_budget(config)?, Some(config.seed)),
    };
    let effective = requested.min(pool);
    if requested > pool {
        log::warn!(
            "budget {requested} exceeds the {pool} proper coalitions of {players} players; \
             evaluating the whole pool"
        );
    }

    let mut samples = if players < 2 {
        Vec::new()
    } else {
        match config.sampler {
            SamplerKind::Exact => enumerate_coalitions_priority(players)?.collect(),
            SamplerKind::Priority => sample_coalitions_priority(players, effective)?,
            SamplerKind::MonteCarlo => sample_coalitions_montecarlo_with(
                players,
                effective,
                config.seed,
                config.weighting,
            )?,
        }
    };

    // collect per-sample results first so a failure always reports the earliest coalition
    let outcomes: Vec<Result<f64>> = samples.par_iter().map(|wc| eval(&wc.coalition)).collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<f64>>>()?;
    for (wc, outcome) in samples.iter_mut().zip(outcomes) {
        wc.outcome = Some(outcome);
    }

    let values = solve_weighted_regression(&samples, players, v_empty, v_full)?;
    Ok(Explanation {
        phi0: values.phi0,
        phi: values.phi,
        v_full,
        sampler: config.sampler,
        budget: requested,
        evaluated: samples.len(),
        seed,
        size_normalized: false,
    })
}

fn require_budget(config: &ExplainConfig) -> Result<usize> {
    match config.budget {
        Some(0) | None => Err(Error::Config(format!(
            "sampler `{}` needs a positive budget",
            config.sampler
        ))),
        Some(b) => Ok(b),
    }
}
