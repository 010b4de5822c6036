//! Post-hoc analyses of explanations: coverage normalisation, ranking
//! agreement, and the sampler accuracy study.

mod rbo;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use rbo::{rbo, Ranking, DEFAULT_RBO_P};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::shapley::{explain, proper_pool_size, ExplainConfig, Explanation, Game, TableGame};

/// Divides each `phi_i` by the fraction of the image its binary mask covers.
///
/// The result is flagged `size_normalized` and no longer satisfies efficiency.
pub fn normalize_attributions(e: &Explanation, fs: &FeatureSet) -> Result<Explanation> {
    let areas: Vec<usize> = fs.masks().iter().map(|m| m.area()).collect();
    normalize_by_coverage(e, &areas, fs.total_pixels())
}

/// As [`normalize_attributions`], from mask areas and the image pixel count.
pub fn normalize_by_coverage(e: &Explanation, areas: &[usize], total_pixels: usize) -> Result<Explanation> {
    if areas.len() != e.phi.len() {
        return Err(Error::Input(format!(
            "{} Shapley values for {} features",
            e.phi.len(),
            areas.len()
        )));
    }
    if total_pixels == 0 {
        return Err(Error::Input("image has no pixels".into()));
    }
    let total = total_pixels as f64;
    let phi = e
        .phi
        .iter()
        .zip(areas)
        .enumerate()
        .map(|(i, (phi, &area))| {
            if area == 0 {
                return Err(Error::Degenerate(format!(
                    "feature {i} has an empty mask; its coverage ratio is zero"
                )));
            }
            Ok(phi / (area as f64 / total))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Explanation {
        phi,
        size_normalized: true,
        ..e.clone()
    })
}

/// Rank-biased overlap over all features and over the positive and negative
/// subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankAgreement {
    pub p: f64,
    pub all: f64,
    /// `None` when the subset is empty or its size differs between the two.
    pub positive: Option<f64>,
    pub negative: Option<f64>,
}

pub fn normalization_agreement(e: &Explanation, fs: &FeatureSet, p: f64) -> Result<RankAgreement> {
    agreement(e, &normalize_attributions(e, fs)?, p)
}

/// Ranking agreement between two attribution vectors of equal length.
pub fn agreement(a: &Explanation, b: &Explanation, p: f64) -> Result<RankAgreement> {
    let subset = |x: Ranking, y: Ranking| -> Result<Option<f64>> {
        if x.is_empty() || x.len() != y.len() {
            Ok(None)
        } else {
            rbo(&x, &y, p).map(Some)
        }
    };
    Ok(RankAgreement {
        p,
        all: rbo(&Ranking::by_descending(&a.phi), &Ranking::by_descending(&b.phi), p)?,
        positive: subset(Ranking::positive(&a.phi), Ranking::positive(&b.phi))?,
        negative: subset(Ranking::negative(&a.phi), Ranking::negative(&b.phi))?,
    })
}

pub fn mean_squared_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "MSE over vectors of different length");
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub players: usize,
    pub budgets: Vec<usize>,
    pub runs: usize,
    pub seed: u64,
    /// Priority-sampling MSE against exact values, one per budget.
    pub mse_priority: Vec<f64>,
    /// Mean Monte Carlo MSE over `runs`, one per budget.
    pub mse_montecarlo_mean: Vec<f64>,
    /// Population standard deviation of the Monte Carlo MSE.
    pub mse_montecarlo_std: Vec<f64>,
    /// Requested budgets dropped because they exceed the coalition pool.
    #[serde(default)]
    pub skipped_budgets: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    budget: usize,
    sampler: &'a str,
    mse: f64,
    std: f64,
}

impl ErrorReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for (i, &budget) in self.budgets.iter().enumerate() {
            w.serialize(CsvRow {
                budget,
                sampler: "priority",
                mse: self.mse_priority[i],
                std: 0.0,
            })?;
            w.serialize(CsvRow {
                budget,
                sampler: "montecarlo",
                mse: self.mse_montecarlo_mean[i],
                std: self.mse_montecarlo_std[i],
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// The default budgets `2^(M-1), 2^(M-2), 2^(M-3)`.
pub fn default_budgets(players: usize) -> Vec<usize> {
    (1..=3)
        .filter(|&d| players > d)
        .map(|d| 1usize << (players - d))
        .collect()
}

/// Compares priority and Monte Carlo sampling against exact Shapley values.
///
/// The game is tabulated once; every sampler then reads from the table. Monte
/// Carlo run `r` uses seed `seed + r`. Budgets larger than the coalition pool
/// are skipped with a warning; a budget equal to the pool is kept (both
/// samplers then reproduce the exact values).
pub fn sampling_error_experiment<G: Game>(
    game: &G,
    players: usize,
    budgets: &[usize],
    runs: usize,
    seed: u64,
) -> Result<ErrorReport> {
    if runs == 0 {
        return Err(Error::Config("need at least one Monte Carlo run".into()));
    }
    if players < 2 {
        return Err(Error::Config("sampling study needs at least 2 players".into()));
    }
    if budgets.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::Config(format!(
            "budgets must be strictly decreasing, got {budgets:?}"
        )));
    }
    let table = TableGame::tabulate(game, players)?;
    let exact = explain(&table, players, &ExplainConfig::exact())?;
    let pool = proper_pool_size(players);

    let mut report = ErrorReport {
        players,
        budgets: Vec::new(),
        runs,
        seed,
        mse_priority: Vec::new(),
        mse_montecarlo_mean: Vec::new(),
        mse_montecarlo_std: Vec::new(),
        skipped_budgets: Vec::new(),
    };
    for &budget in budgets {
        if budget > pool || budget == 0 {
            log::warn!("skipping budget {budget}: the pool holds {pool} proper coalitions");
            report.skipped_budgets.push(budget);
            continue;
        }
        if budget == pool {
            log::warn!("budget {budget} covers the whole pool; sampling equals exact");
        }
        let priority = explain(&table, players, &ExplainConfig::priority(budget))?;
        let mc: Vec<f64> = (0..runs as u64)
            .into_par_iter()
            .map(|r| {
                explain(&table, players, &ExplainConfig::montecarlo(budget, seed + r))
                    .map(|e| mean_squared_error(&e.phi, &exact.phi))
            })
            .collect::<Result<_>>()?;
        let mean = mc.iter().sum::<f64>() / runs as f64;
        let var = mc.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / runs as f64;
        report.budgets.push(budget);
        report.mse_priority.push(mean_squared_error(&priority.phi, &exact.phi));
        report.mse_montecarlo_mean.push(mean);
        report.mse_montecarlo_std.push(var.sqrt());
    }
    Ok(report)
}
