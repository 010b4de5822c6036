#![allow(dead_code)]

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semshap::bridge::{Region, RegionOracle, RegionOracleConfig};
use semshap::features::{FeatureMask, FeatureMeta, FeatureSet, MaskKind};
use semshap::shapley::{Coalition, Explanation, Game, TableGame};

/// Shapley values by the permutation formula over all subsets.
pub fn brute_force_shapley<G: Game>(game: &G, players: usize) -> Vec<f64> {
    let m = players as u64;
    let total = (1u64..=m).product::<u64>() as f64;
    let factorial = |n: u64| (1..=n).product::<u64>() as f64;
    (0..players)
        .map(|i| {
            let mut phi = 0.0;
            for bits in 0u32..1 << players {
                if bits & (1 << i) != 0 {
                    continue;
                }
                let s = Coalition::from_bits(bits, players).unwrap();
                let weight = factorial(s.size() as u64) * factorial(m - s.size() as u64 - 1) / total;
                phi += weight * (game.value(&s.with(i)).unwrap() - game.value(&s).unwrap());
            }
            phi
        })
        .collect()
}

pub fn random_table_game(players: usize, rng: &mut ChaCha8Rng) -> TableGame {
    let values = (0..1usize << players).map(|_| rng.random_range(-1.0..1.0)).collect();
    TableGame::new(players, values).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn residual_ok(e: &Explanation) -> bool {
    e.efficiency_residual() <= 1e-9
}

pub fn white(width: u32, height: u32) -> RgbImage {
    RgbImage::from_pixel(width, height, Rgb([255, 255, 255]))
}

/// Four regions on a 64x48 white canvas, placed so that they straddle the
/// cells of a 3x4 superpixel grid.
pub fn scene_oracle_config() -> RegionOracleConfig {
    RegionOracleConfig {
        regions: vec![
            Region { rect: [8, 8, 24, 16], token: "dog".into(), threshold: 0.5 },
            Region { rect: [40, 4, 16, 24], token: "ball".into(), threshold: 0.6 },
            Region { rect: [0, 32, 64, 16], token: "grass".into(), threshold: 0.4 },
            Region { rect: [20, 20, 30, 20], token: "tree".into(), threshold: 0.7 },
        ],
        empty_caption: String::new(),
        activation_stride: 4,
    }
}

pub fn scene_oracle() -> RegionOracle {
    RegionOracle::new(scene_oracle_config()).unwrap()
}

/// Eight objects of similar size spread over a 64x48 canvas, each straddling
/// cells of a 3x4 superpixel grid.
pub fn crowded_oracle() -> RegionOracle {
    let regions = [
        ([2, 2, 20, 12], "cup"),
        ([20, 4, 20, 10], "plate"),
        ([42, 2, 20, 12], "fork"),
        ([4, 18, 24, 12], "knife"),
        ([34, 18, 24, 12], "bowl"),
        ([2, 34, 20, 12], "spoon"),
        ([24, 34, 18, 12], "glass"),
        ([46, 34, 16, 12], "bread"),
    ];
    RegionOracle::new(RegionOracleConfig {
        regions: regions
            .into_iter()
            .map(|(rect, token)| Region { rect, token: token.into(), threshold: 0.5 })
            .collect(),
        empty_caption: String::new(),
        activation_stride: 4,
    })
    .unwrap()
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

pub fn rect_mask(dims: (usize, usize), rect: [u32; 4]) -> Array2<bool> {
    let [x, y, w, h] = rect.map(|v| v as usize);
    Array2::from_shape_fn(dims, |(r, c)| r >= y && r < y + h && c >= x && c < x + w)
}

/// Three controlling regions and eight distractor stripes that tile the rest
/// of a 64x64 image.
pub struct GroundingScene {
    pub oracle: RegionOracle,
    pub image: RgbImage,
    pub features: FeatureSet,
    pub regions: Vec<usize>,
    pub distractors: Vec<usize>,
}

pub fn grounding_scene() -> GroundingScene {
    let dims = (64usize, 64usize);
    let rects = [[4u32, 4, 16, 12], [36, 8, 20, 10], [12, 40, 24, 16]];
    let tokens = ["cat", "hat", "mat"];
    let oracle = RegionOracle::new(RegionOracleConfig {
        regions: rects
            .iter()
            .zip(tokens)
            .map(|(r, t)| Region { rect: *r, token: t.into(), threshold: 0.5 })
            .collect(),
        empty_caption: String::new(),
        activation_stride: 8,
    })
    .unwrap();
    let region_masks: Vec<Array2<bool>> = rects.iter().map(|r| rect_mask(dims, *r)).collect();
    let mut masks: Vec<FeatureMask> = region_masks
        .iter()
        .map(|m| FeatureMask::new(m.clone(), MaskKind::External))
        .collect();
    for band in 0..8 {
        let stripe = Array2::from_shape_fn(dims, |(r, c)| {
            r / 8 == band && !region_masks.iter().any(|m| m[(r, c)])
        });
        masks.push(FeatureMask::new(stripe, MaskKind::External));
    }
    let features = FeatureSet::from_parts(
        masks,
        dims,
        FeatureMeta { source: "grounding".into(), ..FeatureMeta::default() },
    )
    .unwrap();
    GroundingScene {
        oracle,
        image: white(64, 64),
        features,
        regions: vec![0, 1, 2],
        distractors: (3..11).collect(),
    }
}

/// A random mask with roughly `density` of its pixels set.
pub fn random_mask(dims: (usize, usize), density: f64, rng: &mut ChaCha8Rng) -> Array2<bool> {
    Array2::from_shape_fn(dims, |_| rng.random_bool(density))
}
