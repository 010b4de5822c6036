use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureMask, FeatureSet};

/// Who keeps a pixel claimed by several feature masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisjointPolicy {
    LowestIndex,
    SeededRandom(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapStats {
    /// Percentage of image pixels covered by two or more feature masks.
    pub mean_overlap_pct: f64,
    /// `[i][j]`: percentage of image pixels in both masks `i` and `j`; the
    /// diagonal holds each mask's own coverage.
    pub per_pair_overlap_pct: Vec<Vec<f64>>,
    /// Largest off-diagonal entry of `per_pair_overlap_pct`.
    pub max_overlap_pct: f64,
}

/// Overlap among the non-leftover masks.
pub fn overlap_stats(fs: &FeatureSet) -> OverlapStats {
    let masks = fs.content_masks();
    let total = fs.total_pixels() as f64;
    let n = masks.len();
    let mut pair = vec![vec![0usize; n]; n];
    let mut multi = 0usize;
    let (h, w) = fs.image_dims();
    let mut covering = Vec::with_capacity(n);
    for y in 0..h {
        for x in 0..w {
            covering.clear();
            covering.extend((0..n).filter(|&i| masks[i].binary[(y, x)]));
            if covering.len() >= 2 {
                multi += 1;
            }
            for (a, &i) in covering.iter().enumerate() {
                for &j in &covering[a..] {
                    pair[i][j] += 1;
                }
            }
        }
    }
    let mut per_pair = vec![vec![0.0; n]; n];
    let mut max_overlap = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let pct = 100.0 * pair[i][j] as f64 / total;
            per_pair[i][j] = pct;
            per_pair[j][i] = pct;
            if i != j {
                max_overlap = max_overlap.max(pct);
            }
        }
    }
    OverlapStats {
        mean_overlap_pct: 100.0 * multi as f64 / total,
        per_pair_overlap_pct: per_pair,
        max_overlap_pct: max_overlap,
    }
}

/// Resolves overlaps so each pixel belongs to at most one non-leftover mask.
///
/// The union of the masks, and therefore the leftover, is unchanged. Heatmaps
/// are zeroed outside their mask's surviving support. A mask that loses all of
/// its pixels is removed from the set.
pub fn enforce_disjoint(fs: &FeatureSet, policy: DisjointPolicy) -> FeatureSet {
    let content = fs.content_masks();
    let n = content.len();
    let (h, w) = fs.image_dims();
    let mut rng = match policy {
        DisjointPolicy::SeededRandom(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        DisjointPolicy::LowestIndex => None,
    };
    let mut binaries: Vec<Array2<bool>> = content.iter().map(|m| m.binary.clone()).collect();
    let mut covering = Vec::with_capacity(n);
    for y in 0..h {
        for x in 0..w {
            covering.clear();
            covering.extend((0..n).filter(|&i| content[i].binary[(y, x)]));
            if covering.len() < 2 {
                continue;
            }
            let keep = match rng.as_mut() {
                Some(rng) => covering[rng.random_range(0..covering.len())],
                None => covering[0],
            };
            for &i in covering.iter().filter(|&&i| i != keep) {
                binaries[i][(y, x)] = false;
            }
        }
    }

    let mut masks: Vec<FeatureMask> = content
        .iter()
        .zip(binaries)
        .filter(|(_, b)| b.iter().any(|v| *v))
        .map(|(m, binary)| {
            let heatmap = m.heatmap.as_ref().map(|heat| {
                let mut heat = heat.clone();
                heat.zip_mut_with(&binary, |v, &keep| {
                    if !keep {
                        *v = 0.0;
                    }
                });
                heat
            });
            FeatureMask {
                binary,
                heatmap,
                kind: m.kind,
            }
        })
        .collect();
    if let Some(left) = fs.leftover() {
        masks.push(left.clone());
    }
    let mut meta = fs.meta.clone();
    meta.disjoint_policy = Some(match policy {
        DisjointPolicy::LowestIndex => "lowest_index".into(),
        DisjointPolicy::SeededRandom(seed) => format!("seeded_random({seed})"),
    });
    FeatureSet::from_parts(masks, fs.image_dims(), meta)
        .expect("overlap resolution preserves coverage")
}
