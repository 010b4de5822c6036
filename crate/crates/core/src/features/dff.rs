use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::grid::cell_span;
use super::nmf::{nmf, NmfConfig};
use super::upsample::upsample_bilinear;
use super::{ActivationLayout, ActivationTensor, FeatureMask, FeatureMeta, FeatureSet, MaskKind};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_THETA: f64 = 0.5;

/// Deep feature factorisation over spatial activations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DffConfig {
    pub k: usize,
    /// Each heatmap is binarised at `theta * max(heatmap)`.
    pub theta: f64,
    pub nmf: NmfConfig,
}

impl Default for DffConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            theta: DEFAULT_THETA,
            nmf: NmfConfig::default(),
        }
    }
}

/// Factorisation over ViT patch tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VitConfig {
    pub k: usize,
    /// A patch joins a factor's mask when its loading reaches this fraction of
    /// the factor's largest loading.
    pub band_threshold: f64,
    pub nmf: NmfConfig,
}

impl Default for VitConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            band_threshold: DEFAULT_THETA,
            nmf: NmfConfig::default(),
        }
    }
}

fn check_threshold(name: &str, t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Config(format!("{name} {t} outside (0, 1]")));
    }
    Ok(())
}

/// Rescales to `[0, 1]`. A constant map becomes all ones if positive, all zeros otherwise.
fn min_max_normalize(map: &mut Array2<f64>) {
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        map.mapv_inplace(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0));
    } else {
        let fill = if hi > 0.0 { 1.0 } else { 0.0 };
        map.fill(fill);
    }
}

/// Concept masks from spatial backbone activations.
///
/// The `h x w x c` tensor is factorised as `(h*w) x c ~ W H`; column `j` of `W`
/// is factor `j`'s spatial heatmap. Each heatmap is min-max normalised at
/// activation resolution, bilinearly upsampled to the image, and binarised at
/// `theta` times its own maximum. Masks may overlap. Factors whose heatmap is
/// identically zero are dropped. A leftover mask is always appended, even when
/// empty, so `k` live factors give `k + 1` features.
pub fn dff_masks(
    act: &ActivationTensor,
    image_dims: (usize, usize),
    config: &DffConfig,
) -> Result<FeatureSet> {
    let ActivationLayout::Spatial { height, width, .. } = *act.layout() else {
        return Err(Error::Config(
            "DFF needs spatial activations; use the ViT path for patch tokens".into(),
        ));
    };
    check_threshold("DFF threshold", config.theta)?;
    let matrix = act.to_matrix();
    if matrix.iter().all(|v| *v == 0.0) {
        return Err(Error::Degenerate("activation tensor is all zeros".into()));
    }
    let factors = nmf(matrix.view(), config.k, &config.nmf)?;

    let mut masks = Vec::with_capacity(config.k);
    let mut dropped = 0;
    for j in 0..config.k {
        let column = factors.w.column(j);
        let mut heat = Array2::from_shape_vec((height, width), column.to_vec())
            .expect("NMF rows match the spatial grid");
        min_max_normalize(&mut heat);
        let heat = upsample_bilinear(heat.view(), image_dims)?;
        let peak = heat.iter().copied().fold(0.0, f64::max);
        if peak <= 0.0 {
            dropped += 1;
            continue;
        }
        let cut = config.theta * peak;
        let binary = heat.mapv(|v| v >= cut);
        masks.push(FeatureMask::with_heatmap(binary, heat));
    }
    if masks.is_empty() {
        return Err(Error::Degenerate("every DFF factor is empty".into()));
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} empty DFF factors");
    }

    FeatureSet::with_leftover(
        masks,
        image_dims,
        true,
        FeatureMeta {
            source: "dff".into(),
            k: Some(config.k),
            theta: Some(config.theta),
            heatmap_normalization: Some("min-max before upsampling".into()),
            dropped_empty_factors: (dropped > 0).then_some(dropped),
            ..FeatureMeta::default()
        },
    )
}

/// Concept masks from ViT patch tokens.
///
/// The patch stack (prefix token removed) is min-max normalised as a whole,
/// factorised with rank `k`, and each factor's patch loadings are thresholded.
/// The selected patches' pixel rectangles form that factor's mask, so every
/// mask is a union of whole grid cells. No heatmaps are kept.
pub fn vit_dff_masks(
    act: &ActivationTensor,
    image_dims: (usize, usize),
    config: &VitConfig,
) -> Result<FeatureSet> {
    let ActivationLayout::Patches {
        grid_rows,
        grid_cols,
        ..
    } = *act.layout()
    else {
        return Err(Error::Config("ViT path needs patch activations".into()));
    };
    check_threshold("band threshold", config.band_threshold)?;
    let (h, w) = image_dims;
    if grid_rows > h || grid_cols > w {
        return Err(Error::Config(format!(
            "patch grid {grid_rows}x{grid_cols} exceeds the {h}x{w} image"
        )));
    }
    let mut matrix = act.to_matrix();
    let lo = matrix.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = matrix.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::Degenerate("patch activations are constant".into()));
    }
    matrix.mapv_inplace(|v| (v - lo) / (hi - lo));
    let factors = nmf(matrix.view(), config.k, &config.nmf)?;

    let mut masks = Vec::with_capacity(config.k);
    let mut dropped = 0;
    for j in 0..config.k {
        match patch_band(factors.w.column(j), grid_rows, grid_cols, image_dims, config.band_threshold) {
            Some(binary) => masks.push(FeatureMask::new(binary, MaskKind::VitBand)),
            None => dropped += 1,
        }
    }
    if masks.is_empty() {
        return Err(Error::Degenerate("every ViT factor is empty".into()));
    }

    FeatureSet::with_leftover(
        masks,
        image_dims,
        true,
        FeatureMeta {
            source: "vit".into(),
            k: Some(config.k),
            theta: Some(config.band_threshold),
            grid: Some((grid_rows, grid_cols)),
            dropped_empty_factors: (dropped > 0).then_some(dropped),
            ..FeatureMeta::default()
        },
    )
}

fn patch_band(
    loadings: ArrayView1<'_, f64>,
    grid_rows: usize,
    grid_cols: usize,
    image_dims: (usize, usize),
    threshold: f64,
) -> Option<Array2<bool>> {
    let peak = loadings.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return None;
    }
    let cut = threshold * peak;
    let (h, w) = image_dims;
    let mut binary = Array2::from_elem(image_dims, false);
    for (idx, _) in loadings.iter().enumerate().filter(|(_, v)| **v >= cut) {
        let (y0, y1) = cell_span(h, grid_rows, idx / grid_cols);
        let (x0, x1) = cell_span(w, grid_cols, idx % grid_cols);
        for y in y0..y1 {
            for x in x0..x1 {
                binary[(y, x)] = true;
            }
        }
    }
    Some(binary)
}
