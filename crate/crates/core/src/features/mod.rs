//! Image features for the Shapley game.
//!
//! Every extraction path returns a [`FeatureSet`]: an ordered list of binary
//! masks at image resolution. When the masks do not cover the whole image a
//! leftover mask holding the uncovered pixels is appended last, so the
//! features together always span every pixel.

mod activation;
mod dff;
mod external;
mod grid;
mod nmf;
mod overlap;
mod upsample;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

pub use activation::{ActivationHeader, ActivationLayout, ActivationTensor};
pub use dff::{dff_masks, vit_dff_masks, DffConfig, VitConfig, DEFAULT_K, DEFAULT_THETA};
pub use external::load_external_masks;
pub use grid::{cell_span, superpixel_masks};
pub use nmf::{frobenius_error, nmf, Nmf, NmfConfig};
pub use overlap::{enforce_disjoint, overlap_stats, DisjointPolicy, OverlapStats};
pub use upsample::upsample_bilinear;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Dff,
    VitBand,
    Superpixel,
    External,
    Leftover,
}

/// One feature: a binary mask, plus an intensity heatmap for DFF features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMask {
    pub binary: Array2<bool>,
    pub heatmap: Option<Array2<f64>>,
    pub kind: MaskKind,
}

impl FeatureMask {
    pub fn new(binary: Array2<bool>, kind: MaskKind) -> Self {
        Self {
            binary,
            heatmap: None,
            kind,
        }
    }

    pub fn with_heatmap(binary: Array2<bool>, heatmap: Array2<f64>) -> Self {
        Self {
            binary,
            heatmap: Some(heatmap),
            kind: MaskKind::Dff,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.binary.dim()
    }

    /// Pixels in the binary mask.
    pub fn area(&self) -> usize {
        self.binary.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.binary.iter().any(|b| *b)
    }

    /// Per-pixel intensity: the heatmap where present, else 1.0 on the binary support.
    pub fn intensity(&self, y: usize, x: usize) -> f64 {
        match &self.heatmap {
            Some(h) => h[(y, x)],
            None => {
                if self.binary[(y, x)] {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// How a feature set was produced, carried into explanation records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heatmap_normalization: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropped_empty_factors: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disjoint_policy: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    masks: Vec<FeatureMask>,
    image_dims: (usize, usize),
    pub meta: FeatureMeta,
}

impl FeatureSet {
    /// Builds a set from content masks, appending the complement as a leftover
    /// mask. With `keep_empty_leftover` false, a leftover with no pixels is omitted.
    pub fn with_leftover(
        masks: Vec<FeatureMask>,
        image_dims: (usize, usize),
        keep_empty_leftover: bool,
        meta: FeatureMeta,
    ) -> Result<Self> {
        let (h, w) = image_dims;
        if h == 0 || w == 0 {
            return Err(Error::Config(format!("empty image dims {h}x{w}")));
        }
        for (i, m) in masks.iter().enumerate() {
            if m.kind == MaskKind::Leftover {
                return Err(Error::Input(format!("mask {i} is already a leftover mask")));
            }
            check_mask_dims(i, m, image_dims)?;
        }
        let mut union = Array2::from_elem(image_dims, false);
        for m in &masks {
            Zip::from(&mut union).and(&m.binary).for_each(|u, &b| *u |= b);
        }
        let leftover = union.mapv(|b| !b);
        let mut masks = masks;
        if keep_empty_leftover || leftover.iter().any(|b| *b) {
            masks.push(FeatureMask::new(leftover, MaskKind::Leftover));
        }
        Ok(Self {
            masks,
            image_dims,
            meta,
        })
    }

    /// Wraps masks that already include their leftover (if any) after checking
    /// the coverage invariants.
    pub fn from_parts(
        masks: Vec<FeatureMask>,
        image_dims: (usize, usize),
        meta: FeatureMeta,
    ) -> Result<Self> {
        let fs = Self {
            masks,
            image_dims,
            meta,
        };
        fs.validate()?;
        Ok(fs)
    }

    pub fn masks(&self) -> &[FeatureMask] {
        &self.masks
    }

    pub fn image_dims(&self) -> (usize, usize) {
        self.image_dims
    }

    /// Number of players `M`, leftover included.
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn leftover(&self) -> Option<&FeatureMask> {
        self.masks.last().filter(|m| m.kind == MaskKind::Leftover)
    }

    /// Masks excluding the trailing leftover.
    pub fn content_masks(&self) -> &[FeatureMask] {
        match self.leftover() {
            Some(_) => &self.masks[..self.masks.len() - 1],
            None => &self.masks,
        }
    }

    pub fn total_pixels(&self) -> usize {
        self.image_dims.0 * self.image_dims.1
    }

    /// Checks dims, coverage and that the leftover is exactly the complement
    /// of the content masks.
    pub fn validate(&self) -> Result<()> {
        if self.masks.is_empty() {
            return Err(Error::Input("feature set has no masks".into()));
        }
        for (i, m) in self.masks.iter().enumerate() {
            check_mask_dims(i, m, self.image_dims)?;
            if m.kind == MaskKind::Leftover && i + 1 != self.masks.len() {
                return Err(Error::Input(format!("leftover mask at {i} is not last")));
            }
            if let Some(h) = &m.heatmap {
                if h.dim() != self.image_dims {
                    return Err(Error::Input(format!("heatmap {i} has wrong dims")));
                }
                if h.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Input(format!("heatmap {i} leaves [0, 1]")));
                }
            }
        }
        let mut union = Array2::from_elem(self.image_dims, false);
        for m in self.content_masks() {
            Zip::from(&mut union).and(&m.binary).for_each(|u, &b| *u |= b);
        }
        match self.leftover() {
            Some(left) => {
                let exact = Zip::from(&union)
                    .and(&left.binary)
                    .all(|&u, &l| u != l);
                if !exact {
                    return Err(Error::Input(
                        "leftover mask is not the complement of the feature masks".into(),
                    ));
                }
            }
            None => {
                if !union.iter().all(|b| *b) {
                    return Err(Error::Input(
                        "feature masks leave pixels uncovered and there is no leftover".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Union of the masks selected by `selected[i]`.
    pub fn union_of(&self, selected: impl Fn(usize) -> bool) -> Array2<bool> {
        let mut union = Array2::from_elem(self.image_dims, false);
        for (i, m) in self.masks.iter().enumerate() {
            if selected(i) {
                Zip::from(&mut union).and(&m.binary).for_each(|u, &b| *u |= b);
            }
        }
        union
    }
}

fn check_mask_dims(i: usize, m: &FeatureMask, dims: (usize, usize)) -> Result<()> {
    if m.dims() != dims {
        return Err(Error::Input(format!(
            "mask {i} is {:?}, image is {:?}",
            m.dims(),
            dims
        )));
    }
    Ok(())
}
