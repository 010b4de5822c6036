//! Attribution maps: per-pixel signed contributions and their export.

use std::fmt;
use std::str::FromStr;

use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMask, FeatureSet};
use crate::shapley::Explanation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    /// Each value is scaled by the feature's heatmap inside its mask.
    #[default]
    Intensity,
    /// Each value is spread uniformly over its binary mask.
    Flat,
}

impl fmt::Display for RenderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RenderMode::Intensity => "intensity",
            RenderMode::Flat => "flat",
        })
    }
}

impl FromStr for RenderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intensity" => Ok(RenderMode::Intensity),
            "flat" => Ok(RenderMode::Flat),
            other => Err(Error::Config(format!("unknown render mode '{other}'"))),
        }
    }
}

/// Signed per-pixel attribution, `h x w`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    pub values: Array2<f64>,
    pub mode: RenderMode,
}

/// Sidecar written next to the raw float map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSidecar {
    /// `[h, w]`, row-major little-endian f32.
    pub shape: [usize; 2],
    pub dtype: String,
    pub render_mode: RenderMode,
    /// Largest absolute value; the PNG maps `[-scale, scale]` onto the palette.
    pub scale: f64,
    pub palette: String,
}

/// Renders `value(p) = Σ_i φ_i · H_i(p)`.
///
/// In flat mode `H_i` is the binary mask. In intensity mode it is the
/// feature's heatmap restricted to its binary mask, or the binary mask when
/// the feature has no heatmap. Overlapping features add up.
pub fn render_attribution_map(
    e: &Explanation,
    fs: &FeatureSet,
    mode: RenderMode,
) -> Result<AttributionMap> {
    if e.phi.len() != fs.len() {
        return Err(Error::Input(format!(
            "{} Shapley values for {} features",
            e.phi.len(),
            fs.len()
        )));
    }
    let dims = fs.image_dims();
    let mut values = Array2::<f64>::zeros(dims);
    for (phi, mask) in e.phi.iter().zip(fs.masks()) {
        if mask.dims() != dims {
            return Err(Error::Input(format!(
                "mask is {:?}, feature set is {dims:?}",
                mask.dims()
            )));
        }
        accumulate(&mut values, *phi, mask, mode);
    }
    Ok(AttributionMap { values, mode })
}

fn accumulate(values: &mut Array2<f64>, phi: f64, mask: &FeatureMask, mode: RenderMode) {
    match (mode, &mask.heatmap) {
        (RenderMode::Intensity, Some(heat)) => {
            ndarray::Zip::from(values)
                .and(&mask.binary)
                .and(heat)
                .for_each(|v, &inside, &h| {
                    if inside {
                        *v += phi * h;
                    }
                });
        }
        _ => {
            ndarray::Zip::from(values)
                .and(&mask.binary)
                .for_each(|v, &inside| {
                    if inside {
                        *v += phi;
                    }
                });
        }
    }
}

impl AttributionMap {
    pub fn dims(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Largest absolute value, 0 for an all-zero map.
    pub fn scale(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_f32_le_bytes(&self) -> Vec<u8> {
        self.values
            .iter()
            .flat_map(|v| (*v as f32).to_le_bytes())
            .collect()
    }

    pub fn sidecar(&self) -> MapSidecar {
        let (h, w) = self.dims();
        MapSidecar {
            shape: [h, w],
            dtype: "f32".into(),
            render_mode: self.mode,
            scale: self.scale(),
            palette: "diverging: red negative, white zero, blue positive".into(),
        }
    }

    /// Diverging colour image normalised by this map's own scale.
    pub fn to_image(&self) -> RgbImage {
        let scale = self.scale();
        let (h, w) = self.dims();
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let v = self.values[(y as usize, x as usize)];
            diverging(if scale > 0.0 { v / scale } else { 0.0 })
        })
    }
}

/// Maps `t` in `[-1, 1]` to red (negative), white (zero) or blue (positive).
pub fn diverging(t: f64) -> Rgb<u8> {
    let t = t.clamp(-1.0, 1.0);
    let fade = (255.0 * (1.0 - t.abs())).round() as u8;
    if t >= 0.0 {
        Rgb([fade, fade, 255])
    } else {
        Rgb([255, fade, fade])
    }
}

/// Binary mask as an 8-bit image: 255 inside, 0 outside.
pub fn mask_image(mask: &FeatureMask) -> GrayImage {
    let (h, w) = mask.dims();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([if mask.binary[(y as usize, x as usize)] { 255 } else { 0 }])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{superpixel_masks, FeatureMeta};
    use crate::shapley::SamplerKind;

    fn explanation(phi: Vec<f64>) -> Explanation {
        Explanation {
            phi0: 0.0,
            v_full: phi.iter().sum(),
            phi,
            sampler: SamplerKind::Exact,
            budget: 0,
            evaluated: 0,
            seed: None,
            size_normalized: false,
        }
    }

    #[test]
    fn superpixel_modes_agree() {
        let fs = superpixel_masks((6, 8), 2, 2).unwrap();
        let e = explanation(vec![0.5, -0.25, 0.125, 1.0]);
        let flat = render_attribution_map(&e, &fs, RenderMode::Flat).unwrap();
        let intensity = render_attribution_map(&e, &fs, RenderMode::Intensity).unwrap();
        assert_eq!(flat.values, intensity.values);
        assert_eq!(flat.values[(0, 0)], 0.5);
        assert_eq!(flat.values[(5, 7)], 1.0);
        assert_eq!(flat.values.sum(), 12.0 * (0.5 - 0.25 + 0.125 + 1.0));
    }

    #[test]
    fn ramp_heatmap() {
        let dims = (2, 5);
        let binary = Array2::from_elem(dims, true);
        let heat = Array2::from_shape_fn(dims, |(_, x)| x as f64 / 4.0);
        let fs = FeatureSet::with_leftover(
            vec![FeatureMask::with_heatmap(binary, heat.clone())],
            dims,
            false,
            FeatureMeta::default(),
        )
        .unwrap();
        let map = render_attribution_map(&explanation(vec![2.0]), &fs, RenderMode::Intensity).unwrap();
        for ((y, x), v) in map.values.indexed_iter() {
            assert!((v - 2.0 * heat[(y, x)]).abs() <= 1e-12);
        }
        assert_eq!(map.values[(1, 4)], 2.0);
        assert_eq!(map.values[(0, 0)], 0.0);
    }

    #[test]
    fn zero_phi_zero_map() {
        let fs = superpixel_masks((4, 4), 2, 2).unwrap();
        let map = render_attribution_map(&explanation(vec![0.0; 4]), &fs, RenderMode::Flat).unwrap();
        assert!(map.values.iter().all(|v| *v == 0.0));
        assert_eq!(map.scale(), 0.0);
        assert!(map.to_image().pixels().all(|p| p.0 == [255, 255, 255]));
    }

    #[test]
    fn palette_and_bytes() {
        assert_eq!(diverging(1.0).0, [0, 0, 255]);
        assert_eq!(diverging(-1.0).0, [255, 0, 0]);
        assert_eq!(diverging(0.0).0, [255, 255, 255]);
        let map = AttributionMap {
            values: Array2::from_shape_vec((1, 2), vec![1.5, -3.0]).unwrap(),
            mode: RenderMode::Flat,
        };
        assert_eq!(map.scale(), 3.0);
        let bytes = map.to_f32_le_bytes();
        assert_eq!(&bytes[..4], &1.5f32.to_le_bytes());
        assert_eq!(map.to_image().get_pixel(1, 0).0, [255, 0, 0]);
    }

    #[test]
    fn length_mismatch_is_input_error() {
        let fs = superpixel_masks((4, 4), 2, 2).unwrap();
        let err = render_attribution_map(&explanation(vec![1.0]), &fs, RenderMode::Flat).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }
}
