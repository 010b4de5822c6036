use std::collections::HashSet;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{Capabilities, Capability, CaptionModel};
use crate::error::{Error, Result};
use crate::features::ActivationTensor;

/// A rectangular region `[x, x + width) x [y, y + height)` that contributes
/// `token` to the caption while bright enough.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    /// `[x, y, width, height]` in pixels.
    pub rect: [u32; 4],
    pub token: String,
    /// Mean brightness in `(0, 1]` the region needs to be "seen".
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionOracleConfig {
    pub regions: Vec<Region>,
    #[serde(default)]
    pub empty_caption: String,
    /// Side of the pixel block behind one activation cell.
    #[serde(default = "default_stride")]
    pub activation_stride: u32,
}

fn default_stride() -> u32 {
    8
}

/// Synthetic captioner with known ground truth: the caption lists, in
/// declaration order, the tokens of every region whose mean brightness
/// reaches its threshold.
///
/// Its activations have one channel per region, holding the summed brightness
/// of that region's pixels inside each `stride x stride` block (normalised by
/// block area), so DFF can recover the regions.
#[derive(Debug, Clone)]
pub struct RegionOracle {
    config: RegionOracleConfig,
}

impl RegionOracle {
    pub fn new(config: RegionOracleConfig) -> Result<Self> {
        if config.regions.is_empty() {
            return Err(Error::Config("region oracle needs at least one region".into()));
        }
        if config.activation_stride == 0 {
            return Err(Error::Config("activation stride must be positive".into()));
        }
        let mut tokens = HashSet::new();
        for r in &config.regions {
            if !tokens.insert(r.token.as_str()) {
                return Err(Error::Config(format!("duplicate region token `{}`", r.token)));
            }
            if r.token.trim().is_empty() {
                return Err(Error::Config("region tokens must be non-empty".into()));
            }
            if !(r.threshold > 0.0 && r.threshold <= 1.0) {
                return Err(Error::Config(format!(
                    "region `{}` threshold {} outside (0, 1]",
                    r.token, r.threshold
                )));
            }
            if r.rect[2] == 0 || r.rect[3] == 0 {
                return Err(Error::Config(format!("region `{}` has zero area", r.token)));
            }
        }
        Ok(Self { config })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read oracle config {}: {e}", path.display())))?;
        Self::new(serde_json::from_str(&text)?)
    }

    pub fn config(&self) -> &RegionOracleConfig {
        &self.config
    }

    fn check_bounds(&self, image: &RgbImage) -> Result<()> {
        let (w, h) = image.dimensions();
        for r in &self.config.regions {
            let [x, y, rw, rh] = r.rect;
            if x + rw > w || y + rh > h {
                return Err(Error::Input(format!(
                    "region `{}` {:?} exceeds the {w}x{h} image",
                    r.token, r.rect
                )));
            }
        }
        Ok(())
    }

    fn region_brightness(image: &RgbImage, region: &Region) -> f64 {
        let [x0, y0, rw, rh] = region.rect;
        let mut total = 0.0;
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                total += brightness(image.get_pixel(x, y).0);
            }
        }
        total / (rw as f64 * rh as f64)
    }
}

fn brightness(px: [u8; 3]) -> f64 {
    (px[0] as f64 + px[1] as f64 + px[2] as f64) / (3.0 * 255.0)
}

impl CaptionModel for RegionOracle {
    fn capabilities(&self) -> Capabilities {
        [Capability::Caption, Capability::Activations].into_iter().collect()
    }

    fn caption(&self, image: &RgbImage, _question: Option<&str>) -> Result<String> {
        self.check_bounds(image)?;
        let tokens: Vec<&str> = self
            .config
            .regions
            .iter()
            .filter(|r| Self::region_brightness(image, r) >= r.threshold)
            .map(|r| r.token.as_str())
            .collect();
        if tokens.is_empty() {
            Ok(self.config.empty_caption.clone())
        } else {
            Ok(tokens.join(" "))
        }
    }

    fn activations(&self, image: &RgbImage) -> Result<ActivationTensor> {
        self.check_bounds(image)?;
        let (w, h) = image.dimensions();
        let s = self.config.activation_stride;
        let (gh, gw) = (h.div_ceil(s) as usize, w.div_ceil(s) as usize);
        let channels = self.config.regions.len();
        let area = (s * s) as f64;
        let mut data = vec![0.0; gh * gw * channels];
        for (ch, r) in self.config.regions.iter().enumerate() {
            let [x0, y0, rw, rh] = r.rect;
            for y in y0..y0 + rh {
                for x in x0..x0 + rw {
                    let cell = (y / s) as usize * gw + (x / s) as usize;
                    data[cell * channels + ch] += brightness(image.get_pixel(x, y).0) / area;
                }
            }
        }
        ActivationTensor::spatial(gh, gw, channels, data)
    }
}
