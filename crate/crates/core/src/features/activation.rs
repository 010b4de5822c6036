use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationLayout {
    /// `height x width x channels`, channels fastest.
    Spatial {
        height: usize,
        width: usize,
        channels: usize,
    },
    /// `patches x dim` token stack laid out on a `grid_rows x grid_cols` grid,
    /// optionally preceded by one prefix (class) token.
    Patches {
        patches: usize,
        dim: usize,
        grid_rows: usize,
        grid_cols: usize,
        prefix_token: bool,
    },
}

impl ActivationLayout {
    pub fn len(&self) -> usize {
        match *self {
            ActivationLayout::Spatial {
                height,
                width,
                channels,
            } => height * width * channels,
            ActivationLayout::Patches { patches, dim, .. } => patches * dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Backbone activations for one image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTensor {
    layout: ActivationLayout,
    data: Vec<f64>,
}

/// JSON description of an activation payload, shared by the raw-file sidecar
/// and the bridge protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationHeader {
    pub layout: String,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix_token: Option<bool>,
}

impl ActivationHeader {
    pub fn to_layout(&self) -> Result<ActivationLayout> {
        match (self.layout.as_str(), self.shape.as_slice()) {
            ("spatial", &[height, width, channels]) => Ok(ActivationLayout::Spatial {
                height,
                width,
                channels,
            }),
            ("patches", &[patches, dim]) => {
                let [grid_rows, grid_cols] = self.grid.ok_or_else(|| {
                    Error::Input("patch activations need a `grid` field".into())
                })?;
                Ok(ActivationLayout::Patches {
                    patches,
                    dim,
                    grid_rows,
                    grid_cols,
                    prefix_token: self.prefix_token.unwrap_or(false),
                })
            }
            (layout, shape) => Err(Error::Input(format!(
                "unsupported activation layout `{layout}` with shape {shape:?}"
            ))),
        }
    }

    pub fn from_layout(layout: &ActivationLayout) -> Self {
        match *layout {
            ActivationLayout::Spatial {
                height,
                width,
                channels,
            } => Self {
                layout: "spatial".into(),
                shape: vec![height, width, channels],
                grid: None,
                prefix_token: None,
            },
            ActivationLayout::Patches {
                patches,
                dim,
                grid_rows,
                grid_cols,
                prefix_token,
            } => Self {
                layout: "patches".into(),
                shape: vec![patches, dim],
                grid: Some([grid_rows, grid_cols]),
                prefix_token: Some(prefix_token),
            },
        }
    }
}

impl ActivationTensor {
    pub fn new(layout: ActivationLayout, data: Vec<f64>) -> Result<Self> {
        if layout.is_empty() {
            return Err(Error::Input(format!("activation layout {layout:?} is empty")));
        }
        if data.len() != layout.len() {
            return Err(Error::Input(format!(
                "activation shape {layout:?} needs {} values, got {}",
                layout.len(),
                data.len()
            )));
        }
        if let ActivationLayout::Patches {
            patches,
            grid_rows,
            grid_cols,
            prefix_token,
            ..
        } = layout
        {
            let expected = grid_rows * grid_cols + usize::from(prefix_token);
            if patches != expected {
                return Err(Error::Config(format!(
                    "{patches} patches do not fit a {grid_rows}x{grid_cols} grid \
                     (prefix token: {prefix_token})"
                )));
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("activations contain non-finite values".into()));
        }
        Ok(Self { layout, data })
    }

    pub fn spatial(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(
            ActivationLayout::Spatial {
                height,
                width,
                channels,
            },
            data,
        )
    }

    pub fn layout(&self) -> &ActivationLayout {
        &self.layout
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_spatial(&self) -> bool {
        matches!(self.layout, ActivationLayout::Spatial { .. })
    }

    /// Clamps negative values to zero, as a ReLU would, so spatial activations
    /// can go through NMF.
    pub fn rectified(&self) -> Self {
        Self {
            layout: self.layout,
            data: self.data.iter().map(|v| v.max(0.0)).collect(),
        }
    }

    /// Rows are spatial positions (or patches), columns channels. The prefix
    /// token of a patch stack is dropped.
    pub fn to_matrix(&self) -> Array2<f64> {
        match self.layout {
            ActivationLayout::Spatial {
                height,
                width,
                channels,
            } => Array2::from_shape_vec((height * width, channels), self.data.clone())
                .expect("length checked on construction"),
            ActivationLayout::Patches {
                patches,
                dim,
                prefix_token,
                ..
            } => {
                let skip = usize::from(prefix_token);
                Array2::from_shape_vec((patches - skip, dim), self.data[skip * dim..].to_vec())
                    .expect("length checked on construction")
            }
        }
    }

    pub fn header(&self) -> ActivationHeader {
        ActivationHeader::from_layout(&self.layout)
    }

    /// Little-endian `f32` payload.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|v| (*v as f32).to_le_bytes())
            .collect()
    }

    pub fn from_le_bytes(header: &ActivationHeader, bytes: &[u8]) -> Result<Self> {
        let layout = header.to_layout()?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Input(format!(
                "activation payload of {} bytes is not a whole number of f32 values",
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::new(layout, data)
    }

    /// Sidecar path for a raw activation file: same stem, `.json` extension.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    /// Reads a raw little-endian `f32` file and its JSON sidecar.
    pub fn read_raw(path: &Path) -> Result<Self> {
        let sidecar = std::fs::read_to_string(Self::sidecar_path(path))?;
        let header: ActivationHeader = serde_json::from_str(&sidecar)?;
        let bytes = std::fs::read(path)?;
        Self::from_le_bytes(&header, &bytes)
    }

    pub fn write_raw(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_le_bytes())?;
        std::fs::write(
            Self::sidecar_path(path),
            serde_json::to_string_pretty(&self.header())?,
        )?;
        Ok(())
    }
}
