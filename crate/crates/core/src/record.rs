//! The JSON record written for every explanation run.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::{FeatureMeta, FeatureSet, MaskKind};
use crate::game::GameConfig;
use crate::render::RenderMode;
use crate::shapley::Explanation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    #[serde(flatten)]
    pub meta: FeatureMeta,
    /// Number of features, leftover included.
    pub features: usize,
    pub mask_kinds: Vec<MaskKind>,
    pub mask_areas: Vec<usize>,
    pub image_dims: (usize, usize),
}

impl FeatureConfig {
    pub fn describe(fs: &FeatureSet) -> Self {
        Self {
            meta: fs.meta.clone(),
            features: fs.len(),
            mask_kinds: fs.masks().iter().map(|m| m.kind).collect(),
            mask_areas: fs.masks().iter().map(|m| m.area()).collect(),
            image_dims: fs.image_dims(),
        }
    }
}

/// Cosine distances `1 - v`, for comparison with distance-based reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceAudit {
    pub empty: f64,
    pub full: f64,
}

impl DistanceAudit {
    pub fn of(e: &Explanation) -> Self {
        Self {
            empty: 1.0 - e.phi0,
            full: 1.0 - e.v_full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub explanation: Explanation,
    pub efficiency_residual: f64,
    pub feature_config: FeatureConfig,
    pub game_config: GameConfig,
    pub reference_caption: String,
    #[serde(default)]
    pub question: Option<String>,
    pub distance: DistanceAudit,
    pub render_mode: RenderMode,
    /// Wall-clock milliseconds per pipeline stage.
    pub timings_ms: BTreeMap<String, f64>,
    #[serde(default)]
    pub model_caption_calls: Option<usize>,
}

impl ExplanationRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
