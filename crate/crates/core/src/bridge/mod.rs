//! Access to image-to-text models.
//!
//! A model is anything implementing [`CaptionModel`]: the built-in
//! [`RegionOracle`] used for ground-truth testing, or an [`ExternalModel`]
//! child process spoken to over newline-delimited JSON on its standard streams.

mod client;
mod oracle;
pub mod protocol;
mod server;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use client::{default_timeout, BridgeClient, ExternalModel, HelloInfo, DEFAULT_WINDOW, TIMEOUT_ENV};
pub use oracle::{Region, RegionOracle, RegionOracleConfig};
pub use server::serve;

use crate::error::{Error, Result};
use crate::features::ActivationTensor;
use crate::game::CaptionEmbedding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Caption,
    Activations,
    Embed,
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Capability::Caption => "caption",
            Capability::Activations => "activations",
            Capability::Embed => "embed",
        })
    }
}

impl FromStr for Capability {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "caption" => Ok(Capability::Caption),
            "activations" => Ok(Capability::Activations),
            "embed" => Ok(Capability::Embed),
            other => Err(Error::Protocol(format!("unknown capability `{other}`"))),
        }
    }
}

pub type Capabilities = BTreeSet<Capability>;

/// Visual backbone family; selects the DFF path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    #[default]
    Cnn,
    Vit,
    Other,
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(Backbone::Cnn),
            "vit" => Ok(Backbone::Vit),
            "other" => Ok(Backbone::Other),
            other => Err(Error::Protocol(format!("unknown backbone `{other}`"))),
        }
    }
}

/// An image-to-text model. Implementations are shared across evaluation workers.
pub trait CaptionModel: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    fn backbone(&self) -> Backbone {
        Backbone::Cnn
    }

    fn caption(&self, image: &RgbImage, question: Option<&str>) -> Result<String>;

    fn activations(&self, _image: &RgbImage) -> Result<ActivationTensor> {
        Err(Error::Capability(Capability::Activations.to_string()))
    }

    fn embed(&self, _text: &str) -> Result<CaptionEmbedding> {
        Err(Error::Capability(Capability::Embed.to_string()))
    }

    fn has(&self, capability: Capability) -> bool {
        self.capabilities().contains(&capability)
    }
}

impl<M: CaptionModel + ?Sized> CaptionModel for Box<M> {
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }

    fn backbone(&self) -> Backbone {
        (**self).backbone()
    }

    fn caption(&self, image: &RgbImage, question: Option<&str>) -> Result<String> {
        (**self).caption(image, question)
    }

    fn activations(&self, image: &RgbImage) -> Result<ActivationTensor> {
        (**self).activations(image)
    }

    fn embed(&self, text: &str) -> Result<CaptionEmbedding> {
        (**self).embed(text)
    }
}

/// How to reach a model, as given on the command line: `oracle:<config.json>`
/// or a command line to launch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSpec {
    Oracle(std::path::PathBuf),
    External { command: String, args: Vec<String> },
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(path) = s.strip_prefix("oracle:") {
            return Ok(ModelSpec::Oracle(path.into()));
        }
        let mut parts = s.split_whitespace().map(str::to_owned);
        let command = parts
            .next()
            .ok_or_else(|| Error::Config("empty model command".into()))?;
        Ok(ModelSpec::External {
            command,
            args: parts.collect(),
        })
    }
}

impl ModelSpec {
    pub fn connect(&self) -> Result<Box<dyn CaptionModel>> {
        match self {
            ModelSpec::Oracle(path) => Ok(Box::new(RegionOracle::from_file(path)?)),
            ModelSpec::External { command, args } => Ok(Box::new(ExternalModel::spawn(
                command,
                args,
                default_timeout(),
            )?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_spec_parsing() {
        assert_eq!(
            "oracle:cfg.json".parse::<ModelSpec>().unwrap(),
            ModelSpec::Oracle("cfg.json".into())
        );
        assert_eq!(
            "python3 adapter.py --mock".parse::<ModelSpec>().unwrap(),
            ModelSpec::External {
                command: "python3".into(),
                args: vec!["adapter.py".into(), "--mock".into()]
            }
        );
        assert!("  ".parse::<ModelSpec>().is_err());
    }
}
