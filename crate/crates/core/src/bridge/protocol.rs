//! Wire format: one JSON object per line.
//!
//! Requests carry an integer `id` and an `op`; every response echoes the
//! `id` with `"ok": true` plus the op's payload, or `"ok": false` with an
//! `error` string. Images travel as base64 PNG; float payloads as base64
//! little-endian `f32`.

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ActivationHeader, ActivationTensor};
use crate::game::CaptionEmbedding;

pub const PROTOCOL_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Hello,
    Caption,
    Activations,
    Embed,
    #[serde(other)]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub op: Op,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol_version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_png_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl Request {
    pub fn new(op: Op) -> Self {
        Self {
            id: 0,
            op,
            protocol_version: None,
            image_png_b64: None,
            question: None,
            text: None,
        }
    }

    pub fn hello() -> Self {
        Self {
            protocol_version: Some(PROTOCOL_VERSION.into()),
            ..Self::new(Op::Hello)
        }
    }

    pub fn caption(image: &RgbImage, question: Option<&str>) -> Result<Self> {
        Ok(Self {
            image_png_b64: Some(encode_png(image)?),
            question: question.map(str::to_owned),
            ..Self::new(Op::Caption)
        })
    }

    pub fn activations(image: &RgbImage) -> Result<Self> {
        Ok(Self {
            image_png_b64: Some(encode_png(image)?),
            ..Self::new(Op::Activations)
        })
    }

    pub fn embed(text: &str) -> Self {
        Self {
            text: Some(text.to_owned()),
            ..Self::new(Op::Embed)
        }
    }

    pub fn image(&self) -> Result<RgbImage> {
        let b64 = self
            .image_png_b64
            .as_deref()
            .ok_or_else(|| Error::Protocol(format!("{:?} request lacks image_png_b64", self.op)))?;
        decode_png(b64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationPayload {
    #[serde(flatten)]
    pub header: ActivationHeader,
    pub dtype: String,
    pub data_b64: String,
}

impl ActivationPayload {
    pub fn encode(tensor: &ActivationTensor) -> Self {
        Self {
            header: tensor.header(),
            dtype: "f32".into(),
            data_b64: STANDARD.encode(tensor.to_le_bytes()),
        }
    }

    pub fn decode(&self) -> Result<ActivationTensor> {
        if self.dtype != "f32" {
            return Err(Error::Protocol(format!("unsupported dtype `{}`", self.dtype)));
        }
        let bytes = decode_b64(&self.data_b64)?;
        let expected: usize = self.header.shape.iter().product::<usize>() * 4;
        if bytes.len() != expected {
            return Err(Error::Protocol(format!(
                "activation shape {:?} needs {expected} bytes, payload has {}",
                self.header.shape,
                bytes.len()
            )));
        }
        ActivationTensor::from_le_bytes(&self.header, &bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingPayload {
    pub dim: usize,
    pub data_b64: String,
}

impl EmbeddingPayload {
    pub fn encode(embedding: &CaptionEmbedding) -> Self {
        let bytes: Vec<u8> = embedding
            .vector
            .iter()
            .flat_map(|v| (*v as f32).to_le_bytes())
            .collect();
        Self {
            dim: embedding.vector.len(),
            data_b64: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<CaptionEmbedding> {
        let bytes = decode_b64(&self.data_b64)?;
        if bytes.len() != self.dim * 4 {
            return Err(Error::Protocol(format!(
                "embedding of dim {} carries {} bytes",
                self.dim,
                bytes.len()
            )));
        }
        let vector = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(CaptionEmbedding::from_vector(vector))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol_version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capabilities: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backbone: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activations: Option<ActivationPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingPayload>,
}

impl Response {
    pub fn ok(id: u64) -> Self {
        Self {
            id,
            ok: true,
            error: None,
            protocol_version: None,
            capabilities: None,
            backbone: None,
            caption: None,
            activations: None,
            embedding: None,
        }
    }

    pub fn failure(id: u64, error: impl Into<String>) -> Self {
        Self {
            ok: false,
            error: Some(error.into()),
            ..Self::ok(id)
        }
    }
}

/// Serialises a message as one line, newline included.
pub fn encode_line<T: Serialize>(message: &T) -> Result<String> {
    let mut line = serde_json::to_string(message)?;
    line.push('\n');
    Ok(line)
}

pub fn decode_line<T: for<'de> Deserialize<'de>>(line: &str) -> Result<T> {
    serde_json::from_str(line.trim_end_matches(['\n', '\r']))
        .map_err(|e| Error::Protocol(format!("malformed message: {e}")))
}

pub fn encode_png(image: &RgbImage) -> Result<String> {
    let mut buf = Cursor::new(Vec::new());
    image.write_to(&mut buf, ImageFormat::Png)?;
    Ok(STANDARD.encode(buf.into_inner()))
}

pub fn decode_png(b64: &str) -> Result<RgbImage> {
    let bytes = decode_b64(b64)?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| Error::Protocol(format!("bad PNG payload: {e}")))?;
    Ok(img.into_rgb8())
}

fn decode_b64(data: &str) -> Result<Vec<u8>> {
    STANDARD
        .decode(data)
        .map_err(|e| Error::Protocol(format!("bad base64 payload: {e}")))
}
