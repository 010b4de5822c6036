//! The sentence-level game: a coalition of features is rendered as a perturbed
//! image, captioned, and scored by the cosine similarity between the
//! perturbed caption's embedding and the reference caption's embedding.

mod embed;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

pub use embed::{
    embed_caption, similarity, CaptionEmbedding, Embedder, HashedNgramEmbedder,
    DEFAULT_EMBEDDING_DIM,
};

use crate::bridge::{Capability, CaptionModel};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::shapley::{Coalition, Game};

/// Fill for pixels outside the coalition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Baseline {
    #[default]
    Black,
    MeanColor,
    /// Gaussian blur of the source with this radius (used as sigma).
    Blur { radius: u32 },
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Baseline::Black => f.write_str("black"),
            Baseline::MeanColor => f.write_str("mean"),
            Baseline::Blur { radius } => write!(f, "blur:{radius}"),
        }
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "black" => Ok(Baseline::Black),
            "mean" | "mean_color" => Ok(Baseline::MeanColor),
            other => {
                let radius = other
                    .strip_prefix("blur:")
                    .and_then(|r| r.parse::<u32>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown baseline `{other}`")))?;
                if radius == 0 {
                    return Err(Error::Config("blur radius must be at least 1".into()));
                }
                Ok(Baseline::Blur { radius })
            }
        }
    }
}

/// Image used for every pixel outside the selected features.
pub fn baseline_image(image: &RgbImage, baseline: Baseline) -> Result<RgbImage> {
    let (w, h) = image.dimensions();
    match baseline {
        Baseline::Black => Ok(RgbImage::new(w, h)),
        Baseline::MeanColor => {
            let n = (w as u64 * h as u64).max(1);
            let mut sums = [0u64; 3];
            for px in image.pixels() {
                for (s, c) in sums.iter_mut().zip(px.0) {
                    *s += c as u64;
                }
            }
            let mean = sums.map(|s| ((s as f64 / n as f64).round()) as u8);
            Ok(RgbImage::from_pixel(w, h, Rgb(mean)))
        }
        Baseline::Blur { radius } => {
            if radius == 0 {
                return Err(Error::Config("blur radius must be at least 1".into()));
            }
            Ok(image::imageops::blur(image, radius as f32))
        }
    }
}

fn check_compatible(image: &RgbImage, fs: &FeatureSet, coalition: &Coalition) -> Result<()> {
    let (w, h) = image.dimensions();
    if fs.image_dims() != (h as usize, w as usize) {
        return Err(Error::Input(format!(
            "features are {:?} (h, w), image is {h}x{w}",
            fs.image_dims()
        )));
    }
    if coalition.players() != fs.len() {
        return Err(Error::Input(format!(
            "coalition over {} players for {} features",
            coalition.players(),
            fs.len()
        )));
    }
    Ok(())
}

fn compose(image: &RgbImage, fill: &RgbImage, fs: &FeatureSet, coalition: &Coalition) -> RgbImage {
    let keep = fs.union_of(|i| coalition.contains(i));
    let mut out = fill.clone();
    for ((y, x), &k) in keep.indexed_iter() {
        if k {
            out.put_pixel(x as u32, y as u32, *image.get_pixel(x as u32, y as u32));
        }
    }
    out
}

/// Keeps the pixels under the union of the coalition's masks and replaces the
/// rest with the baseline. The source image is not modified.
pub fn apply_coalition(
    image: &RgbImage,
    fs: &FeatureSet,
    coalition: &Coalition,
    baseline: Baseline,
) -> Result<RgbImage> {
    check_compatible(image, fs, coalition)?;
    let fill = baseline_image(image, baseline)?;
    Ok(compose(image, &fill, fs, coalition))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    #[default]
    Similarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EmbedderChoice {
    HashedNgram { dim: usize },
    /// The model's own `embed` op.
    Model,
}

impl Default for EmbedderChoice {
    fn default() -> Self {
        EmbedderChoice::HashedNgram {
            dim: DEFAULT_EMBEDDING_DIM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GameConfig {
    pub baseline: Baseline,
    pub outcome: Outcome,
    pub embedder: EmbedderChoice,
}

/// Game whose value on a coalition is the cosine similarity between the
/// reference caption embedding and the embedding of the caption produced for
/// the coalition's perturbed image.
///
/// The reference caption and its embedding are computed once, on
/// construction. Coalition values are memoised.
pub struct SentenceGame<'a, M: CaptionModel + ?Sized> {
    model: &'a M,
    image: &'a RgbImage,
    fill: RgbImage,
    features: &'a FeatureSet,
    question: Option<String>,
    embedder: Option<HashedNgramEmbedder>,
    reference_caption: String,
    reference: CaptionEmbedding,
    cache: Mutex<HashMap<u32, f64>>,
    caption_calls: AtomicUsize,
}

pub fn make_sentence_game<'a, M: CaptionModel + ?Sized>(
    model: &'a M,
    image: &'a RgbImage,
    features: &'a FeatureSet,
    config: &GameConfig,
    question: Option<&str>,
) -> Result<SentenceGame<'a, M>> {
    let (w, h) = image.dimensions();
    if features.image_dims() != (h as usize, w as usize) {
        return Err(Error::Input(format!(
            "features are {:?} (h, w), image is {h}x{w}",
            features.image_dims()
        )));
    }
    if !model.has(Capability::Caption) {
        return Err(Error::Capability(Capability::Caption.to_string()));
    }
    let embedder = match config.embedder {
        EmbedderChoice::HashedNgram { dim } => Some(HashedNgramEmbedder::new(dim)?),
        EmbedderChoice::Model => {
            if !model.has(Capability::Embed) {
                return Err(Error::Capability(Capability::Embed.to_string()));
            }
            None
        }
    };
    let fill = baseline_image(image, config.baseline)?;
    let mut game = SentenceGame {
        model,
        image,
        fill,
        features,
        question: question.map(str::to_owned),
        embedder,
        reference_caption: String::new(),
        reference: CaptionEmbedding::from_vector(Vec::new()),
        cache: Mutex::new(HashMap::new()),
        caption_calls: AtomicUsize::new(0),
    };
    game.reference_caption = game.caption_of(image)?;
    game.reference = game.embed(&game.reference_caption)?;
    Ok(game)
}

impl<M: CaptionModel + ?Sized> SentenceGame<'_, M> {
    pub fn reference_caption(&self) -> &str {
        &self.reference_caption
    }

    pub fn reference_embedding(&self) -> &CaptionEmbedding {
        &self.reference
    }

    pub fn players(&self) -> usize {
        self.features.len()
    }

    /// Number of model caption requests so far, reference included.
    pub fn caption_calls(&self) -> usize {
        self.caption_calls.load(Ordering::Relaxed)
    }

    fn caption_of(&self, image: &RgbImage) -> Result<String> {
        self.caption_calls.fetch_add(1, Ordering::Relaxed);
        self.model.caption(image, self.question.as_deref())
    }

    fn embed(&self, text: &str) -> Result<CaptionEmbedding> {
        match &self.embedder {
            Some(e) => e.embed(text),
            None => self.model.embed(text),
        }
    }

    /// Caption produced for the coalition's perturbed image.
    pub fn caption_for(&self, coalition: &Coalition) -> Result<String> {
        check_compatible(self.image, self.features, coalition)?;
        let perturbed = compose(self.image, &self.fill, self.features, coalition);
        self.caption_of(&perturbed)
    }
}

impl<M: CaptionModel + ?Sized> Game for SentenceGame<'_, M> {
    fn value(&self, coalition: &Coalition) -> Result<f64> {
        if let Some(v) = self.cache.lock().unwrap().get(&coalition.bits()) {
            return Ok(*v);
        }
        let caption = self.caption_for(coalition)?;
        let v = similarity(&self.reference, &self.embed(&caption)?)?;
        self.cache.lock().unwrap().insert(coalition.bits(), v);
        Ok(v)
    }
}
