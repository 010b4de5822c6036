use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;

use super::{FeatureMask, FeatureMeta, FeatureSet, MaskKind};
use crate::error::{Error, Result};

/// Loads masks produced by an external segmenter.
///
/// `path` is either an 8-bit label map (0 = unlabeled, every other value one
/// feature, in ascending label order) or a directory of `mask_<i>.png` binary
/// images (nonzero = inside), taken in ascending `i`. A leftover mask is
/// appended only when some pixel is left uncovered. Nothing is returned on
/// any error.
pub fn load_external_masks(path: &Path, image_dims: Option<(usize, usize)>) -> Result<FeatureSet> {
    let masks = if path.is_dir() {
        load_mask_directory(path)?
    } else {
        load_label_map(path)?
    };
    let dims = masks[0].dims();
    if let Some(expected) = image_dims {
        if dims != expected {
            return Err(Error::Input(format!(
                "masks in {} are {}x{}, image is {}x{}",
                path.display(),
                dims.0,
                dims.1,
                expected.0,
                expected.1
            )));
        }
    }
    FeatureSet::with_leftover(
        masks,
        dims,
        false,
        FeatureMeta {
            source: format!("masks:{}", path.display()),
            ..FeatureMeta::default()
        },
    )
}

fn read_luma(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path)
        .map_err(|e| Error::Input(format!("cannot read mask image {}: {e}", path.display())))?
        .into_luma8();
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Input(format!("mask image {} is empty", path.display())));
    }
    Ok(Array2::from_shape_vec((h as usize, w as usize), img.into_raw())
        .expect("luma buffer matches its dimensions"))
}

fn load_label_map(path: &Path) -> Result<Vec<FeatureMask>> {
    let labels = read_luma(path)?;
    let present: BTreeSet<u8> = labels.iter().copied().filter(|v| *v != 0).collect();
    if present.is_empty() {
        return Err(Error::Input(format!(
            "label map {} has no labeled pixels",
            path.display()
        )));
    }
    Ok(present
        .into_iter()
        .map(|label| FeatureMask::new(labels.mapv(|v| v == label), MaskKind::External))
        .collect())
}

fn load_mask_directory(dir: &Path) -> Result<Vec<FeatureMask>> {
    let mut indexed = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(idx) = name
            .strip_prefix("mask_")
            .and_then(|rest| rest.strip_suffix(".png"))
            .and_then(|n| n.parse::<usize>().ok())
        else {
            continue;
        };
        indexed.push((idx, path));
    }
    if indexed.is_empty() {
        return Err(Error::Input(format!(
            "no mask_<i>.png files in {}",
            dir.display()
        )));
    }
    indexed.sort();

    let mut masks: Vec<FeatureMask> = Vec::with_capacity(indexed.len());
    for (idx, path) in indexed {
        let binary = read_luma(&path)?.mapv(|v| v != 0);
        if !binary.iter().any(|b| *b) {
            return Err(Error::Input(format!("mask {} is empty", path.display())));
        }
        if let Some(first) = masks.first() {
            if first.dims() != binary.dim() {
                return Err(Error::Input(format!(
                    "mask_{idx}.png is {:?}, expected {:?}",
                    binary.dim(),
                    first.dims()
                )));
            }
        }
        masks.push(FeatureMask::new(binary, MaskKind::External));
    }
    Ok(masks)
}
