use ndarray::Array2;

use super::{FeatureMask, FeatureMeta, FeatureSet, MaskKind};
use crate::error::{Error, Result};

/// Pixel span `[start, end)` of cell `idx` when `len` pixels are cut into
/// `parts` equal cells; the remainder goes to the last cell.
pub fn cell_span(len: usize, parts: usize, idx: usize) -> (usize, usize) {
    let step = len / parts;
    let start = idx * step;
    let end = if idx + 1 == parts { len } else { start + step };
    (start, end)
}

/// A `rows x cols` grid of rectangular superpixels tiling the image.
pub fn superpixel_masks(image_dims: (usize, usize), rows: usize, cols: usize) -> Result<FeatureSet> {
    let (h, w) = image_dims;
    if rows == 0 || cols == 0 || rows * cols < 2 {
        return Err(Error::Config(format!(
            "superpixel grid {rows}x{cols} needs at least two cells"
        )));
    }
    if rows > h || cols > w {
        return Err(Error::Config(format!(
            "superpixel grid {rows}x{cols} exceeds the {h}x{w} image"
        )));
    }
    let mut masks = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (y0, y1) = cell_span(h, rows, r);
        for c in 0..cols {
            let (x0, x1) = cell_span(w, cols, c);
            let binary = Array2::from_shape_fn(image_dims, |(y, x)| {
                (y0..y1).contains(&y) && (x0..x1).contains(&x)
            });
            masks.push(FeatureMask::new(binary, MaskKind::Superpixel));
        }
    }
    FeatureSet::with_leftover(
        masks,
        image_dims,
        false,
        FeatureMeta {
            source: "superpixel".into(),
            grid: Some((rows, cols)),
            ..FeatureMeta::default()
        },
    )
}
