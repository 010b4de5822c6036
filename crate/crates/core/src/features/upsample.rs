use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Bilinear resize with corner-aligned sampling: output corners coincide with
/// input corners, so the result stays within the input's value range.
pub fn upsample_bilinear(map: ArrayView2<'_, f64>, target: (usize, usize)) -> Result<Array2<f64>> {
    let (src_h, src_w) = map.dim();
    let (dst_h, dst_w) = target;
    if src_h == 0 || src_w == 0 {
        return Err(Error::Config("cannot resample an empty map".into()));
    }
    if dst_h == 0 || dst_w == 0 {
        return Err(Error::Config(format!(
            "empty resample target {dst_h}x{dst_w}"
        )));
    }
    if (src_h, src_w) == target {
        return Ok(map.to_owned());
    }

    let ys: Vec<(usize, usize, f64)> = (0..dst_h).map(|y| source_coord(y, dst_h, src_h)).collect();
    let xs: Vec<(usize, usize, f64)> = (0..dst_w).map(|x| source_coord(x, dst_w, src_w)).collect();

    Ok(Array2::from_shape_fn(target, |(y, x)| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let top = lerp(map[(y0, x0)], map[(y0, x1)], fx);
        let bottom = lerp(map[(y1, x0)], map[(y1, x1)], fx);
        lerp(top, bottom, fy)
    }))
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}

fn source_coord(dst: usize, dst_len: usize, src_len: usize) -> (usize, usize, f64) {
    if src_len == 1 || dst_len == 1 {
        return (0, 0, 0.0);
    }
    let pos = dst as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64;
    let lo = (pos.floor() as usize).min(src_len - 1);
    let hi = (lo + 1).min(src_len - 1);
    let frac = if hi == lo { 0.0 } else { (pos - lo as f64).clamp(0.0, 1.0) };
    (lo, hi, frac)
}
