//! Per-pixel error visibility maps for SSIM, MAE and TV Ratio, rendered as
//! grayscale PNGs where darker means more error.

use crate::error::Result;
use crate::imgio::{check_same_shape, encode_png, ImageTensor};
use crate::metrics::ssim_index_map;
use std::path::Path;

/// Epsilon for the per-pixel gradient ratio; larger than the global TV
/// Ratio guard because local ratios amplify noise in near-flat regions.
pub const TV_MAP_EPSILON: f64 = 1e-4;

/// Per-pixel error map: 0 = no error, 1 = maximal error.
#[derive(Debug, Clone)]
pub struct ErrorMap {
    pub values: ImageTensor,
    pub metric: String,
    pub pair_id: String,
}

impl ErrorMap {
    fn new(values: ImageTensor, metric: &str, pair_id: &str) -> ErrorMap {
        debug_assert!(values
            .data()
            .iter()
            .all(|v| (0.0..=1.0).contains(v)));
        ErrorMap {
            values,
            metric: metric.to_string(),
            pair_id: pair_id.to_string(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.mean()
    }
}

/// Per-pixel SSIM index remapped to `clamp(1 - ssim, 0, 1)`.
pub fn ssim_map(a: &ImageTensor, b: &ImageTensor, pair_id: &str) -> Result<ErrorMap> {
    let index = ssim_index_map(a, b)?;
    Ok(ErrorMap::new(
        index.map(|v| (1.0 - v).clamp(0.0, 1.0)),
        "ssim",
        pair_id,
    ))
}

/// Per-pixel mean over channels of |a - b| on unit scale.
pub fn mae_map(a: &ImageTensor, b: &ImageTensor, pair_id: &str) -> Result<ErrorMap> {
    check_same_shape(a, b)?;
    let (h, w, c) = (a.height(), a.width(), a.channels());
    let mut values = Vec::with_capacity(h * w);
    for px in 0..h * w {
        let mut acc = 0.0;
        for ch in 0..c {
            acc += (a.data()[px * c + ch] - b.data()[px * c + ch]).abs();
        }
        values.push(acc / c as f64);
    }
    Ok(ErrorMap::new(
        ImageTensor::new(h, w, 1, values)?,
        "mae",
        pair_id,
    ))
}

/// Forward-difference gradient magnitude, summed over channels.
fn local_gradient(img: &ImageTensor) -> Vec<f64> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut g = 0.0;
            for ch in 0..c {
                let v = img.get(y, x, ch);
                let dh = if x + 1 < w { img.get(y, x + 1, ch) - v } else { 0.0 };
                let dv = if y + 1 < h { img.get(y + 1, x, ch) - v } else { 0.0 };
                g += (dh * dh + dv * dv).sqrt();
            }
            out[y * w + x] = g;
        }
    }
    out
}

/// Local gradient ratio inverted relative to the global TV Ratio: smoothing
/// in the output drives the ratio below 1, so `1 - ratio` highlights
/// smoothed areas.
pub fn tv_ratio_map(a: &ImageTensor, b: &ImageTensor, pair_id: &str) -> Result<ErrorMap> {
    check_same_shape(a, b)?;
    let ga = local_gradient(a);
    let gb = local_gradient(b);
    let values: Vec<f64> = ga
        .iter()
        .zip(gb.iter())
        .map(|(&x, &y)| {
            let r = (y + TV_MAP_EPSILON) / (x + TV_MAP_EPSILON);
            (1.0 - r).clamp(0.0, 1.0)
        })
        .collect();
    Ok(ErrorMap::new(
        ImageTensor::new(a.height(), a.width(), 1, values)?,
        "tv_ratio",
        pair_id,
    ))
}

/// Writes an 8-bit grayscale PNG with value `round(255 * (1 - error))`, so
/// darker pixels mean more error.
pub fn write_map(map: &ErrorMap, path: impl AsRef<Path>) -> Result<()> {
    let rendered = map.values.map(|v| 1.0 - v);
    encode_png(&rendered, path)
}

/// The three Fig-2-style maps for one pair.
pub fn all_maps(a: &ImageTensor, b: &ImageTensor, pair_id: &str) -> Result<Vec<ErrorMap>> {
    Ok(vec![
        ssim_map(a, b, pair_id)?,
        mae_map(a, b, pair_id)?,
        tv_ratio_map(a, b, pair_id)?,
    ])
}
