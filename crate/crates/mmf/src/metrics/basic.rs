//! Pixel-error metrics: PSNR, MAE, TV Ratio.

use crate::error::Result;
use crate::imgio::{check_same_shape, ImageTensor};

/// PSNR cap applied when MSE is effectively zero.
pub const PSNR_CAP_DB: f64 = 100.0;
const PSNR_MSE_FLOOR: f64 = 1e-10;

/// Guard for the total-variation ratio denominator.
pub const TV_EPSILON: f64 = 1e-8;

/// Peak signal-to-noise ratio in dB on unit-range data, capped at 100 dB.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same_shape(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse < PSNR_MSE_FLOOR {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Reporting scale for MAE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaeScale {
    /// Mean absolute difference on [0,1] samples.
    Unit,
    /// Unit value times 255 (the conventional 8-bit magnitude).
    Byte,
}

/// Mean absolute pixel difference.
pub fn mae(a: &ImageTensor, b: &ImageTensor, scale: MaeScale) -> Result<f64> {
    check_same_shape(a, b)?;
    let m = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / a.data().len() as f64;
    Ok(match scale {
        MaeScale::Unit => m,
        MaeScale::Byte => m * 255.0,
    })
}

/// Sum of per-pixel gradient magnitudes (forward differences), summed over
/// channels. Pixels on the last row/column contribute a zero difference in
/// that direction.
pub fn total_variation(img: &ImageTensor) -> f64 {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut tv = 0.0;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = img.get(y, x, ch);
                let dh = if x + 1 < w { img.get(y, x + 1, ch) - v } else { 0.0 };
                let dv = if y + 1 < h { img.get(y + 1, x, ch) - v } else { 0.0 };
                tv += (dh * dh + dv * dv).sqrt();
            }
        }
    }
    tv
}

/// TV(a) / (TV(b) + eps); both-flat pairs score 1.0 so featureless inputs
/// do not emit infinities.
pub fn tv_ratio(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same_shape(a, b)?;
    let tva = total_variation(a);
    let tvb = total_variation(b);
    if tva < TV_EPSILON && tvb < TV_EPSILON {
        return Ok(1.0);
    }
    Ok(tva / (tvb + TV_EPSILON))
}
