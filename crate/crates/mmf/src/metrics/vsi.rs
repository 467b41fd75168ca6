//! Visual saliency induced quality index.
//!
//! Saliency comes from an SDSP-style decomposition: a band-pass log-Gabor
//! frequency prior on Lab channels, a color-warmth prior and a center
//! prior. Similarity pools saliency, gradient and chrominance terms with
//! the published exponents, constants rescaled to unit-range pixels.

use super::fft2::{fft2, freq_coord, ifft2};
use super::fsim::{avg_pool, scharr_magnitude, working_scale_factor};
use crate::error::{Error, Result};
use crate::imgio::{check_same_shape, ImageTensor};
use rustfft::num_complex::Complex64;

pub const VSI_C1: f64 = 1.27;
pub const VSI_C2: f64 = 386.0 / (255.0 * 255.0);
pub const VSI_C3: f64 = 130.0 / (255.0 * 255.0);
pub const VSI_ALPHA: f64 = 0.40;
pub const VSI_BETA: f64 = 0.02;

// SDSP saliency parameters; sigma_d is in pixels of a 256px reference frame.
const SDSP_SIGMA_F: f64 = 6.2;
const SDSP_OMEGA0: f64 = 0.002;
const SDSP_SIGMA_D: f64 = 114.0;
const SDSP_SIGMA_C: f64 = 0.25;
const MIN_DIM: usize = 64;

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// sRGB (D65) to CIE Lab. Returns (L, a, b) planes.
fn rgb_to_lab(img: &ImageTensor) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = img.height() * img.width();
    let mut l_out = Vec::with_capacity(n);
    let mut a_out = Vec::with_capacity(n);
    let mut b_out = Vec::with_capacity(n);
    let f = |t: f64| -> f64 {
        if t > 0.008856 {
            t.cbrt()
        } else {
            7.787 * t + 16.0 / 116.0
        }
    };
    for px in 0..n {
        let (r, g, b) = if img.channels() == 3 {
            (
                srgb_to_linear(img.data()[px * 3]),
                srgb_to_linear(img.data()[px * 3 + 1]),
                srgb_to_linear(img.data()[px * 3 + 2]),
            )
        } else {
            let v = srgb_to_linear(img.data()[px]);
            (v, v, v)
        };
        let x = (0.4124 * r + 0.3576 * g + 0.1805 * b) / 0.95047;
        let y = 0.2126 * r + 0.7152 * g + 0.0722 * b;
        let z = (0.0193 * r + 0.1192 * g + 0.9505 * b) / 1.08883;
        let (fx, fy, fz) = (f(x), f(y), f(z));
        l_out.push(116.0 * fy - 16.0);
        a_out.push(500.0 * (fx - fy));
        b_out.push(200.0 * (fy - fz));
    }
    (l_out, a_out, b_out)
}

fn bandpass(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut spectrum: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut spectrum, h, w);
    let log_sigma = SDSP_SIGMA_F.ln();
    for y in 0..h {
        let fy = freq_coord(y, h);
        for x in 0..w {
            let fx = freq_coord(x, w);
            let idx = y * w + x;
            let r = (fx * fx + fy * fy).sqrt();
            let g = if idx == 0 {
                0.0
            } else {
                (-(r / SDSP_OMEGA0).ln().powi(2) / (2.0 * log_sigma * log_sigma)).exp()
            };
            spectrum[idx] *= g;
        }
    }
    ifft2(&mut spectrum, h, w);
    spectrum.iter().map(|c| c.re).collect()
}

fn minmax_normalize(values: &mut [f64]) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    if span < 1e-12 {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    values.iter_mut().for_each(|v| *v = (*v - lo) / span);
}

/// SDSP visual saliency map, normalized to [0, 1].
pub(crate) fn sdsp_saliency(img: &ImageTensor) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let n = h * w;
    let (l_ch, a_ch, b_ch) = rgb_to_lab(img);

    let lf = bandpass(&l_ch, h, w);
    let af = bandpass(&a_ch, h, w);
    let bf = bandpass(&b_ch, h, w);
    let mut sf: Vec<f64> = (0..n)
        .map(|i| (lf[i] * lf[i] + af[i] * af[i] + bf[i] * bf[i]).sqrt())
        .collect();
    minmax_normalize(&mut sf);

    // Center prior scaled to the working resolution.
    let sigma_d = SDSP_SIGMA_D * h.min(w) as f64 / 256.0;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut sd = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            sd[y * w + x] = (-d2 / (sigma_d * sigma_d)).exp();
        }
    }

    // Warm-color prior on min-max-normalized a/b channels.
    let mut an = a_ch.clone();
    let mut bn = b_ch.clone();
    minmax_normalize(&mut an);
    minmax_normalize(&mut bn);
    let mut vs: Vec<f64> = (0..n)
        .map(|i| {
            let sc = 1.0 - (-(an[i] * an[i] + bn[i] * bn[i]) / (SDSP_SIGMA_C * SDSP_SIGMA_C)).exp();
            sf[i] * sd[i] * sc
        })
        .collect();
    minmax_normalize(&mut vs);
    vs
}

fn lmn_channels(img: &ImageTensor) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = img.height() * img.width();
    let mut l = Vec::with_capacity(n);
    let mut m = Vec::with_capacity(n);
    let mut nn = Vec::with_capacity(n);
    for px in 0..n {
        let (r, g, b) = if img.channels() == 3 {
            (
                img.data()[px * 3],
                img.data()[px * 3 + 1],
                img.data()[px * 3 + 2],
            )
        } else {
            (img.data()[px], img.data()[px], img.data()[px])
        };
        l.push(0.06 * r + 0.63 * g + 0.27 * b);
        m.push(0.30 * r + 0.04 * g - 0.35 * b);
        nn.push(0.34 * r - 0.60 * g + 0.17 * b);
    }
    (l, m, nn)
}

pub fn vsi(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same_shape(a, b)?;
    if a.height() < MIN_DIM || a.width() < MIN_DIM {
        return Err(Error::ImageTooSmall(format!(
            "{}x{} below the {MIN_DIM}px VSI minimum",
            a.height(),
            a.width()
        )));
    }
    let factor = working_scale_factor(a.height(), a.width());
    let da = avg_pool(a, factor);
    let db = avg_pool(b, factor);
    let (h, w) = (da.height(), da.width());
    let n = h * w;

    let vs1 = sdsp_saliency(&da);
    let vs2 = sdsp_saliency(&db);

    let (l1, m1, n1) = lmn_channels(&da);
    let (l2, m2, n2) = lmn_channels(&db);
    let lum1 = ImageTensor::new(h, w, 1, l1)?;
    let lum2 = ImageTensor::new(h, w, 1, l2)?;
    let g1 = scharr_magnitude(&lum1)?;
    let g2 = scharr_magnitude(&lum2)?;

    let mut num = 0.0;
    let mut den = 0.0;
    let mut uniform_num = 0.0;
    for i in 0..n {
        let s_vs = (2.0 * vs1[i] * vs2[i] + VSI_C1) / (vs1[i] * vs1[i] + vs2[i] * vs2[i] + VSI_C1);
        let (ga, gb) = (g1.data()[i], g2.data()[i]);
        let s_g = (2.0 * ga * gb + VSI_C2) / (ga * ga + gb * gb + VSI_C2);
        let s_m = (2.0 * m1[i] * m2[i] + VSI_C3) / (m1[i] * m1[i] + m2[i] * m2[i] + VSI_C3);
        let s_n = (2.0 * n1[i] * n2[i] + VSI_C3) / (n1[i] * n1[i] + n2[i] * n2[i] + VSI_C3);
        // Chrominance product can dip below zero on opposing hues; clamp
        // before the fractional exponent.
        let s_c = (s_m * s_n).max(0.0);
        let term = s_vs * s_g.max(0.0).powf(VSI_ALPHA) * s_c.powf(VSI_BETA);
        let vsm = vs1[i].max(vs2[i]);
        num += term * vsm;
        den += vsm;
        uniform_num += term;
    }
    // Saliency can vanish entirely (neutral grayscale content); fall back
    // to uniform pooling.
    if den < 1e-9 {
        return Ok(uniform_num / n as f64);
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn colorful(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                let r = 0.5 + 0.4 * ((x as f64 / 13.0).sin());
                let g = 0.5 + 0.4 * ((y as f64 / 11.0).cos());
                let b = 0.5 + 0.3 * (((x + y) as f64 / 9.0).sin());
                data.push((r + 0.05 * (rng.gen::<f64>() - 0.5)).clamp(0.0, 1.0));
                data.push((g + 0.05 * (rng.gen::<f64>() - 0.5)).clamp(0.0, 1.0));
                data.push((b + 0.05 * (rng.gen::<f64>() - 0.5)).clamp(0.0, 1.0));
            }
        }
        ImageTensor::new(h, w, 3, data).unwrap()
    }

    #[test]
    fn identity_is_one() {
        let img = colorful(64, 64, 1);
        let v = vsi(&img, &img).unwrap();
        assert!((v - 1.0).abs() < 1e-6, "identity vsi {v}");
    }

    #[test]
    fn darkened_image_in_expected_band() {
        let img = colorful(96, 96, 2);
        let dark = img.map(|v| v * 0.5);
        let v = vsi(&img, &dark).unwrap();
        assert!(v > 0.8 && v < 1.0, "darkened vsi {v}");
    }

    #[test]
    fn grayscale_pair_uses_gradient_pooling() {
        // Replicated channels: chrominance similarity ~1, so the score is
        // driven by the saliency/gradient terms alone.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 64 * 64;
        let gray: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let mut rgb = Vec::with_capacity(n * 3);
        for &v in &gray {
            rgb.extend_from_slice(&[v, v, v]);
        }
        let a = ImageTensor::new(64, 64, 3, rgb.clone()).unwrap();
        let blur: Vec<f64> = rgb.iter().map(|v| (v * 0.8 + 0.1)).collect();
        let b = ImageTensor::new(64, 64, 3, blur).unwrap();
        let v = vsi(&a, &b).unwrap();
        assert!(v.is_finite() && v > 0.0 && v <= 1.0 + 1e-9, "vsi {v}");
    }

    #[test]
    fn sdsp_center_bias() {
        let img = colorful(64, 64, 4);
        let vs = sdsp_saliency(&img);
        let center_mean: f64 = (24..40)
            .flat_map(|y| (24..40).map(move |x| (y, x)))
            .map(|(y, x)| vs[y * 64 + x])
            .sum::<f64>()
            / 256.0;
        let corner_mean: f64 = (0..8)
            .flat_map(|y| (0..8).map(move |x| (y, x)))
            .map(|(y, x)| vs[y * 64 + x])
            .sum::<f64>()
            / 64.0;
        assert!(
            center_mean > corner_mean,
            "center prior should bias saliency toward the middle"
        );
    }
}
