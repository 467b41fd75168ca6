//! Feature similarity index: phase congruency plus gradient magnitude.
//!
//! Phase congruency follows the classic log-Gabor construction (4 scales,
//! 4 orientations, base wavelength 6, scale multiplier 2, sigma_onf 0.55)
//! without the noise-floor subtraction; scores are canonical-formula
//! values, not bit-compatible with any particular reference toolchain.

use super::fft2::{fft2, freq_coord, ifft2};
use crate::error::{Error, Result};
use crate::imgio::{check_same_shape, convolve_same, to_grayscale, Border, ImageTensor, Kernel2D};
use rustfft::num_complex::Complex64;

pub const FSIM_T1: f64 = 0.85 / (255.0 * 255.0);
pub const FSIM_T2: f64 = 160.0 / (255.0 * 255.0);
const NSCALE: usize = 4;
const NORIENT: usize = 4;
const MIN_WAVELENGTH: f64 = 6.0;
const MULT: f64 = 2.0;
const SIGMA_ONF: f64 = 0.55;
const D_THETA_ON_SIGMA: f64 = 1.2;
const EPS: f64 = 1e-10;
const MIN_DIM: usize = 64;

pub(crate) fn scharr_x() -> Kernel2D {
    let s = 1.0 / 16.0;
    Kernel2D::new(
        vec![3.0 * s, 0.0, -3.0 * s, 10.0 * s, 0.0, -10.0 * s, 3.0 * s, 0.0, -3.0 * s],
        3,
        3,
        false,
    )
    .expect("static kernel")
}

pub(crate) fn scharr_y() -> Kernel2D {
    let s = 1.0 / 16.0;
    Kernel2D::new(
        vec![3.0 * s, 10.0 * s, 3.0 * s, 0.0, 0.0, 0.0, -3.0 * s, -10.0 * s, -3.0 * s],
        3,
        3,
        false,
    )
    .expect("static kernel")
}

pub(crate) fn scharr_magnitude(img: &ImageTensor) -> Result<ImageTensor> {
    let gx = convolve_same(img, &scharr_x(), Border::Reflect)?;
    let gy = convolve_same(img, &scharr_y(), Border::Reflect)?;
    ImageTensor::new(
        img.height(),
        img.width(),
        1,
        gx.data()
            .iter()
            .zip(gy.data().iter())
            .map(|(x, y)| (x * x + y * y).sqrt())
            .collect(),
    )
}

/// Average pooling with a square window of `factor`, truncating remainders.
pub(crate) fn avg_pool(img: &ImageTensor, factor: usize) -> ImageTensor {
    if factor <= 1 {
        return img.clone();
    }
    let (oh, ow, c) = (
        img.height() / factor,
        img.width() / factor,
        img.channels(),
    );
    let mut data = vec![0.0; oh * ow * c];
    let norm = 1.0 / (factor * factor) as f64;
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let mut s = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        s += img.get(y * factor + dy, x * factor + dx, ch);
                    }
                }
                data[(y * ow + x) * c + ch] = s * norm;
            }
        }
    }
    ImageTensor::new(oh, ow, c, data).expect("valid dims")
}

/// Working-scale reduction used by FSIM/VSI: pool so the short side lands
/// near 256 pixels.
pub(crate) fn working_scale_factor(height: usize, width: usize) -> usize {
    ((height.min(width) as f64 / 256.0).round() as usize).max(1)
}

/// Phase congruency map via a log-Gabor bank, summed over orientations.
pub(crate) fn phase_congruency(img: &ImageTensor) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let n = h * w;

    let mut spectrum: Vec<Complex64> = img
        .data()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    fft2(&mut spectrum, h, w);

    // Radius/angle grids plus a low-pass guard against wraparound.
    let mut radius = vec![0.0; n];
    let mut theta = vec![0.0; n];
    for y in 0..h {
        let fy = freq_coord(y, h);
        for x in 0..w {
            let fx = freq_coord(x, w);
            let idx = y * w + x;
            radius[idx] = (fx * fx + fy * fy).sqrt();
            theta[idx] = (-fy).atan2(fx);
        }
    }
    radius[0] = 1.0; // avoid log(0) at DC; the filter is zeroed there anyway
    let lowpass: Vec<f64> = radius
        .iter()
        .map(|&r| 1.0 / (1.0 + (r / 0.45).powi(30)))
        .collect();

    let log_sigma = SIGMA_ONF.ln();
    let sigma_theta = (std::f64::consts::PI / NORIENT as f64) / D_THETA_ON_SIGMA;

    let mut pc_energy = vec![0.0; n];
    let mut total_amplitude = vec![0.0; n];

    for o in 0..NORIENT {
        let angle = o as f64 * std::f64::consts::PI / NORIENT as f64;
        let (sin_o, cos_o) = angle.sin_cos();
        // Angular spread, computed once per orientation.
        let spread: Vec<f64> = theta
            .iter()
            .map(|&t| {
                let ds = t.sin() * cos_o - t.cos() * sin_o;
                let dc = t.cos() * cos_o + t.sin() * sin_o;
                let dtheta = ds.atan2(dc).abs();
                (-dtheta * dtheta / (2.0 * sigma_theta * sigma_theta)).exp()
            })
            .collect();

        let mut sum_e = vec![0.0; n];
        let mut sum_o = vec![0.0; n];
        let mut sum_an = vec![0.0; n];
        let mut responses: Vec<Vec<Complex64>> = Vec::with_capacity(NSCALE);

        for s in 0..NSCALE {
            let wavelength = MIN_WAVELENGTH * MULT.powi(s as i32);
            let f0 = 1.0 / wavelength;
            let mut filtered = vec![Complex64::default(); n];
            for i in 0..n {
                let mut g = (-(radius[i] / f0).ln().powi(2) / (2.0 * log_sigma * log_sigma)).exp();
                g *= lowpass[i] * spread[i];
                if i == 0 {
                    g = 0.0;
                }
                filtered[i] = spectrum[i] * g;
            }
            ifft2(&mut filtered, h, w);
            for i in 0..n {
                sum_e[i] += filtered[i].re;
                sum_o[i] += filtered[i].im;
                sum_an[i] += filtered[i].norm();
            }
            responses.push(filtered);
        }

        for i in 0..n {
            let x_energy = (sum_e[i] * sum_e[i] + sum_o[i] * sum_o[i]).sqrt() + EPS;
            let mean_e = sum_e[i] / x_energy;
            let mean_o = sum_o[i] / x_energy;
            let mut energy = 0.0;
            for resp in &responses {
                let e = resp[i].re;
                let od = resp[i].im;
                energy += e * mean_e + od * mean_o - (e * mean_o - od * mean_e).abs();
            }
            pc_energy[i] += energy.max(0.0);
            total_amplitude[i] += sum_an[i];
        }
    }

    (0..n)
        .map(|i| pc_energy[i] / (total_amplitude[i] + EPS))
        .collect()
}

pub fn fsim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same_shape(a, b)?;
    if a.height() < MIN_DIM || a.width() < MIN_DIM {
        return Err(Error::ImageTooSmall(format!(
            "{}x{} below the {MIN_DIM}px FSIM minimum",
            a.height(),
            a.width()
        )));
    }
    let factor = working_scale_factor(a.height(), a.width());
    let ga = avg_pool(&to_grayscale(a), factor);
    let gb = avg_pool(&to_grayscale(b), factor);

    let pc1 = phase_congruency(&ga);
    let pc2 = phase_congruency(&gb);
    let g1 = scharr_magnitude(&ga)?;
    let g2 = scharr_magnitude(&gb)?;

    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..pc1.len() {
        let (p1, p2) = (pc1[i], pc2[i]);
        let (m1, m2) = (g1.data()[i], g2.data()[i]);
        let s_pc = (2.0 * p1 * p2 + FSIM_T1) / (p1 * p1 + p2 * p2 + FSIM_T1);
        let s_g = (2.0 * m1 * m2 + FSIM_T2) / (m1 * m1 + m2 * m2 + FSIM_T2);
        let pcm = p1.max(p2);
        num += s_pc * s_g * pcm;
        den += pcm;
    }
    // Featureless pair: both phase-congruency maps vanish, no evidence of
    // difference.
    if den < 1e-9 {
        return Ok(1.0);
    }
    Ok(num / den)
}
