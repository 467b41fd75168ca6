//! Normalized Laplacian pyramid distance.
//!
//! Each pyramid coefficient is divided by (sigma0 + local weighted mean of
//! coefficient magnitudes in a 3x3 neighborhood); the distance is the mean
//! over levels of the RMS difference between the normalized bands.

use crate::error::{Error, Result};
use crate::imgio::{
    check_same_shape, convolve_same, gaussian_kernel, laplacian_pyramid, to_grayscale, Border,
    ImageTensor,
};

pub const NLPD_SIGMA0: f64 = 0.17;
pub const NLPD_MAX_LEVELS: usize = 6;
pub const NLPD_MIN_LEVELS: usize = 3;

fn feasible_levels(height: usize, width: usize) -> usize {
    let (mut h, mut w) = (height, width);
    let mut levels = 1;
    while levels < NLPD_MAX_LEVELS {
        h = (h + 1) / 2;
        w = (w + 1) / 2;
        if h < 4 || w < 4 {
            break;
        }
        levels += 1;
    }
    levels
}

fn normalize_band(band: &ImageTensor) -> Result<ImageTensor> {
    let k = gaussian_kernel(3, 1.0)?;
    let local = convolve_same(&band.map(f64::abs), &k, Border::Reflect)?;
    ImageTensor::new(
        band.height(),
        band.width(),
        1,
        band.data()
            .iter()
            .zip(local.data().iter())
            .map(|(v, m)| v / (NLPD_SIGMA0 + m))
            .collect(),
    )
}

pub fn nlpd(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same_shape(a, b)?;
    let ga = to_grayscale(a);
    let gb = to_grayscale(b);
    let levels = feasible_levels(ga.height(), ga.width());
    if levels < NLPD_MIN_LEVELS {
        return Err(Error::ImageTooSmall(format!(
            "{}x{} supports only {levels} pyramid levels (needs {NLPD_MIN_LEVELS})",
            ga.height(),
            ga.width()
        )));
    }
    let pa = laplacian_pyramid(&ga, levels)?;
    let pb = laplacian_pyramid(&gb, levels)?;
    let mut dist = 0.0;
    for (band_a, band_b) in pa.iter().zip(pb.iter()) {
        let na = normalize_band(band_a)?;
        let nb = normalize_band(band_b)?;
        let mse = na
            .data()
            .iter()
            .zip(nb.data().iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / na.data().len() as f64;
        dist += mse.sqrt();
    }
    Ok(dist / levels as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn noise(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::new(h, w, 1, (0..h * w).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn identity_is_zero() {
        let img = noise(64, 64, 1);
        assert!(nlpd(&img, &img).unwrap().abs() < 1e-9);
    }

    #[test]
    fn level_selection() {
        assert_eq!(feasible_levels(256, 256), 6);
        assert_eq!(feasible_levels(32, 32), 4);
        assert_eq!(feasible_levels(16, 16), 3);
        assert_eq!(feasible_levels(8, 8), 2);
        let small = noise(8, 8, 2);
        assert!(nlpd(&small, &small).is_err());
    }

    #[test]
    fn constant_pair_driven_by_residual() {
        // Band-pass levels are zero for flat images; only the low-pass
        // residual differs.
        let a = ImageTensor::constant(64, 64, 1, 0.2);
        let b = ImageTensor::constant(64, 64, 1, 0.8);
        let d = nlpd(&a, &b).unwrap();
        let levels = feasible_levels(64, 64) as f64;
        // Oracle: residuals are the constants themselves, normalized by
        // sigma0 + |constant|, and only that level contributes.
        let na = 0.2 / (NLPD_SIGMA0 + 0.2);
        let nb = 0.8 / (NLPD_SIGMA0 + 0.8);
        let expect = (nb - na).abs() / levels;
        assert!((d - expect).abs() < 1e-9, "got {d}, expected {expect}");
    }

    #[test]
    fn noise_monotonicity() {
        let a = noise(64, 64, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let with_noise = |img: &ImageTensor, amp: f64, rng: &mut rand_chacha::ChaCha8Rng| {
            let data: Vec<f64> = img
                .data()
                .iter()
                .map(|v| (v + amp * (rng.gen::<f64>() - 0.5)).clamp(0.0, 1.0))
                .collect();
            ImageTensor::new(img.height(), img.width(), 1, data).unwrap()
        };
        let b_small = with_noise(&a, 0.05, &mut rng);
        let b_large = with_noise(&a, 0.10, &mut rng);
        let d_small = nlpd(&a, &b_small).unwrap();
        let d_large = nlpd(&a, &b_large).unwrap();
        assert!(
            d_large > d_small,
            "more noise must raise nlpd: {d_large} vs {d_small}"
        );
    }

    #[test]
    fn symmetry() {
        let a = noise(64, 64, 5);
        let b = noise(64, 64, 6);
        assert!((nlpd(&a, &b).unwrap() - nlpd(&b, &a).unwrap()).abs() < 1e-9);
    }
}
