//! SSIM and its multi-scale variant.
//!
//! Window statistics use an 11x11 Gaussian (sigma 1.5) with reflect borders,
//! stability constants C1 = 0.01^2 and C2 = 0.03^2 on unit-range data.

use crate::error::{Error, Result};
use crate::imgio::{
    check_same_shape, convolve_same, downsample2, gaussian_kernel, to_grayscale, Border,
    ImageTensor, Kernel2D,
};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// MS-SSIM per-scale exponents (finest to coarsest).
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

fn window() -> Kernel2D {
    gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA).expect("static kernel")
}

struct WindowStats {
    mu_a: ImageTensor,
    mu_b: ImageTensor,
    var_a: ImageTensor,
    var_b: ImageTensor,
    cov: ImageTensor,
}

fn window_stats(a: &ImageTensor, b: &ImageTensor, k: &Kernel2D) -> Result<WindowStats> {
    let mu_a = convolve_same(a, k, Border::Reflect)?;
    let mu_b = convolve_same(b, k, Border::Reflect)?;
    let aa = convolve_same(&a.map(|v| v * v), k, Border::Reflect)?;
    let bb = convolve_same(&b.map(|v| v * v), k, Border::Reflect)?;
    let ab_img = ImageTensor::new(
        a.height(),
        a.width(),
        1,
        a.data()
            .iter()
            .zip(b.data().iter())
            .map(|(x, y)| x * y)
            .collect(),
    )?;
    let ab = convolve_same(&ab_img, k, Border::Reflect)?;

    let sub = |m: &ImageTensor, mu1: &ImageTensor, mu2: &ImageTensor| -> ImageTensor {
        ImageTensor::new(
            m.height(),
            m.width(),
            1,
            m.data()
                .iter()
                .zip(mu1.data().iter().zip(mu2.data().iter()))
                .map(|(v, (u1, u2))| v - u1 * u2)
                .collect(),
        )
        .expect("same dims")
    };
    Ok(WindowStats {
        var_a: sub(&aa, &mu_a, &mu_a),
        var_b: sub(&bb, &mu_b, &mu_b),
        cov: sub(&ab, &mu_a, &mu_b),
        mu_a,
        mu_b,
    })
}

/// Per-pixel SSIM index map on grayscale input (values in [-1, 1]).
pub(crate) fn ssim_index_map(a: &ImageTensor, b: &ImageTensor) -> Result<ImageTensor> {
    check_same_shape(a, b)?;
    let ga = to_grayscale(a);
    let gb = to_grayscale(b);
    if ga.height() < SSIM_WINDOW || ga.width() < SSIM_WINDOW {
        return Err(Error::ImageTooSmall(format!(
            "{}x{} smaller than the {SSIM_WINDOW}px SSIM window",
            ga.height(),
            ga.width()
        )));
    }
    let s = window_stats(&ga, &gb, &window())?;
    let n = ga.height() * ga.width();
    let mut map = Vec::with_capacity(n);
    for i in 0..n {
        let (mu_a, mu_b) = (s.mu_a.data()[i], s.mu_b.data()[i]);
        let (va, vb, cov) = (s.var_a.data()[i], s.var_b.data()[i], s.cov.data()[i]);
        let num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (va + vb + SSIM_C2);
        map.push(num / den);
    }
    ImageTensor::new(ga.height(), ga.width(), 1, map)
}

/// Mean SSIM index.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    Ok(ssim_index_map(a, b)?.mean())
}

/// Contrast-structure and luminance means at one scale.
fn scale_terms(a: &ImageTensor, b: &ImageTensor) -> Result<(f64, f64)> {
    let s = window_stats(a, b, &window())?;
    let n = a.height() * a.width();
    let mut cs_sum = 0.0;
    let mut lcs_sum = 0.0;
    for i in 0..n {
        let (mu_a, mu_b) = (s.mu_a.data()[i], s.mu_b.data()[i]);
        let (va, vb, cov) = (s.var_a.data()[i], s.var_b.data()[i], s.cov.data()[i]);
        let cs = (2.0 * cov + SSIM_C2) / (va + vb + SSIM_C2);
        let l = (2.0 * mu_a * mu_b + SSIM_C1) / (mu_a * mu_a + mu_b * mu_b + SSIM_C1);
        cs_sum += cs;
        lcs_sum += l * cs;
    }
    Ok((cs_sum / n as f64, lcs_sum / n as f64))
}

/// Number of dyadic scales the image supports, capped at 5.
pub fn ms_ssim_scales(height: usize, width: usize) -> usize {
    let mut dim = height.min(width);
    let mut scales = 0;
    while dim >= SSIM_WINDOW && scales < 5 {
        scales += 1;
        dim /= 2;
    }
    scales
}

/// Multi-scale SSIM: contrast-structure terms at every scale, luminance only
/// at the coarsest, combined as a weighted product. Negative means clamp to
/// zero before exponentiation. When fewer than 5 scales fit, the leading
/// weights are renormalized to sum to one.
pub fn ms_ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same_shape(a, b)?;
    let scales = ms_ssim_scales(a.height(), a.width());
    if scales == 0 {
        return Err(Error::ImageTooSmall(format!(
            "{}x{} below the {SSIM_WINDOW}px window",
            a.height(),
            a.width()
        )));
    }
    let mut weights: Vec<f64> = MS_SSIM_WEIGHTS[..scales].to_vec();
    let wsum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= wsum;
    }

    let mut ga = to_grayscale(a);
    let mut gb = to_grayscale(b);
    let mut score = 1.0;
    for (level, w) in weights.iter().enumerate() {
        let (cs, lcs) = scale_terms(&ga, &gb)?;
        let term = if level + 1 == scales { lcs } else { cs };
        score *= term.max(0.0).powf(*w);
        if level + 1 < scales {
            ga = downsample2(&ga)?;
            gb = downsample2(&gb)?;
        }
    }
    Ok(score)
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
    fn ssim_identity() {
        let img = noise(32, 32, 1);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_uniform_pair_closed_form() {
        let a = ImageTensor::constant(16, 16, 1, 100.0 / 255.0);
        let b = ImageTensor::constant(16, 16, 1, 150.0 / 255.0);
        let (mu_a, mu_b) = (100.0 / 255.0, 150.0 / 255.0);
        let expect = (2.0 * mu_a * mu_b + SSIM_C1) / (mu_a * mu_a + mu_b * mu_b + SSIM_C1);
        let got = ssim(&a, &b).unwrap();
        assert!((got - expect).abs() < 1e-12);
        assert!((got - 0.9231).abs() < 1e-4);
    }

    #[test]
    fn ssim_negative_for_inverted_noise() {
        // Oracle: direct windowed statistics around each pixel would show
        // anti-correlation; the negated image flips every covariance.
        let img = noise(32, 32, 2);
        let neg = img.map(|v| 1.0 - v);
        let s = ssim(&img, &neg).unwrap();
        assert!(s < 0.0, "inverted noise should anti-correlate, got {s}");
    }

    #[test]
    fn ssim_direct_window_oracle() {
        // Recompute the index map against naive per-pixel window loops.
        let a = noise(16, 16, 7);
        let b = noise(16, 16, 8);
        let map = ssim_index_map(&a, &b).unwrap();

        let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA).unwrap();
        let taps = k.taps();
        let half = (SSIM_WINDOW / 2) as isize;
        let reflect = |mut i: isize, n: isize| -> usize {
            while i < 0 || i >= n {
                if i < 0 {
                    i = -i - 1;
                }
                if i >= n {
                    i = 2 * n - 1 - i;
                }
            }
            i as usize
        };
        for y in [0usize, 5, 15] {
            for x in [0usize, 7, 15] {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for ky in 0..SSIM_WINDOW {
                    for kx in 0..SSIM_WINDOW {
                        let wgt = taps[ky * SSIM_WINDOW + kx];
                        let sy = reflect(y as isize + ky as isize - half, 16);
                        let sx = reflect(x as isize + kx as isize - half, 16);
                        let va = a.get(sy, sx, 0);
                        let vb = b.get(sy, sx, 0);
                        mu_a += wgt * va;
                        mu_b += wgt * vb;
                        aa += wgt * va * va;
                        bb += wgt * vb * vb;
                        ab += wgt * va * vb;
                    }
                }
                let va = aa - mu_a * mu_a;
                let vb = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let expect = ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (va + vb + SSIM_C2));
                assert!((map.get(y, x, 0) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ssim_too_small_rejected() {
        let img = noise(8, 8, 3);
        assert!(ssim(&img, &img).is_err());
    }

    #[test]
    fn ms_ssim_identity_and_constant() {
        let img = noise(256, 256, 4);
        assert!((ms_ssim(&img, &img).unwrap() - 1.0).abs() < 1e-9);
        let flat = ImageTensor::constant(256, 256, 1, 0.5);
        assert!((ms_ssim(&flat, &flat).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ms_ssim_dilutes_impulse_relative_to_ssim() {
        let a = noise(200, 200, 5);
        let mut b = a.clone();
        b.set(100, 100, 0, if b.get(100, 100, 0) > 0.5 { 0.0 } else { 1.0 });
        let single = ssim(&a, &b).unwrap();
        let multi = ms_ssim(&a, &b).unwrap();
        assert!(
            multi > single,
            "coarse scales should dilute the impulse: ms={multi} ssim={single}"
        );
    }

    #[test]
    fn ms_ssim_scale_reduction() {
        assert_eq!(ms_ssim_scales(256, 256), 5);
        assert_eq!(ms_ssim_scales(176, 176), 5);
        assert_eq!(ms_ssim_scales(128, 128), 4);
        assert_eq!(ms_ssim_scales(64, 64), 3);
        assert_eq!(ms_ssim_scales(11, 11), 1);
        assert_eq!(ms_ssim_scales(8, 8), 0);
        let img = noise(64, 64, 6);
        assert!((ms_ssim(&img, &img).unwrap() - 1.0).abs() < 1e-9);
    }
}
