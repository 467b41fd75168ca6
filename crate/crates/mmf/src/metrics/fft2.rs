//! Minimal 2-D FFT on top of rustfft, plus the shared frequency-grid
//! helpers used by the log-Gabor filter banks.

use rustfft::{num_complex::Complex64, FftPlanner};

pub(crate) fn fft2(data: &mut [Complex64], height: usize, width: usize) {
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(width);
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(height);
    let mut col = vec![Complex64::default(); height];
    for x in 0..width {
        for y in 0..height {
            col[y] = data[y * width + x];
        }
        col_fft.process(&mut col);
        for y in 0..height {
            data[y * width + x] = col[y];
        }
    }
}

pub(crate) fn ifft2(data: &mut [Complex64], height: usize, width: usize) {
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_inverse(width);
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_inverse(height);
    let mut col = vec![Complex64::default(); height];
    for x in 0..width {
        for y in 0..height {
            col[y] = data[y * width + x];
        }
        col_fft.process(&mut col);
        for y in 0..height {
            data[y * width + x] = col[y];
        }
    }
    let scale = 1.0 / (height * width) as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// Normalized frequency coordinate for FFT bin `i` of `n`, in (-0.5, 0.5].
#[inline]
pub(crate) fn freq_coord(i: usize, n: usize) -> f64 {
    let half = (n + 1) / 2;
    if i < half {
        i as f64 / n as f64
    } else {
        (i as f64 - n as f64) / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_roundtrip() {
        let (h, w) = (8, 12);
        let src: Vec<Complex64> = (0..h * w)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), 0.0))
            .collect();
        let mut data = src.clone();
        fft2(&mut data, h, w);
        ifft2(&mut data, h, w);
        for (a, b) in data.iter().zip(src.iter()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn dc_bin_is_sum() {
        let (h, w) = (4, 4);
        let mut data = vec![Complex64::new(1.5, 0.0); h * w];
        fft2(&mut data, h, w);
        assert!((data[0].re - 24.0).abs() < 1e-10);
        assert!(data[1].norm() < 1e-10);
    }
}
