//! Slow, obviously-correct reference computations.
//!
//! Nothing here calls into the production crates: inputs and outputs are
//! plain slices so a bug in the code under test cannot leak into its oracle.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Same-size zero-padded convolution by direct summation.
///
/// `kernel` is `size`×`size`, row-major, centred at `(size/2, size/2)`:
/// `out(x, y) = sum_{u,v} image(u, v) * kernel(x - u, y - v)`.
pub fn convolve_same(image: &[u8], width: usize, height: usize, kernel: &[Complex64], size: usize) -> Vec<Complex64> {
    assert_eq!(image.len(), width * height);
    assert_eq!(kernel.len(), size * size);
    let half = (size / 2) as isize;
    let mut out = vec![Complex64::new(0.0, 0.0); width * height];
    for y in 0..height as isize {
        for x in 0..width as isize {
            let mut acc = Complex64::new(0.0, 0.0);
            for v in 0..height as isize {
                for u in 0..width as isize {
                    let (dx, dy) = (x - u, y - v);
                    if dx.abs() > half || dy.abs() > half {
                        continue;
                    }
                    let k = kernel[((dy + half) * size as isize + dx + half) as usize];
                    acc += k * image[(v * width as isize + u) as usize] as f64;
                }
            }
            out[(y * width as isize + x) as usize] = acc;
        }
    }
    out
}

/// Summed magnitude of a filtered image.
pub fn energy(filtered: &[Complex64]) -> f64 {
    let mut e = 0.0;
    for g in filtered {
        e += (g.re * g.re + g.im * g.im).sqrt();
    }
    e
}

/// `(mean, deviation)` of the magnitudes, with the deviation defined as the
/// root of the summed squared residuals divided by the pixel count.
pub fn mean_and_deviation(filtered: &[Complex64]) -> (f64, f64) {
    let count = filtered.len() as f64;
    let mean = energy(filtered) / count;
    let mut ss = 0.0;
    for g in filtered {
        let d = (g.re * g.re + g.im * g.im).sqrt() - mean;
        ss += d * d;
    }
    (mean, ss.sqrt() / count)
}

/// Sum over blocks of the Euclidean distance between `(mean, deviation)` pairs.
pub fn block_distance(mu_a: &[f64], sigma_a: &[f64], mu_b: &[f64], sigma_b: &[f64]) -> f64 {
    assert!(mu_a.len() == sigma_a.len() && mu_a.len() == mu_b.len() && mu_b.len() == sigma_b.len());
    let mut d = 0.0;
    for i in 0..mu_a.len() {
        let dm = mu_a[i] - mu_b[i];
        let ds = sigma_a[i] - sigma_b[i];
        d += (dm * dm + ds * ds).sqrt();
    }
    d
}

/// Index of the largest column total of a row-major `rows`×`cols` grid,
/// preferring the lowest index among equal totals.
pub fn argmax_column(values: &[f64], rows: usize, cols: usize) -> usize {
    let mut best = 0;
    let mut best_total = f64::NEG_INFINITY;
    for c in 0..cols {
        let mut total = 0.0;
        for r in 0..rows {
            total += values[r * cols + c];
        }
        if total > best_total {
            best_total = total;
            best = c;
        }
    }
    best
}

/// Direct 2-D DFT magnitude of a centred kernel at frequency `(fu, fv)` in
/// cycles per pixel, using the `exp(-j 2 pi f . d)` sign convention.
pub fn dft_magnitude(kernel: &[Complex64], size: usize, fu: f64, fv: f64) -> f64 {
    let half = (size / 2) as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for row in 0..size {
        for col in 0..size {
            let dx = col as f64 - half;
            let dy = row as f64 - half;
            let phase = -2.0 * std::f64::consts::PI * (fu * dx + fv * dy);
            acc += kernel[row * size + col] * Complex64::from_polar(1.0, phase);
        }
    }
    acc.norm()
}

/// `|a - b| <= tol * max(|a|, |b|)`, with exact equality accepted for zeros.
pub fn close_relative(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random image of random size between 1×1 and `max_side`×`max_side`.
pub fn random_image(rng: &mut impl Rng, max_side: usize) -> (usize, usize, Vec<u8>) {
    let w = rng.random_range(1..=max_side);
    let h = rng.random_range(1..=max_side);
    let px = (0..w * h).map(|_| rng.random()).collect();
    (w, h, px)
}

/// Random non-negative `(mu, sigma)` grids of length `len`.
pub fn random_blocks(rng: &mut impl Rng, len: usize) -> (Vec<f64>, Vec<f64>) {
    let mu = (0..len).map(|_| rng.random_range(0.0..100.0)).collect();
    let sigma = (0..len).map(|_| rng.random_range(0.0..10.0)).collect();
    (mu, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impulse_reproduces_kernel() {
        let size = 3;
        let kernel: Vec<Complex64> = (0..9).map(|i| Complex64::new(i as f64, -(i as f64))).collect();
        let mut img = vec![0u8; 25];
        img[12] = 1;
        let out = convolve_same(&img, 5, 5, &kernel, size);
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let o = out[((2 + dy) * 5 + 2 + dx) as usize];
                assert_eq!(o, kernel[((dy + 1) * 3 + dx + 1) as usize]);
            }
        }
        assert_eq!(out[0], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn deviation_of_two_values() {
        let f = [Complex64::new(0.0, 0.0), Complex64::new(0.0, 2.0)];
        let (m, s) = mean_and_deviation(&f);
        assert_eq!(m, 1.0);
        assert!((s - 2f64.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax_column(&[1.0, 1.0, 1.0, 1.0], 2, 2), 0);
        assert_eq!(argmax_column(&[1.0, 2.0, 1.0, 0.0], 2, 2), 0);
        assert_eq!(argmax_column(&[1.0, 2.0, 1.0, 1.0], 2, 2), 1);
    }

    #[test]
    fn dft_of_delta_is_flat() {
        let mut k = vec![Complex64::new(0.0, 0.0); 9];
        k[4] = Complex64::new(1.0, 0.0);
        for f in [0.0, 0.1, 0.37] {
            assert!((dft_magnitude(&k, 3, f, -f) - 1.0).abs() < 1e-12);
        }
    }
}
