//! Synthetic textures for tests, fixtures and benchmarks.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::GrayImage;

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Phase of a plane wave at `(x, y)` measured from the image centre.
fn wave(width: usize, height: usize, x: usize, y: usize, freq: f64, angle: f64, phase: f64) -> f64 {
    let cx = x as f64 - (width as f64 - 1.0) / 2.0;
    let cy = y as f64 - (height as f64 - 1.0) / 2.0;
    (2.0 * PI * freq * (cx * angle.cos() + cy * angle.sin()) + phase).cos()
}

/// Full-field sinusoidal grating. `freq` is in cycles per pixel and `angle`
/// is the direction of the wave vector, measured from the x axis towards +y.
pub fn grating(width: usize, height: usize, freq: f64, angle: f64, phase: f64) -> GrayImage {
    GrayImage::from_fn(width, height, |x, y| {
        quantize(127.5 + 127.5 * wave(width, height, x, y, freq, angle, phase))
    })
}

/// Radial raised-cosine window: 1 at the centre, 0 from `radius` outwards.
fn window(side: usize, x: usize, y: usize, radius: f64) -> f64 {
    let c = (side as f64 - 1.0) / 2.0;
    let r = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
    if r >= radius {
        0.0
    } else {
        0.5 * (1.0 + (PI * r / radius).cos())
    }
}

/// Grating under a circular window on a black background. Rotating the
/// pattern leaves the window unchanged, so the image contains no
/// orientation cue other than the wave itself.
pub fn windowed_grating(side: usize, freq: f64, angle: f64, radius: f64) -> GrayImage {
    GrayImage::from_fn(side, side, |x, y| {
        let w = window(side, x, y, radius);
        quantize(w * 127.5 * (1.0 + wave(side, side, x, y, freq, angle, 0.0)))
    })
}

pub fn checkerboard(width: usize, height: usize, cell: usize) -> GrayImage {
    let cell = cell.max(1);
    GrayImage::from_fn(width, height, |x, y| if (x / cell + y / cell).is_multiple_of(2) { 230 } else { 25 })
}

/// Uniform white noise.
pub fn noise(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GrayImage::from_fn(width, height, |_, _| rng.random())
}

/// `count` mutually distinct textures of `side`×`side` pixels.
///
/// Each texture superimposes two gratings with seeded random frequencies,
/// directions and weights plus a little noise. Directions are drawn
/// continuously, so no two textures are rotated copies of one another.
pub fn texture_corpus(count: usize, side: usize, seed: u64) -> Vec<GrayImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let f1 = rng.random_range(0.04..0.35);
            let f2 = rng.random_range(0.04..0.35);
            let a1 = rng.random_range(0.0..PI);
            let a2 = rng.random_range(0.0..PI);
            let w1 = rng.random_range(0.4..1.0);
            let w2 = 1.0 - w1;
            let p2 = rng.random_range(0.0..2.0 * PI);
            let amp = rng.random_range(60.0..120.0);
            let grain = rng.random_range(2.0..20.0);
            GrayImage::from_fn(side, side, |x, y| {
                let v = w1 * wave(side, side, x, y, f1, a1, 0.0) + w2 * wave(side, side, x, y, f2, a2, p2);
                quantize(127.5 + amp * v + rng.random_range(-grain..grain))
            })
        })
        .collect()
}
