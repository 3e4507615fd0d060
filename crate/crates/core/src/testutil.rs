//! Shared fixtures for unit tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::raster::Image;

/// Uniform noise smoothed by `passes` 3x3 box filters and stretched back to
/// roughly `[0, 1]`: a cheap stand-in for natural-image texture.
pub fn smooth_noise(width: usize, height: usize, passes: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new(0.0, 1.0).unwrap();
    let mut img = Image::from_fn(width, height, |_, _| dist.sample(&mut rng));
    for _ in 0..passes {
        let src = img.clone();
        img = Image::from_fn(width, height, |x, y| {
            let mut acc = 0.0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let sx = (x as i64 + dx).clamp(0, width as i64 - 1) as usize;
                    let sy = (y as i64 + dy).clamp(0, height as i64 - 1) as usize;
                    acc += src.get(sx, sy, 0);
                }
            }
            acc / 9.0
        });
    }
    let lo = img.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = img.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    img.map(|v| (v - lo) / (hi - lo).max(1e-12))
}
