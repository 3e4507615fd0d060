//! Helpers shared by the integration tests: random images and an
//! independent, deliberately naive HOG implementation.

#![allow(dead_code)]

use fvtb::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform noise smoothed by `passes` 3x3 box filters, rescaled to [0, 1].
pub fn smooth_noise(width: usize, height: usize, passes: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::from_fn(width, height, |_, _| rng.random::<f64>());
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

/// Per-pixel derivative of one channel in 8-bit units: centred inside the
/// image, one-sided on its border.
fn derivative(img: &Image, x: usize, y: usize, c: usize) -> (f64, f64) {
    let (w, h) = (img.width(), img.height());
    let at = |x: usize, y: usize| img.get(x, y, c);
    let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
    let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
    (
        255.0 * (at(x1, y) - at(x0, y)),
        255.0 * (at(x, y1) - at(x, y0)),
    )
}

/// Descriptor of `img` (cells_y x cells_x x depth, row-major), computed by
/// summing every pixel's weighted vote into every histogram cell and bin
/// directly, without any of the library's incremental bookkeeping.
pub fn naive_hog(img: &Image, s: usize, n: usize, truncation: f64) -> (usize, usize, Vec<f64>) {
    let bins = 2 * n;
    let (bx_n, by_n) = (img.width() / s, img.height() / s);
    let mut hist = vec![vec![vec![0.0; bins]; bx_n]; by_n];
    for y in 0..by_n * s {
        for x in 0..bx_n * s {
            // The channel with the strongest gradient votes.
            let (mut gx, mut gy) = derivative(img, x, y, 0);
            for c in 1..img.channels() {
                let (dx, dy) = derivative(img, x, y, c);
                if dx * dx + dy * dy > gx * gx + gy * gy {
                    gx = dx;
                    gy = dy;
                }
            }
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let theta = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);
            let pos = theta / (std::f64::consts::TAU / bins as f64);
            let fx = (x as f64 + 0.5) / s as f64 - 0.5;
            let fy = (y as f64 + 0.5) / s as f64 - 0.5;
            for (by, row) in hist.iter_mut().enumerate() {
                let wy = (1.0 - (fy - by as f64).abs()).max(0.0);
                if wy == 0.0 {
                    continue;
                }
                for (bx, cell) in row.iter_mut().enumerate() {
                    let wx = (1.0 - (fx - bx as f64).abs()).max(0.0);
                    if wx == 0.0 {
                        continue;
                    }
                    for (o, h) in cell.iter_mut().enumerate() {
                        let d = (pos - o as f64).rem_euclid(bins as f64);
                        let d = d.min(bins as f64 - d);
                        let wo = (1.0 - d).max(0.0);
                        *h += mag * wx * wy * wo;
                    }
                }
            }
        }
    }
    let energy = |bx: usize, by: usize| -> f64 {
        (0..n)
            .map(|o| (hist[by][bx][o] + hist[by][bx][o + n]).powi(2))
            .sum()
    };
    let block = |bx: usize, by: usize| -> f64 {
        let e = energy(bx, by) + energy(bx + 1, by) + energy(bx, by + 1) + energy(bx + 1, by + 1);
        1.0 / (e + 1e-4).sqrt()
    };
    let (cx_n, cy_n) = (bx_n - 2, by_n - 2);
    let depth = 3 * n + 4;
    let mut out = Vec::with_capacity(cx_n * cy_n * depth);
    for cy in 0..cy_n {
        for cx in 0..cx_n {
            let norms = [
                block(cx + 1, cy + 1),
                block(cx + 1, cy),
                block(cx, cy + 1),
                block(cx, cy),
            ];
            let h = &hist[cy + 1][cx + 1];
            let clamp = |v: f64| v.min(truncation);
            for o in 0..bins {
                out.push(0.5 * norms.iter().map(|&nb| clamp(h[o] * nb)).sum::<f64>());
            }
            for o in 0..n {
                out.push(
                    0.5 * norms
                        .iter()
                        .map(|&nb| clamp((h[o] + h[o + n]) * nb))
                        .sum::<f64>(),
                );
            }
            for &nb in &norms {
                out.push(0.2357 * (0..bins).map(|o| clamp(h[o] * nb)).sum::<f64>());
            }
        }
    }
    (cx_n, cy_n, out)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
