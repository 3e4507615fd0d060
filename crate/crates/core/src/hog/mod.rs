//! Histogram of oriented gradients, 31-channel variant.
//!
//! Each cell carries `2n` contrast-sensitive orientation channels, `n`
//! contrast-insensitive channels and 4 gradient-energy channels (`n = 9` by
//! default, 31 channels in total). Gradient votes are bilinearly interpolated
//! into the four neighbouring cells and linearly between the two nearest
//! orientation bins. Every cell is normalized against the four 2x2 blocks that
//! contain it, truncated, and the outer ring of cells is dropped, so an image
//! of `W x H` pixels yields `(W/s - 2) x (H/s - 2)` cells for cell size `s`.

mod glyph;

pub use glyph::{glyph_segment, render_glyph};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;

/// Added to block energies before normalization, in 8-bit intensity units.
pub const NORM_EPS: f64 = 1e-4;

/// Weight of the gradient-energy channels (1/sqrt(18)).
const ENERGY_WEIGHT: f64 = 0.2357;

/// Pixel differences are snapped to this grid before use, so that adding a
/// constant to an image leaves every gradient bit-identical.
const GRADIENT_QUANTUM: f64 = 1.0 / 4_294_967_296.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HogConfig {
    /// Pixels per cell side.
    pub cell_size: usize,
    /// Contrast-insensitive orientation bins; twice as many signed bins.
    pub orientations: usize,
    /// Clamp applied to each normalized histogram value.
    pub truncation: f64,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self {
            cell_size: 8,
            orientations: 9,
            truncation: 0.2,
        }
    }
}

impl HogConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cell_size < 2 {
            return Err(Error::Config(format!(
                "cell_size must be at least 2, got {}",
                self.cell_size
            )));
        }
        if self.orientations < 2 {
            return Err(Error::Config(format!(
                "orientations must be at least 2, got {}",
                self.orientations
            )));
        }
        if !(self.truncation > 0.0) {
            return Err(Error::Config("truncation must be positive".into()));
        }
        Ok(())
    }

    pub fn signed_bins(&self) -> usize {
        2 * self.orientations
    }

    /// Channels per cell.
    pub fn depth(&self) -> usize {
        3 * self.orientations + 4
    }

    /// Index of the first contrast-insensitive channel.
    pub fn unsigned_offset(&self) -> usize {
        self.signed_bins()
    }

    /// Number of histogram (non-energy) channels.
    pub fn histogram_channels(&self) -> usize {
        3 * self.orientations
    }

    /// Pixel raster `(width, height)` whose descriptor has the given cells.
    pub fn pixel_geometry(&self, cells_x: usize, cells_y: usize) -> (usize, usize) {
        (
            (cells_x + 2) * self.cell_size,
            (cells_y + 2) * self.cell_size,
        )
    }
}

/// A `cells_y x cells_x x depth` feature tensor, row-major with the channel
/// index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct HogDescriptor {
    pub cells_x: usize,
    pub cells_y: usize,
    pub depth: usize,
    pub cell_size: usize,
    data: Vec<f64>,
}

impl HogDescriptor {
    pub fn new(
        cells_x: usize,
        cells_y: usize,
        depth: usize,
        cell_size: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != cells_x * cells_y * depth {
            return Err(Error::Dimension(format!(
                "{cells_y}x{cells_x}x{depth} descriptor needs {} values, got {}",
                cells_x * cells_y * depth,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("descriptor has non-finite values".into()));
        }
        Ok(Self {
            cells_x,
            cells_y,
            depth,
            cell_size,
            data,
        })
    }

    pub fn zeros(cells_x: usize, cells_y: usize, depth: usize, cell_size: usize) -> Self {
        Self {
            cells_x,
            cells_y,
            depth,
            cell_size,
            data: vec![0.0; cells_x * cells_y * depth],
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, cy: usize, cx: usize, k: usize) -> f64 {
        self.data[(cy * self.cells_x + cx) * self.depth + k]
    }

    pub fn cell(&self, cy: usize, cx: usize) -> &[f64] {
        let start = (cy * self.cells_x + cx) * self.depth;
        &self.data[start..start + self.depth]
    }

    /// Copy of the `cells_h x cells_w` sub-grid whose top-left cell is
    /// `(cy, cx)`.
    pub fn window(&self, cy: usize, cx: usize, cells_h: usize, cells_w: usize) -> Result<Self> {
        if cy + cells_h > self.cells_y || cx + cells_w > self.cells_x {
            return Err(Error::Geometry(format!(
                "window {cells_h}x{cells_w} at cell ({cy}, {cx}) leaves the {}x{} descriptor",
                self.cells_y, self.cells_x
            )));
        }
        let mut data = Vec::with_capacity(cells_h * cells_w * self.depth);
        for y in cy..cy + cells_h {
            let start = (y * self.cells_x + cx) * self.depth;
            data.extend_from_slice(&self.data[start..start + cells_w * self.depth]);
        }
        Ok(Self {
            cells_x: cells_w,
            cells_y: cells_h,
            depth: self.depth,
            cell_size: self.cell_size,
            data,
        })
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn same_geometry(&self, other: &HogDescriptor) -> bool {
        self.cells_x == other.cells_x && self.cells_y == other.cells_y && self.depth == other.depth
    }

    /// Pixel raster `(width, height)` that produces this many cells.
    pub fn pixel_geometry(&self) -> (usize, usize) {
        (
            (self.cells_x + 2) * self.cell_size,
            (self.cells_y + 2) * self.cell_size,
        )
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= factor);
        out
    }
}

/// Elementwise `max(v, 0)`, used to visualize detector weight tensors.
pub fn positive_part(descriptor: &HogDescriptor) -> HogDescriptor {
    let mut out = descriptor.clone();
    out.data.iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

#[inline]
fn snap(v: f64) -> f64 {
    (v / GRADIENT_QUANTUM).round() * GRADIENT_QUANTUM
}

/// Image derivative at `(x, y)` for channel `c`: centred difference where
/// both neighbours exist, one-sided at the border.
#[inline]
fn derivative(img: &Image, x: usize, y: usize, c: usize) -> (f64, f64) {
    let (w, h) = (img.width(), img.height());
    let dx = if x > 0 && x + 1 < w {
        img.get(x + 1, y, c) - img.get(x - 1, y, c)
    } else if x + 1 < w {
        img.get(x + 1, y, c) - img.get(x, y, c)
    } else if x > 0 {
        img.get(x, y, c) - img.get(x - 1, y, c)
    } else {
        0.0
    };
    let dy = if y > 0 && y + 1 < h {
        img.get(x, y + 1, c) - img.get(x, y - 1, c)
    } else if y + 1 < h {
        img.get(x, y + 1, c) - img.get(x, y, c)
    } else if y > 0 {
        img.get(x, y, c) - img.get(x, y - 1, c)
    } else {
        0.0
    };
    (snap(dx) * 255.0, snap(dy) * 255.0)
}

/// Gradient of the channel with the largest magnitude.
#[inline]
fn gradient(img: &Image, x: usize, y: usize) -> (f64, f64) {
    let (mut gx, mut gy) = derivative(img, x, y, 0);
    let mut best = gx * gx + gy * gy;
    for c in 1..img.channels() {
        let (dx, dy) = derivative(img, x, y, c);
        let m = dx * dx + dy * dy;
        if m > best {
            best = m;
            gx = dx;
            gy = dy;
        }
    }
    (gx, gy)
}

/// Compute the descriptor of `image`. Colour images use the channel with the
/// strongest gradient at each pixel; callers wanting luminance features
/// convert first.
pub fn compute_hog(image: &Image, config: &HogConfig) -> Result<HogDescriptor> {
    config.validate()?;
    let s = config.cell_size;
    let blocks_x = image.width() / s;
    let blocks_y = image.height() / s;
    if blocks_x < 3 || blocks_y < 3 {
        return Err(Error::Dimension(format!(
            "a {}x{} image has no interior {s}-pixel cell (needs at least {}x{})",
            image.width(),
            image.height(),
            3 * s,
            3 * s
        )));
    }
    let bins = config.signed_bins();
    let plane = blocks_x * blocks_y;
    // hist[(by * blocks_x + bx) * bins + o]
    let mut hist = vec![0.0f64; plane * bins];
    let bin_width = std::f64::consts::TAU / bins as f64;
    let inv_s = 1.0 / s as f64;

    for y in 0..blocks_y * s {
        let yp = (y as f64 + 0.5) * inv_s - 0.5;
        let iyp = yp.floor() as isize;
        let vy0 = yp - iyp as f64;
        let vy1 = 1.0 - vy0;
        for x in 0..blocks_x * s {
            let (gx, gy) = gradient(image, x, y);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let mut angle = gy.atan2(gx);
            if angle < 0.0 {
                angle += std::f64::consts::TAU;
            }
            let pos = angle / bin_width;
            let lower = pos.floor();
            let wo1 = pos - lower;
            let wo0 = 1.0 - wo1;
            let o0 = (lower as usize) % bins;
            let o1 = (o0 + 1) % bins;

            let xp = (x as f64 + 0.5) * inv_s - 0.5;
            let ixp = xp.floor() as isize;
            let vx0 = xp - ixp as f64;
            let vx1 = 1.0 - vx0;

            let mut vote = |cx: isize, cy: isize, w: f64| {
                if cx >= 0 && cy >= 0 && (cx as usize) < blocks_x && (cy as usize) < blocks_y {
                    let base = (cy as usize * blocks_x + cx as usize) * bins;
                    hist[base + o0] += w * wo0 * mag;
                    hist[base + o1] += w * wo1 * mag;
                }
            };
            vote(ixp, iyp, vx1 * vy1);
            vote(ixp + 1, iyp, vx0 * vy1);
            vote(ixp, iyp + 1, vx1 * vy0);
            vote(ixp + 1, iyp + 1, vx0 * vy0);
        }
    }

    let n = config.orientations;
    let energy: Vec<f64> = hist
        .chunks_exact(bins)
        .map(|h| (0..n).map(|o| (h[o] + h[o + n]).powi(2)).sum())
        .collect();

    let out_x = blocks_x - 2;
    let out_y = blocks_y - 2;
    let depth = config.depth();
    let trunc = config.truncation;
    let mut data = vec![0.0; out_x * out_y * depth];
    let block_norm = |bx: usize, by: usize| -> f64 {
        let e = energy[by * blocks_x + bx]
            + energy[by * blocks_x + bx + 1]
            + energy[(by + 1) * blocks_x + bx]
            + energy[(by + 1) * blocks_x + bx + 1];
        1.0 / (e + NORM_EPS).sqrt()
    };

    for cy in 0..out_y {
        for cx in 0..out_x {
            // The four 2x2 blocks containing histogram cell (cx + 1, cy + 1).
            let norms = [
                block_norm(cx + 1, cy + 1),
                block_norm(cx + 1, cy),
                block_norm(cx, cy + 1),
                block_norm(cx, cy),
            ];
            let h = &hist[((cy + 1) * blocks_x + cx + 1) * bins..][..bins];
            let dst = &mut data[(cy * out_x + cx) * depth..][..depth];
            let mut texture = [0.0f64; 4];
            for o in 0..bins {
                let mut sum = 0.0;
                for (t, &nb) in texture.iter_mut().zip(&norms) {
                    let v = (h[o] * nb).min(trunc);
                    sum += v;
                    *t += v;
                }
                dst[o] = 0.5 * sum;
            }
            for o in 0..n {
                let combined = h[o] + h[o + n];
                let sum: f64 = norms.iter().map(|&nb| (combined * nb).min(trunc)).sum();
                dst[bins + o] = 0.5 * sum;
            }
            for (i, t) in texture.iter().enumerate() {
                dst[3 * n + i] = ENERGY_WEIGHT * t;
            }
        }
    }

    Ok(HogDescriptor {
        cells_x: out_x,
        cells_y: out_y,
        depth,
        cell_size: s,
        data,
    })
}
