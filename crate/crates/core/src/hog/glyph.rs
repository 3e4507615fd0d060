//! The black-and-white oriented-line diagram of a descriptor.

use super::HogDescriptor;
use crate::error::{Error, Result};
use crate::raster::Image;

/// Pixels (relative to the cell's top-left corner) covered by the segment of
/// insensitive orientation bin `bin` out of `orientations`, drawn in a cell of
/// `cell_pixels` pixels. The segment runs through the cell centre,
/// perpendicular to the bin's gradient direction, so bin 0 (horizontal
/// gradient) is a vertical stroke.
pub fn glyph_segment(bin: usize, orientations: usize, cell_pixels: usize) -> Vec<(usize, usize)> {
    let theta = bin as f64 * std::f64::consts::PI / orientations as f64;
    let (dir_x, dir_y) = (-theta.sin(), theta.cos());
    let centre = (cell_pixels as f64 - 1.0) / 2.0;
    let half = centre;
    let clampi = |v: f64| v.round().clamp(0.0, cell_pixels as f64 - 1.0) as i64;
    let (x0, y0) = (clampi(centre - half * dir_x), clampi(centre - half * dir_y));
    let (x1, y1) = (clampi(centre + half * dir_x), clampi(centre + half * dir_y));

    let (dx, dy) = (x1 - x0, y1 - y0);
    let steps = dx.abs().max(dy.abs());
    if steps == 0 {
        return vec![(x0 as usize, y0 as usize)];
    }
    (0..=steps)
        .map(|i| {
            let t = i as f64 / steps as f64;
            let x = (x0 as f64 + t * dx as f64).round() as usize;
            let y = (y0 as f64 + t * dy as f64).round() as usize;
            (x, y)
        })
        .collect()
}

/// Render the glyph diagram: `cell_pixels` pixels per cell, one segment per
/// contrast-insensitive orientation bin with intensity proportional to the
/// bin weight divided by the largest weight in the descriptor. Overlapping
/// segments keep the brighter value. Negative weights are not drawn.
pub fn render_glyph(
    descriptor: &HogDescriptor,
    orientations: usize,
    cell_pixels: usize,
) -> Result<Image> {
    if cell_pixels < 8 {
        return Err(Error::Config(format!(
            "glyph cells need at least 8 pixels, got {cell_pixels}"
        )));
    }
    let offset = 2 * orientations;
    if descriptor.depth < offset + orientations {
        return Err(Error::Dimension(format!(
            "depth {} has no {orientations} insensitive orientation channels",
            descriptor.depth
        )));
    }
    let width = descriptor.cells_x * cell_pixels;
    let height = descriptor.cells_y * cell_pixels;
    let mut out = Image::zeros(width, height, 1);

    let mut peak = 0.0f64;
    for cy in 0..descriptor.cells_y {
        for cx in 0..descriptor.cells_x {
            let cell = descriptor.cell(cy, cx);
            for &v in &cell[offset..offset + orientations] {
                peak = peak.max(v);
            }
        }
    }
    if peak <= 0.0 {
        return Ok(out);
    }

    let segments: Vec<Vec<(usize, usize)>> = (0..orientations)
        .map(|o| glyph_segment(o, orientations, cell_pixels))
        .collect();
    for cy in 0..descriptor.cells_y {
        for cx in 0..descriptor.cells_x {
            let cell = descriptor.cell(cy, cx);
            for (o, segment) in segments.iter().enumerate() {
                let v = cell[offset + o];
                if v <= 0.0 {
                    continue;
                }
                let intensity = v / peak;
                for &(px, py) in segment {
                    let (x, y) = (cx * cell_pixels + px, cy * cell_pixels + py);
                    if intensity > out.get(x, y, 0) {
                        out.set(x, y, 0, intensity);
                    }
                }
            }
        }
    }
    Ok(out)
}
