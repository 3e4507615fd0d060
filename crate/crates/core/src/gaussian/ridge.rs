//! Ridge-regression inversion: the conditional mode of the joint Gaussian.

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::DMatrix;

use super::{materialize_conditional, MaterializedGaussian, Prior, StationaryModel};
use crate::error::{Error, Result};
use crate::hog::HogDescriptor;
use crate::raster::{Image, Inversion};

/// Invert `y` with the conditional mode of `g`. A descriptor matching the
/// template geometry is inverted directly; a larger one is covered by
/// template-sized windows at a stride of one cell whose pixel predictions are
/// averaged.
pub fn ridge_invert(g: &MaterializedGaussian, y: &HogDescriptor) -> Result<Inversion> {
    if y.depth != g.depth || y.cell_size != g.cell_size {
        return Err(Error::Dimension(format!(
            "descriptor depth {} / cell size {} does not match the model's {} / {}",
            y.depth, y.cell_size, g.depth, g.cell_size
        )));
    }
    let (tw, th) = (g.width_cells, g.height_cells);
    if y.cells_x < tw || y.cells_y < th {
        return Err(Error::Geometry(format!(
            "{}x{}-cell descriptor is smaller than the {tw}x{th} template",
            y.cells_x, y.cells_y
        )));
    }
    let s = g.cell_size;
    let (pw, ph) = g.pixel_geometry();
    let (out_w, out_h) = y.pixel_geometry();
    let nx = y.cells_x - tw + 1;
    let ny = y.cells_y - th + 1;

    let mut ys = DMatrix::zeros(g.feature_dim(), nx * ny);
    for wy in 0..ny {
        for wx in 0..nx {
            let window = y.window(wy, wx, th, tw)?;
            ys.column_mut(wy * nx + wx).copy_from_slice(window.data());
        }
    }
    let xs = g.conditional_modes(&ys)?;

    let mut sum = vec![0.0; out_w * out_h];
    let mut count = vec![0u32; out_w * out_h];
    for wy in 0..ny {
        for wx in 0..nx {
            let col = xs.column(wy * nx + wx);
            for py in 0..ph {
                let row = (wy * s + py) * out_w + wx * s;
                for px in 0..pw {
                    sum[row + px] += col[py * pw + px];
                    count[row + px] += 1;
                }
            }
        }
    }
    let data = sum.iter().zip(&count).map(|(v, &c)| v / c as f64).collect();
    Ok(Inversion::new(Image::new(out_w, out_h, 1, data)?))
}

/// Ridge inversion of arbitrary descriptor sizes from a stationary model:
/// geometries up to the canonical size are materialized exactly (and
/// cached); larger ones slide canonical windows.
pub struct RidgeInverter<'a> {
    model: &'a StationaryModel,
    prior: Prior,
    cache: Mutex<HashMap<(usize, usize), std::sync::Arc<MaterializedGaussian>>>,
}

impl<'a> RidgeInverter<'a> {
    pub fn new(model: &'a StationaryModel, prior: Prior) -> Self {
        Self {
            model,
            prior,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn gaussian_for(
        &self,
        cells_x: usize,
        cells_y: usize,
    ) -> Result<std::sync::Arc<MaterializedGaussian>> {
        let c = self.model.canonical_cells;
        let key = (cells_x.min(c), cells_y.min(c));
        if let Some(g) = self.cache.lock().unwrap().get(&key) {
            return Ok(g.clone());
        }
        let g = std::sync::Arc::new(materialize_conditional(
            self.model, key.0, key.1, self.prior,
        )?);
        self.cache.lock().unwrap().insert(key, g.clone());
        Ok(g)
    }

    pub fn invert(&self, y: &HogDescriptor) -> Result<Inversion> {
        let g = self.gaussian_for(y.cells_x, y.cells_y)?;
        ridge_invert(&g, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    /// A joint Gaussian over 4 pixels and 3 features with a hand-chosen
    /// full-rank covariance (the raster geometry is nominal).
    fn synthetic(sigma_xy_zero: bool) -> MaterializedGaussian {
        let joint = DMatrix::from_row_slice(
            7,
            7,
            &[
                2.0, 0.3, 0.1, 0.0, 0.5, 0.2, 0.1, //
                0.3, 1.5, 0.2, 0.1, 0.1, 0.4, 0.0, //
                0.1, 0.2, 1.2, 0.3, 0.0, 0.1, 0.3, //
                0.0, 0.1, 0.3, 1.0, 0.2, 0.0, 0.2, //
                0.5, 0.1, 0.0, 0.2, 1.8, 0.3, 0.1, //
                0.2, 0.4, 0.1, 0.0, 0.3, 1.4, 0.2, //
                0.1, 0.0, 0.3, 0.2, 0.1, 0.2, 1.1,
            ],
        );
        let mut xy = joint.view((0, 4), (4, 3)).into_owned();
        if sigma_xy_zero {
            xy.fill(0.0);
        }
        MaterializedGaussian::from_blocks(
            0,
            0,
            1,
            3,
            DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]),
            DVector::from_vec(vec![1.0, -1.0, 0.5]),
            Some(joint.view((0, 0), (4, 4)).into_owned()),
            xy,
            joint.view((4, 4), (3, 3)).into_owned(),
            0.0,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn independence_returns_mean() {
        let g = synthetic(true);
        let x = g.conditional_mode(&[3.0, 2.0, -4.0]).unwrap();
        assert_eq!(x, g.mu_x);
    }

    #[test]
    fn mean_features_return_mean_image() {
        let g = synthetic(false);
        let x = g.conditional_mode(g.mu_y.as_slice()).unwrap();
        assert!((x - &g.mu_x).amax() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        assert!(matches!(
            synthetic(false).conditional_mode(&[1.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn sliding_windows_average_coverage() {
        // 1x1-cell template with depth 1 and cell size 2: raster 6x6 pixels.
        let n_x = 36;
        let mu_x = DVector::from_fn(n_x, |i, _| i as f64);
        let sigma_xy = DMatrix::from_element(n_x, 1, 1.0);
        let g = MaterializedGaussian::from_blocks(
            1,
            1,
            2,
            1,
            mu_x,
            DVector::from_element(1, 0.0),
            None,
            sigma_xy,
            DMatrix::identity(1, 1),
            0.0,
            1.0,
        )
        .unwrap();
        let y = HogDescriptor::new(2, 1, 1, 2, vec![1.0, 3.0]).unwrap();
        let out = ridge_invert(&g, &y).unwrap().raw;
        assert_eq!((out.width(), out.height()), (8, 6));
        // Column 0..2 only from window 0 (mu + 1); 6..8 only from window 1
        // (shifted mu + 3); columns 2..6 average both.
        assert_eq!(out.get(0, 0, 0), 0.0 + 1.0);
        assert_eq!(out.get(7, 0, 0), 5.0 + 3.0);
        assert_eq!(
            out.get(3, 1, 0),
            0.5 * ((6.0 + 3.0 + 1.0) + (6.0 + 1.0 + 3.0))
        );
    }
}
