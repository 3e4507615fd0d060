//! Dense mean and covariance blocks for a concrete template geometry.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::StationaryModel;
use crate::error::{Error, Result};

/// The uniform prior added to the diagonal of each covariance block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prior {
    /// Fraction of the block's mean diagonal (pixel variance for the image
    /// block, mean HOG channel variance for the feature block).
    Relative(f64),
    /// The same absolute value on both blocks.
    Absolute(f64),
}

impl Default for Prior {
    fn default() -> Self {
        Prior::Relative(0.01)
    }
}

/// Joint Gaussian over the pixels of a `(w + 2) s x (h + 2) s` raster and the
/// `w x h` HOG cells it produces. Pixels are indexed row-major; features use
/// the descriptor layout `(cy * w + cx) * depth + k`. Covariance blocks
/// include the prior.
#[derive(Debug, Clone)]
pub struct MaterializedGaussian {
    pub width_cells: usize,
    pub height_cells: usize,
    pub cell_size: usize,
    pub depth: usize,
    pub mu_x: DVector<f64>,
    pub mu_y: DVector<f64>,
    /// Absent when materialized only for conditioning, where the
    /// pixel/pixel block is never read.
    pub sigma_xx: Option<DMatrix<f64>>,
    pub sigma_xy: DMatrix<f64>,
    pub sigma_yy: DMatrix<f64>,
    pub lambda_x: f64,
    pub lambda_y: f64,
    chol_yy: Cholesky<f64, Dyn>,
}

impl MaterializedGaussian {
    /// Build from explicit blocks (priors already included). Fails when
    /// `sigma_yy` (or `sigma_xx`, if given) is not positive definite.
    #[allow(clippy::too_many_arguments)]
    pub fn from_blocks(
        width_cells: usize,
        height_cells: usize,
        cell_size: usize,
        depth: usize,
        mu_x: DVector<f64>,
        mu_y: DVector<f64>,
        sigma_xx: Option<DMatrix<f64>>,
        sigma_xy: DMatrix<f64>,
        sigma_yy: DMatrix<f64>,
        lambda_x: f64,
        lambda_y: f64,
    ) -> Result<Self> {
        let (dx, dy) = (mu_x.len(), mu_y.len());
        if sigma_xy.shape() != (dx, dy) || sigma_yy.shape() != (dy, dy) {
            return Err(Error::Dimension(format!(
                "blocks {:?} / {:?} do not match means of length {dx} and {dy}",
                sigma_xy.shape(),
                sigma_yy.shape()
            )));
        }
        if let Some(xx) = &sigma_xx {
            if xx.shape() != (dx, dx) {
                return Err(Error::Dimension(format!(
                    "sigma_xx is {:?}, expected {dx}x{dx}",
                    xx.shape()
                )));
            }
            if Cholesky::new(xx.clone()).is_none() {
                return Err(Error::Numerical(
                    "sigma_xx is not positive definite; increase the prior".into(),
                ));
            }
        }
        let chol_yy = Cholesky::new(sigma_yy.clone()).ok_or_else(|| {
            Error::Numerical("sigma_yy is not positive definite; increase the prior".into())
        })?;
        Ok(Self {
            width_cells,
            height_cells,
            cell_size,
            depth,
            mu_x,
            mu_y,
            sigma_xx,
            sigma_xy,
            sigma_yy,
            lambda_x,
            lambda_y,
            chol_yy,
        })
    }

    /// Pixel raster `(width, height)`.
    pub fn pixel_geometry(&self) -> (usize, usize) {
        (
            (self.width_cells + 2) * self.cell_size,
            (self.height_cells + 2) * self.cell_size,
        )
    }

    pub fn feature_dim(&self) -> usize {
        self.mu_y.len()
    }

    /// Solve `sigma_yy * w = rhs`.
    pub fn solve_yy(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol_yy.solve(rhs)
    }

    /// `sigma_xy * sigma_yy^-1 * (y - mu_y) + mu_x`.
    pub fn conditional_mode(&self, y: &[f64]) -> Result<DVector<f64>> {
        if y.len() != self.mu_y.len() {
            return Err(Error::Dimension(format!(
                "feature vector has {} values, expected {}",
                y.len(),
                self.mu_y.len()
            )));
        }
        let centred = DVector::from_column_slice(y) - &self.mu_y;
        let z = self.chol_yy.solve(&centred);
        Ok(&self.sigma_xy * z + &self.mu_x)
    }

    /// Conditional modes of the columns of `ys` (one feature vector each).
    pub fn conditional_modes(&self, ys: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if ys.nrows() != self.mu_y.len() {
            return Err(Error::Dimension(format!(
                "feature matrix has {} rows, expected {}",
                ys.nrows(),
                self.mu_y.len()
            )));
        }
        let mut centred = ys.clone();
        for mut col in centred.column_iter_mut() {
            col -= &self.mu_y;
        }
        let z = self.chol_yy.solve(&centred);
        let mut out = &self.sigma_xy * z;
        for mut col in out.column_iter_mut() {
            col += &self.mu_x;
        }
        Ok(out)
    }
}

fn prior_values(model: &StationaryModel, prior: Prior) -> Result<(f64, f64)> {
    let (lx, ly) = match prior {
        Prior::Absolute(v) => (v, v),
        Prior::Relative(f) => {
            let d = model.depth();
            let mean_hh = (0..d).map(|k| model.hh(0, 0, k, k)).sum::<f64>() / d as f64;
            (f * model.pp(0, 0), f * mean_hh)
        }
    };
    if !(lx > 0.0 && ly > 0.0) || !lx.is_finite() || !ly.is_finite() {
        return Err(Error::Numerical(format!(
            "prior ({lx}, {ly}) must be positive; the model may have zero variance"
        )));
    }
    Ok((lx, ly))
}

fn build(
    model: &StationaryModel,
    width_cells: usize,
    height_cells: usize,
    prior: Prior,
    with_xx: bool,
) -> Result<MaterializedGaussian> {
    let c = model.canonical_cells;
    if width_cells == 0 || height_cells == 0 || width_cells > c || height_cells > c {
        return Err(Error::Geometry(format!(
            "template {width_cells}x{height_cells} cells is outside the model's 1..={c} range"
        )));
    }
    let (lx, ly) = prior_values(model, prior)?;
    let s = model.hog.cell_size;
    let depth = model.depth();
    let (pw, ph) = ((width_cells + 2) * s, (height_cells + 2) * s);
    let n_x = pw * ph;
    let n_cells = width_cells * height_cells;
    let n_y = n_cells * depth;

    let mu_x = DVector::from_element(n_x, model.mu_pixel);
    let mu_y = DVector::from_fn(n_y, |i, _| model.mu_hog[i % depth]);

    let pixel = |p: usize| ((p % pw) as i64, (p / pw) as i64);
    let anchor = |cell: usize| {
        (
            ((cell % width_cells + 1) * s) as i64,
            ((cell / width_cells + 1) * s) as i64,
        )
    };

    let sigma_xx = with_xx.then(|| {
        let mut m = DMatrix::from_fn(n_x, n_x, |p, q| {
            let ((px, py), (qx, qy)) = (pixel(p), pixel(q));
            model.pp(qx - px, qy - py)
        });
        for i in 0..n_x {
            m[(i, i)] += lx;
        }
        m
    });

    let mut sigma_xy = DMatrix::zeros(n_x, n_y);
    for cell in 0..n_cells {
        let (ax, ay) = anchor(cell);
        for p in 0..n_x {
            let (px, py) = pixel(p);
            for k in 0..depth {
                sigma_xy[(p, cell * depth + k)] = model.ph(px - ax, py - ay, k);
            }
        }
    }

    let mut sigma_yy = DMatrix::zeros(n_y, n_y);
    for a in 0..n_cells {
        let (ax, ay) = ((a % width_cells) as i64, (a / width_cells) as i64);
        for b in 0..n_cells {
            let (bx, by) = ((b % width_cells) as i64, (b / width_cells) as i64);
            let block = model.hh_block(bx - ax, by - ay);
            for k in 0..depth {
                for l in 0..depth {
                    sigma_yy[(a * depth + k, b * depth + l)] = block[k * depth + l];
                }
            }
        }
    }
    for i in 0..n_y {
        sigma_yy[(i, i)] += ly;
    }

    MaterializedGaussian::from_blocks(
        width_cells,
        height_cells,
        s,
        depth,
        mu_x,
        mu_y,
        sigma_xx,
        sigma_xy,
        sigma_yy,
        lx,
        ly,
    )
}

/// Dense joint Gaussian for a `width_cells x height_cells` template,
/// including the pixel/pixel block.
pub fn materialize(
    model: &StationaryModel,
    width_cells: usize,
    height_cells: usize,
    prior: Prior,
) -> Result<MaterializedGaussian> {
    build(model, width_cells, height_cells, prior, true)
}

/// As [`materialize`] but without the pixel/pixel block, which conditioning
/// never reads and which is large (`D^2` entries) for canonical templates.
pub fn materialize_conditional(
    model: &StationaryModel,
    width_cells: usize,
    height_cells: usize,
    prior: Prior,
) -> Result<MaterializedGaussian> {
    build(model, width_cells, height_cells, prior, false)
}
