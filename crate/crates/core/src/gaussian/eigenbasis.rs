//! The translated natural-image eigenbasis used by direct optimization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::StationaryModel;
use crate::error::{Error, Result};
use crate::raster::Image;

/// Top `k` eigenvectors (columns, unit norm) and eigenvalues of a symmetric
/// matrix, in decreasing eigenvalue order. Each vector's sign is fixed so its
/// largest-magnitude entry is positive.
pub fn eigenpatches(sigma: &DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = sigma.nrows();
    if sigma.ncols() != n {
        return Err(Error::Dimension(format!(
            "{:?} matrix is not square",
            sigma.shape()
        )));
    }
    if k == 0 || k > n {
        return Err(Error::Config(format!(
            "cannot take {k} eigenvectors of a {n}x{n} matrix"
        )));
    }
    let eig = SymmetricEigen::new(sigma.clone());
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite eigenvalues".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let mut vectors = DMatrix::zeros(n, k);
    let mut values = Vec::with_capacity(k);
    for (j, &i) in order.iter().take(k).enumerate() {
        let mut v: DVector<f64> = eig.eigenvectors.column(i).into_owned();
        v /= v.norm();
        let peak = v
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if peak < 0.0 {
            v = -v;
        }
        vectors.set_column(j, &v);
        values.push(eig.eigenvalues[i]);
    }
    Ok((vectors, values))
}

/// An overcomplete basis of `patch x patch` eigenpatches translated over a
/// `width x height` template at a fixed stride, plus the mean image. Column
/// `j` is eigenpatch `j % k` placed at `placements[j / k]`, zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBasis {
    pub width: usize,
    pub height: usize,
    pub patch: usize,
    /// `patch^2 x k`, orthonormal columns.
    pub patches: DMatrix<f64>,
    /// Square roots of the eigenvalues: the natural scale of each
    /// coefficient.
    pub scales: Vec<f64>,
    /// Top-left pixel of every placement.
    pub placements: Vec<(usize, usize)>,
    pub mean: f64,
}

impl ImageBasis {
    pub fn dim(&self) -> usize {
        self.width * self.height
    }

    pub fn per_placement(&self) -> usize {
        self.patches.ncols()
    }

    pub fn count(&self) -> usize {
        self.per_placement() * self.placements.len()
    }

    /// Natural scale of coefficient `j`.
    pub fn scale(&self, j: usize) -> f64 {
        self.scales[j % self.per_placement()]
    }

    /// Column `j` as a dense `dim`-vector.
    pub fn column(&self, j: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.add_column(j, 1.0, out.as_mut_slice());
        out
    }

    /// `target += coeff * column(j)` for a row-major `width x height` buffer.
    pub fn add_column(&self, j: usize, coeff: f64, target: &mut [f64]) {
        let k = self.per_placement();
        let (x0, y0) = self.placements[j / k];
        let patch = self.patches.column(j % k);
        for py in 0..self.patch {
            let row = (y0 + py) * self.width + x0;
            for px in 0..self.patch {
                target[row + px] += coeff * patch[py * self.patch + px];
            }
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim(), self.count());
        for j in 0..self.count() {
            m.set_column(j, &self.column(j));
        }
        m
    }

    /// `mean + U rho` as an image.
    pub fn synthesize(&self, rho: &[f64]) -> Result<Image> {
        if rho.len() != self.count() {
            return Err(Error::Dimension(format!(
                "{} coefficients for a {}-vector basis",
                rho.len(),
                self.count()
            )));
        }
        let mut data = vec![self.mean; self.dim()];
        for (j, &c) in rho.iter().enumerate() {
            if c != 0.0 {
                self.add_column(j, c, &mut data);
            }
        }
        Image::new(self.width, self.height, 1, data)
    }
}

/// Covariance of a `patch x patch` pixel block under the stationary model.
pub fn patch_covariance(model: &StationaryModel, patch: usize) -> Result<DMatrix<f64>> {
    if patch == 0 || patch > model.pixel_radius + 1 {
        return Err(Error::Geometry(format!(
            "{patch}-pixel patches exceed the model's pixel radius {}",
            model.pixel_radius
        )));
    }
    let n = patch * patch;
    Ok(DMatrix::from_fn(n, n, |p, q| {
        let (px, py) = ((p % patch) as i64, (p / patch) as i64);
        let (qx, qy) = ((q % patch) as i64, (q / patch) as i64);
        model.pp(qx - px, qy - py)
    }))
}

/// Basis from the top `k_per_scale` eigenpatches of the stationary pixel
/// covariance, translated at every `stride`-pixel offset that keeps the patch
/// inside the `template` raster `(width, height)`.
pub fn image_eigenbasis(
    model: &StationaryModel,
    patch_pixels: usize,
    k_per_scale: usize,
    template: (usize, usize),
    stride: usize,
) -> Result<ImageBasis> {
    let (width, height) = template;
    if patch_pixels > width || patch_pixels > height {
        return Err(Error::Geometry(format!(
            "{patch_pixels}-pixel patches do not fit a {width}x{height} template"
        )));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    let sigma = patch_covariance(model, patch_pixels)?;
    basis_from_covariance(
        &sigma,
        patch_pixels,
        k_per_scale,
        template,
        stride,
        model.mu_pixel,
    )
}

/// As [`image_eigenbasis`] from an explicit patch covariance.
pub fn basis_from_covariance(
    sigma: &DMatrix<f64>,
    patch_pixels: usize,
    k_per_scale: usize,
    template: (usize, usize),
    stride: usize,
    mean: f64,
) -> Result<ImageBasis> {
    let (width, height) = template;
    let (patches, values) = eigenpatches(sigma, k_per_scale)?;
    let mut placements = vec![];
    for y0 in (0..=height - patch_pixels).step_by(stride) {
        for x0 in (0..=width - patch_pixels).step_by(stride) {
            placements.push((x0, y0));
        }
    }
    Ok(ImageBasis {
        width,
        height,
        patch: patch_pixels,
        patches,
        scales: values.iter().map(|v| v.max(0.0).sqrt()).collect(),
        placements,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_covariance_gives_sorted_indicators() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 3.0, 1.0, 2.0]));
        let (v, values) = eigenpatches(&sigma, 4).unwrap();
        assert_eq!(values, vec![3.0, 2.0, 1.0, 0.5]);
        for (j, &i) in [1usize, 3, 2, 0].iter().enumerate() {
            let mut e = DVector::zeros(4);
            e[i] = 1.0;
            assert!((v.column(j) - e).amax() < 1e-12);
        }
    }

    #[test]
    fn rank_one_covariance_recovers_direction() {
        let u = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let (v, _) = eigenpatches(&(&u * u.transpose()), 1).unwrap();
        let expect = &u / u.norm();
        assert!((v.column(0) - &expect).amax() < 1e-10 || (v.column(0) + &expect).amax() < 1e-10);
    }

    #[test]
    fn columns_are_unit_and_reproduce_translated_patches() {
        let n = 16;
        let sigma = DMatrix::from_fn(n, n, |p, q| {
            let (px, py, qx, qy) = (p % 4, p / 4, q % 4, q / 4);
            let d2 = (px as f64 - qx as f64).powi(2) + (py as f64 - qy as f64).powi(2);
            (-d2 / 3.0).exp()
        });
        let basis = basis_from_covariance(&sigma, 4, 5, (12, 8), 4, 0.25).unwrap();
        assert_eq!(basis.placements.len(), 3 * 2);
        assert_eq!(basis.count(), 30);
        let m = basis.to_matrix();
        for j in 0..basis.count() {
            assert!((m.column(j).norm() - 1.0).abs() < 1e-9);
        }
        // Eigenpatch 2 placed at (8, 4) is exactly column 5 * 5 + 2.
        let mut target = vec![0.0; 96];
        for py in 0..4 {
            for px in 0..4 {
                target[(4 + py) * 12 + 8 + px] = basis.patches[(py * 4 + px, 2)];
            }
        }
        let target = DVector::from_vec(target);
        let residual = &target - &m * (m.transpose() * &target);
        assert_eq!(m.column(27), target);
        assert!(residual.amax() < 1e-12);
        let img = basis.synthesize(&vec![0.0; 30]).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.25));
    }
}
