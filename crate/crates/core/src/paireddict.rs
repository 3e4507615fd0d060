//! Paired dictionaries: coupled image-patch and HOG-patch bases with shared
//! sparse codes. A descriptor is inverted by coding every `P x P`-cell
//! subwindow against the HOG basis `V`, decoding the code with the image
//! basis `U`, and averaging the overlapping pixel predictions.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hog::{compute_hog, HogConfig, HogDescriptor};
use crate::raster::{Image, Inversion};
use crate::source::ImageSource;
use crate::sparse::{learn_dictionary, Dictionary, LearnConfig, SparseCoder};

/// Penalty level treated as zero when coding descriptor patches.
const CODE_TOL: f64 = 1e-10;

/// Root-mean-square value per coordinate of the normalized stacked training
/// vectors. Together with the default L1 budget `0.15 sqrt(dim)` it sets how
/// many atoms a code can afford: at RMS 1 codes reach only ~15% of a
/// sample's norm, which starves reconstructions; 1/8 was chosen on the desk
/// corpus as the best trade-off between quality and training time.
pub const STACKED_RMS: f64 = 0.125;

/// Training parameters for [`train_paired`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairConfig {
    /// Cells per patch side.
    pub patch_cells: usize,
    /// Number of atoms `K`.
    pub atoms: usize,
    /// L1 budget; `None` selects `0.15 * sqrt(stacked dimension)`.
    pub lambda: Option<f64>,
    /// Number of training pairs `N`.
    pub samples: usize,
    /// 1 (grayscale) or 3 (RGB) image channels.
    pub channels: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            patch_cells: 5,
            atoms: 256,
            lambda: None,
            samples: 10_000,
            channels: 1,
            epochs: 20,
            seed: 0,
        }
    }
}

/// Constants mapping raw patches to the stacked training space:
/// `x~ = (x - mean(x)) * pixel_scale` and `h~ = (h - hog_mean) * hog_scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairNormalization {
    /// Average patch mean, added back after decoding.
    pub pixel_offset: f64,
    pub pixel_scale: f64,
    /// Mean HOG patch (length `v.dim`).
    pub hog_mean: Vec<f64>,
    pub hog_scale: f64,
}

/// Coupled bases `U` (image patches) and `V` (HOG patches).
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDictionary {
    u: Dictionary,
    v: Dictionary,
    patch_cells: usize,
    channels: usize,
    lambda: f64,
    hog: HogConfig,
    normalization: PairNormalization,
    /// Per-epoch training objective.
    history: Vec<f64>,
}

/// Default L1 budget for a signal of dimension `dim`.
pub fn default_lambda(dim: usize) -> f64 {
    0.15 * (dim as f64).sqrt()
}

impl PairedDictionary {
    /// Assemble a model from its parts, checking that all shapes agree.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        u: Dictionary,
        v: Dictionary,
        patch_cells: usize,
        channels: usize,
        lambda: f64,
        hog: HogConfig,
        normalization: PairNormalization,
        history: Vec<f64>,
    ) -> Result<Self> {
        hog.validate()?;
        if channels != 1 && channels != 3 {
            return Err(Error::Config(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if patch_cells == 0 {
            return Err(Error::Config("patch_cells must be positive".into()));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        let side = patch_cells * hog.cell_size;
        let image_dim = side * side * channels;
        let hog_dim = patch_cells * patch_cells * hog.depth();
        if u.dim() != image_dim || v.dim() != hog_dim || u.atoms() != v.atoms() {
            return Err(Error::Dimension(format!(
                "paired dictionary shapes u {}x{}, v {}x{} do not match {image_dim} / {hog_dim}",
                u.dim(),
                u.atoms(),
                v.dim(),
                v.atoms()
            )));
        }
        if normalization.hog_mean.len() != hog_dim {
            return Err(Error::Dimension(format!(
                "HOG mean has {} values, expected {hog_dim}",
                normalization.hog_mean.len()
            )));
        }
        let n = &normalization;
        if !(n.pixel_scale > 0.0 && n.hog_scale > 0.0)
            || !n.pixel_offset.is_finite()
            || n.hog_mean.iter().any(|v| !v.is_finite())
        {
            return Err(Error::Numerical(
                "invalid paired normalization constants".into(),
            ));
        }
        Ok(Self {
            u,
            v,
            patch_cells,
            channels,
            lambda,
            hog,
            normalization,
            history,
        })
    }

    pub fn u(&self) -> &Dictionary {
        &self.u
    }

    pub fn v(&self) -> &Dictionary {
        &self.v
    }

    pub fn patch_cells(&self) -> usize {
        self.patch_cells
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn hog_config(&self) -> &HogConfig {
        &self.hog
    }

    pub fn normalization(&self) -> &PairNormalization {
        &self.normalization
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Side of an image patch in pixels.
    pub fn patch_pixels(&self) -> usize {
        self.patch_cells * self.hog.cell_size
    }

    /// Map a raw HOG patch into the normalized coding space.
    pub fn normalize_hog(&self, y_patch: &[f64]) -> Vec<f64> {
        let n = &self.normalization;
        y_patch
            .iter()
            .zip(&n.hog_mean)
            .map(|(y, m)| (y - m) * n.hog_scale)
            .collect()
    }

    /// Map a normalized image-space vector back to raw pixel values.
    pub fn denormalize_pixels(&self, x: &DVector<f64>) -> Vec<f64> {
        let n = &self.normalization;
        x.iter()
            .map(|v| v / n.pixel_scale + n.pixel_offset)
            .collect()
    }

    fn code_patch(&self, coder: &SparseCoder<'_>, y_patch: &[f64]) -> Result<Vec<f64>> {
        if y_patch.len() != self.v.dim() {
            return Err(Error::Dimension(format!(
                "HOG patch has {} values, dictionary expects {}",
                y_patch.len(),
                self.v.dim()
            )));
        }
        let code = coder.code(&self.normalize_hog(y_patch), self.lambda, CODE_TOL)?;
        Ok(self.denormalize_pixels(&self.u.reconstruct(&code.coefficients)))
    }

    /// Invert one raw HOG patch (`v.dim` values) to a raw image patch of
    /// `patch_pixels()^2 * channels` values, row-major with interleaved
    /// channels.
    pub fn invert_patch(&self, y_patch: &[f64]) -> Result<Vec<f64>> {
        self.code_patch(&SparseCoder::new(&self.v), y_patch)
    }

    /// Invert a descriptor of at least `P x P` cells by patchwork: every
    /// subwindow at a stride of one cell is inverted, pixel predictions are
    /// averaged by coverage, and the uncovered one-cell border copies the
    /// nearest covered pixel.
    pub fn invert(&self, y: &HogDescriptor) -> Result<Inversion> {
        let p = self.patch_cells;
        if y.depth != self.hog.depth() || y.cell_size != self.hog.cell_size {
            return Err(Error::Dimension(format!(
                "descriptor depth {} / cell size {} does not match the model's {} / {}",
                y.depth,
                y.cell_size,
                self.hog.depth(),
                self.hog.cell_size
            )));
        }
        if y.cells_x < p || y.cells_y < p {
            return Err(Error::Dimension(format!(
                "{}x{}-cell descriptor is smaller than one {p}x{p} patch",
                y.cells_x, y.cells_y
            )));
        }
        let nx = y.cells_x - p + 1;
        let ny = y.cells_y - p + 1;
        let coder = SparseCoder::new(&self.v);
        // Windows are inverted in parallel but accumulated in a fixed order,
        // so the result is bit-identical for any worker count.
        let patches: Vec<Result<Vec<f64>>> = (0..nx * ny)
            .into_par_iter()
            .map(|w| {
                let window = y.window(w / nx, w % nx, p, p)?;
                self.code_patch(&coder, window.data())
            })
            .collect();
        let patches = patches.into_iter().collect::<Result<Vec<_>>>()?;
        let (out_w, out_h) = y.pixel_geometry();
        assemble(
            &patches,
            nx,
            ny,
            self.hog.cell_size,
            self.patch_pixels(),
            self.channels,
            out_w,
            out_h,
        )
        .map(Inversion::new)
    }
}

/// Average `patches` (row-major over an `nx x ny` grid of window origins)
/// into an `out_w x out_h` raster. Window `(wx, wy)` covers pixels starting
/// at `((wx + 1) s, (wy + 1) s)`; pixels no window covers take the value of
/// the nearest covered pixel.
#[allow(clippy::too_many_arguments)]
pub fn assemble(
    patches: &[Vec<f64>],
    nx: usize,
    ny: usize,
    s: usize,
    side: usize,
    channels: usize,
    out_w: usize,
    out_h: usize,
) -> Result<Image> {
    if patches.len() != nx * ny || nx == 0 || ny == 0 {
        return Err(Error::Dimension(format!(
            "{} patches for a {nx}x{ny} grid",
            patches.len()
        )));
    }
    let (x_end, y_end) = ((nx - 1) * s + s + side, (ny - 1) * s + s + side);
    if x_end > out_w || y_end > out_h {
        return Err(Error::Geometry(format!(
            "patch grid needs {x_end}x{y_end} pixels, raster is {out_w}x{out_h}"
        )));
    }
    let mut sum = vec![0.0; out_w * out_h * channels];
    let mut count = vec![0u32; out_w * out_h];
    for (w, patch) in patches.iter().enumerate() {
        if patch.len() != side * side * channels {
            return Err(Error::Dimension(format!(
                "patch {w} has {} values",
                patch.len()
            )));
        }
        let (x0, y0) = ((w % nx + 1) * s, (w / nx + 1) * s);
        for py in 0..side {
            for px in 0..side {
                let o = (y0 + py) * out_w + x0 + px;
                count[o] += 1;
                for c in 0..channels {
                    sum[o * channels + c] += patch[(py * side + px) * channels + c];
                }
            }
        }
    }
    let mut out = Image::zeros(out_w, out_h, channels);
    for y in 0..out_h {
        for x in 0..out_w {
            let sx = x.clamp(s, x_end - 1);
            let sy = y.clamp(s, y_end - 1);
            let o = sy * out_w + sx;
            for c in 0..channels {
                out.set(x, y, c, sum[o * channels + c] / count[o] as f64);
            }
        }
    }
    Ok(out)
}

/// Number of windows covering each pixel of the patchwork raster.
pub fn coverage_counts(cells_x: usize, cells_y: usize, patch_cells: usize, s: usize) -> Vec<u32> {
    let (out_w, out_h) = ((cells_x + 2) * s, (cells_y + 2) * s);
    let mut count = vec![0u32; out_w * out_h];
    if cells_x < patch_cells || cells_y < patch_cells {
        return count;
    }
    let side = patch_cells * s;
    for wy in 0..=cells_y - patch_cells {
        for wx in 0..=cells_x - patch_cells {
            for py in 0..side {
                for px in 0..side {
                    count[((wy + 1) * s + py) * out_w + (wx + 1) * s + px] += 1;
                }
            }
        }
    }
    count
}

/// The interior image patch under the `P x P` cells starting at cell
/// `(cx, cy)`, with `channels` channels (grayscale sources are replicated,
/// colour sources reduced to luminance as needed).
pub fn image_patch(
    img: &Image,
    cx: usize,
    cy: usize,
    patch_cells: usize,
    s: usize,
    channels: usize,
) -> Vec<f64> {
    let side = patch_cells * s;
    let (x0, y0) = ((cx + 1) * s, (cy + 1) * s);
    let mut out = Vec::with_capacity(side * side * channels);
    for py in 0..side {
        for px in 0..side {
            let (x, y) = (x0 + px, y0 + py);
            if channels == 1 && img.channels() == 3 {
                let l = crate::raster::LUMA_WEIGHTS;
                out.push(
                    l[0] * img.get(x, y, 0) + l[1] * img.get(x, y, 1) + l[2] * img.get(x, y, 2),
                );
            } else {
                for c in 0..channels {
                    out.push(img.get(x, y, c.min(img.channels() - 1)));
                }
            }
        }
    }
    out
}

/// Number of patch windows in an image of the given size.
fn window_count(width: usize, height: usize, hog: &HogConfig, p: usize) -> (usize, usize) {
    let s = hog.cell_size;
    let cx = (width / s).saturating_sub(2);
    let cy = (height / s).saturating_sub(2);
    if cx < p || cy < p {
        (0, 0)
    } else {
        (cx - p + 1, cy - p + 1)
    }
}

/// Train a paired dictionary from `config.samples` aligned
/// (image patch, HOG patch) pairs drawn uniformly over all windows of the
/// corpus. HOG is computed on luminance in both grayscale and colour mode.
pub fn train_paired<S: ImageSource + ?Sized>(
    corpus: &S,
    hog: &HogConfig,
    config: &PairConfig,
) -> Result<PairedDictionary> {
    hog.validate()?;
    let p = config.patch_cells;
    if p == 0 || config.atoms == 0 || config.samples == 0 {
        return Err(Error::Config(
            "patch_cells, atoms and samples must be positive".into(),
        ));
    }
    if config.channels != 1 && config.channels != 3 {
        return Err(Error::Config(format!(
            "channels must be 1 or 3, got {}",
            config.channels
        )));
    }
    let s = hog.cell_size;
    let side = p * s;
    let image_dim = side * side * config.channels;
    let hog_dim = p * p * hog.depth();
    let lambda = config
        .lambda
        .unwrap_or_else(|| default_lambda(image_dim + hog_dim));

    // Pass 1: window counts per image.
    let sizes: Vec<Result<(usize, usize)>> = (0..corpus.len())
        .into_par_iter()
        .map(|i| {
            corpus
                .load(i)
                .map(|img| window_count(img.width(), img.height(), hog, p))
        })
        .collect();
    let sizes = sizes.into_iter().collect::<Result<Vec<_>>>()?;
    let mut offsets = Vec::with_capacity(sizes.len() + 1);
    let mut total = 0usize;
    for &(nx, ny) in &sizes {
        offsets.push(total);
        total += nx * ny;
    }
    offsets.push(total);
    if total == 0 {
        return Err(Error::EmptyCorpus(format!(
            "no image holds a {p}x{p}-cell patch"
        )));
    }

    // Uniform draws over all windows; column order is draw order.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut per_image: Vec<Vec<(usize, usize)>> = vec![Vec::new(); sizes.len()];
    for col in 0..config.samples {
        let g = rng.random_range(0..total);
        let img = offsets.partition_point(|&o| o <= g) - 1;
        per_image[img].push((col, g - offsets[img]));
    }

    // Pass 2: extract pairs image by image.
    let extracted: Vec<Result<Vec<(usize, Vec<f64>, Vec<f64>)>>> = per_image
        .par_iter()
        .enumerate()
        .map(|(i, picks)| {
            if picks.is_empty() {
                return Ok(Vec::new());
            }
            let img = corpus.load(i)?;
            let desc = compute_hog(&img.to_luminance(), hog)?;
            let nx = sizes[i].0;
            picks
                .iter()
                .map(|&(col, w)| {
                    let (cx, cy) = (w % nx, w / nx);
                    let pix = image_patch(&img, cx, cy, p, s, config.channels);
                    let h = desc.window(cy, cx, p, p)?.data().to_vec();
                    Ok((col, pix, h))
                })
                .collect()
        })
        .collect();

    let n = config.samples;
    let mut pixels = DMatrix::<f64>::zeros(image_dim, n);
    let mut hogs = DMatrix::<f64>::zeros(hog_dim, n);
    let mut offset_sum = 0.0;
    for part in extracted {
        for (col, mut pix, h) in part? {
            let m = pix.iter().sum::<f64>() / pix.len() as f64;
            offset_sum += m;
            pix.iter_mut().for_each(|v| *v -= m);
            pixels.column_mut(col).copy_from_slice(&pix);
            hogs.column_mut(col).copy_from_slice(&h);
        }
    }
    let hog_mean: Vec<f64> = hogs.column_mean().iter().copied().collect();
    for mut c in hogs.column_iter_mut() {
        for (v, m) in c.iter_mut().zip(&hog_mean) {
            *v -= m;
        }
    }
    // Balance the parts: each contributes half of the stacked expected
    // squared norm, with per-coordinate RMS `STACKED_RMS` overall.
    let half = (image_dim + hog_dim) as f64 / 2.0 * STACKED_RMS * STACKED_RMS;
    let px_energy = pixels.norm_squared() / n as f64;
    let hog_energy = hogs.norm_squared() / n as f64;
    if !(px_energy > 0.0) || !(hog_energy > 0.0) {
        return Err(Error::Numerical("training patches have no variance".into()));
    }
    let normalization = PairNormalization {
        pixel_offset: offset_sum / n as f64,
        pixel_scale: (half / px_energy).sqrt(),
        hog_mean,
        hog_scale: (half / hog_energy).sqrt(),
    };
    let mut stacked = DMatrix::<f64>::zeros(image_dim + hog_dim, n);
    stacked
        .view_mut((0, 0), (image_dim, n))
        .copy_from(&(pixels * normalization.pixel_scale));
    stacked
        .view_mut((image_dim, 0), (hog_dim, n))
        .copy_from(&(hogs * normalization.hog_scale));
    log::info!(
        "training paired dictionary: {n} pairs of {image_dim}+{hog_dim} values, K={}, lambda={lambda:.4}",
        config.atoms
    );

    let learned = learn_dictionary(
        &stacked,
        &LearnConfig {
            atoms: config.atoms,
            lambda,
            epochs: config.epochs,
            seed: config.seed,
        },
    )?;
    drop(stacked);
    let d = learned.dictionary.into_matrix();
    let u = Dictionary::new(d.rows(0, image_dim).into_owned())?;
    let v = Dictionary::new(d.rows(image_dim, hog_dim).into_owned())?;
    PairedDictionary::from_parts(
        u,
        v,
        p,
        config.channels,
        lambda,
        *hog,
        normalization,
        learned.history,
    )
}
