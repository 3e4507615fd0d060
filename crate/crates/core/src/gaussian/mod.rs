//! The stationary joint Gaussian over pixels and HOG features.
//!
//! Under stationarity the covariance between two pixels, a pixel and a HOG
//! channel, or two HOG cells depends only on their relative offset, so the
//! model stores offset-indexed autocovariances estimated over every position
//! of every corpus image. [`materialize`] expands them into dense blocks for a
//! concrete template geometry, [`ridge`] computes the conditional mode, and
//! [`eigenbasis`] builds the translated natural-image basis.

pub mod eigenbasis;
pub mod materialize;
pub mod ridge;

pub use eigenbasis::{
    basis_from_covariance, eigenpatches, image_eigenbasis, patch_covariance, ImageBasis,
};
pub use materialize::{materialize, materialize_conditional, MaterializedGaussian, Prior};
pub use ridge::{ridge_invert, RidgeInverter};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::{fast_len, Fft2};
use crate::hog::{compute_hog, HogConfig};
use crate::raster::Image;
use crate::source::ImageSource;

/// Pixels are centred on this value before products are accumulated, which
/// keeps the raw second moments small relative to the covariances.
const PIXEL_SHIFT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryConfig {
    /// Largest template side (in cells) the estimated radii support.
    pub canonical_cells: usize,
    /// Images with a side longer than this are randomly cropped to it.
    pub max_side: usize,
}

impl Default for StationaryConfig {
    fn default() -> Self {
        Self {
            canonical_cells: 10,
            max_side: 512,
        }
    }
}

/// Offset-indexed first and second moments of the joint pixel/HOG process.
///
/// Offsets: `pp(dx, dy)` for `|dx|, |dy| <= pixel_radius`; `ph(dx, dy, k)` is
/// the covariance of the pixel at `anchor + (dx, dy)` with channel `k` of the
/// cell whose anchor (top-left pixel of its histogram block) is `anchor`,
/// for `|dx|, |dy| <= anchor_radius`; `hh(dx, dy, k, l)` is the covariance of
/// channel `k` at cell `c` with channel `l` at cell `c + (dx, dy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryModel {
    pub hog: HogConfig,
    pub canonical_cells: usize,
    pub mu_pixel: f64,
    pub mu_hog: Vec<f64>,
    pub pixel_radius: usize,
    pub anchor_radius: usize,
    pub cell_radius: usize,
    pub sample_count: u64,
    pp: Vec<f64>,
    ph: Vec<f64>,
    hh: Vec<f64>,
}

impl StationaryModel {
    pub fn radii_for(hog: &HogConfig, canonical_cells: usize) -> (usize, usize, usize) {
        let s = hog.cell_size;
        (
            (canonical_cells + 2) * s - 1,
            (canonical_cells + 1) * s,
            canonical_cells - 1,
        )
    }

    /// Assemble a model from raw offset tables (layouts as documented on the
    /// accessors). Used by deserialization and by synthetic tests.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        hog: HogConfig,
        canonical_cells: usize,
        mu_pixel: f64,
        mu_hog: Vec<f64>,
        pp: Vec<f64>,
        ph: Vec<f64>,
        hh: Vec<f64>,
        sample_count: u64,
    ) -> Result<Self> {
        hog.validate()?;
        if canonical_cells == 0 {
            return Err(Error::Config("canonical_cells must be positive".into()));
        }
        let depth = hog.depth();
        let (rp, rph, rc) = Self::radii_for(&hog, canonical_cells);
        let side = |r: usize| (2 * r + 1) * (2 * r + 1);
        let expect = [
            ("mu_hog", mu_hog.len(), depth),
            ("pp", pp.len(), side(rp)),
            ("ph", ph.len(), side(rph) * depth),
            ("hh", hh.len(), side(rc) * depth * depth),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::Dimension(format!(
                    "{name} table has {got} values, expected {want}"
                )));
            }
        }
        if sample_count == 0 {
            return Err(Error::EmptyCorpus("model has no samples".into()));
        }
        Ok(Self {
            hog,
            canonical_cells,
            mu_pixel,
            mu_hog,
            pixel_radius: rp,
            anchor_radius: rph,
            cell_radius: rc,
            sample_count,
            pp,
            ph,
            hh,
        })
    }

    pub fn depth(&self) -> usize {
        self.hog.depth()
    }

    pub fn pp_table(&self) -> &[f64] {
        &self.pp
    }

    pub fn ph_table(&self) -> &[f64] {
        &self.ph
    }

    pub fn hh_table(&self) -> &[f64] {
        &self.hh
    }

    #[inline]
    fn offset_index(dx: i64, dy: i64, r: usize) -> usize {
        let r = r as i64;
        debug_assert!(dx.abs() <= r && dy.abs() <= r);
        ((dy + r) * (2 * r + 1) + dx + r) as usize
    }

    #[inline]
    pub fn pp(&self, dx: i64, dy: i64) -> f64 {
        self.pp[Self::offset_index(dx, dy, self.pixel_radius)]
    }

    #[inline]
    pub fn ph(&self, dx: i64, dy: i64, k: usize) -> f64 {
        self.ph[Self::offset_index(dx, dy, self.anchor_radius) * self.depth() + k]
    }

    /// The `depth x depth` block for cell offset `(dx, dy)`, row `k` = channel
    /// at the first cell.
    #[inline]
    pub fn hh_block(&self, dx: i64, dy: i64) -> &[f64] {
        let d = self.depth();
        let start = Self::offset_index(dx, dy, self.cell_radius) * d * d;
        &self.hh[start..start + d * d]
    }

    #[inline]
    pub fn hh(&self, dx: i64, dy: i64, k: usize, l: usize) -> f64 {
        self.hh_block(dx, dy)[k * self.depth() + l]
    }
}

/// First moments from one image (or a merge of several).
#[derive(Default)]
struct Means {
    pixels: f64,
    pixel_sum: f64,
    cells: f64,
    hog_sum: Vec<f64>,
    samples: u64,
}

impl Means {
    fn add(&mut self, other: &Means) {
        self.pixels += other.pixels;
        self.pixel_sum += other.pixel_sum;
        self.cells += other.cells;
        if self.hog_sum.is_empty() {
            self.hog_sum = vec![0.0; other.hog_sum.len()];
        }
        self.hog_sum
            .iter_mut()
            .zip(&other.hog_sum)
            .for_each(|(a, b)| *a += b);
        self.samples += other.samples;
    }
}

/// Raw centred product sums from one image (or a merge of several).
struct Products {
    pp: Vec<f64>,
    ph: Vec<f64>,
    hh: Vec<f64>,
}

impl Products {
    fn zeros(depth: usize, rp: usize, rph: usize, rc: usize) -> Self {
        let side = |r: usize| (2 * r + 1) * (2 * r + 1);
        Self {
            pp: vec![0.0; side(rp)],
            ph: vec![0.0; side(rph) * depth],
            hh: vec![0.0; side(rc) * depth * depth],
        }
    }

    fn add(&mut self, other: &Products) {
        fn acc(a: &mut [f64], b: &[f64]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        acc(&mut self.pp, &other.pp);
        acc(&mut self.ph, &other.ph);
        acc(&mut self.hh, &other.hh);
    }
}

/// The pixel raster (cropped to whole histogram blocks) and descriptor of
/// one corpus image.
struct Prepared {
    pixels: Vec<f64>,
    width: usize,
    height: usize,
    descriptor: crate::hog::HogDescriptor,
}

fn prepare(image: &Image, hog: &HogConfig) -> Result<Prepared> {
    let descriptor = compute_hog(image, hog)?;
    let s = hog.cell_size;
    let (width, height) = ((descriptor.cells_x + 2) * s, (descriptor.cells_y + 2) * s);
    let pixels = (0..height)
        .flat_map(|y| (0..width).map(move |x| (y, x)))
        .map(|(y, x)| image.get(x, y, 0) - PIXEL_SHIFT)
        .collect();
    Ok(Prepared {
        pixels,
        width,
        height,
        descriptor,
    })
}

fn image_means(p: &Prepared, canonical: usize) -> Means {
    let d = &p.descriptor;
    let mut hog_sum = vec![0.0; d.depth];
    for cell in d.data().chunks_exact(d.depth) {
        hog_sum.iter_mut().zip(cell).for_each(|(a, v)| *a += v);
    }
    Means {
        pixels: p.pixels.len() as f64,
        pixel_sum: p.pixels.iter().sum(),
        cells: (d.cells_x * d.cells_y) as f64,
        hog_sum,
        samples: ((d.cells_x + 1).saturating_sub(canonical)
            * (d.cells_y + 1).saturating_sub(canonical)) as u64,
    }
}

/// Sums of products of the mean-centred pixel and HOG processes at every
/// offset, over all pairs inside the image.
fn image_products(
    p: &Prepared,
    s: usize,
    mu_p: f64,
    mu_h: &[f64],
    radii: (usize, usize, usize),
) -> Products {
    let (rp, rph, rc) = radii;
    let d = &p.descriptor;
    let depth = d.depth;
    let (w, h, cx, cy) = (p.width, p.height, d.cells_x, d.cells_y);
    let mut out = Products::zeros(depth, rp, rph, rc);
    let pixels: Vec<f64> = p.pixels.iter().map(|v| v - mu_p).collect();

    // Pixel/pixel and pixel/HOG products share one transform size.
    let plan = Fft2::new(fast_len(w + rp.max(rph)), fast_len(h + rp.max(rph)));
    let pixel_spectrum = plan.forward(&pixels, w, h);
    out.pp = plan.cross_correlate(&pixel_spectrum, &pixel_spectrum, rp, rp);

    // HOG values placed at their cell anchors, (c + 1) * s.
    let mut upsampled = vec![0.0; w * h];
    for k in 0..depth {
        for y in 0..cy {
            for x in 0..cx {
                upsampled[(y + 1) * s * w + (x + 1) * s] = d.get(y, x, k) - mu_h[k];
            }
        }
        let spectrum = plan.forward(&upsampled, w, h);
        let corr = plan.cross_correlate(&spectrum, &pixel_spectrum, rph, rph);
        for (o, v) in corr.into_iter().enumerate() {
            out.ph[o * depth + k] = v;
        }
    }

    let cell_plan = Fft2::new(fast_len(cx + rc), fast_len(cy + rc));
    let channel_spectra: Vec<_> = (0..depth)
        .map(|k| {
            let plane: Vec<f64> = (0..cy)
                .flat_map(|y| (0..cx).map(move |x| (y, x)))
                .map(|(y, x)| d.get(y, x, k) - mu_h[k])
                .collect();
            cell_plan.forward(&plane, cx, cy)
        })
        .collect();
    for k in 0..depth {
        for l in k..depth {
            let corr = cell_plan.cross_correlate(&channel_spectra[k], &channel_spectra[l], rc, rc);
            let n_off = corr.len();
            for (o, v) in corr.into_iter().enumerate() {
                out.hh[(o * depth + k) * depth + l] = v;
                if l != k {
                    // hh(-d)[l][k] equals hh(d)[k][l].
                    out.hh[((n_off - 1 - o) * depth + l) * depth + k] = v;
                }
            }
        }
    }
    out
}

/// Estimate the stationary model from every position of every image.
///
/// Colour images are converted to luminance. Images whose side exceeds
/// `config.max_side` are cropped to a window chosen by `seed`; images too
/// small for one canonical template are skipped.
///
/// Covariances use the total-count normalization: the sum of centred
/// products at offset `d` is divided by the number of samples at offset 0,
/// not by the number of pairs at `d`. Long offsets are therefore shrunk by
/// the overlap fraction, but every materialized block is positive
/// semidefinite, which the per-offset normalization does not guarantee on
/// small corpora.
pub fn fit_stationary<S: ImageSource + ?Sized>(
    corpus: &S,
    hog: &HogConfig,
    config: &StationaryConfig,
    seed: u64,
) -> Result<StationaryModel> {
    hog.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus(
            "no images to estimate statistics from".into(),
        ));
    }
    let canonical = config.canonical_cells;
    if canonical == 0 {
        return Err(Error::Config("canonical_cells must be positive".into()));
    }
    let s = hog.cell_size;
    let min_side = (canonical + 2) * s;
    if config.max_side < min_side {
        return Err(Error::Config(format!(
            "max_side {} is smaller than one {canonical}-cell template ({min_side} pixels)",
            config.max_side
        )));
    }
    let radii = StationaryModel::radii_for(hog, canonical);
    let depth = hog.depth();

    let load = |index: usize| -> Result<Option<Prepared>> {
        let image = corpus.load(index)?.to_luminance();
        if image.width() < min_side || image.height() < min_side {
            log::warn!(
                "skipping {}: {}x{} is smaller than a {canonical}-cell template",
                corpus.label(index),
                image.width(),
                image.height()
            );
            return Ok(None);
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let cw = image.width().min(config.max_side);
        let ch = image.height().min(config.max_side);
        let x0 = rng.random_range(0..=image.width() - cw);
        let y0 = rng.random_range(0..=image.height() - ch);
        let image = if (cw, ch) == (image.width(), image.height()) {
            image
        } else {
            image.crop(x0, y0, cw, ch)?
        };
        prepare(&image, hog).map(Some)
    };

    // Per-image sums are computed in parallel but merged in corpus order so
    // the result does not depend on the worker count. The first pass finds
    // the global means used to centre the second.
    let indices: Vec<usize> = (0..corpus.len()).collect();
    let chunk = rayon::current_num_threads().max(1) * 2;
    let mut means = Means::default();
    for batch in indices.chunks(chunk) {
        let parts: Vec<Result<Option<Means>>> = batch
            .par_iter()
            .map(|&i| Ok(load(i)?.map(|p| image_means(&p, canonical))))
            .collect();
        for part in parts {
            if let Some(m) = part? {
                means.add(&m);
            }
        }
    }
    if means.samples == 0 {
        return Err(Error::EmptyCorpus(format!(
            "no image is at least {min_side}x{min_side} pixels"
        )));
    }
    let mu_p = means.pixel_sum / means.pixels;
    let mu_h: Vec<f64> = means.hog_sum.iter().map(|v| v / means.cells).collect();

    let mut total = Products::zeros(depth, radii.0, radii.1, radii.2);
    for batch in indices.chunks(chunk) {
        let parts: Vec<Result<Option<Products>>> = batch
            .par_iter()
            .map(|&i| Ok(load(i)?.map(|p| image_products(&p, s, mu_p, &mu_h, radii))))
            .collect();
        for part in parts {
            if let Some(p) = part? {
                total.add(&p);
            }
        }
    }

    let mut pp: Vec<f64> = total.pp.iter().map(|v| v / means.pixels).collect();
    let ph: Vec<f64> = total.ph.iter().map(|v| v / means.cells).collect();
    let mut hh: Vec<f64> = total.hh.iter().map(|v| v / means.cells).collect();

    // Enforce pp(d) = pp(-d) and hh(d) = hh(-d)^T exactly.
    let n_pp = pp.len();
    for o in 0..n_pp / 2 {
        let avg = 0.5 * (pp[o] + pp[n_pp - 1 - o]);
        pp[o] = avg;
        pp[n_pp - 1 - o] = avg;
    }
    let n_hh = hh.len() / (depth * depth);
    for o in 0..=n_hh / 2 {
        let m = n_hh - 1 - o;
        for k in 0..depth {
            for l in 0..depth {
                let (a, b) = ((o * depth + k) * depth + l, (m * depth + l) * depth + k);
                if a < b {
                    let avg = 0.5 * (hh[a] + hh[b]);
                    hh[a] = avg;
                    hh[b] = avg;
                }
            }
        }
    }

    StationaryModel::from_parts(
        *hog,
        canonical,
        mu_p + PIXEL_SHIFT,
        mu_h,
        pp,
        ph,
        hh,
        means.samples,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::MemorySource;
    use rand_distr::{Distribution, Uniform};

    fn small() -> StationaryConfig {
        StationaryConfig {
            canonical_cells: 3,
            max_side: 512,
        }
    }

    #[test]
    fn constant_corpus_has_zero_covariance() {
        let corpus = MemorySource::new(vec![Image::filled(64, 56, 1, 0.5); 3]);
        let m = fit_stationary(&corpus, &HogConfig::default(), &small(), 0).unwrap();
        assert_eq!(m.mu_pixel, 0.5);
        assert!(m.mu_hog.iter().all(|&v| v == 0.0));
        assert!(m.pp_table().iter().all(|&v| v == 0.0));
        assert!(m.ph_table().iter().all(|&v| v == 0.0));
        assert!(m.hh_table().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sample_count_is_number_of_template_positions() {
        // 64x56 pixels -> 8x7 blocks -> 6x5 cells; 3-cell windows: 4 x 3.
        let corpus = MemorySource::new(vec![Image::from_fn(64, 56, |x, y| {
            ((x * y) % 7) as f64 / 7.0
        })]);
        let m = fit_stationary(&corpus, &HogConfig::default(), &small(), 0).unwrap();
        assert_eq!(m.sample_count, 12);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let corpus = MemorySource::new(vec![]);
        let err = fit_stationary(&corpus, &HogConfig::default(), &small(), 0).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus(_)));
        let tiny = MemorySource::new(vec![Image::filled(30, 30, 1, 0.1)]);
        let err = fit_stationary(&tiny, &HogConfig::default(), &small(), 0).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus(_)));
    }

    #[test]
    fn uniform_noise_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dist = Uniform::new(0.0, 1.0).unwrap();
        let images: Vec<Image> = (0..4)
            .map(|_| Image::from_fn(512, 512, |_, _| dist.sample(&mut rng)))
            .collect();
        let corpus = MemorySource::new(images);
        let m = fit_stationary(&corpus, &HogConfig::default(), &small(), 0).unwrap();
        // Standard error of a product average of ~1e6 independent terms.
        let n: f64 = 4.0 * 512.0 * 512.0;
        let se0 = (1.0f64 / 180.0).sqrt() / n.sqrt(); // Var[(u-1/2)^2] = 1/180
        let se1 = (1.0f64 / 144.0).sqrt() / n.sqrt(); // Var[(u-1/2)(v-1/2)] = 1/144
        assert!(
            (m.pp(0, 0) - 1.0 / 12.0).abs() < 3.0 * se0,
            "{}",
            m.pp(0, 0)
        );
        for (dx, dy) in [(1, 0), (0, 1), (3, -2), (10, 7)] {
            assert!(
                m.pp(dx, dy).abs() < 3.0 * se1,
                "pp({dx},{dy}) = {}",
                m.pp(dx, dy)
            );
        }
        assert!((m.mu_pixel - 0.5).abs() < 3.0 * (1.0f64 / 12.0 / n).sqrt());
    }

    #[test]
    fn symmetry_and_psd_diagonal_block() {
        let images: Vec<Image> = (0..2)
            .map(|i| {
                Image::from_fn(80, 72, |x, y| {
                    (((x + 3 * i) * 7 + y * y) % 23) as f64 / 22.0
                })
            })
            .collect();
        let m = fit_stationary(
            &MemorySource::new(images),
            &HogConfig::default(),
            &small(),
            1,
        )
        .unwrap();
        let r = m.pixel_radius as i64;
        for dy in -r..=r {
            for dx in -r..=r {
                assert_eq!(m.pp(dx, dy), m.pp(-dx, -dy));
            }
        }
        let rc = m.cell_radius as i64;
        for dy in -rc..=rc {
            for dx in -rc..=rc {
                for k in 0..31 {
                    for l in 0..31 {
                        assert_eq!(m.hh(dx, dy, k, l), m.hh(-dx, -dy, l, k));
                    }
                }
            }
        }
        let block = nalgebra::DMatrix::from_row_slice(31, 31, m.hh_block(0, 0));
        let eig = nalgebra::SymmetricEigen::new(block);
        assert!(eig.eigenvalues.iter().all(|&v| v > -1e-8));
    }

    #[test]
    fn fft_sums_match_direct_products() {
        let img = Image::from_fn(48, 40, |x, y| ((x * 5 + y * 3) % 11) as f64 / 10.0);
        let hog = HogConfig::default();
        let radii = StationaryModel::radii_for(&hog, 2);
        let prepared = prepare(&img, &hog).unwrap();
        let mu_h: Vec<f64> = (0..31).map(|k| 0.01 * k as f64).collect();
        let mu_p = 0.05;
        let m = image_products(&prepared, 8, mu_p, &mu_h, radii);
        let d = compute_hog(&img, &hog).unwrap();
        let p = |x: i64, y: i64| img.get(x as usize, y as usize, 0) - PIXEL_SHIFT - mu_p;
        let (w, h) = (48i64, 40i64);
        let side = 2 * radii.1 + 1;
        for (dx, dy, k) in [
            (0i64, 0i64, 0usize),
            (-5, 3, 7),
            (12, -9, 30),
            (-20, -20, 18),
        ] {
            let mut expect = 0.0;
            for cy in 0..d.cells_y {
                for cx in 0..d.cells_x {
                    let (ax, ay) = (((cx + 1) * 8) as i64 + dx, ((cy + 1) * 8) as i64 + dy);
                    if ax >= 0 && ay >= 0 && ax < w && ay < h {
                        expect += p(ax, ay) * (d.get(cy, cx, k) - mu_h[k]);
                    }
                }
            }
            let o = (dy + radii.1 as i64) as usize * side + (dx + radii.1 as i64) as usize;
            assert!((m.ph[o * 31 + k] - expect).abs() < 1e-9);
        }
        let rc = radii.2 as i64;
        let mut expect = 0.0;
        for cy in 0..d.cells_y as i64 {
            for cx in 0..d.cells_x as i64 {
                let (u, v) = (cx + 1, cy - 1);
                if u < d.cells_x as i64 && v >= 0 {
                    expect += (d.get(cy as usize, cx as usize, 4) - mu_h[4])
                        * (d.get(v as usize, u as usize, 20) - mu_h[20]);
                }
            }
        }
        let o = ((-1 + rc) * (2 * rc + 1) + 1 + rc) as usize;
        assert!((m.hh[(o * 31 + 4) * 31 + 20] - expect).abs() < 1e-9);
    }
}
