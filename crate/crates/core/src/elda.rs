//! Exemplar-LDA baseline: whiten the descriptor into a linear detector
//! `w = Sigma^-1 (y - mu)`, score it against every sliding window of an image
//! database, and average the top detections.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::MaterializedGaussian;
use crate::hog::{compute_hog, HogConfig, HogDescriptor};
use crate::raster::{Image, Inversion};
use crate::source::ImageSource;

/// Overlap above which a lower-scoring detection of the same image is
/// suppressed.
pub const NMS_IOU: f64 = 0.5;

/// A scored window. `x`, `y` are the window's top-left pixel in the image
/// resized by `scale`; the window spans the template's pixel geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub image_id: usize,
    pub x: usize,
    pub y: usize,
    pub scale: f64,
    pub score: f64,
}

impl Detection {
    /// Rectangle `(x0, y0, x1, y1)` in original image coordinates.
    pub fn original_rect(&self, width: usize, height: usize) -> (f64, f64, f64, f64) {
        (
            self.x as f64 / self.scale,
            self.y as f64 / self.scale,
            (self.x + width) as f64 / self.scale,
            (self.y + height) as f64 / self.scale,
        )
    }

    /// Total order: higher score first, then image, position and larger
    /// scale. `Less` means "ranks before".
    pub fn rank(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.image_id.cmp(&other.image_id))
            .then(self.y.cmp(&other.y))
            .then(self.x.cmp(&other.x))
            .then(other.scale.total_cmp(&self.scale))
    }
}

/// Heap entry ordered so that the worst-ranked detection is on top.
struct Worst(Detection);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Worst {}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank(&other.0)
    }
}

/// A whitened linear detector with the geometry of its descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct EldaTemplate {
    pub weights: HogDescriptor,
}

impl EldaTemplate {
    pub fn cells(&self) -> (usize, usize) {
        (self.weights.cells_x, self.weights.cells_y)
    }

    pub fn pixel_geometry(&self) -> (usize, usize) {
        self.weights.pixel_geometry()
    }
}

/// Solve `sigma_yy w = y - mu_y` by Cholesky and verify the residual.
pub fn make_template(g: &MaterializedGaussian, y: &HogDescriptor) -> Result<EldaTemplate> {
    if (y.cells_x, y.cells_y) != (g.width_cells, g.height_cells)
        || y.depth != g.depth
        || y.cell_size != g.cell_size
    {
        return Err(Error::Dimension(format!(
            "{}x{}x{} descriptor does not match the {}x{}x{} Gaussian",
            y.cells_x, y.cells_y, y.depth, g.width_cells, g.height_cells, g.depth
        )));
    }
    let rhs = DVector::from_column_slice(y.data()) - &g.mu_y;
    let w = g.solve_yy(&rhs);
    let residual = (&g.sigma_yy * &w - &rhs).amax();
    if w.iter().any(|v| !v.is_finite()) || residual > 1e-6 * rhs.amax().max(f64::MIN_POSITIVE) {
        return Err(Error::Numerical(format!(
            "whitening solve left residual {residual:e}"
        )));
    }
    let weights = HogDescriptor::new(
        y.cells_x,
        y.cells_y,
        y.depth,
        y.cell_size,
        w.as_slice().to_vec(),
    )?;
    Ok(EldaTemplate { weights })
}

/// Which pyramid scales to scan.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Scales {
    /// `2^(-i/4)` for `i = 0, 1, ...` while the template still fits.
    #[default]
    Ladder,
    Fixed(Vec<f64>),
}

impl Scales {
    pub fn for_image(&self, width: usize, height: usize, template: (usize, usize)) -> Vec<f64> {
        match self {
            Scales::Fixed(v) => v.clone(),
            Scales::Ladder => {
                let mut out = vec![];
                for i in 0.. {
                    let s = 2f64.powf(-(i as f64) / 4.0);
                    let (w, h) = scaled_size(width, height, s);
                    if w < template.0 || h < template.1 {
                        break;
                    }
                    out.push(s);
                }
                out
            }
        }
    }
}

fn scaled_size(width: usize, height: usize, scale: f64) -> (usize, usize) {
    (
        (width as f64 * scale).round() as usize,
        (height as f64 * scale).round() as usize,
    )
}

/// The image resized by `scale` (identity at 1).
pub fn scaled_image(img: &Image, scale: f64) -> Image {
    if scale == 1.0 {
        return img.clone();
    }
    let (w, h) = scaled_size(img.width(), img.height(), scale);
    img.resize(w, h)
}

/// Score every stride-aligned window of one image at every scale.
fn score_image(
    template: &EldaTemplate,
    img: &Image,
    image_id: usize,
    scales: &Scales,
    stride_cells: usize,
    hog: &HogConfig,
) -> Result<Vec<Detection>> {
    let (tw, th) = template.cells();
    let s = hog.cell_size;
    let lum = img.to_luminance();
    let mut out = vec![];
    for scale in scales.for_image(img.width(), img.height(), template.pixel_geometry()) {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Config(format!("invalid scale {scale}")));
        }
        let scaled = scaled_image(&lum, scale);
        if scaled.width() < template.pixel_geometry().0
            || scaled.height() < template.pixel_geometry().1
        {
            continue;
        }
        let phi = compute_hog(&scaled, hog)?;
        if phi.cells_x < tw || phi.cells_y < th {
            continue;
        }
        for cy in (0..=phi.cells_y - th).step_by(stride_cells) {
            for cx in (0..=phi.cells_x - tw).step_by(stride_cells) {
                let score = window_score(template, &phi, cx, cy);
                out.push(Detection {
                    image_id,
                    x: cx * s,
                    y: cy * s,
                    scale,
                    score,
                });
            }
        }
    }
    Ok(out)
}

/// `w . phi(window)` for the window whose first cell is `(cx, cy)`.
pub fn window_score(template: &EldaTemplate, phi: &HogDescriptor, cx: usize, cy: usize) -> f64 {
    let w = &template.weights;
    let depth = w.depth;
    let mut acc = 0.0;
    for r in 0..w.cells_y {
        let a = &w.data()[r * w.cells_x * depth..(r + 1) * w.cells_x * depth];
        let start = ((cy + r) * phi.cells_x + cx) * depth;
        let b = &phi.data()[start..start + w.cells_x * depth];
        acc += a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    }
    acc
}

fn check_args<S: ImageSource + ?Sized>(
    corpus: &S,
    scales: &Scales,
    stride_cells: usize,
    template: &EldaTemplate,
    hog: &HogConfig,
) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus("ELDA database is empty".into()));
    }
    if stride_cells == 0 {
        return Err(Error::Config("stride must be at least one cell".into()));
    }
    if template.weights.depth != hog.depth() || template.weights.cell_size != hog.cell_size {
        return Err(Error::Dimension(
            "template does not match the HOG configuration".into(),
        ));
    }
    if matches!(scales, Scales::Fixed(v) if v.is_empty()) {
        return Err(Error::Config("no scales given".into()));
    }
    Ok(())
}

/// Every window of every image, in corpus order (the brute-force path).
pub fn sliding_scores<S: ImageSource + ?Sized>(
    template: &EldaTemplate,
    corpus: &S,
    scales: &Scales,
    stride_cells: usize,
    hog: &HogConfig,
) -> Result<Vec<Detection>> {
    check_args(corpus, scales, stride_cells, template, hog)?;
    let mut out = vec![];
    for i in 0..corpus.len() {
        out.extend(score_image(
            template,
            &corpus.load(i)?,
            i,
            scales,
            stride_cells,
            hog,
        )?);
    }
    Ok(out)
}

fn iou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> f64 {
    let iw = (a.2.min(b.2) - a.0.max(b.0)).max(0.0);
    let ih = (a.3.min(b.3) - a.1.max(b.1)).max(0.0);
    let inter = iw * ih;
    let area = |r: (f64, f64, f64, f64)| (r.2 - r.0) * (r.3 - r.1);
    inter / (area(a) + area(b) - inter)
}

/// Greedy non-maximum suppression of one image's detections, keeping at
/// most `limit` in rank order.
pub fn non_max_suppression(
    mut dets: Vec<Detection>,
    window: (usize, usize),
    limit: usize,
) -> Vec<Detection> {
    dets.sort_by(|a, b| a.rank(b));
    let mut kept: Vec<Detection> = vec![];
    for d in dets {
        if kept.len() == limit {
            break;
        }
        let r = d.original_rect(window.0, window.1);
        if kept
            .iter()
            .all(|k| iou(k.original_rect(window.0, window.1), r) <= NMS_IOU)
        {
            kept.push(d);
        }
    }
    kept
}

/// Top-`k` detections after per-image NMS. Images are scored in parallel;
/// each keeps a local list and a bounded heap merges them under the total
/// [`Detection::rank`] order, so the result is independent of scheduling.
pub fn top_detections<S: ImageSource + ?Sized>(
    template: &EldaTemplate,
    corpus: &S,
    scales: &Scales,
    stride_cells: usize,
    k: usize,
    hog: &HogConfig,
) -> Result<Vec<Detection>> {
    check_args(corpus, scales, stride_cells, template, hog)?;
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let window = template.pixel_geometry();
    let per_image: Vec<Result<Vec<Detection>>> = (0..corpus.len())
        .into_par_iter()
        .map(|i| {
            let dets = score_image(template, &corpus.load(i)?, i, scales, stride_cells, hog)?;
            Ok(non_max_suppression(dets, window, k))
        })
        .collect();
    let mut heap: BinaryHeap<Worst> = BinaryHeap::with_capacity(k + 1);
    for part in per_image {
        for d in part? {
            heap.push(Worst(d));
            if heap.len() > k {
                heap.pop();
            }
        }
    }
    let mut out: Vec<Detection> = heap.into_iter().map(|w| w.0).collect();
    out.sort_by(|a, b| a.rank(b));
    Ok(out)
}

/// The window of detection `d` cut from its (rescaled) source image.
pub fn detection_crop<S: ImageSource + ?Sized>(
    corpus: &S,
    d: &Detection,
    window: (usize, usize),
) -> Result<Image> {
    let img = scaled_image(&corpus.load(d.image_id)?, d.scale);
    img.crop(d.x, d.y, window.0, window.1)
}

/// Pixelwise mean of equally sized crops; grayscale crops are promoted to
/// RGB when any crop is in colour.
pub fn mean_image(crops: &[Image]) -> Result<Image> {
    let first = crops
        .first()
        .ok_or_else(|| Error::EmptyCorpus("nothing to average".into()))?;
    let channels = crops.iter().map(|c| c.channels()).max().unwrap_or(1);
    let mut acc = vec![0.0; first.width() * first.height() * channels];
    for c in crops {
        if (c.width(), c.height()) != (first.width(), first.height()) {
            return Err(Error::Dimension("crops differ in size".into()));
        }
        let c = if c.channels() == channels {
            c.clone()
        } else {
            c.to_rgb()
        };
        for (a, v) in acc.iter_mut().zip(c.data()) {
            *a += v;
        }
    }
    let n = crops.len() as f64;
    Image::new(
        first.width(),
        first.height(),
        channels,
        acc.into_iter().map(|v| v / n).collect(),
    )
}

#[derive(Debug, Clone)]
pub struct EldaResult {
    pub inversion: Inversion,
    pub detections: Vec<Detection>,
}

/// Invert `y` as the mean of its top-`k` detections in `corpus`.
pub fn elda_invert<S: ImageSource + ?Sized>(
    g: &MaterializedGaussian,
    y: &HogDescriptor,
    corpus: &S,
    k: usize,
    scales: &Scales,
    hog: &HogConfig,
) -> Result<EldaResult> {
    let template = make_template(g, y)?;
    let detections = top_detections(&template, corpus, scales, 1, k, hog)?;
    if detections.is_empty() {
        return Err(Error::EmptyCorpus(
            "no window of the database fits the template".into(),
        ));
    }
    if detections.len() < k {
        log::warn!(
            "only {} detections survived for k = {k}; averaging all of them",
            detections.len()
        );
    }
    let window = template.pixel_geometry();
    let crops = detections
        .iter()
        .map(|d| detection_crop(corpus, d, window))
        .collect::<Result<Vec<_>>>()?;
    Ok(EldaResult {
        inversion: Inversion::new(mean_image(&crops)?),
        detections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{fit_stationary, materialize_conditional, Prior, StationaryConfig};
    use crate::source::MemorySource;
    use crate::testutil::smooth_noise;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn identity_gaussian(d: usize, mu: Vec<f64>) -> MaterializedGaussian {
        MaterializedGaussian::from_blocks(
            1,
            1,
            8,
            d,
            DVector::zeros(1),
            DVector::from_vec(mu),
            None,
            DMatrix::zeros(1, d),
            DMatrix::identity(d, d),
            0.0,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn identity_covariance_gives_centred_descriptor() {
        let g1 = identity_gaussian(3, vec![0.5, -1.0, 2.0]);
        let y = HogDescriptor::new(1, 1, 3, 8, vec![1.5, 1.0, 2.0]).unwrap();
        let t = make_template(&g1, &y).unwrap();
        assert_eq!(t.weights.data(), &[1.0, 2.0, 0.0]);
        let at_mean = HogDescriptor::new(1, 1, 3, 8, vec![0.5, -1.0, 2.0]).unwrap();
        assert!(make_template(&g1, &at_mean)
            .unwrap()
            .weights
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn random_spd_matches_lu_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = 12;
        let a: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
        let sigma = &a * a.transpose() + DMatrix::identity(d, d) * 0.5;
        let mu: DVector<f64> = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let g = MaterializedGaussian::from_blocks(
            2,
            2,
            8,
            3,
            DVector::zeros(1),
            mu.clone(),
            None,
            DMatrix::zeros(1, d),
            sigma.clone(),
            0.0,
            0.0,
        )
        .unwrap();
        let y: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t = make_template(&g, &HogDescriptor::new(2, 2, 3, 8, y.clone()).unwrap()).unwrap();
        let oracle = sigma.lu().solve(&(DVector::from_vec(y) - mu)).unwrap();
        for (a, b) in t.weights.data().iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    fn fitted() -> (MaterializedGaussian, MemorySource, HogConfig) {
        let hog = HogConfig::default();
        let train = MemorySource::new((0..4).map(|i| smooth_noise(96, 96, 2, 60 + i)).collect());
        let cfg = StationaryConfig {
            canonical_cells: 3,
            ..Default::default()
        };
        let model = fit_stationary(&train, &hog, &cfg, 0).unwrap();
        let g = materialize_conditional(&model, 3, 3, Prior::default()).unwrap();
        let db = MemorySource::new((0..5).map(|i| smooth_noise(88, 80, 1, 90 + i)).collect());
        (g, db, hog)
    }

    #[test]
    fn scores_match_naive_dot_products() {
        let (g, db, hog) = fitted();
        let src = db.load(2).unwrap();
        let y = compute_hog(&src.crop(16, 8, 40, 40).unwrap(), &hog).unwrap();
        let t = make_template(&g, &y).unwrap();
        let all = sliding_scores(&t, &db, &Scales::Fixed(vec![1.0, 0.8]), 1, &hog).unwrap();
        for d in all.iter().step_by(all.len() / 10) {
            let full =
                compute_hog(&scaled_image(&db.load(d.image_id).unwrap(), d.scale), &hog).unwrap();
            let phi = full.window(d.y / 8, d.x / 8, 3, 3).unwrap();
            let naive: f64 = t
                .weights
                .data()
                .iter()
                .zip(phi.data())
                .map(|(a, b)| a * b)
                .sum();
            assert!((naive - d.score).abs() < 1e-6, "{naive} vs {}", d.score);
        }
        // The source window is the best one.
        let best = all.iter().min_by(|a, b| a.rank(b)).unwrap();
        assert_eq!((best.image_id, best.x, best.y, best.scale), (2, 16, 8, 1.0));
    }

    #[test]
    fn zero_template_scores_zero_and_scaling_preserves_selection() {
        let (g, db, hog) = fitted();
        let zero = EldaTemplate {
            weights: HogDescriptor::zeros(3, 3, 31, 8),
        };
        let all = sliding_scores(&zero, &db, &Scales::Ladder, 1, &hog).unwrap();
        assert!(all.iter().all(|d| d.score == 0.0));
        let y = compute_hog(&db.load(0).unwrap().crop(8, 8, 40, 40).unwrap(), &hog).unwrap();
        let t = make_template(&g, &y).unwrap();
        let t4 = EldaTemplate {
            weights: t.weights.scaled(4.0),
        };
        let a = top_detections(&t, &db, &Scales::Ladder, 1, 6, &hog).unwrap();
        let b = top_detections(&t4, &db, &Scales::Ladder, 1, 6, &hog).unwrap();
        let key = |v: &[Detection]| {
            v.iter()
                .map(|d| (d.image_id, d.x, d.y, d.scale.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(key(&a), key(&b));
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(q.score, 4.0 * p.score);
        }
    }

    #[test]
    fn streamed_top_k_equals_brute_force() {
        let (g, db, hog) = fitted();
        let y = compute_hog(&db.load(3).unwrap().crop(24, 16, 40, 40).unwrap(), &hog).unwrap();
        let t = make_template(&g, &y).unwrap();
        let k = 7;
        let streamed = top_detections(&t, &db, &Scales::Ladder, 1, k, &hog).unwrap();
        let all = sliding_scores(&t, &db, &Scales::Ladder, 1, &hog).unwrap();
        let mut brute = vec![];
        for i in 0..db.len() {
            let mine: Vec<Detection> = all.iter().filter(|d| d.image_id == i).copied().collect();
            brute.extend(non_max_suppression(mine, (40, 40), usize::MAX));
        }
        brute.sort_by(|a, b| a.rank(b));
        brute.truncate(k);
        assert_eq!(streamed, brute);
    }

    #[test]
    fn self_retrieval_and_mean_properties() {
        let (g, db, hog) = fitted();
        let src = db.load(1).unwrap();
        let crop = src.crop(32, 24, 40, 40).unwrap();
        let y = compute_hog(&crop, &hog).unwrap();
        let out = elda_invert(&g, &y, &db, 1, &Scales::Ladder, &hog).unwrap();
        assert_eq!(out.detections.len(), 1);
        assert_eq!(out.inversion.raw, crop);

        let twice = mean_image(&[crop.clone(), crop.clone()]).unwrap();
        assert_eq!(twice, crop);
        let other = db.load(2).unwrap().crop(0, 0, 40, 40).unwrap();
        let third = db.load(4).unwrap().crop(8, 8, 40, 40).unwrap();
        let a = mean_image(&[crop.clone(), other.clone(), third.clone()]).unwrap();
        let b = mean_image(&[third, crop, other]).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn errors() {
        let (g, _, hog) = fitted();
        let y = HogDescriptor::zeros(3, 3, 31, 8);
        let empty = MemorySource::default();
        assert!(matches!(
            elda_invert(&g, &y, &empty, 1, &Scales::Ladder, &hog),
            Err(Error::EmptyCorpus(_))
        ));
        assert!(matches!(
            make_template(&g, &HogDescriptor::zeros(2, 3, 31, 8)),
            Err(Error::Dimension(_))
        ));
    }
}
