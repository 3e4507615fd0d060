//! Evaluation harness: normalized cross correlation, feature-space error,
//! per-category benchmark reports and template-size sweeps.
//!
//! Protocol for every annotated patch: cut the box with a
//! [`CONTEXT_PAD`]-pixel margin (edge pixels replicate past the image
//! border), resize bilinearly to the `(cells + 2) * cell_size` square the
//! requested HOG geometry needs, compute the descriptor on luminance, invert
//! it with each algorithm and score the raw inversion against the resized
//! crop.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::Serialize;

use crate::directopt::{direct_invert, DirectConfig};
use crate::elda::{elda_invert, Scales};
use crate::error::{Error, Result};
use crate::gaussian::{image_eigenbasis, ImageBasis, Prior, RidgeInverter, StationaryModel};
use crate::hog::{compute_hog, HogConfig, HogDescriptor};
use crate::paireddict::PairedDictionary;
use crate::raster::{Image, Inversion};
use crate::source::{ImageSource, SubsetSource};
use crate::store::Annotation;

/// Context margin added on every side of an annotated box, in pixels.
pub const CONTEXT_PAD: i64 = 16;

/// Zero-mean, unit-norm correlation of the luminance of `a` and `b`; 0 when
/// either has zero variance.
pub fn ncc(a: &Image, b: &Image) -> Result<f64> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::Dimension(format!(
            "cannot correlate a {}x{} image with a {}x{} image",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let (a, b) = (a.to_luminance(), b.to_luminance());
    let constant = |d: &[f64]| d.iter().all(|&v| v == d[0]);
    if constant(a.data()) || constant(b.data()) {
        return Ok(0.0);
    }
    let n = a.data().len() as f64;
    let ma = a.data().iter().sum::<f64>() / n;
    let mb = b.data().iter().sum::<f64>() / n;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.data().iter().zip(b.data()) {
        let (dx, dy) = (x - ma, y - mb);
        ab += dx * dy;
        aa += dx * dx;
        bb += dy * dy;
    }
    if !(aa > 0.0 && bb > 0.0) {
        return Ok(0.0);
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

/// `||phi(x_hat) - y||_2`, with the descriptor of `x_hat` computed on its
/// luminance.
pub fn feature_error(x_hat: &Image, y: &HogDescriptor, hog: &HogConfig) -> Result<f64> {
    if x_hat.width() / hog.cell_size != y.cells_x + 2
        || x_hat.height() / hog.cell_size != y.cells_y + 2
    {
        return Err(Error::Dimension(format!(
            "a {}x{} image does not produce a {}x{}-cell descriptor",
            x_hat.width(),
            x_hat.height(),
            y.cells_x,
            y.cells_y
        )));
    }
    let phi = compute_hog(&x_hat.to_luminance(), hog)?;
    if !phi.same_geometry(y) {
        return Err(Error::Dimension("descriptor layouts differ".into()));
    }
    Ok(phi
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Crop an annotation with context and resize it for a `cells x cells`
/// descriptor.
pub fn prepare_crop(img: &Image, a: &Annotation, cells: usize, cell_size: usize) -> Image {
    let side = (cells + 2) * cell_size;
    let crop = img.crop_padded(
        a.x - CONTEXT_PAD,
        a.y - CONTEXT_PAD,
        a.w + 2 * CONTEXT_PAD as usize,
        a.h + 2 * CONTEXT_PAD as usize,
    );
    crop.resize(side, side)
}

/// What an inverter knows about the patch besides its descriptor.
pub struct PatchContext<'a> {
    /// The resized crop the descriptor was computed from.
    pub crop: &'a Image,
    pub category: &'a str,
    /// Per-patch seed derived from the run seed and the patch index.
    pub seed: u64,
}

/// One benchmarked algorithm.
pub trait Inverter: Sync {
    fn name(&self) -> &str;
    fn invert(&self, y: &HogDescriptor, ctx: &PatchContext<'_>) -> Result<Inversion>;
}

/// Debug algorithm returning the original crop.
pub struct Passthrough;

impl Inverter for Passthrough {
    fn name(&self) -> &str {
        "passthrough"
    }

    fn invert(&self, _y: &HogDescriptor, ctx: &PatchContext<'_>) -> Result<Inversion> {
        Ok(Inversion::new(ctx.crop.clone()))
    }
}

pub struct PairAlgo<'a>(pub &'a PairedDictionary);

impl Inverter for PairAlgo<'_> {
    fn name(&self) -> &str {
        "pair"
    }

    fn invert(&self, y: &HogDescriptor, _ctx: &PatchContext<'_>) -> Result<Inversion> {
        self.0.invert(y)
    }
}

pub struct RidgeAlgo<'r, 'a>(pub &'r RidgeInverter<'a>);

impl Inverter for RidgeAlgo<'_, '_> {
    fn name(&self) -> &str {
        "ridge"
    }

    fn invert(&self, y: &HogDescriptor, _ctx: &PatchContext<'_>) -> Result<Inversion> {
        self.0.invert(y)
    }
}

/// Basis parameters for direct optimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectBasisConfig {
    pub patch_pixels: usize,
    pub k_per_placement: usize,
    pub stride: usize,
}

impl Default for DirectBasisConfig {
    fn default() -> Self {
        Self {
            patch_pixels: 32,
            k_per_placement: 8,
            stride: 16,
        }
    }
}

/// Direct optimization with a translated eigenbasis built (and cached) per
/// template geometry from the stationary model.
pub struct DirectAlgo<'a> {
    pub model: &'a StationaryModel,
    pub basis: DirectBasisConfig,
    pub config: DirectConfig,
    cache: Mutex<HashMap<(usize, usize), Arc<ImageBasis>>>,
}

impl<'a> DirectAlgo<'a> {
    pub fn new(model: &'a StationaryModel, basis: DirectBasisConfig, config: DirectConfig) -> Self {
        Self {
            model,
            basis,
            config,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn basis_for(&self, width: usize, height: usize) -> Result<Arc<ImageBasis>> {
        if let Some(b) = self.cache.lock().unwrap().get(&(width, height)) {
            return Ok(b.clone());
        }
        let b = Arc::new(image_eigenbasis(
            self.model,
            self.basis.patch_pixels.min(width).min(height),
            self.basis.k_per_placement,
            (width, height),
            self.basis.stride,
        )?);
        self.cache
            .lock()
            .unwrap()
            .insert((width, height), b.clone());
        Ok(b)
    }
}

impl Inverter for DirectAlgo<'_> {
    fn name(&self) -> &str {
        "direct"
    }

    fn invert(&self, y: &HogDescriptor, ctx: &PatchContext<'_>) -> Result<Inversion> {
        let (w, h) = y.pixel_geometry();
        let basis = self.basis_for(w, h)?;
        let config = DirectConfig {
            seed: ctx.seed,
            ..self.config.clone()
        };
        Ok(direct_invert(&basis, y, &config, &self.model.hog)?.inversion)
    }
}

/// Exemplar-LDA averaging over a database. When `categories` is given, the
/// database images annotated with the patch's category are left out.
pub struct EldaAlgo<'a> {
    pub ridge: &'a RidgeInverter<'a>,
    pub hog: HogConfig,
    pub database: &'a dyn ImageSource,
    /// Categories annotated in each database image (same indexing).
    pub categories: Option<Vec<BTreeSet<String>>>,
    pub k: usize,
    pub scales: Scales,
}

impl Inverter for EldaAlgo<'_> {
    fn name(&self) -> &str {
        "elda"
    }

    fn invert(&self, y: &HogDescriptor, ctx: &PatchContext<'_>) -> Result<Inversion> {
        let g = self.ridge.gaussian_for(y.cells_x, y.cells_y)?;
        let run = |db: &dyn ImageSource| elda_invert(&g, y, db, self.k, &self.scales, &self.hog);
        let result = match &self.categories {
            Some(cats) => {
                let keep = (0..self.database.len())
                    .filter(|&i| !cats[i].contains(ctx.category))
                    .collect();
                run(&SubsetSource::new(self.database, keep))?
            }
            None => run(self.database)?,
        };
        Ok(result.inversion)
    }
}

/// Names accepted by [`build_inverters`].
pub const ALGORITHMS: [&str; 5] = ["pair", "ridge", "elda", "direct", "passthrough"];

/// Trained models available to a benchmark run.
pub struct Models<'a> {
    pub pair: Option<&'a PairedDictionary>,
    pub gaussian: Option<&'a StationaryModel>,
    pub prior: Prior,
    pub direct: DirectConfig,
    pub direct_basis: DirectBasisConfig,
    pub elda_k: usize,
    pub elda_database: Option<(&'a dyn ImageSource, Option<Vec<BTreeSet<String>>>)>,
}

/// Owns the inverters built from [`Models`]; ELDA borrows the ridge
/// inverter's materialization cache.
pub struct InverterSet<'a> {
    names: Vec<String>,
    pair: Option<PairAlgo<'a>>,
    ridge: Option<RidgeInverter<'a>>,
    direct: Option<DirectAlgo<'a>>,
    hog: HogConfig,
    elda_k: usize,
    elda_database: Option<(&'a dyn ImageSource, Option<Vec<BTreeSet<String>>>)>,
}

/// Resolve algorithm names against the available models. A name whose model
/// is missing is a configuration error naming the algorithm.
pub fn build_inverters<'a>(names: &[String], models: Models<'a>) -> Result<InverterSet<'a>> {
    if names.is_empty() {
        return Err(Error::Config("no algorithm requested".into()));
    }
    let mut seen = BTreeSet::new();
    for n in names {
        if !ALGORITHMS.contains(&n.as_str()) {
            return Err(Error::Config(format!(
                "unknown algorithm {n} (expected one of {})",
                ALGORITHMS.join(", ")
            )));
        }
        if !seen.insert(n.as_str()) {
            return Err(Error::Config(format!("algorithm {n} requested twice")));
        }
    }
    let wants = |a: &str| names.iter().any(|n| n == a);
    let need_gaussian = |a: &str| -> Result<&'a StationaryModel> {
        models.gaussian.ok_or_else(|| {
            Error::Config(format!(
                "algorithm {a} needs a Gaussian model (train-gauss)"
            ))
        })
    };
    let pair = if wants("pair") {
        let p = models.pair.ok_or_else(|| {
            Error::Config("algorithm pair needs a paired dictionary (train-pair)".into())
        })?;
        Some(PairAlgo(p))
    } else {
        None
    };
    let mut hog = pair.as_ref().map(|p| *p.0.hog_config()).unwrap_or_default();
    let mut ridge = None;
    if wants("ridge") || wants("elda") {
        let g = need_gaussian(if wants("ridge") { "ridge" } else { "elda" })?;
        hog = g.hog;
        ridge = Some(RidgeInverter::new(g, models.prior));
    }
    let direct = if wants("direct") {
        let g = need_gaussian("direct")?;
        hog = g.hog;
        Some(DirectAlgo::new(
            g,
            models.direct_basis,
            models.direct.clone(),
        ))
    } else {
        None
    };
    if wants("elda") && models.elda_database.is_none() {
        return Err(Error::Config(
            "algorithm elda needs a database corpus".into(),
        ));
    }
    if let (Some(p), Some(g)) = (models.pair, models.gaussian) {
        if p.hog_config() != &g.hog
            && (wants("pair") && (wants("ridge") || wants("elda") || wants("direct")))
        {
            return Err(Error::Config(
                "the paired dictionary and the Gaussian model use different HOG settings".into(),
            ));
        }
    }
    Ok(InverterSet {
        names: names.to_vec(),
        pair,
        ridge,
        direct,
        hog,
        elda_k: models.elda_k,
        elda_database: models.elda_database,
    })
}

impl<'a> InverterSet<'a> {
    /// HOG settings shared by the requested models.
    pub fn hog(&self) -> &HogConfig {
        &self.hog
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Run `f` with the inverters in request order.
    pub fn with<R>(&self, f: impl FnOnce(&[&dyn Inverter]) -> R) -> R {
        let ridge_algo = self.ridge.as_ref().map(RidgeAlgo);
        let elda = self
            .elda_database
            .as_ref()
            .zip(self.ridge.as_ref())
            .map(|((db, cats), r)| EldaAlgo {
                ridge: r,
                hog: self.hog,
                database: *db,
                categories: cats.clone(),
                k: self.elda_k,
                scales: Scales::Ladder,
            });
        let list: Vec<&dyn Inverter> = self
            .names
            .iter()
            .map(|n| -> &dyn Inverter {
                match n.as_str() {
                    "pair" => self.pair.as_ref().unwrap(),
                    "ridge" => ridge_algo.as_ref().unwrap(),
                    "elda" => elda.as_ref().unwrap(),
                    "direct" => self.direct.as_ref().unwrap(),
                    _ => &Passthrough,
                }
            })
            .collect();
        f(&list)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// Descriptor side in cells.
    pub cells: usize,
    pub seed: u64,
    /// Abort on the first failing patch instead of counting it.
    pub strict: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            cells: 10,
            seed: 0,
            strict: false,
        }
    }
}

/// Scores of one algorithm on one patch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatchResult {
    pub patch: usize,
    pub image: String,
    pub category: String,
    pub algorithm: String,
    pub cells: usize,
    pub ncc: f64,
    /// `||phi(raw inversion) - y||`.
    pub feature_error: f64,
    /// Error of the constant-image baseline, whose descriptor is zero:
    /// `||y||`.
    pub baseline_error: f64,
    /// Laplacian energy of the display-rescaled inversion.
    pub laplacian: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub category: String,
    pub algorithm: String,
    pub mean: f64,
    pub count: usize,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    /// Per (category, algorithm), sorted by category then request order.
    pub rows: Vec<ReportRow>,
    /// Per algorithm over all patches.
    pub overall: Vec<ReportRow>,
    pub patches: Vec<PatchResult>,
    /// `(patch, algorithm, message)` for every failed inversion.
    pub failures: Vec<(usize, String, String)>,
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

fn stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn aggregate(patches: &[PatchResult], algorithms: &[String]) -> (Vec<ReportRow>, Vec<ReportRow>) {
    let order = |a: &str| algorithms.iter().position(|n| n == a).unwrap_or(usize::MAX);
    let mut groups: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    let mut overall: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for p in patches {
        groups
            .entry((p.category.clone(), order(&p.algorithm)))
            .or_default()
            .push(p.ncc);
        overall.entry(order(&p.algorithm)).or_default().push(p.ncc);
    }
    let row = |category: String, a: usize, v: &[f64]| {
        let (mean, std) = stats(v);
        ReportRow {
            category,
            algorithm: algorithms[a].clone(),
            mean,
            count: v.len(),
            std,
        }
    };
    (
        groups
            .iter()
            .map(|((c, a), v)| row(c.clone(), *a, v))
            .collect(),
        overall
            .iter()
            .map(|(a, v)| row("mean".into(), *a, v))
            .collect(),
    )
}

/// Derive the seed of patch `i` from the run seed.
pub fn patch_seed(seed: u64, patch: usize) -> u64 {
    seed ^ (patch as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Images referenced by the annotations, decoded once each.
fn load_referenced(
    source: &dyn ImageSource,
    annotations: &[Annotation],
) -> HashMap<String, Result<Image>> {
    let labels: HashMap<String, usize> = (0..source.len()).map(|i| (source.label(i), i)).collect();
    let wanted: BTreeSet<&str> = annotations.iter().map(|a| a.image.as_str()).collect();
    let wanted: Vec<&str> = wanted.into_iter().collect();
    wanted
        .par_iter()
        .map(|name| {
            let img = match labels.get(*name) {
                Some(&i) => source.load(i),
                None => Err(Error::Config(format!(
                    "annotated image {name} is not in the corpus"
                ))),
            };
            (name.to_string(), img)
        })
        .collect()
}

/// Benchmark `inverters` on every annotated patch of `source` (whose labels
/// are the annotations' image paths). Failed inversions are logged and
/// counted unless `config.strict`.
pub fn run_benchmark(
    source: &dyn ImageSource,
    annotations: &[Annotation],
    inverters: &[&dyn Inverter],
    hog: &HogConfig,
    config: &BenchConfig,
) -> Result<BenchmarkReport> {
    if annotations.is_empty() {
        return Err(Error::EmptyCorpus(
            "no annotated patches to benchmark".into(),
        ));
    }
    if inverters.is_empty() {
        return Err(Error::Config("no algorithm to benchmark".into()));
    }
    if config.cells == 0 {
        return Err(Error::Config(
            "descriptor size must be at least one cell".into(),
        ));
    }
    let images = load_referenced(source, annotations);
    run_on_images(
        &images,
        annotations,
        inverters,
        hog,
        config,
        &vec![true; annotations.len()],
    )
}

fn run_on_images(
    images: &HashMap<String, Result<Image>>,
    annotations: &[Annotation],
    inverters: &[&dyn Inverter],
    hog: &HogConfig,
    config: &BenchConfig,
    include: &[bool],
) -> Result<BenchmarkReport> {
    let algorithms: Vec<String> = inverters.iter().map(|i| i.name().to_string()).collect();
    type Outcome = std::result::Result<PatchResult, (usize, String, String)>;
    let outcomes: Vec<Vec<Outcome>> = (0..annotations.len())
        .into_par_iter()
        .filter(|&i| include[i])
        .map(|i| {
            let a = &annotations[i];
            let fail = |name: &str, e: &Error| Err((i, name.to_string(), e.to_string()));
            let img = match &images[&a.image] {
                Ok(img) => img,
                Err(e) => return algorithms.iter().map(|n| fail(n, e)).collect(),
            };
            let crop = prepare_crop(img, a, config.cells, hog.cell_size);
            let y = match compute_hog(&crop.to_luminance(), hog) {
                Ok(y) => y,
                Err(e) => return algorithms.iter().map(|n| fail(n, &e)).collect(),
            };
            let ctx = PatchContext {
                crop: &crop,
                category: &a.category,
                seed: patch_seed(config.seed, i),
            };
            inverters
                .iter()
                .map(|inv| {
                    let scored = inv.invert(&y, &ctx).and_then(|out| {
                        Ok(PatchResult {
                            patch: i,
                            image: a.image.clone(),
                            category: a.category.clone(),
                            algorithm: inv.name().to_string(),
                            cells: config.cells,
                            ncc: ncc(&out.raw, &crop)?,
                            feature_error: feature_error(&out.raw, &y, hog)?,
                            baseline_error: y.norm(),
                            laplacian: out.display.laplacian_energy(),
                        })
                    });
                    scored.or_else(|e| fail(inv.name(), &e))
                })
                .collect()
        })
        .collect();
    let mut patches = vec![];
    let mut failures = vec![];
    for o in outcomes.into_iter().flatten() {
        match o {
            Ok(p) => patches.push(p),
            Err(f) => {
                log::warn!("patch {} ({}): {}", f.0, f.1, f.2);
                if config.strict {
                    return Err(Error::Config(format!(
                        "patch {} failed for {}: {}",
                        f.0, f.1, f.2
                    )));
                }
                failures.push(f);
            }
        }
    }
    if patches.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "all {} inversions failed",
            failures.len()
        )));
    }
    let (rows, overall) = aggregate(&patches, &algorithms);
    let mut metadata = serde_json::Map::new();
    metadata.insert("seed".into(), config.seed.into());
    metadata.insert("cells".into(), config.cells.into());
    metadata.insert(
        "patches".into(),
        include.iter().filter(|&&b| b).count().into(),
    );
    metadata.insert("failures".into(), failures.len().into());
    Ok(BenchmarkReport {
        rows,
        overall,
        patches,
        failures,
        metadata,
    })
}

impl BenchmarkReport {
    /// Per-patch CSV, one line per (patch, algorithm), floats in shortest
    /// round-trip form.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "patch,image,category,algorithm,cells,ncc,feature_error,baseline_error,laplacian\n",
        );
        for p in &self.patches {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                p.patch,
                csv_field(&p.image),
                csv_field(&p.category),
                p.algorithm,
                p.cells,
                p.ncc,
                p.feature_error,
                p.baseline_error,
                p.laplacian
            )
            .unwrap();
        }
        s
    }

    /// Aggregate table: one row per category plus the overall mean, one
    /// column per algorithm (mean NCC with the patch count).
    pub fn to_markdown(&self) -> String {
        let algorithms: Vec<&str> = self.overall.iter().map(|r| r.algorithm.as_str()).collect();
        let mut s = String::new();
        for (k, v) in &self.metadata {
            writeln!(s, "<!-- {k}: {v} -->").unwrap();
        }
        writeln!(s, "| category | {} |", algorithms.join(" | ")).unwrap();
        writeln!(s, "|---|{}", "---|".repeat(algorithms.len())).unwrap();
        let categories: BTreeSet<&str> = self.rows.iter().map(|r| r.category.as_str()).collect();
        let cell = |r: Option<&ReportRow>| match r {
            Some(r) => format!("{:.3} (n={})", r.mean, r.count),
            None => "-".into(),
        };
        for c in categories {
            let cells: Vec<String> = algorithms
                .iter()
                .map(|a| {
                    cell(
                        self.rows
                            .iter()
                            .find(|r| r.category == c && r.algorithm == *a),
                    )
                })
                .collect();
            writeln!(s, "| {c} | {} |", cells.join(" | ")).unwrap();
        }
        let cells: Vec<String> = self.overall.iter().map(|r| cell(Some(r))).collect();
        writeln!(s, "| **mean** | {} |", cells.join(" | ")).unwrap();
        s
    }

    /// Overall mean NCC of `algorithm`.
    pub fn mean_of(&self, algorithm: &str) -> Option<f64> {
        self.overall
            .iter()
            .find(|r| r.algorithm == algorithm)
            .map(|r| r.mean)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Mean NCC of one algorithm at one descriptor size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub cells: usize,
    pub mean: f64,
    pub count: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// Whether a padded crop has enough source pixels for a `cells`-cell
/// descriptor without upsampling.
pub fn fits_size(a: &Annotation, cells: usize, cell_size: usize) -> bool {
    let side = (cells + 2) * cell_size;
    a.w + 2 * CONTEXT_PAD as usize >= side && a.h + 2 * CONTEXT_PAD as usize >= side
}

/// Run the benchmark of `inverter` at every size in `sizes` (cells per
/// side). Patches whose padded box is smaller than a size's raster are
/// skipped for that size with a warning.
pub fn size_sweep(
    source: &dyn ImageSource,
    annotations: &[Annotation],
    inverter: &dyn Inverter,
    hog: &HogConfig,
    sizes: &[usize],
    config: &BenchConfig,
) -> Result<(Vec<SweepRow>, Vec<BenchmarkReport>)> {
    if annotations.is_empty() {
        return Err(Error::EmptyCorpus("no annotated patches to sweep".into()));
    }
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::Config(
            "sizes must be a non-empty list of positive cell counts".into(),
        ));
    }
    let images = load_referenced(source, annotations);
    let mut rows = vec![];
    let mut reports = vec![];
    for &cells in sizes {
        let include: Vec<bool> = annotations
            .iter()
            .map(|a| fits_size(a, cells, hog.cell_size))
            .collect();
        let skipped = include.iter().filter(|&&b| !b).count();
        if skipped > 0 {
            log::warn!("{cells}x{cells} cells: skipping {skipped} patches smaller than the raster");
        }
        if skipped == annotations.len() {
            rows.push(SweepRow {
                cells,
                mean: f64::NAN,
                count: 0,
                skipped,
                failed: 0,
            });
            continue;
        }
        let cfg = BenchConfig {
            cells,
            ..config.clone()
        };
        let report = run_on_images(&images, annotations, &[inverter], hog, &cfg, &include)?;
        rows.push(SweepRow {
            cells,
            mean: report.overall[0].mean,
            count: report.overall[0].count,
            skipped,
            failed: report.failures.len(),
        });
        reports.push(report);
    }
    Ok((rows, reports))
}

/// Markdown table of a sweep.
pub fn sweep_markdown(algorithm: &str, rows: &[SweepRow]) -> String {
    let mut s = format!(
        "| cells ({algorithm}) | mean NCC | count | skipped | failed |\n|---|---|---|---|---|\n"
    );
    for r in rows {
        writeln!(
            s,
            "| {0}x{0} | {1:.4} | {2} | {3} | {4} |",
            r.cells, r.mean, r.count, r.skipped, r.failed
        )
        .unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::MemorySource;
    use crate::testutil::smooth_noise;

    fn noise(w: usize, h: usize, seed: u64) -> Image {
        smooth_noise(w, h, 2, seed)
    }

    #[test]
    fn ncc_identities() {
        let x = noise(20, 15, 1);
        assert!((ncc(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((ncc(&x, &x.map(|v| 3.0 * v - 2.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((ncc(&x, &x.map(|v| -v)).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(ncc(&x, &Image::filled(20, 15, 1, 0.3)).unwrap(), 0.0);
        assert!(matches!(
            ncc(&x, &noise(15, 20, 1)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn ncc_symmetric_and_affine_invariant() {
        for seed in 0..20 {
            let a = noise(16, 16, seed);
            let b = noise(16, 16, seed + 100);
            let ab = ncc(&a, &b).unwrap();
            assert!((ab - ncc(&b, &a).unwrap()).abs() <= 1e-12);
            assert!((ab - ncc(&a.map(|v| 0.5 * v + 3.0), &b).unwrap()).abs() <= 1e-12);
            assert!((ab - ncc(&a, &b.map(|v| 7.0 * v - 1.0)).unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn ncc_uses_luminance() {
        let g = noise(12, 12, 4);
        assert!((ncc(&g.to_rgb(), &g).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn feature_error_cases() {
        let hog = HogConfig::default();
        let x = noise(48, 48, 2);
        let y = compute_hog(&x, &hog).unwrap();
        assert!(feature_error(&x, &y, &hog).unwrap() <= 1e-6);
        let flat = Image::filled(48, 48, 1, 0.4);
        assert!((feature_error(&flat, &y, &hog).unwrap() - y.norm()).abs() <= 1e-12);
        assert!(matches!(
            feature_error(&noise(56, 48, 2), &y, &hog),
            Err(Error::Dimension(_))
        ));
    }

    fn one_patch() -> (MemorySource, Vec<Annotation>) {
        let src = MemorySource::with_labels(vec![noise(160, 140, 9)], vec!["a.png".into()]);
        let ann = vec![Annotation {
            image: "a.png".into(),
            x: 20,
            y: 10,
            w: 100,
            h: 90,
            category: "thing".into(),
        }];
        (src, ann)
    }

    #[test]
    fn passthrough_scores_one() {
        let (src, ann) = one_patch();
        let r = run_benchmark(
            &src,
            &ann,
            &[&Passthrough],
            &HogConfig::default(),
            &BenchConfig::default(),
        )
        .unwrap();
        assert_eq!(r.patches.len(), 1);
        assert_eq!(r.mean_of("passthrough"), Some(1.0));
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].count, 1);
        assert!(r.to_markdown().contains("1.000"));
    }

    #[test]
    fn missing_models_name_the_algorithm() {
        let models = || Models {
            pair: None,
            gaussian: None,
            prior: Prior::default(),
            direct: DirectConfig::default(),
            direct_basis: DirectBasisConfig::default(),
            elda_k: 1,
            elda_database: None,
        };
        for name in ["pair", "ridge", "elda", "direct"] {
            match build_inverters(&[name.to_string()], models()) {
                Err(Error::Config(m)) => assert!(m.contains(name), "{m}"),
                _ => panic!("{name} built without a model"),
            }
        }
        assert!(matches!(
            build_inverters(&["bogus".into()], models()),
            Err(Error::Config(_))
        ));
        let set = build_inverters(&["passthrough".into()], models()).unwrap();
        set.with(|inv| assert_eq!(inv[0].name(), "passthrough"));
    }

    #[test]
    fn means_match_csv_and_runs_are_identical() {
        let src = MemorySource::with_labels(
            vec![noise(150, 150, 1), noise(130, 170, 2)],
            vec!["a.png".into(), "b.png".into()],
        );
        let mk = |image: &str, x, category: &str| Annotation {
            image: image.into(),
            x,
            y: 5,
            w: 90,
            h: 100,
            category: category.into(),
        };
        let ann = vec![
            mk("a.png", 0, "p"),
            mk("a.png", 40, "q"),
            mk("b.png", 10, "p"),
            mk("c.png", 0, "q"),
        ];
        /// Correlates the crop with a blurred copy of itself.
        struct Blur;
        impl Inverter for Blur {
            fn name(&self) -> &str {
                "blur"
            }
            fn invert(&self, _y: &HogDescriptor, ctx: &PatchContext<'_>) -> Result<Inversion> {
                let c = ctx.crop;
                let (w, h) = (c.width(), c.height());
                Ok(Inversion::new(c.resize(w / 4, h / 4).resize(w, h)))
            }
        }
        let cfg = BenchConfig {
            cells: 6,
            seed: 5,
            strict: false,
        };
        let hog = HogConfig::default();
        let a = run_benchmark(&src, &ann, &[&Blur, &Passthrough], &hog, &cfg).unwrap();
        let b = run_benchmark(&src, &ann, &[&Blur, &Passthrough], &hog, &cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        // The unknown image c.png fails for both algorithms.
        assert_eq!(a.failures.len(), 2);
        assert_eq!(a.patches.len(), 6);
        // Recompute the aggregates from the CSV text.
        let mut by_key: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        for line in a.to_csv().lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            by_key
                .entry((f[2].to_string(), f[3].to_string()))
                .or_default()
                .push(f[5].parse().unwrap());
        }
        assert_eq!(by_key.len(), a.rows.len());
        for r in &a.rows {
            let v = &by_key[&(r.category.clone(), r.algorithm.clone())];
            assert_eq!(v.len(), r.count);
            assert!((v.iter().sum::<f64>() / v.len() as f64 - r.mean).abs() < 1e-12);
            assert!((-1.0..=1.0).contains(&r.mean));
        }
        let strict = BenchConfig {
            strict: true,
            ..cfg
        };
        assert!(run_benchmark(&src, &ann, &[&Passthrough], &hog, &strict).is_err());
    }

    #[test]
    fn sweep_skips_small_boxes_and_matches_single_runs() {
        let src = MemorySource::with_labels(vec![noise(300, 300, 3)], vec!["a.png".into()]);
        let mk = |w| Annotation {
            image: "a.png".into(),
            x: 10,
            y: 10,
            w,
            h: w,
            category: "c".into(),
        };
        let ann = vec![mk(60), mk(200)];
        struct Half;
        impl Inverter for Half {
            fn name(&self) -> &str {
                "half"
            }
            fn invert(&self, _y: &HogDescriptor, ctx: &PatchContext<'_>) -> Result<Inversion> {
                Ok(Inversion::new(ctx.crop.map(|v| v.sqrt())))
            }
        }
        let hog = HogConfig::default();
        let cfg = BenchConfig::default();
        let (rows, reports) = size_sweep(&src, &ann, &Half, &hog, &[5, 20], &cfg).unwrap();
        // 20 cells need 176 pixels; the 60-pixel box (92 padded) is skipped.
        assert_eq!((rows[0].count, rows[0].skipped), (2, 0));
        assert_eq!((rows[1].count, rows[1].skipped), (1, 1));
        let single = run_benchmark(
            &src,
            &ann,
            &[&Half],
            &hog,
            &BenchConfig {
                cells: 5,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(single.to_csv(), reports[0].to_csv());
        assert_eq!(single.mean_of("half").unwrap(), rows[0].mean);
    }
}
