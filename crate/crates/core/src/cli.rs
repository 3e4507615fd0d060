//! The `fvtb` command-line front end.
//!
//! Exit codes: 0 success, 2 invalid flags or inputs, 3 missing model,
//! 4 geometry error or corrupt container. Every failure prints one line on
//! stderr. Model paths default to files in the `FVTB_CACHE` directory.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::bench::{
    build_inverters, run_benchmark, size_sweep, sweep_markdown, BenchConfig, DirectAlgo,
    DirectBasisConfig, Inverter, Models, PatchContext, ALGORITHMS, CONTEXT_PAD,
};
use crate::directopt::{direct_invert, DirectConfig};
use crate::elda::{elda_invert, Scales};
use crate::error::Error;
use crate::gaussian::{
    fit_stationary, image_eigenbasis, ImageBasis, Prior, RidgeInverter, StationaryConfig,
    StationaryModel,
};
use crate::hog::{compute_hog, positive_part, render_glyph, HogConfig, HogDescriptor};
use crate::paireddict::{train_paired, PairConfig, PairedDictionary};
use crate::raster::{Image, Inversion};
use crate::store::{
    from_container, load_annotations, load_corpus, save_model, to_container, Annotation, Container,
    Persist,
};

/// Environment variable naming the model cache directory.
pub const CACHE_ENV: &str = "FVTB_CACHE";
pub const PAIR_FILE: &str = "pair.fvtb";
pub const GAUSS_FILE: &str = "gauss.fvtb";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING_MODEL: i32 = 3;
pub const EXIT_DATA: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "fvtb",
    version,
    about = "Invert HOG descriptors back to images"
)]
pub struct Cli {
    /// Seed for every random choice (sampling, restarts).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the stationary pixel/HOG Gaussian (ridge, ELDA, direct).
    TrainGauss(TrainGaussArgs),
    /// Learn paired image/HOG dictionaries.
    TrainPair(TrainPairArgs),
    /// Invert an image's descriptor or a stored descriptor.
    Invert(InvertArgs),
    /// Render the HOG glyph diagram.
    Glyph(GlyphArgs),
    /// Benchmark algorithms on annotated patches (mean NCC per category).
    Bench(BenchArgs),
    /// Mean NCC of one algorithm across descriptor sizes.
    Sweep(SweepArgs),
    /// Describe a model container.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct HogArgs {
    /// Pixels per HOG cell.
    #[arg(long, default_value_t = 8)]
    pub cell_size: usize,
    /// Contrast-insensitive orientation bins.
    #[arg(long, default_value_t = 9)]
    pub orientations: usize,
    /// Clamp on normalized histogram values.
    #[arg(long, default_value_t = 0.2)]
    pub truncation: f64,
}

impl HogArgs {
    fn config(&self) -> HogConfig {
        HogConfig {
            cell_size: self.cell_size,
            orientations: self.orientations,
            truncation: self.truncation,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainGaussArgs {
    /// Corpus manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output container; defaults to $FVTB_CACHE/gauss.fvtb.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Largest template side (cells) the statistics support.
    #[arg(long, default_value_t = 10)]
    pub canonical_cells: usize,
    /// Longer image sides are randomly cropped to this many pixels.
    #[arg(long, default_value_t = 512)]
    pub max_side: usize,
    /// Verify manifest hashes and sizes.
    #[arg(long)]
    pub verify: bool,
    /// Also write a translated eigenbasis for direct optimization here.
    #[arg(long)]
    pub basis_out: Option<PathBuf>,
    /// Template side (cells) of the exported basis.
    #[arg(long, default_value_t = 10)]
    pub basis_cells: usize,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[command(flatten)]
    pub hog: HogArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BasisArgs {
    /// Eigenpatch side in pixels.
    #[arg(long, default_value_t = 32)]
    pub basis_patch: usize,
    /// Eigenpatches per placement.
    #[arg(long, default_value_t = 8)]
    pub basis_k: usize,
    /// Placement stride in pixels.
    #[arg(long, default_value_t = 16)]
    pub basis_stride: usize,
}

impl BasisArgs {
    fn config(&self) -> DirectBasisConfig {
        DirectBasisConfig {
            patch_pixels: self.basis_patch,
            k_per_placement: self.basis_k,
            stride: self.basis_stride,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainPairArgs {
    /// Corpus manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output container; defaults to $FVTB_CACHE/pair.fvtb.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dictionary atoms K.
    #[arg(long, default_value_t = 256)]
    pub atoms: usize,
    /// Patch side in cells.
    #[arg(long, default_value_t = 5)]
    pub patch_cells: usize,
    /// Training pairs N.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// L1 budget; defaults to 0.15 * sqrt(stacked dimension).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Learn RGB image atoms.
    #[arg(long)]
    pub color: bool,
    /// Verify manifest hashes and sizes.
    #[arg(long)]
    pub verify: bool,
    #[command(flatten)]
    pub hog: HogArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Algo {
    Pair,
    Ridge,
    Elda,
    Direct,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Ridge/ELDA prior as a fraction of each block's mean variance.
    #[arg(long, default_value_t = 0.01)]
    pub prior: f64,
    /// ELDA: detections averaged.
    #[arg(long, default_value_t = 100)]
    pub elda_k: usize,
    /// Direct: random restarts.
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    /// Direct: coordinate sweeps per restart.
    #[arg(long, default_value_t = 30)]
    pub sweeps: usize,
    /// Direct: initial coefficient scale.
    #[arg(long, default_value_t = 0.1)]
    pub init_scale: f64,
    #[command(flatten)]
    pub basis: BasisArgs,
}

impl SolverArgs {
    fn direct(&self, seed: u64) -> DirectConfig {
        DirectConfig {
            restarts: self.restarts,
            sweeps: self.sweeps,
            seed,
            init_scale: self.init_scale,
            ..Default::default()
        }
    }

    fn prior(&self) -> Result<Prior, Failure> {
        if !(self.prior >= 0.0) || !self.prior.is_finite() {
            return Err(Failure::usage(format!(
                "--prior must be a non-negative number, got {}",
                self.prior
            )));
        }
        Ok(Prior::Relative(self.prior))
    }
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["image", "descriptor"])))]
pub struct InvertArgs {
    /// Model container: a paired dictionary (pair), a Gaussian (ridge, elda,
    /// direct) or an image basis (direct). Defaults to the cache.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Algo::Pair)]
    pub algo: Algo,
    /// Image whose descriptor is inverted.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Box x,y,w,h cut from --image with a 16-pixel context margin.
    #[arg(long, requires = "image", value_parser = parse_box)]
    pub r#box: Option<(i64, i64, usize, usize)>,
    /// Resize the input to this descriptor geometry (N or WxH cells).
    #[arg(long, requires = "image", value_parser = parse_cells)]
    pub cells: Option<(usize, usize)>,
    /// Descriptor container with a single "hog" tensor.
    #[arg(long)]
    pub descriptor: Option<PathBuf>,
    /// Clamp negative descriptor weights to zero first.
    #[arg(long)]
    pub positive_part: bool,
    /// Also write an original|glyph|inversion montage next to --out.
    #[arg(long)]
    pub side_by_side: bool,
    /// ELDA database manifest.
    #[arg(long)]
    pub elda_db: Option<PathBuf>,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["image", "descriptor"])))]
pub struct GlyphArgs {
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Resize --image to this descriptor geometry (N or WxH cells).
    #[arg(long, requires = "image", value_parser = parse_cells)]
    pub cells: Option<(usize, usize)>,
    #[arg(long)]
    pub descriptor: Option<PathBuf>,
    /// Pixels per glyph cell.
    #[arg(long, default_value_t = 20)]
    pub cell_pixels: usize,
    #[arg(long)]
    pub positive_part: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub hog: HogArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    /// Corpus manifest whose entries the annotations reference.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Annotation JSONL; defaults to the manifest's annotations.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Verify manifest hashes and sizes.
    #[arg(long)]
    pub verify: bool,
    /// Paired dictionary; defaults to $FVTB_CACHE/pair.fvtb.
    #[arg(long)]
    pub pair_model: Option<PathBuf>,
    /// Gaussian model; defaults to $FVTB_CACHE/gauss.fvtb.
    #[arg(long)]
    pub gauss_model: Option<PathBuf>,
    /// ELDA database manifest; defaults to --manifest.
    #[arg(long)]
    pub elda_db: Option<PathBuf>,
    /// Keep same-category images in the ELDA database.
    #[arg(long)]
    pub no_category_exclusion: bool,
    /// Fail on the first failing patch.
    #[arg(long)]
    pub strict: bool,
    /// Directory for the reports.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated algorithms: pair, ridge, elda, direct, passthrough.
    #[arg(long, value_delimiter = ',', default_value = "pair,ridge")]
    pub algos: Vec<String>,
    /// Descriptor side in cells.
    #[arg(long, default_value_t = 10)]
    pub cells: usize,
    #[command(flatten)]
    pub corpus: CorpusArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value = "pair")]
    pub algo: String,
    /// Comma-separated descriptor sides in cells.
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,40")]
    pub sizes: Vec<usize>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Model container.
    pub model: PathBuf,
    /// Machine-readable output.
    #[arg(long)]
    pub json: bool,
}

fn parse_box(s: &str) -> Result<(i64, i64, usize, usize), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err("expected x,y,w,h".into());
    }
    let x = parts[0]
        .parse()
        .map_err(|_| format!("bad x {}", parts[0]))?;
    let y = parts[1]
        .parse()
        .map_err(|_| format!("bad y {}", parts[1]))?;
    let w: usize = parts[2]
        .parse()
        .map_err(|_| format!("bad width {}", parts[2]))?;
    let h: usize = parts[3]
        .parse()
        .map_err(|_| format!("bad height {}", parts[3]))?;
    if w == 0 || h == 0 {
        return Err("box must be non-empty".into());
    }
    Ok((x, y, w, h))
}

fn parse_cells(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = match s.split_once(['x', 'X']) {
        Some((w, h)) => (w, h),
        None => (s, s),
    };
    let w: usize = w
        .trim()
        .parse()
        .map_err(|_| format!("bad cell count {s}"))?;
    let h: usize = h
        .trim()
        .parse()
        .map_err(|_| format!("bad cell count {s}"))?;
    if w == 0 || h == 0 {
        return Err("cell counts must be positive".into());
    }
    Ok((w, h))
}

/// A command failure: exit code plus a one-line message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn missing_model(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_MISSING_MODEL,
            message: message.into(),
        }
    }
}

/// Library errors outside model loading: configuration problems and
/// unreadable inputs are usage errors; everything about data shape or
/// integrity is exit 4.
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Io { .. } | Error::EmptyCorpus(_) => EXIT_USAGE,
            Error::Dimension(_)
            | Error::Geometry(_)
            | Error::Corrupt(_)
            | Error::Version { .. }
            | Error::Codec { .. }
            | Error::Numerical(_) => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("fvtb: {} (see --help)", first.trim_start_matches("error: "));
            return EXIT_USAGE;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
    log::set_max_level(level);

    let threads = match cli.threads {
        Some(0) => {
            eprintln!("fvtb: --threads must be at least 1");
            return EXIT_USAGE;
        }
        Some(n) => n,
        None => std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("fvtb: cannot start {threads} worker threads: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("fvtb: {}", f.message.replace('\n', " "));
            f.code
        }
    }
}

fn dispatch(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::TrainGauss(a) => cmd_train_gauss(a, cli.seed),
        Command::TrainPair(a) => cmd_train_pair(a, cli.seed),
        Command::Invert(a) => cmd_invert(a, cli.seed),
        Command::Glyph(a) => cmd_glyph(a),
        Command::Bench(a) => cmd_bench(a, cli.seed),
        Command::Sweep(a) => cmd_sweep(a, cli.seed),
        Command::Stats(a) => cmd_stats(a),
    }
}

/// `$FVTB_CACHE/<file>`, if the variable is set.
fn cache_path(file: &str) -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV)
        .filter(|v| !v.is_empty())
        .map(|d| PathBuf::from(d).join(file))
}

fn output_path(out: &Option<PathBuf>, file: &str) -> CmdResult<PathBuf> {
    let path = match out {
        Some(p) => p.clone(),
        None => cache_path(file).ok_or_else(|| {
            Failure::usage(format!("--out is required when {CACHE_ENV} is not set"))
        })?,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::from(Error::io(dir, e)))?;
    }
    Ok(path)
}

fn model_path(given: &Option<PathBuf>, file: &str, what: &str) -> CmdResult<PathBuf> {
    given.clone().or_else(|| cache_path(file)).ok_or_else(|| {
        Failure::missing_model(format!(
            "{what} needs a model: pass its path or set {CACHE_ENV}"
        ))
    })
}

/// Read a model container: a missing or unreadable file is exit 3, a
/// malformed one exit 4.
fn open_model(path: &Path) -> CmdResult<Container> {
    if !path.is_file() {
        return Err(Failure::missing_model(format!(
            "model not found: {}",
            path.display()
        )));
    }
    Container::load(path).map_err(|e| match e {
        Error::Io { .. } => {
            Failure::missing_model(format!("cannot read model {}: {e}", path.display()))
        }
        other => Failure {
            code: EXIT_DATA,
            message: format!("{}: {other}", path.display()),
        },
    })
}

fn decode<T: Persist>(c: &Container, path: &Path) -> CmdResult<T> {
    from_container(c).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })
}

fn load<T: Persist>(path: &Path) -> CmdResult<T> {
    decode(&open_model(path)?, path)
}

fn training_meta(command: &str, manifest: &Path, seed: u64, extra: Value) -> Value {
    json!({
        "command": command,
        "manifest": manifest.to_string_lossy(),
        "seed": seed,
        "parameters": extra,
    })
}

fn cmd_train_gauss(a: &TrainGaussArgs, seed: u64) -> CmdResult {
    let hog = a.hog.config();
    hog.validate()?;
    let out = output_path(&a.out, GAUSS_FILE)?;
    let corpus = load_corpus(&a.manifest, a.verify)?;
    let config = StationaryConfig {
        canonical_cells: a.canonical_cells,
        max_side: a.max_side,
    };
    let model = fit_stationary(&corpus, &hog, &config, seed)?;
    let meta = training_meta(
        "train-gauss",
        &a.manifest,
        seed,
        json!({"canonical_cells": a.canonical_cells, "max_side": a.max_side}),
    );
    let container = to_container(&model, Some(meta))?;
    container.save(&out)?;
    println!("wrote {} ({} samples)", out.display(), model.sample_count);
    if let Some(path) = &a.basis_out {
        let b = a.basis.config();
        let (w, h) = hog.pixel_geometry(a.basis_cells, a.basis_cells);
        let basis = image_eigenbasis(&model, b.patch_pixels, b.k_per_placement, (w, h), b.stride)?;
        let path = output_path(&Some(path.clone()), "")?;
        // The basis names its Gaussian by configuration hash rather than
        // by path, so identical runs write identical files anywhere.
        let meta = training_meta(
            "train-gauss",
            &a.manifest,
            seed,
            json!({
                "basis_cells": a.basis_cells,
                "basis_patch": b.patch_pixels,
                "basis_k": b.k_per_placement,
                "basis_stride": b.stride,
                "gaussian_config_hash": container.meta_str("config_hash")?,
            }),
        );
        save_model(&basis, &path, Some(meta))?;
        println!("wrote {} ({} basis vectors)", path.display(), basis.count());
    }
    Ok(())
}

fn cmd_train_pair(a: &TrainPairArgs, seed: u64) -> CmdResult {
    let hog = a.hog.config();
    hog.validate()?;
    let out = output_path(&a.out, PAIR_FILE)?;
    let corpus = load_corpus(&a.manifest, a.verify)?;
    let config = PairConfig {
        patch_cells: a.patch_cells,
        atoms: a.atoms,
        lambda: a.lambda,
        samples: a.samples,
        channels: if a.color { 3 } else { 1 },
        epochs: a.epochs,
        seed,
    };
    let model = train_paired(&corpus, &hog, &config)?;
    let meta = training_meta(
        "train-pair",
        &a.manifest,
        seed,
        json!({"samples": a.samples, "epochs": a.epochs}),
    );
    save_model(&model, &out, Some(meta))?;
    println!(
        "wrote {} (objective {:.6} after {} epochs)",
        out.display(),
        model.history().last().copied().unwrap_or(f64::NAN),
        a.epochs
    );
    Ok(())
}

/// Load and prepare `--image`: optionally cut the box with context, then
/// optionally resize to a descriptor geometry.
fn input_image(
    path: &Path,
    bx: Option<(i64, i64, usize, usize)>,
    cells: Option<(usize, usize)>,
    s: usize,
) -> CmdResult<Image> {
    let img = Image::load(path).map_err(Failure::from)?;
    let img = match bx {
        Some((x, y, w, h)) => img.crop_padded(
            x - CONTEXT_PAD,
            y - CONTEXT_PAD,
            w + 2 * CONTEXT_PAD as usize,
            h + 2 * CONTEXT_PAD as usize,
        ),
        None => img,
    };
    Ok(match cells {
        Some((cx, cy)) => img.resize((cx + 2) * s, (cy + 2) * s),
        None => img,
    })
}

/// A descriptor container given as input: a missing file is a bad flag,
/// not a missing model.
fn load_descriptor(path: &Path) -> CmdResult<HogDescriptor> {
    load::<HogDescriptor>(path).map_err(|f| Failure {
        code: if f.code == EXIT_MISSING_MODEL {
            EXIT_USAGE
        } else {
            f.code
        },
        message: f.message.replace("model not found", "descriptor not found"),
    })
}

fn descriptor_of(img: &Image, hog: &HogConfig) -> CmdResult<HogDescriptor> {
    Ok(compute_hog(&img.to_luminance(), hog)?)
}

fn montage(
    original: Option<&Image>,
    y: &HogDescriptor,
    hog: &HogConfig,
    inv: &Image,
) -> CmdResult<Image> {
    let (w, h) = (inv.width(), inv.height());
    let glyph = render_glyph(y, hog.orientations, hog.cell_size.max(8) * 2)?;
    // The glyph covers the interior cells; place it inside a black border of
    // one cell so it lines up with the inversion.
    let s = hog.cell_size;
    let inner = glyph.resize(w - 2 * s, h - 2 * s);
    let mut framed = Image::zeros(w, h, 1);
    for py in 0..inner.height() {
        for px in 0..inner.width() {
            framed.set(px + s, py + s, 0, inner.get(px, py, 0));
        }
    }
    let mut parts: Vec<&Image> = vec![];
    if let Some(o) = original {
        parts.push(o);
    }
    parts.push(&framed);
    parts.push(inv);
    Ok(Image::hconcat(&parts))
}

fn montage_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "inversion".into());
    out.with_file_name(format!("{stem}-side.png"))
}

fn cmd_invert(a: &InvertArgs, seed: u64) -> CmdResult {
    let prior = a.solver.prior()?;
    let default_file = if a.algo == Algo::Pair {
        PAIR_FILE
    } else {
        GAUSS_FILE
    };
    let path = model_path(
        &a.model,
        default_file,
        &format!("--algo {:?}", a.algo).to_lowercase(),
    )?;
    let container = open_model(&path)?;
    let kind = container.meta_str("model_type").map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })?;
    enum Loaded {
        Pair(PairedDictionary),
        Gauss(StationaryModel),
        Basis(ImageBasis),
    }
    let loaded = match (a.algo, kind) {
        (Algo::Pair, _) => Loaded::Pair(decode(&container, &path)?),
        (Algo::Direct, k) if k == ImageBasis::KIND => Loaded::Basis(decode(&container, &path)?),
        _ => Loaded::Gauss(decode(&container, &path)?),
    };
    let hog = match &loaded {
        Loaded::Pair(p) => *p.hog_config(),
        Loaded::Gauss(g) => g.hog,
        Loaded::Basis(_) => HogConfig::default(),
    };

    let (original, y) = match (&a.image, &a.descriptor) {
        (Some(img_path), _) => {
            let img = input_image(img_path, a.r#box, a.cells, hog.cell_size)?;
            let y = descriptor_of(&img, &hog)?;
            let (w, h) = y.pixel_geometry();
            let img = img.crop(0, 0, w, h)?;
            (Some(img), y)
        }
        (None, Some(d)) => (None, load_descriptor(d)?),
        (None, None) => return Err(Failure::usage("one of --image or --descriptor is required")),
    };
    if y.depth != hog.depth() || y.cell_size != hog.cell_size {
        return Err(Failure {
            code: EXIT_DATA,
            message: format!(
                "descriptor depth {} / cell size {} does not match the model's {} / {}",
                y.depth,
                y.cell_size,
                hog.depth(),
                hog.cell_size
            ),
        });
    }
    let y = if a.positive_part {
        positive_part(&y)
    } else {
        y
    };

    let inversion: Inversion = match (&loaded, a.algo) {
        (Loaded::Pair(p), _) => p.invert(&y)?,
        (Loaded::Gauss(g), Algo::Ridge) => RidgeInverter::new(g, prior).invert(&y)?,
        (Loaded::Gauss(g), Algo::Elda) => {
            let db_path = a
                .elda_db
                .as_ref()
                .ok_or_else(|| Failure::usage("--algo elda needs --elda-db"))?;
            let db = load_corpus(db_path, false)?;
            let ridge = RidgeInverter::new(g, prior);
            let gm = ridge.gaussian_for(y.cells_x, y.cells_y)?;
            elda_invert(&gm, &y, &db, a.solver.elda_k, &Scales::Ladder, &hog)?.inversion
        }
        (Loaded::Gauss(g), _) => {
            let algo = DirectAlgo::new(g, a.solver.basis.config(), a.solver.direct(seed));
            let crop = original.clone().unwrap_or_else(|| Image::zeros(1, 1, 1));
            let ctx = PatchContext {
                crop: &crop,
                category: "",
                seed,
            };
            algo.invert(&y, &ctx)?
        }
        (Loaded::Basis(b), _) => direct_invert(b, &y, &a.solver.direct(seed), &hog)?.inversion,
    };
    let out = output_path(&Some(a.out.clone()), "")?;
    inversion.display.save(&out)?;
    println!("wrote {}", out.display());
    if a.side_by_side {
        let m = montage(original.as_ref(), &y, &hog, &inversion.display)?;
        let p = montage_path(&out);
        m.save(&p)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_glyph(a: &GlyphArgs) -> CmdResult {
    let hog = a.hog.config();
    hog.validate()?;
    let y = match (&a.image, &a.descriptor) {
        (Some(p), _) => descriptor_of(&input_image(p, None, a.cells, hog.cell_size)?, &hog)?,
        (None, Some(d)) => load_descriptor(d)?,
        (None, None) => return Err(Failure::usage("one of --image or --descriptor is required")),
    };
    let y = if a.positive_part {
        positive_part(&y)
    } else {
        y
    };
    let g = render_glyph(&y, hog.orientations, a.cell_pixels)?;
    let out = output_path(&Some(a.out.clone()), "")?;
    g.save(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}

struct BenchInputs {
    source: crate::store::ManifestSource,
    annotations: Vec<Annotation>,
    pair: Option<PairedDictionary>,
    gauss: Option<StationaryModel>,
    elda_db: Option<crate::store::ManifestSource>,
    /// Stored config hash of each loaded model file.
    hashes: serde_json::Map<String, Value>,
}

fn bench_inputs(c: &CorpusArgs, algos: &[String]) -> CmdResult<BenchInputs> {
    for n in algos {
        if !ALGORITHMS.contains(&n.as_str()) {
            return Err(Failure::usage(format!(
                "unknown algorithm {n} (expected one of {})",
                ALGORITHMS.join(", ")
            )));
        }
    }
    let wants = |n: &str| algos.iter().any(|a| a == n);
    let source = load_corpus(&c.manifest, c.verify)?;
    let ann_path = match (&c.annotations, &source.manifest.annotations) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => p.clone(),
        (None, None) => {
            return Err(Failure::usage(
                "the manifest names no annotations; pass --annotations",
            ))
        }
    };
    let annotations = load_annotations(&ann_path)?;
    let mut hashes = serde_json::Map::new();
    let mut load_hashed = |key: &str, path: PathBuf| -> CmdResult<Container> {
        let c = open_model(&path)?;
        hashes.insert(
            key.into(),
            c.metadata
                .get("config_hash")
                .cloned()
                .unwrap_or(Value::Null),
        );
        Ok(c)
    };
    let pair = if wants("pair") {
        let path = model_path(&c.pair_model, PAIR_FILE, "algorithm pair")?;
        Some(decode::<PairedDictionary>(
            &load_hashed("pair", path.clone())?,
            &path,
        )?)
    } else {
        None
    };
    let gauss = if wants("ridge") || wants("elda") || wants("direct") {
        let who = ["ridge", "elda", "direct"]
            .into_iter()
            .find(|n| wants(n))
            .unwrap();
        let path = model_path(&c.gauss_model, GAUSS_FILE, &format!("algorithm {who}"))?;
        Some(decode::<StationaryModel>(
            &load_hashed("gauss", path.clone())?,
            &path,
        )?)
    } else {
        None
    };
    let elda_db = if wants("elda") {
        Some(match &c.elda_db {
            Some(p) => load_corpus(p, c.verify)?,
            None => source.clone(),
        })
    } else {
        None
    };
    Ok(BenchInputs {
        source,
        annotations,
        pair,
        gauss,
        elda_db,
        hashes,
    })
}

fn models_of<'a>(inputs: &'a BenchInputs, c: &CorpusArgs, seed: u64) -> CmdResult<Models<'a>> {
    let elda_database = inputs.elda_db.as_ref().map(|db| {
        let cats = (!c.no_category_exclusion).then(|| {
            (0..db.manifest.entries.len())
                .map(|i| {
                    let label = &db.manifest.entries[i].path;
                    inputs
                        .annotations
                        .iter()
                        .filter(|a| &a.image == label)
                        .map(|a| a.category.clone())
                        .collect::<BTreeSet<String>>()
                })
                .collect()
        });
        (db as &dyn crate::source::ImageSource, cats)
    });
    Ok(Models {
        pair: inputs.pair.as_ref(),
        gaussian: inputs.gauss.as_ref(),
        prior: c.solver.prior()?,
        direct: c.solver.direct(seed),
        direct_basis: c.solver.basis.config(),
        elda_k: c.solver.elda_k,
        elda_database,
    })
}

fn write_report(dir: &Path, name: &str, text: &str) -> CmdResult<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::from(Error::io(dir, e)))?;
    let p = dir.join(name);
    std::fs::write(&p, text).map_err(|e| Failure::from(Error::io(&p, e)))?;
    Ok(p)
}

fn cmd_bench(a: &BenchArgs, seed: u64) -> CmdResult {
    let inputs = bench_inputs(&a.corpus, &a.algos)?;
    let models = models_of(&inputs, &a.corpus, seed)?;
    let set = build_inverters(&a.algos, models)?;
    let config = BenchConfig {
        cells: a.cells,
        seed,
        strict: a.corpus.strict,
    };
    let mut report = set
        .with(|inv| run_benchmark(&inputs.source, &inputs.annotations, inv, set.hog(), &config))?;
    report
        .metadata
        .insert("corpus".into(), a.corpus.manifest.to_string_lossy().into());
    report
        .metadata
        .insert("config_hashes".into(), Value::Object(inputs.hashes.clone()));
    let csv = write_report(&a.corpus.out_dir, "bench.csv", &report.to_csv())?;
    let md = write_report(&a.corpus.out_dir, "bench.md", &report.to_markdown())?;
    if !report.failures.is_empty() {
        log::warn!("{} inversions failed", report.failures.len());
    }
    let row: Vec<String> = report
        .overall
        .iter()
        .map(|r| format!("{} {:.4} (n={})", r.algorithm, r.mean, r.count))
        .collect();
    println!("mean: {}", row.join(" | "));
    println!("failures: {}", report.failures.len());
    println!("wrote {} and {}", csv.display(), md.display());
    Ok(())
}

fn cmd_sweep(a: &SweepArgs, seed: u64) -> CmdResult {
    let algos = vec![a.algo.clone()];
    let inputs = bench_inputs(&a.corpus, &algos)?;
    let models = models_of(&inputs, &a.corpus, seed)?;
    let set = build_inverters(&algos, models)?;
    let config = BenchConfig {
        cells: 0,
        seed,
        strict: a.corpus.strict,
    };
    let (rows, reports) = set.with(|inv| {
        size_sweep(
            &inputs.source,
            &inputs.annotations,
            inv[0],
            set.hog(),
            &a.sizes,
            &config,
        )
    })?;
    let mut csv = String::new();
    for (i, r) in reports.iter().enumerate() {
        let text = r.to_csv();
        csv.push_str(if i == 0 {
            &text
        } else {
            text.split_once('\n').map_or("", |t| t.1)
        });
    }
    let csv_path = write_report(&a.corpus.out_dir, "sweep.csv", &csv)?;
    let md = sweep_markdown(&a.algo, &rows);
    let md_path = write_report(&a.corpus.out_dir, "sweep.md", &md)?;
    for r in &rows {
        println!(
            "{0}x{0}: mean {1:.4} (n={2}, skipped {3})",
            r.cells, r.mean, r.count, r.skipped
        );
    }
    println!("wrote {} and {}", csv_path.display(), md_path.display());
    Ok(())
}

fn cmd_stats(a: &StatsArgs) -> CmdResult {
    let c = Container::load(&a.model).map_err(|e| match e {
        Error::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
            Failure::missing_model(format!("model not found: {}", a.model.display()))
        }
        other => Failure {
            code: EXIT_DATA,
            message: format!("{}: {other}", a.model.display()),
        },
    })?;
    let get = |k: &str| c.metadata.get(k).cloned().unwrap_or(Value::Null);
    let tensors: serde_json::Map<String, Value> = c
        .tensors()
        .map(|(name, t)| {
            (
                name.to_string(),
                json!({"dtype": t.dtype, "shape": t.shape}),
            )
        })
        .collect();
    if a.json {
        let v = json!({
            "model_type": get("model_type"),
            "config_hash": get("config_hash"),
            "tensors": tensors,
            "config": get("config"),
            "training": get("training"),
        });
        println!("{}", serde_json::to_string_pretty(&v).expect("JSON value"));
        return Ok(());
    }
    println!("model_type: {}", get("model_type").as_str().unwrap_or("?"));
    println!(
        "config_hash: {}",
        get("config_hash").as_str().unwrap_or("?")
    );
    for (name, t) in c.tensors() {
        let shape: Vec<String> = t.shape.iter().map(usize::to_string).collect();
        println!("{name}: {} ({:?})", shape.join("×"), t.dtype);
    }
    println!("config: {}", get("config"));
    println!("training: {}", get("training"));
    Ok(())
}
