//! Command-line front end: `register`, `evaluate`, `sweep` and `info`.
//!
//! Exit codes: 0 success, 2 input error, 3 registration failure, 4 internal
//! error. Every `register` run leaves a `manifest.json` in the output
//! directory, written atomically at the end of the run.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::evaluation::{self, EvalOptions, LandmarkSet, MetricsReport, TreMode};
use crate::pipeline::{self, Ladder, PartialResult, PipelineConfig, RegistrationResult, StageTimings};
use crate::pyramid::{load_raster, to_gray_inverted, Image, Pyramid, Raster};
use crate::transform::{AffineParams, DisplacementGrid, RigidParams, Transform};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_REGISTRATION: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "histreg",
    version,
    about = "Rigid, affine and deformable registration of 2D histology images"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "HISTREG_THREADS")]
    pub threads: Option<usize>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register a template image onto a reference image.
    Register(RegisterArgs),
    /// Compute landmark errors of a stored transform.
    Evaluate(EvaluateArgs),
    /// Register and evaluate at several finest resolutions.
    Sweep(SweepArgs),
    /// Print the pyramid and the level ladders for an image.
    Info(InfoArgs),
}

/// Grid size given as `N` or `M1xM2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridNodes(pub [usize; 2]);

impl FromStr for GridNodes {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad node count {v:?}"));
        match s.split_once(['x', 'X']) {
            Some((a, b)) => Ok(GridNodes([parse(a)?, parse(b)?])),
            None => {
                let n = parse(s)?;
                Ok(GridNodes([n, n]))
            }
        }
    }
}

/// Pipeline settings shared by `register`, `sweep` and `info`. Flags override
/// values from `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Pipeline configuration (JSON or TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Finest registration resolution, in physical units per pixel.
    #[arg(long)]
    pub finest_resolution: Option<f64>,
    /// Resolution at which pre-alignment ends.
    #[arg(long)]
    pub prealign_resolution: Option<f64>,
    /// Curvature regularization weight.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// NGF edge parameter.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Control grid size, `N` or `M1xM2`.
    #[arg(long)]
    pub grid_nodes: Option<GridNodes>,
    /// Number of pre-alignment rotation candidates.
    #[arg(long)]
    pub rotations: Option<usize>,
    /// Physical size of an input pixel.
    #[arg(long)]
    pub spacing: Option<f64>,
    /// Use the reproducible reduction order.
    #[arg(long)]
    pub deterministic: bool,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<PipelineConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.finest_resolution {
            cfg.finest_resolution = Some(v);
        }
        if let Some(v) = self.prealign_resolution {
            cfg.prealign_resolution = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.epsilon {
            cfg.ngf_epsilon = v;
        }
        if let Some(GridNodes(n)) = self.grid_nodes {
            cfg.grid_nodes = n;
        }
        if let Some(v) = self.rotations {
            cfg.n_rotations = v;
        }
        if let Some(v) = self.spacing {
            cfg.input_spacing = v;
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub template: PathBuf,
    #[arg(long, default_value = "histreg-out")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    TemplateToReference,
    ReferenceToTemplate,
}

impl From<ModeArg> for TreMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::TemplateToReference => TreMode::TemplateToReference,
            ModeArg::ReferenceToTemplate => TreMode::ReferenceToTemplate,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// `deformation.bin`, a text grid (`.txt`) or `transform.json`.
    #[arg(long)]
    pub transform: PathBuf,
    #[arg(long)]
    pub reference_landmarks: PathBuf,
    #[arg(long)]
    pub template_landmarks: PathBuf,
    #[arg(long, default_value = "histreg-eval")]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "pair")]
    pub pair: String,
    #[arg(long, value_enum, default_value = "template-to-reference")]
    pub mode: ModeArg,
    /// Pixel spacing; the inverse-mapping tolerance is `1e-6` of it.
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub template: PathBuf,
    #[arg(long)]
    pub reference_landmarks: PathBuf,
    #[arg(long)]
    pub template_landmarks: PathBuf,
    /// Comma-separated finest resolutions, run in the given order.
    #[arg(long, value_delimiter = ',', required = true)]
    pub resolutions: Vec<f64>,
    #[arg(long, default_value = "histreg-sweep")]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "pair")]
    pub pair: String,
    #[arg(long, value_enum, default_value = "template-to-reference")]
    pub mode: ModeArg,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct InfoArgs {
    pub image: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INTERNAL,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::StageFailed { .. } => EXIT_REGISTRATION,
            _ => EXIT_INPUT,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    Error::io(path, e).into()
}

pub fn load_config(path: &Path) -> Result<PipelineConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let cfg: PipelineConfig = if is_toml {
        toml::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
    } else {
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
    };
    Ok(cfg)
}

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(bytes)
            .and_then(|_| f.sync_all())
            .map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::internal(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    InputError,
    RegistrationFailed,
    InternalError,
}

impl RunStatus {
    fn from_code(code: i32) -> Self {
        match code {
            EXIT_OK => RunStatus::Ok,
            EXIT_INPUT => RunStatus::InputError,
            EXIT_REGISTRATION => RunStatus::RegistrationFailed,
            _ => RunStatus::InternalError,
        }
    }
}

/// Pyramid levels used by each stage, coarsest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ladders {
    pub prealign: Ladder,
    pub affine: Ladder,
    pub deformable: Ladder,
}

/// Record of one `register` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub inputs: BTreeMap<String, PathBuf>,
    /// Effective configuration; feeding it back through `--config` repeats the run.
    pub config: PipelineConfig,
    pub threads: usize,
    pub ladders: Option<Ladders>,
    pub timings: Option<StageTimings>,
    pub artifacts: BTreeMap<String, PathBuf>,
    pub status: RunStatus,
    pub message: Option<String>,
}

impl RunManifest {
    fn new(cfg: PipelineConfig) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            inputs: BTreeMap::new(),
            config: cfg,
            threads: rayon::current_num_threads(),
            ladders: None,
            timings: None,
            artifacts: BTreeMap::new(),
            status: RunStatus::Ok,
            message: None,
        }
    }
}

/// Rigid and affine parameters of a run, stored as `transform.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformFile {
    pub rigid: Option<RigidParams>,
    pub affine: Option<AffineParams>,
    /// File name of the deformation field, relative to this file.
    pub deformation: Option<String>,
}

pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_INPUT;
        }
        // a pool that already exists keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match cli.command {
        Command::Register(a) => cmd_register(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Info(a) => cmd_info(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn load_pair(reference: &Path, template: &Path) -> Result<(Raster, Raster), CliError> {
    let r = load_raster(reference)?;
    let t = load_raster(template)?;
    Ok((r, t))
}

/// Reference and template pyramids as the pipeline builds them.
fn pyramids(r: &Raster, t: &Raster, cfg: &PipelineConfig) -> Result<(Image, Pyramid, Pyramid), CliError> {
    let ri = to_gray_inverted(r, cfg.input_spacing)?;
    let ti = to_gray_inverted(t, cfg.input_spacing)?;
    let rp = pipeline::build_pyramid_for(ri.clone(), cfg)?;
    let tp = pipeline::build_pyramid_for(ti, cfg)?;
    Ok((ri, rp, tp))
}

fn planned_ladders(r: &Pyramid, t: &Pyramid, cfg: &PipelineConfig) -> Ladders {
    let p = if t.len() < r.len() { t } else { r };
    Ladders {
        prealign: pipeline::prealign_ladder(p, cfg),
        affine: pipeline::stage_ladder(p, cfg, cfg.affine_levels),
        deformable: pipeline::stage_ladder(p, cfg, cfg.deformable_levels),
    }
}

pub fn cmd_register(a: &RegisterArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::new(PipelineConfig::default());
    manifest.inputs.insert("reference".into(), a.reference.clone());
    manifest.inputs.insert("template".into(), a.template.clone());
    if let Some(c) = &a.config.config {
        manifest.inputs.insert("config".into(), c.clone());
    }
    fs::create_dir_all(&a.out_dir).map_err(|e| io_err(&a.out_dir, e))?;
    let outcome = register_into(a, &mut manifest);
    if let Err(e) = &outcome {
        manifest.status = RunStatus::from_code(e.code);
        manifest.message = Some(e.message.clone());
    }
    write_json(&a.out_dir.join("manifest.json"), &manifest)?;
    outcome
}

fn register_into(a: &RegisterArgs, manifest: &mut RunManifest) -> Result<(), CliError> {
    let cfg = a.config.resolve()?;
    manifest.config = cfg.clone();
    let (r, t) = load_pair(&a.reference, &a.template)?;
    let (ref_img, rp, tp) = pyramids(&r, &t, &cfg)?;
    manifest.ladders = Some(planned_ladders(&rp, &tp, &cfg));
    log::info!("registering {} onto {}", a.template.display(), a.reference.display());
    match pipeline::register_pyramids(&rp, &tp, &cfg) {
        Ok(res) => {
            manifest.ladders = Some(Ladders {
                prealign: res.prealign.ladder.clone(),
                affine: res.affine_stage.ladder.clone(),
                deformable: res.deformable_stage.ladder.clone(),
            });
            manifest.timings = Some(res.timings);
            write_artifacts(&a.out_dir, &ref_img, &t, &partial_of(&res), manifest)?;
            write_json(&a.out_dir.join("levels.json"), &level_reports(&res))?;
            manifest.artifacts.insert("levels".into(), "levels.json".into());
            Ok(())
        }
        Err(Error::StageFailed { stage, reason, best }) => {
            write_artifacts(&a.out_dir, &ref_img, &t, &best, manifest)?;
            Err(CliError {
                code: EXIT_REGISTRATION,
                message: format!("{stage} stage failed: {reason}"),
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn partial_of(res: &RegistrationResult) -> PartialResult {
    PartialResult {
        rigid: Some(res.rigid),
        affine: Some(res.affine),
        deformable: Some(res.deformable.clone()),
    }
}

#[derive(Serialize)]
struct LevelSummary<'a> {
    prealign_selected: usize,
    prealign: &'a [pipeline::LevelReport],
    affine: &'a [pipeline::LevelReport],
    deformable: &'a [pipeline::LevelReport],
}

fn level_reports(res: &RegistrationResult) -> LevelSummary<'_> {
    let sel = res.prealign.selected;
    LevelSummary {
        prealign_selected: res.prealign.candidates[sel].k,
        prealign: &res.prealign.candidates[sel].levels,
        affine: &res.affine_stage.levels,
        deformable: &res.deformable_stage.levels,
    }
}

/// Best available transform of a (possibly partial) result.
fn best_transform(best: &PartialResult) -> Option<Transform> {
    match (&best.deformable, best.affine, best.rigid) {
        (Some(g), _, _) => Some(Transform::Displacement(g.clone())),
        (None, Some(a), _) => Some(Transform::Affine(a)),
        (None, None, Some(r)) => Some(Transform::Rigid(r)),
        _ => None,
    }
}

fn write_artifacts(
    out: &Path,
    reference: &Image,
    template: &Raster,
    best: &PartialResult,
    manifest: &mut RunManifest,
) -> Result<(), CliError> {
    let mut tf = TransformFile {
        rigid: best.rigid,
        affine: best.affine,
        deformation: None,
    };
    if let Some(g) = &best.deformable {
        let bin = out.join("deformation.bin");
        let mut bytes = Vec::new();
        g.write_binary(&mut bytes).map_err(|e| io_err(&bin, e))?;
        write_atomic(&bin, &bytes)?;
        let txt = out.join("deformation.txt");
        let mut text = Vec::new();
        g.write_text(&mut text).map_err(|e| io_err(&txt, e))?;
        write_atomic(&txt, &text)?;
        tf.deformation = Some("deformation.bin".into());
        manifest
            .artifacts
            .insert("deformation".into(), "deformation.bin".into());
        manifest
            .artifacts
            .insert("deformation_text".into(), "deformation.txt".into());
    }
    write_json(&out.join("transform.json"), &tf)?;
    manifest.artifacts.insert("transform".into(), "transform.json".into());
    if let Some(y) = best_transform(best) {
        let path = out.join("warped.png");
        save_warped(template, reference, &y, manifest.config.input_spacing, &path)?;
        manifest.artifacts.insert("warped".into(), "warped.png".into());
    }
    Ok(())
}

/// Samples every template channel at `y(x)` for each reference pixel `x` and
/// writes a 16-bit PNG. Points that leave the template become background.
pub fn warp_raster(template: &Raster, reference: &Image, y: &Transform, spacing: f64) -> Result<Raster, CliError> {
    let (w, h, c) = (template.width, template.height, template.channels);
    let mut out = vec![0.0; reference.len() * c];
    for ch in 0..c {
        // warp in inverted space so the outside fills with white background
        let data: Vec<f64> = template.data.iter().skip(ch).step_by(c).map(|v| 1.0 - v).collect();
        let img = Image::new(w, h, spacing, data)?;
        let warped = img.warp_onto(reference, |x| y.apply(x));
        for (k, v) in warped.data().iter().enumerate() {
            out[k * c + ch] = 1.0 - v;
        }
    }
    Ok(Raster::new(reference.width(), reference.height(), c, out)?)
}

fn save_warped(template: &Raster, reference: &Image, y: &Transform, spacing: f64, path: &Path) -> Result<(), CliError> {
    let warped = warp_raster(template, reference, y, spacing)?;
    let raw: Vec<u16> = warped
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let color = match warped.channels {
        1 => image::ExtendedColorType::L16,
        2 => image::ExtendedColorType::La16,
        3 => image::ExtendedColorType::Rgb16,
        _ => image::ExtendedColorType::Rgba16,
    };
    let bytes: Vec<u8> = raw.iter().flat_map(|v| v.to_ne_bytes()).collect();
    let mut buf = Vec::new();
    image::ImageEncoder::write_image(
        image::codecs::png::PngEncoder::new(&mut buf),
        &bytes,
        warped.width as u32,
        warped.height as u32,
        color,
    )
    .map_err(|e| CliError::internal(format!("{}: {e}", path.display())))?;
    write_atomic(path, &buf)
}

/// Loads a transform from a grid file or `transform.json`.
pub fn load_transform(path: &Path) -> Result<Transform, CliError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "json" => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let tf: TransformFile =
                serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            if let Some(name) = &tf.deformation {
                let grid_path = path.parent().unwrap_or(Path::new(".")).join(name);
                return Ok(Transform::Displacement(DisplacementGrid::load(&grid_path)?));
            }
            match (tf.affine, tf.rigid) {
                (Some(a), _) => Ok(Transform::Affine(a)),
                (None, Some(r)) => Ok(Transform::Rigid(r)),
                _ => Err(CliError::input(format!("{}: no transform in file", path.display()))),
            }
        }
        "txt" => {
            let f = File::open(path).map_err(|e| io_err(path, e))?;
            Ok(Transform::Displacement(DisplacementGrid::read_text(
                std::io::BufReader::new(f),
            )?))
        }
        _ => Ok(Transform::Displacement(DisplacementGrid::load(path)?)),
    }
}

fn write_report(dir: &Path, report: &MetricsReport) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_json(&dir.join("metrics.json"), report)?;
    let csv = format!("{}\n{}\n", MetricsReport::CSV_HEADER, report.csv_row());
    write_atomic(&dir.join("metrics.csv"), csv.as_bytes())?;
    let mut tsv = Vec::new();
    report.write_tsv(&mut tsv).map_err(|e| io_err(dir, e))?;
    write_atomic(&dir.join("tre.tsv"), &tsv)
}

fn load_landmarks(r: &Path, t: &Path) -> Result<(LandmarkSet, LandmarkSet), CliError> {
    let lr = LandmarkSet::load(r)?;
    let lt = LandmarkSet::load(t)?;
    if lr.len() != lt.len() {
        return Err(CliError::input(format!(
            "landmark count mismatch: {} has {} points, {} has {}",
            r.display(),
            lr.len(),
            t.display(),
            lt.len()
        )));
    }
    Ok((lr, lt))
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    if !(a.spacing > 0.0) || !a.spacing.is_finite() {
        return Err(CliError::input(format!("spacing must be positive, got {}", a.spacing)));
    }
    let (lr, lt) = load_landmarks(&a.reference_landmarks, &a.template_landmarks)?;
    let y = load_transform(&a.transform)?;
    let opts = EvalOptions {
        mode: a.mode.into(),
        tolerance: 1e-6 * a.spacing,
    };
    let report = evaluation::evaluate(&a.pair, &y, &lr, &lt, opts)?;
    write_report(&a.out_dir, &report)?;
    println!(
        "{}: MTRE {:.6} over {} landmarks",
        a.pair,
        report.stats.mtre,
        report.tre.len() - report.excluded.len()
    );
    Ok(())
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<(), CliError> {
    let cfg = a.config.resolve()?;
    if a.resolutions.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(CliError::input("resolutions must be positive"));
    }
    let (lr, lt) = load_landmarks(&a.reference_landmarks, &a.template_landmarks)?;
    let (r, t) = load_pair(&a.reference, &a.template)?;
    let ri = to_gray_inverted(&r, cfg.input_spacing)?;
    let ti = to_gray_inverted(&t, cfg.input_spacing)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| io_err(&a.out_dir, e))?;
    write_json(&a.out_dir.join("config.json"), &cfg)?;

    let csv_path = a.out_dir.join("sweep.csv");
    let fresh = !csv_path.exists();
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&csv_path)
        .map_err(|e| io_err(&csv_path, e))?;
    let mut csv = BufWriter::new(file);
    if fresh {
        writeln!(csv, "{},status", MetricsReport::CSV_HEADER)
            .and_then(|_| csv.flush())
            .map_err(|e| io_err(&csv_path, e))?;
    }

    let mut failure: Option<CliError> = None;
    let mut on_item = |item: &evaluation::SweepItem| {
        let dir = a.out_dir.join(format!("res_{}", item.resolution));
        let line = match &item.outcome {
            Ok((report, y)) => {
                let saved = write_report(&dir, report).and_then(|_| match y {
                    Transform::Displacement(g) => {
                        let mut bytes = Vec::new();
                        g.write_binary(&mut bytes).map_err(|e| io_err(&dir, e))?;
                        write_atomic(&dir.join("deformation.bin"), &bytes)
                    }
                    _ => Ok(()),
                });
                if let Err(e) = saved {
                    failure.get_or_insert(e);
                }
                format!("{},ok", report.csv_row())
            }
            Err(e) => {
                log::warn!("resolution {}: {e}", item.resolution);
                let code = CliError::from(clone_error(e)).code;
                if failure.as_ref().is_none_or(|f| f.code < code) {
                    failure = Some(CliError {
                        code,
                        message: format!("resolution {}: {e}", item.resolution),
                    });
                }
                let blanks = ",".repeat(MetricsReport::CSV_HEADER.matches(',').count() - 1);
                format!("{},{}{},failed", a.pair, item.resolution, blanks)
            }
        };
        // one flushed line per finished resolution, so an interrupted sweep keeps its rows
        if let Err(e) = writeln!(csv, "{line}").and_then(|_| csv.flush()) {
            failure.get_or_insert(io_err(&csv_path, e));
        }
        println!(
            "resolution {}: {}",
            item.resolution,
            line.rsplit(',').next().unwrap_or("")
        );
    };
    evaluation::resolution_sweep(
        &a.pair,
        &ri,
        &ti,
        (&lr, &lt),
        &a.resolutions,
        &cfg,
        a.mode.into(),
        &mut on_item,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Keeps the variant of an error for exit-code mapping.
fn clone_error(e: &Error) -> Error {
    match e {
        Error::StageFailed { stage, reason, .. } => Error::StageFailed {
            stage,
            reason: reason.clone(),
            best: Box::default(),
        },
        other => Error::InvalidInput(other.to_string()),
    }
}

#[derive(Serialize)]
struct LevelInfo {
    level: usize,
    width: usize,
    height: usize,
    spacing: f64,
}

#[derive(Serialize)]
struct Info {
    levels: Vec<LevelInfo>,
    ladders: Ladders,
}

pub fn cmd_info(a: &InfoArgs) -> Result<(), CliError> {
    let cfg = a.config.resolve()?;
    let img = to_gray_inverted(&load_raster(&a.image)?, cfg.input_spacing)?;
    let pyr = pipeline::build_pyramid_for(img, &cfg)?;
    let info = Info {
        levels: pyr
            .levels()
            .iter()
            .enumerate()
            .map(|(l, im)| LevelInfo {
                level: l,
                width: im.width(),
                height: im.height(),
                spacing: im.spacing(),
            })
            .collect(),
        ladders: planned_ladders(&pyr, &pyr, &cfg),
    };
    if a.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&info).map_err(|e| CliError::internal(e.to_string()))?
        );
        return Ok(());
    }
    println!("level  width  height  spacing");
    for l in &info.levels {
        println!("{:>5}  {:>5}  {:>6}  {}", l.level, l.width, l.height, l.spacing);
    }
    for (name, ladder) in [
        ("prealign", &info.ladders.prealign),
        ("affine", &info.ladders.affine),
        ("deformable", &info.ladders.deformable),
    ] {
        println!("{name}: levels {:?} spacings {:?}", ladder.levels, ladder.spacings);
    }
    Ok(())
}
