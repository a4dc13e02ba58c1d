//! Command-line front end. Precedence for every setting: built-in defaults, then the
//! `--config` file, then flags.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{
    generate_synth_scene, synthetic_style, warp_back_mse, MaskSource, ReportTable, StylePattern, SynthScene,
};
use crate::error::{Error, Result};
use crate::features::{ConvExtractor, ExtractorConfig, FeatureExtractor};
use crate::flow::{
    consistency_weights_with, disocclusion_mask, disocclusion_mask_with, long_term_weights, motion_boundary_mask_with,
    read_flo, reliability_map, write_flo, FlowField, PixelMask,
};
use crate::image::{read_pgm, read_ppm, write_pgm, write_ppm, Image, WeightMask};
use crate::losses::LossWeights;
use crate::pipeline::{
    flow_bwd_name, flow_fwd_name, frame_name, read_frames, run_sequence, stylize_single, Algorithm, FlowDir,
    FlowSource, FrameOutput, FrameSink, SequenceResult, VideoConfig,
};
use crate::solver::Method;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MANIFEST_HASH_FILE: &str = "manifest.sha256";
pub const PASSES_FILE: &str = "passes.log";

/// Everything a stylization run depends on besides the input files themselves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub content: Option<PathBuf>,
    pub frames: Option<PathBuf>,
    pub style: Option<PathBuf>,
    pub flows: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub extractor: ExtractorConfig,
    pub video: VideoConfig,
}

impl RunManifest {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize manifest: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("manifest: {e}")))
    }

    /// Hex SHA-256 of the serialized manifest.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        }))
    }
}

#[derive(Debug, Parser)]
#[command(name = "vidstyle", version, about = "Temporally consistent style transfer for image sequences")]
pub struct Cli {
    /// Print per-frame progress to stderr (repeat for solver details).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stylize one image.
    StylizeImage(ImageArgs),
    /// Stylize a directory of frames.
    StylizeVideo(VideoArgs),
    /// Warp-back error of stylized sequences against ground-truth flow.
    Evaluate(EvalArgs),
    /// Write a synthetic scene with exact flows and disocclusion masks.
    Synth(SynthArgs),
    /// Dump disocclusion, motion-boundary and weight masks as PGM.
    FlowMasks(MaskArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Lbfgs,
    Adam,
}

#[derive(Debug, Args)]
pub struct SolveOpts {
    /// TOML run manifest; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of the noise initialization.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Loss weights as `alpha,beta,gamma`; defaults depend on the resolution.
    #[arg(long, value_parser = parse_weights)]
    pub weights: Option<(f64, f64, f64)>,
    /// Use the benchmark weights 1,100,400.
    #[arg(long, conflicts_with = "weights")]
    pub benchmark_weights: bool,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Iteration cap per frame.
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Use the relaxed stopping threshold.
    #[arg(long)]
    pub relaxed: bool,
    /// Absolute-error temporal penalty with doubled temporal weight.
    #[arg(long)]
    pub robust_temporal: bool,
}

#[derive(Debug, Args)]
pub struct ImageArgs {
    #[arg(long)]
    pub content: Option<PathBuf>,
    #[arg(long)]
    pub style: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub solve: SolveOpts,
}

#[derive(Debug, Args)]
pub struct VideoArgs {
    /// Directory holding frame_0001.ppm, frame_0002.ppm, ...
    #[arg(long)]
    pub frames: Option<PathBuf>,
    #[arg(long)]
    pub style: Option<PathBuf>,
    /// Directory holding flow_fwd_A_B.flo and flow_bwd_A_B.flo.
    #[arg(long)]
    pub flows: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_parser = parse_algorithm)]
    pub algorithm: Option<Algorithm>,
    /// Long-term offsets, e.g. `1,10,20,40`.
    #[arg(long = "J", value_parser = parse_offsets)]
    pub offsets: Option<Offsets>,
    #[arg(long)]
    pub passes: Option<usize>,
    #[arg(long)]
    pub pass_iters: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// First multi-pass pass (0-based) with the temporal term.
    #[arg(long)]
    pub temporal_pass: Option<usize>,
    /// Relaxed stopping threshold for frames after the first.
    #[arg(long)]
    pub relaxed_after_first: bool,
    /// Keep finished frames of an earlier run with the same manifest.
    #[arg(long)]
    pub resume: bool,
    #[command(flatten)]
    pub solve: SolveOpts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Text,
    Delimited,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Result directories written by stylize-video.
    #[arg(required = true)]
    pub results: Vec<PathBuf>,
    /// Ground-truth directory (flows and optional occ_A_B.pgm); defaults to each run's flow directory.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: TableFormat,
    /// Also list every per-style score.
    #[arg(long)]
    pub per_style: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SceneKind {
    Default,
    Static,
    MovingRectangle,
    Occlusion,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "default")]
    pub scene: SceneKind,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Rectangle speed of the moving-rectangle scene in pixels per frame.
    #[arg(long, default_value_t = 2.0)]
    pub speed: f64,
    /// Frame offsets to write flows for (adjacent pairs are always written).
    #[arg(long, value_parser = parse_offsets)]
    pub offsets: Option<Offsets>,
    /// Scene description in TOML instead of a preset.
    #[arg(long, conflicts_with = "scene")]
    pub scene_file: Option<PathBuf>,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[arg(long)]
    pub flows: PathBuf,
    /// Number of frames; inferred from the adjacent flow files when omitted.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long, value_parser = parse_offsets)]
    pub offsets: Option<Offsets>,
    #[arg(long, short)]
    pub output: PathBuf,
}

fn parse_weights(s: &str) -> std::result::Result<(f64, f64, f64), String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad weight '{p}'")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [a, b, g] => Ok((a, b, g)),
        _ => Err("expected alpha,beta,gamma".into()),
    }
}

/// Comma-separated frame offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Offsets(pub Vec<usize>);

fn parse_offsets(s: &str) -> std::result::Result<Offsets, String> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad offset '{p}'")))
        .collect::<std::result::Result<_, _>>()
        .map(Offsets)
}

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let verbose = cli.verbose;
    match cli.command {
        Command::StylizeImage(a) => cmd_stylize_image(a, verbose),
        Command::StylizeVideo(a) => cmd_stylize_video(a, verbose),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::FlowMasks(a) => cmd_flow_masks(a),
    }
}

/// Loaded manifest plus whether it fixed the loss weights explicitly.
fn load_manifest(path: Option<&Path>) -> Result<(RunManifest, bool)> {
    let Some(path) = path else {
        return Ok((RunManifest::default(), false));
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: toml::Table = text.parse().map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    let explicit = value
        .get("video")
        .and_then(|v| v.get("weights"))
        .and_then(|w| w.as_table())
        .is_some_and(|w| ["alpha", "beta", "gamma"].iter().any(|k| w.contains_key(*k)));
    let manifest = RunManifest::from_toml(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    Ok((manifest, explicit))
}

fn apply_solve_opts(m: &mut RunManifest, o: &SolveOpts, explicit: &mut bool) {
    if let Some(seed) = o.seed {
        m.video.noise.seed = seed;
    }
    let w = &mut m.video.weights;
    if let Some((a, b, g)) = o.weights {
        (w.alpha, w.beta, w.gamma) = (a, b, g);
        *explicit = true;
    }
    if o.benchmark_weights {
        (w.alpha, w.beta, w.gamma) = crate::losses::BENCHMARK_WEIGHTS;
        *explicit = true;
    }
    if let Some(method) = o.method {
        m.video.solver.method = match method {
            MethodArg::Lbfgs => Method::QuasiNewton,
            MethodArg::Adam => Method::AdaptiveFirstOrder,
        };
    }
    if let Some(n) = o.max_iterations {
        m.video.solver.max_iterations = n;
    }
    if o.relaxed {
        m.video.solver = m.video.solver.clone().relaxed();
    }
}

/// Resolution defaults for the weights unless the run fixed them; the robust flag applies last.
fn resolve_weights(m: &mut RunManifest, explicit: bool, robust: bool, width: usize, height: usize) {
    if !explicit {
        let d = LossWeights::for_resolution(width, height);
        let w = &mut m.video.weights;
        (w.alpha, w.beta, w.gamma) = (d.alpha, d.beta, d.gamma);
    }
    if robust {
        m.video.weights = m.video.weights.clone().with_robust_temporal();
    }
}

fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.clone().ok_or_else(|| Error::Validation(format!("missing --{what}")))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingFiles(vec![path.to_path_buf()]))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn cmd_stylize_image(a: ImageArgs, verbose: u8) -> Result<()> {
    let (mut m, mut explicit) = load_manifest(a.solve.config.as_deref())?;
    m.command = "stylize-image".into();
    if a.content.is_some() {
        m.content = a.content.clone();
    }
    if a.style.is_some() {
        m.style = a.style.clone();
    }
    if a.output.is_some() {
        m.output = a.output.clone();
    }
    apply_solve_opts(&mut m, &a.solve, &mut explicit);
    let (content_path, style_path, output) = (require(&m.content, "content")?, require(&m.style, "style")?, require(&m.output, "output")?);
    let missing: Vec<PathBuf> = [&content_path, &style_path].into_iter().filter(|p| !p.is_file()).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    let content = read_ppm(&content_path)?;
    let style = read_ppm(&style_path)?;
    resolve_weights(&mut m, explicit, a.solve.robust_temporal, content.width(), content.height());
    m.video.validate()?;
    let extractor = ConvExtractor::new(m.extractor.clone())?;
    extractor.check_input(content.width(), content.height())?;

    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_text(&output.with_extension("manifest.toml"), &m.to_toml()?)?;
    let init = m.video.noise.frame_noise(0, content.width(), content.height(), content.channels())?;
    let (image, report) = stylize_single(&extractor, &content, &style, &init, &m.video.weights, &m.video.solver)?;
    write_ppm(&image, &output)?;
    write_text(&output.with_extension("log"), &report.to_log())?;
    if verbose > 0 {
        eprintln!("{}: {} iterations, loss {:.4e}", output.display(), report.iterations, report.final_loss());
    }
    Ok(())
}

fn weights_file(frame: usize, offset: isize) -> String {
    let other = frame as isize - offset;
    format!("weights_{:04}_from_{:04}.pgm", frame + 1, other + 1)
}

/// Writes frames, logs and masks as they finish; supplies frames of a resumable earlier run.
struct DirSink {
    dir: PathBuf,
    resume: bool,
    verbose: u8,
}

impl FrameSink for DirSink {
    fn existing(&mut self, frame: usize) -> Result<Option<Image>> {
        let path = self.dir.join(frame_name(frame));
        if self.resume && path.is_file() {
            if self.verbose > 0 {
                eprintln!("frame {}: kept from earlier run", frame + 1);
            }
            return read_ppm(&path).map(Some);
        }
        Ok(None)
    }

    fn frame_done(&mut self, out: &FrameOutput) -> Result<()> {
        let Some(report) = &out.report else {
            return Ok(());
        };
        write_ppm(&out.image, self.dir.join(frame_name(out.frame)))?;
        write_text(&self.dir.join(log_name(out.frame)), &report.to_log())?;
        for (offset, mask) in &out.masks {
            write_pgm(mask, self.dir.join(weights_file(out.frame, *offset)))?;
        }
        if self.verbose > 0 {
            eprintln!(
                "frame {}: {} iterations, loss {:.4e}{}",
                out.frame + 1,
                report.iterations,
                report.final_loss(),
                if report.converged { "" } else { " (iteration cap)" }
            );
        }
        Ok(())
    }
}

fn log_name(frame: usize) -> String {
    format!("frame_{:04}.log", frame + 1)
}

fn cmd_stylize_video(a: VideoArgs, verbose: u8) -> Result<()> {
    let (mut m, mut explicit) = load_manifest(a.solve.config.as_deref())?;
    m.command = "stylize-video".into();
    for (dst, src) in [(&mut m.frames, &a.frames), (&mut m.style, &a.style), (&mut m.flows, &a.flows), (&mut m.output, &a.output)] {
        if src.is_some() {
            dst.clone_from(src);
        }
    }
    let v = &mut m.video;
    if let Some(alg) = a.algorithm {
        v.algorithm = alg;
    }
    if let Some(offsets) = &a.offsets {
        v.weights.offsets.clone_from(&offsets.0);
    }
    if let Some(p) = a.passes {
        v.multi_pass.passes = p;
    }
    if let Some(p) = a.pass_iters {
        v.multi_pass.iterations_per_pass = p;
    }
    if let Some(d) = a.delta {
        v.multi_pass.delta = d;
    }
    if let Some(p) = a.temporal_pass {
        v.multi_pass.temporal_activation_pass = p;
    }
    if a.relaxed_after_first {
        v.relaxed_after_first = true;
    }
    apply_solve_opts(&mut m, &a.solve, &mut explicit);

    let frames_dir = require(&m.frames, "frames")?;
    let style_path = require(&m.style, "style")?;
    let output = require(&m.output, "output")?;
    require_file(&style_path)?;
    let frames = read_frames(&frames_dir)?;
    let (w, h) = (frames[0].width(), frames[0].height());
    resolve_weights(&mut m, explicit, a.solve.robust_temporal, w, h);
    m.video.validate()?;
    let flow_dir = match &m.flows {
        Some(dir) => {
            let fd = FlowDir::new(dir);
            let missing = fd.missing(frames.len(), &m.video);
            if !missing.is_empty() {
                return Err(Error::MissingFiles(missing));
            }
            Some(fd)
        }
        None if m.video.algorithm.needs_flow() && frames.len() > 1 => {
            return Err(Error::Validation(format!("--algorithm {} needs --flows", m.video.algorithm)));
        }
        None => None,
    };
    let style = read_ppm(&style_path)?;
    let extractor = ConvExtractor::new(m.extractor.clone())?;
    extractor.check_input(w, h)?;

    create_dir(&output)?;
    let hash = m.hash()?;
    let hash_path = output.join(MANIFEST_HASH_FILE);
    let previous = fs::read_to_string(&hash_path).ok();
    let resume = a.resume && previous.as_deref().map(str::trim) == Some(hash.as_str());
    if a.resume && !resume && verbose > 0 {
        eprintln!("manifest changed or absent; recomputing every frame");
    }
    write_text(&output.join(MANIFEST_FILE), &m.to_toml()?)?;
    write_text(&hash_path, &format!("{hash}\n"))?;

    let mut sink = DirSink { dir: output.clone(), resume, verbose };
    let no_flows = NoFlows;
    let flows: &dyn FlowSource = match &flow_dir {
        Some(fd) => fd,
        None => &no_flows,
    };
    let result = run_sequence(&extractor, &frames, &style, flows, &m.video, &mut sink)?;
    if m.video.algorithm == Algorithm::MultiPass {
        write_text(&output.join(PASSES_FILE), &passes_log(&result))?;
    }
    Ok(())
}

struct NoFlows;

impl FlowSource for NoFlows {
    fn pair(&self, earlier: usize, later: usize) -> Result<crate::flow::FlowPair> {
        Err(Error::Validation(format!("no flow directory for frames ({}, {})", earlier + 1, later + 1)))
    }
}

/// One line per multi-pass sweep.
pub fn passes_log(result: &SequenceResult) -> String {
    let mut out = String::from("# pass direction temporal delta iterations_per_pass\n");
    for p in &result.passes {
        let dir = match p.direction {
            crate::pipeline::Direction::Forward => "forward",
            crate::pipeline::Direction::Backward => "backward",
        };
        let _ = writeln!(out, "{} {dir} {} {} {}", p.pass, p.temporal_enabled, p.delta, p.iterations_per_pass);
    }
    out
}

/// White where the mask fires.
fn flagged(mask: &PixelMask) -> WeightMask {
    WeightMask::from_bools(mask.width(), mask.height(), mask.data().iter().copied())
}

pub fn occ_name(earlier: usize, later: usize) -> String {
    format!("occ_{:04}_{:04}.pgm", earlier + 1, later + 1)
}

fn count_frames(dir: &Path) -> usize {
    let mut n = 0;
    while dir.join(frame_name(n)).is_file() {
        n += 1;
    }
    n
}

/// Ground truth for one scene: adjacent backward flows and valid-pixel masks.
fn load_ground_truth(dir: &Path, frames: usize) -> Result<(Vec<FlowField>, Vec<WeightMask>, MaskSource)> {
    let mut missing = Vec::new();
    for i in 1..frames {
        for name in [flow_fwd_name(i - 1, i), flow_bwd_name(i - 1, i)] {
            if !dir.join(&name).is_file() {
                missing.push(dir.join(name));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    let has_occ = (1..frames).all(|i| dir.join(occ_name(i - 1, i)).is_file());
    let mut backward = Vec::new();
    let mut masks = Vec::new();
    for i in 1..frames {
        let bwd = read_flo(dir.join(flow_bwd_name(i - 1, i)))?;
        let mask = if has_occ {
            let occ = read_pgm(dir.join(occ_name(i - 1, i)))?;
            WeightMask::from_bools(occ.width(), occ.height(), occ.data().iter().map(|&v| v < 0.5))
        } else {
            let fwd = read_flo(dir.join(flow_fwd_name(i - 1, i)))?;
            disocclusion_mask(&crate::flow::FlowPair::new(fwd, bwd.clone())?).to_weights()
        };
        backward.push(bwd);
        masks.push(mask);
    }
    let source = if has_occ { MaskSource::GroundTruth } else { MaskSource::FlowCheck };
    Ok((backward, masks, source))
}

fn dir_label(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn cmd_evaluate(a: EvalArgs) -> Result<()> {
    let mut table = ReportTable::new();
    let mut notes = Vec::new();
    for dir in &a.results {
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = match fs::read_to_string(&manifest_path) {
            Ok(text) => Some(RunManifest::from_toml(&text)?),
            Err(_) => None,
        };
        let method = manifest.as_ref().map_or_else(|| dir_label(dir), |m| m.video.algorithm.name().to_string());
        let style = manifest
            .as_ref()
            .and_then(|m| m.style.as_ref())
            .and_then(|p| p.file_stem())
            .map_or_else(|| "style".to_string(), |s| s.to_string_lossy().into_owned());
        let gt = match (&a.gt, manifest.as_ref().and_then(|m| m.flows.clone())) {
            (Some(gt), _) => gt.clone(),
            (None, Some(flows)) => flows,
            (None, None) => {
                return Err(Error::Validation(format!("{}: no ground truth; pass --gt", dir.display())));
            }
        };
        let n = count_frames(dir);
        if n == 0 {
            return Err(Error::MissingFiles(vec![dir.join(frame_name(0))]));
        }
        let gt_frames = count_frames(&gt);
        if gt_frames != 0 && gt_frames != n {
            return Err(Error::Validation(format!(
                "{} has {n} stylized frames but {} has {gt_frames} frames",
                dir.display(),
                gt.display()
            )));
        }
        if gt.join(flow_bwd_name(n - 1, n)).is_file() {
            return Err(Error::Validation(format!(
                "{} has {n} stylized frames but {} has flows beyond frame {n}",
                dir.display(),
                gt.display()
            )));
        }
        let (backward, masks, source) = load_ground_truth(&gt, n)?;
        let stylized = (0..n).map(|i| read_ppm(dir.join(frame_name(i)))).collect::<Result<Vec<_>>>()?;
        let score = warp_back_mse(&stylized, &backward, &masks)?;
        let scene = dir_label(&gt);
        if table.style_scores(&method, &scene).is_some_and(|s| s.contains_key(&style)) {
            return Err(Error::Validation(format!("{}: duplicate result for {method} / {scene} / {style}", dir.display())));
        }
        let mean = score
            .mean
            .ok_or_else(|| Error::Validation(format!("{}: every pair is fully masked", dir.display())))?;
        table.insert(&method, &scene, &style, mean);
        let skipped: Vec<String> = score.skipped().map(|p| format!("({}, {})", p.earlier + 1, p.later + 1)).collect();
        let source = match source {
            MaskSource::GroundTruth => "ground-truth masks",
            MaskSource::FlowCheck => "masks from forward-backward check",
        };
        let mut note = format!("{}: {method} on {scene} with {style}, {source}", dir.display());
        if !skipped.is_empty() {
            let _ = write!(note, ", skipped pairs {}", skipped.join(" "));
        }
        notes.push(note);
    }
    let mut out = match a.format {
        TableFormat::Text => table.render_text(),
        TableFormat::Delimited => table.render_delimited(),
    };
    if a.per_style {
        out.push('\n');
        out.push_str(&table.render_per_style());
    }
    if a.format == TableFormat::Text {
        out.push('\n');
        for n in notes {
            let _ = writeln!(out, "# {n}");
        }
    }
    print!("{out}");
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut scene = match &a.scene_file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?
        }
        None => match a.scene {
            SceneKind::Default => SynthScene::default_scene(a.seed),
            SceneKind::Static => SynthScene::static_scene(a.seed),
            SceneKind::MovingRectangle => SynthScene::moving_rectangle(a.seed, a.speed),
            SceneKind::Occlusion => SynthScene::occlusion_scene(a.seed),
        },
    };
    if let Some(n) = a.frames {
        scene.frames = n;
    }
    let seq = generate_synth_scene(&scene)?;
    let out = &a.output;
    create_dir(out)?;
    write_text(&out.join("scene.toml"), &toml::to_string(&scene).map_err(|e| Error::config(e.to_string()))?)?;
    for (i, f) in seq.frames.iter().enumerate() {
        write_ppm(f, out.join(frame_name(i)))?;
    }
    let mut offsets = a.offsets.clone().map_or_else(|| vec![1], |o| o.0);
    if !offsets.contains(&1) {
        offsets.push(1);
    }
    for &j in &offsets {
        for later in j..scene.frames {
            let earlier = later - j;
            let pair = seq.pair(earlier, later)?;
            write_flo(&pair.forward, out.join(flow_fwd_name(earlier, later)))?;
            write_flo(&pair.backward, out.join(flow_bwd_name(earlier, later)))?;
            let occ = flagged(&scene.disocclusion(earlier, later));
            write_pgm(&occ, out.join(occ_name(earlier, later)))?;
        }
    }
    for (k, p) in [StylePattern::Stripes, StylePattern::Blobs].into_iter().enumerate() {
        let name = match p {
            StylePattern::Stripes => "style_stripes.ppm",
            StylePattern::Blobs => "style_blobs.ppm",
        };
        write_ppm(&synthetic_style(p, scene.width, scene.height, a.seed.wrapping_add(10 + k as u64)), out.join(name))?;
    }
    Ok(())
}

fn cmd_flow_masks(a: MaskArgs) -> Result<()> {
    let fd = FlowDir::new(&a.flows);
    let frames = match a.frames {
        Some(n) => n,
        None => {
            let mut n = 1;
            while a.flows.join(flow_bwd_name(n - 1, n)).is_file() {
                n += 1;
            }
            n
        }
    };
    if frames < 2 {
        return Err(Error::MissingFiles(vec![a.flows.join(flow_bwd_name(0, 1))]));
    }
    let offsets = a.offsets.clone().map_or_else(|| vec![1], |o| o.0);
    let weights = LossWeights { offsets: offsets.clone(), ..Default::default() };
    weights.validate()?;
    let cfg = VideoConfig { algorithm: Algorithm::LongTerm, weights, ..Default::default() };
    let missing = fd.missing(frames, &cfg);
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    create_dir(&a.output)?;
    let params = cfg.consistency;
    for i in 1..frames {
        let mut short = Vec::new();
        for &j in offsets.iter().filter(|&&j| j <= i) {
            let pair = fd.pair(i - j, i)?;
            let tag = format!("{:04}_{:04}.pgm", i - j + 1, i + 1);
            write_pgm(&flagged(&disocclusion_mask_with(&pair, &params)), a.output.join(format!("disocclusion_{tag}")))?;
            write_pgm(&flagged(&motion_boundary_mask_with(&pair.backward, &params)), a.output.join(format!("boundary_{tag}")))?;
            write_pgm(&reliability_map(&pair), a.output.join(format!("reliability_{tag}")))?;
            let c = consistency_weights_with(&pair, &params);
            write_pgm(&c, a.output.join(format!("weights_{tag}")))?;
            short.push((j, c));
        }
        for (j, _) in &short {
            let long = long_term_weights(&short, *j)?;
            write_pgm(&long, a.output.join(format!("longterm_{:04}_{:04}.pgm", i - j + 1, i + 1)))?;
        }
    }
    Ok(())
}

