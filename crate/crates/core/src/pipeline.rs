//! Per-frame stylization and the video algorithms built on it.
//!
//! Frame indices are 0-based here; file names use 1-based numbers.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::flow::{compose_flows, consistency_weights_with, long_term_weights, read_flo, warp_image, ConsistencyParams, FlowPair};
use crate::image::{blend, gaussian_init, Image, Rng, WeightMask, DEFAULT_INIT_MEAN, DEFAULT_INIT_STDDEV};
use crate::losses::{total_loss_grad, FrameTargets, LossWeights, StyleTargets, TemporalTerm};
use crate::solver::{minimize, Evaluation, SolveReport, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Every frame from fresh noise.
    Independent,
    /// Previous stylized frame as initialization.
    PrevInit,
    /// Previous stylized frame warped by the flow as initialization.
    WarpedInit,
    /// Warped initialization plus the temporal consistency term.
    ShortTerm,
    /// Short-term plus temporal terms toward the frames `i - j`, `j` in the offset set.
    LongTerm,
    /// Alternating-direction passes with blended initialization.
    MultiPass,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Independent,
        Algorithm::PrevInit,
        Algorithm::WarpedInit,
        Algorithm::ShortTerm,
        Algorithm::LongTerm,
        Algorithm::MultiPass,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Independent => "independent",
            Algorithm::PrevInit => "prev-init",
            Algorithm::WarpedInit => "warped-init",
            Algorithm::ShortTerm => "short-term",
            Algorithm::LongTerm => "long-term",
            Algorithm::MultiPass => "multi-pass",
        }
    }

    pub fn needs_flow(self) -> bool {
        !matches!(self, Algorithm::Independent | Algorithm::PrevInit)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown algorithm '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub seed: u64,
    pub mean: f64,
    pub stddev: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { seed: 1, mean: DEFAULT_INIT_MEAN, stddev: DEFAULT_INIT_STDDEV }
    }
}

impl NoiseConfig {
    /// Noise image for frame `frame`; each frame draws from its own stream.
    pub fn frame_noise(&self, frame: usize, width: usize, height: usize, channels: usize) -> Result<Image> {
        gaussian_init(width, height, channels, &mut Rng::with_stream(self.seed, frame as u64), self.mean, self.stddev)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiPassConfig {
    pub passes: usize,
    pub iterations_per_pass: usize,
    pub delta: f64,
    /// First pass (0-based, pass 0 being the independent pass) with the temporal term enabled.
    pub temporal_activation_pass: usize,
    #[serde(default, skip_serializing)]
    pub record_inits: bool,
}

impl Default for MultiPassConfig {
    fn default() -> Self {
        MultiPassConfig { passes: 10, iterations_per_pass: 100, delta: 0.5, temporal_activation_pass: 4, record_inits: false }
    }
}

impl MultiPassConfig {
    pub fn validate(&self) -> Result<()> {
        if self.passes == 0 {
            return Err(Error::config("multi-pass needs at least one pass"));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::config(format!("blend factor delta={} outside [0, 1]", self.delta)));
        }
        Ok(())
    }
}

/// Everything that determines a sequence run besides its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoConfig {
    pub algorithm: Algorithm,
    pub weights: LossWeights,
    pub solver: SolverConfig,
    /// Use the relaxed stopping threshold for every frame after the first.
    pub relaxed_after_first: bool,
    pub noise: NoiseConfig,
    pub multi_pass: MultiPassConfig,
    pub consistency: ConsistencyParams,
}

impl Default for VideoConfig {
    fn default() -> Self {
        VideoConfig {
            algorithm: Algorithm::ShortTerm,
            weights: LossWeights::default(),
            solver: SolverConfig::default(),
            relaxed_after_first: false,
            noise: NoiseConfig::default(),
            multi_pass: MultiPassConfig::default(),
            consistency: ConsistencyParams::default(),
        }
    }
}

impl VideoConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.solver.validate()?;
        self.multi_pass.validate()
    }

    /// Offsets whose flows the run reads (adjacent only, unless long-term).
    pub fn offsets(&self) -> Vec<usize> {
        match self.algorithm {
            Algorithm::LongTerm => self.weights.offsets.clone(),
            a if a.needs_flow() => vec![1],
            _ => vec![],
        }
    }
}

/// Supplies the flow pair between an earlier and a later frame.
pub trait FlowSource: Sync {
    fn pair(&self, earlier: usize, later: usize) -> Result<FlowPair>;
}

/// Composes adjacent pairs into `(earlier, later)`: used when no direct estimate exists.
pub fn composed_pair(source: &dyn FlowSource, earlier: usize, later: usize) -> Result<FlowPair> {
    if later <= earlier {
        return Err(Error::config(format!("flow pair ({earlier}, {later}) is not ordered")));
    }
    let mut pair = source.pair(earlier, earlier + 1)?;
    for k in earlier + 1..later {
        let step = source.pair(k, k + 1)?;
        let forward = compose_flows(&pair.forward, &step.forward)?;
        let backward = compose_flows(&step.backward, &pair.backward)?;
        pair = FlowPair::new(forward, backward)?;
    }
    Ok(pair)
}

/// Flow pairs held in memory; missing long-range pairs are composed from adjacent ones.
#[derive(Debug, Clone, Default)]
pub struct MemoryFlows {
    pairs: HashMap<(usize, usize), FlowPair>,
}

impl MemoryFlows {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, earlier: usize, later: usize, pair: FlowPair) {
        self.pairs.insert((earlier, later), pair);
    }

    pub fn contains(&self, earlier: usize, later: usize) -> bool {
        self.pairs.contains_key(&(earlier, later))
    }
}

impl FlowSource for MemoryFlows {
    fn pair(&self, earlier: usize, later: usize) -> Result<FlowPair> {
        match self.pairs.get(&(earlier, later)) {
            Some(p) => Ok(p.clone()),
            None if later > earlier + 1 && self.contains(earlier, earlier + 1) => composed_pair(self, earlier, later),
            None => Err(Error::Validation(format!("no flow for frames ({}, {})", earlier + 1, later + 1))),
        }
    }
}

pub fn flow_fwd_name(earlier: usize, later: usize) -> String {
    format!("flow_fwd_{:04}_{:04}.flo", earlier + 1, later + 1)
}

pub fn flow_bwd_name(earlier: usize, later: usize) -> String {
    format!("flow_bwd_{:04}_{:04}.flo", earlier + 1, later + 1)
}

pub fn frame_name(frame: usize) -> String {
    format!("frame_{:04}.ppm", frame + 1)
}

/// `.flo` files in one directory named `flow_fwd_A_B.flo` (frame A to B) and
/// `flow_bwd_A_B.flo` (frame B back to A), with 1-based zero-padded numbers.
#[derive(Debug, Clone)]
pub struct FlowDir {
    dir: PathBuf,
}

impl FlowDir {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FlowDir { dir: dir.into() }
    }

    pub fn paths(&self, earlier: usize, later: usize) -> (PathBuf, PathBuf) {
        (self.dir.join(flow_fwd_name(earlier, later)), self.dir.join(flow_bwd_name(earlier, later)))
    }

    fn has(&self, earlier: usize, later: usize) -> bool {
        let (f, b) = self.paths(earlier, later);
        f.is_file() && b.is_file()
    }

    /// Lists every missing file the run would need; long-range pairs only need their adjacent chain.
    pub fn missing(&self, frames: usize, config: &VideoConfig) -> Vec<PathBuf> {
        let mut missing = Vec::new();
        if !config.algorithm.needs_flow() {
            return missing;
        }
        for i in 1..frames {
            let (f, b) = self.paths(i - 1, i);
            missing.extend([f, b].into_iter().filter(|p| !p.is_file()));
        }
        missing
    }
}

impl FlowSource for FlowDir {
    fn pair(&self, earlier: usize, later: usize) -> Result<FlowPair> {
        if self.has(earlier, later) {
            let (f, b) = self.paths(earlier, later);
            FlowPair::new(read_flo(f)?, read_flo(b)?)
        } else if later > earlier + 1 {
            composed_pair(self, earlier, later)
        } else {
            let (f, b) = self.paths(earlier, later);
            Err(Error::MissingFiles(vec![f, b]))
        }
    }
}

/// Shared state for stylizing frames of one sequence against one style.
pub struct Stylizer<'a> {
    extractor: &'a dyn FeatureExtractor,
    style: StyleTargets,
    weights: LossWeights,
}

impl<'a> Stylizer<'a> {
    pub fn new(extractor: &'a dyn FeatureExtractor, style: &Image, width: usize, height: usize, weights: LossWeights) -> Result<Self> {
        weights.validate()?;
        extractor.check_input(width, height)?;
        let style = StyleTargets::new(extractor, style, width, height, &weights.style_layers)?;
        Ok(Stylizer { extractor, style, weights })
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn targets(&self, content: &Image, temporal: Vec<TemporalTerm>) -> Result<FrameTargets> {
        Ok(FrameTargets::new(self.extractor, content, &self.style, &self.weights)?.with_temporal(temporal))
    }

    pub fn evaluate(&self, x: &Image, targets: &FrameTargets) -> Result<Evaluation> {
        let (parts, gradient) = total_loss_grad(x, targets, &self.weights, self.extractor)?;
        Ok(Evaluation { parts, gradient })
    }

    /// Minimize the frame objective from `init`.
    pub fn stylize_frame(
        &self,
        content: &Image,
        init: &Image,
        temporal: Vec<TemporalTerm>,
        solver: &SolverConfig,
    ) -> Result<(Image, SolveReport)> {
        content.ensure_same_shape(init, "initialization")?;
        let targets = self.targets(content, temporal)?;
        let mut objective = |x: &Image| self.evaluate(x, &targets);
        minimize(&mut objective, init, solver)
    }
}

/// Single-image transfer: content + style loss only.
pub fn stylize_single(
    extractor: &dyn FeatureExtractor,
    content: &Image,
    style: &Image,
    init: &Image,
    weights: &LossWeights,
    solver: &SolverConfig,
) -> Result<(Image, SolveReport)> {
    let stylizer = Stylizer::new(extractor, style, content.width(), content.height(), weights.clone())?;
    stylizer.stylize_frame(content, init, Vec::new(), solver)
}

/// Result for one frame as it becomes final.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub frame: usize,
    pub image: Image,
    /// `None` when the frame was taken from a previous run.
    pub report: Option<SolveReport>,
    /// The weights of each temporal term, keyed by offset (negative offsets look forward).
    pub masks: Vec<(isize, WeightMask)>,
}

/// Receives finished frames and may supply frames finished by an earlier run.
pub trait FrameSink {
    fn existing(&mut self, _frame: usize) -> Result<Option<Image>> {
        Ok(None)
    }

    fn frame_done(&mut self, _output: &FrameOutput) -> Result<()> {
        Ok(())
    }
}

/// Sink that keeps nothing.
pub struct NoSink;

impl FrameSink for NoSink {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Forward,
    Backward,
}

/// What happened in one multi-pass sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PassRecord {
    pub pass: usize,
    pub direction: Direction,
    pub temporal_enabled: bool,
    pub delta: f64,
    pub iterations_per_pass: usize,
    /// Per-frame initializations, kept only when requested.
    pub inits: Option<Vec<Image>>,
}

#[derive(Debug, Clone)]
pub struct SequenceResult {
    pub frames: Vec<Image>,
    pub outputs: Vec<FrameOutput>,
    pub passes: Vec<PassRecord>,
}

impl SequenceResult {
    pub fn reports(&self) -> impl Iterator<Item = Option<&SolveReport>> {
        self.outputs.iter().map(|o| o.report.as_ref())
    }
}

fn check_frames(frames: &[Image]) -> Result<()> {
    let first = frames.first().ok_or_else(|| Error::Validation("sequence has no frames".into()))?;
    for (i, f) in frames.iter().enumerate() {
        first.ensure_same_shape(f, &format!("frame {}", i + 1))?;
    }
    Ok(())
}

/// Run any algorithm over a sequence.
pub fn run_sequence(
    extractor: &dyn FeatureExtractor,
    frames: &[Image],
    style: &Image,
    flows: &dyn FlowSource,
    config: &VideoConfig,
    sink: &mut dyn FrameSink,
) -> Result<SequenceResult> {
    match config.algorithm {
        Algorithm::LongTerm => run_long_term(extractor, frames, style, flows, config, sink),
        Algorithm::MultiPass => run_multi_pass(extractor, frames, style, flows, config, sink),
        _ => run_short_term(extractor, frames, style, flows, config, sink),
    }
}

/// Independent, previous-frame, warped and short-term (temporal loss) processing.
pub fn run_short_term(
    extractor: &dyn FeatureExtractor,
    frames: &[Image],
    style: &Image,
    flows: &dyn FlowSource,
    config: &VideoConfig,
    sink: &mut dyn FrameSink,
) -> Result<SequenceResult> {
    if matches!(config.algorithm, Algorithm::LongTerm | Algorithm::MultiPass) {
        return Err(Error::config(format!("run_short_term cannot run '{}'", config.algorithm)));
    }
    sequential(extractor, frames, style, flows, config, &[1], sink)
}

/// Short-term processing plus long-term temporal terms with exclusive weights.
pub fn run_long_term(
    extractor: &dyn FeatureExtractor,
    frames: &[Image],
    style: &Image,
    flows: &dyn FlowSource,
    config: &VideoConfig,
    sink: &mut dyn FrameSink,
) -> Result<SequenceResult> {
    let mut cfg = config.clone();
    cfg.algorithm = Algorithm::LongTerm;
    sequential(extractor, frames, style, flows, &cfg, &config.weights.offsets, sink)
}

/// Temporal terms for frame `i`: one per offset `j` with `i - j >= 0`, weighted by the
/// long-term weights computed from the short-term masks of every in-range offset.
pub fn long_term_terms(
    i: usize,
    offsets: &[usize],
    outputs: &[Image],
    flows: &dyn FlowSource,
    params: &ConsistencyParams,
) -> Result<Vec<(usize, TemporalTerm)>> {
    let mut short = Vec::new();
    let mut warped = Vec::new();
    for &j in offsets.iter().filter(|&&j| j <= i) {
        let pair = flows.pair(i - j, i)?;
        short.push((j, consistency_weights_with(&pair, params)));
        warped.push(warp_image(&outputs[i - j], &pair.backward)?);
    }
    short
        .iter()
        .zip(warped)
        .map(|((j, _), w)| Ok((*j, TemporalTerm { warped: w, weights: long_term_weights(&short, *j)? })))
        .collect()
}

fn sequential(
    extractor: &dyn FeatureExtractor,
    frames: &[Image],
    style: &Image,
    flows: &dyn FlowSource,
    config: &VideoConfig,
    offsets: &[usize],
    sink: &mut dyn FrameSink,
) -> Result<SequenceResult> {
    config.validate()?;
    check_frames(frames)?;
    let (w, h, c) = (frames[0].width(), frames[0].height(), frames[0].channels());
    let stylizer = Stylizer::new(extractor, style, w, h, config.weights.clone())?;
    let later_solver = if config.relaxed_after_first { config.solver.clone().relaxed() } else { config.solver.clone() };

    if config.algorithm == Algorithm::Independent {
        let mut existing = Vec::with_capacity(frames.len());
        for i in 0..frames.len() {
            existing.push(sink.existing(i)?);
        }
        let solved: Vec<Result<Option<(Image, SolveReport)>>> = frames
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                if existing[i].is_some() {
                    return Ok(None);
                }
                let solver = if i == 0 { &config.solver } else { &later_solver };
                let init = config.noise.frame_noise(i, w, h, c)?;
                stylizer.stylize_frame(p, &init, Vec::new(), solver).map(Some)
            })
            .collect();
        let mut result = SequenceResult { frames: Vec::new(), outputs: Vec::new(), passes: Vec::new() };
        for (i, (solved, prior)) in solved.into_iter().zip(existing).enumerate() {
            let out = match (solved?, prior) {
                (Some((image, report)), _) => FrameOutput { frame: i, image, report: Some(report), masks: vec![] },
                (None, Some(image)) => FrameOutput { frame: i, image, report: None, masks: vec![] },
                (None, None) => unreachable!(),
            };
            sink.frame_done(&out)?;
            result.frames.push(out.image.clone());
            result.outputs.push(out);
        }
        return Ok(result);
    }

    let mut result = SequenceResult { frames: Vec::new(), outputs: Vec::new(), passes: Vec::new() };
    for (i, p) in frames.iter().enumerate() {
        if let Some(image) = sink.existing(i)? {
            let out = FrameOutput { frame: i, image, report: None, masks: vec![] };
            sink.frame_done(&out)?;
            result.frames.push(out.image.clone());
            result.outputs.push(out);
            continue;
        }
        let solver = if i == 0 { &config.solver } else { &later_solver };
        let (init, terms) = if i == 0 {
            (config.noise.frame_noise(0, w, h, c)?, Vec::new())
        } else {
            let prev = &result.frames[i - 1];
            match config.algorithm {
                Algorithm::PrevInit => (prev.clone(), Vec::new()),
                Algorithm::WarpedInit => {
                    let pair = flows.pair(i - 1, i)?;
                    (warp_image(prev, &pair.backward)?, Vec::new())
                }
                Algorithm::ShortTerm | Algorithm::LongTerm => {
                    let terms = long_term_terms(i, offsets, &result.frames, flows, &config.consistency)?;
                    let init = match terms.first() {
                        Some((1, t)) => t.warped.clone(),
                        _ => warp_image(prev, &flows.pair(i - 1, i)?.backward)?,
                    };
                    (init, terms)
                }
                Algorithm::Independent | Algorithm::MultiPass => unreachable!(),
            }
        };
        let masks = terms.iter().map(|(j, t)| (*j as isize, t.weights.clone())).collect();
        let terms = terms.into_iter().map(|(_, t)| t).collect();
        let (image, report) = stylizer.stylize_frame(p, &init, terms, solver)?;
        let out = FrameOutput { frame: i, image, report: Some(report), masks };
        sink.frame_done(&out)?;
        result.frames.push(out.image.clone());
        result.outputs.push(out);
    }
    Ok(result)
}

/// Direction of multi-pass sweep `pass`; pass 0 is the independent forward sweep.
pub fn pass_direction(pass: usize) -> Direction {
    if pass % 2 == 0 {
        Direction::Forward
    } else {
        Direction::Backward
    }
}

/// Pair oriented so that `forward` points from `neighbor` into `frame`.
fn neighbor_pair(flows: &dyn FlowSource, neighbor: usize, frame: usize) -> Result<FlowPair> {
    if neighbor < frame {
        flows.pair(neighbor, frame)
    } else {
        Ok(flows.pair(frame, neighbor)?.reversed())
    }
}

/// Alternating-direction passes with blended warped initialization.
pub fn run_multi_pass(
    extractor: &dyn FeatureExtractor,
    frames: &[Image],
    style: &Image,
    flows: &dyn FlowSource,
    config: &VideoConfig,
    sink: &mut dyn FrameSink,
) -> Result<SequenceResult> {
    config.validate()?;
    check_frames(frames)?;
    let mp = &config.multi_pass;
    let (w, h, c) = (frames[0].width(), frames[0].height(), frames[0].channels());
    let n = frames.len();
    let stylizer = Stylizer::new(extractor, style, w, h, config.weights.clone())?;
    let solver = config.solver.clone().fixed_iterations(mp.iterations_per_pass);

    // neighbor warps and weights are fixed for the run: (neighbor, frame) -> (pair, c)
    let mut links: HashMap<(usize, usize), (FlowPair, WeightMask)> = HashMap::new();
    if mp.passes > 1 {
        for i in 1..n {
            for (a, b) in [(i - 1, i), (i, i - 1)] {
                let pair = neighbor_pair(flows, a, b)?;
                let weights = consistency_weights_with(&pair, &config.consistency);
                links.insert((a, b), (pair, weights));
            }
        }
    }

    let mut passes = Vec::with_capacity(mp.passes);
    let solved: Vec<Result<(Image, SolveReport, Image)>> = frames
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let init = config.noise.frame_noise(i, w, h, c)?;
            let (x, r) = stylizer.stylize_frame(p, &init, Vec::new(), &solver)?;
            Ok((x, r, init))
        })
        .collect();
    let mut current = Vec::with_capacity(n);
    let mut reports = Vec::with_capacity(n);
    let mut inits = Vec::with_capacity(n);
    for s in solved {
        let (x, r, init) = s?;
        current.push(x);
        reports.push(r);
        inits.push(init);
    }
    passes.push(PassRecord {
        pass: 0,
        direction: Direction::Forward,
        temporal_enabled: false,
        delta: mp.delta,
        iterations_per_pass: mp.iterations_per_pass,
        inits: mp.record_inits.then_some(inits),
    });
    let mut masks: Vec<Vec<(isize, WeightMask)>> = vec![Vec::new(); n];

    for pass in 1..mp.passes {
        let direction = pass_direction(pass);
        let temporal = pass >= mp.temporal_activation_pass;
        let previous = current.clone();
        let order: Vec<usize> = match direction {
            Direction::Forward => (0..n).collect(),
            Direction::Backward => (0..n).rev().collect(),
        };
        let mut inits = vec![None; n];
        for &i in &order {
            let neighbor = match direction {
                Direction::Forward => i.checked_sub(1),
                Direction::Backward => (i + 1 < n).then_some(i + 1),
            };
            let (init, terms) = match neighbor {
                None => (previous[i].clone(), Vec::new()),
                Some(nb) => {
                    let (pair, weights) = &links[&(nb, i)];
                    let warped = warp_image(&current[nb], &pair.backward)?;
                    let init = blend(&warped, &previous[i], weights, mp.delta)?;
                    masks[i] = vec![(i as isize - nb as isize, weights.clone())];
                    let terms = if temporal {
                        vec![TemporalTerm { warped, weights: weights.clone() }]
                    } else {
                        Vec::new()
                    };
                    (init, terms)
                }
            };
            let (x, r) = stylizer.stylize_frame(&frames[i], &init, terms, &solver)?;
            current[i] = x;
            reports[i] = r;
            if mp.record_inits {
                inits[i] = Some(init);
            }
        }
        passes.push(PassRecord {
            pass,
            direction,
            temporal_enabled: temporal,
            delta: mp.delta,
            iterations_per_pass: mp.iterations_per_pass,
            inits: mp.record_inits.then(|| inits.into_iter().map(|i| i.expect("every frame visited")).collect()),
        });
    }

    let mut result = SequenceResult { frames: current.clone(), outputs: Vec::new(), passes };
    for (i, (image, report)) in current.into_iter().zip(reports).enumerate() {
        let out = FrameOutput { frame: i, image, report: Some(report), masks: std::mem::take(&mut masks[i]) };
        sink.frame_done(&out)?;
        result.outputs.push(out);
    }
    Ok(result)
}

/// Loads `frame_0001.ppm`, `frame_0002.ppm`, ... from a directory until one is missing.
pub fn read_frames(dir: &Path) -> Result<Vec<Image>> {
    let mut frames = Vec::new();
    loop {
        let path = dir.join(frame_name(frames.len()));
        if !path.is_file() {
            break;
        }
        frames.push(crate::image::read_ppm(&path)?);
    }
    if frames.is_empty() {
        return Err(Error::MissingFiles(vec![dir.join(frame_name(0))]));
    }
    Ok(frames)
}
