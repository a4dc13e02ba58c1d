//! Warp-back evaluation, report tables and a synthetic scene generator with exact
//! ground-truth flow and disocclusion.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{disocclusion_mask, FlowField, FlowPair, PixelMask};
use crate::image::{Image, Rng, WeightMask};
use crate::pipeline::FlowSource;

/// Score of one adjacent pair `(i - 1, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScore {
    pub earlier: usize,
    pub later: usize,
    /// `None` when the mask excluded every pixel.
    pub mse: Option<f64>,
    pub valid_pixels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpBackScore {
    pub pairs: Vec<PairScore>,
    /// Uniform mean over scored pairs; `None` if no pair could be scored.
    pub mean: Option<f64>,
}

impl WarpBackScore {
    pub fn skipped(&self) -> impl Iterator<Item = &PairScore> {
        self.pairs.iter().filter(|p| p.mse.is_none())
    }
}

/// Where the evaluation masks came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskSource {
    GroundTruth,
    FlowCheck,
}

/// Warp-back error: for every pair, frame `i - 1` is pulled onto frame `i` along the
/// ground-truth backward flow and compared with frame `i` on the included pixels.
///
/// `backward[k]` is the flow `k + 1 -> k`; `valid[k]` is 1 where frame `k + 1` is
/// not disoccluded. The mask is replicated over channels.
pub fn warp_back_mse(stylized: &[Image], backward: &[FlowField], valid: &[WeightMask]) -> Result<WarpBackScore> {
    let pairs = stylized.len().saturating_sub(1);
    if backward.len() != pairs || valid.len() != pairs {
        return Err(Error::Validation(format!(
            "{} frames need {pairs} flows and masks, got {} and {}",
            stylized.len(),
            backward.len(),
            valid.len()
        )));
    }
    let mut out = Vec::with_capacity(pairs);
    for k in 0..pairs {
        let (prev, cur) = (&stylized[k], &stylized[k + 1]);
        prev.ensure_same_shape(cur, "warp-back frames")?;
        valid[k].ensure_matches(cur.width(), cur.height(), "warp-back mask")?;
        let warped = crate::flow::warp_image(prev, &backward[k])?;
        let c = cur.channels();
        let (mut sum, mut weight) = (0.0, 0.0);
        for (idx, (a, b)) in cur.data().iter().zip(warped.data()).enumerate() {
            let m = valid[k].data()[idx / c];
            sum += m * (a - b) * (a - b);
            weight += m;
        }
        let valid_pixels = valid[k].data().iter().filter(|&&m| m > 0.0).count();
        out.push(PairScore {
            earlier: k,
            later: k + 1,
            mse: (weight > 0.0).then(|| sum / weight),
            valid_pixels,
        });
    }
    let scored: Vec<f64> = out.iter().filter_map(|p| p.mse).collect();
    let mean = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);
    Ok(WarpBackScore { pairs: out, mean })
}

/// Valid-pixel masks derived from the forward-backward check on ground-truth flows.
pub fn masks_from_flows(pairs: &[FlowPair]) -> Vec<WeightMask> {
    pairs.iter().map(|p| disocclusion_mask(p).to_weights()).collect()
}

/// Scores grouped by method (row), scene (column) and style.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportTable {
    methods: Vec<String>,
    scenes: Vec<String>,
    scores: BTreeMap<(String, String), BTreeMap<String, f64>>,
}

impl ReportTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, method: &str, scene: &str, style: &str, score: f64) {
        if !self.methods.iter().any(|m| m == method) {
            self.methods.push(method.to_string());
        }
        if !self.scenes.iter().any(|s| s == scene) {
            self.scenes.push(scene.to_string());
        }
        self.scores
            .entry((method.to_string(), scene.to_string()))
            .or_default()
            .insert(style.to_string(), score);
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    pub fn scenes(&self) -> &[String] {
        &self.scenes
    }

    /// Mean over styles.
    pub fn cell(&self, method: &str, scene: &str) -> Option<f64> {
        let styles = self.scores.get(&(method.to_string(), scene.to_string()))?;
        (!styles.is_empty()).then(|| styles.values().sum::<f64>() / styles.len() as f64)
    }

    pub fn style_scores(&self, method: &str, scene: &str) -> Option<&BTreeMap<String, f64>> {
        self.scores.get(&(method.to_string(), scene.to_string()))
    }

    /// Aligned table with two significant digits per score.
    pub fn render_text(&self) -> String {
        let fmt_cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.1e}"));
        let label_w = self.methods.iter().map(String::len).max().unwrap_or(0).max(6);
        let col_w: Vec<usize> = self
            .scenes
            .iter()
            .map(|s| {
                self.methods.iter().map(|m| fmt_cell(self.cell(m, s)).len()).max().unwrap_or(0).max(s.len())
            })
            .collect();
        let mut out = String::new();
        let _ = write!(out, "{:label_w$}", "method");
        for (s, w) in self.scenes.iter().zip(&col_w) {
            let _ = write!(out, "  {s:>w$}");
        }
        out.push('\n');
        for m in &self.methods {
            let _ = write!(out, "{m:label_w$}");
            for (s, w) in self.scenes.iter().zip(&col_w) {
                let _ = write!(out, "  {:>w$}", fmt_cell(self.cell(m, s)));
            }
            out.push('\n');
        }
        out
    }

    /// Comma-separated table of style means at full precision.
    pub fn render_delimited(&self) -> String {
        let mut out = String::from("method");
        for s in &self.scenes {
            let _ = write!(out, ",{s}");
        }
        out.push('\n');
        for m in &self.methods {
            out.push_str(m);
            for s in &self.scenes {
                match self.cell(m, s) {
                    Some(v) => {
                        let _ = write!(out, ",{v:e}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    /// One `method,scene,style,score` line per stored score.
    pub fn render_per_style(&self) -> String {
        let mut out = String::from("method,scene,style,score\n");
        for m in &self.methods {
            for s in &self.scenes {
                if let Some(styles) = self.style_scores(m, s) {
                    for (style, v) in styles {
                        let _ = writeln!(out, "{m},{s},{style},{v:e}");
                    }
                }
            }
        }
        out
    }
}

/// Parses [`ReportTable::render_delimited`] output into `(method, per-scene cells)` rows.
pub fn parse_delimited(text: &str) -> Result<(Vec<String>, Vec<(String, Vec<Option<f64>>)>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Validation("empty table".into()))?;
    let scenes: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let mut fields = line.split(',');
        let method = fields.next().unwrap_or_default().to_string();
        let cells = fields
            .map(|f| {
                if f.is_empty() {
                    Ok(None)
                } else {
                    f.parse::<f64>()
                        .map(Some)
                        .map_err(|_| Error::Validation(format!("line {}: bad score '{f}'", n + 2)))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if cells.len() != scenes.len() {
            return Err(Error::Validation(format!("line {}: expected {} cells", n + 2, scenes.len())));
        }
        rows.push((method, cells));
    }
    Ok((scenes, rows))
}

/// Rows must satisfy `random > prev > warped > temporal` in every scene. Each
/// argument names a row label; returns one message per violated inequality.
pub fn ordering_violations(table: &ReportTable, temporal: &str, warped: &str, prev: &str, random: &str) -> Vec<String> {
    let chain = [random, prev, warped, temporal];
    let mut out = Vec::new();
    for scene in table.scenes() {
        for w in chain.windows(2) {
            match (table.cell(w[0], scene), table.cell(w[1], scene)) {
                (Some(a), Some(b)) if a > b => {}
                (Some(a), Some(b)) => out.push(format!("{scene}: {} ({a:.2e}) <= {} ({b:.2e})", w[0], w[1])),
                _ => out.push(format!("{scene}: missing {} or {}", w[0], w[1])),
            }
        }
    }
    out
}

/// Published Sintel scores (mean over six styles, pixel range [0, 1]) for reference rendering.
pub fn reference_table() -> ReportTable {
    const SCENES: [&str; 5] = ["alley_2", "ambush_5", "ambush_6", "bandage_2", "market_6"];
    const ROWS: [(&str, [f64; 5]); 5] = [
        ("DeepFlow", [0.00061, 0.0062, 0.012, 0.00084, 0.0035]),
        ("EpicFlow", [0.00073, 0.0068, 0.014, 0.00080, 0.0032]),
        ("Init prev warped", [0.0016, 0.0063, 0.012, 0.0015, 0.0049]),
        ("Init prev", [0.010, 0.018, 0.028, 0.0041, 0.014]),
        ("Init random", [0.019, 0.027, 0.037, 0.018, 0.023]),
    ];
    let mut t = ReportTable::new();
    for (method, values) in ROWS {
        for (scene, v) in SCENES.iter().zip(values) {
            t.insert(method, scene, "mean", v);
        }
    }
    t
}

/// One textured rectangle of a synthetic scene. Later objects are drawn on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthObject {
    /// Top-left corner at frame 0.
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    /// Displacement per frame.
    pub velocity: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthScene {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Displacement of the background texture per frame.
    pub background_velocity: (f64, f64),
    pub objects: Vec<SynthObject>,
}

impl SynthScene {
    /// Panning background with two rectangles at different velocities, one subpixel.
    pub fn default_scene(seed: u64) -> Self {
        SynthScene {
            seed,
            width: 64,
            height: 64,
            frames: 5,
            background_velocity: (1.0, 0.0),
            objects: vec![
                SynthObject { x: 6.0, y: 10.0, width: 18.0, height: 14.0, velocity: (3.0, 1.0) },
                SynthObject { x: 40.0, y: 34.0, width: 14.0, height: 20.0, velocity: (-2.5, -1.5) },
            ],
        }
    }

    pub fn static_scene(seed: u64) -> Self {
        SynthScene {
            seed,
            width: 64,
            height: 64,
            frames: 4,
            background_velocity: (0.0, 0.0),
            objects: vec![SynthObject { x: 20.0, y: 20.0, width: 16.0, height: 16.0, velocity: (0.0, 0.0) }],
        }
    }

    /// Static background and one rectangle moving `speed` pixels per frame to the right.
    pub fn moving_rectangle(seed: u64, speed: f64) -> Self {
        SynthScene {
            seed,
            width: 64,
            height: 64,
            frames: 5,
            background_velocity: (0.0, 0.0),
            objects: vec![SynthObject { x: 8.0, y: 20.0, width: 16.0, height: 16.0, velocity: (speed, 0.0) }],
        }
    }

    /// A full-height bar sweeps across a static background; each background column is
    /// hidden for two frames and then revealed again.
    pub fn occlusion_scene(seed: u64) -> Self {
        SynthScene {
            seed,
            width: 64,
            height: 64,
            frames: 8,
            background_velocity: (0.0, 0.0),
            objects: vec![SynthObject { x: 4.0, y: 0.0, width: 12.0, height: 64.0, velocity: (6.0, 0.0) }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return Err(Error::config("synthetic scene needs positive size and frame count"));
        }
        for (k, o) in self.objects.iter().enumerate() {
            if !(o.width > 0.0 && o.height > 0.0) {
                return Err(Error::config(format!("object {k} has empty extent")));
            }
            for t in 0..self.frames {
                let (x, y) = self.object_origin(k, t as f64);
                if x < 0.0 || y < 0.0 || x + o.width > self.width as f64 || y + o.height > self.height as f64 {
                    return Err(Error::Validation(format!(
                        "object {k} leaves the {}x{} canvas at frame {} (origin {x}, {y})",
                        self.width,
                        self.height,
                        t + 1
                    )));
                }
            }
        }
        Ok(())
    }

    fn object_origin(&self, k: usize, t: f64) -> (f64, f64) {
        let o = &self.objects[k];
        (o.x + t * o.velocity.0, o.y + t * o.velocity.1)
    }

    fn velocity(&self, surface: Surface) -> (f64, f64) {
        match surface {
            Surface::Background => self.background_velocity,
            Surface::Object(k) => self.objects[k].velocity,
        }
    }

    /// Topmost surface at a (possibly fractional) position in frame `t`.
    fn surface_at(&self, x: f64, y: f64, t: f64) -> Surface {
        for k in (0..self.objects.len()).rev() {
            let (ox, oy) = self.object_origin(k, t);
            let o = &self.objects[k];
            if x >= ox && x < ox + o.width && y >= oy && y < oy + o.height {
                return Surface::Object(k);
            }
        }
        Surface::Background
    }

    /// Ground-truth pair between two frames (either order of magnitude apart).
    pub fn flow_pair(&self, earlier: usize, later: usize) -> FlowPair {
        let dt = later as f64 - earlier as f64;
        let field = |t: usize, sign: f64| {
            FlowField::from_fn(self.width, self.height, |x, y| {
                let v = self.velocity(self.surface_at(x as f64, y as f64, t as f64));
                ((sign * dt * v.0) as f32, (sign * dt * v.1) as f32)
            })
        };
        FlowPair { forward: field(earlier, 1.0), backward: field(later, -1.0) }
    }

    /// Pixels of frame `later` whose surface is hidden or off-canvas in frame `earlier`.
    pub fn disocclusion(&self, earlier: usize, later: usize) -> PixelMask {
        let dt = later as f64 - earlier as f64;
        let (w, h) = (self.width as f64, self.height as f64);
        PixelMask::from_fn(self.width, self.height, |x, y| {
            let s = self.surface_at(x as f64, y as f64, later as f64);
            let v = self.velocity(s);
            let (qx, qy) = (x as f64 - dt * v.0, y as f64 - dt * v.1);
            if qx < 0.0 || qy < 0.0 || qx > w - 1.0 || qy > h - 1.0 {
                return true;
            }
            self.surface_at(qx, qy, earlier as f64) != s
        })
    }

    fn texture(&self, surface: Surface) -> Texture {
        let stream = match surface {
            Surface::Background => 0,
            Surface::Object(k) => k as u64 + 1,
        };
        Texture::new(&mut Rng::with_stream(self.seed, stream), surface != Surface::Background)
    }

    pub fn render(&self, t: usize) -> Image {
        let textures: Vec<Texture> = std::iter::once(Surface::Background)
            .chain((0..self.objects.len()).map(Surface::Object))
            .map(|s| self.texture(s))
            .collect();
        let tf = t as f64;
        Image::from_fn(self.width, self.height, 3, |x, y, c| {
            let s = self.surface_at(x as f64, y as f64, tf);
            let (u, v, tex) = match s {
                Surface::Background => {
                    let (vx, vy) = self.background_velocity;
                    (x as f64 - tf * vx, y as f64 - tf * vy, &textures[0])
                }
                Surface::Object(k) => {
                    let (ox, oy) = self.object_origin(k, tf);
                    (x as f64 - ox, y as f64 - oy, &textures[k + 1])
                }
            };
            tex.eval(u, v, c)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Surface {
    Background,
    Object(usize),
}

/// Sum of a few random plane waves per channel around a random base color.
struct Texture {
    base: [f64; 3],
    waves: Vec<(f64, f64, f64, f64, usize)>,
}

impl Texture {
    fn new(rng: &mut Rng, vivid: bool) -> Self {
        use rand::Rng as _;
        let r = rng.inner();
        let spread = if vivid { 0.35 } else { 0.2 };
        let base = [0; 3].map(|_| 0.5 + r.gen_range(-spread..spread));
        let waves = (0..9)
            .map(|i| {
                let angle: f64 = r.gen_range(0.0..std::f64::consts::TAU);
                let freq: f64 = r.gen_range(0.15..0.9);
                let phase: f64 = r.gen_range(0.0..std::f64::consts::TAU);
                let amp: f64 = r.gen_range(0.05..0.15);
                (freq * angle.cos(), freq * angle.sin(), phase, amp, i % 3)
            })
            .collect();
        Texture { base, waves }
    }

    fn eval(&self, u: f64, v: f64, c: usize) -> f64 {
        let mut val = self.base[c];
        for &(fx, fy, phase, amp, ch) in &self.waves {
            let wave = amp * (fx * u + fy * v + phase).sin();
            val += if ch == c { wave } else { 0.4 * wave };
        }
        val.clamp(0.0, 1.0)
    }
}

/// Rendered synthetic sequence with exact flows between any two frames.
#[derive(Debug, Clone)]
pub struct SynthSequence {
    pub scene: SynthScene,
    pub frames: Vec<Image>,
    /// `pairs[k]` is the ground-truth pair `(k, k + 1)`.
    pub pairs: Vec<FlowPair>,
    /// `disocclusions[k]` flags pixels of frame `k + 1` not visible in frame `k`.
    pub disocclusions: Vec<PixelMask>,
}

impl SynthSequence {
    pub fn valid_masks(&self) -> Vec<WeightMask> {
        self.disocclusions.iter().map(PixelMask::to_weights).collect()
    }

    pub fn backward_flows(&self) -> Vec<FlowField> {
        self.pairs.iter().map(|p| p.backward.clone()).collect()
    }
}

impl FlowSource for SynthSequence {
    fn pair(&self, earlier: usize, later: usize) -> Result<FlowPair> {
        if earlier >= later || later >= self.frames.len() {
            return Err(Error::Validation(format!("no flow for frames ({}, {})", earlier + 1, later + 1)));
        }
        Ok(if later == earlier + 1 { self.pairs[earlier].clone() } else { self.scene.flow_pair(earlier, later) })
    }
}

pub fn generate_synth_scene(scene: &SynthScene) -> Result<SynthSequence> {
    scene.validate()?;
    let frames = (0..scene.frames).map(|t| scene.render(t)).collect();
    let pairs = (1..scene.frames).map(|t| scene.flow_pair(t - 1, t)).collect();
    let disocclusions = (1..scene.frames).map(|t| scene.disocclusion(t - 1, t)).collect();
    Ok(SynthSequence { scene: scene.clone(), frames, pairs, disocclusions })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StylePattern {
    /// Saturated diagonal bands.
    Stripes,
    /// Soft overlapping color blobs.
    Blobs,
}

/// Procedural stand-ins for painting style images.
pub fn synthetic_style(pattern: StylePattern, width: usize, height: usize, seed: u64) -> Image {
    use rand::Rng as _;
    let mut rng = Rng::new(seed);
    let r = rng.inner();
    match pattern {
        StylePattern::Stripes => {
            let palette: Vec<[f64; 3]> = (0..4).map(|_| [0; 3].map(|_| r.gen_range(0.0..1.0))).collect();
            let period: f64 = r.gen_range(5.0..9.0);
            Image::from_fn(width, height, 3, |x, y, c| {
                let t = (x as f64 + 0.6 * y as f64) / period;
                let band = (t.floor() as i64).rem_euclid(palette.len() as i64) as usize;
                let edge = (t.fract() - 0.5).abs() * 0.3;
                palette[band][c] * (0.85 + edge)
            })
        }
        StylePattern::Blobs => {
            let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..12)
                .map(|_| {
                    (
                        r.gen_range(0.0..width as f64),
                        r.gen_range(0.0..height as f64),
                        r.gen_range(3.0..9.0),
                        [0; 3].map(|_| r.gen_range(0.0..1.0)),
                    )
                })
                .collect();
            Image::from_fn(width, height, 3, |x, y, c| {
                let (mut acc, mut wsum) = (0.0, 1e-3);
                for &(bx, by, rad, col) in &blobs {
                    let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                    let w = (-d2 / (2.0 * rad * rad)).exp();
                    acc += w * col[c];
                    wsum += w;
                }
                acc / wsum
            })
        }
    }
}
