//! Box-constrained minimization over images.
//!
//! The default method is limited-memory BFGS with a projected backtracking line
//! search: trial points are clamped to `[0, 1]` and search directions drop the
//! components that would push a saturated pixel further out of range.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::LossBreakdown;

/// Strict stopping threshold: 0.01% relative change over the window.
pub const STRICT_THRESHOLD: f64 = 1e-4;
/// Relaxed stopping threshold: 0.1%.
pub const RELAXED_THRESHOLD: f64 = 1e-3;
pub const DEFAULT_WINDOW: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    QuasiNewton,
    AdaptiveFirstOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    pub max_iterations: usize,
    /// When false the solver always runs `max_iterations` iterations.
    pub check_convergence: bool,
    pub convergence_window: usize,
    pub convergence_threshold: f64,
    pub history: usize,
    pub max_line_search: usize,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo: f64,
    /// Largest per-pixel change of the very first quasi-Newton trial step.
    pub initial_step: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: Method::QuasiNewton,
            max_iterations: 2000,
            check_convergence: true,
            convergence_window: DEFAULT_WINDOW,
            convergence_threshold: STRICT_THRESHOLD,
            history: 10,
            max_line_search: 30,
            armijo: 1e-4,
            initial_step: 0.05,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl SolverConfig {
    pub fn relaxed(mut self) -> Self {
        self.convergence_threshold = RELAXED_THRESHOLD;
        self
    }

    /// Run exactly `iterations` iterations without the stopping rule.
    pub fn fixed_iterations(mut self, iterations: usize) -> Self {
        self.max_iterations = iterations;
        self.check_convergence = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.convergence_threshold > 0.0) {
            return Err(Error::config("convergence threshold must be positive"));
        }
        if self.convergence_window == 0 {
            return Err(Error::config("convergence window must be at least 1"));
        }
        if self.method == Method::QuasiNewton && (self.history == 0 || self.max_line_search == 0) {
            return Err(Error::config("quasi-Newton needs history >= 1 and at least one line-search step"));
        }
        if !(self.initial_step > 0.0 && self.learning_rate > 0.0) {
            return Err(Error::config("step sizes must be positive"));
        }
        Ok(())
    }
}

/// Loss value and pixel gradient at a point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub parts: LossBreakdown,
    pub gradient: Vec<f64>,
}

impl Evaluation {
    pub fn loss(&self) -> f64 {
        self.parts.total()
    }
}

pub trait Objective {
    fn evaluate(&mut self, x: &Image) -> Result<Evaluation>;
}

impl<F> Objective for F
where
    F: FnMut(&Image) -> Result<Evaluation>,
{
    fn evaluate(&mut self, x: &Image) -> Result<Evaluation> {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// No descent step could be found; the iterate is stationary on the box.
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub parts: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub final_parts: LossBreakdown,
    pub converged: bool,
    pub termination: Termination,
    /// Loss after every iteration, starting with the initial point at iteration 0.
    pub trace: Vec<TraceEntry>,
}

impl SolveReport {
    pub fn final_loss(&self) -> f64 {
        self.final_parts.total()
    }

    pub fn initial_loss(&self) -> f64 {
        self.trace.first().map_or(f64::NAN, |t| t.parts.total())
    }

    /// Line-oriented log: a `#` header, then `iteration total content style temporal` rows.
    pub fn to_log(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# iterations={} evaluations={} converged={} termination={:?} final_loss={:.17e}",
            self.iterations,
            self.evaluations,
            self.converged,
            self.termination,
            self.final_loss()
        );
        let _ = writeln!(out, "# iteration total content style temporal");
        for t in &self.trace {
            let _ = writeln!(
                out,
                "{} {:.17e} {:.17e} {:.17e} {:.17e}",
                t.iteration,
                t.parts.total(),
                t.parts.content,
                t.parts.style,
                t.parts.temporal
            );
        }
        out
    }
}

/// True when the losses of the trailing window vary by at most `threshold` relative.
pub fn window_converged(trace: &[TraceEntry], window: usize, threshold: f64) -> bool {
    if trace.len() <= window {
        return false;
    }
    let tail = &trace[trace.len() - window - 1..];
    let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
        let v = t.parts.total();
        (lo.min(v), hi.max(v))
    });
    if hi == lo {
        return true;
    }
    (hi - lo) / hi.abs().max(lo.abs()) <= threshold
}

fn check_finite(eval: &Evaluation, iteration: usize) -> Result<()> {
    if !eval.loss().is_finite() {
        return Err(Error::NonFinite { what: "loss", iteration });
    }
    if eval.gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { what: "gradient", iteration });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn clamp_step(x: &Image, dir: &[f64], t: f64) -> Image {
    let data = x.data().iter().zip(dir).map(|(v, d)| (v + t * d).clamp(0.0, 1.0)).collect();
    Image::from_clamped(x.width(), x.height(), x.channels(), data).expect("finite step")
}

/// Zero direction components that push a saturated pixel out of `[0, 1]`.
fn project_direction(x: &Image, dir: &mut [f64]) {
    for (d, &v) in dir.iter_mut().zip(x.data()) {
        if (v <= 0.0 && *d < 0.0) || (v >= 1.0 && *d > 0.0) {
            *d = 0.0;
        }
    }
}

/// Gradient with the components of pixels held at a bound by the gradient zeroed.
fn free_gradient(x: &Image, g: &[f64]) -> Vec<f64> {
    x.data()
        .iter()
        .zip(g)
        .map(|(&v, &gi)| if (v <= 0.0 && gi > 0.0) || (v >= 1.0 && gi < 0.0) { 0.0 } else { gi })
        .collect()
}

struct Memory {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    capacity: usize,
}

impl Memory {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        let scale = dot(&s, &s).sqrt() * dot(&y, &y).sqrt();
        if sy > 1e-12 * scale && sy > 0.0 {
            if self.pairs.len() == self.capacity {
                self.pairs.pop_front();
            }
            self.pairs.push_back((s, y, 1.0 / sy));
        }
    }

    /// Two-loop recursion: returns `-H g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

/// Minimize `objective` over `[0, 1]^D` starting from `init`.
pub fn minimize(objective: &mut dyn Objective, init: &Image, config: &SolverConfig) -> Result<(Image, SolveReport)> {
    config.validate()?;
    match config.method {
        Method::QuasiNewton => lbfgs(objective, init, config),
        Method::AdaptiveFirstOrder => adam(objective, init, config),
    }
}

struct Progress {
    trace: Vec<TraceEntry>,
    evaluations: usize,
}

impl Progress {
    fn record(&mut self, iteration: usize, parts: LossBreakdown) {
        self.trace.push(TraceEntry { iteration, parts });
    }

    fn finish(self, iterations: usize, parts: LossBreakdown, termination: Termination) -> SolveReport {
        SolveReport {
            iterations,
            evaluations: self.evaluations,
            final_parts: parts,
            converged: termination != Termination::MaxIterations,
            termination,
            trace: self.trace,
        }
    }
}

fn lbfgs(objective: &mut dyn Objective, init: &Image, config: &SolverConfig) -> Result<(Image, SolveReport)> {
    let mut x = init.clone();
    let mut eval = objective.evaluate(&x)?;
    check_finite(&eval, 0)?;
    let mut progress = Progress { trace: vec![], evaluations: 1 };
    progress.record(0, eval.parts);
    let mut memory = Memory { pairs: VecDeque::new(), capacity: config.history };

    for iteration in 1..=config.max_iterations {
        let mut moved = false;
        let mut stalled = false;
        for attempt in 0..2 {
            let use_memory = attempt == 0 && !memory.pairs.is_empty();
            let mut dir = if use_memory {
                memory.direction(&free_gradient(&x, &eval.gradient))
            } else {
                eval.gradient.iter().map(|g| -g).collect()
            };
            project_direction(&x, &mut dir);
            let slope = dot(&eval.gradient, &dir);
            if !(slope < 0.0) {
                if use_memory {
                    continue;
                }
                // projected gradient vanishes: nothing to do this iteration
                break;
            }
            let dmax = dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            let mut t = if use_memory { 1.0 } else { config.initial_step / dmax };
            for _ in 0..config.max_line_search {
                let trial = clamp_step(&x, &dir, t);
                let step: Vec<f64> = trial.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
                let decrease = dot(&eval.gradient, &step);
                if decrease >= 0.0 {
                    break;
                }
                let next = objective.evaluate(&trial)?;
                progress.evaluations += 1;
                check_finite(&next, iteration)?;
                if next.loss() <= eval.loss() + config.armijo * decrease {
                    let y: Vec<f64> = next.gradient.iter().zip(&eval.gradient).map(|(a, b)| a - b).collect();
                    memory.push(step, y);
                    x = trial;
                    eval = next;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if moved {
                break;
            }
            memory.pairs.clear();
            if !use_memory {
                stalled = true;
            }
        }
        progress.record(iteration, eval.parts);
        if stalled {
            let parts = eval.parts;
            return Ok((x, progress.finish(iteration, parts, Termination::Stalled)));
        }
        if config.check_convergence
            && window_converged(&progress.trace, config.convergence_window, config.convergence_threshold)
        {
            let parts = eval.parts;
            return Ok((x, progress.finish(iteration, parts, Termination::Converged)));
        }
    }
    let parts = eval.parts;
    Ok((x, progress.finish(config.max_iterations, parts, Termination::MaxIterations)))
}

fn adam(objective: &mut dyn Objective, init: &Image, config: &SolverConfig) -> Result<(Image, SolveReport)> {
    let mut x = init.clone();
    let mut eval = objective.evaluate(&x)?;
    check_finite(&eval, 0)?;
    let mut progress = Progress { trace: vec![], evaluations: 1 };
    progress.record(0, eval.parts);
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    for iteration in 1..=config.max_iterations {
        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = 1.0 - b1.powi(iteration as i32);
        let c2 = 1.0 - b2.powi(iteration as i32);
        let data: Vec<f64> = x
            .data()
            .iter()
            .zip(&eval.gradient)
            .zip(m.iter_mut().zip(v.iter_mut()))
            .map(|((&xi, &g), (mi, vi))| {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let step = config.learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + config.epsilon);
                (xi - step).clamp(0.0, 1.0)
            })
            .collect();
        x = Image::from_clamped(x.width(), x.height(), x.channels(), data)?;
        eval = objective.evaluate(&x)?;
        progress.evaluations += 1;
        check_finite(&eval, iteration)?;
        progress.record(iteration, eval.parts);
        if config.check_convergence
            && window_converged(&progress.trace, config.convergence_window, config.convergence_threshold)
        {
            let parts = eval.parts;
            return Ok((x, progress.finish(iteration, parts, Termination::Converged)));
        }
    }
    let parts = eval.parts;
    Ok((x, progress.finish(config.max_iterations, parts, Termination::MaxIterations)))
}
