//! Oracles shared by the acceptance and gradient suites. Nothing here calls the code
//! under test to produce expected values.

#![allow(dead_code)]

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vidstyle::image::Image;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Image with values uniform in `[lo, hi]`.
pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, lo: f64, hi: f64) -> Image {
    Image::new(w, h, 3, (0..w * h * 3).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn perturbed(x: &Image, k: usize, delta: f64) -> Image {
    let mut data = x.data().to_vec();
    data[k] += delta;
    Image::new(x.width(), x.height(), x.channels(), data).unwrap()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradStats {
    pub checked: usize,
    /// Coordinates whose step straddles a kink of the loss.
    pub skipped: usize,
    pub max_rel: f64,
}

impl GradStats {
    pub fn merge(&mut self, o: GradStats) {
        self.checked += o.checked;
        self.skipped += o.skipped;
        self.max_rel = self.max_rel.max(o.max_rel);
    }
}

/// Relative error `|a - n| / max(|a|, |n|)`; two exact zeros count as agreement.
pub fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Central differences at `coords`. A coordinate is skipped when the central
/// differences at `h` and `h / 2` disagree by more than `kink_tol` relative: for a
/// smooth loss they agree to `O(h^2)`, so disagreement means a ReLU switch or an
/// absolute-value tie lies inside `[x - h, x + h]`.
pub fn check_gradient(
    f: &dyn Fn(&Image) -> f64,
    x: &Image,
    analytic: &[f64],
    coords: &[usize],
    h: f64,
    kink_tol: f64,
) -> GradStats {
    let central = |k: usize, step: f64| (f(&perturbed(x, k, step)) - f(&perturbed(x, k, -step))) / (2.0 * step);
    let mut stats = GradStats::default();
    for &k in coords {
        let numeric = central(k, h);
        if rel_err(numeric, central(k, h / 2.0)) > kink_tol {
            stats.skipped += 1;
            continue;
        }
        stats.max_rel = stats.max_rel.max(rel_err(analytic[k], numeric));
        stats.checked += 1;
    }
    stats
}

/// Exclusive long-term weights computed pixel by pixel:
/// `max(c_j - sum_{k in J, k < j} c_k, 0)`.
pub fn long_term_oracle(masks: &[(usize, Vec<f64>)], j: usize) -> Vec<f64> {
    let target = &masks.iter().find(|(o, _)| *o == j).unwrap().1;
    (0..target.len())
        .map(|p| {
            let earlier: f64 = masks.iter().filter(|(o, _)| *o < j).map(|(_, m)| m[p]).sum();
            (target[p] - earlier).max(0.0)
        })
        .collect()
}

pub fn median(values: &[usize]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

/// MSE over the pixels `keep(x, y)` of two images.
pub fn region_mse(a: &Image, b: &Image, keep: impl Fn(usize, usize) -> bool) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..a.height() {
        for x in 0..a.width() {
            if keep(x, y) {
                for c in 0..a.channels() {
                    sum += (a.get(x, y, c) - b.get(x, y, c)).powi(2);
                    n += 1;
                }
            }
        }
    }
    sum / n as f64
}
