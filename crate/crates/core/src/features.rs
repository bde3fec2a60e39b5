//! Joint-color structure tensor analysis and filter selection.
//!
//! Gradients are central differences with replicate boundaries. The tensor
//! sums per-channel gradient outer products over a 5x5 Gaussian window
//! (std 1, weights normalized to one). Its eigenanalysis yields the
//! orientation of the least-variation direction, the strength `sqrt(l1)` and
//! the coherence `(sqrt(l1) - sqrt(l2)) / (sqrt(l1) + sqrt(l2))`, which are
//! binned into a bucket index.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imagecore::Image;

pub const WINDOW_RADIUS: usize = 2;
const WINDOW_STD: f64 = 1.0;

/// Normalized 1-D Gaussian taps for offsets `-2..=2`.
pub fn window_weights() -> [f64; 2 * WINDOW_RADIUS + 1] {
    let mut w = [0.0; 2 * WINDOW_RADIUS + 1];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - WINDOW_RADIUS as f64;
        *v = (-d * d / (2.0 * WINDOW_STD * WINDOW_STD)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Per-pixel central-difference gradients `(gx, gy)` of channel `c`.
pub fn gradients(img: &Image, c: usize) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width(), img.height());
    let plane = img.plane(c);
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        let up = y.saturating_sub(1);
        let down = (y + 1).min(h - 1);
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let left = x.saturating_sub(1);
            let right = (x + 1).min(w - 1);
            gx[y * w + x] = (row[right] - row[left]) * 0.5;
            gy[y * w + x] = (plane[down * w + x] - plane[up * w + x]) * 0.5;
        }
    }
    (gx, gy)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StructureTensor {
    pub txx: f64,
    pub txy: f64,
    pub tyy: f64,
}

impl StructureTensor {
    pub fn trace(&self) -> f64 {
        self.txx + self.tyy
    }

    pub fn det(&self) -> f64 {
        self.txx * self.tyy - self.txy * self.txy
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            txx: self.txx * s,
            txy: self.txy * s,
            tyy: self.tyy * s,
        }
    }

    /// `a^T T a` for the unit vector at angle `theta`.
    pub fn quadratic_form(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        self.txx * c * c + 2.0 * self.txy * c * s + self.tyy * s * s
    }
}

/// Structure tensor at a single pixel, evaluated directly from its window.
pub fn structure_tensor(img: &Image, x: usize, y: usize) -> StructureTensor {
    let w = window_weights();
    let r = WINDOW_RADIUS as isize;
    let (width, height) = (img.width() as isize, img.height() as isize);
    let mut t = StructureTensor::default();
    for c in 0..img.channels() {
        let v = |xx: isize, yy: isize| img.sample_clamped(xx, yy, c);
        for dy in -r..=r {
            for dx in -r..=r {
                let px = (x as isize + dx).clamp(0, width - 1);
                let py = (y as isize + dy).clamp(0, height - 1);
                let gx = (v(px + 1, py) - v(px - 1, py)) * 0.5;
                let gy = (v(px, py + 1) - v(px, py - 1)) * 0.5;
                let wt = w[(dx + r) as usize] * w[(dy + r) as usize];
                t.txx += wt * gx * gx;
                t.txy += wt * gx * gy;
                t.tyy += wt * gy * gy;
            }
        }
    }
    t
}

/// Gradient products summed over channels, blurred horizontally;
/// interleaved `[xx, xy, yy]` per pixel.
fn horizontal_products(img: &Image, weights: &[f64]) -> Vec<[f64; 3]> {
    let (w, h) = (img.width(), img.height());
    let r = WINDOW_RADIUS;
    let mut horiz = vec![[0.0f64; 3]; w * h];
    horiz.par_chunks_mut(w).enumerate().for_each_init(
        || vec![[0.0f64; 3]; w + 2 * r],
        |prod, (y, out)| {
            prod.iter_mut().for_each(|p| *p = [0.0; 3]);
            let (up, down) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for c in 0..img.channels() {
                let plane = img.plane(c);
                let row = &plane[y * w..(y + 1) * w];
                let above = &plane[up * w..(up + 1) * w];
                let below = &plane[down * w..(down + 1) * w];
                for x in 0..w {
                    let gx = (row[(x + 1).min(w - 1)] - row[x.saturating_sub(1)]) * 0.5;
                    let gy = (below[x] - above[x]) * 0.5;
                    let p = &mut prod[x + r];
                    p[0] += gx * gx;
                    p[1] += gx * gy;
                    p[2] += gy * gy;
                }
            }
            for k in 0..r {
                prod[k] = prod[r];
                prod[w + r + k] = prod[w + r - 1];
            }
            for (x, o) in out.iter_mut().enumerate() {
                let mut acc = [0.0; 3];
                for (k, &wt) in weights.iter().enumerate() {
                    let p = prod[x + k];
                    acc[0] += wt * p[0];
                    acc[1] += wt * p[1];
                    acc[2] += wt * p[2];
                }
                *o = acc;
            }
        },
    );
    horiz
}

/// Vertical window pass producing the tensors of row `y`.
fn vertical_row(horiz: &[[f64; 3]], w: usize, h: usize, y: usize, weights: &[f64], out: &mut [StructureTensor]) {
    out.iter_mut().for_each(|t| *t = StructureTensor::default());
    for (k, &wt) in weights.iter().enumerate() {
        let yy = (y + k).saturating_sub(WINDOW_RADIUS).min(h - 1);
        for (t, p) in out.iter_mut().zip(&horiz[yy * w..(yy + 1) * w]) {
            t.txx += wt * p[0];
            t.txy += wt * p[1];
            t.tyy += wt * p[2];
        }
    }
}

/// Structure tensors for every pixel of `img`, computed with separable
/// window passes.
pub fn structure_tensor_field(img: &Image) -> Vec<StructureTensor> {
    let (w, h) = (img.width(), img.height());
    let weights = window_weights();
    let horiz = horizontal_products(img, &weights);
    let mut out = vec![StructureTensor::default(); w * h];
    out.par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| vertical_row(&horiz, w, h, y, &weights, row));
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorFeatures {
    /// Angle of the least-variation eigenvector, in `[0, pi)`.
    pub orientation: f64,
    /// `sqrt(lambda1)`.
    pub strength: f64,
    /// In `[0, 1]`; 0 for isotropic or zero tensors.
    pub coherence: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Closed-form eigenanalysis of the 2x2 tensor.
pub fn eigen_features(t: &StructureTensor) -> TensorFeatures {
    let half_tr = 0.5 * (t.txx + t.tyy);
    let half_diff = 0.5 * (t.txx - t.tyy);
    let disc = (half_diff * half_diff + t.txy * t.txy).sqrt();
    let lambda1 = (half_tr + disc).max(0.0);
    // det / lambda1 keeps the small eigenvalue accurate when the two differ by
    // many orders of magnitude.
    let lambda2 = if lambda1 > 0.0 {
        (t.det() / lambda1).clamp(0.0, lambda1)
    } else {
        0.0
    };

    let isotropic = disc <= 1e-12 * half_tr.abs() || disc == 0.0;
    let orientation = if isotropic {
        0.0
    } else {
        let major = 0.5 * t.txy.atan2(half_diff);
        wrap_half_turn(major + 0.5 * PI)
    };

    let (s1, s2) = (lambda1.sqrt(), lambda2.sqrt());
    let coherence = if s1 + s2 > 0.0 { (s1 - s2) / (s1 + s2) } else { 0.0 };
    TensorFeatures {
        orientation,
        strength: s1,
        coherence,
        lambda1,
        lambda2,
    }
}

fn wrap_half_turn(theta: f64) -> f64 {
    if (0.0..PI).contains(&theta) {
        return theta;
    }
    if (PI..2.0 * PI).contains(&theta) && theta - PI < PI {
        return theta - PI;
    }
    let r = theta.rem_euclid(PI);
    if r >= PI {
        0.0
    } else {
        r
    }
}

/// Bucket layout: `n_orient` uniform orientation bins and threshold-defined
/// strength and coherence bins.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerSpec {
    n_orient: usize,
    strength_thresholds: Vec<f64>,
    coherence_thresholds: Vec<f64>,
}

impl QuantizerSpec {
    pub fn new(n_orient: usize, strength_thresholds: Vec<f64>, coherence_thresholds: Vec<f64>) -> Result<Self> {
        if n_orient == 0 {
            return Err(Error::Config("n_orient must be at least 1".into()));
        }
        for (name, t) in [("strength", &strength_thresholds), ("coherence", &coherence_thresholds)] {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("{name} thresholds must be finite")));
            }
            if t.windows(2).any(|p| p[0] >= p[1]) {
                return Err(Error::Config(format!("{name} thresholds must be strictly ascending")));
            }
        }
        Ok(Self {
            n_orient,
            strength_thresholds,
            coherence_thresholds,
        })
    }

    pub fn n_orient(&self) -> usize {
        self.n_orient
    }

    pub fn n_strength(&self) -> usize {
        self.strength_thresholds.len() + 1
    }

    pub fn n_coherence(&self) -> usize {
        self.coherence_thresholds.len() + 1
    }

    pub fn strength_thresholds(&self) -> &[f64] {
        &self.strength_thresholds
    }

    pub fn coherence_thresholds(&self) -> &[f64] {
        &self.coherence_thresholds
    }

    pub fn bucket_count(&self) -> usize {
        self.n_orient * self.n_strength() * self.n_coherence()
    }

    #[inline]
    pub fn orientation_bin(&self, orientation: f64) -> usize {
        // NaN casts to 0, infinities saturate; the modulo keeps it in range.
        let o = (orientation / PI * self.n_orient as f64).floor();
        (o as i64).rem_euclid(self.n_orient as i64) as usize
    }

    #[inline]
    pub fn strength_bin(&self, strength: f64) -> usize {
        self.strength_thresholds.partition_point(|&t| t <= strength)
    }

    #[inline]
    pub fn coherence_bin(&self, coherence: f64) -> usize {
        self.coherence_thresholds.partition_point(|&t| t <= coherence)
    }

    #[inline]
    pub fn index(&self, o: usize, st: usize, co: usize) -> usize {
        (o * self.n_strength() + st) * self.n_coherence() + co
    }

    /// Inverse of [`QuantizerSpec::index`].
    pub fn components(&self, bucket: usize) -> (usize, usize, usize) {
        let co = bucket % self.n_coherence();
        let rest = bucket / self.n_coherence();
        (rest / self.n_strength(), rest % self.n_strength(), co)
    }

    #[inline]
    pub fn quantize(&self, f: &TensorFeatures) -> usize {
        self.index(
            self.orientation_bin(f.orientation),
            self.strength_bin(f.strength),
            self.coherence_bin(f.coherence),
        )
    }
}

/// Per-pixel bucket indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorMap {
    pub width: usize,
    pub height: usize,
    pub indices: Vec<u32>,
}

impl SelectorMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> usize {
        self.indices[y * self.width + x] as usize
    }
}

/// Features for every pixel of `img`.
pub fn feature_field(img: &Image) -> Vec<TensorFeatures> {
    structure_tensor_field(img).par_iter().map(eigen_features).collect()
}

/// Selector for every pixel, analyzing all channels of `img` jointly.
pub fn build_selector(img: &Image, q: &QuantizerSpec) -> SelectorMap {
    let (w, h) = (img.width(), img.height());
    let weights = window_weights();
    let horiz = horizontal_products(img, &weights);
    let mut indices = vec![0u32; w * h];
    indices.par_chunks_mut(w).enumerate().for_each_init(
        || vec![StructureTensor::default(); w],
        |tensors, (y, out)| {
            vertical_row(&horiz, w, h, y, &weights, tensors);
            for (o, t) in out.iter_mut().zip(tensors.iter()) {
                *o = q.quantize(&eigen_features(t)) as u32;
            }
        },
    );
    SelectorMap {
        width: img.width(),
        height: img.height(),
        indices,
    }
}

/// Linear-interpolated empirical quantile of a sorted sample.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn quantile_thresholds(mut values: Vec<f64>, bins: usize) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = (1..bins)
        .map(|k| quantile_sorted(&values, k as f64 / bins as f64))
        .collect();
    for k in 1..out.len() {
        if out[k] <= out[k - 1] {
            let prev = out[k - 1];
            out[k] = prev + 1e-9 * prev.abs().max(1.0);
        }
    }
    out
}

/// Strength and coherence thresholds at the empirical `k / n` quantiles of
/// the sample, nudged apart where quantiles coincide.
pub fn fit_thresholds(
    sample: &[TensorFeatures],
    n_orient: usize,
    n_strength: usize,
    n_coherence: usize,
) -> Result<QuantizerSpec> {
    if sample.is_empty() {
        return Err(Error::Empty("feature sample for threshold fitting".into()));
    }
    if n_strength == 0 || n_coherence == 0 {
        return Err(Error::Config(
            "strength and coherence bucket counts must be at least 1".into(),
        ));
    }
    let strength = quantile_thresholds(sample.iter().map(|f| f.strength).collect(), n_strength);
    let coherence = quantile_thresholds(sample.iter().map(|f| f.coherence).collect(), n_coherence);
    QuantizerSpec::new(n_orient, strength, coherence)
}
