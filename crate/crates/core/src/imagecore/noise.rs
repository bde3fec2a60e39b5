use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{ColorSpace, Image};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Awgn,
}

/// Additive noise description; `sigma` is in 8-bit units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn awgn(sigma: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Awgn,
            sigma,
            seed,
        }
    }
}

/// `round(clamp(img + N(0, sigma^2), 0, 255))`, independently per sample.
///
/// Every (channel, row) pair draws from its own ChaCha stream keyed by the
/// seed, so the result does not depend on the thread count.
pub fn add_awgn(img: &Image, noise: NoiseModel) -> Result<Image> {
    match img.colorspace() {
        ColorSpace::Rgb | ColorSpace::Gray => {}
        found => {
            return Err(Error::ColorSpace {
                expected: ColorSpace::Rgb,
                found,
            })
        }
    }
    if !noise.sigma.is_finite() || noise.sigma < 0.0 {
        return Err(Error::Config(format!(
            "noise sigma must be finite and >= 0, got {}",
            noise.sigma
        )));
    }
    let w = img.width();
    let mut out = img.clone();
    let sigma = noise.sigma;
    out.data_mut().par_chunks_mut(w).enumerate().for_each(|(row, samples)| {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        rng.set_stream(row as u64);
        for v in samples {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v = (*v + sigma * n).clamp(0.0, 255.0).round();
        }
    });
    Ok(out)
}

/// Peak signal-to-noise ratio over all samples with peak 255.
/// Identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch(format!(
            "psnr of {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    let sse: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    let mse = sse / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (255.0 / mse.sqrt()).log10())
}
