//! Image pyramids built by anti-aliased bicubic halving.

use rayon::prelude::*;

use crate::imagecore::Image;

/// Smallest level whose side may not drop below this many pixels.
pub const MIN_LEVEL_SIZE: usize = 8;

/// Noise level a pyramid is built down to: the coarsest level must carry
/// noise std below this.
pub const COARSEST_SIGMA: f64 = 2.0;

/// Number of halvings needed so that `sigma / 2^depth < 2`.
pub fn depth_for_sigma(sigma: f64) -> usize {
    let mut depth = 0;
    let mut s = sigma;
    while s >= COARSEST_SIGMA && depth < 64 {
        s *= 0.5;
        depth += 1;
    }
    depth
}

/// Level geometry and implied per-level noise.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidSpec {
    pub depth: usize,
    pub dims: Vec<(usize, usize)>,
    pub sigmas: Vec<f64>,
}

impl PyramidSpec {
    pub fn new(width: usize, height: usize, sigma: f64) -> Self {
        Self::with_depth(width, height, sigma, depth_for_sigma(sigma))
    }

    pub fn with_depth(width: usize, height: usize, sigma: f64, depth: usize) -> Self {
        let mut dims = vec![(width, height)];
        for _ in 0..depth {
            let &(w, h) = dims.last().unwrap();
            dims.push((w.div_ceil(2), h.div_ceil(2)));
        }
        let sigmas = (0..=depth).map(|l| sigma / (1u64 << l) as f64).collect();
        Self { depth, dims, sigmas }
    }
}

/// Catmull-Rom cubic (a = -0.5).
fn catmull_rom(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        1.5 * x * x * x - 2.5 * x * x + 1.0
    } else if x < 2.0 {
        -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0
    } else {
        0.0
    }
}

const HALVING_TAPS: usize = 8;

/// Taps for output sample `o`, which sits at input coordinate `2o + 0.5`;
/// they cover inputs `2o - 3 ..= 2o + 4` with the kernel stretched by 2.
fn halving_weights() -> [f64; HALVING_TAPS] {
    let mut w = [0.0; HALVING_TAPS];
    for (k, v) in w.iter_mut().enumerate() {
        let offset = k as f64 - 3.0 - 0.5;
        *v = catmull_rom(offset / 2.0) / 2.0;
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Halves both dimensions (rounding up) with separable bicubic filtering and
/// replicate boundaries.
pub fn downsample2(img: &Image) -> Image {
    let (w, h) = (img.width(), img.height());
    let (ow, oh) = (w.div_ceil(2), h.div_ceil(2));
    let wt = halving_weights();
    let mut out = Vec::with_capacity(ow * oh * img.channels());
    for c in 0..img.channels() {
        let plane = img.plane(c);
        let mut horiz = vec![0.0; ow * h];
        horiz.par_chunks_mut(ow).enumerate().for_each(|(y, row_out)| {
            let row = &plane[y * w..(y + 1) * w];
            for (o, v) in row_out.iter_mut().enumerate() {
                let base = 2 * o as isize - 3;
                let mut acc = 0.0;
                for (k, &t) in wt.iter().enumerate() {
                    let x = (base + k as isize).clamp(0, w as isize - 1) as usize;
                    acc += t * row[x];
                }
                *v = acc;
            }
        });
        let mut vert = vec![0.0; ow * oh];
        vert.par_chunks_mut(ow).enumerate().for_each(|(o, row_out)| {
            let base = 2 * o as isize - 3;
            for (k, &t) in wt.iter().enumerate() {
                let y = (base + k as isize).clamp(0, h as isize - 1) as usize;
                let src = &horiz[y * ow..(y + 1) * ow];
                for (v, &s) in row_out.iter_mut().zip(src) {
                    *v += t * s;
                }
            }
        });
        out.extend_from_slice(&vert);
    }
    Image::new(ow, oh, img.colorspace(), out).expect("downsample preserves layout")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    pub levels: Vec<Image>,
}

impl Pyramid {
    /// Number of halvings (levels - 1).
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }
}

/// Largest depth `<= requested` whose coarsest level is at least 8x8.
pub fn clamp_depth(width: usize, height: usize, requested: usize) -> usize {
    let (mut w, mut h) = (width, height);
    let mut depth = 0;
    while depth < requested {
        let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
        if nw < MIN_LEVEL_SIZE || nh < MIN_LEVEL_SIZE {
            break;
        }
        w = nw;
        h = nh;
        depth += 1;
    }
    depth
}

/// `levels[0] = img`, `levels[l + 1] = downsample2(levels[l])`. The depth is
/// reduced if the coarsest level would fall below 8x8.
pub fn build_pyramid(img: &Image, depth: usize) -> Pyramid {
    let depth = clamp_depth(img.width(), img.height(), depth);
    let mut levels = Vec::with_capacity(depth + 1);
    levels.push(img.clone());
    for _ in 0..depth {
        let next = downsample2(levels.last().unwrap());
        levels.push(next);
    }
    Pyramid { levels }
}
