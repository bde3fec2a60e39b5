//! Spatially-adaptive filtering: the fixed-scale path and the coarse-to-fine
//! multiscale cascade.
//!
//! Color input is filtered in YCbCr with one selector (computed on the
//! noisy RGB image) shared by the three channels. Gray input uses the Y
//! filters only. Values are clamped to `[0, 255]` on the final output only.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{build_selector, SelectorMap};
use crate::filterbank::{Filterbank, FootprintSpec, LevelBank};
use crate::imagecore::{rgb_to_ycbcr, ColorSpace, Image};
use crate::pyramid::{build_pyramid, Pyramid};

/// Converts RGB to YCbCr; gray passes through.
pub(crate) fn to_working(img: &Image) -> Result<Image> {
    match img.colorspace() {
        ColorSpace::Rgb => rgb_to_ycbcr(img),
        ColorSpace::Gray | ColorSpace::YCbCr601 => Ok(img.clone()),
    }
}

/// Inverse of [`to_working`] followed by clamping.
pub(crate) fn from_working(img: &Image) -> Result<Image> {
    let mut out = match img.colorspace() {
        ColorSpace::YCbCr601 => img.to_rgb()?,
        _ => img.clone(),
    };
    out.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 255.0));
    Ok(out)
}

fn check_input(img: &Image) -> Result<()> {
    match img.colorspace() {
        ColorSpace::Rgb | ColorSpace::Gray => Ok(()),
        found => Err(Error::ColorSpace {
            expected: ColorSpace::Rgb,
            found,
        }),
    }
}

/// Replicate-padded copy of one plane.
pub(crate) struct PaddedPlane {
    pub data: Vec<f64>,
    pub stride: usize,
}

impl PaddedPlane {
    pub fn new(plane: &[f64], w: usize, h: usize, pad: usize) -> Self {
        let stride = w + 2 * pad;
        let mut data = Vec::with_capacity(stride * (h + 2 * pad));
        for py in 0..h + 2 * pad {
            let y = py.saturating_sub(pad).min(h - 1);
            let row = &plane[y * w..(y + 1) * w];
            data.extend(std::iter::repeat_n(row[0], pad));
            data.extend_from_slice(row);
            data.extend(std::iter::repeat_n(row[w - 1], pad));
        }
        Self { data, stride }
    }

    /// Copies the `n x n` patch whose top-left padded corner is `(x, y)`.
    #[inline]
    pub fn patch_into(&self, x: usize, y: usize, n: usize, out: &mut [f64]) {
        for r in 0..n {
            let start = (y + r) * self.stride + x;
            out[r * n..(r + 1) * n].copy_from_slice(&self.data[start..start + n]);
        }
    }
}

/// Replicate-padded f32 copy of one plane with rows readable in whole
/// eight-wide lanes.
struct LanePlane {
    data: Vec<f32>,
    stride: usize,
}

impl LanePlane {
    fn new(plane: &[f64], w: usize, h: usize, n: usize, lanes: usize) -> Self {
        let pad = n / 2;
        let slack = lanes - n;
        let stride = w + 2 * pad + slack;
        let mut data = Vec::with_capacity(stride * (h + 2 * pad));
        for py in 0..h + 2 * pad {
            let y = py.saturating_sub(pad).min(h - 1);
            let row = &plane[y * w..(y + 1) * w];
            data.extend(std::iter::repeat_n(row[0] as f32, pad));
            data.extend(row.iter().map(|&v| v as f32));
            data.extend(std::iter::repeat_n(row[w - 1] as f32, pad + slack));
        }
        Self { data, stride }
    }
}

const LANES: usize = 8;

fn lanes_for(n: usize) -> usize {
    n.div_ceil(LANES) * LANES
}

/// Filter taps with every row zero-padded to a multiple of eight, laid out
/// `[bucket][channel][fine rows | coarse rows]`.
pub(crate) struct PreparedLevel {
    pub footprint: FootprintSpec,
    pub buckets: usize,
    channels: usize,
    fine_lanes: usize,
    coarse_lanes: usize,
    block: usize,
    taps: Vec<f32>,
}

impl PreparedLevel {
    pub fn new(bank: &LevelBank) -> Self {
        let fp = bank.footprint();
        let (nf, nc) = (fp.fine_size, fp.coarse_size);
        let (fine_lanes, coarse_lanes) = (lanes_for(nf), if nc > 0 { lanes_for(nc) } else { 0 });
        let block = nf * fine_lanes + nc * coarse_lanes;
        let k = bank.bucket_count();
        let channels = bank.filters().len() / k;
        let mut taps = vec![0.0; block * bank.filters().len()];
        for (i, f) in bank.filters().iter().enumerate() {
            let (c, b) = (i / k, i % k);
            let start = (b * channels + c) * block;
            let dst = &mut taps[start..start + block];
            let (fine, coarse) = dst.split_at_mut(nf * fine_lanes);
            for (src, row) in f.fine(fp).chunks_exact(nf).zip(fine.chunks_exact_mut(fine_lanes)) {
                row[..nf].copy_from_slice(src);
            }
            if nc > 0 {
                for (src, row) in f.coarse(fp).chunks_exact(nc).zip(coarse.chunks_exact_mut(coarse_lanes)) {
                    row[..nc].copy_from_slice(src);
                }
            }
        }
        Self {
            footprint: fp,
            buckets: k,
            channels,
            fine_lanes,
            coarse_lanes,
            block,
            taps,
        }
    }

    /// Filters of every channel for `bucket`.
    #[inline(always)]
    fn bucket(&self, bucket: usize) -> &[f32] {
        let len = self.block * self.channels;
        &self.taps[bucket * len..(bucket + 1) * len]
    }
}

/// Accumulates `rows` padded rows (each `lanes` wide) starting at `base`.
/// Even rows go to `acc[0]`, odd rows to `acc[1]`.
#[inline(always)]
fn accumulate_rows(
    acc: &mut [[f32; LANES]; 2],
    data: &[f32],
    stride: usize,
    base: usize,
    rows: usize,
    lanes: usize,
    taps: &[f32],
) {
    for r in 0..rows {
        let row = &data[base + r * stride..base + r * stride + lanes];
        let t = &taps[r * lanes..(r + 1) * lanes];
        let a = &mut acc[r % 2];
        for (rc, tc) in row.chunks_exact(LANES).zip(t.chunks_exact(LANES)) {
            for k in 0..LANES {
                a[k] += rc[k] * tc[k];
            }
        }
    }
}

/// Combines fine and coarse lane sums in the order the AVX2 path uses.
#[inline(always)]
fn reduce(fine: [[f32; LANES]; 2], coarse: [[f32; LANES]; 2]) -> f32 {
    let mut v = [0.0f32; LANES];
    for k in 0..LANES {
        v[k] = (fine[0][k] + fine[1][k]) + (coarse[0][k] + coarse[1][k]);
    }
    ((v[0] + v[4]) + (v[2] + v[6])) + ((v[1] + v[5]) + (v[3] + v[7]))
}

struct RowJob<'a> {
    level: &'a PreparedLevel,
    fine: &'a [LanePlane],
    coarse: &'a [LanePlane],
}

/// Filters row `y` of every channel into `out`, which holds the row of
/// channel `c` at `out[c * w..(c + 1) * w]`.
fn filter_row_scalar(job: &RowJob<'_>, y: usize, sel: &[u32], out: &mut [f64]) {
    let level = job.level;
    let fp = level.footprint;
    let w = sel.len();
    let split = fp.fine_size * level.fine_lanes;
    for (x, &b) in sel.iter().enumerate() {
        let filters = level.bucket(b as usize);
        for (c, fine) in job.fine.iter().enumerate() {
            let f = &filters[c * level.block..(c + 1) * level.block];
            let mut fine_acc = [[0.0f32; LANES]; 2];
            let mut coarse_acc = [[0.0f32; LANES]; 2];
            accumulate_rows(
                &mut fine_acc,
                &fine.data,
                fine.stride,
                y * fine.stride + x,
                fp.fine_size,
                level.fine_lanes,
                &f[..split],
            );
            if let Some(cp) = job.coarse.get(c) {
                let base = (y / 2) * cp.stride + x / 2;
                accumulate_rows(
                    &mut coarse_acc,
                    &cp.data,
                    cp.stride,
                    base,
                    fp.coarse_size,
                    level.coarse_lanes,
                    &f[split..],
                );
            }
            out[c * w + x] = reduce(fine_acc, coarse_acc) as f64;
        }
    }
}

/// AVX2 version of [`filter_row_scalar`] for footprints at most eight wide.
///
/// # Safety
/// AVX2 must be available, every selector entry must be a valid bucket and
/// the planes must be built by [`LanePlane::new`] for this level.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn filter_row_avx2(job: &RowJob<'_>, y: usize, sel: &[u32], out: &mut [f64]) {
    use std::arch::x86_64::*;

    let level = job.level;
    let (nf, nc) = (level.footprint.fine_size, level.footprint.coarse_size);
    let w = sel.len();
    let per_bucket = level.block * level.channels;
    for (x, &b) in sel.iter().enumerate() {
        let filters = level.taps.as_ptr().add(b as usize * per_bucket);
        for (c, fine) in job.fine.iter().enumerate() {
            let f = filters.add(c * level.block);
            let p = fine.data.as_ptr().add(y * fine.stride + x);
            let mut acc = [_mm256_setzero_ps(); 4];
            for r in 0..nf {
                let prod = _mm256_mul_ps(
                    _mm256_loadu_ps(p.add(r * fine.stride)),
                    _mm256_loadu_ps(f.add(r * LANES)),
                );
                acc[r % 2] = _mm256_add_ps(acc[r % 2], prod);
            }
            if let Some(cp) = job.coarse.get(c) {
                let f = f.add(nf * LANES);
                let p = cp.data.as_ptr().add((y / 2) * cp.stride + x / 2);
                for r in 0..nc {
                    let prod = _mm256_mul_ps(_mm256_loadu_ps(p.add(r * cp.stride)), _mm256_loadu_ps(f.add(r * LANES)));
                    acc[2 + r % 2] = _mm256_add_ps(acc[2 + r % 2], prod);
                }
            }
            let acc = _mm256_add_ps(_mm256_add_ps(acc[0], acc[1]), _mm256_add_ps(acc[2], acc[3]));
            // [a0+a4, a1+a5, a2+a6, a3+a7]
            let s = _mm_add_ps(_mm256_castps256_ps128(acc), _mm256_extractf128_ps(acc, 1));
            // [(a0+a4)+(a2+a6), (a1+a5)+(a3+a7), ..]
            let s = _mm_add_ps(s, _mm_movehl_ps(s, s));
            let s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 1));
            *out.get_unchecked_mut(c * w + x) = _mm_cvtss_f32(s) as f64;
        }
    }
}

fn filter_row(job: &RowJob<'_>, y: usize, sel: &[u32], out: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if job.level.fine_lanes == LANES && job.level.coarse_lanes <= LANES && std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime; `filter_level` checks
        // the selector and builds the planes with the level's lane widths.
        return unsafe { filter_row_avx2(job, y, sel, out) };
    }
    filter_row_scalar(job, y, sel, out)
}

/// One level of filtering in the working color space. `coarse` is the
/// previous (coarser) output, sampled around `floor(i / 2)`.
pub(crate) fn filter_level(
    level: &PreparedLevel,
    selector: &SelectorMap,
    fine: &Image,
    coarse: Option<&Image>,
) -> Result<Image> {
    let fp = level.footprint;
    let (w, h) = (fine.width(), fine.height());
    if selector.width != w || selector.height != h {
        return Err(Error::DimensionMismatch("selector does not match image".into()));
    }
    match (fp.is_multiscale(), coarse) {
        (true, None) => return Err(Error::BankMismatch("multiscale level needs a coarse input".into())),
        (false, Some(_)) => return Err(Error::BankMismatch("fixed-scale level got a coarse input".into())),
        (true, Some(c)) if c.width() != w.div_ceil(2) || c.height() != h.div_ceil(2) => {
            return Err(Error::DimensionMismatch(format!(
                "coarse level {}x{} does not halve {w}x{h}",
                c.width(),
                c.height()
            )))
        }
        _ => {}
    }
    if let Some(&b) = selector.indices.iter().find(|&&b| b as usize >= level.buckets) {
        return Err(Error::BucketOutOfRange {
            bucket: b as usize,
            count: level.buckets,
        });
    }

    let (nf, nc) = (fp.fine_size, fp.coarse_size);
    let channels = fine.channels();
    if channels != level.channels && !(channels == 1 && level.channels >= 1) {
        return Err(Error::BankMismatch(format!(
            "bank has {} channels, image {channels}",
            level.channels
        )));
    }
    if coarse.is_some_and(|c| c.channels() != channels) {
        return Err(Error::DimensionMismatch(
            "coarse level has a different channel count".into(),
        ));
    }
    let fine_planes: Vec<LanePlane> = (0..channels)
        .map(|c| LanePlane::new(fine.plane(c), w, h, nf, level.fine_lanes))
        .collect();
    let coarse_planes: Vec<LanePlane> = coarse
        .map(|img| {
            (0..channels)
                .map(|c| LanePlane::new(img.plane(c), img.width(), img.height(), nc, level.coarse_lanes))
                .collect()
        })
        .unwrap_or_default();
    let job = RowJob {
        level,
        fine: &fine_planes,
        coarse: &coarse_planes,
    };
    // Rows are produced channel-interleaved, then scattered to planes.
    let mut rows = vec![0.0; w * h * channels];
    rows.par_chunks_mut(w * channels).enumerate().for_each(|(y, row)| {
        filter_row(&job, y, &selector.indices[y * w..(y + 1) * w], row);
    });
    let mut out = vec![0.0; w * h * channels];
    for (y, row) in rows.chunks_exact(w * channels).enumerate() {
        for c in 0..channels {
            out[c * w * h + y * w..c * w * h + (y + 1) * w].copy_from_slice(&row[c * w..(c + 1) * w]);
        }
    }
    Image::new(w, h, fine.colorspace(), out)
}

/// Fixed-scale filtering with a precomputed selector. Linear in `img` for a
/// given selector. Returns a clamped RGB (or gray) image.
pub fn apply_fixed_with_selector(bank: &LevelBank, img: &Image, selector: &SelectorMap) -> Result<Image> {
    check_input(img)?;
    if bank.footprint().is_multiscale() {
        return Err(Error::BankMismatch(
            "apply_fixed needs a bank without coarse taps".into(),
        ));
    }
    let level = PreparedLevel::new(bank);
    let out = filter_level(&level, selector, &to_working(img)?, None)?;
    from_working(&out)
}

/// Single-level spatially-adaptive filtering.
pub fn apply_fixed(bank: &LevelBank, img: &Image) -> Result<Image> {
    check_input(img)?;
    let selector = build_selector(img, bank.quantizer());
    apply_fixed_with_selector(bank, img, &selector)
}

/// Runs the cascade over `pyramid` using `levels[l]` for every
/// `l in stop..levels.len()`, starting from the unfiltered coarsest level.
/// Returns the level-`stop` output in the working color space, unclamped.
pub(crate) fn cascade(
    pyramid: &Pyramid,
    levels: &[Option<PreparedLevel>],
    quantizers: &[&crate::features::QuantizerSpec],
    stop: usize,
) -> Result<Image> {
    let depth = levels.len();
    if pyramid.depth() != depth {
        return Err(Error::BankMismatch(format!(
            "pyramid has {} halvings, bank expects {depth}",
            pyramid.depth()
        )));
    }
    let mut current = to_working(&pyramid.levels[depth])?;
    for l in (stop..depth).rev() {
        let level = levels[l]
            .as_ref()
            .ok_or_else(|| Error::BankMismatch(format!("level {l} is not trained")))?;
        let noisy = &pyramid.levels[l];
        let selector = build_selector(noisy, quantizers[l]);
        current = filter_level(level, &selector, &to_working(noisy)?, Some(&current))?;
    }
    Ok(current)
}

/// Coarse-to-fine multiscale denoising. The input is decomposed into a
/// pyramid with the bank's depth; the coarsest level passes through and each
/// finer level is filtered with patches of itself and of the coarser output.
pub fn apply_multiscale(fb: &Filterbank, img: &Image) -> Result<Image> {
    check_input(img)?;
    if fb.is_fixed_scale() {
        return Err(Error::BankMismatch("apply_multiscale needs a multiscale bank".into()));
    }
    let pyramid = build_pyramid(img, fb.pyramid_depth);
    if pyramid.depth() != fb.pyramid_depth {
        return Err(Error::BankMismatch(format!(
            "{}x{} image supports only {} halvings, bank needs {}",
            img.width(),
            img.height(),
            pyramid.depth(),
            fb.pyramid_depth
        )));
    }
    let prepared: Vec<Option<PreparedLevel>> = fb.levels.iter().map(|l| Some(PreparedLevel::new(l))).collect();
    let quantizers: Vec<_> = fb.levels.iter().map(|l| l.quantizer()).collect();
    let out = cascade(&pyramid, &prepared, &quantizers, 0)?;
    from_working(&out)
}

/// Applies whichever path the bank was trained for.
pub fn denoise(fb: &Filterbank, img: &Image) -> Result<Image> {
    if fb.is_fixed_scale() {
        apply_fixed(&fb.levels[0], img)
    } else {
        apply_multiscale(fb, img)
    }
}
