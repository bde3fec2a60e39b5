//! Per-bucket least-squares filter learning.
//!
//! Every training pixel contributes one sample per channel: the patch vector
//! `x = [fine patch of z^l; coarse patch of u_hat^(l+1) around floor(i/2)]`
//! and the clean target `u_i`. Samples are grouped by the selector bucket of
//! the noisy pixel and reduced to normal equations `G = sum x x^T`,
//! `m = sum x u`, which are additive across shards. Each bucket's filter is
//! the (lightly ridge-regularized) solution of `G h = m`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{build_selector, feature_field, fit_thresholds, QuantizerSpec, SelectorMap, TensorFeatures};
use crate::filterbank::{Filter, Filterbank, FootprintSpec, LevelBank, CHANNELS};
use crate::filtering::{cascade, filter_level, to_working, PaddedPlane, PreparedLevel};
use crate::imagecore::{add_awgn, ColorSpace, Image, NoiseModel, D4};
use crate::pyramid::{build_pyramid, clamp_depth, depth_for_sigma, PyramidSpec};

/// Rows gathered per GEMM update.
const BLOCK_ROWS: usize = 256;

/// Sufficient statistics of one (bucket, channel) regression.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketStats {
    /// Row-major `taps x taps`.
    pub gram: Vec<f64>,
    pub moment: Vec<f64>,
    pub count: u64,
}

impl BucketStats {
    fn new(taps: usize) -> Self {
        Self {
            gram: vec![0.0; taps * taps],
            moment: vec![0.0; taps],
            count: 0,
        }
    }

    pub fn taps(&self) -> usize {
        self.moment.len()
    }

    fn add_sample(&mut self, x: &[f64], target: f64) {
        let t = x.len();
        for i in 0..t {
            let xi = x[i];
            let row = &mut self.gram[i * t..(i + 1) * t];
            for (g, &xj) in row.iter_mut().zip(x) {
                *g += xi * xj;
            }
            self.moment[i] += xi * target;
        }
        self.count += 1;
    }

    /// Adds `rows.len() / taps` samples stored row-major in `rows`.
    fn add_block(&mut self, rows: &[f64], targets: &[f64]) {
        let t = self.taps();
        let n = targets.len();
        debug_assert_eq!(rows.len(), n * t);
        if n == 0 {
            return;
        }
        // gram += rows^T * rows
        unsafe {
            matrixmultiply::dgemm(
                t,
                n,
                t,
                1.0,
                rows.as_ptr(),
                1,
                t as isize,
                rows.as_ptr(),
                t as isize,
                1,
                1.0,
                self.gram.as_mut_ptr(),
                t as isize,
                1,
            );
        }
        for (row, &u) in rows.chunks_exact(t).zip(targets) {
            for (m, &x) in self.moment.iter_mut().zip(row) {
                *m += x * u;
            }
        }
        self.count += n as u64;
    }

    fn merge(&mut self, other: &BucketStats) {
        for (a, b) in self.gram.iter_mut().zip(&other.gram) {
            *a += b;
        }
        for (a, b) in self.moment.iter_mut().zip(&other.moment) {
            *a += b;
        }
        self.count += other.count;
    }
}

/// Normal equations for every (bucket, channel) pair of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEqAccumulator {
    taps: usize,
    buckets: usize,
    channels: usize,
    /// Indexed `bucket * channels + channel`.
    stats: Vec<BucketStats>,
}

impl NormalEqAccumulator {
    pub fn new(taps: usize, buckets: usize, channels: usize) -> Self {
        Self {
            taps,
            buckets,
            channels,
            stats: vec![BucketStats::new(taps); buckets * channels],
        }
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    fn index(&self, bucket: usize, channel: usize) -> Result<usize> {
        if bucket >= self.buckets {
            return Err(Error::BucketOutOfRange {
                bucket,
                count: self.buckets,
            });
        }
        if channel >= self.channels {
            return Err(Error::Config(format!("channel {channel} out of range")));
        }
        Ok(bucket * self.channels + channel)
    }

    pub fn entry(&self, bucket: usize, channel: usize) -> Result<&BucketStats> {
        Ok(&self.stats[self.index(bucket, channel)?])
    }

    /// Adds one sample `x` with target `u` to `(bucket, channel)`.
    pub fn accumulate(&mut self, x: &[f64], target: f64, bucket: usize, channel: usize) -> Result<()> {
        if x.len() != self.taps {
            return Err(Error::DimensionMismatch(format!(
                "sample has {} taps, accumulator expects {}",
                x.len(),
                self.taps
            )));
        }
        let i = self.index(bucket, channel)?;
        self.stats[i].add_sample(x, target);
        Ok(())
    }

    /// Adds a row-major block of samples to `(bucket, channel)`.
    pub fn accumulate_block(&mut self, rows: &[f64], targets: &[f64], bucket: usize, channel: usize) -> Result<()> {
        if rows.len() != targets.len() * self.taps {
            return Err(Error::DimensionMismatch("block rows do not match targets".into()));
        }
        let i = self.index(bucket, channel)?;
        self.stats[i].add_block(rows, targets);
        Ok(())
    }

    /// Elementwise sum with another accumulator of the same shape.
    pub fn merge(&mut self, other: &NormalEqAccumulator) -> Result<()> {
        if (self.taps, self.buckets, self.channels) != (other.taps, other.buckets, other.channels) {
            return Err(Error::DimensionMismatch("accumulator shapes differ".into()));
        }
        for (a, b) in self.stats.iter_mut().zip(&other.stats) {
            a.merge(b);
        }
        Ok(())
    }

    /// Training samples seen by `bucket` (channel 0; all channels share the selector).
    pub fn count(&self, bucket: usize) -> u64 {
        self.stats[bucket * self.channels].count
    }
}

/// Solves one bucket: `(G + ridge * tr(G)/taps * I) h = m` via Cholesky.
/// Buckets with fewer than `min_count` samples (or an all-zero Gram matrix)
/// get `fallback`. The second return value tells whether the fallback was
/// used.
pub fn solve_bucket(
    stats: &BucketStats,
    ridge: f64,
    min_count: u64,
    fallback: &Filter,
    bucket: usize,
    channel: usize,
) -> Result<(Filter, bool)> {
    let t = stats.taps();
    let trace: f64 = (0..t).map(|i| stats.gram[i * t + i]).sum();
    if stats.count < min_count || stats.count == 0 || trace <= 0.0 {
        return Ok((fallback.clone(), true));
    }
    let lambda = ridge * trace / t as f64;
    let mut a = DMatrix::from_row_slice(t, t, &stats.gram);
    for i in 0..t {
        a[(i, i)] += lambda;
    }
    let chol = a.cholesky().ok_or(Error::Solve { bucket, channel })?;
    // Reject numerically rank-deficient systems rather than amplifying noise.
    let floor = 1e-12 * trace / t as f64;
    if chol.l_dirty().diagonal().iter().any(|d| d.is_nan() || d * d <= floor) {
        return Err(Error::Solve { bucket, channel });
    }
    let h = chol.solve(&DVector::from_column_slice(&stats.moment));
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solve { bucket, channel });
    }
    Ok((
        Filter {
            taps: h.iter().map(|&v| v as f32).collect(),
        },
        false,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BucketCounts {
    pub orientation: usize,
    pub strength: usize,
    pub coherence: usize,
}

impl BucketCounts {
    pub fn total(&self) -> usize {
        self.orientation * self.strength * self.coherence
    }
}

impl Default for BucketCounts {
    fn default() -> Self {
        Self {
            orientation: 16,
            strength: 16,
            coherence: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Noise std the bank is trained for, in 8-bit units.
    pub sigma: f64,
    /// Pyramid halvings; 0 trains a fixed-scale bank.
    pub depth: usize,
    /// Bucket layout, shared by every level.
    pub buckets: BucketCounts,
    pub footprint: FootprintSpec,
    /// Relative ridge factor, scaled by the mean Gram diagonal.
    pub ridge: f64,
    /// Buckets with fewer samples get the fallback filter; `None` means 4x taps.
    pub min_count: Option<u64>,
    /// Train on all eight D4 transforms of every pair.
    pub augment: bool,
    /// Cap on the number of feature samples used to fit thresholds per level.
    pub threshold_samples: usize,
}

impl TrainConfig {
    /// Multiscale defaults: 16x16x16 buckets, 7x7/5x5 footprints (5x5/3x3
    /// below sigma 10), depth such that the coarsest level has sigma < 2.
    pub fn multiscale(sigma: f64) -> Self {
        Self {
            sigma,
            depth: depth_for_sigma(sigma),
            buckets: BucketCounts::default(),
            footprint: FootprintSpec::for_sigma(sigma),
            ridge: 1e-3,
            min_count: None,
            augment: true,
            threshold_samples: 2_000_000,
        }
    }

    /// Single-level bank with a `fine_size` square footprint.
    pub fn fixed_scale(sigma: f64, fine_size: usize) -> Result<Self> {
        Ok(Self {
            depth: 0,
            footprint: FootprintSpec::fixed(fine_size)?,
            ..Self::multiscale(sigma)
        })
    }

    pub fn min_count(&self) -> u64 {
        self.min_count.unwrap_or(4 * self.footprint.taps() as u64)
    }

    fn validate(&self) -> Result<()> {
        if self.ridge.is_nan() || self.ridge < 0.0 {
            return Err(Error::Config("ridge must be >= 0".into()));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::Config("sigma must be finite and >= 0".into()));
        }
        if self.buckets.orientation == 0 || self.buckets.strength == 0 || self.buckets.coherence == 0 {
            return Err(Error::Config("bucket counts must be positive".into()));
        }
        if self.depth > 0 && !self.footprint.is_multiscale() {
            return Err(Error::Config("multiscale training needs a coarse footprint".into()));
        }
        if self.depth == 0 && self.footprint.is_multiscale() {
            return Err(Error::Config("fixed-scale training takes no coarse footprint".into()));
        }
        Ok(())
    }

    fn fallback(&self) -> Filter {
        if self.footprint.is_multiscale() {
            Filter::coarse_bilinear(self.footprint)
        } else {
            Filter::delta(self.footprint)
        }
    }
}

/// The eight (or one) transformed copies of an aligned pair.
pub fn augment_pairs<'a>(
    noisy: &'a Image,
    clean: &'a Image,
    augment: bool,
) -> Result<impl Iterator<Item = (D4, Image, Image)> + 'a> {
    if !noisy.same_shape(clean) {
        return Err(Error::DimensionMismatch(
            "noisy and clean images differ in shape".into(),
        ));
    }
    let set: &[D4] = if augment { &D4::ALL } else { &D4::ALL[..1] };
    Ok(set.iter().map(move |&g| (g, g.apply(noisy), g.apply(clean))))
}

/// Accumulates one level's normal equations from aligned images.
pub struct LevelTrainer {
    footprint: FootprintSpec,
    quantizer: QuantizerSpec,
    acc: NormalEqAccumulator,
}

impl LevelTrainer {
    pub fn new(footprint: FootprintSpec, quantizer: QuantizerSpec) -> Self {
        let acc = NormalEqAccumulator::new(footprint.taps(), quantizer.bucket_count(), CHANNELS);
        Self {
            footprint,
            quantizer,
            acc,
        }
    }

    pub fn accumulator(&self) -> &NormalEqAccumulator {
        &self.acc
    }

    pub fn into_accumulator(self) -> NormalEqAccumulator {
        self.acc
    }

    /// Adds every pixel of one aligned (noisy, clean[, coarse]) triple.
    ///
    /// `noisy` and `clean` are RGB (gray is promoted); `coarse` is the
    /// previous cascade output in YCbCr with ceil-halved dimensions.
    pub fn add(&mut self, noisy: &Image, clean: &Image, coarse: Option<&Image>) -> Result<()> {
        if !noisy.same_shape(clean) || noisy.width() != clean.width() {
            return Err(Error::DimensionMismatch(
                "noisy and clean images are not aligned".into(),
            ));
        }
        let noisy = promote(noisy)?;
        let clean = promote(clean)?;
        let selector = build_selector(&noisy, &self.quantizer);
        let z = to_working(&noisy)?;
        let u = to_working(&clean)?;
        let coarse = match (self.footprint.is_multiscale(), coarse) {
            (true, Some(c)) => {
                if c.width() != z.width().div_ceil(2) || c.height() != z.height().div_ceil(2) {
                    return Err(Error::DimensionMismatch(format!(
                        "coarse input {}x{} does not halve {}x{}",
                        c.width(),
                        c.height(),
                        z.width(),
                        z.height()
                    )));
                }
                Some(to_working(&promote(c)?)?)
            }
            (true, None) => return Err(Error::Config("multiscale level needs coarse inputs".into())),
            (false, Some(_)) => return Err(Error::Config("fixed-scale level takes no coarse input".into())),
            (false, None) => None,
        };
        accumulate_image(&mut self.acc, self.footprint, &selector, &z, coarse.as_ref(), &u);
        Ok(())
    }

    pub fn merge(&mut self, other: &LevelTrainer) -> Result<()> {
        self.acc.merge(&other.acc)
    }

    /// Solves every bucket of every channel.
    pub fn finish(&self, ridge: f64, min_count: u64, fallback: &Filter) -> Result<(LevelBank, LevelReport)> {
        let k = self.quantizer.bucket_count();
        let solved: Vec<(Filter, bool)> = (0..CHANNELS * k)
            .into_par_iter()
            .map(|i| {
                let (c, b) = (i / k, i % k);
                solve_bucket(self.acc.entry(b, c)?, ridge, min_count, fallback, b, c)
            })
            .collect::<Result<_>>()?;
        let fallbacks = solved[..k].iter().filter(|(_, fell_back)| *fell_back).count();
        let counts: Vec<u64> = (0..k).map(|b| self.acc.count(b)).collect();
        let filters: Vec<Filter> = solved.into_iter().map(|(f, _)| f).collect();
        let bank = LevelBank::new(self.footprint, self.quantizer.clone(), filters, counts)?;
        let report = LevelReport::new(&bank, fallbacks);
        Ok((bank, report))
    }
}

fn promote(img: &Image) -> Result<Image> {
    match img.colorspace() {
        ColorSpace::Gray => img.to_rgb(),
        _ => Ok(img.clone()),
    }
}

/// Groups pixels by bucket and streams their patches into the accumulator.
/// Work is split by bucket, so the result does not depend on thread count.
fn accumulate_image(
    acc: &mut NormalEqAccumulator,
    fp: FootprintSpec,
    selector: &SelectorMap,
    z: &Image,
    coarse: Option<&Image>,
    u: &Image,
) {
    let (w, h) = (z.width(), z.height());
    let k = acc.buckets;
    let mut offsets = vec![0usize; k + 1];
    for &b in &selector.indices {
        offsets[b as usize + 1] += 1;
    }
    for b in 0..k {
        offsets[b + 1] += offsets[b];
    }
    let mut cursor = offsets.clone();
    let mut order = vec![0u32; w * h];
    for (i, &b) in selector.indices.iter().enumerate() {
        order[cursor[b as usize]] = i as u32;
        cursor[b as usize] += 1;
    }

    let (nf, nc) = (fp.fine_size, fp.coarse_size);
    let fine_planes: Vec<PaddedPlane> = (0..CHANNELS)
        .map(|c| PaddedPlane::new(z.plane(c), w, h, nf / 2))
        .collect();
    let coarse_planes: Vec<PaddedPlane> = coarse
        .map(|img| {
            (0..CHANNELS)
                .map(|c| PaddedPlane::new(img.plane(c), img.width(), img.height(), nc / 2))
                .collect()
        })
        .unwrap_or_default();
    let taps = fp.taps();
    let fine_taps = fp.fine_taps();
    let channels = acc.channels;

    acc.stats.par_chunks_mut(channels).enumerate().for_each_init(
        || (vec![0.0; BLOCK_ROWS * taps], vec![0.0; BLOCK_ROWS]),
        |(rows, targets), (b, stats)| {
            let pixels = &order[offsets[b]..offsets[b + 1]];
            for chunk in pixels.chunks(BLOCK_ROWS) {
                for (c, st) in stats.iter_mut().enumerate() {
                    let target_plane = u.plane(c);
                    for (r, &p) in chunk.iter().enumerate() {
                        let (x, y) = (p as usize % w, p as usize / w);
                        let row = &mut rows[r * taps..(r + 1) * taps];
                        fine_planes[c].patch_into(x, y, nf, &mut row[..fine_taps]);
                        if let Some(cp) = coarse_planes.get(c) {
                            cp.patch_into(x / 2, y / 2, nc, &mut row[fine_taps..]);
                        }
                        targets[r] = target_plane[p as usize];
                    }
                    let n = chunk.len();
                    st.add_block(&rows[..n * taps], &targets[..n]);
                }
            }
        },
    );
}

/// Occupancy summary for one trained level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelReport {
    pub level: usize,
    pub buckets: usize,
    pub samples: u64,
    pub populated: usize,
    pub fallbacks: usize,
    pub min_count: u64,
    pub median_count: u64,
    pub max_count: u64,
    /// Trained (non-fallback) Y filters whose tap sum lies outside [0.9, 1.1].
    pub dc_outliers: usize,
}

impl LevelReport {
    fn new(bank: &LevelBank, fallbacks: usize) -> Self {
        let counts = bank.sample_counts();
        let mut sorted = counts.to_vec();
        sorted.sort_unstable();
        let k = bank.bucket_count();
        let dc_outliers = (0..k)
            .filter(|&b| {
                let s = bank.lookup(0, b).map(|f| f.tap_sum()).unwrap_or(1.0);
                counts[b] > 0 && !(0.9..=1.1).contains(&s)
            })
            .count();
        Self {
            level: 0,
            buckets: k,
            samples: counts.iter().sum(),
            populated: counts.iter().filter(|&&c| c > 0).count(),
            fallbacks,
            min_count: sorted[0],
            median_count: sorted[sorted.len() / 2],
            max_count: sorted[sorted.len() - 1],
            dc_outliers,
        }
    }
}

impl fmt::Display for LevelReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "level={} buckets={} samples={} populated={} fallbacks={} count_min={} count_median={} count_max={} dc_outliers={}",
            self.level,
            self.buckets,
            self.samples,
            self.populated,
            self.fallbacks,
            self.min_count,
            self.median_count,
            self.max_count,
            self.dc_outliers
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub levels: Vec<LevelReport>,
    pub images_used: usize,
    pub images_skipped: usize,
}

/// Trains one level from aligned image sets. With `cfg.augment`, each
/// triple is used under all eight D4 transforms.
pub fn train_level(
    noisy: &[Image],
    clean: &[Image],
    coarse: Option<&[Image]>,
    cfg: &TrainConfig,
    quantizer: &QuantizerSpec,
) -> Result<LevelBank> {
    if noisy.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if noisy.len() != clean.len() || coarse.is_some_and(|c| c.len() != noisy.len()) {
        return Err(Error::DimensionMismatch("training sets have different lengths".into()));
    }
    let mut trainer = LevelTrainer::new(cfg.footprint, quantizer.clone());
    for (i, (z, u)) in noisy.iter().zip(clean).enumerate() {
        for (g, zg, ug) in augment_pairs(z, u, cfg.augment)? {
            let cg = coarse.map(|c| g.apply(&c[i]));
            trainer.add(&zg, &ug, cg.as_ref())?;
        }
    }
    let (bank, _) = trainer.finish(cfg.ridge, cfg.min_count(), &cfg.fallback())?;
    Ok(bank)
}

/// An aligned clean/noisy training image pair.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub name: String,
    pub clean: Image,
    pub noisy: Image,
}

/// Per-image noise seed derived from a root seed and the image name.
pub fn image_seed(root: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h ^ root)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Synthesizes AWGN-corrupted copies (8-bit quantized) of clean images.
pub fn synthesize_pairs(clean: Vec<(String, Image)>, sigma: f64, root_seed: u64) -> Result<Vec<TrainingPair>> {
    clean
        .into_iter()
        .map(|(name, img)| {
            let img = promote(&img)?;
            let noisy = add_awgn(&img, NoiseModel::awgn(sigma, image_seed(root_seed, &name)))?;
            Ok(TrainingPair {
                name,
                clean: img,
                noisy,
            })
        })
        .collect()
}

/// Features of every `stride`-th pixel of a level, for threshold fitting.
fn sample_features(img: &Image, stride: usize, out: &mut Vec<TensorFeatures>) {
    let field = feature_field(img);
    out.extend(field.into_iter().step_by(stride.max(1)));
}

/// Fits thresholds on a strided feature sample of `count` level images,
/// producing each image with `level_image(i)` only when it is needed.
fn fit_level_quantizer(
    count: usize,
    total_pixels: usize,
    level_image: impl Fn(usize) -> Result<Image>,
    cfg: &TrainConfig,
) -> Result<QuantizerSpec> {
    let stride = total_pixels.div_ceil(cfg.threshold_samples.max(1)).max(1);
    let mut sample = Vec::with_capacity(total_pixels / stride + count);
    for i in 0..count {
        sample_features(&level_image(i)?, stride, &mut sample);
    }
    fit_thresholds(
        &sample,
        cfg.buckets.orientation,
        cfg.buckets.strength,
        cfg.buckets.coherence,
    )
}

fn describe(cfg: &TrainConfig, pairs: usize, extra: &str) -> String {
    format!(
        "sigma={} depth={} buckets={}x{}x{} fine={} coarse={} ridge={} min_count={} augment={} images={}{}",
        cfg.sigma,
        cfg.depth,
        cfg.buckets.orientation,
        cfg.buckets.strength,
        cfg.buckets.coherence,
        cfg.footprint.fine_size,
        cfg.footprint.coarse_size,
        cfg.ridge,
        cfg.min_count(),
        cfg.augment,
        pairs,
        if extra.is_empty() {
            String::new()
        } else {
            format!(" {extra}")
        }
    )
}

/// Trains a single-level bank (no pyramid).
pub fn train_fixed(corpus: &[TrainingPair], cfg: &TrainConfig, metadata: &str) -> Result<(Filterbank, TrainReport)> {
    cfg.validate()?;
    if cfg.depth != 0 {
        return Err(Error::Config("train_fixed needs depth 0".into()));
    }
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus".into()));
    }
    let total = corpus.iter().map(|p| p.noisy.pixel_count()).sum();
    let quantizer = fit_level_quantizer(corpus.len(), total, |i| promote(&corpus[i].noisy), cfg)?;
    let mut trainer = LevelTrainer::new(cfg.footprint, quantizer);
    for pair in corpus {
        for (_, zg, ug) in augment_pairs(&pair.noisy, &pair.clean, cfg.augment)? {
            trainer.add(&zg, &ug, None)?;
        }
    }
    let (bank, mut report) = trainer.finish(cfg.ridge, cfg.min_count(), &cfg.fallback())?;
    report.level = 0;
    log::info!("{report}");
    let fb = Filterbank::new(cfg.sigma, 0, vec![bank], describe(cfg, corpus.len(), metadata))?;
    Ok((
        fb,
        TrainReport {
            levels: vec![report],
            images_used: corpus.len(),
            images_skipped: 0,
        },
    ))
}

/// Level-by-level multiscale training, coarse to fine.
///
/// The coarsest pyramid level passes through unfiltered. For each level
/// `l = L-1 .. 0` the quantizer is fitted on level-`l` features, the filters
/// are solved from patches of `z^l` and the cascade output `u_hat^(l+1)`
/// produced by the already trained coarser levels, and the freshly trained
/// level then feeds the next finer one. Images too small for the requested
/// depth are skipped.
pub fn train_multiscale(
    corpus: &[TrainingPair],
    cfg: &TrainConfig,
    metadata: &str,
) -> Result<(Filterbank, TrainReport)> {
    cfg.validate()?;
    if cfg.depth == 0 {
        return train_fixed(corpus, cfg, metadata);
    }
    let depth = cfg.depth;
    let usable: Vec<&TrainingPair> = corpus
        .iter()
        .filter(|p| {
            let (w, h) = (p.noisy.width(), p.noisy.height());
            let (sw, sh) = if cfg.augment { (w.min(h), w.min(h)) } else { (w, h) };
            let ok = clamp_depth(sw, sh, depth) == depth && p.noisy.same_shape(&p.clean);
            if !ok {
                log::warn!(
                    "skipping {}: too small for {depth} pyramid levels or misaligned",
                    p.name
                );
            }
            ok
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::Empty(
            "no training image is large enough for the pyramid depth".into(),
        ));
    }

    let mut prepared: Vec<Option<PreparedLevel>> = (0..depth).map(|_| None).collect();
    let mut banks: Vec<Option<LevelBank>> = vec![None; depth];
    let mut reports = Vec::with_capacity(depth);

    for level in (0..depth).rev() {
        // Strength and coherence are invariant under D4, so thresholds come
        // from the untransformed pyramids.
        let total = usable
            .iter()
            .map(|p| {
                let (w, h) = PyramidSpec::with_depth(p.noisy.width(), p.noisy.height(), cfg.sigma, level).dims[level];
                w * h
            })
            .sum();
        let level_image =
            |i: usize| -> Result<Image> { Ok(build_pyramid(&promote(&usable[i].noisy)?, level).levels.pop().unwrap()) };
        let quantizer = fit_level_quantizer(usable.len(), total, level_image, cfg)?;

        let quantizers: Vec<QuantizerSpec> = banks
            .iter()
            .map(|b| {
                b.as_ref()
                    .map(|b| b.quantizer().clone())
                    .unwrap_or_else(|| quantizer.clone())
            })
            .collect();
        let qrefs: Vec<&QuantizerSpec> = quantizers.iter().collect();

        let mut trainer = LevelTrainer::new(cfg.footprint, quantizer.clone());
        for pair in &usable {
            for (_, zg, ug) in augment_pairs(&pair.noisy, &pair.clean, cfg.augment)? {
                let zp = build_pyramid(&promote(&zg)?, depth);
                let up = build_pyramid(&promote(&ug)?, level);
                let coarse = cascade(&zp, &prepared, &qrefs, level + 1)?;
                trainer.add(&zp.levels[level], &up.levels[level], Some(&coarse))?;
            }
        }
        let (bank, mut report) = trainer.finish(cfg.ridge, cfg.min_count(), &cfg.fallback())?;
        report.level = level;
        log::info!("{report}");
        reports.push(report);
        prepared[level] = Some(PreparedLevel::new(&bank));
        banks[level] = Some(bank);
    }

    let levels: Vec<LevelBank> = banks.into_iter().map(|b| b.expect("every level trained")).collect();
    reports.reverse();
    let fb = Filterbank::new(cfg.sigma, depth, levels, describe(cfg, usable.len(), metadata))?;
    Ok((
        fb,
        TrainReport {
            levels: reports,
            images_used: usable.len(),
            images_skipped: corpus.len() - usable.len(),
        },
    ))
}

/// Applies one trained level to aligned inputs; exposed for diagnostics.
pub fn apply_level(bank: &LevelBank, noisy: &Image, coarse: Option<&Image>) -> Result<Image> {
    let noisy = promote(noisy)?;
    let selector = build_selector(&noisy, bank.quantizer());
    let coarse = coarse.map(|c| promote(c).and_then(|c| to_working(&c))).transpose()?;
    let out = filter_level(
        &PreparedLevel::new(bank),
        &selector,
        &to_working(&noisy)?,
        coarse.as_ref(),
    )?;
    crate::filtering::from_working(&out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, t: usize) -> Vec<f64> {
        (0..n * t).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn single_sample_gram_is_outer_product() {
        let mut acc = NormalEqAccumulator::new(3, 2, 1);
        acc.accumulate(&[1.0, 2.0, 3.0], 4.0, 1, 0).unwrap();
        let e = acc.entry(1, 0).unwrap();
        assert_eq!(e.gram, vec![1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 3.0, 6.0, 9.0]);
        assert_eq!(e.moment, vec![4.0, 8.0, 12.0]);
        assert_eq!(e.count, 1);
        assert_eq!(acc.entry(0, 0).unwrap().count, 0);
        assert!(acc.accumulate(&[1.0], 1.0, 0, 0).is_err());
        assert!(acc.accumulate(&[1.0, 2.0, 3.0], 1.0, 2, 0).is_err());
    }

    #[test]
    fn block_update_matches_rank_one_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = 9;
        let rows = random_rows(&mut rng, 300, t);
        let targets: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut a = NormalEqAccumulator::new(t, 1, 1);
        let mut b = NormalEqAccumulator::new(t, 1, 1);
        a.accumulate_block(&rows, &targets, 0, 0).unwrap();
        for (r, &u) in rows.chunks(t).zip(&targets) {
            b.accumulate(r, u, 0, 0).unwrap();
        }
        let (ea, eb) = (a.entry(0, 0).unwrap(), b.entry(0, 0).unwrap());
        assert_eq!(ea.count, eb.count);
        for (x, y) in ea.gram.iter().zip(&eb.gram) {
            assert!((x - y).abs() < 1e-12 * y.abs().max(1.0));
        }
        // Symmetric.
        for i in 0..t {
            for j in 0..t {
                assert!((ea.gram[i * t + j] - ea.gram[j * t + i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn merge_equals_union() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = 4;
        let rows = random_rows(&mut rng, 50, t);
        let targets: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let mut whole = NormalEqAccumulator::new(t, 3, 2);
        let mut left = NormalEqAccumulator::new(t, 3, 2);
        let mut right = NormalEqAccumulator::new(t, 3, 2);
        for (i, (r, &u)) in rows.chunks(t).zip(&targets).enumerate() {
            let (b, c) = (i % 3, i % 2);
            whole.accumulate(r, u, b, c).unwrap();
            if i < 20 { &mut left } else { &mut right }
                .accumulate(r, u, b, c)
                .unwrap();
        }
        let mut merged = right.clone();
        merged.merge(&left).unwrap();
        left.merge(&right).unwrap();
        for (m, (l, w)) in merged.stats.iter().zip(left.stats.iter().zip(&whole.stats)) {
            assert_eq!(m.count, w.count);
            for ((a, b), c) in m.gram.iter().zip(&l.gram).zip(&w.gram) {
                assert!((a - c).abs() <= 1e-12 * c.abs().max(1.0));
                assert!((b - c).abs() <= 1e-12 * c.abs().max(1.0));
            }
        }
        assert!(merged.merge(&NormalEqAccumulator::new(5, 3, 2)).is_err());
    }

    #[test]
    fn solve_examples() {
        let fp = FootprintSpec::fixed(1).unwrap();
        let mut acc = NormalEqAccumulator::new(1, 1, 1);
        for _ in 0..10 {
            acc.accumulate(&[2.0], 4.0, 0, 0).unwrap();
        }
        let (h, fell_back) = solve_bucket(acc.entry(0, 0).unwrap(), 0.0, 1, &Filter::delta(fp), 0, 0).unwrap();
        assert!(!fell_back);
        assert_eq!(h.taps, vec![2.0]);

        let empty = NormalEqAccumulator::new(1, 1, 1);
        let fallback = Filter { taps: vec![0.5] };
        let (h, fell_back) = solve_bucket(empty.entry(0, 0).unwrap(), 1e-3, 4, &fallback, 0, 0).unwrap();
        assert!(fell_back);
        assert_eq!(h, fallback);
    }

    #[test]
    fn exact_linear_targets_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = 9;
        let truth: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rows = random_rows(&mut rng, 40, t);
        let targets: Vec<f64> = rows
            .chunks(t)
            .map(|r| r.iter().zip(&truth).map(|(a, b)| a * b).sum())
            .collect();
        let mut acc = NormalEqAccumulator::new(t, 1, 1);
        acc.accumulate_block(&rows, &targets, 0, 0).unwrap();
        let (h, _) = solve_bucket(acc.entry(0, 0).unwrap(), 0.0, 1, &Filter { taps: vec![0.0; t] }, 0, 0).unwrap();
        for (a, b) in h.taps.iter().zip(&truth) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }

    #[test]
    fn singular_system_without_ridge_is_an_error() {
        let mut acc = NormalEqAccumulator::new(2, 1, 1);
        for _ in 0..10 {
            acc.accumulate(&[1.0, 1.0], 1.0, 0, 0).unwrap();
        }
        let fallback = Filter { taps: vec![0.0; 2] };
        assert!(matches!(
            solve_bucket(acc.entry(0, 0).unwrap(), 0.0, 1, &fallback, 0, 0),
            Err(Error::Solve { bucket: 0, channel: 0 })
        ));
        assert!(solve_bucket(acc.entry(0, 0).unwrap(), 1e-3, 1, &fallback, 0, 0).is_ok());
    }

    #[test]
    fn ridge_shrinks_the_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let t = 6;
            let rows = random_rows(&mut rng, 30, t);
            let targets: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut acc = NormalEqAccumulator::new(t, 1, 1);
            acc.accumulate_block(&rows, &targets, 0, 0).unwrap();
            let fb = Filter { taps: vec![0.0; t] };
            let norm = |r: f64| {
                let (h, _) = solve_bucket(acc.entry(0, 0).unwrap(), r, 1, &fb, 0, 0).unwrap();
                h.taps.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
            };
            let mut prev = norm(0.0);
            for r in [1e-3, 1e-2, 0.1, 1.0, 10.0] {
                let cur = norm(r);
                assert!(cur <= prev * (1.0 + 1e-6), "{cur} > {prev}");
                prev = cur;
            }
        }
    }

    #[test]
    fn augmentation_counts() {
        let noisy = Image::from_fn(6, 4, ColorSpace::Rgb, |x, y, c| (x * 3 + y * 5 + c) as f64);
        let clean = noisy.clone();
        assert_eq!(augment_pairs(&noisy, &clean, true).unwrap().count(), 8);
        assert_eq!(augment_pairs(&noisy, &clean, false).unwrap().count(), 1);
        let other = Image::filled(4, 6, ColorSpace::Rgb, 0.0);
        assert!(augment_pairs(&noisy, &other, true).is_err());

        let q = QuantizerSpec::new(4, vec![1.0], vec![0.5]).unwrap();
        let fp = FootprintSpec::fixed(3).unwrap();
        let mut with = LevelTrainer::new(fp, q.clone());
        for (_, z, u) in augment_pairs(&noisy, &clean, true).unwrap() {
            with.add(&z, &u, None).unwrap();
        }
        let mut without = LevelTrainer::new(fp, q);
        without.add(&noisy, &clean, None).unwrap();
        let total = |t: &LevelTrainer| {
            (0..t.accumulator().buckets())
                .map(|b| t.accumulator().count(b))
                .sum::<u64>()
        };
        assert_eq!(total(&with), 8 * total(&without));
    }

    #[test]
    fn symmetric_pair_augments_to_eight_copies() {
        // Invariant under every D4 element.
        let n = 9;
        let img = Image::from_fn(n, n, ColorSpace::Rgb, |x, y, c| {
            let (dx, dy) = (x as f64 - 4.0, y as f64 - 4.0);
            100.0 + 10.0 * (dx * dx + dy * dy).sqrt() + c as f64
        });
        let q = QuantizerSpec::new(1, vec![], vec![]).unwrap();
        let fp = FootprintSpec::fixed(3).unwrap();
        let mut aug = LevelTrainer::new(fp, q.clone());
        for (_, z, u) in augment_pairs(&img, &img, true).unwrap() {
            aug.add(&z, &u, None).unwrap();
        }
        let mut single = LevelTrainer::new(fp, q);
        single.add(&img, &img, None).unwrap();
        for c in 0..3 {
            let a = aug.accumulator().entry(0, c).unwrap();
            let s = single.accumulator().entry(0, c).unwrap();
            assert_eq!(a.count, 8 * s.count);
            for (x, y) in a.gram.iter().zip(&s.gram) {
                assert!((x - 8.0 * y).abs() <= 1e-9 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn training_on_clean_pairs_learns_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let imgs: Vec<Image> = (0..3)
            .map(|_| Image::from_fn(40, 32, ColorSpace::Rgb, |_, _, _| rng.random_range(0.0..255.0)))
            .collect();
        let mut cfg = TrainConfig::fixed_scale(0.0, 5).unwrap();
        cfg.buckets = BucketCounts {
            orientation: 4,
            strength: 2,
            coherence: 2,
        };
        cfg.ridge = 1e-9;
        cfg.augment = false;
        let q = fit_thresholds(&feature_field(&imgs[0]), 4, 2, 2).unwrap();
        let bank = train_level(&imgs, &imgs, None, &cfg, &q).unwrap();
        let test = Image::from_fn(30, 20, ColorSpace::Rgb, |_, _, _| rng.random_range(0.0..255.0));
        let out = crate::filtering::apply_fixed(&bank, &test).unwrap();
        assert!(out.max_abs_diff(&test) < 1e-3, "{}", out.max_abs_diff(&test));
    }

    #[test]
    fn sharded_training_matches_single_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mk = |rng: &mut ChaCha8Rng| Image::from_fn(24, 20, ColorSpace::Rgb, |_, _, _| rng.random_range(0.0..255.0));
        let clean: Vec<Image> = (0..4).map(|_| mk(&mut rng)).collect();
        let noisy: Vec<Image> = clean
            .iter()
            .enumerate()
            .map(|(i, c)| add_awgn(c, NoiseModel::awgn(20.0, i as u64)).unwrap())
            .collect();
        let q = fit_thresholds(&feature_field(&noisy[0]), 2, 2, 2).unwrap();
        let fp = FootprintSpec::fixed(3).unwrap();

        let mut whole = LevelTrainer::new(fp, q.clone());
        let mut a = LevelTrainer::new(fp, q.clone());
        let mut b = LevelTrainer::new(fp, q.clone());
        for i in 0..4 {
            whole.add(&noisy[i], &clean[i], None).unwrap();
            if i < 2 { &mut a } else { &mut b }
                .add(&noisy[i], &clean[i], None)
                .unwrap();
        }
        a.merge(&b).unwrap();
        let f = Filter::delta(fp);
        let (bw, _) = whole.finish(1e-3, 1, &f).unwrap();
        let (bm, _) = a.finish(1e-3, 1, &f).unwrap();
        for (x, y) in bw.filters().iter().zip(bm.filters()) {
            for (p, q) in x.taps.iter().zip(&y.taps) {
                assert!((p - q).abs() <= 1e-6 * q.abs().max(1.0));
            }
        }
    }

    #[test]
    fn multiscale_training_beats_noisy_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let clean: Vec<(String, Image)> = (0..3)
            .map(|i| {
                let (a, b) = (rng.random_range(0.05..0.2), rng.random_range(0.05..0.2));
                let img = Image::from_fn(64, 64, ColorSpace::Rgb, |x, y, c| {
                    let v = 128.0 + 60.0 * ((a * x as f64).sin() * (b * y as f64 + c as f64).cos());
                    if (x / 16 + y / 16) % 2 == 0 {
                        v
                    } else {
                        v * 0.5
                    }
                });
                (format!("img{i}"), img)
            })
            .collect();
        let corpus = synthesize_pairs(clean, 20.0, 99).unwrap();
        let mut cfg = TrainConfig::multiscale(20.0);
        cfg.depth = 2;
        cfg.buckets = BucketCounts {
            orientation: 4,
            strength: 3,
            coherence: 2,
        };
        let (fb, report) = train_multiscale(&corpus, &cfg, "").unwrap();
        assert_eq!(fb.levels.len(), 2);
        assert_eq!(report.levels.len(), 2);
        assert_eq!(report.levels[0].level, 0);
        for p in &corpus {
            let out = crate::filtering::apply_multiscale(&fb, &p.noisy).unwrap();
            let before = crate::imagecore::psnr(&p.clean, &p.noisy).unwrap();
            let after = crate::imagecore::psnr(&p.clean, &out).unwrap();
            assert!(after > before, "{after} <= {before}");
        }
    }

    #[test]
    fn image_seed_is_stable_and_name_dependent() {
        assert_eq!(image_seed(1, "a.png"), image_seed(1, "a.png"));
        assert_ne!(image_seed(1, "a.png"), image_seed(1, "b.png"));
        assert_ne!(image_seed(1, "a.png"), image_seed(2, "a.png"));
    }
}
