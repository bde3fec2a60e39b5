//! The trained model and its `MSBF` binary format.
//!
//! Layout (little-endian):
//!
//! ```text
//! "MSBF"  u32 version(=1)  f64 sigma  u32 pyramid_depth  u32 level_count
//! per level: u32 fine_size  u32 coarse_size  u32 n_orient  u32 n_strength  u32 n_coherence
//!            f64 x (n_strength - 1)   strength thresholds
//!            f64 x (n_coherence - 1)  coherence thresholds
//! u32 metadata_len  metadata (UTF-8)
//! f32 taps for every (level, channel Y/Cb/Cr, bucket), fine block then coarse block, row-major
//! u64 sample count for every (level, bucket)
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::QuantizerSpec;
use crate::imagecore::{ColorSpace, Image};

pub const MAGIC: &[u8; 4] = b"MSBF";
pub const FORMAT_VERSION: u32 = 1;
/// Y, Cb, Cr.
pub const CHANNELS: usize = 3;

/// Square fine footprint on the current level plus an optional square coarse
/// footprint on the next coarser output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FootprintSpec {
    pub fine_size: usize,
    pub coarse_size: usize,
}

impl FootprintSpec {
    pub fn new(fine_size: usize, coarse_size: usize) -> Result<Self> {
        if fine_size.is_multiple_of(2) {
            return Err(Error::Config(format!("fine footprint must be odd, got {fine_size}")));
        }
        if coarse_size != 0 && coarse_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "coarse footprint must be odd or 0, got {coarse_size}"
            )));
        }
        Ok(Self { fine_size, coarse_size })
    }

    pub fn fixed(fine_size: usize) -> Result<Self> {
        Self::new(fine_size, 0)
    }

    /// Footprints used for a given noise level: 5x5/3x3 below sigma 10,
    /// 7x7/5x5 otherwise.
    pub fn for_sigma(sigma: f64) -> Self {
        if sigma < 10.0 {
            Self {
                fine_size: 5,
                coarse_size: 3,
            }
        } else {
            Self {
                fine_size: 7,
                coarse_size: 5,
            }
        }
    }

    pub fn fine_taps(&self) -> usize {
        self.fine_size * self.fine_size
    }

    pub fn coarse_taps(&self) -> usize {
        self.coarse_size * self.coarse_size
    }

    pub fn taps(&self) -> usize {
        self.fine_taps() + self.coarse_taps()
    }

    pub fn is_multiscale(&self) -> bool {
        self.coarse_size > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    pub taps: Vec<f32>,
}

impl Filter {
    pub fn zeros(fp: FootprintSpec) -> Self {
        Self {
            taps: vec![0.0; fp.taps()],
        }
    }

    /// Unit tap at the center of the fine block.
    pub fn delta(fp: FootprintSpec) -> Self {
        let mut f = Self::zeros(fp);
        let r = fp.fine_size / 2;
        f.taps[r * fp.fine_size + r] = 1.0;
        f
    }

    /// Zero fine block; the coarse block holds the separable kernel
    /// `[1/8, 3/4, 1/8]`, i.e. bilinear 2x upsampling averaged over the two
    /// output phases.
    pub fn coarse_bilinear(fp: FootprintSpec) -> Self {
        let mut f = Self::zeros(fp);
        if fp.coarse_size == 0 {
            return f;
        }
        if fp.coarse_size == 1 {
            f.taps[fp.fine_taps()] = 1.0;
            return f;
        }
        let n = fp.coarse_size;
        let r = n / 2;
        let k = [0.125f32, 0.75, 0.125];
        for (dy, wy) in k.iter().enumerate() {
            for (dx, wx) in k.iter().enumerate() {
                let (y, x) = (r + dy - 1, r + dx - 1);
                f.taps[fp.fine_taps() + y * n + x] = wy * wx;
            }
        }
        f
    }

    pub fn fine(&self, fp: FootprintSpec) -> &[f32] {
        &self.taps[..fp.fine_taps()]
    }

    pub fn coarse(&self, fp: FootprintSpec) -> &[f32] {
        &self.taps[fp.fine_taps()..]
    }

    pub fn tap_sum(&self) -> f64 {
        self.taps.iter().map(|&t| t as f64).sum()
    }
}

/// One pyramid level of the model: K filters per channel plus the quantizer
/// that selects among them.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelBank {
    footprint: FootprintSpec,
    quantizer: QuantizerSpec,
    /// Indexed `channel * K + bucket`.
    filters: Vec<Filter>,
    sample_counts: Vec<u64>,
}

impl LevelBank {
    pub fn new(
        footprint: FootprintSpec,
        quantizer: QuantizerSpec,
        filters: Vec<Filter>,
        sample_counts: Vec<u64>,
    ) -> Result<Self> {
        let k = quantizer.bucket_count();
        if filters.len() != CHANNELS * k {
            return Err(Error::Structural(format!(
                "expected {} filters, got {}",
                CHANNELS * k,
                filters.len()
            )));
        }
        if sample_counts.len() != k {
            return Err(Error::Structural(format!(
                "expected {k} sample counts, got {}",
                sample_counts.len()
            )));
        }
        if let Some(f) = filters.iter().find(|f| f.taps.len() != footprint.taps()) {
            return Err(Error::Structural(format!(
                "filter has {} taps, footprint needs {}",
                f.taps.len(),
                footprint.taps()
            )));
        }
        Ok(Self {
            footprint,
            quantizer,
            filters,
            sample_counts,
        })
    }

    /// Bank with the same filter in every bucket and channel.
    pub fn uniform(footprint: FootprintSpec, quantizer: QuantizerSpec, filter: Filter) -> Result<Self> {
        let k = quantizer.bucket_count();
        Self::new(footprint, quantizer, vec![filter; CHANNELS * k], vec![0; k])
    }

    pub fn footprint(&self) -> FootprintSpec {
        self.footprint
    }

    pub fn quantizer(&self) -> &QuantizerSpec {
        &self.quantizer
    }

    pub fn bucket_count(&self) -> usize {
        self.quantizer.bucket_count()
    }

    pub fn sample_counts(&self) -> &[u64] {
        &self.sample_counts
    }

    pub fn filters(&self) -> &[Filter] {
        &self.filters
    }

    pub fn lookup(&self, channel: usize, bucket: usize) -> Result<&Filter> {
        let k = self.bucket_count();
        if bucket >= k {
            return Err(Error::BucketOutOfRange { bucket, count: k });
        }
        if channel >= CHANNELS {
            return Err(Error::Config(format!("channel {channel} out of range")));
        }
        Ok(&self.filters[channel * k + bucket])
    }

    pub fn filter_mut(&mut self, channel: usize, bucket: usize) -> &mut Filter {
        let k = self.bucket_count();
        &mut self.filters[channel * k + bucket]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Filterbank {
    pub version: u32,
    pub noise_sigma: f64,
    /// Number of pyramid halvings. Zero for a fixed-scale bank.
    pub pyramid_depth: usize,
    /// Index 0 is the finest level.
    pub levels: Vec<LevelBank>,
    /// Free-form provenance text (seeds, corpus, settings).
    pub metadata: String,
}

impl Filterbank {
    pub fn new(noise_sigma: f64, pyramid_depth: usize, levels: Vec<LevelBank>, metadata: String) -> Result<Self> {
        let fb = Self {
            version: FORMAT_VERSION,
            noise_sigma,
            pyramid_depth,
            levels,
            metadata,
        };
        fb.validate()?;
        Ok(fb)
    }

    pub fn is_fixed_scale(&self) -> bool {
        self.pyramid_depth == 0
    }

    fn validate(&self) -> Result<()> {
        if !self.noise_sigma.is_finite() {
            return Err(Error::Structural("noise sigma must be finite".into()));
        }
        if self.pyramid_depth == 0 {
            if self.levels.len() != 1 || self.levels[0].footprint.is_multiscale() {
                return Err(Error::Structural(
                    "fixed-scale bank must have exactly one level without a coarse block".into(),
                ));
            }
        } else {
            if self.levels.len() != self.pyramid_depth {
                return Err(Error::Structural(format!(
                    "pyramid depth {} but {} levels",
                    self.pyramid_depth,
                    self.levels.len()
                )));
            }
            if self.levels.iter().any(|l| !l.footprint.is_multiscale()) {
                return Err(Error::Structural("multiscale levels need a coarse block".into()));
            }
        }
        Ok(())
    }

    /// Writes the `MSBF` encoding. Non-finite taps are rejected.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        for (li, level) in self.levels.iter().enumerate() {
            let k = level.bucket_count();
            for (i, f) in level.filters.iter().enumerate() {
                if f.taps.iter().any(|t| !t.is_finite()) {
                    return Err(Error::NonFiniteTap {
                        level: li,
                        channel: i / k,
                        bucket: i % k,
                    });
                }
            }
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.version);
        out.extend_from_slice(&self.noise_sigma.to_le_bytes());
        put_u32(&mut out, self.pyramid_depth as u32);
        put_u32(&mut out, self.levels.len() as u32);
        for level in &self.levels {
            let q = &level.quantizer;
            for v in [
                level.footprint.fine_size,
                level.footprint.coarse_size,
                q.n_orient(),
                q.n_strength(),
                q.n_coherence(),
            ] {
                put_u32(&mut out, v as u32);
            }
            for t in q.strength_thresholds().iter().chain(q.coherence_thresholds()) {
                out.extend_from_slice(&t.to_le_bytes());
            }
        }
        put_u32(&mut out, self.metadata.len() as u32);
        out.extend_from_slice(self.metadata.as_bytes());
        for level in &self.levels {
            for f in &level.filters {
                for t in &f.taps {
                    out.extend_from_slice(&t.to_le_bytes());
                }
            }
        }
        for level in &self.levels {
            for c in &level.sample_counts {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let noise_sigma = r.f64()?;
        let pyramid_depth = r.u32()? as usize;
        let level_count = r.u32()? as usize;
        if level_count == 0 || level_count > 64 {
            return Err(Error::Structural(format!("implausible level count {level_count}")));
        }

        let mut headers = Vec::with_capacity(level_count);
        for _ in 0..level_count {
            let fine = r.u32()? as usize;
            let coarse = r.u32()? as usize;
            let n_orient = r.u32()? as usize;
            let n_strength = r.u32()? as usize;
            let n_coherence = r.u32()? as usize;
            let footprint = FootprintSpec::new(fine, coarse).map_err(|e| Error::Structural(e.to_string()))?;
            if n_strength == 0 || n_coherence == 0 {
                return Err(Error::Structural("bucket counts must be positive".into()));
            }
            r.ensure(8 * (n_strength - 1 + n_coherence - 1))?;
            let strength = (0..n_strength - 1).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let coherence = (0..n_coherence - 1).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let quantizer =
                QuantizerSpec::new(n_orient, strength, coherence).map_err(|e| Error::Structural(e.to_string()))?;
            headers.push((footprint, quantizer));
        }
        let meta_len = r.u32()? as usize;
        let metadata = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| Error::Structural("metadata is not UTF-8".into()))?;

        let expected: usize = headers
            .iter()
            .map(|(fp, q)| q.bucket_count() * (CHANNELS * fp.taps() * 4 + 8))
            .sum();
        let remaining = bytes.len() - r.pos;
        if remaining < expected {
            return Err(Error::Truncated);
        }
        if remaining > expected {
            return Err(Error::Structural(format!(
                "tap data inconsistent with header: {} unexpected trailing bytes",
                remaining - expected
            )));
        }

        let mut filter_sets = Vec::with_capacity(level_count);
        for (li, (fp, q)) in headers.iter().enumerate() {
            let k = q.bucket_count();
            let mut filters = Vec::with_capacity(CHANNELS * k);
            for i in 0..CHANNELS * k {
                let taps = (0..fp.taps()).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
                if taps.iter().any(|t| !t.is_finite()) {
                    return Err(Error::NonFiniteTap {
                        level: li,
                        channel: i / k,
                        bucket: i % k,
                    });
                }
                filters.push(Filter { taps });
            }
            filter_sets.push(filters);
        }
        let mut levels = Vec::with_capacity(level_count);
        for ((fp, q), filters) in headers.into_iter().zip(filter_sets) {
            let counts = (0..q.bucket_count()).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            levels.push(LevelBank::new(fp, q, filters, counts)?);
        }
        let fb = Self {
            version,
            noise_sigma,
            pyramid_depth,
            levels,
            metadata,
        };
        fb.validate()?;
        Ok(fb)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn ensure(&self, n: usize) -> Result<()> {
        if self.bytes.len() - self.pos < n {
            Err(Error::Truncated)
        } else {
            Ok(())
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        self.ensure(n)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Tiles the fine blocks of one channel into a gray image.
///
/// Columns step through orientation buckets; rows through
/// `strength * n_coherence + coherence`. Each tile is separated by a 1-pixel
/// mid-gray border. Taps map affinely with 0 at 128 and the largest magnitude
/// in the channel at 0 or 255. Returns the image and a text description of
/// the layout.
pub fn render_bank(bank: &LevelBank, channel: usize) -> Result<(Image, String)> {
    let fp = bank.footprint();
    let q = bank.quantizer();
    let n = fp.fine_size;
    let (cols, rows) = (q.n_orient(), q.n_strength() * q.n_coherence());
    let (w, h) = (cols * (n + 1) + 1, rows * (n + 1) + 1);

    let k = bank.bucket_count();
    let mut peak = 0.0f64;
    for b in 0..k {
        for &t in bank.lookup(channel, b)?.fine(fp) {
            peak = peak.max((t as f64).abs());
        }
    }
    let scale = if peak > 0.0 { 127.0 / peak } else { 0.0 };

    let mut img = Image::filled(w, h, ColorSpace::Gray, 128.0);
    for b in 0..k {
        let (o, st, co) = q.components(b);
        let (x0, y0) = (1 + o * (n + 1), 1 + (st * q.n_coherence() + co) * (n + 1));
        let fine = bank.lookup(channel, b)?.fine(fp);
        for ty in 0..n {
            for tx in 0..n {
                img.set(x0 + tx, y0 + ty, 0, 128.0 + fine[ty * n + tx] as f64 * scale);
            }
        }
    }
    let name = ["Y", "Cb", "Cr"].get(channel).copied().unwrap_or("?");
    let text = format!(
        "channel {name}: {cols} columns = orientation buckets (0..pi), {rows} rows = strength bucket * {} + coherence bucket; \
         tiles {n}x{n} with 1px border; tap 0 -> 128, |tap| {peak:.6} -> 127 steps",
        q.n_coherence()
    );
    Ok((img, text))
}
