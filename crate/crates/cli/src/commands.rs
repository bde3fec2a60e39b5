use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use msdenoise::filterbank::render_bank;
use msdenoise::imagecore::{add_awgn, load_png, psnr, save_png, NoiseModel};
use msdenoise::trainer::{image_seed, synthesize_pairs, TrainReport};
use msdenoise::{apply_fixed, denoise, Filterbank, Image, LevelBank, TrainConfig};
use rayon::prelude::*;

use crate::error::{io_err, CliError, Result};
use crate::report::{EvalReport, EvalRow};

/// `(stem, path)` of every `.png` directly inside `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            out.push((stem, path));
        }
    }
    if out.is_empty() {
        return Err(msdenoise::Error::Empty(format!("no PNG files in {}", dir.display())).into());
    }
    out.sort();
    Ok(out)
}

/// Decodes every PNG in `dir` in parallel.
pub fn load_dir(dir: &Path) -> Result<Vec<(String, Image)>> {
    list_pngs(dir)?
        .into_par_iter()
        .map(|(name, path)| Ok((name, load_png(&path)?)))
        .collect()
}

/// Reads a bank file; I/O failures name the path.
pub fn load_bank(path: &Path) -> Result<Filterbank> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(Filterbank::from_bytes(&bytes)?)
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(io_err(p)),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthEntry {
    pub name: String,
    pub seed: u64,
    pub noisy_psnr: f64,
}

pub const MANIFEST: &str = "manifest.csv";

/// Writes `out_dir/<name>.png` with AWGN for every clean PNG plus a
/// `manifest.csv` of `name,clean,noisy,seed,sigma`.
pub fn synth(in_dir: &Path, out_dir: &Path, sigma: f64, seed: u64) -> Result<Vec<SynthEntry>> {
    let inputs = list_pngs(in_dir)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let entries: Vec<SynthEntry> = inputs
        .par_iter()
        .map(|(name, path)| {
            let clean = load_png(path)?;
            let s = image_seed(seed, name);
            let noisy = add_awgn(&clean, NoiseModel::awgn(sigma, s))?;
            save_png(&noisy, out_dir.join(format!("{name}.png")))?;
            Ok(SynthEntry {
                name: name.clone(),
                seed: s,
                noisy_psnr: psnr(&noisy, &clean)?,
            })
        })
        .collect::<Result<_>>()?;
    let mut manifest = String::from("name,clean,noisy,seed,sigma\n");
    for ((name, path), e) in inputs.iter().zip(&entries) {
        let noisy = out_dir.join(format!("{name}.png"));
        writeln!(
            manifest,
            "{name},{},{},{},{sigma}",
            path.display(),
            noisy.display(),
            e.seed
        )
        .unwrap();
    }
    let mpath = out_dir.join(MANIFEST);
    fs::write(&mpath, manifest).map_err(io_err(&mpath))?;
    Ok(entries)
}

/// Synthesizes noisy copies of the PNGs in `clean_dir` and trains a bank.
pub fn train(clean_dir: &Path, cfg: &TrainConfig, seed: u64) -> Result<(Filterbank, TrainReport)> {
    let clean = load_dir(clean_dir)?;
    let pairs = synthesize_pairs(clean, cfg.sigma, seed)?;
    let metadata = format!("seed={seed} corpus={}", clean_dir.display());
    let trained = if cfg.depth == 0 {
        msdenoise::train_fixed(&pairs, cfg, &metadata)?
    } else {
        msdenoise::train_multiscale(&pairs, cfg, &metadata)?
    };
    Ok(trained)
}

/// Buckets per decade of training-sample count: `0`, `1-9`, `10-99`, ...
pub fn occupancy_histogram(bank: &LevelBank) -> Vec<(String, usize)> {
    let counts = bank.sample_counts();
    let decades = counts.iter().map(|&c| if c == 0 { 0 } else { c.ilog10() as usize + 1 });
    let mut hist = vec![0usize; decades.clone().max().unwrap_or(0) + 1];
    for d in decades {
        hist[d] += 1;
    }
    hist.into_iter()
        .enumerate()
        .map(|(d, n)| {
            let label = if d == 0 {
                "0".to_string()
            } else {
                format!("{}-{}", 10u64.pow(d as u32 - 1), 10u64.pow(d as u32) - 1)
            };
            (label, n)
        })
        .collect()
}

/// Human-readable training summary: one report line per level followed by
/// its occupancy histogram.
pub fn train_summary(fb: &Filterbank, report: &TrainReport) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "images used={} skipped={}",
        report.images_used, report.images_skipped
    )
    .unwrap();
    for r in &report.levels {
        writeln!(s, "{r}").unwrap();
        if let Some(level) = fb.levels.get(r.level) {
            let hist: Vec<String> = occupancy_histogram(level)
                .iter()
                .map(|(k, n)| format!("{k}:{n}"))
                .collect();
            writeln!(s, "  occupancy {}", hist.join(" ")).unwrap();
        }
    }
    s
}

/// `--fixed-scale` only makes sense for a bank without pyramid levels.
pub fn check_mode(fb: &Filterbank, fixed_scale: bool) -> Result<()> {
    if fixed_scale && !fb.is_fixed_scale() {
        return Err(CliError::Usage(format!(
            "--fixed-scale needs a fixed-scale bank; this one has {} pyramid levels",
            fb.pyramid_depth
        )));
    }
    Ok(())
}

/// Runs the bank on one image. `fixed_scale` demands a fixed-scale bank.
pub fn run_bank(fb: &Filterbank, img: &Image, fixed_scale: bool) -> Result<Image> {
    check_mode(fb, fixed_scale)?;
    if fixed_scale {
        return Ok(apply_fixed(&fb.levels[0], img)?);
    }
    Ok(denoise(fb, img)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseSummary {
    pub seconds: f64,
    pub megapixels: f64,
    /// PSNR of input and output against a reference, when one was given.
    pub psnr: Option<(f64, f64)>,
}

pub fn denoise_file(
    bank: &Path,
    input: &Path,
    output: &Path,
    fixed_scale: bool,
    reference: Option<&Path>,
) -> Result<DenoiseSummary> {
    let fb = load_bank(bank)?;
    check_mode(&fb, fixed_scale)?;
    let img = load_png(input)?;
    let start = Instant::now();
    let out = run_bank(&fb, &img, fixed_scale)?;
    let seconds = start.elapsed().as_secs_f64();
    create_parent(output)?;
    save_png(&out, output)?;
    let psnr = match reference {
        Some(r) => {
            let clean = load_png(r)?;
            Some((psnr(&img, &clean)?, psnr(&out.quantized(), &clean)?))
        }
        None => None,
    };
    Ok(DenoiseSummary {
        seconds,
        megapixels: img.pixel_count() as f64 / 1e6,
        psnr,
    })
}

/// Adds AWGN to every clean PNG (seeded per image as in `synth`), denoises
/// and scores against the clean image. Outputs are rounded to 8 bits before
/// scoring. Images run in parallel; `seconds` times only the filtering.
pub fn eval(fb: &Filterbank, clean_dir: &Path, sigma: f64, seed: u64, fixed_scale: bool) -> Result<EvalReport> {
    check_mode(fb, fixed_scale)?;
    let inputs = list_pngs(clean_dir)?;
    let rows = inputs
        .par_iter()
        .map(|(name, path)| {
            let clean = load_png(path)?;
            let noisy = add_awgn(&clean, NoiseModel::awgn(sigma, image_seed(seed, name)))?;
            let start = Instant::now();
            let out = run_bank(fb, &noisy, fixed_scale)?;
            let seconds = start.elapsed().as_secs_f64();
            Ok(EvalRow {
                name: name.clone(),
                noisy_psnr: psnr(&noisy, &clean)?,
                denoised_psnr: psnr(&out.quantized(), &clean)?,
                seconds,
                megapixels: clean.pixel_count() as f64 / 1e6,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { rows })
}

const CHANNEL_NAMES: [&str; 3] = ["y", "cb", "cr"];

/// Text dump of the bank header and per-level layout.
pub fn describe_bank(fb: &Filterbank) -> String {
    let mut s = String::new();
    writeln!(s, "format_version={}", fb.version).unwrap();
    writeln!(s, "noise_sigma={}", fb.noise_sigma).unwrap();
    writeln!(s, "pyramid_depth={}", fb.pyramid_depth).unwrap();
    writeln!(s, "levels={}", fb.levels.len()).unwrap();
    writeln!(s, "metadata={}", fb.metadata).unwrap();
    for (l, bank) in fb.levels.iter().enumerate() {
        let fp = bank.footprint();
        let q = bank.quantizer();
        let counts = bank.sample_counts();
        writeln!(s, "[level {l}]").unwrap();
        writeln!(s, "footprint fine={} coarse={}", fp.fine_size, fp.coarse_size).unwrap();
        writeln!(s, "buckets {}x{}x{}", q.n_orient(), q.n_strength(), q.n_coherence()).unwrap();
        writeln!(s, "strength_thresholds {:?}", q.strength_thresholds()).unwrap();
        writeln!(s, "coherence_thresholds {:?}", q.coherence_thresholds()).unwrap();
        writeln!(
            s,
            "samples total={} empty_buckets={}",
            counts.iter().sum::<u64>(),
            counts.iter().filter(|&&c| c == 0).count()
        )
        .unwrap();
    }
    s
}

/// Writes `<stem>_l<level>_<channel>.png` grids for every level and channel
/// next to `out`, plus `<stem>.txt` with the bank description.
pub fn inspect(bank: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let fb = load_bank(bank)?;
    create_parent(out)?;
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("bank");
    let dir = out.parent().unwrap_or(Path::new(""));
    let mut text = describe_bank(&fb);
    let mut written = Vec::new();
    for (l, level) in fb.levels.iter().enumerate() {
        for (c, cname) in CHANNEL_NAMES.iter().enumerate() {
            let (img, layout) = render_bank(level, c)?;
            let path = dir.join(format!("{stem}_l{l}_{cname}.png"));
            save_png(&img, &path)?;
            writeln!(text, "{}: level {l} {layout}", path.display()).unwrap();
            written.push(path);
        }
    }
    let tpath = dir.join(format!("{stem}.txt"));
    fs::write(&tpath, text).map_err(io_err(&tpath))?;
    written.push(tpath);
    Ok(written)
}
