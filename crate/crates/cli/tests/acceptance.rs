//! End-to-end acceptance run. Prints one `[PASS]`/`[FAIL]` line per
//! criterion and exits non-zero if any criterion fails.
//!
//! The training criteria read a corpus laid out as `<root>/train/*.png` and
//! `<root>/heldout/*.png`; the root is `$MSDENOISE_CORPUS` or `data/corpus`
//! at the workspace root (see `scripts/prepare_corpus.py`).

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use msdenoise::features::{eigen_features, QuantizerSpec, StructureTensor};
use msdenoise::filtering::apply_multiscale;
use msdenoise::imagecore::{add_awgn, load_png, psnr, NoiseModel, D4};
use msdenoise::pyramid::{depth_for_sigma, downsample2};
use msdenoise::trainer::{image_seed, solve_bucket, NormalEqAccumulator};
use msdenoise::{apply_fixed, ColorSpace, Error, Filter, Filterbank, FootprintSpec, Image, LevelBank, TrainConfig};
use msdenoise_cli::commands;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const TRAIN_SEED: u64 = 20_170_601;
const EVAL_SEED: u64 = 777;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn timed(limit: Duration, elapsed: Duration, pass: bool, detail: String) -> Verdict {
    let in_time = elapsed < limit;
    Verdict::new(
        pass && in_time,
        format!(
            "{detail}; runtime {:.2}s (limit {}s)",
            elapsed.as_secs_f64(),
            limit.as_secs()
        ),
    )
}

fn corpus_root() -> PathBuf {
    std::env::var_os("MSDENOISE_CORPUS")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/corpus"))
}

/// Shared state: the σ=25 bank trained for criterion 6 is reused by 8-10.
#[derive(Default)]
struct Context {
    bank25: Option<Filterbank>,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn c1_solve_oracle(_: &mut Context) -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let taps = if case % 2 == 0 { 9 } else { 74 };
        let n = 10 * taps;
        let x = DMatrix::from_fn(n, taps, |_, _| rng.random_range(-128.0..128.0));
        let u = DVector::from_fn(n, |_, _| rng.random_range(0.0..255.0));
        let mut acc = NormalEqAccumulator::new(taps, 1, 1);
        for r in 0..n {
            let row: Vec<f64> = x.row(r).iter().copied().collect();
            acc.accumulate(&row, u[r], 0, 0).unwrap();
        }
        let fallback = Filter { taps: vec![0.0; taps] };
        let (h, used_fallback) = solve_bucket(acc.entry(0, 0).unwrap(), 0.0, 1, &fallback, 0, 0).unwrap();
        if used_fallback {
            return Verdict::new(false, format!("case {case} fell back to the default filter"));
        }
        let oracle = x.clone().pseudo_inverse(1e-14).unwrap() * &u;
        let got = DVector::from_iterator(taps, h.taps.iter().map(|&v| v as f64));
        worst = worst.max((got - &oracle).norm() / oracle.norm());
    }
    timed(
        Duration::from_secs(10),
        start.elapsed(),
        worst <= 1e-6,
        format!("50 buckets, worst relative error {worst:.2e} (tol 1e-6)"),
    )
}

fn quad(t: &StructureTensor, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    t.txx * c * c + 2.0 * t.txy * s * c + t.tyy * s * s
}

/// Minimizes `f` over `[lo, hi]` by golden-section search.
fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..80 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

fn angle_diff_mod_pi(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

fn c2_eigen_oracle(_: &mut Context) -> Verdict {
    const ANGLES: usize = 3600;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let step = PI / ANGLES as f64;
    let (mut worst_angle, mut worst_eig): (f64, f64) = (0.0, 0.0);
    let mut checked_angles = 0;
    for _ in 0..1000 {
        let a = [
            [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        ];
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let t = StructureTensor {
            txx: scale * (a[0][0] * a[0][0] + a[1][0] * a[1][0]),
            txy: scale * (a[0][0] * a[0][1] + a[1][0] * a[1][1]),
            tyy: scale * (a[0][1] * a[0][1] + a[1][1] * a[1][1]),
        };
        let (mut kmin, mut kmax) = (0, 0);
        for k in 1..ANGLES {
            let v = quad(&t, k as f64 * step);
            if v < quad(&t, kmin as f64 * step) {
                kmin = k;
            }
            if v > quad(&t, kmax as f64 * step) {
                kmax = k;
            }
        }
        let arg_min = golden_min(
            |th| quad(&t, th),
            (kmin as f64 - 1.0) * step,
            (kmin as f64 + 1.0) * step,
        );
        let arg_max = golden_min(
            |th| -quad(&t, th),
            (kmax as f64 - 1.0) * step,
            (kmax as f64 + 1.0) * step,
        );
        let (lambda_min, lambda_max) = (quad(&t, arg_min), quad(&t, arg_max));

        let f = eigen_features(&t);
        worst_eig = worst_eig.max(rel_err(f.lambda1, lambda_max));
        // The small eigenvalue is judged relative to the large one: the
        // quadratic form itself is only that accurate in floating point.
        worst_eig = worst_eig.max((f.lambda2 - lambda_min).abs() / lambda_max);
        if f.coherence > 0.05 {
            checked_angles += 1;
            worst_angle = worst_angle.max(angle_diff_mod_pi(f.orientation, arg_min));
        }
    }
    timed(
        Duration::from_secs(5),
        start.elapsed(),
        worst_angle <= 1e-3 && worst_eig <= 1e-6,
        format!(
            "1000 tensors, worst orientation error {worst_angle:.2e} rad over {checked_angles} coherent (tol 1e-3), \
             worst eigenvalue error {worst_eig:.2e} (tol 1e-6)"
        ),
    )
}

fn random_image(w: usize, h: usize, cs: ColorSpace, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, cs, |_, _, _| rng.random_range(0..=255u8) as f64)
}

fn c3_identity(_: &mut Context) -> Verdict {
    let start = Instant::now();
    let quantizer = QuantizerSpec::new(8, vec![2.0, 10.0, 40.0], vec![0.25, 0.6]).unwrap();
    let fixed_fp = FootprintSpec::fixed(7).unwrap();
    let fixed = LevelBank::uniform(fixed_fp, quantizer.clone(), Filter::delta(fixed_fp)).unwrap();
    let ms_fp = FootprintSpec::new(7, 5).unwrap();
    let level = LevelBank::uniform(ms_fp, quantizer, Filter::delta(ms_fp)).unwrap();
    let multiscale = Filterbank::new(25.0, 3, vec![level; 3], String::new()).unwrap();

    let mut worst: f64 = 0.0;
    for (seed, cs) in [(1, ColorSpace::Rgb), (2, ColorSpace::Gray), (3, ColorSpace::Rgb)] {
        let img = random_image(97, 64, cs, seed);
        worst = worst.max(apply_fixed(&fixed, &img).unwrap().max_abs_diff(&img));
        worst = worst.max(apply_multiscale(&multiscale, &img).unwrap().max_abs_diff(&img));
    }
    timed(
        Duration::from_secs(5),
        start.elapsed(),
        worst <= 1e-3,
        format!("max abs error {worst:.2e} over RGB and gray inputs (tol 1e-3)"),
    )
}

fn c4_noise_halving(_: &mut Context) -> Verdict {
    let start = Instant::now();
    let sigma = 20.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Image::from_fn(512, 512, ColorSpace::Gray, |_, _, _| {
        let n: f64 = StandardNormal.sample(&mut rng);
        sigma * n
    });
    let half = downsample2(&noise);
    let n = half.data().len() as f64;
    let mean = half.data().iter().sum::<f64>() / n;
    let std = (half.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();

    // Analytic prediction for white noise: sigma * sqrt(sum of squared 2D
    // weights), measured from the impulse response of an interior sample.
    let mut impulse = Image::filled(64, 64, ColorSpace::Gray, 0.0);
    let mut energy = 0.0;
    for y in 20..44 {
        for x in 20..44 {
            impulse.set(x, y, 0, 1.0);
            let r = downsample2(&impulse).get(16, 16, 0);
            energy += r * r;
            impulse.set(x, y, 0, 0.0);
        }
    }
    timed(
        Duration::from_secs(2),
        start.elapsed(),
        (9.0..=11.0).contains(&std),
        format!(
            "sigma 20 -> sample std {std:.3} (range [9, 11]); kernel energy {energy:.4} predicts {:.3}",
            sigma * energy.sqrt()
        ),
    )
}

fn c5_depth_rule(_: &mut Context) -> Verdict {
    let brute = |sigma: f64| (0..).find(|&l| sigma / 2f64.powi(l) < 2.0).unwrap() as usize;
    let sigmas = [3.0, 15.0, 20.0, 25.0, 50.0];
    let expected = [1, 3, 4, 4, 5];
    let got: Vec<usize> = sigmas.iter().map(|&s| depth_for_sigma(s)).collect();
    let oracle: Vec<usize> = sigmas.iter().map(|&s| brute(s)).collect();
    Verdict::new(
        got == expected && oracle == expected,
        format!("depths {got:?}, brute force {oracle:?}, expected {expected:?}"),
    )
}

struct CorpusStats {
    train: PathBuf,
    heldout: PathBuf,
    train_images: usize,
    train_megapixels: f64,
    heldout_images: usize,
}

fn corpus() -> Result<CorpusStats, String> {
    let root = corpus_root();
    let (train, heldout) = (root.join("train"), root.join("heldout"));
    let list = |dir: &Path| commands::list_pngs(dir).map_err(|e| e.to_string());
    let train_list = list(&train)?;
    let heldout_list = list(&heldout)?;
    let mut pixels = 0usize;
    for (_, path) in &train_list {
        let d = png_dims(path).map_err(|e| format!("{}: {e}", path.display()))?;
        pixels += d.0 * d.1;
    }
    let stats = CorpusStats {
        train,
        heldout,
        train_images: train_list.len(),
        train_megapixels: pixels as f64 / 1e6,
        heldout_images: heldout_list.len(),
    };
    if stats.train_images < 20 || stats.train_megapixels < 30.0 || stats.heldout_images < 10 {
        return Err(format!(
            "corpus too small: {} train images, {:.2} MP, {} held out (need 20, 30 MP, 10)",
            stats.train_images, stats.train_megapixels, stats.heldout_images
        ));
    }
    Ok(stats)
}

fn png_dims(path: &Path) -> std::io::Result<(usize, usize)> {
    let decoder = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(path)?));
    let reader = decoder.read_info().map_err(std::io::Error::other)?;
    let info = reader.info();
    Ok((info.width as usize, info.height as usize))
}

fn c6_gain(ctx: &mut Context) -> Verdict {
    let stats = match corpus() {
        Ok(s) => s,
        Err(e) => return Verdict::new(false, e),
    };
    let start = Instant::now();
    eprintln!(
        "  training sigma 25 on {} images ({:.2} MP)",
        stats.train_images, stats.train_megapixels
    );
    let (bank, _) = match commands::train(&stats.train, &TrainConfig::multiscale(25.0), TRAIN_SEED) {
        Ok(b) => b,
        Err(e) => return Verdict::new(false, format!("training failed: {e}")),
    };
    let report = match commands::eval(&bank, &stats.heldout, 25.0, EVAL_SEED, false) {
        Ok(r) => r,
        Err(e) => return Verdict::new(false, format!("evaluation failed: {e}")),
    };
    let elapsed = start.elapsed();
    let (noisy, denoised) = (report.mean_noisy_psnr(), report.mean_denoised_psnr());
    ctx.bank25 = Some(bank);
    timed(
        Duration::from_secs(30 * 60),
        elapsed,
        denoised >= noisy + 4.0,
        format!(
            "{} train images ({:.2} MP), {} held out: noisy {noisy:.2} dB -> denoised {denoised:.2} dB, gain {:.2} dB (need 4.0)",
            stats.train_images,
            stats.train_megapixels,
            stats.heldout_images,
            denoised - noisy
        ),
    )
}

fn c7_multiscale_vs_fixed(_: &mut Context) -> Verdict {
    let stats = match corpus() {
        Ok(s) => s,
        Err(e) => return Verdict::new(false, e),
    };
    let start = Instant::now();
    let run = |cfg: TrainConfig, fixed: bool| -> Result<f64, msdenoise_cli::CliError> {
        let (bank, _) = commands::train(&stats.train, &cfg, TRAIN_SEED)?;
        Ok(commands::eval(&bank, &stats.heldout, 50.0, EVAL_SEED, fixed)?.mean_denoised_psnr())
    };
    eprintln!("  training sigma 50 multiscale");
    let multi = match run(TrainConfig::multiscale(50.0), false) {
        Ok(v) => v,
        Err(e) => return Verdict::new(false, format!("multiscale run failed: {e}")),
    };
    eprintln!("  training sigma 50 fixed-scale 7x7");
    let fixed = match run(TrainConfig::fixed_scale(50.0, 7).unwrap(), true) {
        Ok(v) => v,
        Err(e) => return Verdict::new(false, format!("fixed-scale run failed: {e}")),
    };
    timed(
        Duration::from_secs(30 * 60),
        start.elapsed(),
        multi >= fixed + 0.5,
        format!(
            "sigma 50: multiscale {multi:.2} dB vs fixed 7x7 {fixed:.2} dB, margin {:.2} dB (need 0.5)",
            multi - fixed
        ),
    )
}

fn heldout_noisy(count: usize, sigma: f64) -> Result<Vec<(String, Image)>, String> {
    let stats = corpus()?;
    let list = commands::list_pngs(&stats.heldout).map_err(|e| e.to_string())?;
    list.into_iter()
        .take(count)
        .map(|(name, path)| {
            let clean = load_png(&path).map_err(|e| e.to_string())?;
            let noisy =
                add_awgn(&clean, NoiseModel::awgn(sigma, image_seed(EVAL_SEED, &name))).map_err(|e| e.to_string())?;
            Ok((name, noisy))
        })
        .collect()
}

fn c8_rotation(ctx: &mut Context) -> Verdict {
    let Some(bank) = ctx.bank25.as_ref() else {
        return Verdict::new(false, "no sigma 25 bank (criterion 6 did not train one)");
    };
    let images = match heldout_noisy(5, 25.0) {
        Ok(v) => v,
        Err(e) => return Verdict::new(false, e),
    };
    let mut scores = Vec::new();
    for (_, x) in &images {
        let a = D4::Rot90.apply(&apply_multiscale(bank, x).unwrap());
        let b = apply_multiscale(bank, &D4::Rot90.apply(x)).unwrap();
        scores.push(psnr(&a, &b).unwrap());
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let listed: Vec<String> = scores.iter().map(|s| format!("{s:.1}")).collect();
    Verdict::new(
        mean > 40.0,
        format!(
            "mean {mean:.2} dB over {} images [{}] (need > 40)",
            scores.len(),
            listed.join(", ")
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn throughput(pool: &rayon::ThreadPool, bank: &Filterbank, images: &[(String, Image)]) -> f64 {
    let megapixels: f64 = images.iter().map(|(_, x)| x.pixel_count() as f64 / 1e6).sum();
    let runs: Vec<f64> = (0..3)
        .map(|_| {
            let start = Instant::now();
            pool.install(|| {
                for (_, x) in images {
                    std::hint::black_box(apply_multiscale(bank, x).unwrap());
                }
            });
            start.elapsed().as_secs_f64()
        })
        .collect();
    megapixels / median(runs)
}

fn c9_throughput(ctx: &mut Context) -> Verdict {
    let Some(bank) = ctx.bank25.as_ref() else {
        return Verdict::new(false, "no sigma 25 bank (criterion 6 did not train one)");
    };
    let images = match heldout_noisy(usize::MAX, 25.0) {
        Ok(v) => v,
        Err(e) => return Verdict::new(false, e),
    };
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let multi_pool = rayon::ThreadPoolBuilder::new().num_threads(cores).build().unwrap();
    let single_pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let multi = throughput(&multi_pool, bank, &images);
    let single = throughput(&single_pool, bank, &images);
    let fp = bank.levels[0].footprint();
    Verdict::new(
        multi >= 5.0 && single >= 1.0,
        format!(
            "{}x{}/{}x{} depth {}: {multi:.2} MP/s with {cores} available core(s) (need 5), {single:.2} MP/s on 1 thread (need 1)",
            fp.fine_size, fp.fine_size, fp.coarse_size, fp.coarse_size, bank.pyramid_depth
        ),
    )
}

fn c10_format(ctx: &mut Context) -> Verdict {
    let Some(bank) = ctx.bank25.as_ref() else {
        return Verdict::new(false, "no sigma 25 bank (criterion 6 did not train one)");
    };
    let bytes = bank.to_bytes().unwrap();
    let from_bytes = Filterbank::from_bytes(&bytes).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bank.msbf");
    bank.save(&path).unwrap();
    let from_file = Filterbank::load(&path).unwrap();
    let round_trip = from_bytes == *bank && from_file == *bank && from_bytes.to_bytes().unwrap() == bytes;

    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xff;
    let magic_ok = matches!(Filterbank::from_bytes(&bad_magic), Err(Error::BadMagic));

    let mut bumped = bytes.clone();
    bumped[4] = bumped[4].wrapping_add(1);
    let version_ok = matches!(Filterbank::from_bytes(&bumped), Err(Error::VersionMismatch { .. }));

    let cuts = [0, 3, 7, 16, 40, bytes.len() / 2, bytes.len() - 4, bytes.len() - 1];
    let truncated_ok = cuts
        .iter()
        .all(|&n| matches!(Filterbank::from_bytes(&bytes[..n]), Err(Error::Truncated)));
    std::fs::write(&path, &bytes[..bytes.len() / 3]).unwrap();
    let truncated_file_ok = matches!(Filterbank::load(&path), Err(Error::Truncated));

    Verdict::new(
        round_trip && magic_ok && version_ok && truncated_ok && truncated_file_ok,
        format!(
            "{} bytes: round trip {round_trip}, bad magic {magic_ok}, version bump {version_ok}, \
             truncations {}",
            bytes.len(),
            truncated_ok && truncated_file_ok
        ),
    )
}

type Criterion = fn(&mut Context) -> Verdict;

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("solve_bucket matches pseudo-inverse", c1_solve_oracle),
        ("eigenanalysis matches exhaustive search", c2_eigen_oracle),
        ("delta banks reproduce inputs", c3_identity),
        ("downsample2 halves AWGN std", c4_noise_halving),
        ("pyramid depth rule", c5_depth_rule),
        ("sigma 25 denoising gain", c6_gain),
        ("multiscale beats fixed-scale at sigma 50", c7_multiscale_vs_fixed),
        ("rotation consistency", c8_rotation),
        ("inference throughput", c9_throughput),
        ("filterbank format stability", c10_format),
    ];
    let mut ctx = Context::default();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        eprintln!("running criterion {}: {name}", i + 1);
        let verdict =
            catch_unwind(AssertUnwindSafe(|| run(&mut ctx))).unwrap_or_else(|_| Verdict::new(false, "panicked"));
        let tag = if verdict.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {:>2} {name}: {}", i + 1, verdict.detail);
        failed += usize::from(!verdict.pass);
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
