//! Times `apply_multiscale` on a synthetic image with a random bank.
//!
//! `cargo run --release -p msdenoise --example throughput -- [megapixels]`

use std::time::Instant;

use msdenoise::features::{feature_field, fit_thresholds};
use msdenoise::imagecore::{add_awgn, NoiseModel};
use msdenoise::{apply_multiscale, ColorSpace, Filter, Filterbank, FootprintSpec, Image, LevelBank};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> msdenoise::Result<()> {
    let mp: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(2.0);
    let side = (mp * 1e6).sqrt() as usize;
    let clean = Image::from_fn(side, side, ColorSpace::Rgb, |x, y, c| {
        128.0 + 100.0 * ((x as f64 * 0.05).sin() * (y as f64 * 0.03 + c as f64).cos())
    });
    let noisy = add_awgn(&clean, NoiseModel::awgn(25.0, 1))?;

    let fp = FootprintSpec::for_sigma(25.0);
    let depth = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut levels = Vec::new();
    let mut level_img = noisy.clone();
    for _ in 0..depth {
        let q = fit_thresholds(&feature_field(&level_img), 16, 16, 16)?;
        let k = q.bucket_count();
        let filters = (0..3 * k)
            .map(|_| Filter {
                taps: (0..fp.taps()).map(|_| rng.random_range(-0.05f32..0.05)).collect(),
            })
            .collect();
        levels.push(LevelBank::new(fp, q, filters, vec![0; k])?);
        level_img = msdenoise::pyramid::downsample2(&level_img);
    }
    let bank = Filterbank::new(25.0, depth, levels, String::new())?;

    if std::env::var_os("BREAKDOWN").is_some() {
        breakdown(&noisy, &bank);
    }
    let start = Instant::now();
    let out = apply_multiscale(&bank, &noisy)?;
    let secs = start.elapsed().as_secs_f64();
    let mpx = noisy.pixel_count() as f64 / 1e6;
    println!(
        "{}x{} ({mpx:.2} MP) in {secs:.3} s: {:.2} MP/s on {} threads (checksum {:.3})",
        side,
        side,
        mpx / secs,
        rayon::current_num_threads(),
        out.data().iter().sum::<f64>() / out.data().len() as f64
    );
    Ok(())
}

#[allow(dead_code)]
fn breakdown(noisy: &Image, bank: &Filterbank) {
    let t = Instant::now();
    let p = msdenoise::pyramid::build_pyramid(noisy, 4);
    println!("pyramid {:.3}", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let s = msdenoise::features::build_selector(noisy, bank.levels[0].quantizer());
    println!("selector {:.3} {}", t.elapsed().as_secs_f64(), s.indices.len());
    let t = Instant::now();
    let y = msdenoise::imagecore::rgb_to_ycbcr(noisy).unwrap();
    println!("color {:.3} {}", t.elapsed().as_secs_f64(), y.width());
    let t = Instant::now();
    let f = msdenoise::features::structure_tensor_field(noisy);
    println!("tensor field {:.3} {}", t.elapsed().as_secs_f64(), f.len());
    drop(p);
}
