//! Batch front end: corpus synthesis, training, denoising, evaluation and
//! bank inspection.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::io::Write;

pub use args::{Cli, Command};
pub use error::{CliError, Result};
pub use report::{EvalReport, EvalRow};

use config::{train_config, FileConfig};
use error::io_err;

fn require_sigma(flag: Option<f64>, file: &FileConfig) -> Result<f64> {
    flag.or(file.sigma)
        .ok_or_else(|| CliError::Usage("--sigma is required (flag or config file)".into()))
}

/// Thread count requested by flag or config file, if any.
pub fn requested_threads(cli: &Cli) -> Result<Option<usize>> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    Ok(cli.threads.or(file.threads))
}

/// Executes one parsed command line, writing human-readable output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let w = |e| CliError::Io {
        path: "<stdout>".into(),
        source: e,
    };
    match &cli.command {
        Command::Synth {
            input_dir,
            output_dir,
            sigma,
        } => {
            let sigma = require_sigma(*sigma, &file)?;
            let entries = commands::synth(input_dir, output_dir, sigma, seed)?;
            let mean = entries.iter().map(|e| e.noisy_psnr).sum::<f64>() / entries.len() as f64;
            writeln!(
                out,
                "wrote {} noisy images to {} (mean PSNR {mean:.3} dB)",
                entries.len(),
                output_dir.display()
            )
            .map_err(w)?;
        }
        Command::Train {
            clean_dir,
            sigma,
            output,
            knobs,
        } => {
            let sigma = require_sigma(*sigma, &file)?;
            let cfg = train_config(sigma, &knobs.into(), &file)?;
            let (fb, report) = commands::train(clean_dir, &cfg, seed)?;
            fb.save(output)?;
            write!(out, "{}", commands::train_summary(&fb, &report)).map_err(w)?;
            writeln!(out, "wrote {}", output.display()).map_err(w)?;
        }
        Command::Denoise {
            bank,
            input,
            output,
            fixed_scale,
            reference,
        } => {
            let s = commands::denoise_file(bank, input, output, *fixed_scale, reference.as_deref())?;
            writeln!(
                out,
                "denoised {:.3} MP in {:.4} s ({:.3} MP/s)",
                s.megapixels,
                s.seconds,
                s.megapixels / s.seconds
            )
            .map_err(w)?;
            if let Some((before, after)) = s.psnr {
                writeln!(
                    out,
                    "psnr input={before:.3} output={after:.3} gain={:+.3}",
                    after - before
                )
                .map_err(w)?;
            }
        }
        Command::Eval {
            bank,
            clean_dir,
            sigma,
            csv,
            fixed_scale,
        } => {
            let fb = commands::load_bank(bank)?;
            let sigma = sigma.or(file.sigma).unwrap_or(fb.noise_sigma);
            let report = commands::eval(&fb, clean_dir, sigma, seed, *fixed_scale)?;
            if let Some(path) = csv {
                std::fs::write(path, report.to_csv()).map_err(io_err(path))?;
            }
            write!(out, "{}", report.table()).map_err(w)?;
        }
        Command::Inspect { bank, output } => {
            for p in commands::inspect(bank, output)? {
                writeln!(out, "wrote {}", p.display()).map_err(w)?;
            }
        }
    }
    Ok(())
}
