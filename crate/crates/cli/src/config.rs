//! Optional TOML defaults. Every key mirrors a command-line flag; flags win.

use std::path::Path;

use msdenoise::filterbank::FootprintSpec;
use msdenoise::trainer::BucketCounts;
use msdenoise::TrainConfig;
use serde::Deserialize;

use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub sigma: Option<f64>,
    pub fine: Option<usize>,
    pub coarse: Option<usize>,
    pub depth: Option<usize>,
    pub orientation_buckets: Option<usize>,
    pub strength_buckets: Option<usize>,
    pub coherence_buckets: Option<usize>,
    pub ridge: Option<f64>,
    pub min_count: Option<u64>,
    pub augment: Option<bool>,
    pub fixed_scale: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            reason: e.message().to_string(),
        })
    }
}

/// Training knobs as given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainOverrides {
    pub fine: Option<usize>,
    pub coarse: Option<usize>,
    pub depth: Option<usize>,
    pub orientation_buckets: Option<usize>,
    pub strength_buckets: Option<usize>,
    pub coherence_buckets: Option<usize>,
    pub ridge: Option<f64>,
    pub min_count: Option<u64>,
    pub no_augment: bool,
    pub fixed_scale: bool,
}

/// Builds the training configuration: flag, then file, then the defaults
/// for `sigma`.
pub fn train_config(sigma: f64, flags: &TrainOverrides, file: &FileConfig) -> Result<TrainConfig> {
    let fixed = flags.fixed_scale || file.fixed_scale.unwrap_or(false);
    let defaults = FootprintSpec::for_sigma(sigma);
    let fine = flags.fine.or(file.fine).unwrap_or(defaults.fine_size);
    let mut cfg = if fixed {
        if flags.depth.or(file.depth).is_some_and(|d| d > 0) {
            return Err(CliError::Usage("--depth cannot be combined with --fixed-scale".into()));
        }
        TrainConfig::fixed_scale(sigma, fine)?
    } else {
        let coarse = flags.coarse.or(file.coarse).unwrap_or(defaults.coarse_size);
        let mut cfg = TrainConfig::multiscale(sigma);
        cfg.footprint = FootprintSpec::new(fine, coarse)?;
        if let Some(depth) = flags.depth.or(file.depth) {
            if depth == 0 {
                return Err(CliError::Usage(
                    "depth 0 is a fixed-scale bank; pass --fixed-scale".into(),
                ));
            }
            cfg.depth = depth;
        }
        cfg
    };
    let b = BucketCounts::default();
    cfg.buckets = BucketCounts {
        orientation: flags
            .orientation_buckets
            .or(file.orientation_buckets)
            .unwrap_or(b.orientation),
        strength: flags.strength_buckets.or(file.strength_buckets).unwrap_or(b.strength),
        coherence: flags
            .coherence_buckets
            .or(file.coherence_buckets)
            .unwrap_or(b.coherence),
    };
    if let Some(r) = flags.ridge.or(file.ridge) {
        cfg.ridge = r;
    }
    cfg.min_count = flags.min_count.or(file.min_count);
    cfg.augment = if flags.no_augment {
        false
    } else {
        file.augment.unwrap_or(true)
    };
    Ok(cfg)
}
