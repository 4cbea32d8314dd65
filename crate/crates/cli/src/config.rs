use std::path::Path;

use anyhow::{bail, Context};
use baq_core::linalg::TransformMode;
use serde::Deserialize;

pub const DEFAULT_TARGET_BITS: f64 = 2.0;
pub const DEFAULT_PERCDAMP: f64 = 0.01;
pub const DEFAULT_PROBE_BITS: u8 = 4;

/// Settings readable from `--config`; every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub target_bits: Option<f64>,
    pub percdamp: Option<f64>,
    pub seed: Option<u64>,
    pub block_size: Option<usize>,
    pub transform_mode: Option<String>,
    pub ref_loss_iterate: Option<bool>,
    pub probe_bits: Option<u8>,
    pub jobs: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Effective settings after merging flags over the config file over defaults.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub target_bits: f64,
    pub percdamp: f64,
    pub seed: u64,
    pub block_size: usize,
    pub transform_mode: Option<TransformMode>,
    pub ref_loss_iterate: bool,
    pub probe_bits: u8,
    pub jobs: usize,
}

#[derive(Debug, Default)]
pub struct Overrides {
    pub target_bits: Option<f64>,
    pub percdamp: Option<f64>,
    pub seed: Option<u64>,
    pub block_size: Option<usize>,
    pub transform_mode: Option<String>,
    pub ref_loss_iterate: bool,
    pub probe_bits: Option<u8>,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn resolve(file: &FileConfig, flags: Overrides) -> anyhow::Result<Self> {
        let mode = flags.transform_mode.or_else(|| file.transform_mode.clone());
        let cfg = Self {
            target_bits: flags.target_bits.or(file.target_bits).unwrap_or(DEFAULT_TARGET_BITS),
            percdamp: flags.percdamp.or(file.percdamp).unwrap_or(DEFAULT_PERCDAMP),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            block_size: flags.block_size.or(file.block_size).unwrap_or(baq_core::transform::DEFAULT_BLOCK_SIZE),
            transform_mode: mode.map(|m| m.parse::<TransformMode>()).transpose()?,
            ref_loss_iterate: flags.ref_loss_iterate || file.ref_loss_iterate.unwrap_or(false),
            probe_bits: flags.probe_bits.or(file.probe_bits).unwrap_or(DEFAULT_PROBE_BITS),
            jobs: flags.jobs.or(file.jobs).unwrap_or_else(default_jobs),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> anyhow::Result<()> {
        let max = baq_core::MAX_BITS as f64;
        if !(0.0..=max).contains(&self.target_bits) {
            bail!("target bits must lie in [0, {max}], got {}", self.target_bits);
        }
        if !self.percdamp.is_finite() || self.percdamp < 0.0 {
            bail!("percdamp must be a finite value >= 0, got {}", self.percdamp);
        }
        if self.block_size == 0 {
            bail!("block size must be positive");
        }
        if self.probe_bits > baq_core::MAX_BITS {
            bail!("probe width must be at most {}", baq_core::MAX_BITS);
        }
        if self.jobs == 0 {
            bail!("jobs must be positive");
        }
        Ok(())
    }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(8)
}
