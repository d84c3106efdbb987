//! Run configuration: a JSON file can supply any command-line knob, CLI
//! flags override the file, and `RVOS_SEED` supplies a default seed when
//! neither gives one.

use std::path::Path;

use anyhow::{Context, Result};
use rvos_core::adapter::CmtConfig;
use rvos_core::model::ModelConfig;
use serde::{Deserialize, Serialize};

/// Environment variable consulted for a default seed.
pub const SEED_ENV: &str = "RVOS_SEED";

/// Every knob a config file may supply. All fields optional; omitted ones
/// fall back to CLI flags' defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub warm_steps: Option<usize>,
    pub count: Option<usize>,
    pub scenario: Option<String>,
    pub window: Option<usize>,
    pub lambda: Option<f64>,
    pub cme: Option<String>,
    pub no_hsa: Option<bool>,
    pub no_vta: Option<bool>,
    pub no_tva: Option<bool>,
    pub mlp_only: Option<bool>,
    pub t_v: Option<usize>,
    pub distractors: Option<usize>,
}

impl FileConfig {
    /// Load from a JSON file; unknown keys are rejected.
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Resolve a value from (CLI flag, config file, default), in that order.
pub fn resolve<T: Clone>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Resolve the seed, additionally consulting `RVOS_SEED` before the default.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>, default: u64) -> Result<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(text) => text
            .parse::<u64>()
            .with_context(|| format!("{SEED_ENV} must be an unsigned integer, got {text:?}")),
        Err(_) => Ok(default),
    }
}

/// The architecture description stored inside checkpoints so evaluation
/// reconstructs exactly the trained configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArchConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub input_c: usize,
    pub level_channels: Vec<usize>,
    pub level_depths: Vec<usize>,
    pub c_t: usize,
    pub vocab: usize,
    pub bottleneck: usize,
    pub patch_sizes: Vec<usize>,
    pub hsa: bool,
    pub vta: bool,
    pub tva: bool,
    pub d_dec: usize,
    pub clip_len: usize,
    pub bank_cap: usize,
    pub lambda: f64,
}

impl ArchConfig {
    pub fn from_model_config(cfg: &ModelConfig) -> ArchConfig {
        ArchConfig {
            input_h: cfg.enc.input_h,
            input_w: cfg.enc.input_w,
            input_c: cfg.enc.input_c,
            level_channels: cfg.enc.level_channels.clone(),
            level_depths: cfg.enc.level_depths.clone(),
            c_t: cfg.enc.c_t,
            vocab: cfg.enc.vocab,
            bottleneck: cfg.cmt.bottleneck,
            patch_sizes: cfg.cmt.patch_sizes.clone(),
            hsa: cfg.cmt.hsa,
            vta: cfg.cmt.vta,
            tva: cfg.cmt.tva,
            d_dec: cfg.d_dec,
            clip_len: cfg.clip_len,
            bank_cap: cfg.bank_cap,
            lambda: cfg.lambda,
        }
    }

    pub fn to_model_config(&self) -> ModelConfig {
        ModelConfig {
            enc: rvos_core::encoder::EncoderConfig {
                input_h: self.input_h,
                input_w: self.input_w,
                input_c: self.input_c,
                level_channels: self.level_channels.clone(),
                level_depths: self.level_depths.clone(),
                c_t: self.c_t,
                vocab: self.vocab,
            },
            cmt: CmtConfig {
                bottleneck: self.bottleneck,
                patch_sizes: self.patch_sizes.clone(),
                hsa: self.hsa,
                vta: self.vta,
                tva: self.tva,
            },
            d_dec: self.d_dec,
            clip_len: self.clip_len,
            bank_cap: self.bank_cap,
            lambda: self.lambda,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_and_flag_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"steps": 42, "lr": 0.001}"#).unwrap();
        let file = FileConfig::load(&path).unwrap();
        assert_eq!(resolve(None, file.steps, 10), 42);
        assert_eq!(resolve(Some(7), file.steps, 10), 7);
        assert_eq!(resolve(None::<f64>, None, 0.5), 0.5);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, r#"{"stepz": 42}"#).unwrap();
        assert!(FileConfig::load(&path).is_err());
    }

    #[test]
    fn arch_round_trip_preserves_model_config() {
        let cfg = ModelConfig::default();
        let arch = ArchConfig::from_model_config(&cfg);
        let back = arch.to_model_config();
        assert_eq!(back.enc.level_channels, cfg.enc.level_channels);
        assert_eq!(back.cmt.patch_sizes, cfg.cmt.patch_sizes);
        assert_eq!(back.d_dec, cfg.d_dec);
        assert_eq!(back.lambda, cfg.lambda);
        let json = serde_json::to_string(&arch).unwrap();
        let parsed: ArchConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed, arch);
    }

    #[test]
    fn seed_resolution_order() {
        // Flag beats everything.
        assert_eq!(resolve_seed(Some(1), Some(2), 3).unwrap(), 1);
        // File beats env/default.
        assert_eq!(resolve_seed(None, Some(2), 3).unwrap(), 2);
        // Env var beats default (set locally for this test only).
        std::env::set_var(SEED_ENV, "99");
        assert_eq!(resolve_seed(None, None, 3).unwrap(), 99);
        std::env::set_var(SEED_ENV, "not-a-number");
        assert!(resolve_seed(None, None, 3).is_err());
        std::env::remove_var(SEED_ENV);
        assert_eq!(resolve_seed(None, None, 3).unwrap(), 3);
    }
}
