//! Full-model assembly: configuration, parameter registration in one store,
//! and the tuned-versus-total parameter budget report.

use alloc::format;
use alloc::string::String;

use crate::adapter::{CmtConfig, CmtStack};
use crate::cme::CmeParams;
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{CoreError, Result};
use crate::params::ParamStore;
use crate::prompt::PromptHead;
use crate::rng::Rng;
use crate::segmenter::{SamParams, BANK_CAPACITY};

/// Dimensions and knobs of the whole model.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// Frozen-backbone dimensions.
    pub enc: EncoderConfig,
    /// Adapter dimensions and stage toggles.
    pub cmt: CmtConfig,
    /// Decoder/prompt token width.
    pub d_dec: usize,
    /// Streaming clip length `T`.
    pub clip_len: usize,
    /// Memory bank capacity `K`.
    pub bank_cap: usize,
    /// Fusion weight λ of the memory-less candidate.
    pub lambda: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            enc: EncoderConfig::default(),
            cmt: CmtConfig::default(),
            d_dec: 32,
            clip_len: 4,
            bank_cap: BANK_CAPACITY,
            lambda: crate::cme::DEFAULT_LAMBDA,
        }
    }
}

impl ModelConfig {
    /// Check internal consistency of all component dimensions.
    pub fn validate(&self) -> Result<()> {
        self.enc.validate()?;
        self.cmt.validate(&self.enc)?;
        if self.d_dec % 4 != 0 || self.d_dec == 0 {
            return Err(CoreError::InvalidArgument {
                op: "ModelConfig",
                detail: format!("d_dec must be a positive multiple of 4, got {}", self.d_dec),
            });
        }
        if self.clip_len == 0 {
            return Err(CoreError::InvalidArgument {
                op: "ModelConfig",
                detail: String::from("clip_len must be positive"),
            });
        }
        if self.bank_cap == 0 {
            return Err(CoreError::InvalidArgument {
                op: "ModelConfig",
                detail: String::from("bank_cap must be positive"),
            });
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(CoreError::InvalidArgument {
                op: "ModelConfig",
                detail: format!("lambda must lie in (0, 1], got {}", self.lambda),
            });
        }
        Ok(())
    }
}

/// All module handles over one parameter store.
pub struct Model {
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub cmt: CmtStack,
    pub prompt: PromptHead,
    pub sam: SamParams,
    pub cme: CmeParams,
}

impl Model {
    /// Register every parameter of a fresh model, in a fixed namespace order
    /// (`encoder.*`, `cmt.*`, `prompt.*`, `sam.*`, `cme.*` — the detector
    /// last because its readout mirrors copy decoder weights).
    pub fn register(store: &mut ParamStore, cfg: ModelConfig, rng: &mut Rng) -> Result<Model> {
        cfg.validate()?;
        let encoder = Encoder::register(store, &cfg.enc, rng)?;
        let cmt = CmtStack::register(store, &cfg.enc, &cfg.cmt, rng)?;
        let prompt = PromptHead::register(store, cfg.enc.c_t, cfg.d_dec, rng)?;
        let sam = SamParams::register(store, &cfg.enc, cfg.d_dec, rng)?;
        let cme = CmeParams::register(store, cfg.d_dec, rng)?;
        Ok(Model { cfg, encoder, cmt, prompt, sam, cme })
    }

    /// Re-attach handles to a store restored from a checkpoint. The store
    /// must hold exactly the parameter set `cfg` implies, shapes included.
    pub fn from_store(store: &ParamStore, cfg: ModelConfig) -> Result<Model> {
        cfg.validate()?;
        Self::check_layout(store, &cfg)?;
        let encoder = Encoder::from_store(store, &cfg.enc)?;
        let cmt = CmtStack::from_store(store, &cfg.enc, &cfg.cmt)?;
        let prompt = PromptHead::from_store(store, cfg.enc.c_t, cfg.d_dec)?;
        let sam = SamParams::from_store(store, &cfg.enc, cfg.d_dec)?;
        let cme = CmeParams::from_store(store, cfg.d_dec)?;
        Ok(Model { cfg, encoder, cmt, prompt, sam, cme })
    }

    /// Diffs the store against a scratch registration of `cfg`: every
    /// expected parameter must exist with the expected shape, and nothing
    /// extra may be present. Catches checkpoint/architecture mismatches
    /// before a shape error surfaces mid-forward.
    fn check_layout(store: &ParamStore, cfg: &ModelConfig) -> Result<()> {
        let mut scratch = ParamStore::new();
        let mut rng = Rng::new(0);
        Model::register(&mut scratch, cfg.clone(), &mut rng)?;
        if scratch.len() != store.len() {
            return Err(CoreError::Parameter {
                detail: format!(
                    "store holds {} parameters but the configuration implies {}",
                    store.len(),
                    scratch.len()
                ),
            });
        }
        for (_, name, expected, _) in scratch.iter() {
            let id = store.id(name)?;
            let got = store.value(id).shape();
            if got != expected.shape() {
                return Err(CoreError::ShapeMismatch {
                    op: "Model::from_store",
                    detail: format!("{}: stored {:?}, configured {:?}", name, got, expected.shape()),
                });
            }
        }
        Ok(())
    }
}

/// True for parameters tuned in the adapter/prompt/detector stages — the
/// set whose size the budget bound constrains. The detector's readout
/// mirrors are frozen copies, not tuned weights.
pub fn is_tuned_name(name: &str) -> bool {
    name.starts_with("cmt.")
        || name.starts_with("prompt.")
        || (name.starts_with("cme.") && !name.starts_with("cme.readout."))
}

/// Element counts behind the "small tuned footprint" claim.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetReport {
    /// Elements under `cmt.*`.
    pub adapter: usize,
    /// Elements under `prompt.*`.
    pub prompt: usize,
    /// Trainable detector elements (`cme.*` minus readout mirrors).
    pub detector: usize,
    /// All tuned elements (sum of the above).
    pub tuned: usize,
    /// Every element in the store.
    pub total: usize,
    /// tuned / total.
    pub ratio: f64,
}

/// Compute the tuned/total parameter budget from namespaces.
pub fn budget_report(store: &ParamStore) -> BudgetReport {
    let adapter = store.element_count_where(|n| n.starts_with("cmt."));
    let prompt = store.element_count_where(|n| n.starts_with("prompt."));
    let detector = store
        .element_count_where(|n| n.starts_with("cme.") && !n.starts_with("cme.readout."));
    let (_, total) = store.element_counts();
    let tuned = adapter + prompt + detector;
    let ratio = if total == 0 { 0.0 } else { tuned as f64 / total as f64 };
    BudgetReport { adapter, prompt, detector, tuned, total, ratio }
}

/// Budget bound: tuned parameters stay within this fraction of the model.
pub const BUDGET_LIMIT: f64 = 0.05;
