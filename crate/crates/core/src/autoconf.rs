//! Heuristic training configuration from dataset size and a memory budget.
//!
//! The rules are deliberately simple and deterministic:
//!
//! - index widths: [`select_index_width`] on `|E|` and `|R|`;
//! - dimension: the largest `d` in {32, 64, 128, 256} with
//!   `4 * d * (|E| + |R|) * 3 <= memory / 2` (parameters plus two Adam moments, all
//!   `f32`). If none fits, the largest `d >= 8` that fits, rounded down to the
//!   model's multiple;
//! - batch size: the largest power of two `<= memory / (64 * 4 * |E|)`, clamped to
//!   `[32, 16384]`. KvsAll logits dominate per-query memory;
//! - Adam with learning rate `0.1 / sqrt(d)`;
//! - 100 epochs, KvsAll, label smoothing 0.1.
//!
//! Every choice comes with a one-line rationale.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{ModelKind, ModelSpec};
use crate::train::{LossKind, OptimizerConfig, TrainConfig};
use crate::vocab::{select_index_width, IndexWidth};

pub const DIM_CANDIDATES: [usize; 4] = [32, 64, 128, 256];
pub const MIN_DIM: usize = 8;
pub const MIN_BATCH: usize = 32;
pub const MAX_BATCH: usize = 16384;
pub const DEFAULT_EPOCHS: u32 = 100;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AutoconfError {
    #[error("{needed} bytes needed for d={MIN_DIM}, but only half of {available} may be used")]
    InsufficientMemory { needed: u128, available: u64 },
    #[error("dataset statistics must be positive: {0:?}")]
    InvalidStats(KgStats),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgStats {
    pub entity_count: u64,
    pub relation_count: u64,
    pub triple_count: u64,
    pub available_memory_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suggestion {
    pub config: TrainConfig,
    pub entity_width: IndexWidth,
    pub relation_width: IndexWidth,
    pub rationale: Vec<String>,
}

/// Bytes for parameters plus two Adam moment matrices at dimension `d`.
pub fn parameter_bytes(stats: &KgStats, d: usize) -> u128 {
    4 * d as u128 * (stats.entity_count as u128 + stats.relation_count as u128) * 3
}

pub fn suggest_config(stats: KgStats, kind: ModelKind) -> Result<Suggestion, AutoconfError> {
    if stats.entity_count == 0 || stats.relation_count == 0 || stats.triple_count == 0 || stats.available_memory_bytes == 0 {
        return Err(AutoconfError::InvalidStats(stats));
    }
    let mut rationale = Vec::new();
    let budget = stats.available_memory_bytes as u128 / 2;

    let entity_width = select_index_width(stats.entity_count);
    let relation_width = select_index_width(stats.relation_count);
    rationale.push(format!(
        "index width: {} entities -> {}-bit, {} relations -> {}-bit",
        stats.entity_count,
        entity_width.bits(),
        stats.relation_count,
        relation_width.bits()
    ));

    let multiple = kind.model().dim_multiple();
    let dim = match DIM_CANDIDATES.iter().rev().find(|&&d| parameter_bytes(&stats, d) <= budget) {
        Some(&d) => {
            rationale.push(format!(
                "embedding dim {d}: largest of {DIM_CANDIDATES:?} whose parameters and Adam moments ({} bytes) fit in half the memory",
                parameter_bytes(&stats, d)
            ));
            d
        }
        None => {
            let per_dim = parameter_bytes(&stats, 1);
            let fit = (budget / per_dim).min(DIM_CANDIDATES[0] as u128) as usize;
            let d = fit - fit % multiple;
            if d < MIN_DIM {
                return Err(AutoconfError::InsufficientMemory {
                    needed: parameter_bytes(&stats, MIN_DIM),
                    available: stats.available_memory_bytes,
                });
            }
            rationale.push(format!("embedding dim {d}: below {} because memory is tight", DIM_CANDIDATES[0]));
            d
        }
    };

    let per_query = 64u128 * 4 * stats.entity_count as u128;
    let raw = stats.available_memory_bytes as u128 / per_query;
    let pow2 = if raw == 0 { 0 } else { 1u128 << (127 - raw.leading_zeros()) };
    let batch_size = pow2.clamp(MIN_BATCH as u128, MAX_BATCH as u128) as usize;
    rationale.push(format!(
        "batch size {batch_size}: largest power of two <= memory / (256 * |E|) = {raw}, clamped to [{MIN_BATCH}, {MAX_BATCH}]"
    ));

    let lr = 0.1 / (dim as f64).sqrt();
    rationale.push(format!("learning rate {lr:.6}: 0.1 / sqrt({dim}) for Adam"));
    rationale.push(format!("epochs {DEFAULT_EPOCHS}: default"));

    let config = TrainConfig {
        model: ModelSpec { kind, dim },
        loss: LossKind::KvsAll,
        optimizer: OptimizerConfig::adam(lr),
        batch_size,
        epochs: DEFAULT_EPOCHS,
        seed: 0,
        label_smoothing: 0.1,
        shards: 1,
    };
    Ok(Suggestion { config, entity_width, relation_width, rationale })
}
