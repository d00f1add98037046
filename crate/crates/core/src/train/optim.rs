//! Sparse SGD and Adam over embedding rows.
//!
//! Only rows present in the gradient map are touched. Adam keeps per-row first and
//! second moments and one global step counter; a row's moments only decay on steps
//! where that row receives a gradient.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::models::{EmbeddingStore, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = match *self {
            OptimizerConfig::Sgd { lr } => lr > 0.0 && lr.is_finite(),
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                lr > 0.0
                    && lr.is_finite()
                    && (0.0..1.0).contains(&beta1)
                    && (0.0..1.0).contains(&beta2)
                    && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(TrainError::InvalidConfig(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Adam moments, shaped like the parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub first: EmbeddingStore,
    pub second: EmbeddingStore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    /// `None` for SGD.
    pub moments: Option<Moments>,
}

impl OptimizerState {
    pub fn new(config: &OptimizerConfig, store: &EmbeddingStore) -> Self {
        let moments = match config {
            OptimizerConfig::Sgd { .. } => None,
            OptimizerConfig::Adam { .. } => {
                let zeros = EmbeddingStore::zeros(store.dim, store.rows(Matrix::Entity), store.rows(Matrix::Relation));
                Some(Moments { first: zeros.clone(), second: zeros })
            }
        };
        Self { step: 0, moments }
    }

    pub fn all_finite(&self) -> bool {
        self.moments
            .as_ref()
            .is_none_or(|m| m.first.all_finite() && m.second.all_finite())
    }
}

/// Row-indexed gradients, accumulated in `f64`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrads {
    pub entities: BTreeMap<usize, Vec<f64>>,
    pub relations: BTreeMap<usize, Vec<f64>>,
}

impl SparseGrads {
    pub fn rows(&self, m: Matrix) -> &BTreeMap<usize, Vec<f64>> {
        match m {
            Matrix::Entity => &self.entities,
            Matrix::Relation => &self.relations,
        }
    }

    fn rows_mut(&mut self, m: Matrix) -> &mut BTreeMap<usize, Vec<f64>> {
        match m {
            Matrix::Entity => &mut self.entities,
            Matrix::Relation => &mut self.relations,
        }
    }

    /// `grad[row] += scale * g`.
    pub fn add(&mut self, m: Matrix, row: usize, g: &[f64], scale: f64) {
        let acc = self.rows_mut(m).entry(row).or_insert_with(|| vec![0.0; g.len()]);
        for (a, &x) in acc.iter_mut().zip(g) {
            *a += scale * x;
        }
    }

    pub fn insert(&mut self, m: Matrix, row: usize, g: Vec<f64>) {
        self.rows_mut(m).insert(row, g);
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.relations.is_empty()
    }
}

/// One optimizer step on the rows in `grads`. Fails before touching anything if a
/// gradient is non-finite or addresses a missing row.
pub fn apply_gradients(
    store: &mut EmbeddingStore,
    state: &mut OptimizerState,
    grads: &SparseGrads,
    config: &OptimizerConfig,
) -> Result<(), TrainError> {
    for m in [Matrix::Entity, Matrix::Relation] {
        let rows = store.rows(m);
        for (&row, g) in grads.rows(m) {
            if row >= rows || g.len() != store.dim {
                return Err(TrainError::GradientShape { matrix: m, row });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::NonFiniteGradient { matrix: m, row });
            }
        }
    }
    state.step += 1;
    match *config {
        OptimizerConfig::Sgd { lr } => {
            for m in [Matrix::Entity, Matrix::Relation] {
                for (&row, g) in grads.rows(m) {
                    for (p, &gi) in store.row_mut(m, row).iter_mut().zip(g) {
                        *p = (*p as f64 - lr * gi) as f32;
                    }
                }
            }
        }
        OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
            let moments = state.moments.get_or_insert_with(|| {
                let zeros = EmbeddingStore::zeros(store.dim, store.rows(Matrix::Entity), store.rows(Matrix::Relation));
                Moments { first: zeros.clone(), second: zeros }
            });
            let t = state.step as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for m in [Matrix::Entity, Matrix::Relation] {
                for (&row, g) in grads.rows(m) {
                    let params = store.row_mut(m, row);
                    let first = moments.first.row_mut(m, row);
                    for i in 0..g.len() {
                        let mi = beta1 * first[i] as f64 + (1.0 - beta1) * g[i];
                        first[i] = mi as f32;
                    }
                    let second = moments.second.row_mut(m, row);
                    for i in 0..g.len() {
                        let vi = beta2 * second[i] as f64 + (1.0 - beta2) * g[i] * g[i];
                        second[i] = vi as f32;
                    }
                    let first = moments.first.row(m, row);
                    let second = moments.second.row(m, row);
                    for i in 0..g.len() {
                        let m_hat = first[i] as f64 / c1;
                        let v_hat = second[i] as f64 / c2;
                        params[i] = (params[i] as f64 - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
                    }
                }
            }
        }
    }
    Ok(())
}
