//! Row-sharded parameters.
//!
//! Shard `s` of `n` owns entity rows `[s*c, min((s+1)*c, |E|))` with
//! `c = ceil(|E| / n)`, and the analogous relation rows. Every row has exactly one
//! owner, and only the owner writes it. A shard that needs a row it does not own
//! fetches it from the owner ([`ShardedStore::fetch`]). In process this is a borrow.
//! A remote transport would carry a `(matrix, row)` request and a `d`-float reply.

use std::ops::Range;

use rayon::prelude::*;

use super::optim::{apply_gradients, Moments, OptimizerConfig, OptimizerState, SparseGrads};
use super::TrainError;
use crate::models::{EmbeddingStore, Matrix, ModelError, ModelSpec, RowSource};

/// Shard boundaries, a pure function of `(|E|, |R|, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShardLayout {
    pub entity_count: usize,
    pub relation_count: usize,
    pub n_shards: usize,
}

fn ceil_range(count: usize, n: usize, s: usize) -> Range<usize> {
    let chunk = count.div_ceil(n);
    (s * chunk).min(count)..((s + 1) * chunk).min(count)
}

impl ShardLayout {
    pub fn new(entity_count: usize, relation_count: usize, n_shards: usize) -> Result<Self, TrainError> {
        if n_shards == 0 || n_shards > entity_count {
            return Err(TrainError::InvalidShardCount { n_shards, entity_count });
        }
        Ok(Self { entity_count, relation_count, n_shards })
    }

    pub fn entity_range(&self, shard: usize) -> Range<usize> {
        ceil_range(self.entity_count, self.n_shards, shard)
    }

    pub fn relation_range(&self, shard: usize) -> Range<usize> {
        ceil_range(self.relation_count, self.n_shards, shard)
    }

    pub fn range(&self, m: Matrix, shard: usize) -> Range<usize> {
        match m {
            Matrix::Entity => self.entity_range(shard),
            Matrix::Relation => self.relation_range(shard),
        }
    }

    pub fn owner(&self, m: Matrix, row: usize) -> usize {
        let count = match m {
            Matrix::Entity => self.entity_count,
            Matrix::Relation => self.relation_count,
        };
        row / count.div_ceil(self.n_shards)
    }
}

/// One worker's rows and the optimizer state for them.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub entity_rows: Range<usize>,
    pub relation_rows: Range<usize>,
    pub store: EmbeddingStore,
    pub optimizer: OptimizerState,
}

impl Shard {
    fn offset(&self, m: Matrix) -> usize {
        match m {
            Matrix::Entity => self.entity_rows.start,
            Matrix::Relation => self.relation_rows.start,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShardedStore {
    pub layout: ShardLayout,
    pub dim: usize,
    pub shards: Vec<Shard>,
}

fn slice_store(store: &EmbeddingStore, entities: &Range<usize>, relations: &Range<usize>) -> EmbeddingStore {
    let d = store.dim;
    EmbeddingStore {
        dim: d,
        entities: store.entities[entities.start * d..entities.end * d].to_vec(),
        relations: store.relations[relations.start * d..relations.end * d].to_vec(),
    }
}

fn concat_stores<'a>(dim: usize, parts: impl Iterator<Item = &'a EmbeddingStore> + Clone) -> EmbeddingStore {
    EmbeddingStore {
        dim,
        entities: parts.clone().flat_map(|s| s.entities.iter().copied()).collect(),
        relations: parts.flat_map(|s| s.relations.iter().copied()).collect(),
    }
}

/// Partitions `store` into `n_shards` row ranges, with no optimizer moments.
pub fn shard_parameters(store: &EmbeddingStore, n_shards: usize) -> Result<ShardedStore, TrainError> {
    let state = OptimizerState { step: 0, moments: None };
    ShardedStore::from_parts(store, &state, n_shards)
}

impl ShardedStore {
    pub fn from_parts(store: &EmbeddingStore, optimizer: &OptimizerState, n_shards: usize) -> Result<Self, TrainError> {
        let layout = ShardLayout::new(store.rows(Matrix::Entity), store.rows(Matrix::Relation), n_shards)?;
        let shards = (0..n_shards)
            .map(|s| {
                let (er, rr) = (layout.entity_range(s), layout.relation_range(s));
                let moments = optimizer.moments.as_ref().map(|m| Moments {
                    first: slice_store(&m.first, &er, &rr),
                    second: slice_store(&m.second, &er, &rr),
                });
                Shard {
                    store: slice_store(store, &er, &rr),
                    optimizer: OptimizerState { step: optimizer.step, moments },
                    entity_rows: er,
                    relation_rows: rr,
                }
            })
            .collect();
        Ok(Self { layout, dim: store.dim, shards })
    }

    /// Re-assembles the full store and optimizer state.
    pub fn gather(&self) -> (EmbeddingStore, OptimizerState) {
        let store = concat_stores(self.dim, self.shards.iter().map(|s| &s.store));
        let moments = if self.shards.iter().all(|s| s.optimizer.moments.is_some()) {
            let m = || self.shards.iter().map(|s| s.optimizer.moments.as_ref().unwrap());
            Some(Moments {
                first: concat_stores(self.dim, m().map(|m| &m.first)),
                second: concat_stores(self.dim, m().map(|m| &m.second)),
            })
        } else {
            None
        };
        let step = self.shards[0].optimizer.step;
        (store, OptimizerState { step, moments })
    }

    pub fn n_shards(&self) -> usize {
        self.shards.len()
    }

    /// The row as held by its owner.
    pub fn fetch(&self, m: Matrix, row: usize) -> &[f32] {
        let shard = &self.shards[self.layout.owner(m, row)];
        shard.store.row(m, row - shard.offset(m))
    }

    /// Routes each gradient row to its owner and applies the step on every shard in
    /// parallel. Every shard steps, so step counters stay equal.
    pub fn apply(&mut self, grads: &SparseGrads, config: &OptimizerConfig) -> Result<(), TrainError> {
        let mut routed: Vec<SparseGrads> = vec![SparseGrads::default(); self.shards.len()];
        for m in [Matrix::Entity, Matrix::Relation] {
            for (&row, g) in grads.rows(m) {
                let count = match m {
                    Matrix::Entity => self.layout.entity_count,
                    Matrix::Relation => self.layout.relation_count,
                };
                if row >= count {
                    return Err(TrainError::GradientShape { matrix: m, row });
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(TrainError::NonFiniteGradient { matrix: m, row });
                }
                let owner = self.layout.owner(m, row);
                let local = row - self.shards[owner].offset(m);
                routed[owner].insert(m, local, g.clone());
            }
        }
        self.shards
            .par_iter_mut()
            .zip(routed.par_iter())
            .try_for_each(|(shard, g)| apply_gradients(&mut shard.store, &mut shard.optimizer, g, config))
    }
}

impl RowSource for ShardedStore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn entity_count(&self) -> usize {
        self.layout.entity_count
    }

    fn relation_count(&self) -> usize {
        self.layout.relation_count
    }

    fn entity(&self, index: usize) -> &[f32] {
        self.fetch(Matrix::Entity, index)
    }

    fn relation(&self, index: usize) -> &[f32] {
        self.fetch(Matrix::Relation, index)
    }
}

/// All-tails scoring where each shard scores only the entity rows it owns. The
/// head and relation rows are fetched from their owners; results are concatenated
/// in shard order.
pub fn sharded_kvsall(spec: &ModelSpec, sharded: &ShardedStore, head: usize, relation: usize) -> Result<Vec<f64>, ModelError> {
    sharded.check_entity(head)?;
    sharded.check_relation(relation)?;
    let model = spec.model();
    let h = sharded.fetch(Matrix::Entity, head);
    let r = sharded.fetch(Matrix::Relation, relation);
    let parts: Vec<Vec<f64>> = sharded
        .shards
        .par_iter()
        .map(|shard| {
            let q = model.query(h, r);
            (0..shard.entity_rows.len())
                .map(|local| model.tail_dot(&q, shard.store.row(Matrix::Entity, local)))
                .collect()
        })
        .collect();
    Ok(parts.concat())
}
