//! Mini-batch training.
//!
//! Two regimes are supported:
//!
//! - **KvsAll** (default): every distinct `(head, relation)` pair in the data is one
//!   query, scored against all entities; its multi-hot tail vector is the target.
//! - **Negative sampling**: every observed triple is paired with `k` corruptions.
//!
//! Both minimise binary cross-entropy on smoothed labels. Gradients are computed
//! per query in parallel over a read-only parameter view, reduced in query order,
//! and applied sparsely by the owning shard. Given the same dataset, config and
//! seed, every parameter value at every step is reproducible regardless of thread
//! or shard count.

pub mod loss;
pub mod optim;
pub mod shard;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{init_embeddings, EmbeddingStore, Matrix, ModelError, ModelSpec, RowSource};
use crate::progress::{BatchRecord, ProgressSink};
use crate::rng::CounterRng;
use crate::vocab::Triple;

pub use loss::{bce_loss, sigmoid, smooth_labels};
pub use optim::{apply_gradients, Moments, OptimizerConfig, OptimizerState, SparseGrads};
pub use shard::{shard_parameters, sharded_kvsall, ShardLayout, ShardedStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("non-finite gradient for {matrix:?} row {row}")]
    NonFiniteGradient { matrix: Matrix, row: usize },
    #[error("gradient for {matrix:?} row {row} does not match the store")]
    GradientShape { matrix: Matrix, row: usize },
    #[error("invalid shard count {n_shards} for {entity_count} entities")]
    InvalidShardCount { n_shards: usize, entity_count: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training data is empty")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LossKind {
    KvsAll,
    NegSample { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub loss: LossKind,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: u32,
    pub seed: u64,
    pub label_smoothing: f64,
    pub shards: usize,
}

impl TrainConfig {
    /// KvsAll with Adam and label smoothing 0.1.
    pub fn new(model: ModelSpec) -> Self {
        Self {
            model,
            loss: LossKind::KvsAll,
            optimizer: OptimizerConfig::adam(0.01),
            batch_size: 1024,
            epochs: 100,
            seed: 0,
            label_smoothing: 0.1,
            shards: 1,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.model().check_dim(self.model.dim)?;
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(TrainError::InvalidConfig("label_smoothing must be in [0, 0.5)".into()));
        }
        if let LossKind::NegSample { k: 0 } = self.loss {
            return Err(TrainError::InvalidConfig("negative sampling needs k >= 1".into()));
        }
        if self.shards == 0 {
            return Err(TrainError::InvalidConfig("shards must be at least 1".into()));
        }
        Ok(())
    }
}

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const NEGATIVE_STREAM: u64 = 0x4E45_4753;

/// `k` corruptions of `triple`: each replaces the head or the tail (fair coin) with
/// a uniformly drawn entity. Corruptions equal to the original are kept.
pub fn negative_sample<R: Rng + ?Sized>(triple: Triple, k: usize, entity_count: usize, rng: &mut R) -> Vec<Triple> {
    (0..k)
        .map(|_| {
            let replace_head = rng.random::<bool>();
            let e = rng.random_range(0..entity_count);
            if replace_head {
                Triple { head: e, ..triple }
            } else {
                Triple { tail: e, ..triple }
            }
        })
        .collect()
}

/// Everything that evolves during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ShardedStore,
    /// Stream for negative sampling; shuffles are keyed by `(seed, epoch)` instead.
    pub rng: CounterRng,
    pub completed_epochs: u32,
}

impl TrainState {
    pub fn new(config: &TrainConfig, entity_count: usize, relation_count: usize) -> Result<Self, TrainError> {
        config.validate()?;
        let store = init_embeddings(config.model, entity_count, relation_count, config.seed)?;
        let optimizer = OptimizerState::new(&config.optimizer, &store);
        Self::from_parts(&store, &optimizer, CounterRng::keyed(&[config.seed, NEGATIVE_STREAM]), 0, config.shards)
    }

    pub fn from_parts(
        store: &EmbeddingStore,
        optimizer: &OptimizerState,
        rng: CounterRng,
        completed_epochs: u32,
        shards: usize,
    ) -> Result<Self, TrainError> {
        Ok(Self {
            params: ShardedStore::from_parts(store, optimizer, shards)?,
            rng,
            completed_epochs,
        })
    }

    pub fn snapshot(&self) -> (EmbeddingStore, OptimizerState) {
        self.params.gather()
    }
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn check_dataset(triples: &[Triple], rows: &dyn RowSource) -> Result<(), TrainError> {
    if triples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for t in triples {
        rows.check_entity(t.head)?;
        rows.check_relation(t.relation)?;
        rows.check_entity(t.tail)?;
    }
    Ok(())
}

/// Distinct `(head, relation)` queries with their sorted tail sets.
pub fn kvsall_queries(triples: &[Triple]) -> Vec<((usize, usize), Vec<usize>)> {
    let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for t in triples {
        map.entry((t.head, t.relation)).or_default().push(t.tail);
    }
    map.into_iter()
        .map(|(k, mut v)| {
            v.sort_unstable();
            v.dedup();
            (k, v)
        })
        .collect()
}

struct QueryGrad {
    loss_sum: f64,
    head: usize,
    relation: usize,
    d_head: Vec<f64>,
    d_rel: Vec<f64>,
    /// dL/dlogit for every entity.
    logit_grads: Vec<f64>,
    /// d score / d tail, the same for every tail under a trilinear model.
    d_tail: Vec<f64>,
}

fn kvsall_query_grad(
    config: &TrainConfig,
    rows: &dyn RowSource,
    (head, relation): (usize, usize),
    tails: &[usize],
    normalizer: f64,
) -> Result<QueryGrad, TrainError> {
    let model = config.model.model();
    let n = rows.entity_count();
    let h = rows.entity(head);
    let r = rows.relation(relation);
    let q = model.query(h, r);
    let mut labels = vec![0.0; n];
    for &t in tails {
        labels[t] = 1.0;
    }
    let mut loss_sum = 0.0;
    let mut logit_grads = Vec::with_capacity(n);
    for (e, y) in labels.iter().enumerate() {
        let x = model.tail_dot(&q, rows.entity(e));
        let y = loss::smooth_label(*y, config.label_smoothing, n);
        loss_sum += loss::bce_term(x, y);
        logit_grads.push((sigmoid(x) - y) / normalizer);
    }
    // The score is linear in the tail, so the head and relation gradients summed over
    // all tails equal the gradient at the weighted tail sum.
    let mut tail_mix = vec![0.0f64; rows.dim()];
    for (e, &g) in logit_grads.iter().enumerate() {
        if g != 0.0 {
            for (acc, &x) in tail_mix.iter_mut().zip(rows.entity(e)) {
                *acc += g * x as f64;
            }
        }
    }
    let (hf, rf) = (to_f64(h), to_f64(r));
    let mixed = model.gradient(&hf, &rf, &tail_mix);
    let unit = model.gradient(&hf, &rf, &vec![0.0; rows.dim()]);
    Ok(QueryGrad {
        loss_sum,
        head,
        relation,
        d_head: mixed.d_head,
        d_rel: mixed.d_rel,
        logit_grads,
        d_tail: unit.d_tail,
    })
}

fn kvsall_batch(
    config: &TrainConfig,
    rows: &dyn RowSource,
    batch: &[&((usize, usize), Vec<usize>)],
) -> Result<(f64, SparseGrads), TrainError> {
    let normalizer = (batch.len() * rows.entity_count()) as f64;
    let parts = batch
        .par_iter()
        .map(|(key, tails)| kvsall_query_grad(config, rows, *key, tails, normalizer))
        .collect::<Result<Vec<_>, _>>()?;
    let mut grads = SparseGrads::default();
    let mut loss_sum = 0.0;
    for p in &parts {
        loss_sum += p.loss_sum;
        grads.add(Matrix::Entity, p.head, &p.d_head, 1.0);
        grads.add(Matrix::Relation, p.relation, &p.d_rel, 1.0);
        for (e, &g) in p.logit_grads.iter().enumerate() {
            grads.add(Matrix::Entity, e, &p.d_tail, g);
        }
    }
    Ok((loss_sum / normalizer, grads))
}

/// Loss and gradients of a single batch holding every KvsAll query of `triples`.
pub fn kvsall_objective(config: &TrainConfig, rows: &dyn RowSource, triples: &[Triple]) -> Result<(f64, SparseGrads), TrainError> {
    check_dataset(triples, rows)?;
    let queries = kvsall_queries(triples);
    let batch: Vec<_> = queries.iter().collect();
    kvsall_batch(config, rows, &batch)
}

fn negsample_batch(
    config: &TrainConfig,
    rows: &dyn RowSource,
    batch: &[Triple],
    k: usize,
    rng: &mut CounterRng,
) -> Result<(f64, SparseGrads), TrainError> {
    let model = config.model.model();
    let n = rows.entity_count();
    let groups: Vec<Vec<Triple>> = batch
        .iter()
        .map(|&t| {
            let mut g = vec![t];
            g.extend(negative_sample(t, k, n, rng));
            g
        })
        .collect();
    let normalizer = (batch.len() * (k + 1)) as f64;
    let width = k + 1;
    let parts: Vec<Vec<(Triple, f64, f64, crate::models::ScoreGradient)>> = groups
        .par_iter()
        .map(|group| {
            group
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    let (h, r, tl) = (rows.entity(t.head), rows.relation(t.relation), rows.entity(t.tail));
                    let x = model.score(h, r, tl);
                    let y = loss::smooth_label(if i == 0 { 1.0 } else { 0.0 }, config.label_smoothing, width);
                    let g = (sigmoid(x) - y) / normalizer;
                    (t, loss::bce_term(x, y), g, model.gradient(&to_f64(h), &to_f64(r), &to_f64(tl)))
                })
                .collect()
        })
        .collect();
    let mut grads = SparseGrads::default();
    let mut loss_sum = 0.0;
    for (t, l, g, sg) in parts.iter().flatten() {
        loss_sum += l;
        grads.add(Matrix::Entity, t.head, &sg.d_head, *g);
        grads.add(Matrix::Relation, t.relation, &sg.d_rel, *g);
        grads.add(Matrix::Entity, t.tail, &sg.d_tail, *g);
    }
    Ok((loss_sum / normalizer, grads))
}

/// One pass over shuffled batches. Returns the mean batch loss and emits one
/// progress record per batch.
pub fn train_epoch(
    triples: &[Triple],
    state: &mut TrainState,
    config: &TrainConfig,
    sink: &mut dyn ProgressSink,
) -> Result<f64, TrainError> {
    config.validate()?;
    check_dataset(triples, &state.params)?;
    let epoch = state.completed_epochs + 1;
    let mut shuffle_rng = CounterRng::keyed(&[config.seed, SHUFFLE_STREAM, epoch as u64]);
    let mut batch_losses = Vec::new();
    match config.loss {
        LossKind::KvsAll => {
            let queries = kvsall_queries(triples);
            let mut order: Vec<&((usize, usize), Vec<usize>)> = queries.iter().collect();
            order.shuffle(&mut shuffle_rng);
            for (b, batch) in order.chunks(config.batch_size).enumerate() {
                let started = Instant::now();
                let (loss, grads) = kvsall_batch(config, &state.params, batch)?;
                state.params.apply(&grads, &config.optimizer)?;
                let positives: usize = batch.iter().map(|(_, t)| t.len()).sum();
                emit(sink, epoch, b, loss, positives, started);
                batch_losses.push(loss);
            }
        }
        LossKind::NegSample { k } => {
            let mut order = triples.to_vec();
            order.shuffle(&mut shuffle_rng);
            for (b, batch) in order.chunks(config.batch_size).enumerate() {
                let started = Instant::now();
                let (loss, grads) = negsample_batch(config, &state.params, batch, k, &mut state.rng)?;
                state.params.apply(&grads, &config.optimizer)?;
                emit(sink, epoch, b, loss, batch.len(), started);
                batch_losses.push(loss);
            }
        }
    }
    state.completed_epochs = epoch;
    Ok(batch_losses.iter().sum::<f64>() / batch_losses.len() as f64)
}

fn emit(sink: &mut dyn ProgressSink, epoch: u32, batch: usize, loss: f64, triples: usize, started: Instant) {
    let secs = started.elapsed().as_secs_f64();
    sink.batch(&BatchRecord {
        epoch,
        batch: batch as u32,
        loss,
        tps: if secs > 0.0 { triples as f64 / secs } else { 0.0 },
    });
}

/// Runs epochs until `config.epochs` have completed; returns each epoch's loss.
pub fn train(
    triples: &[Triple],
    state: &mut TrainState,
    config: &TrainConfig,
    sink: &mut dyn ProgressSink,
) -> Result<Vec<f64>, TrainError> {
    train_for(triples, state, config, config.epochs.saturating_sub(state.completed_epochs), sink)
}

/// Runs exactly `epochs` more epochs.
pub fn train_for(
    triples: &[Triple],
    state: &mut TrainState,
    config: &TrainConfig,
    epochs: u32,
    sink: &mut dyn ProgressSink,
) -> Result<Vec<f64>, TrainError> {
    (0..epochs).map(|_| train_epoch(triples, state, config, sink)).collect()
}
