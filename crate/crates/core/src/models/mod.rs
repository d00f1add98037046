//! Scoring models and the parameter store.
//!
//! # Model contract
//!
//! A model implements [`KgeModel`] by supplying
//!
//! - a kind name and a dimension constraint ([`KgeModel::dim_multiple`]),
//! - a tail-side query `q(h, r)` and a reduction `tail_dot(q, t)`, which together
//!   define the score `phi(h, r, t) = tail_dot(q(h, r), t)`,
//! - analytic partial derivatives ([`KgeModel::gradient`]).
//!
//! Scoring every tail at once ([`KgeModel::score_tails`]) is derived from the
//! query: the query is built once and reduced against each entity row. Pointwise
//! and all-tails scoring therefore perform the same floating-point operations in
//! the same order and agree bit for bit.
//!
//! Parameters are stored as `f32`; every reduction accumulates in `f64`
//! left to right.

pub mod complex;
pub mod distmult;
pub mod qmult;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{hash_words, unit_f64};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("dimension {dim} is invalid for {model}: must be a positive multiple of {multiple}")]
    Dimension { model: &'static str, dim: usize, multiple: usize },
    #[error("vector lengths differ: {0:?}")]
    LengthMismatch([usize; 3]),
    #[error("{kind} index {index} out of range ({count} rows)")]
    IndexOutOfRange { kind: &'static str, index: usize, count: usize },
    #[error("store needs at least one entity and one relation")]
    EmptyStore,
}

/// Scalar types the scoring kernels accept. Accumulation is always `f64`.
pub trait Real: Copy + Into<f64> + Send + Sync {}
impl Real for f32 {}
impl Real for f64 {}

pub(crate) fn check_lengths<T>(h: &[T], r: &[T], t: &[T], multiple: usize) -> Result<(), ModelError> {
    if h.len() != r.len() || h.len() != t.len() {
        return Err(ModelError::LengthMismatch([h.len(), r.len(), t.len()]));
    }
    if !h.len().is_multiple_of(multiple) {
        return Err(ModelError::Dimension {
            model: match multiple {
                2 => "complex",
                4 => "qmult",
                _ => "distmult",
            },
            dim: h.len(),
            multiple,
        });
    }
    Ok(())
}

/// Trilinear product. Errors only on length mismatch.
pub fn score_distmult<T: Real>(h: &[T], r: &[T], t: &[T]) -> Result<f64, ModelError> {
    distmult::score(h, r, t)
}

/// Four-term Hermitian score. The dimension must be even.
pub fn score_complex<T: Real>(h: &[T], r: &[T], t: &[T]) -> Result<f64, ModelError> {
    complex::score(h, r, t)
}

/// Hamilton-product score. The dimension must be a multiple of four.
pub fn score_qmult<T: Real>(h: &[T], r: &[T], t: &[T]) -> Result<f64, ModelError> {
    qmult::score(h, r, t)
}

/// Partial derivatives of a score with respect to each of its three embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGradient {
    pub d_head: Vec<f64>,
    pub d_rel: Vec<f64>,
    pub d_tail: Vec<f64>,
}

impl ScoreGradient {
    pub fn zeros(d: usize) -> Self {
        Self {
            d_head: vec![0.0; d],
            d_rel: vec![0.0; d],
            d_tail: vec![0.0; d],
        }
    }
}

/// Read access to embedding rows, implemented by the flat store and the sharded one.
pub trait RowSource: Sync {
    fn dim(&self) -> usize;
    fn entity_count(&self) -> usize;
    fn relation_count(&self) -> usize;
    /// Panics when out of range; use [`RowSource::check_entity`] first.
    fn entity(&self, index: usize) -> &[f32];
    fn relation(&self, index: usize) -> &[f32];

    fn check_entity(&self, index: usize) -> Result<(), ModelError> {
        if index < self.entity_count() {
            Ok(())
        } else {
            Err(ModelError::IndexOutOfRange { kind: "entity", index, count: self.entity_count() })
        }
    }

    fn check_relation(&self, index: usize) -> Result<(), ModelError> {
        if index < self.relation_count() {
            Ok(())
        } else {
            Err(ModelError::IndexOutOfRange { kind: "relation", index, count: self.relation_count() })
        }
    }
}

pub trait KgeModel: Send + Sync {
    fn name(&self) -> &'static str;

    /// The embedding dimension must be a positive multiple of this.
    fn dim_multiple(&self) -> usize;

    fn query(&self, h: &[f32], r: &[f32]) -> Vec<f64>;

    fn tail_dot(&self, query: &[f64], t: &[f32]) -> f64;

    fn gradient(&self, h: &[f64], r: &[f64], t: &[f64]) -> ScoreGradient;

    fn check_dim(&self, dim: usize) -> Result<(), ModelError> {
        let multiple = self.dim_multiple();
        if dim == 0 || !dim.is_multiple_of(multiple) {
            return Err(ModelError::Dimension { model: self.name(), dim, multiple });
        }
        Ok(())
    }

    fn score(&self, h: &[f32], r: &[f32], t: &[f32]) -> f64 {
        self.tail_dot(&self.query(h, r), t)
    }

    fn score_triple(&self, rows: &dyn RowSource, head: usize, relation: usize, tail: usize) -> Result<f64, ModelError> {
        rows.check_entity(head)?;
        rows.check_relation(relation)?;
        rows.check_entity(tail)?;
        Ok(self.score(rows.entity(head), rows.relation(relation), rows.entity(tail)))
    }

    /// Scores `(head, relation, e)` for every entity `e`, in entity order.
    fn score_tails(&self, rows: &dyn RowSource, head: usize, relation: usize) -> Result<Vec<f64>, ModelError> {
        rows.check_entity(head)?;
        rows.check_relation(relation)?;
        let q = self.query(rows.entity(head), rows.relation(relation));
        Ok((0..rows.entity_count())
            .into_par_iter()
            .map(|e| self.tail_dot(&q, rows.entity(e)))
            .collect())
    }

    /// Scores `(e, relation, tail)` for every entity `e`.
    fn score_heads(&self, rows: &dyn RowSource, relation: usize, tail: usize) -> Result<Vec<f64>, ModelError> {
        rows.check_relation(relation)?;
        rows.check_entity(tail)?;
        let (r, t) = (rows.relation(relation), rows.entity(tail));
        Ok((0..rows.entity_count())
            .into_par_iter()
            .map(|e| self.score(rows.entity(e), r, t))
            .collect())
    }

    /// Scores `(head, rel, tail)` for every relation `rel`.
    fn score_relations(&self, rows: &dyn RowSource, head: usize, tail: usize) -> Result<Vec<f64>, ModelError> {
        rows.check_entity(head)?;
        rows.check_entity(tail)?;
        let (h, t) = (rows.entity(head), rows.entity(tail));
        Ok((0..rows.relation_count())
            .map(|r| self.score(h, rows.relation(r), t))
            .collect())
    }
}

macro_rules! builtin_model {
    ($ty:ident, $module:ident, $name:literal, $multiple:literal) => {
        #[derive(Debug, Clone, Copy, Default)]
        pub struct $ty;

        impl KgeModel for $ty {
            fn name(&self) -> &'static str {
                $name
            }

            fn dim_multiple(&self) -> usize {
                $multiple
            }

            fn query(&self, h: &[f32], r: &[f32]) -> Vec<f64> {
                $module::query(h, r)
            }

            fn tail_dot(&self, query: &[f64], t: &[f32]) -> f64 {
                $module::tail_dot(query, t)
            }

            fn gradient(&self, h: &[f64], r: &[f64], t: &[f64]) -> ScoreGradient {
                $module::gradient(h, r, t)
            }
        }
    };
}

builtin_model!(DistMult, distmult, "distmult", 1);
builtin_model!(ComplEx, complex, "complex", 2);
builtin_model!(QMult, qmult, "qmult", 4);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    DistMult,
    ComplEx,
    QMult,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::DistMult, ModelKind::ComplEx, ModelKind::QMult];

    pub fn model(self) -> &'static dyn KgeModel {
        match self {
            ModelKind::DistMult => &DistMult,
            ModelKind::ComplEx => &ComplEx,
            ModelKind::QMult => &QMult,
        }
    }

    pub fn name(self) -> &'static str {
        self.model().name()
    }

    /// Checked pointwise score for any scalar type.
    pub fn score<T: Real>(self, h: &[T], r: &[T], t: &[T]) -> Result<f64, ModelError> {
        match self {
            ModelKind::DistMult => distmult::score(h, r, t),
            ModelKind::ComplEx => complex::score(h, r, t),
            ModelKind::QMult => qmult::score(h, r, t),
        }
    }

    /// Checked analytic gradient for any scalar type.
    pub fn gradient<T: Real>(self, h: &[T], r: &[T], t: &[T]) -> Result<ScoreGradient, ModelError> {
        check_lengths(h, r, t, self.model().dim_multiple())?;
        Ok(match self {
            ModelKind::DistMult => distmult::gradient(h, r, t),
            ModelKind::ComplEx => complex::gradient(h, r, t),
            ModelKind::QMult => qmult::gradient(h, r, t),
        })
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "distmult" => Ok(ModelKind::DistMult),
            "complex" => Ok(ModelKind::ComplEx),
            "qmult" => Ok(ModelKind::QMult),
            other => Err(format!("unknown model '{other}' (expected distmult, complex or qmult)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dim: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, dim: usize) -> Result<Self, ModelError> {
        kind.model().check_dim(dim)?;
        Ok(Self { kind, dim })
    }

    pub fn model(&self) -> &'static dyn KgeModel {
        self.kind.model()
    }
}

/// Entity matrix `|E| x d` and relation matrix `|R| x d`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub dim: usize,
    pub entities: Vec<f32>,
    pub relations: Vec<f32>,
}

/// Which parameter matrix a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Matrix {
    Entity = 0,
    Relation = 1,
}

/// Initial value of one parameter: uniform on `[-1/sqrt(d), 1/sqrt(d)]`, a pure
/// function of `(seed, matrix, row, col)`.
pub fn init_value(seed: u64, matrix: Matrix, row: usize, col: usize, dim: usize) -> f32 {
    let u = unit_f64(hash_words(&[seed, matrix as u64, row as u64, col as u64]));
    let bound = 1.0 / (dim as f64).sqrt();
    (bound * (2.0 * u - 1.0)) as f32
}

pub fn init_row(seed: u64, matrix: Matrix, row: usize, dim: usize) -> impl Iterator<Item = f32> {
    (0..dim).map(move |col| init_value(seed, matrix, row, col, dim))
}

pub fn init_embeddings(
    spec: ModelSpec,
    entity_count: usize,
    relation_count: usize,
    seed: u64,
) -> Result<EmbeddingStore, ModelError> {
    spec.model().check_dim(spec.dim)?;
    if entity_count == 0 || relation_count == 0 {
        return Err(ModelError::EmptyStore);
    }
    let d = spec.dim;
    let matrix = |m: Matrix, rows: usize| -> Vec<f32> {
        (0..rows).into_par_iter().flat_map_iter(|row| init_row(seed, m, row, d)).collect()
    };
    Ok(EmbeddingStore {
        dim: d,
        entities: matrix(Matrix::Entity, entity_count),
        relations: matrix(Matrix::Relation, relation_count),
    })
}

impl EmbeddingStore {
    pub fn zeros(dim: usize, entity_count: usize, relation_count: usize) -> Self {
        Self {
            dim,
            entities: vec![0.0; dim * entity_count],
            relations: vec![0.0; dim * relation_count],
        }
    }

    pub fn matrix(&self, m: Matrix) -> &[f32] {
        match m {
            Matrix::Entity => &self.entities,
            Matrix::Relation => &self.relations,
        }
    }

    pub fn matrix_mut(&mut self, m: Matrix) -> &mut Vec<f32> {
        match m {
            Matrix::Entity => &mut self.entities,
            Matrix::Relation => &mut self.relations,
        }
    }

    pub fn row(&self, m: Matrix, index: usize) -> &[f32] {
        &self.matrix(m)[index * self.dim..(index + 1) * self.dim]
    }

    pub fn row_mut(&mut self, m: Matrix, index: usize) -> &mut [f32] {
        let d = self.dim;
        &mut self.matrix_mut(m)[index * d..(index + 1) * d]
    }

    pub fn rows(&self, m: Matrix) -> usize {
        self.matrix(m).len() / self.dim.max(1)
    }

    pub fn parameter_count(&self) -> usize {
        self.entities.len() + self.relations.len()
    }

    pub fn all_finite(&self) -> bool {
        self.entities.iter().chain(&self.relations).all(|v| v.is_finite())
    }

    /// CRC-32 over the little-endian bytes of both matrices.
    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for v in self.entities.iter().chain(&self.relations) {
            h.update(&v.to_le_bytes());
        }
        h.finalize()
    }
}

impl RowSource for EmbeddingStore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn entity_count(&self) -> usize {
        self.rows(Matrix::Entity)
    }

    fn relation_count(&self) -> usize {
        self.rows(Matrix::Relation)
    }

    fn entity(&self, index: usize) -> &[f32] {
        self.row(Matrix::Entity, index)
    }

    fn relation(&self, index: usize) -> &[f32] {
        self.row(Matrix::Relation, index)
    }
}

/// All-tails scoring for a `(head, relation)` query: one query build, one reduction
/// per entity row.
pub fn score_kvsall(spec: &ModelSpec, rows: &dyn RowSource, head: usize, relation: usize) -> Result<Vec<f64>, ModelError> {
    spec.model().score_tails(rows, head, relation)
}
