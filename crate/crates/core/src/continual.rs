//! Checkpoints and vocabulary extension for graphs that change over time.
//!
//! A checkpoint is one self-describing file. Resuming from it continues training
//! exactly where it stopped: parameters, optimizer moments, step counter, epoch
//! counter and the sampling RNG are all restored, so `k` epochs, save, load and
//! `n - k` more epochs give the same bytes as `n` epochs in one go.
//!
//! Extension appends unseen entities and relations after the existing indices and
//! initializes only their rows. Old rows and scores of old triples are unchanged.
//! Nothing here protects old knowledge from being overwritten by later training;
//! continuation is purely mechanical.
//!
//! # File layout
//!
//! All integers little-endian.
//!
//! ```text
//! "KGECKPT1"                       8 bytes
//! version                          u32 (= 1)
//! config block                     u32 length + JSON {config, completed_epochs, optimizer_step, moments}
//! entity table                     u64 count, then per symbol u32 length + bytes
//! relation table                   u64 count, then per symbol u32 length + bytes
//! entity matrix                    |E| * d f32, row-major
//! relation matrix                  |R| * d f32, row-major
//! adam moments (if moments=true)   first E, first R, second E, second R, as above
//! rng state                        16 bytes (u64 key, u64 counter)
//! crc32                            u32 over every preceding byte
//! ```

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::RawTriple;
use crate::models::{init_row, EmbeddingStore, Matrix};
use crate::rng::CounterRng;
use crate::train::{Moments, OptimizerState, TrainConfig, TrainError, TrainState};
use crate::vocab::{read_table, write_table, IndexedDataset, SymbolTable, VocabError, Vocabulary};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"KGECKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionUnsupported(u32),
    #[error("checkpoint file is truncated")]
    TruncatedFile,
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub store: EmbeddingStore,
    pub optimizer: OptimizerState,
    pub completed_epochs: u32,
    pub rng: CounterRng,
}

#[derive(Serialize, Deserialize)]
struct ConfigBlock {
    config: TrainConfig,
    completed_epochs: u32,
    optimizer_step: u64,
    moments: bool,
}

impl Checkpoint {
    pub fn from_state(config: &TrainConfig, vocab: &Vocabulary, state: &TrainState) -> Self {
        let (store, optimizer) = state.snapshot();
        Self {
            config: config.clone(),
            vocab: vocab.clone(),
            store,
            optimizer,
            completed_epochs: state.completed_epochs,
            rng: state.rng,
        }
    }

    /// Training state for resuming, split into `config.shards` shards.
    pub fn train_state(&self) -> Result<TrainState, TrainError> {
        TrainState::from_parts(&self.store, &self.optimizer, self.rng, self.completed_epochs, self.config.shards)
    }

    pub fn validate(&self) -> Result<(), CheckpointError> {
        let d = self.config.model.dim;
        let bad = |m: &str| Err(CheckpointError::Format(m.to_string()));
        self.config
            .validate()
            .map_err(|e| CheckpointError::Format(e.to_string()))?;
        if self.store.dim != d {
            return bad("store dimension differs from config");
        }
        let shape_ok = |s: &EmbeddingStore| {
            s.dim == d
                && s.entities.len() == self.vocab.entity_count() * d
                && s.relations.len() == self.vocab.relation_count() * d
        };
        if !shape_ok(&self.store) {
            return bad("parameter shape differs from vocabulary");
        }
        if let Some(m) = &self.optimizer.moments {
            if !shape_ok(&m.first) || !shape_ok(&m.second) {
                return bad("optimizer shape differs from vocabulary");
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let block = ConfigBlock {
            config: self.config.clone(),
            completed_epochs: self.completed_epochs,
            optimizer_step: self.optimizer.step,
            moments: self.optimizer.moments.is_some(),
        };
        let json = serde_json::to_vec(&block).expect("config serializes");
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for table in [&self.vocab.entities, &self.vocab.relations] {
            out.extend_from_slice(&(table.len() as u64).to_le_bytes());
            write_table(&mut out, table).expect("writing to a Vec cannot fail");
        }
        let mut put = |values: &[f32]| {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        put(&self.store.entities);
        put(&self.store.relations);
        if let Some(m) = &self.optimizer.moments {
            put(&m.first.entities);
            put(&m.first.relations);
            put(&m.second.entities);
            put(&m.second.relations);
        }
        out.extend_from_slice(&self.rng.to_bytes());
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < CHECKPOINT_MAGIC.len() {
            return Err(CheckpointError::TruncatedFile);
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < 12 + 4 {
            return Err(CheckpointError::TruncatedFile);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionUnsupported(version));
        }
        let (payload, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        let computed = crc32fast::hash(payload);
        if stored != computed {
            // A structurally short file is reported as truncated rather than corrupt.
            return Err(match parse_payload(&bytes[12..]) {
                Err(CheckpointError::TruncatedFile) => CheckpointError::TruncatedFile,
                _ => CheckpointError::ChecksumMismatch { stored, computed },
            });
        }
        let (ckpt, rest) = parse_payload(&bytes[12..])?;
        if rest != 0 {
            return Err(CheckpointError::Format(format!("{rest} unexpected trailing bytes")));
        }
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Writes the checkpoint and returns the number of bytes written.
    pub fn save<W: Write>(&self, mut sink: W) -> Result<usize, CheckpointError> {
        let bytes = self.to_bytes();
        sink.write_all(&bytes)?;
        sink.flush()?;
        Ok(bytes.len())
    }

    pub fn save_to_path(&self, path: &Path) -> Result<usize, CheckpointError> {
        self.save(BufWriter::new(File::create(path)?))
    }

    pub fn load<R: io::Read>(mut source: R) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn load_from_path(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn save_checkpoint<W: Write>(ckpt: &Checkpoint, sink: W) -> Result<usize, CheckpointError> {
    ckpt.save(sink)
}

pub fn load_checkpoint<R: io::Read>(source: R) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::load(source)
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() < n {
            return Err(CheckpointError::TruncatedFile);
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn table(&mut self) -> Result<SymbolTable, CheckpointError> {
        let count = self.u64()? as usize;
        let mut reader = self.bytes;
        let table = read_table(&mut reader, count).map_err(|_| CheckpointError::TruncatedFile)?;
        if table.len() != count {
            return Err(CheckpointError::Format("duplicate symbols in table".into()));
        }
        self.bytes = reader;
        Ok(table)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>, CheckpointError> {
        let len = n.checked_mul(4).ok_or(CheckpointError::TruncatedFile)?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    fn store(&mut self, dim: usize, vocab: &Vocabulary) -> Result<EmbeddingStore, CheckpointError> {
        let entities = self.floats(vocab.entity_count() * dim)?;
        let relations = self.floats(vocab.relation_count() * dim)?;
        Ok(EmbeddingStore { dim, entities, relations })
    }
}

/// Parses everything after magic and version, including the CRC slot.
/// Returns the checkpoint and the number of bytes left after the trailer.
fn parse_payload(bytes: &[u8]) -> Result<(Checkpoint, usize), CheckpointError> {
    let mut cur = Cursor { bytes };
    let len = cur.u32()? as usize;
    let block: ConfigBlock = serde_json::from_slice(cur.take(len)?)
        .map_err(|e| CheckpointError::Format(format!("config block: {e}")))?;
    let entities = cur.table()?;
    let relations = cur.table()?;
    let vocab = Vocabulary { entities, relations };
    let dim = block.config.model.dim;
    let store = cur.store(dim, &vocab)?;
    let moments = if block.moments {
        Some(Moments {
            first: cur.store(dim, &vocab)?,
            second: cur.store(dim, &vocab)?,
        })
    } else {
        None
    };
    let rng = CounterRng::from_bytes(cur.take(16)?.try_into().unwrap());
    cur.take(4)?;
    let ckpt = Checkpoint {
        config: block.config,
        vocab,
        store,
        optimizer: OptimizerState { step: block.optimizer_step, moments },
        completed_epochs: block.completed_epochs,
        rng,
    };
    Ok((ckpt, cur.bytes.len()))
}

fn grow(store: &mut EmbeddingStore, m: Matrix, from: usize, to: usize, seed: u64) {
    let d = store.dim;
    let rows = (from..to).flat_map(|row| init_row(seed, m, row, d));
    store.matrix_mut(m).extend(rows);
}

fn grow_zeros(store: &mut EmbeddingStore, m: Matrix, to: usize) {
    let d = store.dim;
    store.matrix_mut(m).resize(to * d, 0.0);
}

/// Adds the unseen symbols of `new_triples`. New rows are initialized from
/// `(seed, matrix, global row, col)`; new optimizer moments are zero.
pub fn extend_vocabulary<'a, I>(ckpt: &Checkpoint, new_triples: I, seed: u64) -> Checkpoint
where
    I: IntoIterator<Item = &'a RawTriple>,
{
    let mut out = ckpt.clone();
    let (old_e, old_r) = (ckpt.vocab.entity_count(), ckpt.vocab.relation_count());
    out.vocab.extend(new_triples);
    let (new_e, new_r) = (out.vocab.entity_count(), out.vocab.relation_count());
    grow(&mut out.store, Matrix::Entity, old_e, new_e, seed);
    grow(&mut out.store, Matrix::Relation, old_r, new_r, seed);
    if let Some(m) = out.optimizer.moments.as_mut() {
        for s in [&mut m.first, &mut m.second] {
            grow_zeros(s, Matrix::Entity, new_e);
            grow_zeros(s, Matrix::Relation, new_r);
        }
    }
    out
}

/// Re-packs `old` against the extended vocabulary and appends `new_triples`.
/// Old triples keep their indices; widths follow the new vocabulary sizes.
pub fn extend_dataset(old: Option<&IndexedDataset>, new_triples: &[RawTriple], vocab: &Vocabulary) -> Result<IndexedDataset, VocabError> {
    let mut triples = old.map(|d| d.triples()).unwrap_or_default();
    for t in new_triples {
        triples.push(vocab.encode(t)?);
    }
    Ok(IndexedDataset::from_triples(&triples, vocab.clone()))
}
