//! Python bindings: `import kge`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use kge_core::autoconf::{suggest_config as core_suggest, KgStats};
use kge_core::continual::{extend_vocabulary, CheckpointError};
use kge_core::eval::{evaluate as core_evaluate, EvalOptions, KnownTriples, MetricReport};
use kge_core::ingest::{parse_parallel, Format};
use kge_core::models::{score_kvsall, Matrix, ModelError};
use kge_core::progress::NullSink;
use kge_core::serve::rank_descending;
use kge_core::train::{train as core_train, train_for, LossKind, OptimizerConfig, TrainError, TrainState};
use kge_core::vocab::{build_vocab_parallel, encode_dataset, select_index_width as core_width};
use kge_core::{IndexedDataset, ModelKind, ModelSpec, RawTriple, Triple, Vocabulary};

type Symbols = (String, String, String);

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn checkpoint_err(e: CheckpointError) -> PyErr {
    match e {
        CheckpointError::Io(io) => PyIOError::new_err(io.to_string()),
        other => value_err(other),
    }
}

fn train_err(e: TrainError) -> PyErr {
    value_err(e)
}

fn model_err(e: ModelError) -> PyErr {
    value_err(e)
}

fn raw(t: &Symbols) -> RawTriple {
    RawTriple::new(&t.0, &t.1, &t.2)
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn encode_all(vocab: &Vocabulary, triples: &[Symbols]) -> PyResult<Vec<Triple>> {
    triples
        .iter()
        .map(|t| vocab.encode(&raw(t)).map_err(|e| PyKeyError::new_err(e.to_string())))
        .collect()
}

/// Encoded triples with their vocabulary.
#[pyclass(module = "kge", frozen)]
struct Dataset {
    inner: IndexedDataset,
}

#[pymethods]
impl Dataset {
    /// Parses an N-Triples (`.nt`) or TSV file. Malformed lines are skipped.
    #[staticmethod]
    #[pyo3(signature = (path, chunks = 4))]
    fn from_file(path: PathBuf, chunks: usize) -> PyResult<Self> {
        let bytes = std::fs::read(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        let out = parse_parallel(&bytes, Format::from_path(&path), chunks.max(1), &mut NullSink);
        let vocab = build_vocab_parallel(&out.triples);
        let inner = encode_dataset(&out.triples, vocab).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_triples(triples: Vec<Symbols>) -> PyResult<Self> {
        let raw: Vec<RawTriple> = triples.iter().map(raw).collect();
        let vocab = build_vocab_parallel(&raw);
        let inner = encode_dataset(&raw, vocab).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Reads a packed index written by `save` or `kge index`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let f = std::fs::File::open(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        let inner = IndexedDataset::read_from(std::io::BufReader::new(f)).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let f = std::fs::File::create(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        self.inner.write_to(std::io::BufWriter::new(f)).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn entities(&self) -> Vec<String> {
        self.inner.vocab.entities.symbols().iter().map(|s| text(s)).collect()
    }

    #[getter]
    fn relations(&self) -> Vec<String> {
        self.inner.vocab.relations.symbols().iter().map(|s| text(s)).collect()
    }

    #[getter]
    fn entity_bits(&self) -> u32 {
        self.inner.entity_width().bits()
    }

    #[getter]
    fn relation_bits(&self) -> u32 {
        self.inner.relation_width().bits()
    }

    /// Decoded triples in index order.
    fn triples(&self) -> Vec<Symbols> {
        self.inner
            .decode()
            .into_iter()
            .map(|t| (text(&t.head), text(&t.relation), text(&t.tail)))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(triples={}, entities={}, relations={})",
            self.inner.len(),
            self.inner.vocab.entity_count(),
            self.inner.vocab.relation_count()
        )
    }
}

/// A trained model with its vocabulary and optimizer state.
#[pyclass(module = "kge")]
struct Checkpoint {
    inner: kge_core::Checkpoint,
}

impl Checkpoint {
    fn entity(&self, name: &str) -> PyResult<usize> {
        self.inner
            .vocab
            .entities
            .get(name.as_bytes())
            .ok_or_else(|| PyKeyError::new_err(format!("unknown entity {name:?}")))
    }

    fn relation(&self, name: &str) -> PyResult<usize> {
        self.inner
            .vocab
            .relations
            .get(name.as_bytes())
            .ok_or_else(|| PyKeyError::new_err(format!("unknown relation {name:?}")))
    }
}

fn report_dict<'py>(py: Python<'py>, r: &MetricReport) -> PyResult<Bound<'py, PyDict>> {
    let hits = PyDict::new(py);
    hits.set_item(1, r.hits.at1)?;
    hits.set_item(3, r.hits.at3)?;
    hits.set_item(10, r.hits.at10)?;
    let d = PyDict::new(py);
    d.set_item("mrr", r.mrr)?;
    d.set_item("hits", hits)?;
    d.set_item("queries", r.queries)?;
    Ok(d)
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = kge_core::Checkpoint::load_from_path(&path).map_err(checkpoint_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        let inner = kge_core::Checkpoint::from_bytes(data).map_err(checkpoint_err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<usize> {
        self.inner.save_to_path(&path).map_err(checkpoint_err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    #[getter]
    fn model(&self) -> &'static str {
        self.inner.config.model.kind.name()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.config.model.dim
    }

    #[getter]
    fn entities(&self) -> Vec<String> {
        self.inner.vocab.entities.symbols().iter().map(|s| text(s)).collect()
    }

    #[getter]
    fn relations(&self) -> Vec<String> {
        self.inner.vocab.relations.symbols().iter().map(|s| text(s)).collect()
    }

    #[getter]
    fn completed_epochs(&self) -> u32 {
        self.inner.completed_epochs
    }

    /// CRC-32 of the parameters.
    #[getter]
    fn checksum(&self) -> u32 {
        self.inner.store.checksum()
    }

    fn entity_embedding(&self, name: &str) -> PyResult<Vec<f32>> {
        Ok(self.inner.store.row(Matrix::Entity, self.entity(name)?).to_vec())
    }

    fn relation_embedding(&self, name: &str) -> PyResult<Vec<f32>> {
        Ok(self.inner.store.row(Matrix::Relation, self.relation(name)?).to_vec())
    }

    fn score(&self, head: &str, relation: &str, tail: &str) -> PyResult<f64> {
        let (h, r, t) = (self.entity(head)?, self.relation(relation)?, self.entity(tail)?);
        self.inner.config.model.model().score_triple(&self.inner.store, h, r, t).map_err(model_err)
    }

    /// Best `k` tails for `(head, relation, ?)`, ties by entity index.
    fn topk(&self, head: &str, relation: &str, k: usize) -> PyResult<Vec<(String, f64)>> {
        let n = self.inner.vocab.entity_count();
        if k < 1 || k > n {
            return Err(value_err(format!("k must be in 1..={n}")));
        }
        let scores = score_kvsall(&self.inner.config.model, &self.inner.store, self.entity(head)?, self.relation(relation)?)
            .map_err(model_err)?;
        Ok(rank_descending(&scores, k)
            .into_iter()
            .map(|i| (text(self.inner.vocab.entities.symbol(i).unwrap_or_default()), scores[i]))
            .collect())
    }

    /// Filtered link prediction over `test`; `known` adds triples to filter out.
    #[pyo3(signature = (test, known = None, relations = false))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        test: Vec<Symbols>,
        known: Option<Vec<Symbols>>,
        relations: bool,
    ) -> PyResult<Bound<'py, PyDict>> {
        let test = encode_all(&self.inner.vocab, &test)?;
        let mut all = test.clone();
        all.extend(encode_all(&self.inner.vocab, &known.unwrap_or_default())?);
        let ckpt = &self.inner;
        let ev = py
            .detach(|| core_evaluate(&test, &KnownTriples::new(all.iter()), &ckpt.config.model, &ckpt.store, EvalOptions { relations }))
            .map_err(model_err)?;
        let d = report_dict(py, &ev.link)?;
        if let Some(r) = &ev.relation {
            d.set_item("relation", report_dict(py, r)?)?;
        }
        Ok(d)
    }

    /// A copy with the unseen symbols of `triples` appended.
    #[pyo3(signature = (triples, seed = None))]
    fn extend(&self, triples: Vec<Symbols>, seed: Option<u64>) -> Self {
        let raw: Vec<RawTriple> = triples.iter().map(raw).collect();
        let seed = seed.unwrap_or(self.inner.config.seed);
        Self { inner: extend_vocabulary(&self.inner, raw.iter(), seed) }
    }

    /// Trains `epochs` more epochs in place on `triples`; returns the epoch losses.
    fn resume(&mut self, py: Python<'_>, triples: Vec<Symbols>, epochs: u32) -> PyResult<Vec<f64>> {
        let encoded = encode_all(&self.inner.vocab, &triples)?;
        let ckpt = &mut self.inner;
        py.detach(|| {
            let mut state = ckpt.train_state()?;
            let losses = train_for(&encoded, &mut state, &ckpt.config, epochs, &mut NullSink)?;
            let config = ckpt.config.clone();
            *ckpt = kge_core::Checkpoint::from_state(&config, &ckpt.vocab, &state);
            Ok::<_, TrainError>(losses)
        })
        .map_err(train_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Checkpoint(model={}, dim={}, entities={}, relations={}, epochs={})",
            self.model(),
            self.dim(),
            self.inner.vocab.entity_count(),
            self.inner.vocab.relation_count(),
            self.inner.completed_epochs
        )
    }
}

fn parse_model(s: &str) -> PyResult<ModelKind> {
    s.parse().map_err(value_err)
}

fn parse_loss(s: &str) -> PyResult<LossKind> {
    if s.eq_ignore_ascii_case("kvsall") {
        return Ok(LossKind::KvsAll);
    }
    s.strip_prefix("neg:")
        .and_then(|k| k.parse().ok())
        .map(|k| LossKind::NegSample { k })
        .ok_or_else(|| value_err(format!("loss {s:?}: expected 'kvsall' or 'neg:K'")))
}

/// Trains a fresh model; returns `(checkpoint, epoch_losses)`.
#[pyfunction]
#[pyo3(signature = (dataset, model, dim, epochs = 100, lr = 0.01, batch_size = 1024, loss = "kvsall", optimizer = "adam", label_smoothing = 0.1, seed = 0, shards = 1))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    dataset: &Dataset,
    model: &str,
    dim: usize,
    epochs: u32,
    lr: f64,
    batch_size: usize,
    loss: &str,
    optimizer: &str,
    label_smoothing: f64,
    seed: u64,
    shards: usize,
) -> PyResult<(Checkpoint, Vec<f64>)> {
    let mut cfg = kge_core::TrainConfig::new(ModelSpec::new(parse_model(model)?, dim).map_err(model_err)?);
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.loss = parse_loss(loss)?;
    cfg.optimizer = match optimizer.to_ascii_lowercase().as_str() {
        "adam" => OptimizerConfig::adam(lr),
        "sgd" => OptimizerConfig::Sgd { lr },
        other => return Err(value_err(format!("optimizer {other:?}: expected 'adam' or 'sgd'"))),
    };
    cfg.label_smoothing = label_smoothing;
    cfg.seed = seed;
    cfg.shards = shards;
    let ds = &dataset.inner;
    let (state, losses) = py
        .detach(|| {
            let mut state = TrainState::new(&cfg, ds.vocab.entity_count(), ds.vocab.relation_count())?;
            let losses = core_train(&ds.triples(), &mut state, &cfg, &mut NullSink)?;
            Ok::<_, TrainError>((state, losses))
        })
        .map_err(train_err)?;
    let inner = kge_core::Checkpoint::from_state(&cfg, &ds.vocab, &state);
    Ok((Checkpoint { inner }, losses))
}

/// Suggested settings as a dict with `dim`, `batch_size`, `lr`, `epochs`,
/// `entity_bits`, `relation_bits` and `rationale`.
#[pyfunction]
#[pyo3(signature = (entities, relations, triples, memory, model = "complex"))]
fn suggest_config<'py>(py: Python<'py>, entities: u64, relations: u64, triples: u64, memory: u64, model: &str) -> PyResult<Bound<'py, PyDict>> {
    let stats = KgStats { entity_count: entities, relation_count: relations, triple_count: triples, available_memory_bytes: memory };
    let s = core_suggest(stats, parse_model(model)?).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("model", s.config.model.kind.name())?;
    d.set_item("dim", s.config.model.dim)?;
    d.set_item("batch_size", s.config.batch_size)?;
    d.set_item("lr", s.config.optimizer.lr())?;
    d.set_item("epochs", s.config.epochs)?;
    d.set_item("entity_bits", s.entity_width.bits())?;
    d.set_item("relation_bits", s.relation_width.bits())?;
    d.set_item("rationale", s.rationale)?;
    Ok(d)
}

#[pyfunction]
fn select_index_width(count: u64) -> u32 {
    core_width(count).bits()
}

#[pyfunction]
fn score_distmult(h: Vec<f64>, r: Vec<f64>, t: Vec<f64>) -> PyResult<f64> {
    kge_core::models::score_distmult(&h, &r, &t).map_err(model_err)
}

#[pyfunction]
fn score_complex(h: Vec<f64>, r: Vec<f64>, t: Vec<f64>) -> PyResult<f64> {
    kge_core::models::score_complex(&h, &r, &t).map_err(model_err)
}

#[pyfunction]
fn score_qmult(h: Vec<f64>, r: Vec<f64>, t: Vec<f64>) -> PyResult<f64> {
    kge_core::models::score_qmult(&h, &r, &t).map_err(model_err)
}

#[pymodule]
fn kge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Checkpoint>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(suggest_config, m)?)?;
    m.add_function(wrap_pyfunction!(select_index_width, m)?)?;
    m.add_function(wrap_pyfunction!(score_distmult, m)?)?;
    m.add_function(wrap_pyfunction!(score_complex, m)?)?;
    m.add_function(wrap_pyfunction!(score_qmult, m)?)?;
    Ok(())
}
