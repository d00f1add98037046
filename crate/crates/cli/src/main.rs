//! `kge`: index, train, eval, extend, suggest and serve from the command line.
//!
//! Results go to stdout as JSON. Failures print one JSON line to stderr and exit
//! with 2 (malformed input), 3 (bad configuration or usage), 4 (I/O) or 1.

mod error;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use error::{CliError, Kind};
use kge_core::autoconf::{suggest_config, KgStats};
use kge_core::continual::{extend_dataset, extend_vocabulary};
use kge_core::eval::{evaluate, EvalOptions, KnownTriples};
use kge_core::ingest::{parse_parallel, Format};
use kge_core::progress::{JsonLinesSink, NullSink, ProgressSink};
use kge_core::train::{train, LossKind, OptimizerConfig, TrainConfig, TrainState};
use kge_core::vocab::{build_vocab_parallel, encode_dataset, INDEX_MAGIC};
use kge_core::{Checkpoint, IndexedDataset, ModelKind, ModelSpec, Triple, Vocabulary};

/// Memory budget assumed by autoconf when `--memory` is not given.
const DEFAULT_MEMORY: u64 = 1 << 30;

#[derive(Debug, Parser)]
#[command(name = "kge", version, about = "Knowledge graph embeddings on multi-core CPUs")]
struct Cli {
    /// Worker threads (default: logical cores). KGE_THREADS overrides.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a triple file (.nt or TSV) and write a packed index.
    Index(IndexArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Filtered link prediction metrics for a test file.
    Eval(EvalArgs),
    /// Add the unseen symbols of a triple file to a checkpoint.
    Extend(ExtendArgs),
    /// Suggest a training configuration.
    Suggest(SuggestArgs),
    /// Serve a checkpoint over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct IndexArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Parse chunks (default: thread count).
    #[arg(long)]
    chunks: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Index file or raw triple file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: Option<ModelKind>,
    /// Embedding dimension; chosen by autoconf when absent.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    batch: Option<usize>,
    /// `kvsall` or `neg:K`.
    #[arg(long)]
    loss: Option<String>,
    /// `adam` or `sgd`.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    label_smoothing: Option<f64>,
    #[arg(long)]
    shards: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Memory budget in bytes for autoconf.
    #[arg(long)]
    memory: Option<u64>,
    /// Resume from this checkpoint; `--epochs` is then the new total.
    #[arg(long)]
    from: Option<PathBuf>,
    /// JSON-lines progress log (default: stderr).
    #[arg(long)]
    progress: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Also rank relations for `(h, ?, t)`.
    #[arg(long)]
    relations: bool,
    /// Further known-true triples to filter out (e.g. the training data).
    #[arg(long)]
    filter: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct ExtendArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Initialization seed for new rows (default: the checkpoint's seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Existing index to re-pack together with the new triples.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Where to write the extended index.
    #[arg(long)]
    index_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SuggestArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    memory: u64,
    #[arg(long, default_value = "complex")]
    model: ModelKind,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            std::process::exit(0);
        }
        Err(e) => {
            let _ = e.print();
            let err = CliError::config(e.kind());
            eprintln!("{}", err.to_json());
            std::process::exit(Kind::Config.exit_code());
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("{}", e.to_json());
        std::process::exit(e.kind.exit_code());
    }
}

fn thread_count(flag: Option<usize>) -> Result<usize, CliError> {
    let n = match std::env::var("KGE_THREADS") {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| CliError::config(format!("KGE_THREADS={v:?} is not a count")))?),
        Err(_) => flag,
    };
    match n {
        Some(0) => Err(CliError::config("thread count must be at least 1")),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = thread_count(cli.threads)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::new(Kind::Runtime, e))?;
    match cli.command {
        Command::Index(a) => index(a, threads),
        Command::Train(a) => train_cmd(a, threads),
        Command::Eval(a) => eval(a, threads),
        Command::Extend(a) => extend(a, threads),
        Command::Suggest(a) => suggest(a, threads),
        Command::Serve(a) => serve(a),
    }
}

fn print(value: serde_json::Value) {
    println!("{value}");
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::from(e).with_path(path))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::from(e).with_path(path))
}

fn is_index(path: &Path) -> Result<bool, CliError> {
    let mut head = [0u8; INDEX_MAGIC.len()];
    let mut f = open(path)?;
    let mut filled = 0;
    while filled < head.len() {
        match f.read(&mut head[filled..]).map_err(|e| CliError::from(e).with_path(path))? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled == head.len() && &head == INDEX_MAGIC)
}

/// Parses a raw triple file, reporting each malformed line on stderr.
fn parse_raw(path: &Path, chunks: usize) -> Result<Vec<kge_core::RawTriple>, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::from(e).with_path(path))?;
    let out = parse_parallel(&bytes, Format::from_path(path), chunks, &mut NullSink);
    for e in &out.errors {
        eprintln!("{}", json!({"warning": "malformed-line", "file": path.display().to_string(), "offset": e.offset, "reason": e.reason}));
    }
    Ok(out.triples)
}

fn read_index(path: &Path) -> Result<IndexedDataset, CliError> {
    IndexedDataset::read_from(BufReader::new(open(path)?)).map_err(|e| CliError::from(e).with_path(path))
}

/// An index file as is, or a raw triple file indexed on the fly.
fn load_dataset(path: &Path, chunks: usize) -> Result<IndexedDataset, CliError> {
    if is_index(path)? {
        return read_index(path);
    }
    let raw = parse_raw(path, chunks)?;
    let vocab = build_vocab_parallel(&raw);
    Ok(encode_dataset(&raw, vocab)?)
}

/// Triples of `path` encoded against `vocab`.
fn load_triples(path: &Path, vocab: &Vocabulary, chunks: usize) -> Result<Vec<Triple>, CliError> {
    let raw = if is_index(path)? {
        let ds = read_index(path)?;
        if &ds.vocab == vocab {
            return Ok(ds.triples());
        }
        ds.decode()
    } else {
        parse_raw(path, chunks)?
    };
    raw.iter()
        .map(|t| vocab.encode(t))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::parse(format!("{}: {e}; run `kge extend` first", path.display())))
}

fn index(a: IndexArgs, threads: usize) -> Result<(), CliError> {
    let chunks = a.chunks.unwrap_or(threads);
    if chunks == 0 {
        return Err(CliError::config("--chunks must be at least 1"));
    }
    let bytes = std::fs::read(&a.input).map_err(|e| CliError::from(e).with_path(&a.input))?;
    let out = parse_parallel(&bytes, Format::from_path(&a.input), chunks, &mut NullSink);
    for e in &out.errors {
        eprintln!("{}", json!({"warning": "malformed-line", "offset": e.offset, "reason": e.reason}));
    }
    if out.triples.is_empty() {
        return Err(CliError::parse(format!("{}: no valid triples", a.input.display())));
    }
    let vocab = build_vocab_parallel(&out.triples);
    let ds = encode_dataset(&out.triples, vocab)?;
    let mut w = create(&a.output)?;
    ds.write_to(&mut w)?;
    w.flush()?;
    print(json!({
        "triples": ds.len(),
        "entities": ds.vocab.entity_count(),
        "relations": ds.vocab.relation_count(),
        "entity_bits": ds.entity_width().bits(),
        "relation_bits": ds.relation_width().bits(),
        "errors": out.errors.len(),
        "skipped": out.skipped,
    }));
    Ok(())
}

fn parse_loss(s: &str) -> Result<LossKind, CliError> {
    if s.eq_ignore_ascii_case("kvsall") {
        return Ok(LossKind::KvsAll);
    }
    s.strip_prefix("neg:")
        .and_then(|k| k.parse().ok())
        .map(|k| LossKind::NegSample { k })
        .ok_or_else(|| CliError::config(format!("--loss {s:?}: expected kvsall or neg:K")))
}

fn parse_optimizer(s: &str, lr: f64) -> Result<OptimizerConfig, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "adam" => Ok(OptimizerConfig::adam(lr)),
        "sgd" => Ok(OptimizerConfig::Sgd { lr }),
        _ => Err(CliError::config(format!("--optimizer {s:?}: expected adam or sgd"))),
    }
}

fn fresh_config(a: &TrainArgs, ds: &IndexedDataset, sink: &mut dyn ProgressSink) -> Result<TrainConfig, CliError> {
    let kind = a.model.ok_or_else(|| CliError::config("--model is required unless resuming with --from"))?;
    let mut cfg = match a.d {
        Some(d) => TrainConfig::new(ModelSpec::new(kind, d)?),
        None => {
            let stats = KgStats {
                entity_count: ds.vocab.entity_count() as u64,
                relation_count: ds.vocab.relation_count() as u64,
                triple_count: ds.len() as u64,
                available_memory_bytes: a.memory.unwrap_or(DEFAULT_MEMORY),
            };
            let s = suggest_config(stats, kind)?;
            sink.note(&json!({
                "autoconf": {
                    "dim": s.config.model.dim,
                    "batch_size": s.config.batch_size,
                    "lr": s.config.optimizer.lr(),
                    "memory": stats.available_memory_bytes,
                    "rationale": s.rationale,
                }
            }));
            s.config
        }
    };
    if let Some(b) = a.batch {
        cfg.batch_size = b;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(l) = &a.loss {
        cfg.loss = parse_loss(l)?;
    }
    if let Some(eps) = a.label_smoothing {
        cfg.label_smoothing = eps;
    }
    if let Some(n) = a.shards {
        cfg.shards = n;
    }
    let lr = a.lr.unwrap_or(cfg.optimizer.lr());
    cfg.optimizer = parse_optimizer(a.optimizer.as_deref().unwrap_or("adam"), lr)?;
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs, threads: usize) -> Result<(), CliError> {
    let mut sink: Box<dyn ProgressSink> = match &a.progress {
        Some(p) => Box::new(JsonLinesSink::new(create(p)?)),
        None => Box::new(JsonLinesSink::new(io::stderr())),
    };
    let ds = load_dataset(&a.data, threads)?;
    let (cfg, vocab, triples, mut state) = match &a.from {
        Some(path) => {
            let ckpt = Checkpoint::load_from_path(path).map_err(|e| CliError::from(e).with_path(path))?;
            if a.model.is_some_and(|m| m != ckpt.config.model.kind) || a.d.is_some_and(|d| d != ckpt.config.model.dim) {
                return Err(CliError::config("--model/--d differ from the checkpoint being resumed"));
            }
            let mut cfg = ckpt.config.clone();
            if let Some(e) = a.epochs {
                cfg.epochs = e;
            }
            if let Some(n) = a.shards {
                cfg.shards = n;
            }
            cfg.validate()?;
            let triples = load_triples(&a.data, &ckpt.vocab, threads)?;
            let mut resume = ckpt.clone();
            resume.config = cfg.clone();
            let state = resume.train_state()?;
            (cfg, ckpt.vocab, triples, state)
        }
        None => {
            let cfg = fresh_config(&a, &ds, sink.as_mut())?;
            let state = TrainState::new(&cfg, ds.vocab.entity_count(), ds.vocab.relation_count())?;
            let triples = ds.triples();
            (cfg, ds.vocab, triples, state)
        }
    };
    sink.note(&json!({"config": cfg}));
    let losses = train(&triples, &mut state, &cfg, sink.as_mut())?;
    drop(sink);
    let ckpt = Checkpoint::from_state(&cfg, &vocab, &state);
    let mut w = create(&a.output)?;
    let bytes = ckpt.save(&mut w)?;
    w.flush()?;
    print(json!({
        "model": cfg.model.kind.name(),
        "dim": cfg.model.dim,
        "completed_epochs": state.completed_epochs,
        "final_loss": losses.last().copied(),
        "checkpoint_bytes": bytes,
        "checksum": format!("{:08x}", ckpt.store.checksum()),
    }));
    Ok(())
}

fn eval(a: EvalArgs, threads: usize) -> Result<(), CliError> {
    let ckpt = Checkpoint::load_from_path(&a.checkpoint).map_err(|e| CliError::from(e).with_path(&a.checkpoint))?;
    let test = load_triples(&a.test, &ckpt.vocab, threads)?;
    if test.is_empty() {
        return Err(CliError::parse(format!("{}: no test triples", a.test.display())));
    }
    let mut known = test.clone();
    for f in &a.filter {
        known.extend(load_triples(f, &ckpt.vocab, threads)?);
    }
    let options = EvalOptions { relations: a.relations };
    let ev = evaluate(&test, &KnownTriples::new(known.iter()), &ckpt.config.model, &ckpt.store, options)?;
    println!("{}", ev.link.to_json());
    if let Some(r) = ev.relation {
        // built by hand so the hits keys keep their 1, 3, 10 order
        println!("{{\"relation\":{}}}", r.to_json());
    }
    Ok(())
}

fn extend(a: ExtendArgs, threads: usize) -> Result<(), CliError> {
    let ckpt = Checkpoint::load_from_path(&a.checkpoint).map_err(|e| CliError::from(e).with_path(&a.checkpoint))?;
    let raw = parse_raw(&a.data, threads)?;
    let seed = a.seed.unwrap_or(ckpt.config.seed);
    let grown = extend_vocabulary(&ckpt, raw.iter(), seed);
    let mut w = create(&a.output)?;
    grown.save(&mut w)?;
    w.flush()?;
    if let Some(out) = &a.index_out {
        let base = a.base.as_deref().map(read_index).transpose()?;
        let ds = extend_dataset(base.as_ref(), &raw, &grown.vocab)?;
        let mut w = create(out)?;
        ds.write_to(&mut w)?;
        w.flush()?;
    } else if a.base.is_some() {
        return Err(CliError::config("--base needs --index-out"));
    }
    print(json!({
        "entities_added": grown.vocab.entity_count() - ckpt.vocab.entity_count(),
        "relations_added": grown.vocab.relation_count() - ckpt.vocab.relation_count(),
        "entities": grown.vocab.entity_count(),
        "relations": grown.vocab.relation_count(),
        "entity_bits": grown.vocab.entity_width().bits(),
        "relation_bits": grown.vocab.relation_width().bits(),
    }));
    Ok(())
}

fn suggest(a: SuggestArgs, threads: usize) -> Result<(), CliError> {
    let ds = load_dataset(&a.data, threads)?;
    let stats = KgStats {
        entity_count: ds.vocab.entity_count() as u64,
        relation_count: ds.vocab.relation_count() as u64,
        triple_count: ds.len() as u64,
        available_memory_bytes: a.memory,
    };
    let s = suggest_config(stats, a.model)?;
    print(json!({
        "config": s.config,
        "entity_bits": s.entity_width.bits(),
        "relation_bits": s.relation_width.bits(),
        "rationale": s.rationale,
    }));
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    kge_core::serve::run(&a.bind, a.port, &a.checkpoint, |addr| {
        print(json!({"listening": addr.to_string()}));
        let _ = io::stdout().flush();
    })?;
    Ok(())
}
