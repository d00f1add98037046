mod common;

use kge_core::continual::*;
use kge_core::models::*;
use kge_core::progress::{CollectSink, NullSink};
use kge_core::train::*;
use kge_core::vocab::IndexWidth;
use kge_core::{Checkpoint, RawTriple};

fn config(kind: ModelKind, loss: LossKind, shards: usize) -> TrainConfig {
    let mut cfg = TrainConfig::new(ModelSpec::new(kind, 8).unwrap());
    cfg.loss = loss;
    cfg.batch_size = 4;
    cfg.epochs = 6;
    cfg.seed = 21;
    cfg.shards = shards;
    cfg
}

fn run(cfg: &TrainConfig) -> Checkpoint {
    let ds = common::family();
    let mut state = TrainState::new(cfg, ds.vocab.entity_count(), ds.vocab.relation_count()).unwrap();
    train(&ds.triples(), &mut state, cfg, &mut NullSink).unwrap();
    Checkpoint::from_state(cfg, &ds.vocab, &state)
}

#[test]
fn sharded_kvsall_is_bit_equal() {
    let spec = ModelSpec::new(ModelKind::QMult, 8).unwrap();
    let store = init_embeddings(spec, 10, 3, 4).unwrap();
    for n in [2, 3, 4] {
        let sharded = shard_parameters(&store, n).unwrap();
        for h in 0..10 {
            for r in 0..3 {
                let full = score_kvsall(&spec, &store, h, r).unwrap();
                let split = sharded_kvsall(&spec, &sharded, h, r).unwrap();
                let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(&full), bits(&split), "n={n} h={h} r={r}");
            }
        }
    }
    // head 5 lives on shard 1 of 2; tails 0..5 are scored on shard 0
    let sharded = shard_parameters(&store, 2).unwrap();
    assert_eq!(sharded.layout.owner(Matrix::Entity, 5), 1);
    assert_eq!(sharded.fetch(Matrix::Entity, 5), store.row(Matrix::Entity, 5));
    assert_eq!(sharded_kvsall(&spec, &sharded, 5, 1).unwrap()[..5], score_kvsall(&spec, &store, 5, 1).unwrap()[..5]);
}

#[test]
fn shard_count_does_not_change_training() {
    for loss in [LossKind::KvsAll, LossKind::NegSample { k: 3 }] {
        let one = run(&config(ModelKind::ComplEx, loss, 1));
        for n in [2, 3, 5] {
            let mut many = run(&config(ModelKind::ComplEx, loss, n));
            many.config.shards = 1;
            assert_eq!(many.to_bytes(), one.to_bytes(), "{loss:?} shards={n}");
        }
    }
}

#[test]
fn resume_is_byte_identical() {
    let ds = common::family();
    let triples = ds.triples();
    for loss in [LossKind::KvsAll, LossKind::NegSample { k: 2 }] {
        for kind in ModelKind::ALL {
            let cfg = config(kind, loss, 2);
            let straight = run(&cfg);

            let mut state = TrainState::new(&cfg, ds.vocab.entity_count(), ds.vocab.relation_count()).unwrap();
            train_for(&triples, &mut state, &cfg, 3, &mut NullSink).unwrap();
            let bytes = Checkpoint::from_state(&cfg, &ds.vocab, &state).to_bytes();
            let loaded = Checkpoint::from_bytes(&bytes).unwrap();
            let mut resumed = loaded.train_state().unwrap();
            train(&triples, &mut resumed, &loaded.config, &mut NullSink).unwrap();
            let finished = Checkpoint::from_state(&loaded.config, &loaded.vocab, &resumed);
            assert_eq!(finished.to_bytes(), straight.to_bytes(), "{kind} {loss:?}");
        }
    }
}

#[test]
fn progress_records_every_batch() {
    let ds = common::family();
    let cfg = config(ModelKind::DistMult, LossKind::KvsAll, 1);
    let mut state = TrainState::new(&cfg, ds.vocab.entity_count(), ds.vocab.relation_count()).unwrap();
    let mut sink = CollectSink::default();
    train_for(&ds.triples(), &mut state, &cfg, 2, &mut sink).unwrap();
    let queries = kvsall_queries(&ds.triples()).len();
    assert_eq!(sink.batches.len(), 2 * queries.div_ceil(cfg.batch_size));
    assert_eq!(sink.batches[0].epoch, 1);
    assert_eq!(sink.batches.last().unwrap().epoch, 2);
    assert!(sink.batches.iter().all(|b| b.loss.is_finite() && b.loss > 0.0));
}

#[test]
fn extension_past_256_entities_widens_the_index() {
    let raw: Vec<RawTriple> = (0..255).map(|i| RawTriple::new(format!("n{i:03}"), "next", format!("n{:03}", (i + 1) % 255))).collect();
    let vocab = kge_core::vocab::build_vocab(raw.iter());
    assert_eq!(vocab.entity_count(), 255);
    let ds = kge_core::vocab::encode_dataset(&raw, vocab).unwrap();
    assert_eq!(ds.entity_width(), IndexWidth::W8);

    let mut cfg = TrainConfig::new(ModelSpec::new(ModelKind::DistMult, 4).unwrap());
    cfg.epochs = 1;
    let mut state = TrainState::new(&cfg, 255, 1).unwrap();
    train(&ds.triples(), &mut state, &cfg, &mut NullSink).unwrap();
    let ckpt = Checkpoint::from_state(&cfg, &ds.vocab, &state);

    let new = [RawTriple::new("n000", "next", "x1"), RawTriple::new("x1", "next", "x2")];
    let grown = extend_vocabulary(&ckpt, new.iter(), 99);
    assert_eq!(grown.vocab.entity_count(), 257);
    assert_eq!(grown.vocab.entity_width(), IndexWidth::W16);
    let data = extend_dataset(Some(&ds), &new, &grown.vocab).unwrap();
    assert_eq!(data.entity_width(), IndexWidth::W16);
    assert_eq!(data.len(), 257);
    assert_eq!(data.triples()[..255], ds.triples()[..]);

    let old_rows = ckpt.store.entities.len();
    assert_eq!(grown.store.entities[..old_rows], ckpt.store.entities[..]);
    let m = grown.optimizer.moments.as_ref().unwrap();
    assert!(m.first.entities[old_rows..].iter().all(|&x| x == 0.0));

    // training continues on the grown checkpoint
    let mut resumed = grown.train_state().unwrap();
    let mut cfg2 = grown.config.clone();
    cfg2.epochs = 2;
    train(&data.triples(), &mut resumed, &cfg2, &mut NullSink).unwrap();
    assert!(resumed.snapshot().0.all_finite());
}

#[test]
fn checkpoint_files_roundtrip() {
    let ckpt = run(&config(ModelKind::QMult, LossKind::KvsAll, 1));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.kge");
    let written = ckpt.save_to_path(&path).unwrap();
    assert_eq!(written as u64, std::fs::metadata(&path).unwrap().len());
    assert_eq!(Checkpoint::load_from_path(&path).unwrap(), ckpt);

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 9);
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::TruncatedFile)));
}
