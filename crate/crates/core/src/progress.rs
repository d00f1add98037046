//! Structured progress records, written as line-delimited JSON.

use std::io::Write;

use serde::Serialize;

/// One training batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchRecord {
    pub epoch: u32,
    pub batch: u32,
    pub loss: f64,
    /// Triples per second for this batch.
    pub tps: f64,
}

/// One parsed input chunk.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChunkRecord {
    pub stage: &'static str,
    pub chunk: usize,
    pub byte_start: u64,
    pub byte_end: u64,
    pub triples: usize,
    pub errors: usize,
}

pub trait ProgressSink {
    fn batch(&mut self, record: &BatchRecord);

    fn chunk(&mut self, _record: &ChunkRecord) {}

    /// Free-form structured note, e.g. auto-configured values.
    fn note(&mut self, _value: &serde_json::Value) {}
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl ProgressSink for NullSink {
    fn batch(&mut self, _record: &BatchRecord) {}
}

/// Writes every record as one JSON line. Write failures are ignored so that a
/// closed log never interrupts training.
pub struct JsonLinesSink<W: Write> {
    out: W,
}

impl<W: Write> JsonLinesSink<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }

    fn line<T: Serialize>(&mut self, value: &T) {
        if serde_json::to_writer(&mut self.out, value).is_ok() {
            let _ = self.out.write_all(b"\n");
            let _ = self.out.flush();
        }
    }
}

impl<W: Write> ProgressSink for JsonLinesSink<W> {
    fn batch(&mut self, record: &BatchRecord) {
        self.line(record);
    }

    fn chunk(&mut self, record: &ChunkRecord) {
        self.line(record);
    }

    fn note(&mut self, value: &serde_json::Value) {
        self.line(value);
    }
}

/// Keeps batch records in memory.
#[derive(Debug, Default, Clone)]
pub struct CollectSink {
    pub batches: Vec<BatchRecord>,
    pub chunks: Vec<ChunkRecord>,
}

impl ProgressSink for CollectSink {
    fn batch(&mut self, record: &BatchRecord) {
        self.batches.push(record.clone());
    }

    fn chunk(&mut self, record: &ChunkRecord) {
        self.chunks.push(record.clone());
    }
}
