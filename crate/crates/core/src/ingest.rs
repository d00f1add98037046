//! Chunk-parallel reading of triple files.
//!
//! A file is split into newline-aligned [`FileChunk`]s, each chunk is parsed by an
//! independent worker, and the per-chunk results are concatenated in chunk order.
//! The merged output is therefore identical for every chunk count.
//!
//! Two input formats are understood:
//!
//! - an IRI-only subset of N-Triples: `<h> <r> <t> .`, with `_:label` blank nodes
//!   kept as bare tokens (prefix included) and literal objects rejected;
//! - TSV with exactly three TAB-separated columns.
//!
//! Parsing is byte-oriented. Bytes inside IRIs are passed through without UTF-8
//! validation. Malformed lines never abort a parse; they are returned as
//! [`LineError`]s.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;

use crate::progress::{ChunkRecord, ProgressSink};

/// A parsed triple of opaque symbols.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RawTriple {
    pub head: Vec<u8>,
    pub relation: Vec<u8>,
    pub tail: Vec<u8>,
}

impl RawTriple {
    pub fn new(head: impl AsRef<[u8]>, relation: impl AsRef<[u8]>, tail: impl AsRef<[u8]>) -> Self {
        Self {
            head: head.as_ref().to_vec(),
            relation: relation.as_ref().to_vec(),
            tail: tail.as_ref().to_vec(),
        }
    }
}

impl fmt::Display for RawTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {})",
            String::from_utf8_lossy(&self.head),
            String::from_utf8_lossy(&self.relation),
            String::from_utf8_lossy(&self.tail)
        )
    }
}

/// Half-open byte range `[byte_start, byte_end)` of a file, aligned to line starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FileChunk {
    pub byte_start: u64,
    pub byte_end: u64,
}

impl FileChunk {
    pub fn len(&self) -> u64 {
        self.byte_end - self.byte_start
    }

    pub fn is_empty(&self) -> bool {
        self.byte_start == self.byte_end
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.byte_start as usize..self.byte_end as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    /// Byte offset of the start of the offending line.
    pub offset: u64,
    pub reason: &'static str,
}

pub const LITERAL_OBJECT_UNSUPPORTED: &str = "literal-object-unsupported";

/// Result of parsing one chunk or a whole file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseOutput {
    pub triples: Vec<RawTriple>,
    pub errors: Vec<LineError>,
    /// Blank and comment lines.
    pub skipped: usize,
}

impl ParseOutput {
    /// Number of lines this output accounts for.
    pub fn line_count(&self) -> usize {
        self.triples.len() + self.errors.len() + self.skipped
    }

    fn append(&mut self, mut other: ParseOutput, base: u64) {
        self.triples.append(&mut other.triples);
        self.errors.extend(other.errors.into_iter().map(|e| LineError {
            offset: e.offset + base,
            reason: e.reason,
        }));
        self.skipped += other.skipped;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    NTriples,
    Tsv,
}

impl Format {
    /// `.nt` means N-Triples; everything else is read as TSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("nt") => Format::NTriples,
            _ => Format::Tsv,
        }
    }

    pub fn parse(self, bytes: &[u8]) -> ParseOutput {
        match self {
            Format::NTriples => parse_ntriples_chunk(bytes),
            Format::Tsv => parse_tsv_chunk(bytes),
        }
    }
}

/// Splits `[0, file_size)` into at most `n_chunks` newline-aligned chunks.
///
/// `next_line_start(offset)` must return the position just after the first `\n`
/// at or after `offset`, or `file_size` if there is none.
pub fn chunk_file<F>(file_size: u64, next_line_start: F, n_chunks: usize) -> Vec<FileChunk>
where
    F: Fn(u64) -> u64,
{
    let n_chunks = n_chunks.max(1) as u64;
    let mut chunks = Vec::new();
    let mut start = 0u64;
    for i in 1..n_chunks {
        let target = file_size * i / n_chunks;
        if target == 0 || target <= start {
            continue;
        }
        // A line ending at target - 1 makes target itself a valid boundary.
        let boundary = next_line_start(target - 1).min(file_size);
        if boundary > start && boundary < file_size {
            chunks.push(FileChunk { byte_start: start, byte_end: boundary });
            start = boundary;
        }
    }
    if start < file_size {
        chunks.push(FileChunk { byte_start: start, byte_end: file_size });
    }
    chunks
}

/// [`chunk_file`] over an in-memory buffer.
pub fn chunk_bytes(bytes: &[u8], n_chunks: usize) -> Vec<FileChunk> {
    chunk_file(
        bytes.len() as u64,
        |offset| match bytes[offset as usize..].iter().position(|&b| b == b'\n') {
            Some(p) => offset + p as u64 + 1,
            None => bytes.len() as u64,
        },
        n_chunks,
    )
}

/// Yields `(offset, line)` for each line, without the `\n` and with one trailing
/// `\r` removed.
fn lines(bytes: &[u8]) -> impl Iterator<Item = (u64, &[u8])> {
    let mut pos = 0usize;
    std::iter::from_fn(move || {
        if pos >= bytes.len() {
            return None;
        }
        let start = pos;
        let end = match bytes[start..].iter().position(|&b| b == b'\n') {
            Some(p) => start + p,
            None => bytes.len(),
        };
        pos = end + 1;
        let mut line = &bytes[start..end];
        if let [rest @ .., b'\r'] = line {
            line = rest;
        }
        Some((start as u64, line))
    })
}

fn is_ws(b: u8) -> bool {
    b == b' ' || b == b'\t'
}

fn skip_ws(line: &[u8], mut i: usize) -> usize {
    while i < line.len() && is_ws(line[i]) {
        i += 1;
    }
    i
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Position {
    Subject,
    Predicate,
    Object,
}

/// Reads one term starting at `i`; returns the symbol and the index after it.
fn read_term(line: &[u8], i: usize, position: Position) -> Result<(Vec<u8>, usize), &'static str> {
    match line.get(i) {
        None => Err("missing-term"),
        Some(b'<') => {
            let body = &line[i + 1..];
            let close = body
                .iter()
                .position(|&b| b == b'>' || is_ws(b))
                .ok_or("unterminated-iri")?;
            if body[close] != b'>' {
                return Err("whitespace-in-iri");
            }
            if close == 0 {
                return Err("empty-iri");
            }
            Ok((body[..close].to_vec(), i + 1 + close + 1))
        }
        Some(b'"') if position == Position::Object => Err(LITERAL_OBJECT_UNSUPPORTED),
        Some(b'"') => Err("literal-not-allowed"),
        Some(b'_') if position != Position::Predicate && line.get(i + 1) == Some(&b':') => {
            let end = line[i..]
                .iter()
                .position(|&b| is_ws(b))
                .map_or(line.len(), |p| i + p);
            if end - i <= 2 {
                return Err("empty-blank-node");
            }
            Ok((line[i..end].to_vec(), end))
        }
        Some(_) => Err("expected-iri"),
    }
}

fn parse_ntriples_line(line: &[u8]) -> Result<RawTriple, &'static str> {
    let i = skip_ws(line, 0);
    let (head, i) = read_term(line, i, Position::Subject)?;
    let j = skip_ws(line, i);
    if j == i {
        return Err("missing-separator");
    }
    let (relation, i) = read_term(line, j, Position::Predicate)?;
    let j = skip_ws(line, i);
    if j == i {
        return Err("missing-separator");
    }
    let (tail, i) = read_term(line, j, Position::Object)?;
    let i = skip_ws(line, i);
    if line.get(i) != Some(&b'.') {
        return Err("missing-dot");
    }
    let i = skip_ws(line, i + 1);
    if i != line.len() && line[i] != b'#' {
        return Err("trailing-content");
    }
    Ok(RawTriple { head, relation, tail })
}

/// Parses N-Triples lines. Offsets in the errors are relative to `bytes`.
pub fn parse_ntriples_chunk(bytes: &[u8]) -> ParseOutput {
    let mut out = ParseOutput::default();
    for (offset, line) in lines(bytes) {
        let first = skip_ws(line, 0);
        if first == line.len() || line[first] == b'#' {
            out.skipped += 1;
            continue;
        }
        match parse_ntriples_line(line) {
            Ok(t) => out.triples.push(t),
            Err(reason) => out.errors.push(LineError { offset, reason }),
        }
    }
    out
}

fn parse_tsv_line(line: &[u8]) -> Result<RawTriple, &'static str> {
    let mut cols = line.split(|&b| b == b'\t');
    let (Some(h), Some(r), Some(t), None) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
        return Err("column-count");
    };
    for field in [h, r, t] {
        if field.is_empty() {
            return Err("empty-field");
        }
        if field.contains(&b' ') {
            return Err("whitespace-in-field");
        }
    }
    Ok(RawTriple::new(h, r, t))
}

/// Parses `h<TAB>r<TAB>t` lines. Blank lines are skipped.
pub fn parse_tsv_chunk(bytes: &[u8]) -> ParseOutput {
    let mut out = ParseOutput::default();
    for (offset, line) in lines(bytes) {
        if line.iter().all(|&b| is_ws(b)) {
            out.skipped += 1;
            continue;
        }
        match parse_tsv_line(line) {
            Ok(t) => out.triples.push(t),
            Err(reason) => out.errors.push(LineError { offset, reason }),
        }
    }
    out
}

/// Chunks `bytes`, parses the chunks in parallel and merges them in chunk order.
pub fn parse_parallel(
    bytes: &[u8],
    format: Format,
    n_chunks: usize,
    sink: &mut dyn ProgressSink,
) -> ParseOutput {
    let chunks = chunk_bytes(bytes, n_chunks);
    let parts: Vec<ParseOutput> = chunks
        .par_iter()
        .map(|c| format.parse(&bytes[c.range()]))
        .collect();
    let mut merged = ParseOutput::default();
    for (i, (chunk, part)) in chunks.iter().zip(parts).enumerate() {
        sink.chunk(&ChunkRecord {
            stage: "parse",
            chunk: i,
            byte_start: chunk.byte_start,
            byte_end: chunk.byte_end,
            triples: part.triples.len(),
            errors: part.errors.len(),
        });
        merged.append(part, chunk.byte_start);
    }
    merged
}

/// Reads a whole file and parses it with [`parse_parallel`].
pub fn read_file(
    path: &Path,
    format: Format,
    n_chunks: usize,
    sink: &mut dyn ProgressSink,
) -> std::io::Result<ParseOutput> {
    let bytes = std::fs::read(path)?;
    Ok(parse_parallel(&bytes, format, n_chunks, sink))
}
