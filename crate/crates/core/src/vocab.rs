//! Entity and relation vocabularies and the integer-encoded dataset.
//!
//! Indices are assigned in byte-lexicographic order, so a vocabulary built from any
//! chunking of the same input is identical. The only exception is
//! [`Vocabulary::extend`], which appends unseen symbols after the existing ones so
//! that trained rows keep their indices.
//!
//! Encoded triples are stored column-wise at the narrowest integer width that can
//! hold every index ([`select_index_width`]).

use std::collections::{BTreeSet, HashMap};
use std::io::{self, Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::RawTriple;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("unknown symbol {}", String::from_utf8_lossy(.0))]
    UnknownSymbol(Vec<u8>),
}

/// Encoded triple. Fields index into the entity and relation vocabularies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self { head, relation, tail }
    }
}

/// One namespace of symbols with a dense index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolTable {
    symbols: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
}

impl SymbolTable {
    /// Builds a table from symbols already in their final order. Duplicates are
    /// dropped, keeping the first occurrence.
    pub fn from_ordered<I: IntoIterator<Item = Vec<u8>>>(symbols: I) -> Self {
        let mut table = SymbolTable::default();
        for s in symbols {
            table.push(s);
        }
        table
    }

    fn push(&mut self, symbol: Vec<u8>) -> usize {
        if let Some(&i) = self.index.get(&symbol) {
            return i;
        }
        let i = self.symbols.len();
        self.index.insert(symbol.clone(), i);
        self.symbols.push(symbol);
        i
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn get(&self, symbol: &[u8]) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, index: usize) -> Option<&[u8]> {
        self.symbols.get(index).map(Vec::as_slice)
    }

    pub fn symbols(&self) -> &[Vec<u8>] {
        &self.symbols
    }

    fn lookup(&self, symbol: &[u8]) -> Result<usize, VocabError> {
        self.get(symbol).ok_or_else(|| VocabError::UnknownSymbol(symbol.to_vec()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    pub entities: SymbolTable,
    pub relations: SymbolTable,
}

impl Vocabulary {
    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_width(&self) -> IndexWidth {
        select_index_width(self.entities.len() as u64)
    }

    pub fn relation_width(&self) -> IndexWidth {
        select_index_width(self.relations.len() as u64)
    }

    /// Appends symbols of `raw` not yet present, sorted among themselves, after the
    /// existing indices. Returns the number of new entities and relations.
    pub fn extend<'a, I>(&mut self, raw: I) -> (usize, usize)
    where
        I: IntoIterator<Item = &'a RawTriple>,
    {
        let mut new_entities = BTreeSet::new();
        let mut new_relations = BTreeSet::new();
        for t in raw {
            for e in [&t.head, &t.tail] {
                if self.entities.get(e).is_none() {
                    new_entities.insert(e.clone());
                }
            }
            if self.relations.get(&t.relation).is_none() {
                new_relations.insert(t.relation.clone());
            }
        }
        let counts = (new_entities.len(), new_relations.len());
        new_entities.into_iter().for_each(|e| {
            self.entities.push(e);
        });
        new_relations.into_iter().for_each(|r| {
            self.relations.push(r);
        });
        counts
    }

    pub fn encode(&self, t: &RawTriple) -> Result<Triple, VocabError> {
        Ok(Triple {
            head: self.entities.lookup(&t.head)?,
            relation: self.relations.lookup(&t.relation)?,
            tail: self.entities.lookup(&t.tail)?,
        })
    }

    /// Inverse of [`Vocabulary::encode`]. Panics on out-of-range indices.
    pub fn decode(&self, t: Triple) -> RawTriple {
        RawTriple::new(
            &self.entities.symbols[t.head],
            &self.relations.symbols[t.relation],
            &self.entities.symbols[t.tail],
        )
    }
}

#[derive(Default)]
struct SymbolSets {
    entities: BTreeSet<Vec<u8>>,
    relations: BTreeSet<Vec<u8>>,
}

impl SymbolSets {
    fn add(mut self, t: &RawTriple) -> Self {
        if !self.entities.contains(&t.head) {
            self.entities.insert(t.head.clone());
        }
        if !self.entities.contains(&t.tail) {
            self.entities.insert(t.tail.clone());
        }
        if !self.relations.contains(&t.relation) {
            self.relations.insert(t.relation.clone());
        }
        self
    }

    fn merge(mut self, mut other: Self) -> Self {
        self.entities.append(&mut other.entities);
        self.relations.append(&mut other.relations);
        self
    }

    fn into_vocab(self) -> Vocabulary {
        Vocabulary {
            entities: SymbolTable::from_ordered(self.entities),
            relations: SymbolTable::from_ordered(self.relations),
        }
    }
}

/// Sorted unique heads and tails, sorted unique relations.
pub fn build_vocab<'a, I>(raw: I) -> Vocabulary
where
    I: IntoIterator<Item = &'a RawTriple>,
{
    raw.into_iter().fold(SymbolSets::default(), SymbolSets::add).into_vocab()
}

/// Same result as [`build_vocab`], with per-worker symbol sets merged by a reducer.
pub fn build_vocab_parallel(raw: &[RawTriple]) -> Vocabulary {
    raw.par_iter()
        .fold(SymbolSets::default, SymbolSets::add)
        .reduce(SymbolSets::default, SymbolSets::merge)
        .into_vocab()
}

/// Bit width of the integer type used to store indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IndexWidth {
    W8,
    W16,
    W32,
    W64,
}

impl IndexWidth {
    pub fn bits(self) -> u32 {
        match self {
            IndexWidth::W8 => 8,
            IndexWidth::W16 => 16,
            IndexWidth::W32 => 32,
            IndexWidth::W64 => 64,
        }
    }

    pub fn bytes(self) -> usize {
        self.bits() as usize / 8
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            8 => Some(IndexWidth::W8),
            16 => Some(IndexWidth::W16),
            32 => Some(IndexWidth::W32),
            64 => Some(IndexWidth::W64),
            _ => None,
        }
    }
}

/// Smallest width `w` with `count <= 2^w`, so that indices `0..count` fit.
pub fn select_index_width(count: u64) -> IndexWidth {
    if count <= 1 << 8 {
        IndexWidth::W8
    } else if count <= 1 << 16 {
        IndexWidth::W16
    } else if count <= 1 << 32 {
        IndexWidth::W32
    } else {
        IndexWidth::W64
    }
}

/// A column of indices stored at a fixed width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PackedColumn {
    U8(Vec<u8>),
    U16(Vec<u16>),
    U32(Vec<u32>),
    U64(Vec<u64>),
}

impl PackedColumn {
    pub fn pack(values: impl ExactSizeIterator<Item = usize>, width: IndexWidth) -> Self {
        // Values are known to fit: the width was chosen from the vocabulary size.
        match width {
            IndexWidth::W8 => PackedColumn::U8(values.map(|v| v as u8).collect()),
            IndexWidth::W16 => PackedColumn::U16(values.map(|v| v as u16).collect()),
            IndexWidth::W32 => PackedColumn::U32(values.map(|v| v as u32).collect()),
            IndexWidth::W64 => PackedColumn::U64(values.map(|v| v as u64).collect()),
        }
    }

    pub fn width(&self) -> IndexWidth {
        match self {
            PackedColumn::U8(_) => IndexWidth::W8,
            PackedColumn::U16(_) => IndexWidth::W16,
            PackedColumn::U32(_) => IndexWidth::W32,
            PackedColumn::U64(_) => IndexWidth::W64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            PackedColumn::U8(v) => v.len(),
            PackedColumn::U16(v) => v.len(),
            PackedColumn::U32(v) => v.len(),
            PackedColumn::U64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> usize {
        match self {
            PackedColumn::U8(v) => v[i] as usize,
            PackedColumn::U16(v) => v[i] as usize,
            PackedColumn::U32(v) => v[i] as usize,
            PackedColumn::U64(v) => v[i] as usize,
        }
    }

    pub fn byte_size(&self) -> usize {
        self.len() * self.width().bytes()
    }
}

/// Triples encoded against a vocabulary, stored in minimum-width columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedDataset {
    heads: PackedColumn,
    relations: PackedColumn,
    tails: PackedColumn,
    pub vocab: Vocabulary,
}

impl IndexedDataset {
    pub fn from_triples(triples: &[Triple], vocab: Vocabulary) -> Self {
        let ew = vocab.entity_width();
        let rw = vocab.relation_width();
        Self {
            heads: PackedColumn::pack(triples.iter().map(|t| t.head), ew),
            relations: PackedColumn::pack(triples.iter().map(|t| t.relation), rw),
            tails: PackedColumn::pack(triples.iter().map(|t| t.tail), ew),
            vocab,
        }
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Triple {
        Triple {
            head: self.heads.get(i),
            relation: self.relations.get(i),
            tail: self.tails.get(i),
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = Triple> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    pub fn triples(&self) -> Vec<Triple> {
        self.iter().collect()
    }

    pub fn entity_width(&self) -> IndexWidth {
        self.heads.width()
    }

    pub fn relation_width(&self) -> IndexWidth {
        self.relations.width()
    }

    /// Bytes used by the packed index columns.
    pub fn index_bytes(&self) -> usize {
        self.heads.byte_size() + self.relations.byte_size() + self.tails.byte_size()
    }

    pub fn decode(&self) -> Vec<RawTriple> {
        self.iter().map(|t| self.vocab.decode(t)).collect()
    }

    /// Re-packs the same triples against `vocab`, which must extend the current
    /// vocabulary without remapping existing indices.
    pub fn with_vocab(&self, vocab: Vocabulary) -> Self {
        Self::from_triples(&self.triples(), vocab)
    }

    /// Writes the on-disk index file. Layout, little-endian:
    ///
    /// ```text
    /// "KGEIDX1"
    /// u64 entity_count, u64 relation_count, u8 entity_bits, u8 relation_bits, u64 triple_count
    /// entity table, relation table: per symbol u32 length + bytes
    /// triple_count x (head, relation, tail) at the declared widths
    /// ```
    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(INDEX_MAGIC)?;
        out.write_all(&(self.vocab.entity_count() as u64).to_le_bytes())?;
        out.write_all(&(self.vocab.relation_count() as u64).to_le_bytes())?;
        out.write_all(&[self.entity_width().bits() as u8, self.relation_width().bits() as u8])?;
        out.write_all(&(self.len() as u64).to_le_bytes())?;
        write_table(&mut out, &self.vocab.entities)?;
        write_table(&mut out, &self.vocab.relations)?;
        let (ew, rw) = (self.entity_width(), self.relation_width());
        let mut buf = Vec::with_capacity(self.len() * (2 * ew.bytes() + rw.bytes()));
        for t in self.iter() {
            push_index(&mut buf, t.head, ew);
            push_index(&mut buf, t.relation, rw);
            push_index(&mut buf, t.tail, ew);
        }
        out.write_all(&buf)?;
        out.flush()
    }

    pub fn read_from<R: Read>(mut input: R) -> io::Result<Self> {
        let mut magic = [0u8; INDEX_MAGIC.len()];
        input.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(invalid("not an index file"));
        }
        let entity_count = read_u64(&mut input)? as usize;
        let relation_count = read_u64(&mut input)? as usize;
        let mut bits = [0u8; 2];
        input.read_exact(&mut bits)?;
        let ew = IndexWidth::from_bits(bits[0] as u32).ok_or_else(|| invalid("bad entity width"))?;
        let rw = IndexWidth::from_bits(bits[1] as u32).ok_or_else(|| invalid("bad relation width"))?;
        let triple_count = read_u64(&mut input)? as usize;
        let entities = read_table(&mut input, entity_count)?;
        let relations = read_table(&mut input, relation_count)?;
        let vocab = Vocabulary { entities, relations };
        if vocab.entity_count() != entity_count || vocab.relation_count() != relation_count {
            return Err(invalid("duplicate symbols in table"));
        }
        if ew != vocab.entity_width() || rw != vocab.relation_width() {
            return Err(invalid("declared width does not match table size"));
        }
        let record = 2 * ew.bytes() + rw.bytes();
        let mut body = vec![0u8; triple_count * record];
        input.read_exact(&mut body)?;
        let mut triples = Vec::with_capacity(triple_count);
        for rec in body.chunks_exact(record) {
            let (h, rest) = rec.split_at(ew.bytes());
            let (r, t) = rest.split_at(rw.bytes());
            let t = Triple::new(read_index(h), read_index(r), read_index(t));
            if t.head >= entity_count || t.tail >= entity_count || t.relation >= relation_count {
                return Err(invalid("index out of range"));
            }
            triples.push(t);
        }
        Ok(Self::from_triples(&triples, vocab))
    }
}

pub const INDEX_MAGIC: &[u8; 7] = b"KGEIDX1";

fn invalid(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

fn push_index(buf: &mut Vec<u8>, value: usize, width: IndexWidth) {
    buf.extend_from_slice(&(value as u64).to_le_bytes()[..width.bytes()]);
}

fn read_index(bytes: &[u8]) -> usize {
    let mut full = [0u8; 8];
    full[..bytes.len()].copy_from_slice(bytes);
    u64::from_le_bytes(full) as usize
}

fn read_u64<R: Read>(input: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn write_table<W: Write>(out: &mut W, table: &SymbolTable) -> io::Result<()> {
    for s in table.symbols() {
        out.write_all(&(s.len() as u32).to_le_bytes())?;
        out.write_all(s)?;
    }
    Ok(())
}

pub(crate) fn read_table<R: Read>(input: &mut R, count: usize) -> io::Result<SymbolTable> {
    let mut symbols = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let mut len = [0u8; 4];
        input.read_exact(&mut len)?;
        let mut s = vec![0u8; u32::from_le_bytes(len) as usize];
        input.read_exact(&mut s)?;
        symbols.push(s);
    }
    Ok(SymbolTable::from_ordered(symbols))
}

/// Encodes in input order. Widths follow the vocabulary sizes.
pub fn encode_dataset(raw: &[RawTriple], vocab: Vocabulary) -> Result<IndexedDataset, VocabError> {
    let triples = raw
        .par_iter()
        .map(|t| vocab.encode(t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(IndexedDataset::from_triples(&triples, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn strings(table: &SymbolTable) -> Vec<&str> {
        table.symbols().iter().map(|s| std::str::from_utf8(s).unwrap()).collect()
    }

    #[test]
    fn vocab_examples() {
        let v = build_vocab(&[RawTriple::new("b", "r", "a")]);
        assert_eq!(strings(&v.entities), ["a", "b"]);
        assert_eq!(strings(&v.relations), ["r"]);

        let v = build_vocab(&[]);
        assert!(v.entities.is_empty() && v.relations.is_empty());

        let v = build_vocab(&[RawTriple::new("x", "p", "y"), RawTriple::new("y", "q", "x")]);
        assert_eq!(strings(&v.entities), ["x", "y"]);
        assert_eq!(strings(&v.relations), ["p", "q"]);
    }

    #[test]
    fn shared_string_in_both_namespaces() {
        let v = build_vocab(&[RawTriple::new("p", "p", "q")]);
        assert_eq!(v.entities.get(b"p"), Some(0));
        assert_eq!(v.relations.get(b"p"), Some(0));
    }

    #[test]
    fn width_boundaries() {
        assert_eq!(select_index_width(0), IndexWidth::W8);
        assert_eq!(select_index_width(255), IndexWidth::W8);
        assert_eq!(select_index_width(256), IndexWidth::W8);
        assert_eq!(select_index_width(257), IndexWidth::W16);
        assert_eq!(select_index_width(65_536), IndexWidth::W16);
        assert_eq!(select_index_width(65_537), IndexWidth::W32);
        assert_eq!(select_index_width(70_000), IndexWidth::W32);
        assert_eq!(select_index_width(1 << 32), IndexWidth::W32);
        assert_eq!(select_index_width((1 << 32) + 1), IndexWidth::W64);
        assert_eq!(select_index_width(u64::MAX), IndexWidth::W64);
    }

    #[test]
    fn encode_examples() {
        let raw = [RawTriple::new("b", "r", "a")];
        let ds = encode_dataset(&raw, build_vocab(&raw)).unwrap();
        assert_eq!(ds.triples(), vec![Triple::new(1, 0, 0)]);
        assert_eq!(ds.entity_width(), IndexWidth::W8);

        let empty = encode_dataset(&[], Vocabulary::default()).unwrap();
        assert!(empty.is_empty());

        let err = encode_dataset(&[RawTriple::new("z", "r", "a")], build_vocab(&raw)).unwrap_err();
        assert_eq!(err, VocabError::UnknownSymbol(b"z".to_vec()));
    }

    #[test]
    fn index_file_roundtrip_and_layout() {
        let raw = [RawTriple::new("b", "r", "a"), RawTriple::new("a", "r", "c")];
        let ds = encode_dataset(&raw, build_vocab(&raw)).unwrap();
        let mut bytes = Vec::new();
        ds.write_to(&mut bytes).unwrap();
        // magic + 3 u64 + 2 u8 + tables (3 x (4+1) + 1 x (4+1)) + 2 triples x 3 bytes
        assert_eq!(bytes.len(), 7 + 24 + 2 + 15 + 5 + 6);
        assert_eq!(&bytes[..7], b"KGEIDX1");
        let back = IndexedDataset::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.decode(), raw);

        bytes.truncate(bytes.len() - 1);
        assert!(IndexedDataset::read_from(bytes.as_slice()).is_err());
    }

    #[test]
    fn wide_vocab_packs_at_sixteen_bits() {
        let raw: Vec<_> = (0..300).map(|i| RawTriple::new(format!("e{i:03}"), "r", "e000")).collect();
        let ds = encode_dataset(&raw, build_vocab(&raw)).unwrap();
        assert_eq!(ds.entity_width(), IndexWidth::W16);
        assert_eq!(ds.relation_width(), IndexWidth::W8);
        assert_eq!(ds.index_bytes(), 300 * 5);
        assert_eq!(ds.decode(), raw);
    }

    fn raw_triples() -> impl Strategy<Value = Vec<RawTriple>> {
        let sym = || "[a-e]{1,2}";
        prop::collection::vec((sym(), "[pq]", sym()), 0..40)
            .prop_map(|v| v.into_iter().map(|(h, r, t)| RawTriple::new(h, r, t)).collect())
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(raw in raw_triples()) {
            let ds = encode_dataset(&raw, build_vocab(&raw)).unwrap();
            prop_assert_eq!(ds.len(), raw.len());
            prop_assert_eq!(ds.decode(), raw);
        }

        #[test]
        fn vocab_independent_of_order_and_partition(raw in raw_triples(), split in 0usize..40) {
            let v = build_vocab(&raw);
            let mut rev = raw.clone();
            rev.reverse();
            prop_assert_eq!(&build_vocab(&rev), &v);
            prop_assert_eq!(&build_vocab_parallel(&raw), &v);
            let split = split.min(raw.len());
            let mut parts = build_vocab(&raw[..split]);
            parts.extend(&raw[split..]);
            prop_assert_eq!(parts.entity_count(), v.entity_count());
            for (i, s) in v.entities.symbols().iter().enumerate() {
                prop_assert_eq!(v.entities.get(s), Some(i));
            }
            prop_assert!(v.entities.symbols().windows(2).all(|w| w[0] < w[1]));
        }
    }
}
