#![allow(dead_code)]

use kge_core::vocab::{encode_dataset, IndexedDataset};
use kge_core::RawTriple;

/// Five people, four relations, closed under the obvious inverses.
pub const FAMILY: [(&str, &str, &str); 14] = [
    ("Barack", "Married", "Michelle"),
    ("Michelle", "Married", "Barack"),
    ("Barack", "HasChild", "Malia"),
    ("Barack", "HasChild", "Sasha"),
    ("Michelle", "HasChild", "Malia"),
    ("Michelle", "HasChild", "Sasha"),
    ("Marian", "HasChild", "Michelle"),
    ("Malia", "HasParent", "Barack"),
    ("Malia", "HasParent", "Michelle"),
    ("Sasha", "HasParent", "Barack"),
    ("Sasha", "HasParent", "Michelle"),
    ("Michelle", "HasParent", "Marian"),
    ("Malia", "HasSibling", "Sasha"),
    ("Sasha", "HasSibling", "Malia"),
];

pub fn family_raw() -> Vec<RawTriple> {
    FAMILY.iter().map(|(h, r, t)| RawTriple::new(h, r, t)).collect()
}

pub fn family() -> IndexedDataset {
    let raw = family_raw();
    let vocab = kge_core::vocab::build_vocab(raw.iter());
    encode_dataset(&raw, vocab).unwrap()
}
