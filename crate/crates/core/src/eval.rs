//! Filtered link and relation prediction.
//!
//! For a query with true answer `t`, every other candidate known to be true is
//! removed before ranking. Ties count half: with `g` candidates scoring strictly
//! higher and `e` scoring equal, the rank is `1 + g + floor(e / 2)`.
//!
//! Link prediction ranks the true tail of `(h, r, ?)` and the true head of
//! `(?, r, t)`; both directions are pooled into one report. Relation prediction
//! ranks the true relation of `(h, ?, t)` over all relations with the same
//! filtering, and is reported separately.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::models::{ModelError, ModelSpec, RowSource};
use crate::vocab::Triple;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Head,
    Tail,
    Relation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankResult {
    pub rank: usize,
    pub direction: Direction,
}

/// Rank of `scores[true_index]` among candidates not in `known_true`.
/// `true_index` itself is never filtered.
pub fn filtered_rank(scores: &[f64], true_index: usize, known_true: &HashSet<usize>) -> Result<usize, ModelError> {
    let target = *scores.get(true_index).ok_or(ModelError::IndexOutOfRange {
        kind: "candidate",
        index: true_index,
        count: scores.len(),
    })?;
    let (mut greater, mut equal) = (0usize, 0usize);
    for (j, &s) in scores.iter().enumerate() {
        if j == true_index || known_true.contains(&j) {
            continue;
        }
        if s > target {
            greater += 1;
        } else if s == target {
            equal += 1;
        }
    }
    Ok(1 + greater + equal / 2)
}

pub const HITS_AT: [usize; 3] = [1, 3, 10];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hits {
    #[serde(rename = "1")]
    pub at1: f64,
    #[serde(rename = "3")]
    pub at3: f64,
    #[serde(rename = "10")]
    pub at10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mrr: f64,
    pub hits: Hits,
    pub queries: usize,
}

impl MetricReport {
    pub fn from_ranks(ranks: &[usize]) -> Self {
        let n = ranks.len();
        let frac = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };
        let mrr = if n == 0 {
            0.0
        } else {
            ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n as f64
        };
        let at = |k: usize| frac(ranks.iter().filter(|&&r| r <= k).count());
        let hits = Hits { at1: at(1), at3: at(3), at10: at(10) };
        Self { mrr, hits, queries: n }
    }

    /// Panics unless `k` is one of [`HITS_AT`].
    pub fn hits_at(&self, k: usize) -> f64 {
        match k {
            1 => self.hits.at1,
            3 => self.hits.at3,
            10 => self.hits.at10,
            _ => panic!("hits@{k} is not reported"),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Known-true answers for each query shape.
#[derive(Debug, Default, Clone)]
pub struct KnownTriples {
    tails: HashMap<(usize, usize), HashSet<usize>>,
    heads: HashMap<(usize, usize), HashSet<usize>>,
    relations: HashMap<(usize, usize), HashSet<usize>>,
}

impl KnownTriples {
    pub fn new<'a, I: IntoIterator<Item = &'a Triple>>(triples: I) -> Self {
        let mut k = KnownTriples::default();
        for t in triples {
            k.tails.entry((t.head, t.relation)).or_default().insert(t.tail);
            k.heads.entry((t.relation, t.tail)).or_default().insert(t.head);
            k.relations.entry((t.head, t.tail)).or_default().insert(t.relation);
        }
        k
    }

    fn lookup(map: &HashMap<(usize, usize), HashSet<usize>>, key: (usize, usize)) -> HashSet<usize> {
        map.get(&key).cloned().unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub relations: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Head and tail directions pooled.
    pub link: MetricReport,
    pub relation: Option<MetricReport>,
    pub ranks: Vec<Vec<RankResult>>,
}

fn rank_query(
    spec: &ModelSpec,
    rows: &dyn RowSource,
    known: &KnownTriples,
    t: &Triple,
    options: EvalOptions,
) -> Result<Vec<RankResult>, ModelError> {
    let model = spec.model();
    let mut out = Vec::with_capacity(3);
    let tails = model.score_tails(rows, t.head, t.relation)?;
    let mut filter = KnownTriples::lookup(&known.tails, (t.head, t.relation));
    filter.remove(&t.tail);
    out.push(RankResult { rank: filtered_rank(&tails, t.tail, &filter)?, direction: Direction::Tail });

    let heads = model.score_heads(rows, t.relation, t.tail)?;
    let mut filter = KnownTriples::lookup(&known.heads, (t.relation, t.tail));
    filter.remove(&t.head);
    out.push(RankResult { rank: filtered_rank(&heads, t.head, &filter)?, direction: Direction::Head });

    if options.relations {
        let rels = model.score_relations(rows, t.head, t.tail)?;
        let mut filter = KnownTriples::lookup(&known.relations, (t.head, t.tail));
        filter.remove(&t.relation);
        out.push(RankResult { rank: filtered_rank(&rels, t.relation, &filter)?, direction: Direction::Relation });
    }
    Ok(out)
}

/// Filtered evaluation of `test` against all known triples `known`.
/// The parameter store is only read.
pub fn evaluate(
    test: &[Triple],
    known: &KnownTriples,
    spec: &ModelSpec,
    rows: &dyn RowSource,
    options: EvalOptions,
) -> Result<Evaluation, ModelError> {
    let ranks = test
        .par_iter()
        .map(|t| rank_query(spec, rows, known, t, options))
        .collect::<Result<Vec<_>, _>>()?;
    let collect = |pred: fn(Direction) -> bool| -> Vec<usize> {
        ranks.iter().flatten().filter(|r| pred(r.direction)).map(|r| r.rank).collect()
    };
    let link = MetricReport::from_ranks(&collect(|d| d != Direction::Relation));
    let relation = options
        .relations
        .then(|| MetricReport::from_ranks(&collect(|d| d == Direction::Relation)));
    Ok(Evaluation { link, relation, ranks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn set(v: &[usize]) -> HashSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn rank_examples() {
        assert_eq!(filtered_rank(&[3.0, 2.0, 1.0], 0, &set(&[])).unwrap(), 1);
        assert_eq!(filtered_rank(&[3.0, 2.0, 1.0], 2, &set(&[0])).unwrap(), 2);
        assert_eq!(filtered_rank(&[1.0, 1.0, 1.0], 1, &set(&[])).unwrap(), 2);
        assert!(filtered_rank(&[1.0], 3, &set(&[])).is_err());
        // the true index is never filtered away
        assert_eq!(filtered_rank(&[0.0, 5.0], 1, &set(&[1])).unwrap(), 1);
    }

    #[test]
    fn report_examples() {
        let r = MetricReport::from_ranks(&[1, 2, 4]);
        assert_relative_eq!(r.mrr, 0.583333, epsilon = 1e-6);
        assert_relative_eq!(r.hits_at(1), 1.0 / 3.0);
        assert_relative_eq!(r.hits_at(3), 2.0 / 3.0);
        assert_eq!(r.hits_at(10), 1.0);

        let perfect = MetricReport::from_ranks(&[1, 1, 1, 1]);
        assert_eq!(perfect.mrr, 1.0);
        assert_eq!(perfect.hits_at(1), 1.0);
    }

    #[test]
    fn report_json_shape() {
        let r = MetricReport::from_ranks(&[1, 2]);
        assert_eq!(r.to_json(), r#"{"mrr":0.75,"hits":{"1":0.5,"3":1.0,"10":1.0},"queries":2}"#);
    }
}
