use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::database::EmbeddingDatabase;
use super::query::{is_relevant, rank, QueryLabels, QueryMode, QueryVector};
use crate::error::{Error, Result};
use crate::graph::ClassVocabulary;

pub const HEAD_FRACTION: f64 = 0.2;

/// Queries from every record that has at least one other relevant record.
///
/// Records whose triplet occurs only once can never be hit and are left out;
/// the caller can report `db.len() - queries.len()` as skipped.
pub fn leave_one_out_queries(db: &EmbeddingDatabase, mode: QueryMode) -> Vec<QueryVector> {
    let mut counts: BTreeMap<_, usize> = BTreeMap::new();
    for r in db.records() {
        *counts.entry(r.labels()).or_default() += 1;
    }
    db.records()
        .iter()
        .filter(|r| counts[&r.labels()] > 1)
        .map(|r| QueryVector::from_record(r, mode))
        .collect()
}

fn check_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidQuery("k values must be non-empty and at least 1".into()));
    }
    Ok(())
}

/// For each query and each `k`, whether a relevant record is in the top `k`.
pub fn query_hits(db: &EmbeddingDatabase, queries: &[QueryVector], ks: &[usize]) -> Result<Vec<Vec<bool>>> {
    check_ks(ks)?;
    if queries.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let kmax = *ks.iter().max().expect("non-empty");
    let one = |q: &QueryVector| -> Result<Vec<bool>> {
        let ranked = rank(db, q, kmax)?;
        let first = ranked
            .iter()
            .position(|r| db.get(r.record_id).is_some_and(|rec| is_relevant(q, rec)))
            .map(|p| p + 1);
        Ok(ks.iter().map(|&k| first.is_some_and(|f| f <= k)).collect())
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(queries.len());
    let chunk = queries.len().div_ceil(threads.max(1));
    let parts: Vec<Result<Vec<Vec<bool>>>> = std::thread::scope(|s| {
        let handles: Vec<_> = queries
            .chunks(chunk)
            .map(|qs| s.spawn(move || qs.iter().map(one).collect::<Result<Vec<_>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("ranking thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(queries.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub ks: Vec<usize>,
    /// Mean over queries, one entry per `k`.
    pub per_query: Vec<f64>,
    /// Mean over relationship classes (distinct label triplets) of their per-query recall.
    pub per_class: Vec<f64>,
    pub query_count: usize,
}

/// Subject, predicate index and object of a query; a "class" for per-class recall.
type LabelKey = (Option<usize>, Option<usize>, Option<usize>);

fn aggregate(ks: &[usize], labels: &[QueryLabels], hits: &[Vec<bool>]) -> Result<RecallReport> {
    if hits.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let n = hits.len() as f64;
    let per_query = (0..ks.len()).map(|j| hits.iter().filter(|h| h[j]).count() as f64 / n).collect();
    let mut groups: BTreeMap<LabelKey, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry((l.subject, l.predicate.map(|p| p.index()), l.object)).or_default().push(i);
    }
    let per_class = (0..ks.len())
        .map(|j| {
            let sum: f64 = groups
                .values()
                .map(|idx| idx.iter().filter(|&&i| hits[i][j]).count() as f64 / idx.len() as f64)
                .sum();
            sum / groups.len() as f64
        })
        .collect();
    Ok(RecallReport { ks: ks.to_vec(), per_query, per_class, query_count: hits.len() })
}

/// Fraction of queries with a relevant record in the top `k`, per `k`.
pub fn recall_at_k(db: &EmbeddingDatabase, queries: &[QueryVector], ks: &[usize]) -> Result<RecallReport> {
    let hits = query_hits(db, queries, ks)?;
    let labels: Vec<_> = queries.iter().map(|q| q.labels).collect();
    aggregate(ks, &labels, &hits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Head,
    Tail,
}

/// Head classes are the most frequent `ceil(fraction · C)`; the rest are tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub head: BTreeSet<usize>,
    pub tail: BTreeSet<usize>,
    pub head_fraction: f64,
    /// Position of each class in descending-frequency order.
    order: Vec<usize>,
}

impl EvalSplit {
    pub fn bucket_of_class(&self, class: usize) -> Bucket {
        if self.head.contains(&class) {
            Bucket::Head
        } else {
            Bucket::Tail
        }
    }

    /// Bucket of the rarer of the two classes; a missing class defers to the other.
    pub fn bucket(&self, labels: &QueryLabels) -> Bucket {
        let pos = |c: Option<usize>| c.map(|c| self.order.get(c).copied().unwrap_or(usize::MAX));
        let rarer = match (labels.subject, labels.object) {
            (Some(s), Some(o)) => Some(if pos(Some(s)) >= pos(Some(o)) { s } else { o }),
            (s, o) => s.or(o),
        };
        rarer.map_or(Bucket::Tail, |c| self.bucket_of_class(c))
    }
}

/// Sorts classes by descending frequency, ties by name.
pub fn partition_classes(vocab: &ClassVocabulary, head_fraction: f64) -> EvalSplit {
    let c = vocab.len();
    let mut ids: Vec<usize> = (0..c).collect();
    ids.sort_by(|&a, &b| {
        vocab.frequencies()[b].cmp(&vocab.frequencies()[a]).then_with(|| vocab.names()[a].cmp(&vocab.names()[b]))
    });
    let n_head = ((head_fraction * c as f64).ceil() as usize).min(c);
    let mut order = vec![0; c];
    for (pos, &id) in ids.iter().enumerate() {
        order[id] = pos;
    }
    EvalSplit {
        head: ids[..n_head].iter().copied().collect(),
        tail: ids[n_head..].iter().copied().collect(),
        head_fraction,
        order,
    }
}

/// Recall per bucket. A bucket without queries is `None`, not zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecall {
    pub head: Option<RecallReport>,
    pub tail: Option<RecallReport>,
}

fn split_from_hits(ks: &[usize], queries: &[QueryVector], hits: &[Vec<bool>], split: &EvalSplit) -> Result<SplitRecall> {
    let bucket = |b: Bucket| -> Result<Option<RecallReport>> {
        let (labels, h): (Vec<_>, Vec<_>) = queries
            .iter()
            .zip(hits)
            .filter(|(q, _)| split.bucket(&q.labels) == b)
            .map(|(q, h)| (q.labels, h.clone()))
            .unzip();
        if h.is_empty() {
            Ok(None)
        } else {
            aggregate(ks, &labels, &h).map(Some)
        }
    };
    Ok(SplitRecall { head: bucket(Bucket::Head)?, tail: bucket(Bucket::Tail)? })
}

pub fn recall_by_split(db: &EmbeddingDatabase, queries: &[QueryVector], ks: &[usize], split: &EvalSplit) -> Result<SplitRecall> {
    let hits = query_hits(db, queries, ks)?;
    split_from_hits(ks, queries, &hits, split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mode: QueryMode,
    pub ks: Vec<usize>,
    pub db_size: usize,
    pub query_count: usize,
    /// Records without another relevant record, not used as queries.
    pub skipped_queries: usize,
    pub recall: RecallReport,
    pub head: Option<RecallReport>,
    pub tail: Option<RecallReport>,
}

impl EvaluationReport {
    /// Leave-one-out evaluation of `db` in one mode.
    pub fn run(db: &EmbeddingDatabase, mode: QueryMode, ks: &[usize], split: &EvalSplit) -> Result<Self> {
        let queries = leave_one_out_queries(db, mode);
        let hits = query_hits(db, &queries, ks)?;
        let labels: Vec<_> = queries.iter().map(|q| q.labels).collect();
        let recall = aggregate(ks, &labels, &hits)?;
        let SplitRecall { head, tail } = split_from_hits(ks, &queries, &hits, split)?;
        Ok(Self {
            mode,
            ks: ks.to_vec(),
            db_size: db.len(),
            query_count: queries.len(),
            skipped_queries: db.len() - queries.len(),
            recall,
            head,
            tail,
        })
    }
}
