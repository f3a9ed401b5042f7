use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::database::{EmbeddingDatabase, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::geometry::Predicate;

/// Similarity reported for distances below `1e-9`.
pub const MAX_SIMILARITY: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Subject,
    Predicate,
    Object,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QueryMode {
    #[serde(rename = "s")]
    S,
    #[serde(rename = "o")]
    O,
    #[serde(rename = "p")]
    P,
    #[serde(rename = "s+o")]
    SO,
    #[serde(rename = "s+p+o")]
    SPO,
}

impl QueryMode {
    pub const ALL: [QueryMode; 5] = [QueryMode::S, QueryMode::O, QueryMode::P, QueryMode::SO, QueryMode::SPO];

    /// Participating parts in `s‖p‖o` order.
    pub fn components(self) -> &'static [Component] {
        use Component::*;
        match self {
            QueryMode::S => &[Subject],
            QueryMode::O => &[Object],
            QueryMode::P => &[Predicate],
            QueryMode::SO => &[Subject, Object],
            QueryMode::SPO => &[Subject, Predicate, Object],
        }
    }

    pub fn wire_name(self) -> &'static str {
        match self {
            QueryMode::S => "s",
            QueryMode::O => "o",
            QueryMode::P => "p",
            QueryMode::SO => "s+o",
            QueryMode::SPO => "s+p+o",
        }
    }

    /// The mode whose parts are exactly the given ones, if any.
    pub fn from_parts(subject: bool, predicate: bool, object: bool) -> Option<Self> {
        match (subject, predicate, object) {
            (true, false, false) => Some(QueryMode::S),
            (false, false, true) => Some(QueryMode::O),
            (false, true, false) => Some(QueryMode::P),
            (true, false, true) => Some(QueryMode::SO),
            (true, true, true) => Some(QueryMode::SPO),
            _ => None,
        }
    }
}

impl fmt::Display for QueryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_name())
    }
}

impl FromStr for QueryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_ascii_lowercase();
        QueryMode::ALL
            .into_iter()
            .find(|m| m.wire_name() == key || format!("{m:?}").eq_ignore_ascii_case(&key))
            .ok_or_else(|| Error::InvalidQuery(format!("unknown mode `{s}`")))
    }
}

/// Labels a query stands for; absent parts are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryLabels {
    pub subject: Option<usize>,
    pub predicate: Option<Predicate>,
    pub object: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryVector {
    pub mode: QueryMode,
    pub vector: Vec<f64>,
    pub labels: QueryLabels,
    /// Set when the query was formed from a database record.
    pub source_record: Option<u64>,
}

fn component(r: &EmbeddingRecord, c: Component) -> &[f64] {
    match c {
        Component::Subject => &r.subject_vec,
        Component::Predicate => &r.predicate_vec,
        Component::Object => &r.object_vec,
    }
}

impl QueryVector {
    /// Query built from a database record, carrying all three of its labels.
    pub fn from_record(record: &EmbeddingRecord, mode: QueryMode) -> Self {
        let vector = mode.components().iter().flat_map(|&c| component(record, c).iter().copied()).collect();
        QueryVector {
            mode,
            vector,
            labels: QueryLabels {
                subject: Some(record.subject_class),
                predicate: Some(record.predicate),
                object: Some(record.object_class),
            },
            source_record: Some(record.record_id),
        }
    }
}

/// Labels of a human-issued query. The given parts must match the mode exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelQuery {
    pub subject: Option<usize>,
    pub predicate: Option<Predicate>,
    pub object: Option<usize>,
    pub mode: QueryMode,
}

impl LabelQuery {
    pub fn check_mode(&self) -> Result<()> {
        let given = QueryMode::from_parts(self.subject.is_some(), self.predicate.is_some(), self.object.is_some());
        if given == Some(self.mode) {
            Ok(())
        } else {
            Err(Error::InvalidQuery(format!("mode {} does not match the given parts", self.mode)))
        }
    }
}

/// Centroids of database vectors per class and per predicate.
///
/// A class prototype averages the vectors of that class in both subject and
/// object roles.
#[derive(Debug, Clone)]
pub struct Prototypes {
    classes: BTreeMap<usize, Vec<f64>>,
    predicates: BTreeMap<Predicate, Vec<f64>>,
}

fn accumulate<K: Ord>(map: &mut BTreeMap<K, (Vec<f64>, usize)>, key: K, v: &[f64]) {
    let (sum, n) = map.entry(key).or_insert_with(|| (vec![0.0; v.len()], 0));
    sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
    *n += 1;
}

fn finish<K: Ord>(map: BTreeMap<K, (Vec<f64>, usize)>) -> BTreeMap<K, Vec<f64>> {
    map.into_iter().map(|(k, (s, n))| (k, s.into_iter().map(|x| x / n as f64).collect())).collect()
}

impl Prototypes {
    pub fn new(db: &EmbeddingDatabase) -> Self {
        let (mut classes, mut predicates) = (BTreeMap::new(), BTreeMap::new());
        for r in db.records() {
            accumulate(&mut classes, r.subject_class, &r.subject_vec);
            accumulate(&mut classes, r.object_class, &r.object_vec);
            accumulate(&mut predicates, r.predicate, &r.predicate_vec);
        }
        Self { classes: finish(classes), predicates: finish(predicates) }
    }

    pub fn class(&self, id: usize) -> Option<&[f64]> {
        self.classes.get(&id).map(Vec::as_slice)
    }

    pub fn predicate(&self, p: Predicate) -> Option<&[f64]> {
        self.predicates.get(&p).map(Vec::as_slice)
    }

    pub fn query(&self, q: &LabelQuery) -> Result<QueryVector> {
        q.check_mode()?;
        let mut vector = Vec::new();
        let missing_class = |id: usize| Error::UnknownLabel(format!("class {id} has no database records"));
        for &c in q.mode.components() {
            let part = match c {
                Component::Subject => {
                    let id = q.subject.expect("checked by mode");
                    self.class(id).ok_or_else(|| missing_class(id))?
                }
                Component::Object => {
                    let id = q.object.expect("checked by mode");
                    self.class(id).ok_or_else(|| missing_class(id))?
                }
                Component::Predicate => {
                    let p = q.predicate.expect("checked by mode");
                    self.predicate(p).ok_or_else(|| Error::UnknownLabel(p.name().to_string()))?
                }
            };
            vector.extend_from_slice(part);
        }
        Ok(QueryVector {
            mode: q.mode,
            vector,
            labels: QueryLabels { subject: q.subject, predicate: q.predicate, object: q.object },
            source_record: None,
        })
    }
}

/// A record counts as a hit when every label the query carries matches it.
///
/// Queries formed from records carry all three labels, so the full triplet must match.
pub fn is_relevant(query: &QueryVector, record: &EmbeddingRecord) -> bool {
    let l = &query.labels;
    l.subject.is_none_or(|s| s == record.subject_class)
        && l.predicate.is_none_or(|p| p == record.predicate)
        && l.object.is_none_or(|o| o == record.object_class)
}

pub fn similarity(distance: f64) -> f64 {
    if distance < 1e-9 {
        MAX_SIMILARITY
    } else {
        1.0 / distance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub record_id: u64,
    pub distance: f64,
    pub similarity: f64,
    /// 1-based.
    pub rank: usize,
}

fn distance(query: &[f64], record: &EmbeddingRecord, mode: QueryMode, d: usize) -> f64 {
    let mut sum = 0.0;
    for (i, &c) in mode.components().iter().enumerate() {
        let q = &query[i * d..(i + 1) * d];
        sum += q.iter().zip(component(record, c)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    sum.sqrt()
}

/// Top `k` records by ascending L2 distance, ties by record id.
///
/// The query's source record, if any, is skipped.
pub fn rank(db: &EmbeddingDatabase, query: &QueryVector, k: usize) -> Result<Vec<RankedResult>> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    if k == 0 {
        return Err(Error::InvalidQuery("k must be at least 1".into()));
    }
    let d = db.d_embed();
    if query.vector.len() != d * query.mode.components().len() {
        return Err(Error::ShapeMismatch(format!(
            "{}-d query for mode {} over {d}-d parts",
            query.vector.len(),
            query.mode
        )));
    }
    let mut scored: Vec<(f64, u64)> = db
        .records()
        .iter()
        .filter(|r| Some(r.record_id) != query.source_record)
        .map(|r| (distance(&query.vector, r, query.mode, d), r.record_id))
        .collect();
    let cmp = |a: &(f64, u64), b: &(f64, u64)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (distance, record_id))| RankedResult { record_id, distance, similarity: similarity(distance), rank: i + 1 })
        .collect())
}
