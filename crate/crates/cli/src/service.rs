//! Query handling shared by the `query` command and the HTTP API.

use serde::{Deserialize, Serialize};

use sgir_core::graph::ClassVocabulary;
use sgir_core::retrieval::{
    is_relevant, partition_classes, rank, Bucket, EmbeddingDatabase, EvalSplit, LabelQuery, Prototypes, QueryMode,
    QueryVector, HEAD_FRACTION,
};
use sgir_core::{BoundingBox, Predicate, SceneGraph};

/// Rounds to 9 significant digits for the wire.
pub fn wire_f64(x: f64) -> f64 {
    if x.is_finite() && x != 0.0 {
        format!("{x:.8e}").parse().unwrap_or(x)
    } else {
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiQueryRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
    pub mode: QueryMode,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiResult {
    pub record_id: u64,
    pub image_id: u64,
    pub labels: Labels,
    pub distance: f64,
    pub similarity: f64,
    pub rank: usize,
    /// Whether the record's labels match every label given in the query.
    pub exact_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiQueryResponse {
    pub query: ApiQueryRequest,
    pub results: Vec<ApiResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabClass {
    pub id: usize,
    pub name: String,
    pub frequency: u64,
    pub bucket: Bucket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabPredicate {
    pub id: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabResponse {
    pub classes: Vec<VocabClass>,
    pub predicates: Vec<VocabPredicate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordResponse {
    pub record_id: u64,
    pub image_id: u64,
    pub source_image: String,
    pub labels: Labels,
    pub subject_box: BoundingBox,
    pub object_box: BoundingBox,
    pub superbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryError {
    /// Structurally invalid request.
    BadRequest(String),
    /// A name that is not in the vocabulary or has no records.
    UnknownLabel { field: &'static str, token: String },
    NotFound(u64),
}

impl std::fmt::Display for QueryError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QueryError::BadRequest(m) => f.write_str(m),
            QueryError::UnknownLabel { field, token } => write!(f, "unknown {field} `{token}`"),
            QueryError::NotFound(id) => write!(f, "no record {id}"),
        }
    }
}

impl std::error::Error for QueryError {}

/// Corpus graphs and, per record id, the (graph, triplet) it came from.
type CorpusIndex = (Vec<SceneGraph>, Vec<(usize, usize)>);

pub struct QueryService {
    db: EmbeddingDatabase,
    vocab: ClassVocabulary,
    prototypes: Prototypes,
    split: EvalSplit,
    corpus: Option<CorpusIndex>,
}

impl QueryService {
    pub fn new(db: EmbeddingDatabase, vocab: ClassVocabulary) -> anyhow::Result<Self> {
        anyhow::ensure!(
            db.vocab_hash() == vocab.hash64(),
            "vocabulary does not match the database (hash {:016x} vs {:016x})",
            vocab.hash64(),
            db.vocab_hash()
        );
        let prototypes = Prototypes::new(&db);
        let split = partition_classes(&vocab, HEAD_FRACTION);
        Ok(Self { db, vocab, prototypes, split, corpus: None })
    }

    /// Attaches the corpus the database was built from, for record geometry.
    pub fn with_corpus(mut self, graphs: Vec<SceneGraph>) -> anyhow::Result<Self> {
        let mut index = Vec::with_capacity(self.db.len());
        for (gi, g) in graphs.iter().enumerate() {
            index.extend((0..g.triplets().len()).map(|ti| (gi, ti)));
        }
        anyhow::ensure!(index.len() == self.db.len(), "corpus has {} triplets but the database {} records", index.len(), self.db.len());
        for r in self.db.records() {
            let &(gi, ti) = index
                .get(r.record_id as usize)
                .ok_or_else(|| anyhow::anyhow!("record id {} is outside the corpus", r.record_id))?;
            let (g, t) = (&graphs[gi], &graphs[gi].triplets()[ti]);
            let labels = (g.objects()[t.subject].class_id, t.predicate, g.objects()[t.object].class_id);
            anyhow::ensure!(labels == r.labels(), "record {} does not match the corpus", r.record_id);
        }
        self.corpus = Some((graphs, index));
        Ok(self)
    }

    pub fn db(&self) -> &EmbeddingDatabase {
        &self.db
    }

    pub fn vocab(&self) -> &ClassVocabulary {
        &self.vocab
    }

    pub fn split(&self) -> &EvalSplit {
        &self.split
    }

    fn labels(&self, s: usize, p: Predicate, o: usize) -> Labels {
        let name = |c: usize| self.vocab.name(c).map_or_else(|| format!("class_{c}"), str::to_string);
        Labels { subject: name(s), predicate: p.name().to_string(), object: name(o) }
    }

    fn class_id(&self, field: &'static str, name: &Option<String>) -> Result<Option<usize>, QueryError> {
        name.as_deref()
            .map(|n| {
                self.vocab
                    .index_of(n.trim())
                    .ok_or_else(|| QueryError::UnknownLabel { field, token: n.to_string() })
            })
            .transpose()
    }

    pub fn vocab_response(&self) -> VocabResponse {
        let classes = (0..self.vocab.len())
            .map(|id| VocabClass {
                id,
                name: self.vocab.names()[id].clone(),
                frequency: self.vocab.frequencies()[id],
                bucket: self.split.bucket_of_class(id),
            })
            .collect();
        let predicates =
            Predicate::ALL.iter().map(|p| VocabPredicate { id: p.index(), name: p.name().to_string() }).collect();
        VocabResponse { classes, predicates }
    }

    pub fn query(&self, req: &ApiQueryRequest) -> Result<ApiQueryResponse, QueryError> {
        if req.k == 0 {
            return Err(QueryError::BadRequest("k must be at least 1".into()));
        }
        let given = [req.subject.is_some(), req.predicate.is_some(), req.object.is_some()];
        if QueryMode::from_parts(given[0], given[1], given[2]) != Some(req.mode) {
            return Err(QueryError::BadRequest(format!("mode {} does not match the given fields", req.mode)));
        }
        let subject = self.class_id("subject", &req.subject)?;
        let object = self.class_id("object", &req.object)?;
        let predicate = req
            .predicate
            .as_deref()
            .map(|p| Predicate::parse(p).ok_or_else(|| QueryError::UnknownLabel { field: "predicate", token: p.to_string() }))
            .transpose()?;
        // a name can be in the vocabulary yet have no records in this database
        let unknown = |field: &'static str, token: &Option<String>| QueryError::UnknownLabel {
            field,
            token: token.clone().unwrap_or_default(),
        };
        if subject.is_some_and(|c| self.prototypes.class(c).is_none()) {
            return Err(unknown("subject", &req.subject));
        }
        if object.is_some_and(|c| self.prototypes.class(c).is_none()) {
            return Err(unknown("object", &req.object));
        }
        if predicate.is_some_and(|p| self.prototypes.predicate(p).is_none()) {
            return Err(unknown("predicate", &req.predicate));
        }
        let lq = LabelQuery { subject, predicate, object, mode: req.mode };
        let qv = self.prototypes.query(&lq).map_err(|e| QueryError::BadRequest(e.to_string()))?;
        self.ranked(req.clone(), &qv, req.k)
    }

    /// Leave-one-out query from a stored record.
    pub fn query_record(&self, record_id: u64, mode: QueryMode, k: usize) -> Result<ApiQueryResponse, QueryError> {
        if k == 0 {
            return Err(QueryError::BadRequest("k must be at least 1".into()));
        }
        let r = self.db.get(record_id).ok_or(QueryError::NotFound(record_id))?;
        let qv = QueryVector::from_record(r, mode);
        let l = self.labels(r.subject_class, r.predicate, r.object_class);
        let parts = mode.components();
        use sgir_core::retrieval::Component::*;
        let echo = ApiQueryRequest {
            subject: parts.contains(&Subject).then(|| l.subject.clone()),
            predicate: parts.contains(&Predicate).then(|| l.predicate.clone()),
            object: parts.contains(&Object).then(|| l.object.clone()),
            mode,
            k,
        };
        self.ranked(echo, &qv, k)
    }

    fn ranked(&self, echo: ApiQueryRequest, qv: &QueryVector, k: usize) -> Result<ApiQueryResponse, QueryError> {
        let ranked = rank(&self.db, qv, k).map_err(|e| QueryError::BadRequest(e.to_string()))?;
        let results = ranked
            .iter()
            .map(|h| {
                let r = self.db.get(h.record_id).expect("ranked ids exist");
                ApiResult {
                    record_id: r.record_id,
                    image_id: r.image_id,
                    labels: self.labels(r.subject_class, r.predicate, r.object_class),
                    distance: wire_f64(h.distance),
                    similarity: wire_f64(h.similarity),
                    rank: h.rank,
                    exact_match: is_relevant(qv, r),
                }
            })
            .collect();
        Ok(ApiQueryResponse { query: echo, results })
    }

    pub fn record(&self, record_id: u64) -> Result<RecordResponse, QueryError> {
        let r = self.db.get(record_id).ok_or(QueryError::NotFound(record_id))?;
        let (graphs, index) = self.corpus.as_ref().ok_or(QueryError::NotFound(record_id))?;
        let (gi, ti) = index[record_id as usize];
        let g = &graphs[gi];
        let t = &g.triplets()[ti];
        let (sb, ob) = (g.objects()[t.subject].bbox, g.objects()[t.object].bbox);
        Ok(RecordResponse {
            record_id,
            image_id: r.image_id,
            source_image: g.image_id().to_string(),
            labels: self.labels(r.subject_class, r.predicate, r.object_class),
            subject_box: sb,
            object_box: ob,
            superbox: sgir_core::superbox(&sb, &ob),
        })
    }
}
