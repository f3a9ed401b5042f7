use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::geometry::Predicate;
use crate::graph::SceneGraph;
use crate::model::encode_graph;
use crate::trainer::Checkpoint;

pub const DATABASE_MAGIC: &[u8; 4] = b"SGDB";
pub const DATABASE_VERSION: u32 = 1;

/// One visual relationship with the embeddings of its three parts.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub record_id: u64,
    pub image_id: u64,
    pub subject_class: usize,
    pub predicate: Predicate,
    pub object_class: usize,
    pub subject_vec: Vec<f64>,
    pub predicate_vec: Vec<f64>,
    pub object_vec: Vec<f64>,
}

impl EmbeddingRecord {
    pub fn labels(&self) -> (usize, Predicate, usize) {
        (self.subject_class, self.predicate, self.object_class)
    }
}

/// Immutable set of records sharing one embedding width and vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDatabase {
    d_embed: usize,
    vocab_hash: u64,
    records: Vec<EmbeddingRecord>,
}

impl EmbeddingDatabase {
    /// Checks widths, finiteness and id uniqueness.
    pub fn new(d_embed: usize, vocab_hash: u64, records: Vec<EmbeddingRecord>) -> Result<Self> {
        if d_embed == 0 {
            return Err(Error::InvalidConfig("d_embed must be positive".into()));
        }
        let mut ids = std::collections::HashSet::with_capacity(records.len());
        for r in &records {
            for v in [&r.subject_vec, &r.predicate_vec, &r.object_vec] {
                if v.len() != d_embed {
                    return Err(Error::ShapeMismatch(format!("record {} has a {}-d vector, expected {d_embed}", r.record_id, v.len())));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("database record"));
                }
            }
            if u32::try_from(r.subject_class).is_err() || u32::try_from(r.object_class).is_err() {
                return Err(Error::UnknownClass(r.subject_class.max(r.object_class)));
            }
            if !ids.insert(r.record_id) {
                return Err(Error::Format(format!("duplicate record id {}", r.record_id)));
            }
        }
        Ok(Self { d_embed, vocab_hash, records })
    }

    pub fn d_embed(&self) -> usize {
        self.d_embed
    }

    pub fn vocab_hash(&self) -> u64 {
        self.vocab_hash
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, record_id: u64) -> Option<&EmbeddingRecord> {
        // ids are dense when built from a corpus
        match self.records.get(record_id as usize) {
            Some(r) if r.record_id == record_id => Some(r),
            _ => self.records.iter().find(|r| r.record_id == record_id),
        }
    }

    /// Same labels and ids with every vector replaced by standard normal noise.
    pub fn with_random_vectors(&self, seed: u64) -> Self {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let records = self
            .records
            .iter()
            .map(|r| EmbeddingRecord {
                subject_vec: draw(self.d_embed),
                predicate_vec: draw(self.d_embed),
                object_vec: draw(self.d_embed),
                ..r.clone()
            })
            .collect();
        Self { records, ..self.clone() }
    }
}

/// Numeric image id: the parsed id string, or the graph's position in the corpus.
fn numeric_image_id(graph: &SceneGraph, index: usize) -> u64 {
    graph.image_id().parse().unwrap_or(index as u64)
}

/// One record per triplet, numbered in corpus order.
pub fn build_database(checkpoint: &Checkpoint, corpus: &[SceneGraph], vocab_hash: u64) -> Result<EmbeddingDatabase> {
    checkpoint.model.check_store(&checkpoint.store)?;
    checkpoint.check_corpus(corpus)?;
    let d = checkpoint.model.d_embed;
    let mut records = Vec::new();
    for (gi, g) in corpus.iter().enumerate() {
        let emb = encode_graph(g, &checkpoint.store, &checkpoint.model)?;
        let (objects, preds) = (&emb.object_vecs, &emb.predicate_vecs);
        for (ti, t) in g.triplets().iter().enumerate() {
            records.push(EmbeddingRecord {
                record_id: records.len() as u64,
                image_id: numeric_image_id(g, gi),
                subject_class: g.objects()[t.subject].class_id,
                predicate: t.predicate,
                object_class: g.objects()[t.object].class_id,
                subject_vec: objects.row(t.subject).to_vec(),
                predicate_vec: preds.row(ti).to_vec(),
                object_vec: objects.row(t.object).to_vec(),
            });
        }
    }
    EmbeddingDatabase::new(d, vocab_hash, records)
}

pub fn write_database(mut w: impl Write, db: &EmbeddingDatabase) -> Result<()> {
    w.write_all(DATABASE_MAGIC)?;
    w.write_all(&DATABASE_VERSION.to_le_bytes())?;
    w.write_all(&(db.d_embed as u32).to_le_bytes())?;
    w.write_all(&(db.records.len() as u64).to_le_bytes())?;
    w.write_all(&db.vocab_hash.to_le_bytes())?;
    for r in &db.records {
        w.write_all(&r.record_id.to_le_bytes())?;
        w.write_all(&r.image_id.to_le_bytes())?;
        w.write_all(&(r.subject_class as u32).to_le_bytes())?;
        w.write_all(&[r.predicate.index() as u8])?;
        w.write_all(&(r.object_class as u32).to_le_bytes())?;
        for v in [&r.subject_vec, &r.predicate_vec, &r.object_vec] {
            for x in v.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated database".into()),
        _ => Error::Io(e),
    })?;
    Ok(b)
}

fn read_vec(r: &mut impl Read, d: usize) -> Result<Vec<f64>> {
    (0..d).map(|_| Ok(f64::from_le_bytes(read_array(r)?))).collect()
}

pub fn read_database(mut r: impl Read) -> Result<EmbeddingDatabase> {
    if &read_array::<4>(&mut r)? != DATABASE_MAGIC {
        return Err(Error::Format("not an embedding database".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != DATABASE_VERSION {
        return Err(Error::Format(format!("unsupported database version {version}")));
    }
    let d = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let n = u64::from_le_bytes(read_array(&mut r)?);
    let vocab_hash = u64::from_le_bytes(read_array(&mut r)?);
    let mut records = Vec::with_capacity(n.min(1 << 20) as usize);
    for _ in 0..n {
        let record_id = u64::from_le_bytes(read_array(&mut r)?);
        let image_id = u64::from_le_bytes(read_array(&mut r)?);
        let subject_class = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let [p] = read_array::<1>(&mut r)?;
        let predicate = Predicate::from_index(p as usize)
            .ok_or_else(|| Error::Format(format!("bad predicate code {p}")))?;
        let object_class = u32::from_le_bytes(read_array(&mut r)?) as usize;
        records.push(EmbeddingRecord {
            record_id,
            image_id,
            subject_class,
            predicate,
            object_class,
            subject_vec: read_vec(&mut r, d)?,
            predicate_vec: read_vec(&mut r, d)?,
            object_vec: read_vec(&mut r, d)?,
        });
    }
    if r.read(&mut [0u8])? != 0 {
        return Err(Error::Format("trailing bytes after database".into()));
    }
    EmbeddingDatabase::new(d, vocab_hash, records)
}
