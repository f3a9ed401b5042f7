//! Scene graphs, class vocabularies and graph construction from box annotations.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{geometric_predicate, BoundingBox, Predicate};
use crate::util::stable_hash;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectNode {
    pub node_id: usize,
    pub class_id: usize,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub subject: usize,
    pub predicate: Predicate,
    pub object: usize,
}

/// Objects plus directed predicate edges for one image.
///
/// Node ids equal positions in `objects`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    image_id: String,
    objects: Vec<ObjectNode>,
    triplets: Vec<Triplet>,
}

impl SceneGraph {
    pub fn new(
        image_id: impl Into<String>,
        objects: Vec<(usize, BoundingBox)>,
        triplets: Vec<Triplet>,
    ) -> Result<Self> {
        let objects: Vec<ObjectNode> = objects
            .into_iter()
            .enumerate()
            .map(|(node_id, (class_id, bbox))| ObjectNode { node_id, class_id, bbox })
            .collect();
        let mut seen = HashSet::new();
        for t in &triplets {
            if t.subject >= objects.len() || t.object >= objects.len() {
                return Err(Error::InvalidGraph(format!(
                    "triplet ({}, {}) references a missing node",
                    t.subject, t.object
                )));
            }
            if t.subject == t.object {
                return Err(Error::InvalidGraph(format!("self-loop on node {}", t.subject)));
            }
            if !seen.insert((t.subject, t.object)) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate edge ({}, {})",
                    t.subject, t.object
                )));
            }
        }
        Ok(Self { image_id: image_id.into(), objects, triplets })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn objects(&self) -> &[ObjectNode] {
        &self.objects
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn num_triplets(&self) -> usize {
        self.triplets.len()
    }

    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        match self.objects.iter().find(|o| o.class_id >= num_classes) {
            Some(o) => Err(Error::UnknownClass(o.class_id)),
            None => Ok(()),
        }
    }

    /// Same graph with node `i` moved to position `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.objects.len() {
            return Err(Error::InvalidGraph("permutation length mismatch".into()));
        }
        let mut objects = vec![None; perm.len()];
        for (old, &new) in perm.iter().enumerate() {
            let o = self.objects[old];
            objects[new] = Some((o.class_id, o.bbox));
        }
        let objects = objects
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::InvalidGraph("not a permutation".into()))?;
        let triplets = self
            .triplets
            .iter()
            .map(|t| Triplet { subject: perm[t.subject], predicate: t.predicate, object: perm[t.object] })
            .collect();
        Self::new(self.image_id.clone(), objects, triplets)
    }
}

#[derive(Serialize, Deserialize)]
struct WireObject {
    class: usize,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct WireGraph {
    image_id: String,
    objects: Vec<WireObject>,
    triplets: Vec<[usize; 3]>,
}

impl Serialize for SceneGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        WireGraph {
            image_id: self.image_id.clone(),
            objects: self
                .objects
                .iter()
                .map(|o| WireObject { class: o.class_id, bbox: o.bbox.to_array() })
                .collect(),
            triplets: self
                .triplets
                .iter()
                .map(|t| [t.subject, t.predicate.index(), t.object])
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SceneGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let w = WireGraph::deserialize(d)?;
        let objects = w
            .objects
            .into_iter()
            .map(|o| Ok((o.class, BoundingBox::try_from(o.bbox)?)))
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        let triplets = w
            .triplets
            .into_iter()
            .map(|[s, p, o]| {
                let predicate = Predicate::from_index(p)
                    .ok_or_else(|| D::Error::custom(format!("predicate index {p} out of range")))?;
                Ok(Triplet { subject: s, predicate, object: o })
            })
            .collect::<std::result::Result<Vec<_>, D::Error>>()?;
        SceneGraph::new(w.image_id, objects, triplets).map_err(D::Error::custom)
    }
}

/// Writes a graph corpus as JSON Lines, one graph per line.
pub fn write_corpus<W: Write>(mut w: W, graphs: &[SceneGraph]) -> Result<()> {
    for g in graphs {
        serde_json::to_writer(&mut w, g)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus<R: BufRead>(r: R) -> Result<Vec<SceneGraph>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let g = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("corpus line {}: {e}", lineno + 1)))?;
        out.push(g);
    }
    Ok(out)
}

/// Category names plus per-class instance counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabWire")]
pub struct ClassVocabulary {
    names: Vec<String>,
    frequencies: Vec<u64>,
}

#[derive(Deserialize)]
struct VocabWire {
    names: Vec<String>,
    frequencies: Vec<u64>,
}

impl TryFrom<VocabWire> for ClassVocabulary {
    type Error = Error;

    fn try_from(w: VocabWire) -> Result<Self> {
        ClassVocabulary::with_frequencies(w.names, w.frequencies)
    }
}

impl ClassVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let n = names.len();
        Self::with_frequencies(names, vec![0; n])
    }

    pub fn with_frequencies(names: Vec<String>, frequencies: Vec<u64>) -> Result<Self> {
        if names.len() != frequencies.len() {
            return Err(Error::Format(format!(
                "vocabulary has {} names but {} frequencies",
                names.len(),
                frequencies.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Format(format!("duplicate class name `{dup}`")));
        }
        Ok(Self { names, frequencies })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn frequencies(&self) -> &[u64] {
        &self.frequencies
    }

    pub fn name(&self, class_id: usize) -> Option<&str> {
        self.names.get(class_id).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Content hash of the ordered class names; frequencies do not contribute.
    pub fn hash64(&self) -> u64 {
        let mut h = Sha256::new();
        for n in &self.names {
            h.update(n.as_bytes());
            h.update([0u8]);
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

/// Counts object instances per class over `corpus`.
pub fn class_frequencies(corpus: &[SceneGraph], names: Vec<String>) -> Result<ClassVocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut counts = vec![0u64; names.len()];
    for g in corpus {
        for o in g.objects() {
            *counts.get_mut(o.class_id).ok_or(Error::UnknownClass(o.class_id))? += 1;
        }
    }
    ClassVocabulary::with_frequencies(names, counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedObject {
    pub class_id: usize,
    pub bbox: BoundingBox,
}

/// Boxes of one image before graph construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub objects: Vec<AnnotatedObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphBuildConfig {
    /// Boxes below this fraction of the image are dropped.
    pub min_area: f64,
    pub max_objects: usize,
    pub max_triplets: usize,
    pub seed: u64,
}

impl Default for GraphBuildConfig {
    fn default() -> Self {
        Self { min_area: 0.001, max_objects: 8, max_triplets: 8, seed: 0 }
    }
}

/// Builds a scene graph with one edge per retained ordered pair `i < j`.
///
/// When more pairs exist than `max_triplets`, a seeded random subset is kept
/// in pair order. The RNG is keyed by the image id, so the result does not
/// depend on the position of the record in its corpus.
pub fn build_scene_graph(record: &AnnotationRecord, rules: &GraphBuildConfig) -> Result<SceneGraph> {
    let mut kept: Vec<(usize, &AnnotatedObject)> = record
        .objects
        .iter()
        .enumerate()
        .filter(|(_, o)| o.bbox.area() >= rules.min_area)
        .collect();
    if kept.len() > rules.max_objects {
        kept.sort_by(|a, b| b.1.bbox.area().total_cmp(&a.1.bbox.area()).then(a.0.cmp(&b.0)));
        kept.truncate(rules.max_objects);
        kept.sort_by_key(|(i, _)| *i);
    }
    if kept.len() < 2 {
        return Err(Error::TooFewObjects(kept.len()));
    }

    let mut pairs = Vec::new();
    for i in 0..kept.len() {
        for j in i + 1..kept.len() {
            match geometric_predicate(&kept[i].1.bbox, &kept[j].1.bbox) {
                Ok(predicate) => pairs.push(Triplet { subject: i, predicate, object: j }),
                Err(Error::DegenerateGeometry) => {
                    log::debug!("{}: dropping pair ({i}, {j}) with identical boxes", record.image_id)
                }
                Err(e) => return Err(e),
            }
        }
    }
    if pairs.len() > rules.max_triplets {
        let mut rng = ChaCha8Rng::seed_from_u64(rules.seed ^ stable_hash(record.image_id.as_bytes()));
        let mut idx = rand::seq::index::sample(&mut rng, pairs.len(), rules.max_triplets).into_vec();
        idx.sort_unstable();
        pairs = idx.into_iter().map(|i| pairs[i]).collect();
    }

    let objects = kept.iter().map(|(_, o)| (o.class_id, o.bbox)).collect();
    SceneGraph::new(record.image_id.clone(), objects, pairs)
}

/// Builds graphs for every record, skipping records with fewer than two usable objects.
pub fn build_corpus(records: &[AnnotationRecord], rules: &GraphBuildConfig) -> Result<Vec<SceneGraph>> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        match build_scene_graph(r, rules) {
            Ok(g) => out.push(g),
            Err(Error::TooFewObjects(n)) => {
                log::debug!("{}: skipped, {n} usable objects", r.image_id)
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
