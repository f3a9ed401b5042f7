use crate::graph::SceneGraph;

/// Several scene graphs merged into one disconnected graph with offset node ids.
#[derive(Debug, Clone, Default)]
pub struct GraphBatch {
    pub classes: Vec<usize>,
    pub subjects: Vec<usize>,
    pub predicates: Vec<usize>,
    pub objects: Vec<usize>,
    /// Per input graph: first node and first triplet in the merged graph.
    pub offsets: Vec<(usize, usize)>,
}

impl GraphBatch {
    pub fn new<'a>(graphs: impl IntoIterator<Item = &'a SceneGraph>) -> Self {
        let mut b = GraphBatch::default();
        for g in graphs {
            let base = b.classes.len();
            b.offsets.push((base, b.subjects.len()));
            b.classes.extend(g.objects().iter().map(|o| o.class_id));
            for t in g.triplets() {
                b.subjects.push(base + t.subject);
                b.predicates.push(t.predicate.index());
                b.objects.push(base + t.object);
            }
        }
        b
    }

    pub fn single(graph: &SceneGraph) -> Self {
        Self::new(std::iter::once(graph))
    }

    pub fn num_objects(&self) -> usize {
        self.classes.len()
    }

    pub fn num_triplets(&self) -> usize {
        self.subjects.len()
    }
}
