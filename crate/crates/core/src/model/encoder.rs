//! Graph-convolutional encoder producing object and predicate embeddings.
//!
//! Each round runs one MLP over every `subject ‖ predicate ‖ object` row,
//! splits the output back into three candidates, replaces predicate vectors by
//! their candidate and sets each object to the mean of the candidates it
//! received. Objects in no triplet keep their vector.

use super::batch::GraphBatch;
use super::config::{names, ModelConfig};
use crate::error::{Error, Result};
use crate::graph::{SceneGraph, Triplet};
use crate::numerics::{mlp_forward, Activation, ParamStore, PoolSource, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Encoder state on a tape: `objects` is `N×d`, `predicates` is `M×d`.
#[derive(Debug, Clone, Copy)]
pub struct EncodedVars {
    pub objects: Var,
    pub predicates: Var,
}

/// Looks up initial vectors from the class and predicate tables.
pub fn init_embeddings<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    batch: &GraphBatch,
) -> Result<EncodedVars> {
    let classes = tape.param(store, names::CLASS_TABLE)?;
    let num_classes = tape.value(classes).dims2()?.0;
    if let Some(&c) = batch.classes.iter().find(|&&c| c >= num_classes) {
        return Err(Error::UnknownClass(c));
    }
    let objects = tape.gather_rows(classes, &batch.classes)?;
    let preds = tape.param(store, names::PREDICATE_TABLE)?;
    let predicates = tape.gather_rows(preds, &batch.predicates)?;
    Ok(EncodedVars { objects, predicates })
}

/// `subject ‖ predicate ‖ object` rows, one per triplet (`M×3d`).
pub fn triplet_rows<T: Scalar>(tape: &mut Tape<T>, emb: EncodedVars, batch: &GraphBatch) -> Result<Var> {
    let s = tape.gather_rows(emb.objects, &batch.subjects)?;
    let o = tape.gather_rows(emb.objects, &batch.objects)?;
    tape.concat_cols(&[s, emb.predicates, o])
}

const RMS_EPS: f64 = 1e-6;

/// One message-passing round. Candidates are RMS-normalized before pooling so
/// feature scale cannot grow across rounds.
pub fn graph_conv_round<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    config: &ModelConfig,
    emb: EncodedVars,
    batch: &GraphBatch,
    round: usize,
) -> Result<EncodedVars> {
    if batch.num_triplets() == 0 {
        return Ok(emb);
    }
    let d = config.d_embed;
    let rows = triplet_rows(tape, emb, batch)?;
    let n_layers = config.gcn_dims().len() - 1;
    let out = mlp_forward(
        tape,
        store,
        &names::gcn_round(round),
        rows,
        n_layers,
        Activation::LeakyRelu(config.leaky_slope),
    )?;
    let eps = T::cast_from(RMS_EPS);
    let cand_s = tape.slice_cols(out, 0, d)?;
    let cand_s = tape.rms_norm_rows(cand_s, eps)?;
    let cand_p = tape.slice_cols(out, d, 2 * d)?;
    let cand_p = tape.rms_norm_rows(cand_p, eps)?;
    let cand_o = tape.slice_cols(out, 2 * d, 3 * d)?;
    let cand_o = tape.rms_norm_rows(cand_o, eps)?;
    let objects = tape.pool_mean(
        vec![
            PoolSource { rows: cand_s, targets: batch.subjects.clone() },
            PoolSource { rows: cand_o, targets: batch.objects.clone() },
        ],
        emb.objects,
    )?;
    Ok(EncodedVars { objects, predicates: cand_p })
}

/// Table lookup followed by `config.n_rounds` graph-convolution rounds.
pub fn encode_batch<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    config: &ModelConfig,
    batch: &GraphBatch,
) -> Result<EncodedVars> {
    config.validate()?;
    let mut emb = init_embeddings(tape, store, batch)?;
    for r in 0..config.n_rounds {
        emb = graph_conv_round(tape, store, config, emb, batch, r)?;
    }
    Ok(emb)
}

/// Final embeddings of one graph.
#[derive(Debug, Clone)]
pub struct EmbeddingSet<'g, T> {
    pub graph: &'g SceneGraph,
    /// `num_objects × d_embed`
    pub object_vecs: Tensor<T>,
    /// `num_triplets × d_embed`
    pub predicate_vecs: Tensor<T>,
}

pub fn encode_graph<'g, T: Scalar>(
    graph: &'g SceneGraph,
    store: &ParamStore<T>,
    config: &ModelConfig,
) -> Result<EmbeddingSet<'g, T>> {
    let batch = GraphBatch::single(graph);
    let mut tape = Tape::new();
    let emb = encode_batch(&mut tape, store, config, &batch)?;
    Ok(EmbeddingSet {
        graph,
        object_vecs: tape.value(emb.objects).clone(),
        predicate_vecs: tape.value(emb.predicates).clone(),
    })
}

/// `subject ‖ predicate ‖ object` vector of one triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletEmbedding<T> {
    pub triplet: Triplet,
    pub vector: Vec<T>,
}

pub fn triplet_embedding<T: Scalar>(emb: &EmbeddingSet<'_, T>, triplet: &Triplet) -> Result<TripletEmbedding<T>> {
    let idx = emb.graph.triplets().iter().position(|t| t == triplet).ok_or(Error::ForeignTriplet)?;
    let mut vector = Vec::with_capacity(3 * emb.object_vecs.dims2()?.1);
    vector.extend_from_slice(emb.object_vecs.row(triplet.subject));
    vector.extend_from_slice(emb.predicate_vecs.row(idx));
    vector.extend_from_slice(emb.object_vecs.row(triplet.object));
    Ok(TripletEmbedding { triplet: *triplet, vector })
}
