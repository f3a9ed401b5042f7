//! Scene-graph embeddings learned through layout prediction, and
//! structured-query retrieval over them.
//!
//! The numeric stack is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what checkpoints and databases store.

pub mod coco;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod scalar;
pub mod synth;
pub mod retrieval;
pub mod trainer;
mod util;

pub use error::{Error, Result};
pub use geometry::{geometric_predicate, superbox, BoundingBox, Predicate};
pub use graph::{
    build_corpus, build_scene_graph, class_frequencies, AnnotatedObject, AnnotationRecord, ClassVocabulary,
    GraphBuildConfig, ObjectNode, SceneGraph, Triplet,
};
pub use scalar::Scalar;

pub type Tensor = numerics::Tensor<f64>;
pub type Tape = numerics::Tape<f64>;
pub type ParamStore = numerics::ParamStore<f64>;
pub type AdamState = numerics::AdamState<f64>;
