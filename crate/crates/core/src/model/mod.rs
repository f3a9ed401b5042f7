//! Scene-graph encoder, layout heads and their supervision.

mod batch;
mod config;
mod encoder;
mod heads;
mod raster;

pub use batch::GraphBatch;
pub use config::{names, ModelConfig, TRIPLET_MASK_CLASSES};
pub use encoder::{
    encode_batch, encode_graph, graph_conv_round, init_embeddings, triplet_embedding, triplet_rows, EmbeddingSet,
    EncodedVars, TripletEmbedding,
};
pub use heads::{
    batch_loss, compute_losses, forward, predict_layout, predict_object_layout, predict_superbox,
    predict_triplet_mask, squash_boxes, to_bounding_box, LayoutPrediction, LayoutPredictionVars, LossBreakdown,
    LossVars, LossWeights,
};
pub use raster::{rasterize_targets, triplet_mask, BatchTargets, LayoutTarget, BACKGROUND, OBJECT, SUBJECT};
