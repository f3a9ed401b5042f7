//! Relationship database, structured queries, ranking and recall evaluation.

mod database;
mod eval;
mod query;

pub use database::{
    build_database, read_database, write_database, EmbeddingDatabase, EmbeddingRecord, DATABASE_MAGIC,
    DATABASE_VERSION,
};
pub use eval::{
    leave_one_out_queries, partition_classes, query_hits, recall_at_k, recall_by_split, Bucket, EvalSplit,
    EvaluationReport, RecallReport, SplitRecall, HEAD_FRACTION,
};
pub use query::{
    is_relevant, rank, similarity, Component, LabelQuery, Prototypes, QueryLabels, QueryMode, QueryVector,
    RankedResult, MAX_SIMILARITY,
};

#[cfg(test)]
mod tests;
