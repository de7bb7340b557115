//! Evaluation metrics, a miniature retrieval engine and the report harness.

pub mod metrics;
pub mod mps;
pub mod report;
pub mod retrieval;
pub mod simret;

pub use metrics::{cosine, extrema_embedding, mrr, per, rbo, sim_emb, EmbeddingTable};
pub use mps::{mps_candidates, CooccurrenceTable};
pub use report::{
    build_instances, evaluate_instances, rerank_candidates, Bucket, EvalInstance, EvalReport, EvalResources, HarnessConfig,
    InstanceResult, MetricSelection, MetricSummary,
};
pub use retrieval::{retrieve, retrieve_weighted, rm3_expand, Index, RankedList, Rm3Params, WeightedQuery};
pub use simret::{fuse_lists, sim_ret_suite, RetrievalConfig, SimRet};
