//! Query-conditioned sub-graph extraction.

mod baseline;
mod bench;
mod subgraph;
mod topk;

pub use baseline::{extract_baseline, ground_concepts};
pub use bench::{bench_extractors, planted_queries, write_bench_csv, BenchConfig, BenchQuery, BenchRow};
pub use subgraph::{ExtractionMethod, ExtractionReport, Subgraph, SubgraphEdge, SubgraphRecord};
pub use topk::{extract_topk, DEFAULT_NODE_CAP};
