//! Text embeddings, the exact cosine top-k triple index and the averaged
//! per-concept feature table.

mod file;
mod index;
mod nodes;
mod provider;

pub use file::{EmbeddingFile, EMBEDDING_MAGIC};
pub use index::{build_index, dot_f32, EmbeddingIndex, Scored};
pub(crate) use index::{rank_order, select_top};
pub use nodes::{build_node_table, NodeEmbeddingTable};
pub(crate) use provider::fnv1a;
pub use provider::{
    cosine_similarity, hash_embed, query_text, verbalize_triple, EmbeddingProvider, FileProvider, HashEmbedder,
    HashMode,
};
