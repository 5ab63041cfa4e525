//! Sub-graph encoder: relational graph attention, LeakyReLU, graph
//! convolution, with exact reverse-mode gradients.

mod encoder;
mod params;

pub use encoder::{
    gcn_forward, kg_encode, kg_encode_backward, normalized_adjacency, rgat_forward, AttentionWeight, EncodedSubgraph,
    KgGradients,
};
pub use params::{KgEncoderConfig, KgEncoderParams, KG_CHECKPOINT_MAGIC, RELATION_FEATURE_DIM};

#[cfg(test)]
pub(crate) use encoder::tests::random_subgraph;
