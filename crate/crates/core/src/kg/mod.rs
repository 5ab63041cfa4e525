//! ConceptNet-style knowledge graph store.

mod graph;
mod snapshot;
mod synth;

pub use graph::{
    load_graph, normalize_label, ConceptId, KnowledgeGraph, RelationId, RelationVocab, Triple, TripleId,
    DEFAULT_RELATION_CAPACITY,
};
pub use snapshot::{read_snapshot, write_snapshot, SNAPSHOT_MAGIC};
pub use synth::{generate_synthetic_graph, PlantedFact, SynthConfig, SyntheticGraph, CONCEPTNET_RELATIONS};
