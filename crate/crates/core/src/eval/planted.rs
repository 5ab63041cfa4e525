use serde::{Deserialize, Serialize};

use super::contrast::Experiment;
use crate::embed::{
    build_index, build_node_table, EmbeddingIndex, EmbeddingProvider, HashEmbedder, NodeEmbeddingTable,
};
use crate::error::Result;
use crate::fusion::{
    dataset_vocab, make_planted_dataset, FusionConfig, KnowledgeSource, PlantedDatasetConfig, QaInstance, TrainConfig,
    Vocab,
};
use crate::kg::{SynthConfig, SyntheticGraph};

/// Every knob of the planted knowledge-contrast task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTask {
    pub graph: SynthConfig,
    pub dataset_seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub dataset: PlantedDatasetConfig,
    /// Width of the hash embeddings and of the model.
    pub dim: usize,
    pub embed_seed: u64,
    /// Triples retrieved per question.
    pub k: usize,
    pub node_cap: usize,
    pub model_seed: u64,
    pub train: TrainConfig,
}

impl PlantedTask {
    /// 2,000 training and 500 validation questions over a 12k-concept graph
    /// whose 20 planted answers each have 250 cue concepts.
    pub fn desk_scale() -> Self {
        Self {
            graph: SynthConfig::new(11, 12_000, 34, 24_000).with_planted(20, 250, 250),
            dataset_seed: 5,
            n_train: 2000,
            n_val: 500,
            dataset: PlantedDatasetConfig::default(),
            dim: 64,
            embed_seed: 11,
            k: 8,
            node_cap: 16,
            model_seed: 1,
            train: TrainConfig { seed: 1, ..TrainConfig::toy() },
        }
    }

    /// Same construction at a size that trains in seconds.
    pub fn small() -> Self {
        Self {
            graph: SynthConfig::new(11, 4000, 34, 8000).with_planted(10, 150, 150),
            n_train: 600,
            n_val: 150,
            dim: 32,
            ..Self::desk_scale()
        }
    }

    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig::new(self.dim, self.dataset.img_dim)
    }

    pub fn build(&self) -> Result<PlantedWorld> {
        let synth = self.graph.generate()?;
        let provider = HashEmbedder::new(self.dim, self.embed_seed)?;
        let index = build_index(&synth.graph, &provider)?;
        let table = build_node_table(&synth.graph, &index)?;
        let instances = make_planted_dataset(
            self.dataset_seed,
            &synth.graph,
            &synth.planted,
            self.n_train,
            self.n_val,
            &self.dataset,
        )?;
        let vocab = dataset_vocab(&instances);
        Ok(PlantedWorld { task: self.clone(), synth, provider, index, table, instances, vocab })
    }
}

/// A built planted task: graph, retrieval structures and questions.
pub struct PlantedWorld {
    pub task: PlantedTask,
    pub synth: SyntheticGraph,
    pub provider: HashEmbedder,
    pub index: EmbeddingIndex,
    pub table: NodeEmbeddingTable,
    pub instances: Vec<QaInstance>,
    pub vocab: Vocab,
}

impl PlantedWorld {
    pub fn knowledge(&self) -> KnowledgeSource<'_> {
        KnowledgeSource {
            graph: &self.synth.graph,
            index: &self.index,
            table: &self.table,
            provider: &self.provider as &dyn EmbeddingProvider,
            k: self.task.k,
            node_cap: self.task.node_cap,
        }
    }

    pub fn experiment(&self) -> Experiment<'_> {
        Experiment {
            fusion: self.task.fusion_config(),
            train: self.task.train,
            model_seed: self.task.model_seed,
            lexical: Some(&self.provider),
        }
    }
}
