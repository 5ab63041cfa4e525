use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::embed::{verbalize_triple, NodeEmbeddingTable};
use crate::error::{Error, Result};
use crate::kg::{ConceptId, KnowledgeGraph, RelationId, TripleId};

/// Directed, typed edge between local node indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgraphEdge {
    pub src: usize,
    pub relation: RelationId,
    pub dst: usize,
}

/// The compact query-conditioned graph fed to the encoder.
///
/// `edges[i]` is the selected triple `triples[i]` and `scores[i]` its
/// retrieval score. Row `i` of `node_features` is the feature-table row of
/// `nodes[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgraph {
    pub query_id: String,
    pub nodes: Vec<ConceptId>,
    pub edges: Vec<SubgraphEdge>,
    pub triples: Vec<TripleId>,
    pub scores: Vec<f32>,
    pub node_features: Array2<f64>,
}

impl Subgraph {
    pub fn empty(query_id: impl Into<String>, dim: usize) -> Self {
        Self {
            query_id: query_id.into(),
            nodes: Vec::new(),
            edges: Vec::new(),
            triples: Vec::new(),
            scores: Vec::new(),
            node_features: Array2::zeros((0, dim)),
        }
    }

    /// Assembles a sub-graph from an ordered node list and selected triples,
    /// both of whose endpoints must be among `nodes`.
    pub fn assemble(
        query_id: impl Into<String>,
        g: &KnowledgeGraph,
        table: &NodeEmbeddingTable,
        nodes: Vec<ConceptId>,
        selected: &[(TripleId, f32)],
    ) -> Result<Self> {
        let local = |c: ConceptId| nodes.iter().position(|&n| n == c);
        let mut edges = Vec::with_capacity(selected.len());
        for &(t, _) in selected {
            let triple = g.triple(t);
            match (local(triple.subject), local(triple.object)) {
                (Some(src), Some(dst)) => edges.push(SubgraphEdge { src, relation: triple.relation, dst }),
                _ => return Err(Error::InvalidConfig(format!("triple {t} has an endpoint outside the node list"))),
            }
        }
        let node_features = features(table, &nodes);
        Ok(Self {
            query_id: query_id.into(),
            nodes,
            edges,
            triples: selected.iter().map(|&(t, _)| t).collect(),
            scores: selected.iter().map(|&(_, s)| s).collect(),
            node_features,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn dim(&self) -> usize {
        self.node_features.ncols()
    }

    pub fn verbalized(&self, g: &KnowledgeGraph) -> Vec<String> {
        self.triples.iter().map(|&t| verbalize_triple(g.triple(t), g)).collect()
    }

    /// Returns a copy with node `i` moved to position `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.nodes.len());
        let mut nodes = self.nodes.clone();
        let mut feats = self.node_features.clone();
        for (i, &p) in perm.iter().enumerate() {
            nodes[p] = self.nodes[i];
            feats.row_mut(p).assign(&self.node_features.row(i));
        }
        let edges = self
            .edges
            .iter()
            .map(|e| SubgraphEdge { src: perm[e.src], relation: e.relation, dst: perm[e.dst] })
            .collect();
        Self { nodes, edges, node_features: feats, ..self.clone() }
    }

    pub fn to_record(&self, g: &KnowledgeGraph) -> SubgraphRecord {
        SubgraphRecord {
            query_id: self.query_id.clone(),
            nodes: self.nodes.clone(),
            node_labels: self.nodes.iter().map(|&c| g.concept_label(c).to_owned()).collect(),
            edges: self.edges.iter().map(|e| (e.src, e.relation, e.dst)).collect(),
            triples: self.triples.clone(),
            scores: self.scores.clone(),
            verbalized: self.verbalized(g),
        }
    }

    /// Rebuilds a sub-graph from a record, re-reading features from `table`.
    pub fn from_record(rec: &SubgraphRecord, table: &NodeEmbeddingTable) -> Self {
        Self {
            query_id: rec.query_id.clone(),
            nodes: rec.nodes.clone(),
            edges: rec.edges.iter().map(|&(src, relation, dst)| SubgraphEdge { src, relation, dst }).collect(),
            triples: rec.triples.clone(),
            scores: rec.scores.clone(),
            node_features: features(table, &rec.nodes),
        }
    }
}

pub(crate) fn features(table: &NodeEmbeddingTable, nodes: &[ConceptId]) -> Array2<f64> {
    let dim = table.dim();
    let mut out = Array2::zeros((nodes.len(), dim));
    for (i, &c) in nodes.iter().enumerate() {
        out.row_mut(i).iter_mut().zip(table.row(c)).for_each(|(o, &x)| *o = x);
    }
    out
}

/// One JSON-lines record of the `extract` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphRecord {
    pub query_id: String,
    pub nodes: Vec<ConceptId>,
    pub node_labels: Vec<String>,
    pub edges: Vec<(usize, RelationId, usize)>,
    pub triples: Vec<TripleId>,
    pub scores: Vec<f32>,
    pub verbalized: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractionMethod {
    Proposed,
    Baseline,
}

impl fmt::Display for ExtractionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExtractionMethod::Proposed => "proposed",
            ExtractionMethod::Baseline => "baseline",
        })
    }
}

impl FromStr for ExtractionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(ExtractionMethod::Proposed),
            "baseline" => Ok(ExtractionMethod::Baseline),
            other => Err(Error::InvalidConfig(format!("unknown extraction method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionReport {
    pub method: ExtractionMethod,
    pub wall_clock: Duration,
    pub triples_considered: usize,
    pub triples_kept: usize,
    pub nodes_kept: usize,
}
