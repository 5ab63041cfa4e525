use std::io::Write;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{extract_baseline, extract_topk, ExtractionMethod, Subgraph};
use crate::embed::{query_text, EmbeddingIndex, EmbeddingProvider, NodeEmbeddingTable};
use crate::error::{Error, Result};
use crate::eval::{mean_std, proximity};
use crate::kg::{KnowledgeGraph, PlantedFact};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchQuery {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub caption: Option<String>,
    pub answer: String,
}

impl BenchQuery {
    pub fn query_text(&self) -> String {
        query_text(&self.question, self.caption.as_deref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub k: usize,
    pub node_cap: usize,
    pub repeat: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { k: 200, node_cap: super::DEFAULT_NODE_CAP, repeat: 1 }
    }
}

/// One row of the extractor comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: ExtractionMethod,
    pub queries: usize,
    pub runs: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub total_ms: f64,
    pub similarity_mean: f64,
    pub similarity_std: f64,
    pub mean_nodes: f64,
    pub mean_triples_kept: f64,
    pub mean_triples_considered: f64,
}

/// Runs both extractors on every query `cfg.repeat` times, alternating
/// methods so that neither benefits from a warmer cache. Similarity is the
/// proximity of each query's retained triples to its answer.
pub fn bench_extractors(
    workload: &[BenchQuery],
    cfg: BenchConfig,
    g: &KnowledgeGraph,
    idx: &EmbeddingIndex,
    table: &NodeEmbeddingTable,
    p: &dyn EmbeddingProvider,
) -> Result<Vec<BenchRow>> {
    if cfg.repeat == 0 {
        return Err(Error::InvalidConfig("bench repeat must be >= 1".into()));
    }
    let methods = [ExtractionMethod::Proposed, ExtractionMethod::Baseline];
    let mut times: [Vec<f64>; 2] = Default::default();
    let mut stats: [(f64, f64, f64); 2] = Default::default();
    let mut kept: [Vec<Subgraph>; 2] = Default::default();
    for q in workload {
        let query = p.embed_text(&q.query_text())?;
        for rep in 0..cfg.repeat {
            for (m, method) in methods.iter().enumerate() {
                let (sg, report) = match method {
                    ExtractionMethod::Proposed => extract_topk(&q.id, &query, idx, g, table, cfg.k, cfg.node_cap)?,
                    ExtractionMethod::Baseline => extract_baseline(&q.id, &q.question, &query, g, table, cfg.node_cap)?,
                };
                times[m].push(report.wall_clock.as_secs_f64() * 1e3);
                if rep == 0 {
                    stats[m].0 += report.nodes_kept as f64;
                    stats[m].1 += report.triples_kept as f64;
                    stats[m].2 += report.triples_considered as f64;
                    kept[m].push(sg);
                }
            }
        }
    }
    let answers: Vec<&str> = workload.iter().map(|q| q.answer.as_str()).collect();
    let n = workload.len().max(1) as f64;
    let mut rows = Vec::with_capacity(2);
    for (m, method) in methods.into_iter().enumerate() {
        let records: Vec<_> = kept[m].iter().map(|sg| sg.to_record(g)).collect();
        let prox = proximity(&records, &answers, p)?;
        let (mean_ms, std_ms) = mean_std(&times[m]);
        rows.push(BenchRow {
            method,
            queries: workload.len(),
            runs: times[m].len(),
            mean_ms,
            std_ms,
            total_ms: times[m].iter().sum(),
            similarity_mean: prox.mean,
            similarity_std: prox.std,
            mean_nodes: stats[m].0 / n,
            mean_triples_kept: stats[m].1 / n,
            mean_triples_considered: stats[m].2 / n,
        });
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Questions that name the cue concepts of a planted fact and whose answer
/// is the fact's answer concept. Facts are visited round-robin from a seeded
/// shuffle.
pub fn planted_queries(g: &KnowledgeGraph, planted: &[PlantedFact], n: usize, seed: u64) -> Vec<BenchQuery> {
    if planted.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<&PlantedFact> = planted.choose_multiple(&mut rng, planted.len()).collect();
    (0..n)
        .map(|i| {
            let fact = order[i % order.len()];
            let cues: Vec<&str> = fact.cues.iter().map(|&c| g.concept_label(c)).collect();
            BenchQuery {
                id: format!("q{i}"),
                question: format!("which concept relates to {} ?", cues.join(" and ")),
                caption: None,
                answer: g.concept_label(fact.answer).to_owned(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{build_index, build_node_table, HashEmbedder};
    use crate::kg::{load_graph, SynthConfig};

    #[test]
    fn single_triple_graph_gives_identical_subgraphs() {
        let g = load_graph("IsA\tcat\tanimal\n".as_bytes(), 34).unwrap();
        let p = HashEmbedder::new(8, 0).unwrap();
        let idx = build_index(&g, &p).unwrap();
        let table = build_node_table(&g, &idx).unwrap();
        let query = p.embed_text("is a cat an animal").unwrap();
        let (a, _) = extract_topk("q", &query, &idx, &g, &table, 200, 200).unwrap();
        let (b, _) = extract_baseline("q", "is a cat an animal", &query, &g, &table, 200).unwrap();
        let mut an = a.nodes.clone();
        let mut bn = b.nodes.clone();
        an.sort();
        bn.sort();
        assert_eq!(an, bn);
        assert_eq!(a.triples, b.triples);

        let wl = [BenchQuery {
            id: "q".into(),
            question: "is a cat an animal".into(),
            caption: None,
            answer: "animal".into(),
        }];
        let rows =
            bench_extractors(&wl, BenchConfig { repeat: 3, ..Default::default() }, &g, &idx, &table, &p).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].similarity_mean, rows[1].similarity_mean);
        assert!(rows.iter().all(|r| r.runs == 3 && r.mean_ms < 50.0));
    }

    #[test]
    fn planted_queries_name_cues() {
        let sg = SynthConfig::new(1, 200, 10, 600).with_planted(5, 3, 2).generate().unwrap();
        let qs = planted_queries(&sg.graph, &sg.planted, 12, 9);
        assert_eq!(qs.len(), 12);
        for q in &qs {
            let fact = sg.planted.iter().find(|f| sg.graph.concept_label(f.answer) == q.answer).unwrap();
            for &c in &fact.cues {
                assert!(q.question.contains(sg.graph.concept_label(c)));
            }
        }
        assert_eq!(qs, planted_queries(&sg.graph, &sg.planted, 12, 9));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let row = BenchRow {
            method: ExtractionMethod::Baseline,
            queries: 1,
            runs: 1,
            mean_ms: 1.5,
            std_ms: 0.0,
            total_ms: 1.5,
            similarity_mean: 0.2,
            similarity_std: 0.1,
            mean_nodes: 3.0,
            mean_triples_kept: 2.0,
            mean_triples_considered: 9.0,
        };
        let mut buf = Vec::new();
        write_bench_csv(std::slice::from_ref(&row), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("method,queries,runs,mean_ms"));
        let back: BenchRow = csv::Reader::from_reader(text.as_bytes()).deserialize().next().unwrap().unwrap();
        assert_eq!(back, row);
    }
}
