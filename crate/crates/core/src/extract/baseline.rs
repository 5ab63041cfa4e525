use std::cmp::Ordering;
use std::time::{Duration, Instant};

use super::{ExtractionMethod, ExtractionReport, Subgraph};
use crate::embed::NodeEmbeddingTable;
use crate::error::{Error, Result};
use crate::kg::{normalize_label, ConceptId, KnowledgeGraph, TripleId};

/// Concepts whose label occurs in the question as a whole-word, case-folded
/// substring, sorted by id.
///
/// Labels made of alphanumeric words separated by single spaces are found by
/// n-gram lookup over the question's words; any other label is located by a
/// direct boundary-checked scan.
pub fn ground_concepts(question: &str, g: &KnowledgeGraph) -> Vec<ConceptId> {
    let text = normalize_label(question);
    let lex = g.lexicon();
    let mut found = Vec::new();

    let words = word_spans(&text);
    let mut key = String::new();
    for start in 0..words.len() {
        key.clear();
        for end in start..words.len().min(start + lex.max_words) {
            if end > start {
                // n-grams only continue across a single space
                if &text[words[end - 1].1..words[end].0] != " " {
                    break;
                }
                key.push(' ');
            }
            key.push_str(&text[words[end].0..words[end].1]);
            if let Some(c) = g.find_normalized(&key) {
                found.push(c);
            }
        }
    }
    for &c in &lex.irregular {
        if contains_whole_word(&text, g.concept_label(c)) {
            found.push(c);
        }
    }
    found.sort_unstable();
    found.dedup();
    found
}

/// Byte spans of maximal alphanumeric runs.
fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        match (ch.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

pub(crate) fn contains_whole_word(text: &str, label: &str) -> bool {
    if label.is_empty() {
        return false;
    }
    text.match_indices(label).any(|(i, _)| {
        let before = text[..i].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after = text[i + label.len()..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        before && after
    })
}

/// Concepts within two undirected hops of `seeds`, in discovery order, and
/// the number of adjacency entries scanned to find them.
pub(crate) fn two_hop_candidates(g: &KnowledgeGraph, seeds: &[ConceptId]) -> (Vec<ConceptId>, usize) {
    let mut seen = vec![false; g.num_concepts()];
    let mut out: Vec<ConceptId> = Vec::new();
    for &s in seeds {
        if !seen[s.index()] {
            seen[s.index()] = true;
            out.push(s);
        }
    }
    let mut scanned = 0;
    let mut frontier = 0..out.len();
    for _ in 0..2 {
        let level_end = out.len();
        for i in frontier {
            let c = out[i];
            for &t in g.out_edges(c).iter().chain(g.in_edges(c)) {
                scanned += 1;
                let tr = g.triple(t);
                let other = if tr.subject == c { tr.object } else { tr.subject };
                if !seen[other.index()] {
                    seen[other.index()] = true;
                    out.push(other);
                }
            }
        }
        frontier = level_end..out.len();
    }
    (out, scanned)
}

/// Cosine between a feature row (f64) and the query.
fn node_score(row: &[f64], query: &[f64], query_norm: f64) -> f64 {
    let mut dot = 0.0;
    let mut nn = 0.0;
    for (&a, &b) in row.iter().zip(query) {
        dot += a * b;
        nn += a * a;
    }
    if nn == 0.0 || query_norm == 0.0 {
        return 0.0;
    }
    (dot / (nn.sqrt() * query_norm)).clamp(-1.0, 1.0)
}

/// Higher score first, then lower concept id.
fn node_order(a: &(f64, ConceptId), b: &(f64, ConceptId)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Concept-ranking extraction: ground the question, expand two hops, rank
/// candidates against the query and induce every graph edge among the kept
/// nodes.
///
/// A question that grounds nothing yields an empty sub-graph and a zeroed
/// report. `triples_considered` counts adjacency entries scanned during
/// expansion plus those scanned while inducing edges. An edge's score is the
/// mean of its endpoints' scores.
pub fn extract_baseline(
    query_id: &str,
    question: &str,
    query: &[f32],
    g: &KnowledgeGraph,
    table: &NodeEmbeddingTable,
    node_cap: usize,
) -> Result<(Subgraph, ExtractionReport)> {
    let start = Instant::now();
    if g.num_triples() == 0 {
        return Err(Error::EmptyGraph);
    }
    if node_cap < 2 {
        return Err(Error::InvalidConfig(format!("extract_baseline needs node_cap >= 2 (got {node_cap})")));
    }
    if query.len() != table.dim() {
        return Err(Error::DimensionMismatch { expected: table.dim(), got: query.len() });
    }
    let seeds = ground_concepts(question, g);
    if seeds.is_empty() {
        let report = ExtractionReport {
            method: ExtractionMethod::Baseline,
            wall_clock: Duration::ZERO,
            triples_considered: 0,
            triples_kept: 0,
            nodes_kept: 0,
        };
        return Ok((Subgraph::empty(query_id, table.dim()), report));
    }

    let (candidates, mut scanned) = two_hop_candidates(g, &seeds);
    let q: Vec<f64> = query.iter().map(|&x| x as f64).collect();
    let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut scored: Vec<(f64, ConceptId)> = candidates.iter().map(|&c| (node_score(table.row(c), &q, qn), c)).collect();
    if scored.len() > node_cap {
        scored.select_nth_unstable_by(node_cap - 1, node_order);
        scored.truncate(node_cap);
    }
    scored.sort_unstable_by(node_order);

    let mut local = vec![u32::MAX; g.num_concepts()];
    for (i, &(_, c)) in scored.iter().enumerate() {
        local[c.index()] = i as u32;
    }
    let mut induced: Vec<(TripleId, f32)> = Vec::new();
    for &(sa, c) in &scored {
        for &t in g.out_edges(c) {
            scanned += 1;
            let j = local[g.triple(t).object.index()];
            if j != u32::MAX {
                induced.push((t, ((sa + scored[j as usize].0) / 2.0) as f32));
            }
        }
    }
    induced.sort_unstable_by_key(|&(t, _)| t);

    let nodes: Vec<ConceptId> = scored.iter().map(|&(_, c)| c).collect();
    let subgraph = Subgraph::assemble(query_id, g, table, nodes, &induced)?;
    let report = ExtractionReport {
        method: ExtractionMethod::Baseline,
        wall_clock: start.elapsed(),
        triples_considered: scanned,
        triples_kept: subgraph.triples.len(),
        nodes_kept: subgraph.nodes.len(),
    };
    Ok((subgraph, report))
}
