use std::collections::HashMap;
use std::time::Instant;

use super::{ExtractionMethod, ExtractionReport, Subgraph};
use crate::embed::{rank_order, select_top};
use crate::embed::{EmbeddingIndex, NodeEmbeddingTable, Scored};
use crate::error::{Error, Result};
use crate::kg::{ConceptId, KnowledgeGraph};

pub const DEFAULT_NODE_CAP: usize = 200;

/// Rough cost of one adjacency lookup relative to one sequential score read.
const RANDOM_ACCESS_COST: usize = 8;

struct NodeSet {
    order: Vec<ConceptId>,
    pos: HashMap<ConceptId, usize>,
    cap: usize,
}

impl NodeSet {
    fn new(cap: usize) -> Self {
        Self { order: Vec::new(), pos: HashMap::new(), cap }
    }

    fn contains(&self, c: ConceptId) -> bool {
        self.pos.contains_key(&c)
    }

    fn is_full(&self) -> bool {
        self.order.len() >= self.cap
    }

    /// Admits both endpoints if the set stays within the cap.
    fn try_admit(&mut self, s: ConceptId, o: ConceptId) -> bool {
        let new = usize::from(!self.contains(s)) + usize::from(s != o && !self.contains(o));
        if self.order.len() + new > self.cap {
            return false;
        }
        for c in [s, o] {
            if !self.contains(c) {
                self.pos.insert(c, self.order.len());
                self.order.push(c);
            }
        }
        true
    }
}

/// Ranked-triple extraction.
///
/// Triples are visited in retrieval order and admitted greedily while the
/// node set stays within `node_cap`; a triple that would overflow the cap is
/// skipped and scanning continues, since a lower-ranked triple may reuse
/// nodes already present. Stops after `k` admissions or when the ranking is
/// exhausted.
pub fn extract_topk(
    query_id: &str,
    query: &[f32],
    idx: &EmbeddingIndex,
    g: &KnowledgeGraph,
    table: &NodeEmbeddingTable,
    k: usize,
    node_cap: usize,
) -> Result<(Subgraph, ExtractionReport)> {
    let start = Instant::now();
    if idx.is_empty() || g.num_triples() == 0 {
        return Err(Error::EmptyGraph);
    }
    if k == 0 || node_cap < 2 {
        return Err(Error::InvalidConfig(format!(
            "extract_topk needs k >= 1 and node_cap >= 2 (k={k}, node_cap={node_cap})"
        )));
    }
    let scores = idx.scores(query)?;
    let n = scores.len();
    let mut nodes = NodeSet::new(node_cap);
    let mut kept: Vec<Scored> = Vec::with_capacity(k.min(n));

    // Rank progressively: only as much of the ordering as the cap forces us
    // to look at gets sorted.
    let mut window = k.min(n);
    let mut processed = 0;
    let mut last_seen: Option<Scored> = None;
    loop {
        let ranked = select_top(&scores, idx.triple_ids(), window);
        for s in &ranked[processed..] {
            let t = g.triple(s.triple);
            if nodes.try_admit(t.subject, t.object) {
                kept.push(*s);
                if kept.len() == k {
                    break;
                }
            }
            last_seen = Some(*s);
        }
        processed = ranked.len();
        if kept.len() == k || processed == n {
            break;
        }
        if nodes.is_full() {
            // Only triples closed over the current node set remain admissible.
            // Walking the kept nodes' adjacency is random access, so prefer it
            // only when it is clearly smaller than another pass over the scores.
            let adjacency: usize = nodes.order.iter().map(|&c| g.out_edges(c).len()).sum();
            if adjacency.saturating_mul(RANDOM_ACCESS_COST) < n - processed {
                complete_closed(&mut kept, k, &nodes, last_seen, &scores, idx, g);
                break;
            }
        }
        window = (window * 4).min(n);
    }

    let selected: Vec<_> = kept.iter().map(|s| (s.triple, s.score)).collect();
    let subgraph = Subgraph::assemble(query_id, g, table, nodes.order, &selected)?;
    let report = ExtractionReport {
        method: ExtractionMethod::Proposed,
        wall_clock: start.elapsed(),
        triples_considered: n,
        triples_kept: subgraph.triples.len(),
        nodes_kept: subgraph.nodes.len(),
    };
    Ok((subgraph, report))
}

fn complete_closed(
    kept: &mut Vec<Scored>,
    k: usize,
    nodes: &NodeSet,
    last_seen: Option<Scored>,
    scores: &[f32],
    idx: &EmbeddingIndex,
    g: &KnowledgeGraph,
) {
    let mut rest: Vec<Scored> = Vec::new();
    for &c in &nodes.order {
        for &t in g.out_edges(c) {
            if !nodes.contains(g.triple(t).object) {
                continue;
            }
            let Some(row) = idx.row_of(t) else { continue };
            let cand = Scored { triple: t, score: scores[row] };
            let unseen = match &last_seen {
                Some(last) => rank_order(&cand, last).is_gt(),
                None => true,
            };
            if unseen {
                rest.push(cand);
            }
        }
    }
    rest.sort_unstable_by(rank_order);
    rest.truncate(k - kept.len());
    kept.extend(rest);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{build_index, build_node_table, EmbeddingProvider, HashEmbedder};
    use crate::kg::{generate_synthetic_graph, load_graph, TripleId};
    use std::collections::HashSet;

    struct Fixture {
        g: KnowledgeGraph,
        idx: EmbeddingIndex,
        table: NodeEmbeddingTable,
        p: HashEmbedder,
    }

    fn fixture(seed: u64, concepts: usize, triples: usize) -> Fixture {
        let g = generate_synthetic_graph(seed, concepts, 12, triples).unwrap();
        let p = HashEmbedder::new(16, seed).unwrap();
        let idx = build_index(&g, &p).unwrap();
        let table = build_node_table(&g, &idx).unwrap();
        Fixture { g, idx, table, p }
    }

    /// Sort everything, then filter with the same cap rule.
    fn oracle(f: &Fixture, q: &[f32], k: usize, cap: usize) -> Vec<TripleId> {
        let mut ranked = f.idx.top_k(q, f.idx.len()).unwrap();
        ranked.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.triple.cmp(&b.triple)));
        let mut set: HashSet<ConceptId> = HashSet::new();
        let mut out = Vec::new();
        for s in ranked {
            let t = f.g.triple(s.triple);
            let mut grown = set.clone();
            grown.insert(t.subject);
            grown.insert(t.object);
            if grown.len() <= cap {
                set = grown;
                out.push(s.triple);
                if out.len() == k {
                    break;
                }
            }
        }
        out
    }

    #[test]
    fn k_one_keeps_best_triple() {
        let f = fixture(1, 200, 600);
        let q = f.p.embed_text("c3 c17 RelatedTo").unwrap();
        let (sg, rep) = extract_topk("q", &q, &f.idx, &f.g, &f.table, 1, 200).unwrap();
        let best = f.idx.top_k(&q, 1).unwrap()[0];
        assert_eq!(sg.triples, vec![best.triple]);
        let t = f.g.triple(best.triple);
        assert_eq!(sg.nodes, vec![t.subject, t.object]);
        assert_eq!((rep.triples_kept, rep.nodes_kept, rep.triples_considered), (1, 2, 600));
    }

    #[test]
    fn reflexive_best_triple_gives_one_node() {
        let g = load_graph("SimilarTo\tx\tx\nIsA\ty\tz\n".as_bytes(), 34).unwrap();
        let p = HashEmbedder::new(8, 0).unwrap();
        let idx = build_index(&g, &p).unwrap();
        let table = build_node_table(&g, &idx).unwrap();
        let q = p.embed_text("x SimilarTo x").unwrap();
        let (sg, _) = extract_topk("q", &q, &idx, &g, &table, 1, 5).unwrap();
        assert_eq!(sg.nodes.len(), 1);
        assert_eq!(sg.edges[0].src, 0);
        assert_eq!(sg.edges[0].dst, 0);
    }

    #[test]
    fn matches_filtered_oracle() {
        let f = fixture(2, 300, 1000);
        for (i, (k, cap)) in [(50, 200), (50, 20), (200, 30), (1000, 7), (5, 2)].into_iter().enumerate() {
            let q = f.p.embed_text(&format!("c{i} c{} question", i * 7 + 1)).unwrap();
            let (sg, rep) = extract_topk("q", &q, &f.idx, &f.g, &f.table, k, cap).unwrap();
            assert_eq!(sg.triples, oracle(&f, &q, k, cap), "k={k} cap={cap}");
            assert!(sg.nodes.len() <= cap);
            assert_eq!(rep.nodes_kept, sg.nodes.len());
        }
    }

    #[test]
    fn node_cap_200_always_respected() {
        let f = fixture(3, 2_000, 8_000);
        for i in 0..20 {
            let q = f.p.embed_text(&format!("c{} c{}", i * 13, i * 31 + 5)).unwrap();
            let (sg, _) = extract_topk("q", &q, &f.idx, &f.g, &f.table, 200, DEFAULT_NODE_CAP).unwrap();
            assert!(sg.nodes.len() <= 200);
            let uniq: HashSet<_> = sg.nodes.iter().collect();
            assert_eq!(uniq.len(), sg.nodes.len());
        }
    }

    #[test]
    fn edges_and_features_are_consistent() {
        let f = fixture(4, 300, 900);
        let q = f.p.embed_text("c1 c2 c3").unwrap();
        let (sg, _) = extract_topk("q", &q, &f.idx, &f.g, &f.table, 60, 40).unwrap();
        for (e, &t) in sg.edges.iter().zip(&sg.triples) {
            let tr = f.g.triple(t);
            assert_eq!(sg.nodes[e.src], tr.subject);
            assert_eq!(sg.nodes[e.dst], tr.object);
            assert_eq!(e.relation, tr.relation);
        }
        for (i, &c) in sg.nodes.iter().enumerate() {
            assert_eq!(sg.node_features.row(i).to_vec(), f.table.row(c).to_vec());
        }
        assert!(sg.scores.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn unbounded_cap_returns_every_triple() {
        let f = fixture(5, 50, 120);
        let q = f.p.embed_text("anything").unwrap();
        let (sg, _) = extract_topk("q", &q, &f.idx, &f.g, &f.table, 120, usize::MAX).unwrap();
        let got: HashSet<_> = sg.triples.iter().collect();
        assert_eq!(got.len(), 120);
    }

    #[test]
    fn empty_graph_errors() {
        let g = load_graph("IsA\ta\tb\n".as_bytes(), 34).unwrap();
        let p = HashEmbedder::new(4, 0).unwrap();
        let idx = build_index(&g, &p).unwrap();
        let table = build_node_table(&g, &idx).unwrap();
        let empty = KnowledgeGraph::new();
        assert!(matches!(extract_topk("q", &[1.0; 4], &idx, &empty, &table, 1, 2), Err(Error::EmptyGraph)));
    }
}
