use super::EmbeddingIndex;
use crate::error::{Error, Result};
use crate::kg::{ConceptId, KnowledgeGraph};

/// Per-concept features: the mean of the raw embeddings of every triple the
/// concept occurs in. Stored unnormalised, in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddingTable {
    dim: usize,
    data: Vec<f64>,
    counts: Vec<u32>,
}

impl NodeEmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn row(&self, c: ConceptId) -> &[f64] {
        &self.data[c.index() * self.dim..(c.index() + 1) * self.dim]
    }

    pub fn occurrences(&self, c: ConceptId) -> u32 {
        self.counts[c.index()]
    }
}

/// One-time preprocessing pass over the index. Triples are accumulated in
/// triple-id order whatever the index row order; a reflexive triple counts
/// once for its concept.
pub fn build_node_table(g: &KnowledgeGraph, idx: &EmbeddingIndex) -> Result<NodeEmbeddingTable> {
    if idx.len() != g.num_triples() {
        return Err(Error::DimensionMismatch { expected: g.num_triples(), got: idx.len() });
    }
    let dim = idx.dim();
    let mut row_of = vec![usize::MAX; g.num_triples()];
    for (r, t) in idx.triple_ids().iter().enumerate() {
        match row_of.get_mut(t.index()) {
            Some(slot) if *slot == usize::MAX => *slot = r,
            _ => return Err(Error::InvalidConfig(format!("index row for triple {t} is duplicated or out of range"))),
        }
    }
    let mut data = vec![0f64; g.num_concepts() * dim];
    let mut counts = vec![0u32; g.num_concepts()];
    for (t, &r) in g.triples().iter().zip(&row_of) {
        let norm = idx.norm(r) as f64;
        let row = idx.row(r);
        let mut add = |c: ConceptId| {
            let dst = &mut data[c.index() * dim..(c.index() + 1) * dim];
            dst.iter_mut().zip(row).for_each(|(d, &x)| *d += x as f64 * norm);
            counts[c.index()] += 1;
        };
        add(t.subject);
        if t.object != t.subject {
            add(t.object);
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(Error::OrphanConcept(c as u32));
        }
        data[c * dim..(c + 1) * dim].iter_mut().for_each(|x| *x /= n as f64);
    }
    Ok(NodeEmbeddingTable { dim, data, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{build_index, verbalize_triple, EmbeddingProvider, HashEmbedder};
    use crate::kg::{generate_synthetic_graph, load_graph};

    #[test]
    fn single_occurrence_equals_triple_embedding() {
        let g = load_graph("IsA\tcat\tanimal\nIsA\tdog\tanimal\n".as_bytes(), 34).unwrap();
        let p = HashEmbedder::new(8, 2).unwrap();
        let idx = build_index(&g, &p).unwrap();
        let tbl = build_node_table(&g, &idx).unwrap();
        let cat = g.find_concept("cat").unwrap();
        let e0 = p.embed_text("cat IsA animal").unwrap();
        for (a, b) in tbl.row(cat).iter().zip(&e0) {
            assert!((a - *b as f64).abs() < 1e-6);
        }
        let animal = g.find_concept("animal").unwrap();
        let e1 = p.embed_text("dog IsA animal").unwrap();
        assert_eq!(tbl.occurrences(animal), 2);
        for i in 0..8 {
            let want = (e0[i] as f64 + e1[i] as f64) / 2.0;
            assert!((tbl.row(animal)[i] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn reflexive_triple_counts_once() {
        let g = load_graph("SimilarTo\tx\tx\n".as_bytes(), 34).unwrap();
        let idx = build_index(&g, &HashEmbedder::new(4, 0).unwrap()).unwrap();
        let tbl = build_node_table(&g, &idx).unwrap();
        assert_eq!(tbl.occurrences(ConceptId(0)), 1);
    }

    #[test]
    fn matches_two_loop_recomputation() {
        let g = generate_synthetic_graph(21, 10, 3, 25).unwrap();
        let p = HashEmbedder::new(6, 9).unwrap();
        let idx = build_index(&g, &p).unwrap();
        let tbl = build_node_table(&g, &idx).unwrap();
        for c in 0..g.num_concepts() {
            let c = ConceptId(c as u32);
            let mut sum = vec![0f64; 6];
            let mut n = 0;
            for t in g.triples() {
                if t.subject == c || t.object == c {
                    let e = p.embed_text(&verbalize_triple(t, &g)).unwrap();
                    sum.iter_mut().zip(&e).for_each(|(s, &x)| *s += x as f64);
                    n += 1;
                }
            }
            assert_eq!(tbl.occurrences(c), n);
            for (a, s) in tbl.row(c).iter().zip(&sum) {
                assert!((a - s / n as f64).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn invariant_under_triple_order_permutation() {
        let g = generate_synthetic_graph(5, 40, 6, 90).unwrap();
        let mut lines: Vec<String> = g
            .triples()
            .iter()
            .map(|t| {
                format!(
                    "{}\t{}\t{}",
                    g.relation_label(t.relation),
                    g.concept_label(t.subject),
                    g.concept_label(t.object)
                )
            })
            .collect();
        lines.reverse();
        let h = load_graph(lines.join("\n").as_bytes(), 34).unwrap();
        let p = HashEmbedder::new(8, 3).unwrap();
        let tg = build_node_table(&g, &build_index(&g, &p).unwrap()).unwrap();
        let th = build_node_table(&h, &build_index(&h, &p).unwrap()).unwrap();
        for c in 0..g.num_concepts() {
            let label = g.concept_label(ConceptId(c as u32));
            let hc = h.find_concept(label).unwrap();
            for (a, b) in tg.row(ConceptId(c as u32)).iter().zip(th.row(hc)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_mismatched_index() {
        let g = generate_synthetic_graph(5, 10, 3, 20).unwrap();
        let h = generate_synthetic_graph(5, 10, 3, 21).unwrap();
        let idx = build_index(&h, &HashEmbedder::new(4, 0).unwrap()).unwrap();
        assert!(build_node_table(&g, &idx).is_err());
    }
}
