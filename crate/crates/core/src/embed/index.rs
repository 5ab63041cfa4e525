use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::provider::{verbalize_triple, EmbeddingProvider};
use super::EmbeddingFile;
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, TripleId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub triple: TripleId,
    pub score: f32,
}

/// Retrieval order: score descending, then triple id ascending.
pub(crate) fn rank_order(a: &Scored, b: &Scored) -> Ordering {
    b.score.total_cmp(&a.score).then(a.triple.cmp(&b.triple))
}

/// Heap entry whose maximum is the worst-ranked candidate.
struct Worst(Scored);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        rank_order(&self.0, &other.0) == Ordering::Equal
    }
}
impl Eq for Worst {}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(&self.0, &other.0)
    }
}

/// Fixed-order f32 dot product with eight independent lanes.
///
/// The summation order is part of the retrieval contract: every score the
/// index reports is produced by this function.
#[inline]
pub fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut tail = 0f32;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    let s = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
    // +0.0 folds -0.0 into 0.0 so equal scores compare equal under total_cmp
    s + tail + 0.0
}

/// Top `k` of `(ids[i], scores[i])` in retrieval order.
pub(crate) fn select_top(scores: &[f32], ids: &[TripleId], k: usize) -> Vec<Scored> {
    if k == 0 {
        return Vec::new();
    }
    if k >= scores.len() {
        let mut all: Vec<Scored> = ids.iter().zip(scores).map(|(&triple, &score)| Scored { triple, score }).collect();
        all.sort_unstable_by(rank_order);
        return all;
    }
    let mut heap: BinaryHeap<Worst> = BinaryHeap::with_capacity(k + 1);
    // Score of the current k-th entry; anything strictly below it cannot enter.
    let mut floor = f32::NEG_INFINITY;
    for (&triple, &score) in ids.iter().zip(scores) {
        if score < floor {
            continue;
        }
        let cand = Scored { triple, score };
        if heap.len() < k {
            heap.push(Worst(cand));
            if heap.len() == k {
                floor = heap.peek().expect("k > 0").0.score;
            }
        } else if rank_order(&cand, &heap.peek().expect("k > 0").0) == Ordering::Less {
            heap.pop();
            heap.push(Worst(cand));
            floor = heap.peek().expect("k > 0").0.score;
        }
    }
    let mut out: Vec<Scored> = heap.into_iter().map(|w| w.0).collect();
    out.sort_unstable_by(rank_order);
    out
}

/// Row-normalised triple embeddings, scanned exhaustively per query.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    rows: Vec<f32>,
    /// L2 norm of each row before normalisation.
    norms: Vec<f32>,
    triple_ids: Vec<TripleId>,
    /// Triple id -> row, `u32::MAX` where a triple has no row.
    row_of: Vec<u32>,
}

impl EmbeddingIndex {
    /// Normalises `raw` (row-major, one row per entry of `triple_ids`).
    pub fn from_raw_rows(dim: usize, raw: Vec<f32>, triple_ids: Vec<TripleId>) -> Result<Self> {
        if raw.len() != dim * triple_ids.len() {
            return Err(Error::DimensionMismatch { expected: dim * triple_ids.len(), got: raw.len() });
        }
        let mut rows = raw;
        let mut norms = Vec::with_capacity(triple_ids.len());
        for (r, chunk) in rows.chunks_mut(dim).enumerate() {
            let norm = chunk.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::Provider { triple: triple_ids[r].0, source: Box::new(Error::ZeroNormInput) });
            }
            chunk.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
            norms.push(norm as f32);
        }
        let max_id = triple_ids.iter().map(|t| t.index() + 1).max().unwrap_or(0);
        let mut row_of = vec![u32::MAX; max_id];
        for (r, t) in triple_ids.iter().enumerate() {
            row_of[t.index()] = r as u32;
        }
        Ok(Self { dim, rows, norms, triple_ids, row_of })
    }

    /// Row holding `triple`, if indexed.
    pub fn row_of(&self, triple: TripleId) -> Option<usize> {
        match self.row_of.get(triple.index()) {
            Some(&r) if r != u32::MAX => Some(r as usize),
            _ => None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.triple_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triple_ids.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.rows[r * self.dim..(r + 1) * self.dim]
    }

    pub fn norm(&self, r: usize) -> f32 {
        self.norms[r]
    }

    pub fn triple_ids(&self) -> &[TripleId] {
        &self.triple_ids
    }

    /// Bytes held by the normalised matrix alone.
    pub fn matrix_bytes(&self) -> usize {
        self.rows.len() * std::mem::size_of::<f32>()
    }

    fn unit_query(&self, query: &[f32]) -> Result<Vec<f32>> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: query.len() });
        }
        let norm = query.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(query.to_vec());
        }
        Ok(query.iter().map(|&x| (x as f64 / norm) as f32).collect())
    }

    /// Cosine score of every row, in row order.
    pub fn scores(&self, query: &[f32]) -> Result<Vec<f32>> {
        let q = self.unit_query(query)?;
        Ok(self.rows.chunks_exact(self.dim).map(|row| dot_f32(row, &q)).collect())
    }

    /// Exact top-k by full scan; ties go to the smaller triple id.
    pub fn top_k(&self, query: &[f32], k: usize) -> Result<Vec<Scored>> {
        let scores = self.scores(query)?;
        Ok(select_top(&scores, &self.triple_ids, k))
    }

    /// Same result as [`top_k`](Self::top_k), with the scan split over
    /// `shards` threads and the per-shard winners merged.
    pub fn top_k_sharded(&self, query: &[f32], k: usize, shards: usize) -> Result<Vec<Scored>> {
        let q = self.unit_query(query)?;
        let shards = shards.clamp(1, self.len().max(1));
        let per = self.len().div_ceil(shards).max(1);
        let mut merged: Vec<Scored> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..self.len())
                .step_by(per)
                .map(|start| {
                    let end = (start + per).min(self.len());
                    let q = &q;
                    s.spawn(move || {
                        let scores: Vec<f32> = self.rows[start * self.dim..end * self.dim]
                            .chunks_exact(self.dim)
                            .map(|row| dot_f32(row, q))
                            .collect();
                        select_top(&scores, &self.triple_ids[start..end], k)
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("scan worker panicked")).collect()
        });
        merged.sort_unstable_by(rank_order);
        merged.truncate(k);
        Ok(merged)
    }

    /// Exports the raw (denormalised) rows keyed by verbalised triple text.
    pub fn to_embedding_file(&self, g: &KnowledgeGraph) -> Result<EmbeddingFile> {
        let ids = self.triple_ids.iter().map(|&t| verbalize_triple(g.triple(t), g)).collect();
        let mut data = Vec::with_capacity(self.rows.len());
        for r in 0..self.len() {
            let n = self.norms[r];
            data.extend(self.row(r).iter().map(|&x| x * n));
        }
        EmbeddingFile::new(self.dim, ids, data)
    }
}

/// Embeds every triple's verbalisation; rows follow triple order.
pub fn build_index(g: &KnowledgeGraph, p: &dyn EmbeddingProvider) -> Result<EmbeddingIndex> {
    if g.num_triples() == 0 {
        return Err(Error::EmptyGraph);
    }
    let dim = p.dim();
    let mut raw = Vec::with_capacity(g.num_triples() * dim);
    for (i, t) in g.triples().iter().enumerate() {
        let wrap = |e: Error| Error::Provider { triple: i as u32, source: Box::new(e) };
        let v = p.embed_text(&verbalize_triple(t, g)).map_err(wrap)?;
        if v.len() != dim {
            return Err(wrap(Error::DimensionMismatch { expected: dim, got: v.len() }));
        }
        raw.extend_from_slice(&v);
    }
    EmbeddingIndex::from_raw_rows(dim, raw, (0..g.num_triples() as u32).map(TripleId).collect())
}
