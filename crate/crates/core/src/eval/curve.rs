use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::proximity::triple_similarities;
use crate::embed::{verbalize_triple, EmbeddingIndex, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::extract::BenchQuery;
use crate::kg::KnowledgeGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// `k` for a similarity curve, `node_cap` for an ablation.
    pub x: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationCurve {
    pub points: Vec<CurvePoint>,
}

impl AblationCurve {
    /// Fails unless the x values are strictly increasing.
    pub fn new(points: Vec<CurvePoint>) -> Result<Self> {
        check_increasing(points.iter().map(|p| p.x))?;
        Ok(Self { points })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let points = csv::Reader::from_reader(input).deserialize().collect::<Result<Vec<CurvePoint>, _>>()?;
        Self::new(points)
    }
}

pub(crate) fn check_increasing(xs: impl IntoIterator<Item = usize>) -> Result<()> {
    let mut prev: Option<usize> = None;
    for x in xs {
        if prev.is_some_and(|p| p >= x) {
            return Err(Error::InvalidConfig(format!(
                "curve x values must be strictly increasing (saw {x} after {})",
                prev.unwrap()
            )));
        }
        prev = Some(x);
    }
    Ok(())
}

/// Mean proximity of the first `k` retrieved triples for each `k` in `ks`.
///
/// Each query is retrieved once at the largest `k`; smaller `k` read a prefix
/// of that ranking.
pub fn similarity_curve(
    queries: &[BenchQuery],
    g: &KnowledgeGraph,
    idx: &EmbeddingIndex,
    p: &dyn EmbeddingProvider,
    ks: &[usize],
) -> Result<AblationCurve> {
    check_increasing(ks.iter().copied())?;
    if ks.first() == Some(&0) {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    let Some(&kmax) = ks.last() else { return Ok(AblationCurve::default()) };
    let mut sums = vec![0.0; ks.len()];
    for q in queries {
        let query = p.embed_text(&q.query_text())?;
        let ranked = idx.top_k(&query, kmax)?;
        let text: Vec<String> = ranked.iter().map(|s| verbalize_triple(g.triple(s.triple), g)).collect();
        let sims = triple_similarities(&text, &p.embed_text(&q.answer)?, p)?;
        for (slot, &k) in sums.iter_mut().zip(ks) {
            let head = &sims[..k.min(sims.len())];
            if !head.is_empty() {
                *slot += head.iter().sum::<f64>() / head.len() as f64;
            }
        }
    }
    let n = queries.len().max(1) as f64;
    AblationCurve::new(ks.iter().zip(&sums).map(|(&x, &s)| CurvePoint { x, value: s / n }).collect())
}
