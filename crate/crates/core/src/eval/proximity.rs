use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::embed::{cosine_similarity, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::extract::SubgraphRecord;

/// Mean and population standard deviation, two-pass. Empty input gives
/// `(0, 0)`.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-sample mean cosine between retained triples and the correct answer.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityReport {
    /// Largest number of triples retained by any sample.
    pub k: usize,
    pub per_sample: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl ProximityReport {
    pub fn from_samples(k: usize, per_sample: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&per_sample);
        Self { k, per_sample, mean, std }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for (sample, &score) in self.per_sample.iter().enumerate() {
            w.serialize(SampleRow { k: self.k, sample, score })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut k = 0;
        let mut per_sample = Vec::new();
        for row in csv::Reader::from_reader(input).deserialize() {
            let row: SampleRow = row?;
            if row.sample != per_sample.len() {
                return Err(Error::bad_format("proximity csv", format!("sample {} out of order", row.sample)));
            }
            k = row.k;
            per_sample.push(row.score);
        }
        Ok(Self::from_samples(k, per_sample))
    }
}

#[derive(Serialize, Deserialize)]
struct SampleRow {
    k: usize,
    sample: usize,
    score: f64,
}

/// Scores each sub-graph's verbalized triples against its answer text. A
/// sub-graph with no triples scores 0 and still counts.
pub fn proximity<S: AsRef<str>>(
    subgraphs: &[SubgraphRecord],
    answers: &[S],
    p: &dyn EmbeddingProvider,
) -> Result<ProximityReport> {
    if subgraphs.len() != answers.len() {
        return Err(Error::DimensionMismatch { expected: subgraphs.len(), got: answers.len() });
    }
    let mut per_sample = Vec::with_capacity(subgraphs.len());
    let mut k = 0;
    for (sg, answer) in subgraphs.iter().zip(answers) {
        k = k.max(sg.verbalized.len());
        let a = p.embed_text(answer.as_ref())?;
        let sims = triple_similarities(&sg.verbalized, &a, p)?;
        per_sample.push(if sims.is_empty() { 0.0 } else { sims.iter().sum::<f64>() / sims.len() as f64 });
    }
    Ok(ProximityReport::from_samples(k, per_sample))
}

pub(crate) fn triple_similarities<S: AsRef<str>>(
    verbalized: &[S],
    answer: &[f32],
    p: &dyn EmbeddingProvider,
) -> Result<Vec<f64>> {
    verbalized.iter().map(|t| cosine_similarity(&p.embed_text(t.as_ref())?, answer)).collect()
}
