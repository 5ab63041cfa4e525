use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::file::EmbeddingFile;
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Triple};

/// Anything that maps text to a fixed-width vector, deterministically.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<Vec<f32>>;
}

/// `"<subject> <relation> <object>"`, single-spaced.
pub fn verbalize_triple(t: &Triple, g: &KnowledgeGraph) -> String {
    format!("{} {} {}", g.concept_label(t.subject), g.relation_label(t.relation), g.concept_label(t.object))
}

/// Text used to embed a question (with an optional image caption) as a
/// single retrieval query.
pub fn query_text(question: &str, caption: Option<&str>) -> String {
    match caption {
        Some(c) if !c.is_empty() => format!("{question} {c}"),
        _ => question.to_owned(),
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn hash_embed_f64(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let key = fnv1a(text.as_bytes()) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Unit-norm pseudo-random embedding of `text`: a ChaCha stream keyed by a
/// stable FNV-1a hash of the bytes and `seed`, `dim` standard normals,
/// normalised. Panics when `dim < 2`.
pub fn hash_embed(text: &str, dim: usize, seed: u64) -> Vec<f32> {
    assert!(dim >= 2, "hash_embed needs dim >= 2");
    hash_embed_f64(text, dim, seed).into_iter().map(|x| x as f32).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HashMode {
    /// The whole string is hashed; different strings are unrelated.
    Whole,
    /// Lower-cased whitespace tokens are hashed individually and summed, so
    /// texts sharing words have positive cosine.
    #[default]
    Tokens,
}

/// The default, dependency-free provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
    pub mode: HashMode,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        Self::with_mode(dim, seed, HashMode::default())
    }

    pub fn with_mode(dim: usize, seed: u64, mode: HashMode) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidConfig(format!("embedding dim must be >= 2, got {dim}")));
        }
        Ok(Self { dim, seed, mode })
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
        if self.mode == HashMode::Whole {
            return Ok(hash_embed(text, self.dim, self.seed));
        }
        let mut acc = vec![0.0f64; self.dim];
        let mut any = false;
        for token in text.split_whitespace() {
            let v = hash_embed_f64(&token.to_lowercase(), self.dim, self.seed);
            acc.iter_mut().zip(&v).for_each(|(a, x)| *a += x);
            any = true;
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !any || norm == 0.0 {
            return Ok(hash_embed(text, self.dim, self.seed));
        }
        Ok(acc.into_iter().map(|x| (x / norm) as f32).collect())
    }
}

/// Serves precomputed vectors keyed by exact text.
#[derive(Debug, Clone)]
pub struct FileProvider {
    file: EmbeddingFile,
    lookup: HashMap<String, usize>,
}

impl FileProvider {
    pub fn new(file: EmbeddingFile) -> Self {
        let lookup = file.ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Self { file, lookup }
    }

    pub fn file(&self) -> &EmbeddingFile {
        &self.file
    }
}

impl EmbeddingProvider for FileProvider {
    fn dim(&self) -> usize {
        self.file.dim
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
        let row = *self.lookup.get(text).ok_or_else(|| Error::MissingEmbedding(text.to_owned()))?;
        Ok(self.file.row(row).to_vec())
    }
}

/// Cosine of two equal-length vectors, accumulated in f64 and clamped to
/// `[-1, 1]`.
pub fn cosine_similarity<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y): (f64, f64) = (x.into(), y.into());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNormInput);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{generate_synthetic_graph, load_graph, TripleId};

    fn norm(v: &[f32]) -> f64 {
        v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn verbalization_template() {
        let g = load_graph("IsA\tcat\tanimal\nr\tx\tx\n".as_bytes(), 34).unwrap();
        assert_eq!(verbalize_triple(g.triple(TripleId(0)), &g), "cat IsA animal");
        assert_eq!(verbalize_triple(g.triple(TripleId(1)), &g), "x r x");
    }

    #[test]
    fn verbalizations_unique_for_unique_tuples() {
        let g = generate_synthetic_graph(4, 10, 3, 20).unwrap();
        let mut tuples = std::collections::HashSet::new();
        let mut texts = std::collections::HashSet::new();
        for t in g.triples() {
            if tuples.insert((t.subject, t.relation, t.object)) {
                assert!(texts.insert(verbalize_triple(t, &g)));
            }
        }
        assert_eq!(tuples.len(), texts.len());
    }

    #[test]
    fn hash_embed_is_deterministic_and_unit() {
        let a = hash_embed("cat IsA animal", 64, 3);
        assert_eq!(a, hash_embed("cat IsA animal", 64, 3));
        assert_ne!(a, hash_embed("cat IsA animal", 64, 4));
        assert!((norm(&a) - 1.0).abs() < 1e-6);
        assert!((norm(&hash_embed("", 2, 0)) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn hash_embed_spreads_distinct_strings() {
        // brute force over all 499,500 pairs
        let vs: Vec<Vec<f32>> = (0..1000).map(|i| hash_embed(&format!("string {i}"), 64, 0)).collect();
        let mut worst = 0.0f64;
        for i in 0..vs.len() {
            for j in i + 1..vs.len() {
                worst = worst.max(cosine_similarity(&vs[i], &vs[j]).unwrap().abs());
            }
        }
        assert!(worst < 0.6, "max |cos| = {worst}");
    }

    #[test]
    fn token_mode_shares_words() {
        let p = HashEmbedder::new(64, 1).unwrap();
        let a = p.embed_text("cat IsA animal").unwrap();
        let b = p.embed_text("animal").unwrap();
        let c = p.embed_text("dog").unwrap();
        let ab = cosine_similarity(&a, &b).unwrap();
        assert!((ab - 1.0 / 3f64.sqrt()).abs() < 0.3, "{ab}");
        assert!(ab > cosine_similarity(&a, &c).unwrap());
        assert_eq!(p.embed_text("Cat  isa ANIMAL").unwrap(), p.embed_text("cat IsA animal").unwrap());
        assert!((norm(&a) - 1.0).abs() < 1e-6);
        // no tokens falls back to whole-string hashing
        assert!((norm(&p.embed_text("   ").unwrap()) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3f64, -1.2, 4.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = cosine_similarity(&[1.0f64, 1.0], &[1.0, 0.0]).unwrap();
        assert!((s - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(matches!(cosine_similarity(&[1.0f64], &[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(cosine_similarity(&[0.0f64, 0.0], &[1.0, 2.0]), Err(Error::ZeroNormInput)));
    }

    #[test]
    fn file_provider_lookup() {
        let file = EmbeddingFile::new(2, vec!["a".into(), "b".into()], vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let p = FileProvider::new(file);
        assert_eq!(p.embed_text("b").unwrap(), vec![0.0, 2.0]);
        assert!(matches!(p.embed_text("c"), Err(Error::MissingEmbedding(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cosine_symmetric_and_scale_invariant(
                a in prop::collection::vec(-10.0f64..10.0, 8),
                b in prop::collection::vec(-10.0f64..10.0, 8),
                alpha in 0.01f64..100.0,
            ) {
                prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
                let ab = cosine_similarity(&a, &b).unwrap();
                prop_assert_eq!(ab, cosine_similarity(&b, &a).unwrap());
                let scaled: Vec<f64> = a.iter().map(|x| x * alpha).collect();
                prop_assert!((cosine_similarity(&scaled, &b).unwrap() - ab).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&ab));
            }
        }
    }
}
