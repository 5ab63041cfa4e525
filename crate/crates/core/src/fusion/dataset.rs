use std::io::{BufRead, Write};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::vocab::{tokenize, Vocab, EOS, SEP, SEP_TOKEN};
use crate::embed::{fnv1a, query_text, verbalize_triple, EmbeddingIndex, EmbeddingProvider, NodeEmbeddingTable};
use crate::error::{Error, Result};
use crate::extract::{extract_topk, Subgraph};
use crate::kg::{ConceptId, KnowledgeGraph, PlantedFact, TripleId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// One multiple-choice question with its reference output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaInstance {
    pub id: String,
    pub split: Split,
    pub question: String,
    pub options: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    /// `m × d_img` stand-in for image patch features.
    #[serde(with = "patch_codec")]
    pub image_patches: Array2<f64>,
    /// Rationale tokens, `<sep>`, answer tokens.
    pub reference: Vec<String>,
    /// Triples the extractor is expected to surface for this question.
    #[serde(default)]
    pub support: Vec<TripleId>,
}

impl QaInstance {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::InvalidInstance { id: self.id.clone(), reason: reason.into() });
        if self.reference.is_empty() {
            return bad("empty reference");
        }
        if self.reference.iter().filter(|t| *t == SEP_TOKEN).count() != 1 {
            return bad("reference must contain exactly one <sep>");
        }
        if self.reference.iter().any(|t| t.is_empty() || t.chars().any(char::is_whitespace)) {
            return bad("reference tokens must be non-empty and whitespace-free");
        }
        Ok(())
    }

    /// Language input: the question, the word `options` and the option list,
    /// then `context` and the context text when present.
    pub fn prompt_text(&self) -> String {
        let mut s = format!("{} options {}", self.question, self.options.join(" "));
        if let Some(c) = self.context.as_deref().filter(|c| !c.is_empty()) {
            s.push_str(" context ");
            s.push_str(c);
        }
        s
    }

    pub fn rationale(&self) -> &[String] {
        let i = self.sep_index();
        &self.reference[..i]
    }

    pub fn answer(&self) -> &[String] {
        let i = self.sep_index();
        &self.reference[i + 1..]
    }

    fn sep_index(&self) -> usize {
        self.reference.iter().position(|t| t == SEP_TOKEN).unwrap_or(self.reference.len())
    }
}

mod patch_codec {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Encoded {
        rows: usize,
        cols: usize,
        /// Row-major little-endian f64 values.
        data: String,
    }

    pub fn serialize<S: Serializer>(a: &Array2<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        let bytes: Vec<u8> = a.iter().flat_map(|x| x.to_le_bytes()).collect();
        Encoded { rows: a.nrows(), cols: a.ncols(), data: B64.encode(bytes) }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Array2<f64>, D::Error> {
        use serde::de::Error as _;
        let e = Encoded::deserialize(d)?;
        let bytes = B64.decode(e.data.as_bytes()).map_err(D::Error::custom)?;
        if bytes.len() != e.rows * e.cols * 8 {
            return Err(D::Error::custom(format!("{} bytes for a {}x{} patch matrix", bytes.len(), e.rows, e.cols)));
        }
        let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
        Array2::from_shape_vec((e.rows, e.cols), values).map_err(D::Error::custom)
    }
}

pub fn write_jsonl<W: Write>(instances: &[QaInstance], mut out: W) -> Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut out, inst)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads and validates one instance per non-blank line.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<QaInstance>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: QaInstance =
            serde_json::from_str(&line).map_err(|e| Error::bad_format("dataset", format!("line {}: {e}", n + 1)))?;
        inst.validate()?;
        out.push(inst);
    }
    Ok(out)
}

/// Shape of a generated planted dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedDatasetConfig {
    /// Cue concepts named in each question.
    pub cues_per_question: usize,
    /// Options per question, the answer included.
    pub options: usize,
    pub patches: usize,
    pub img_dim: usize,
}

impl Default for PlantedDatasetConfig {
    fn default() -> Self {
        Self { cues_per_question: 2, options: 4, patches: 2, img_dim: 8 }
    }
}

/// Deterministic `rows × cols` standard-normal noise keyed by `id`.
pub fn noise_patches(seed: u64, id: &str, rows: usize, cols: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(id.as_bytes()) ^ seed.rotate_left(29));
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
}

/// Multiple-choice questions over the planted facts of a synthetic graph.
///
/// Each question names `cues_per_question` cue concepts of one planted
/// answer, and every named cue has a planted triple pointing at that answer.
/// All questions draw their options from the same small set of planted
/// answers, so the question text carries no information about which option
/// is right; only the graph does. The reference is one verbalised planted
/// triple as the rationale, then `<sep>` and the answer label. The first
/// `n_train` instances form the training split.
pub fn make_planted_dataset(
    seed: u64,
    g: &KnowledgeGraph,
    planted: &[PlantedFact],
    n_train: usize,
    n_val: usize,
    cfg: &PlantedDatasetConfig,
) -> Result<Vec<QaInstance>> {
    if cfg.cues_per_question == 0 || cfg.options < 2 || cfg.patches == 0 || cfg.img_dim == 0 {
        return Err(Error::InvalidConfig(format!("invalid planted dataset shape {cfg:?}")));
    }
    if planted.len() < cfg.options {
        return Err(Error::InvalidConfig(format!(
            "{} planted answers cannot fill {} options",
            planted.len(),
            cfg.options
        )));
    }
    struct Draft<'a> {
        fact: &'a PlantedFact,
        cues: Vec<ConceptId>,
    }
    let mut drafts = Vec::new();
    for fact in planted {
        let supported: Vec<ConceptId> =
            fact.cues.iter().copied().filter(|&c| fact.triples.iter().any(|&t| g.triple(t).subject == c)).collect();
        for cues in supported.chunks_exact(cfg.cues_per_question) {
            drafts.push(Draft { fact, cues: cues.to_vec() });
        }
    }
    let total = n_train + n_val;
    if drafts.len() < total {
        return Err(Error::InvalidConfig(format!(
            "the planted facts support {} questions, {total} requested",
            drafts.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    drafts.shuffle(&mut rng);
    let answers: Vec<ConceptId> = planted.iter().map(|f| f.answer).collect();
    let width = total.to_string().len();
    let mut out = Vec::with_capacity(total);
    for (i, d) in drafts.into_iter().take(total).enumerate() {
        let id = format!("q{i:0width$}");
        let mut options = vec![d.fact.answer];
        while options.len() < cfg.options {
            let c = *answers.choose(&mut rng).expect("non-empty");
            if !options.contains(&c) {
                options.push(c);
            }
        }
        options.shuffle(&mut rng);
        let support: Vec<TripleId> =
            d.fact.triples.iter().copied().filter(|&t| d.cues.contains(&g.triple(t).subject)).collect();
        let shown = support
            .iter()
            .copied()
            .filter(|&t| g.triple(t).subject == d.cues[0])
            .min()
            .expect("first cue has a planted triple");
        let mut reference: Vec<String> = tokenize(&verbalize_triple(g.triple(shown), g)).map(str::to_owned).collect();
        reference.push(SEP_TOKEN.to_owned());
        reference.extend(tokenize(g.concept_label(d.fact.answer)).map(str::to_owned));
        let inst = QaInstance {
            image_patches: noise_patches(seed, &id, cfg.patches, cfg.img_dim),
            id,
            split: if i < n_train { Split::Train } else { Split::Val },
            question: d.cues.iter().map(|&c| g.concept_label(c)).collect::<Vec<_>>().join(" "),
            options: options.iter().map(|&c| g.concept_label(c).to_owned()).collect(),
            context: None,
            reference,
            support,
        };
        inst.validate()?;
        out.push(inst);
    }
    Ok(out)
}

/// Vocabulary covering every prompt and reference token of `instances`.
pub fn dataset_vocab(instances: &[QaInstance]) -> Vocab {
    let mut v = Vocab::new();
    for inst in instances {
        for t in tokenize(&inst.prompt_text()) {
            v.insert(t);
        }
        for t in &inst.reference {
            v.insert(t);
        }
    }
    v
}

/// Everything needed to retrieve a sub-graph for a question.
pub struct KnowledgeSource<'a> {
    pub graph: &'a KnowledgeGraph,
    pub index: &'a EmbeddingIndex,
    pub table: &'a NodeEmbeddingTable,
    pub provider: &'a dyn EmbeddingProvider,
    pub k: usize,
    pub node_cap: usize,
}

impl KnowledgeSource<'_> {
    pub fn retrieve(&self, inst: &QaInstance) -> Result<Subgraph> {
        let q = self.provider.embed_text(&query_text(&inst.question, inst.context.as_deref()))?;
        Ok(extract_topk(&inst.id, &q, self.index, self.graph, self.table, self.k, self.node_cap)?.0)
    }

    pub fn with_node_cap(&self, node_cap: usize) -> Self {
        Self { node_cap, ..*self }
    }
}

/// An instance in model-ready form.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `None` trains and evaluates without the knowledge block.
    pub kg: Option<Subgraph>,
    pub patches: Array2<f64>,
    pub prompt: Vec<usize>,
    /// Reference ids followed by EOS.
    pub target: Vec<usize>,
    pub answer: Vec<usize>,
}

impl Sample {
    pub fn from_instance(inst: &QaInstance, vocab: &Vocab, kg: Option<&KnowledgeSource>) -> Result<Self> {
        inst.validate()?;
        let prompt = vocab.encode(&inst.prompt_text())?;
        let mut target = vocab.encode_tokens(&inst.reference)?;
        let sep = target.iter().position(|&t| t == SEP).expect("validated");
        let answer = target[sep + 1..].to_vec();
        target.push(EOS);
        Ok(Self {
            id: inst.id.clone(),
            kg: kg.map(|k| k.retrieve(inst)).transpose()?,
            patches: inst.image_patches.clone(),
            prompt,
            target,
            answer,
        })
    }

    /// Whether any node of the sub-graph is labelled like the answer.
    pub fn answer_in_subgraph(&self, g: &KnowledgeGraph, vocab: &Vocab) -> bool {
        let Some(sg) = &self.kg else { return false };
        let Ok(words) = vocab.decode(&self.answer) else { return false };
        let label = words.join(" ");
        sg.nodes.iter().any(|&c| g.concept_label(c) == label)
    }
}

/// Train and validation samples.
#[derive(Debug, Clone, Default)]
pub struct PreparedData {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl PreparedData {
    pub fn prepare(instances: &[QaInstance], vocab: &Vocab, kg: Option<&KnowledgeSource>) -> Result<Self> {
        let mut out = Self::default();
        for inst in instances {
            let s = Sample::from_instance(inst, vocab, kg)?;
            match inst.split {
                Split::Train => out.train.push(s),
                Split::Val => out.val.push(s),
            }
        }
        Ok(out)
    }

    /// The same samples with the knowledge block removed.
    pub fn without_kg(&self) -> Self {
        let strip = |v: &[Sample]| v.iter().map(|s| Sample { kg: None, ..s.clone() }).collect();
        Self { train: strip(&self.train), val: strip(&self.val) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{build_index, build_node_table, HashEmbedder};
    use crate::kg::{SynthConfig, SyntheticGraph};

    fn graph() -> SyntheticGraph {
        SynthConfig::new(3, 600, 8, 1500).with_planted(6, 10, 10).generate().unwrap()
    }

    fn dataset(sg: &SyntheticGraph, seed: u64) -> Vec<QaInstance> {
        make_planted_dataset(seed, &sg.graph, &sg.planted, 20, 8, &PlantedDatasetConfig::default()).unwrap()
    }

    fn bytes(d: &[QaInstance]) -> Vec<u8> {
        let mut out = Vec::new();
        write_jsonl(d, &mut out).unwrap();
        out
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let sg = graph();
        assert_eq!(bytes(&dataset(&sg, 5)), bytes(&dataset(&sg, 5)));
        assert_ne!(bytes(&dataset(&sg, 5)), bytes(&dataset(&sg, 6)));
    }

    #[test]
    fn answers_come_from_planted_triples() {
        let sg = graph();
        let g = &sg.graph;
        let d = dataset(&sg, 1);
        assert_eq!(d.iter().filter(|i| i.split == Split::Train).count(), 20);
        assert_eq!(d.iter().filter(|i| i.split == Split::Val).count(), 8);
        for inst in &d {
            let answer = inst.answer().join(" ");
            assert!(inst.options.contains(&answer));
            assert_eq!(inst.options.len(), 4);
            assert!(!inst.question.split(' ').any(|w| w == answer));
            assert!(!inst.support.is_empty());
            for &t in &inst.support {
                let tr = g.triple(t);
                assert_eq!(g.concept_label(tr.object), answer);
                assert!(inst.question.split(' ').any(|w| w == g.concept_label(tr.subject)));
                assert!(sg.planted.iter().any(|f| f.triples.contains(&t)));
            }
            assert_eq!(inst.rationale().len(), 3);
        }
    }

    #[test]
    fn patches_are_keyed_by_id() {
        let sg = graph();
        let d = dataset(&sg, 1);
        assert_eq!(d[0].image_patches, noise_patches(1, &d[0].id, 2, 8));
        assert_ne!(d[0].image_patches, d[1].image_patches);
        assert_eq!(d[0].image_patches.dim(), (2, 8));
    }

    #[test]
    fn jsonl_round_trip() {
        let sg = graph();
        let mut d = dataset(&sg, 2);
        d[0].context = Some("some context".into());
        let b = bytes(&d);
        let back = read_jsonl(b.as_slice()).unwrap();
        assert_eq!(back, d);
        assert_eq!(bytes(&back), b);
        assert!(back[0].prompt_text().ends_with("context some context"));
    }

    #[test]
    fn invalid_references_are_rejected() {
        let sg = graph();
        let mut inst = dataset(&sg, 2).remove(0);
        inst.reference.retain(|t| t != SEP_TOKEN);
        assert!(matches!(inst.validate(), Err(Error::InvalidInstance { .. })));
        inst.reference.clear();
        assert!(inst.validate().is_err());
        let line = serde_json::to_string(&inst).unwrap();
        assert!(read_jsonl(line.as_bytes()).is_err());
    }

    #[test]
    fn too_many_questions_is_an_error() {
        let sg = graph();
        assert!(make_planted_dataset(0, &sg.graph, &sg.planted, 30, 1, &PlantedDatasetConfig::default()).is_err());
    }

    #[test]
    fn samples_carry_retrieved_subgraphs() {
        let sg = graph();
        let d = dataset(&sg, 3);
        let p = HashEmbedder::new(16, 1).unwrap();
        let idx = build_index(&sg.graph, &p).unwrap();
        let table = build_node_table(&sg.graph, &idx).unwrap();
        let ks = KnowledgeSource { graph: &sg.graph, index: &idx, table: &table, provider: &p, k: 8, node_cap: 16 };
        let vocab = dataset_vocab(&d);
        let data = PreparedData::prepare(&d, &vocab, Some(&ks)).unwrap();
        assert_eq!((data.train.len(), data.val.len()), (20, 8));
        let s = &data.train[0];
        assert_eq!(*s.target.last().unwrap(), EOS);
        assert_eq!(s.answer, vocab.encode(&d[0].answer().join(" ")).unwrap());
        let sgr = s.kg.as_ref().unwrap();
        assert!(sgr.num_nodes() <= 16 && sgr.triples.len() <= 8);
        assert!(data.without_kg().train.iter().all(|s| s.kg.is_none()));
    }
}
