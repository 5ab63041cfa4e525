//! Seeded synthetic stand-in for ConceptNet.
//!
//! Subjects and objects of the bulk triples are drawn from a Zipf law over a
//! random popularity ranking, giving the heavy-tailed degree profile of real
//! commonsense graphs (a few hub concepts, a long tail). On top of that the
//! generator can plant, for designated answer concepts, a number of triples
//! that link the answer to its cue concepts; those facts drive the relevance
//! benchmark and the planted QA dataset.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use super::graph::{ConceptId, KnowledgeGraph, TripleId, DEFAULT_RELATION_CAPACITY};
use crate::error::{Error, Result};

pub const CONCEPTNET_RELATIONS: [&str; 34] = [
    "RelatedTo",
    "FormOf",
    "IsA",
    "PartOf",
    "HasA",
    "UsedFor",
    "CapableOf",
    "AtLocation",
    "Causes",
    "HasSubevent",
    "HasFirstSubevent",
    "HasLastSubevent",
    "HasPrerequisite",
    "HasProperty",
    "MotivatedByGoal",
    "ObstructedBy",
    "Desires",
    "CreatedBy",
    "Synonym",
    "Antonym",
    "DistinctFrom",
    "DerivedFrom",
    "SymbolOf",
    "DefinedAs",
    "MannerOf",
    "LocatedNear",
    "HasContext",
    "SimilarTo",
    "EtymologicallyRelatedTo",
    "EtymologicallyDerivedFrom",
    "CausesDesire",
    "MadeOf",
    "ReceivesAction",
    "NotDesires",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_concepts: usize,
    pub n_relations: usize,
    pub n_triples: usize,
    /// Number of designated answer concepts.
    pub planted_answers: usize,
    /// Planted triples per answer, spread round-robin over its cues.
    pub planted_per_answer: usize,
    pub cues_per_answer: usize,
    /// Zipf exponent of the endpoint popularity law; 0 gives uniform endpoints.
    pub zipf_exponent: f64,
}

impl SynthConfig {
    pub fn new(seed: u64, n_concepts: usize, n_relations: usize, n_triples: usize) -> Self {
        Self {
            seed,
            n_concepts,
            n_relations,
            n_triples,
            planted_answers: 0,
            planted_per_answer: 3,
            cues_per_answer: 2,
            zipf_exponent: 1.0,
        }
    }

    pub fn with_planted(mut self, answers: usize, per_answer: usize, cues: usize) -> Self {
        self.planted_answers = answers;
        self.planted_per_answer = per_answer;
        self.cues_per_answer = cues;
        self
    }

    pub fn with_zipf_exponent(mut self, s: f64) -> Self {
        self.zipf_exponent = s;
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_concepts < 2 || self.n_relations == 0 || self.n_triples == 0 {
            return bad("n_concepts >= 2, n_relations >= 1 and n_triples >= 1 are required".into());
        }
        if self.n_relations > DEFAULT_RELATION_CAPACITY {
            return bad(format!("n_relations {} exceeds {DEFAULT_RELATION_CAPACITY}", self.n_relations));
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return bad("zipf_exponent must be finite and >= 0".into());
        }
        if self.planted_answers > 0 && (self.planted_per_answer == 0 || self.cues_per_answer == 0) {
            return bad("planted answers need planted_per_answer >= 1 and cues_per_answer >= 1".into());
        }
        let planted_concepts = self.planted_answers * (1 + self.cues_per_answer);
        if planted_concepts > self.n_concepts {
            return bad(format!("{planted_concepts} planted concepts exceed n_concepts"));
        }
        let needed = self.n_concepts.div_ceil(2) + self.planted_answers * self.planted_per_answer;
        if needed > self.n_triples {
            return bad(format!(
                "n_triples {} too small: covering every concept plus planted facts needs {needed}",
                self.n_triples
            ));
        }
        Ok(())
    }
}

/// One planted answer with the cue concepts it is linked to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedFact {
    pub answer: ConceptId,
    pub cues: Vec<ConceptId>,
    pub triples: Vec<TripleId>,
}

#[derive(Debug, Clone)]
pub struct SyntheticGraph {
    pub graph: KnowledgeGraph,
    pub planted: Vec<PlantedFact>,
}

fn concept_label(i: usize) -> String {
    format!("c{i}")
}

struct Draft {
    subject: usize,
    relation: usize,
    object: usize,
    /// Index into the planted list.
    planted: Option<usize>,
}

impl SynthConfig {
    pub fn generate(&self) -> Result<SyntheticGraph> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.n_concepts;

        let mut popularity: Vec<usize> = (0..n).collect();
        popularity.shuffle(&mut rng);

        // Planted concepts come from the unpopular half so that their facts
        // are not drowned by hub edges.
        let planted_concepts = self.planted_answers * (1 + self.cues_per_answer);
        let tail_start = if planted_concepts <= n - n / 2 { n / 2 } else { n - planted_concepts };
        let mut tail: Vec<usize> = popularity[tail_start..].to_vec();
        tail.shuffle(&mut rng);
        let mut tail = tail.into_iter();
        let mut planted_draft: Vec<(usize, Vec<usize>)> = Vec::with_capacity(self.planted_answers);
        for _ in 0..self.planted_answers {
            let answer = tail.next().expect("validated");
            let cues = (0..self.cues_per_answer).map(|_| tail.next().expect("validated")).collect();
            planted_draft.push((answer, cues));
        }

        let mut drafts: Vec<Draft> = Vec::with_capacity(self.n_triples);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for pair in order.chunks(2) {
            let subject = pair[0];
            let object = match pair.get(1) {
                Some(&o) => o,
                None => loop {
                    let o = rng.random_range(0..n);
                    if o != subject {
                        break o;
                    }
                },
            };
            let relation = rng.random_range(0..self.n_relations);
            drafts.push(Draft { subject, relation, object, planted: None });
        }

        for (p, (answer, cues)) in planted_draft.iter().enumerate() {
            for j in 0..self.planted_per_answer {
                let relation = rng.random_range(0..self.n_relations);
                drafts.push(Draft { subject: cues[j % cues.len()], relation, object: *answer, planted: Some(p) });
            }
        }

        let zipf = if self.zipf_exponent > 0.0 {
            Some(Zipf::new(n as f64, self.zipf_exponent).map_err(|e| Error::InvalidConfig(e.to_string()))?)
        } else {
            None
        };
        let endpoint = |rng: &mut ChaCha8Rng| -> usize {
            match &zipf {
                Some(z) => {
                    let rank = (z.sample(rng) as usize).clamp(1, n) - 1;
                    popularity[rank]
                }
                None => rng.random_range(0..n),
            }
        };
        while drafts.len() < self.n_triples {
            let subject = endpoint(&mut rng);
            let object = endpoint(&mut rng);
            if subject == object {
                continue;
            }
            let relation = rng.random_range(0..self.n_relations);
            drafts.push(Draft { subject, relation, object, planted: None });
        }
        drafts.shuffle(&mut rng);

        let mut graph = KnowledgeGraph::new();
        let mut planted_triples: Vec<Vec<TripleId>> = vec![Vec::new(); planted_draft.len()];
        for d in &drafts {
            let id = graph.add_triple(
                CONCEPTNET_RELATIONS[d.relation],
                &concept_label(d.subject),
                &concept_label(d.object),
                None,
            )?;
            if let Some(p) = d.planted {
                planted_triples[p].push(id);
            }
        }
        let lookup = |i: usize| graph.find_normalized(&concept_label(i)).expect("every concept is covered");
        let planted = planted_draft
            .iter()
            .zip(planted_triples)
            .map(|((answer, cues), triples)| PlantedFact {
                answer: lookup(*answer),
                cues: cues.iter().map(|&c| lookup(c)).collect(),
                triples,
            })
            .collect();
        Ok(SyntheticGraph { graph, planted })
    }
}

/// Generates a graph without planted facts.
pub fn generate_synthetic_graph(
    seed: u64,
    n_concepts: usize,
    n_relations: usize,
    n_triples: usize,
) -> Result<KnowledgeGraph> {
    Ok(SynthConfig::new(seed, n_concepts, n_relations, n_triples).generate()?.graph)
}
