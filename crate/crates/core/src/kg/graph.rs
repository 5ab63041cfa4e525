use std::fmt;
use std::io::{BufRead, Write};

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of relation categories in the English ConceptNet subset.
pub const DEFAULT_RELATION_CAPACITY: usize = 34;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TripleId(pub u32);

macro_rules! id_index {
    ($($t:ty),*) => {$(
        impl $t {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }
    )*};
}

id_index!(ConceptId, RelationId, TripleId);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub subject: ConceptId,
    pub relation: RelationId,
    pub object: ConceptId,
    pub surface: Option<String>,
}

/// Dense, first-seen relation label table with a hard capacity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationVocab {
    names: IndexSet<String>,
    capacity: usize,
}

impl Default for RelationVocab {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_RELATION_CAPACITY)
    }
}

impl RelationVocab {
    pub fn with_capacity(capacity: usize) -> Self {
        Self { names: IndexSet::new(), capacity }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<RelationId> {
        self.names.get_index_of(label).map(|i| RelationId(i as u16))
    }

    pub fn name(&self, id: RelationId) -> &str {
        &self.names[id.index()]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn intern(&mut self, label: &str) -> Result<RelationId> {
        if let Some(id) = self.get(label) {
            return Ok(id);
        }
        if self.names.len() >= self.capacity {
            return Err(Error::RelationOverflow { label: label.to_owned(), capacity: self.capacity });
        }
        let (idx, _) = self.names.insert_full(label.to_owned());
        Ok(RelationId(idx as u16))
    }
}

/// Case-folds and trims a concept label.
pub fn normalize_label(raw: &str) -> String {
    raw.trim().to_lowercase()
}

/// A label is "regular" when it is one or more alphanumeric words joined by
/// single spaces; those can be grounded by n-gram lookup.
fn label_word_count(label: &str) -> Option<usize> {
    if label.is_empty() || label.starts_with(' ') || label.ends_with(' ') || label.contains("  ") {
        return None;
    }
    let mut words = 0;
    for word in label.split(' ') {
        if !word.chars().all(char::is_alphanumeric) {
            return None;
        }
        words += 1;
    }
    Some(words)
}

#[derive(Debug, Clone, Default)]
pub(crate) struct LabelLexicon {
    pub(crate) max_words: usize,
    pub(crate) irregular: Vec<ConceptId>,
}

impl LabelLexicon {
    fn observe(&mut self, id: ConceptId, label: &str) {
        match label_word_count(label) {
            Some(n) => self.max_words = self.max_words.max(n),
            None => self.irregular.push(id),
        }
    }
}

/// Interned concepts, relations and triples with per-concept adjacency.
///
/// Construction is single-writer; once built the graph is only read.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    concepts: IndexSet<String>,
    relations: RelationVocab,
    triples: Vec<Triple>,
    out_adj: Vec<Vec<TripleId>>,
    in_adj: Vec<Vec<TripleId>>,
    lexicon: LabelLexicon,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::with_relation_capacity(DEFAULT_RELATION_CAPACITY)
    }

    pub fn with_relation_capacity(capacity: usize) -> Self {
        Self { relations: RelationVocab::with_capacity(capacity), ..Self::default() }
    }

    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn relations(&self) -> &RelationVocab {
        &self.relations
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn triple(&self, id: TripleId) -> &Triple {
        &self.triples[id.index()]
    }

    pub fn concept_label(&self, id: ConceptId) -> &str {
        &self.concepts[id.index()]
    }

    pub fn concept_labels(&self) -> impl Iterator<Item = &str> {
        self.concepts.iter().map(String::as_str)
    }

    pub fn relation_label(&self, id: RelationId) -> &str {
        self.relations.name(id)
    }

    /// Looks up a concept by raw label (normalised before lookup).
    pub fn find_concept(&self, label: &str) -> Option<ConceptId> {
        self.find_normalized(&normalize_label(label))
    }

    pub(crate) fn find_normalized(&self, label: &str) -> Option<ConceptId> {
        self.concepts.get_index_of(label).map(|i| ConceptId(i as u32))
    }

    pub(crate) fn lexicon(&self) -> &LabelLexicon {
        &self.lexicon
    }

    pub fn out_edges(&self, c: ConceptId) -> &[TripleId] {
        &self.out_adj[c.index()]
    }

    pub fn in_edges(&self, c: ConceptId) -> &[TripleId] {
        &self.in_adj[c.index()]
    }

    pub fn degree(&self, c: ConceptId) -> usize {
        self.out_adj[c.index()].len() + self.in_adj[c.index()].len()
    }

    pub fn intern_concept(&mut self, raw: &str) -> Result<ConceptId> {
        let label = normalize_label(raw);
        if label.is_empty() {
            return Err(Error::EmptyField("concept"));
        }
        Ok(self.intern_normalized(label))
    }

    fn intern_normalized(&mut self, label: String) -> ConceptId {
        if let Some(id) = self.find_normalized(&label) {
            return id;
        }
        let id = ConceptId(self.concepts.len() as u32);
        self.lexicon.observe(id, &label);
        self.concepts.insert(label);
        self.out_adj.push(Vec::new());
        self.in_adj.push(Vec::new());
        id
    }

    pub fn intern_relation(&mut self, raw: &str) -> Result<RelationId> {
        let label = raw.trim();
        if label.is_empty() {
            return Err(Error::EmptyField("relation"));
        }
        self.relations.intern(label)
    }

    /// Appends a triple between already interned ids.
    pub fn push_triple(&mut self, triple: Triple) -> TripleId {
        debug_assert!(triple.subject.index() < self.concepts.len());
        debug_assert!(triple.object.index() < self.concepts.len());
        debug_assert!(triple.relation.index() < self.relations.len());
        let id = TripleId(self.triples.len() as u32);
        self.out_adj[triple.subject.index()].push(id);
        self.in_adj[triple.object.index()].push(id);
        self.triples.push(triple);
        id
    }

    /// Interns labels and appends the triple.
    pub fn add_triple(
        &mut self,
        relation: &str,
        subject: &str,
        object: &str,
        surface: Option<String>,
    ) -> Result<TripleId> {
        // Relation first: an overflow must not leave half-interned concepts behind.
        let relation = self.intern_relation(relation)?;
        let subject = self.intern_concept(subject)?;
        let object = self.intern_concept(object)?;
        Ok(self.push_triple(Triple { subject, relation, object, surface }))
    }

    /// Parses one `relation<TAB>subject<TAB>object[<TAB>surface]` line and
    /// appends the triple.
    pub fn parse_triple_line(&mut self, line: &str) -> Result<TripleId> {
        let line = line.strip_suffix('\n').unwrap_or(line);
        let line = line.strip_suffix('\r').unwrap_or(line);
        let fields: Vec<&str> = line.splitn(4, '\t').collect();
        if fields.len() < 3 {
            return Err(Error::MalformedLine { fields: fields.len() });
        }
        let surface = fields.get(3).map(|s| (*s).to_owned());
        if fields[1].trim().is_empty() {
            return Err(Error::EmptyField("subject"));
        }
        if fields[2].trim().is_empty() {
            return Err(Error::EmptyField("object"));
        }
        self.add_triple(fields[0], fields[1], fields[2], surface)
    }

    /// Writes the graph back out in the tab-separated triple format.
    pub fn write_triples<W: Write>(&self, mut out: W) -> Result<()> {
        for t in &self.triples {
            write!(
                out,
                "{}\t{}\t{}",
                self.relation_label(t.relation),
                self.concept_label(t.subject),
                self.concept_label(t.object)
            )?;
            if let Some(surface) = &t.surface {
                write!(out, "\t{surface}")?;
            }
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Rebuilds a graph from raw tables, validating every id. Used by the
    /// snapshot reader.
    pub(crate) fn from_parts(concepts: Vec<String>, relations: RelationVocab, triples: Vec<Triple>) -> Result<Self> {
        let mut g = KnowledgeGraph { relations, ..KnowledgeGraph::default() };
        for label in concepts {
            if g.find_normalized(&label).is_some() {
                return Err(Error::bad_format("graph snapshot", format!("duplicate concept {label:?}")));
            }
            g.intern_normalized(label);
        }
        let n = g.concepts.len();
        for t in triples {
            if t.subject.index() >= n || t.object.index() >= n {
                return Err(Error::bad_format("graph snapshot", "concept id out of range"));
            }
            if t.relation.index() >= g.relations.len() {
                return Err(Error::bad_format("graph snapshot", "relation id out of range"));
            }
            g.push_triple(t);
        }
        Ok(g)
    }
}

/// Streams a triple file into a new graph. Blank lines and `#` comments are
/// skipped; errors carry their 1-based line number.
pub fn load_graph<R: BufRead>(source: R, capacity: usize) -> Result<KnowledgeGraph> {
    let mut graph = KnowledgeGraph::with_relation_capacity(capacity);
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        graph.parse_triple_line(trimmed).map_err(|e| Error::at_line(i + 1, e))?;
    }
    Ok(graph)
}
