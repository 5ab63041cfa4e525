//! C ABI over graph loading, hash embedding, top-k retrieval, sub-graph
//! extraction and model checkpoints.
//!
//! Every function returns a `KgvlmStatus`. On failure the message is kept
//! per thread and can be read with `kgvlm_last_error_message`. Handles are
//! opaque, created by `*_new`/`*_read`/`*_build` style calls and released by
//! the matching `*_free`. Strings returned through `char **` are freed with
//! `kgvlm_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use kgvlm::embed::{
    build_index, build_node_table, EmbeddingIndex, EmbeddingProvider, HashEmbedder, NodeEmbeddingTable,
};
use kgvlm::extract::{extract_baseline, extract_topk, Subgraph};
use kgvlm::fusion::ToyFusionModel;
use kgvlm::kg::{generate_synthetic_graph, load_graph, read_snapshot, write_snapshot, KnowledgeGraph};
use kgvlm::Error;

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgvlmStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8, or a numeric argument was out
    /// of range.
    InvalidArgument = 2,
    Io = 3,
    /// A file had the wrong magic, was truncated or failed validation.
    BadFormat = 4,
    InvalidConfig = 5,
    DimensionMismatch = 6,
    EmptyGraph = 7,
    /// An output buffer was too small; the required length is reported.
    BufferTooSmall = 8,
    /// Any other library error.
    Failed = 9,
    /// A Rust panic was caught at the boundary.
    Panic = 10,
}

/// Which extractor `kgvlm_extract` runs. Passed as an integer so that an
/// out-of-range value from C is rejected rather than undefined.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgvlmMethod {
    /// Ranked-triple top-k extraction.
    Proposed = 0,
    /// Grounded-concept two-hop baseline.
    Baseline = 1,
}

/// A loaded knowledge graph.
pub struct KgvlmGraph {
    graph: KnowledgeGraph,
}

/// Triple index, node feature table and the provider that built them.
pub struct KgvlmIndex {
    index: EmbeddingIndex,
    table: NodeEmbeddingTable,
    provider: HashEmbedder,
    triples: usize,
}

/// An extracted sub-graph.
pub struct KgvlmSubgraph {
    subgraph: Subgraph,
    json: String,
}

/// A fusion model checkpoint.
pub struct KgvlmModel {
    model: ToyFusionModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> KgvlmStatus {
    match e {
        Error::Io(_) => KgvlmStatus::Io,
        Error::BadFormat { .. } | Error::MalformedLine { .. } | Error::AtLine { .. } | Error::Json(_) => {
            KgvlmStatus::BadFormat
        }
        Error::InvalidConfig(_) => KgvlmStatus::InvalidConfig,
        Error::DimensionMismatch { .. } => KgvlmStatus::DimensionMismatch,
        Error::EmptyGraph => KgvlmStatus::EmptyGraph,
        _ => KgvlmStatus::Failed,
    }
}

/// Failure raised inside a wrapped body.
struct Fail(KgvlmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Self {
        Fail(KgvlmStatus::Io, e.to_string())
    }
}

fn guard<F: FnOnce() -> Result<(), Fail>>(body: F) -> KgvlmStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => KgvlmStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            KgvlmStatus::Panic
        }
    }
}

fn null(name: &str) -> Fail {
    Fail(KgvlmStatus::NullArgument, format!("{name} is null"))
}

/// # Safety
/// `p` is null or a valid nul-terminated string.
unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(KgvlmStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

/// # Safety
/// `p` is null or points to a live `T`.
unsafe fn get<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(name))
}

/// # Safety
/// `out` is null or valid for a write of `T`.
unsafe fn put<T>(out: *mut T, value: T, name: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(value);
    Ok(())
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// # Safety
/// `p` is null or was returned by `boxed` and not freed since.
unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn kgvlm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn kgvlm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or a string returned through a `char **` out-parameter of
/// this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn kgvlm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Seeded synthetic graph without planted facts.
///
/// # Safety
/// `out` is valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn kgvlm_graph_generate(
    seed: u64,
    concepts: usize,
    relations: usize,
    triples: usize,
    out: *mut *mut KgvlmGraph,
) -> KgvlmStatus {
    guard(|| {
        let graph = generate_synthetic_graph(seed, concepts, relations, triples)?;
        put(out, boxed(KgvlmGraph { graph }), "out")
    })
}

/// Loads `relation<TAB>subject<TAB>object` lines.
///
/// # Safety
/// `path` is a nul-terminated string; `out` is valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn kgvlm_graph_load_tsv(
    path: *const c_char,
    relation_capacity: usize,
    out: *mut *mut KgvlmGraph,
) -> KgvlmStatus {
    guard(|| {
        let path = text(path, "path")?;
        let graph = load_graph(BufReader::new(File::open(path)?), relation_capacity)?;
        put(out, boxed(KgvlmGraph { graph }), "out")
    })
}

/// Reads a binary graph snapshot.
///
/// # Safety
/// `path` is a nul-terminated string; `out` is valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn kgvlm_graph_read_snapshot(path: *const c_char, out: *mut *mut KgvlmGraph) -> KgvlmStatus {
    guard(|| {
        let path = text(path, "path")?;
        let graph = read_snapshot(BufReader::new(File::open(path)?))?;
        put(out, boxed(KgvlmGraph { graph }), "out")
    })
}

/// Writes a binary graph snapshot.
///
/// # Safety
/// `graph` is a live handle; `path` is a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn kgvlm_graph_write_snapshot(graph: *const KgvlmGraph, path: *const c_char) -> KgvlmStatus {
    guard(|| {
        let g = get(graph, "graph")?;
        let path = text(path, "path")?;
        write_snapshot(&g.graph, BufWriter::new(File::create(path)?))?;
        Ok(())
    })
}

/// Concept and triple counts.
///
/// # Safety
/// `graph` is a live handle; the out pointers are valid for writes.
#[no_mangle]
pub unsafe extern "C" fn kgvlm_graph_counts(
    graph: *const KgvlmGraph,
    concepts: *mut usize,
    triples: *mut usize,
) -> KgvlmStatus {
    guard(|| {
        let g = get(graph, "graph")?;
        put(concepts, g.graph.num_concepts(), "concepts")?;
        put(triples, g.graph.num_triples(), "triples")
    })
}

/// # Safety
/// `graph` is null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kgvlm_graph_free(graph: *mut KgvlmGraph) {
    free(graph)
}

/// Embeds every triple of `graph` with the seeded hash provider.
///
/// # Safety
/// `graph` is a live handle; `out` is valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn kgvlm_index_build_hash(
    graph: *const KgvlmGraph,
    dim: usize,
    seed: u64,
    out: *mut *mut KgvlmIndex,
) -> KgvlmStatus {
    guard(|| {
        let g = get(graph, "graph")?;
        let provider = HashEmbedder::new(dim, seed)?;
        let index = build_index(&g.graph, &provider)?;
        let table = build_node_table(&g.graph, &index)?;
        put(out, boxed(KgvlmIndex { index, table, provider, triples: g.graph.num_triples() }), "out")
    })
}

/// # Safety
/// `index` is null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kgvlm_index_free(index: *mut KgvlmIndex) {
    free(index)
}

/// The `k` best triples for `query`, written to `ids` and `scores` (each of
/// room `capacity`). `written` receives the number of results.
///
/// # Safety
/// `index` is a live handle, `query` a nul-terminated string, `ids` and
/// `scores` valid for `capacity` elements and `written` for one write.
#[no_mangle]
pub unsafe extern "C" fn kgvlm_index_top_k(
    index: *const KgvlmIndex,
    query: *const c_char,
    k: usize,
    ids: *mut u32,
    scores: *mut f32,
    capacity: usize,
    written: *mut usize,
) -> KgvlmStatus {
    guard(|| {
        let idx = get(index, "index")?;
        let q = idx.provider.embed_text(text(query, "query")?)?;
        let top = idx.index.top_k(&q, k)?;
        put(written, top.len(), "written")?;
        if top.len() > capacity {
            return Err(Fail(KgvlmStatus::BufferTooSmall, format!("{} results, room for {capacity}", top.len())));
        }
        if top.is_empty() {
            return Ok(());
        }
        if ids.is_null() || scores.is_null() {
            return Err(null("ids or scores"));
        }
        for (i, s) in top.iter().enumerate() {
            ids.add(i).write(s.triple.0);
            scores.add(i).write(s.score);
        }
        Ok(())
    })
}

/// Extracts the sub-graph for `question` with a `KgvlmMethod` value. `k` is
/// ignored by the baseline.
///
/// # Safety
/// `graph` and `index` are live handles built from the same graph,
/// `question` is a nul-terminated string and `out` is valid for writing one
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn kgvlm_extract(
    graph: *const KgvlmGraph,
    index: *const KgvlmIndex,
    question: *const c_char,
    method: u32,
    k: usize,
    node_cap: usize,
    out: *mut *mut KgvlmSubgraph,
) -> KgvlmStatus {
    guard(|| {
        let g = &get(graph, "graph")?.graph;
        let idx = get(index, "index")?;
        if idx.triples != g.num_triples() {
            return Err(Fail(KgvlmStatus::InvalidArgument, "index was built from a different graph".into()));
        }
        let question = text(question, "question")?;
        let method = match method {
            0 => KgvlmMethod::Proposed,
            1 => KgvlmMethod::Baseline,
            m => return Err(Fail(KgvlmStatus::InvalidArgument, format!("unknown method {m}"))),
        };
        let q = idx.provider.embed_text(question)?;
        let subgraph = match method {
            KgvlmMethod::Proposed => extract_topk("q", &q, &idx.index, g, &idx.table, k, node_cap)?.0,
            KgvlmMethod::Baseline => extract_baseline("q", question, &q, g, &idx.table, node_cap)?.0,
        };
        let json = serde_json::to_string(&subgraph.to_record(g)).map_err(Error::from)?;
        put(out, boxed(KgvlmSubgraph { subgraph, json }), "out")
    })
}

/// Node and triple counts of a sub-graph.
///
/// # Safety
/// `subgraph` is a live handle; the out pointers are valid for writes.
#[no_mangle]
pub unsafe extern "C" fn kgvlm_subgraph_counts(
    subgraph: *const KgvlmSubgraph,
    nodes: *mut usize,
    triples: *mut usize,
) -> KgvlmStatus {
    guard(|| {
        let s = get(subgraph, "subgraph")?;
        put(nodes, s.subgraph.num_nodes(), "nodes")?;
        put(triples, s.subgraph.triples.len(), "triples")
    })
}

/// Selected triple ids in retrieval order.
///
/// # Safety
/// `subgraph` is a live handle, `ids` valid for `capacity` elements and
/// `written` for one write.
#[no_mangle]
pub unsafe extern "C" fn kgvlm_subgraph_triples(
    subgraph: *const KgvlmSubgraph,
    ids: *mut u32,
    capacity: usize,
    written: *mut usize,
) -> KgvlmStatus {
    guard(|| {
        let s = get(subgraph, "subgraph")?;
        let t = &s.subgraph.triples;
        put(written, t.len(), "written")?;
        if t.len() > capacity {
            return Err(Fail(KgvlmStatus::BufferTooSmall, format!("{} triples, room for {capacity}", t.len())));
        }
        if !t.is_empty() {
            if ids.is_null() {
                return Err(null("ids"));
            }
            for (i, id) in t.iter().enumerate() {
                ids.add(i).write(id.0);
            }
        }
        Ok(())
    })
}

/// JSON record of the sub-graph (nodes, labels, edges, triples, scores,
/// verbalisations). Free the result with `kgvlm_string_free`.
///
/// # Safety
/// `subgraph` is a live handle; `out` is valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn kgvlm_subgraph_json(subgraph: *const KgvlmSubgraph, out: *mut *mut c_char) -> KgvlmStatus {
    guard(|| {
        let s = get(subgraph, "subgraph")?;
        let c = CString::new(s.json.as_str()).map_err(|e| Fail(KgvlmStatus::Failed, e.to_string()))?;
        put(out, c.into_raw(), "out")
    })
}

/// # Safety
/// `subgraph` is null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kgvlm_subgraph_free(subgraph: *mut KgvlmSubgraph) {
    free(subgraph)
}

/// Reads a fusion model checkpoint.
///
/// # Safety
/// `path` is a nul-terminated string; `out` is valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn kgvlm_model_read(path: *const c_char, out: *mut *mut KgvlmModel) -> KgvlmStatus {
    guard(|| {
        let path = text(path, "path")?;
        let model = ToyFusionModel::read(BufReader::new(File::open(path)?))?;
        put(out, boxed(KgvlmModel { model }), "out")
    })
}

/// Writes a fusion model checkpoint.
///
/// # Safety
/// `model` is a live handle; `path` is a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn kgvlm_model_write(model: *const KgvlmModel, path: *const c_char) -> KgvlmStatus {
    guard(|| {
        let m = get(model, "model")?;
        let path = text(path, "path")?;
        m.model.write(BufWriter::new(File::create(path)?))?;
        Ok(())
    })
}

/// Vocabulary size and model width.
///
/// # Safety
/// `model` is a live handle; the out pointers are valid for writes.
#[no_mangle]
pub unsafe extern "C" fn kgvlm_model_shape(
    model: *const KgvlmModel,
    vocab: *mut usize,
    dim: *mut usize,
) -> KgvlmStatus {
    guard(|| {
        let m = get(model, "model")?;
        put(vocab, m.model.vocab.len(), "vocab")?;
        put(dim, m.model.params.dim(), "dim")
    })
}

/// # Safety
/// `model` is null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kgvlm_model_free(model: *mut KgvlmModel) {
    free(model)
}
