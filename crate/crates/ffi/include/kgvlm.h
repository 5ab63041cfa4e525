#ifndef KGVLM_H
#define KGVLM_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Which extractor `kgvlm_extract` runs. Passed as an integer so that an
 * out-of-range value from C is rejected rather than undefined.
 */
typedef enum KgvlmMethod {
  /**
   * Ranked-triple top-k extraction.
   */
  KGVLM_METHOD_PROPOSED = 0,
  /**
   * Grounded-concept two-hop baseline.
   */
  KGVLM_METHOD_BASELINE = 1,
} KgvlmMethod;

/**
 * Result code of every exported function.
 */
typedef enum KgvlmStatus {
  KGVLM_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  KGVLM_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8, or a numeric argument was out
   * of range.
   */
  KGVLM_STATUS_INVALID_ARGUMENT = 2,
  KGVLM_STATUS_IO = 3,
  /**
   * A file had the wrong magic, was truncated or failed validation.
   */
  KGVLM_STATUS_BAD_FORMAT = 4,
  KGVLM_STATUS_INVALID_CONFIG = 5,
  KGVLM_STATUS_DIMENSION_MISMATCH = 6,
  KGVLM_STATUS_EMPTY_GRAPH = 7,
  /**
   * An output buffer was too small; the required length is reported.
   */
  KGVLM_STATUS_BUFFER_TOO_SMALL = 8,
  /**
   * Any other library error.
   */
  KGVLM_STATUS_FAILED = 9,
  /**
   * A Rust panic was caught at the boundary.
   */
  KGVLM_STATUS_PANIC = 10,
} KgvlmStatus;

/**
 * A loaded knowledge graph.
 */
typedef struct KgvlmGraph KgvlmGraph;

/**
 * Triple index, node feature table and the provider that built them.
 */
typedef struct KgvlmIndex KgvlmIndex;

/**
 * A fusion model checkpoint.
 */
typedef struct KgvlmModel KgvlmModel;

/**
 * An extracted sub-graph.
 */
typedef struct KgvlmSubgraph KgvlmSubgraph;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *kgvlm_last_error_message(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *kgvlm_version(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` is null or a string returned through a `char **` out-parameter of
 * this library that has not been freed.
 */
void kgvlm_string_free(char *s);

/**
 * Seeded synthetic graph without planted facts.
 *
 * # Safety
 * `out` is valid for writing one pointer.
 */
enum KgvlmStatus kgvlm_graph_generate(uint64_t seed,
                                      size_t concepts,
                                      size_t relations,
                                      size_t triples,
                                      struct KgvlmGraph **out);

/**
 * Loads `relation<TAB>subject<TAB>object` lines.
 *
 * # Safety
 * `path` is a nul-terminated string; `out` is valid for writing one pointer.
 */
enum KgvlmStatus kgvlm_graph_load_tsv(const char *path,
                                      size_t relation_capacity,
                                      struct KgvlmGraph **out);

/**
 * Reads a binary graph snapshot.
 *
 * # Safety
 * `path` is a nul-terminated string; `out` is valid for writing one pointer.
 */
enum KgvlmStatus kgvlm_graph_read_snapshot(const char *path, struct KgvlmGraph **out);

/**
 * Writes a binary graph snapshot.
 *
 * # Safety
 * `graph` is a live handle; `path` is a nul-terminated string.
 */
enum KgvlmStatus kgvlm_graph_write_snapshot(const struct KgvlmGraph *graph, const char *path);

/**
 * Concept and triple counts.
 *
 * # Safety
 * `graph` is a live handle; the out pointers are valid for writes.
 */
enum KgvlmStatus kgvlm_graph_counts(const struct KgvlmGraph *graph,
                                    size_t *concepts,
                                    size_t *triples);

/**
 * # Safety
 * `graph` is null or a live handle, not used afterwards.
 */
void kgvlm_graph_free(struct KgvlmGraph *graph);

/**
 * Embeds every triple of `graph` with the seeded hash provider.
 *
 * # Safety
 * `graph` is a live handle; `out` is valid for writing one pointer.
 */
enum KgvlmStatus kgvlm_index_build_hash(const struct KgvlmGraph *graph,
                                        size_t dim,
                                        uint64_t seed,
                                        struct KgvlmIndex **out);

/**
 * # Safety
 * `index` is null or a live handle, not used afterwards.
 */
void kgvlm_index_free(struct KgvlmIndex *index);

/**
 * The `k` best triples for `query`, written to `ids` and `scores` (each of
 * room `capacity`). `written` receives the number of results.
 *
 * # Safety
 * `index` is a live handle, `query` a nul-terminated string, `ids` and
 * `scores` valid for `capacity` elements and `written` for one write.
 */
enum KgvlmStatus kgvlm_index_top_k(const struct KgvlmIndex *index,
                                   const char *query,
                                   size_t k,
                                   uint32_t *ids,
                                   float *scores,
                                   size_t capacity,
                                   size_t *written);

/**
 * Extracts the sub-graph for `question` with a `KgvlmMethod` value. `k` is
 * ignored by the baseline.
 *
 * # Safety
 * `graph` and `index` are live handles built from the same graph,
 * `question` is a nul-terminated string and `out` is valid for writing one
 * pointer.
 */
enum KgvlmStatus kgvlm_extract(const struct KgvlmGraph *graph,
                               const struct KgvlmIndex *index,
                               const char *question,
                               uint32_t method,
                               size_t k,
                               size_t node_cap,
                               struct KgvlmSubgraph **out);

/**
 * Node and triple counts of a sub-graph.
 *
 * # Safety
 * `subgraph` is a live handle; the out pointers are valid for writes.
 */
enum KgvlmStatus kgvlm_subgraph_counts(const struct KgvlmSubgraph *subgraph,
                                       size_t *nodes,
                                       size_t *triples);

/**
 * Selected triple ids in retrieval order.
 *
 * # Safety
 * `subgraph` is a live handle, `ids` valid for `capacity` elements and
 * `written` for one write.
 */
enum KgvlmStatus kgvlm_subgraph_triples(const struct KgvlmSubgraph *subgraph,
                                        uint32_t *ids,
                                        size_t capacity,
                                        size_t *written);

/**
 * JSON record of the sub-graph (nodes, labels, edges, triples, scores,
 * verbalisations). Free the result with `kgvlm_string_free`.
 *
 * # Safety
 * `subgraph` is a live handle; `out` is valid for writing one pointer.
 */
enum KgvlmStatus kgvlm_subgraph_json(const struct KgvlmSubgraph *subgraph, char **out);

/**
 * # Safety
 * `subgraph` is null or a live handle, not used afterwards.
 */
void kgvlm_subgraph_free(struct KgvlmSubgraph *subgraph);

/**
 * Reads a fusion model checkpoint.
 *
 * # Safety
 * `path` is a nul-terminated string; `out` is valid for writing one pointer.
 */
enum KgvlmStatus kgvlm_model_read(const char *path, struct KgvlmModel **out);

/**
 * Writes a fusion model checkpoint.
 *
 * # Safety
 * `model` is a live handle; `path` is a nul-terminated string.
 */
enum KgvlmStatus kgvlm_model_write(const struct KgvlmModel *model, const char *path);

/**
 * Vocabulary size and model width.
 *
 * # Safety
 * `model` is a live handle; the out pointers are valid for writes.
 */
enum KgvlmStatus kgvlm_model_shape(const struct KgvlmModel *model, size_t *vocab, size_t *dim);

/**
 * # Safety
 * `model` is null or a live handle, not used afterwards.
 */
void kgvlm_model_free(struct KgvlmModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KGVLM_H */
