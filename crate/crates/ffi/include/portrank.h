#ifndef PORTRANK_H
#define PORTRANK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  PN_STATUS_OK = 0,
  PN_STATUS_NULL_POINTER = 1,
  PN_STATUS_INVALID_ARGUMENT = 2,
  PN_STATUS_BUFFER_TOO_SMALL = 3,
  PN_STATUS_IO = 4,
  PN_STATUS_PARSE = 5,
  PN_STATUS_EMPTY = 6,
  PN_STATUS_NOT_CONVERGED = 7,
  PN_STATUS_DEGENERATE = 8,
  PN_STATUS_UNREACHABLE = 9,
  PN_STATUS_SCHEMA = 10,
  PN_STATUS_PANIC = 11,
} PnStatus;

/**
 * Centrality measure selector.
 */
typedef enum {
  PN_MEASURE_IN_DEGREE = 0,
  PN_MEASURE_OUT_DEGREE = 1,
  PN_MEASURE_PAGE_RANK = 2,
  PN_MEASURE_WEIGHTED_PAGE_RANK = 3,
  PN_MEASURE_BETWEENNESS = 4,
  PN_MEASURE_CLOSENESS = 5,
} PnMeasure;

/**
 * Raw and aggregated centralities of one network.
 */
typedef struct PnCentrality PnCentrality;

/**
 * Trained random forest.
 */
typedef struct PnForest PnForest;

/**
 * Port geofences built from a registry.
 */
typedef struct PnGeofence PnGeofence;

/**
 * Directed, trip-weighted ports network.
 */
typedef struct PnNetwork PnNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *pn_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pn_version(void);

/**
 * Great-circle distance in meters.
 */
double pn_haversine_m(double lat1, double lon1, double lat2, double lon2);

/**
 * Builds a network from `n` parallel (src, dst, weight) arrays. Self-loops,
 * zero weights and repeated pairs are rejected.
 *
 * # Safety
 * Each array must hold `n` readable elements; `out` must be writable.
 */
PnStatus pn_network_from_edges(const uint32_t *src,
                               const uint32_t *dst,
                               const uint64_t *weight,
                               size_t n,
                               PnNetwork **out);

/**
 * Reads a `src,dst,weight` edge list.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
PnStatus pn_network_read(const char *path, PnNetwork **out);

/**
 * Node count, 0 for NULL.
 *
 * # Safety
 * `net` must be NULL or a live handle.
 */
size_t pn_network_node_count(const PnNetwork *net);

/**
 * Edge count, 0 for NULL.
 *
 * # Safety
 * `net` must be NULL or a live handle.
 */
size_t pn_network_edge_count(const PnNetwork *net);

/**
 * Port ids in node order (ascending).
 *
 * # Safety
 * `net` must be a live handle; `ids` must hold `len` writable elements.
 */
PnStatus pn_network_nodes(const PnNetwork *net, uint32_t *ids, size_t len);

/**
 * Trip count on `from -> to`, 0 when there is no such edge.
 *
 * # Safety
 * `net` must be NULL or a live handle.
 */
uint64_t pn_network_weight(const PnNetwork *net, uint32_t from, uint32_t to);

/**
 * Induced subgraph on the largest strongly connected component.
 *
 * # Safety
 * `net` must be a live handle; `out` must be writable.
 */
PnStatus pn_network_largest_scc(const PnNetwork *net, PnNetwork **out);

/**
 * # Safety
 * `net` must be NULL or a handle not yet freed.
 */
void pn_network_free(PnNetwork *net);

/**
 * All six centralities plus z-scores and the aggregate, with default
 * parameters (damping 0.85, ln(1 + w) weights, incoming closeness).
 *
 * # Safety
 * `net` must be a live handle; `out` must be writable.
 */
PnStatus pn_centrality_compute(const PnNetwork *net, PnCentrality **out);

/**
 * Number of ports scored, 0 for NULL.
 *
 * # Safety
 * `c` must be NULL or a live handle.
 */
size_t pn_centrality_len(const PnCentrality *c);

/**
 * Raw values of one measure, aligned with `pn_network_nodes`.
 *
 * # Safety
 * `c` must be a live handle; `measure` one of the `PnMeasure` values;
 * `values` must hold `len` writable elements.
 */
PnStatus pn_centrality_values(const PnCentrality *c, PnMeasure measure, double *values, size_t len);

/**
 * Aggregated score and 1-based rank per port.
 *
 * # Safety
 * `c` must be a live handle; both arrays must hold `len` writable elements.
 */
PnStatus pn_centrality_aggregate(const PnCentrality *c,
                                 double *aggregate,
                                 uint32_t *rank,
                                 size_t len);

/**
 * Writes the centrality table as CSV.
 *
 * # Safety
 * `c` must be a live handle; `path` a NUL-terminated string.
 */
PnStatus pn_centrality_write(const PnCentrality *c, const char *path);

/**
 * # Safety
 * `c` must be NULL or a handle not yet freed.
 */
void pn_centrality_free(PnCentrality *c);

/**
 * Geofences from a registry CSV with the default column names. A positive
 * `uniform_radius_m` gives every port that radius; otherwise radii follow
 * harbor size.
 *
 * # Safety
 * `registry` must be a NUL-terminated string; `out` must be writable.
 */
PnStatus pn_geofence_load(const char *registry, double uniform_radius_m, PnGeofence **out);

/**
 * Retained port whose geofence contains the point. Writes 0 to `port`
 * when no geofence does.
 *
 * # Safety
 * `g` must be a live handle; `port` must be writable.
 */
PnStatus pn_geofence_assign(const PnGeofence *g, double lat, double lon, uint32_t *port);

/**
 * Retained port that `port_id` merged into, 0 if unknown.
 *
 * # Safety
 * `g` must be NULL or a live handle.
 */
uint32_t pn_geofence_resolve(const PnGeofence *g, uint32_t port_id);

/**
 * # Safety
 * `g` must be NULL or a handle not yet freed.
 */
void pn_geofence_free(PnGeofence *g);

/**
 * Loads a forest saved by the `train` stage (`model.json`).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
PnStatus pn_forest_load(const char *path, PnForest **out);

/**
 * Feature count expected per row, 0 for NULL.
 *
 * # Safety
 * `f` must be NULL or a live handle.
 */
size_t pn_forest_n_features(const PnForest *f);

/**
 * Positive-class probability for `rows` row-major rows of `n_features`
 * values each.
 *
 * # Safety
 * `f` must be a live handle; `x` must hold `rows * n_features` readable
 * values and `proba` `rows` writable ones.
 */
PnStatus pn_forest_predict(const PnForest *f,
                           const double *x,
                           size_t rows,
                           size_t n_features,
                           double *proba);

/**
 * # Safety
 * `f` must be NULL or a handle not yet freed.
 */
void pn_forest_free(PnForest *f);

/**
 * Area under the ROC curve; `labels` are 0 or 1. `rank_auc` may be NULL;
 * otherwise it receives the Mann-Whitney estimate.
 *
 * # Safety
 * `scores` and `labels` must hold `n` readable elements; `auc` must be
 * writable.
 */
PnStatus pn_roc_auc(const double *scores,
                    const uint8_t *labels,
                    size_t n,
                    double *auc,
                    double *rank);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PORTRANK_H */
