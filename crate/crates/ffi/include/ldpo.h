#ifndef LDPO_H
#define LDPO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LdpoStatus {
  LDPO_STATUS_OK = 0,
  LDPO_STATUS_NULL_POINTER = 1,
  LDPO_STATUS_INVALID_INPUT = 2,
  LDPO_STATUS_IO = 3,
  LDPO_STATUS_PARSE = 4,
  LDPO_STATUS_CONFIG = 5,
  LDPO_STATUS_DEGENERATE = 6,
  LDPO_STATUS_NO_MODEL = 7,
  LDPO_STATUS_BUFFER_TOO_SMALL = 8,
  LDPO_STATUS_PANIC = 9,
} LdpoStatus;

/*
 Fitted diagonal Gaussian mixture for Fisher vector encoding.
 */
typedef struct LdpoGmm LdpoGmm;

/*
 Loop configuration plus the outcome of its last run.
 */
typedef struct LdpoSession LdpoSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread; empty after a success.
 Valid until the next library call on the same thread.
 */
const char *ldpo_last_error_message(void);

/*
 # Safety
 `s` must come from this library or be null.
 */
void ldpo_string_free(char *s);

/*
 Fraction of items whose `candidate` cluster's majority `reference` label
 matches their own.

 # Safety
 Both label buffers must hold `n` elements.
 */
enum LdpoStatus ldpo_purity(const size_t *candidate,
                            const size_t *reference,
                            size_t n,
                            double *out);

/*
 Normalized mutual information (geometric normalization).

 # Safety
 Both label buffers must hold `n` elements.
 */
enum LdpoStatus ldpo_nmi(const size_t *a, const size_t *b, size_t n, double *out);

/*
 k-means++ seeded Lloyd iterations, best of `restarts` runs.

 # Safety
 `data` holds `n * d` values, `labels_out` has room for `n`; `cost_out`
 may be null.
 */
enum LdpoStatus ldpo_kmeans(const double *data,
                            size_t n,
                            size_t d,
                            size_t k,
                            size_t restarts,
                            uint64_t seed,
                            size_t *labels_out,
                            double *cost_out);

/*
 RIM refinement of `init` at penalty `lambda`. Writes the dense labels
 and the surviving cluster count.

 # Safety
 `data` holds `n * d` values; `init` and `labels_out` hold `n` elements.
 */
enum LdpoStatus ldpo_rim(const double *data,
                         size_t n,
                         size_t d,
                         const size_t *init,
                         double lambda,
                         size_t *labels_out,
                         size_t *k_out);

/*
 Creates a session from loop configuration TOML text.

 # Safety
 `toml` is a NUL-terminated string; `out` receives the handle.
 */
enum LdpoStatus ldpo_session_new(const char *toml, struct LdpoSession **out);

/*
 # Safety
 `session` comes from [`ldpo_session_new`] or is null.
 */
void ldpo_session_free(struct LdpoSession *session);

/*
 Runs the loop on the files named in the configuration's input table.

 # Safety
 `session` is a live handle.
 */
enum LdpoStatus ldpo_session_run(struct LdpoSession *session);

/*
 Runs the loop on an in-memory feature matrix. Items get ids `0..n`.

 # Safety
 `session` is a live handle and `data` holds `n * d` values.
 */
enum LdpoStatus ldpo_session_run_features(struct LdpoSession *session,
                                          const double *data,
                                          size_t n,
                                          size_t d);

/*
 Number of items and whether the last run converged.

 # Safety
 `session` is a live handle; the outputs may be null.
 */
enum LdpoStatus ldpo_session_summary(const struct LdpoSession *session,
                                     size_t *items_out,
                                     size_t *clusters_out,
                                     bool *converged_out);

/*
 Final cluster of every item, in input order.

 # Safety
 `session` is a live handle and `out` has room for `capacity` elements.
 */
enum LdpoStatus ldpo_session_labels(const struct LdpoSession *session,
                                    size_t *out,
                                    size_t capacity);

/*
 Per-iteration reports as a JSON array. Free with [`ldpo_string_free`].

 # Safety
 `session` is a live handle.
 */
enum LdpoStatus ldpo_session_reports_json(const struct LdpoSession *session, char **out);

/*
 Category tree of the last run (default AP settings) as nested JSON.
 Free with [`ldpo_string_free`].

 # Safety
 `session` is a live handle.
 */
enum LdpoStatus ldpo_session_tree_json(const struct LdpoSession *session, char **out);

/*
 Fits a `components`-way diagonal GMM to `n` descriptors of length `d`.

 # Safety
 `data` holds `n * d` values; `out` receives the handle.
 */
enum LdpoStatus ldpo_gmm_fit(const double *data,
                             size_t n,
                             size_t d,
                             size_t components,
                             uint64_t seed,
                             struct LdpoGmm **out);

/*
 # Safety
 `gmm` comes from [`ldpo_gmm_fit`] or is null.
 */
void ldpo_gmm_free(struct LdpoGmm *gmm);

/*
 Fisher vector length, `2 * components * d`.

 # Safety
 `gmm` is a live handle.
 */
enum LdpoStatus ldpo_gmm_fv_len(const struct LdpoGmm *gmm, size_t *out);

/*
 Normalized Fisher vector of a `side × side` grid of descriptors.

 # Safety
 `gmm` is a live handle, `grid` holds `side * side * d` values with `d`
 the GMM's descriptor length, and `out` has room for `capacity` values.
 */
enum LdpoStatus ldpo_gmm_fisher_vector(const struct LdpoGmm *gmm,
                                       const double *grid,
                                       size_t side,
                                       double *out,
                                       size_t capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LDPO_H */
