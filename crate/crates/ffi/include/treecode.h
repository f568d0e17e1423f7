#ifndef TREECODE_H
#define TREECODE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

#define TC_SPLIT_KUHN6 0

#define TC_SPLIT_CENTROID24 1

#define TC_MODE_DIRECT 0

#define TC_MODE_TREECODE1 1

#define TC_MODE_TREECODE2 2

typedef enum TcStatus {
  TC_STATUS_OK = 0,
  TC_STATUS_NULL_POINTER = 1,
  TC_STATUS_INVALID_ARGUMENT = 2,
  TC_STATUS_IO = 3,
  TC_STATUS_PARSE = 4,
  /**
   * Non-finite source values or a singular evaluation.
   */
  TC_STATUS_NUMERIC = 5,
  TC_STATUS_BUFFER_TOO_SMALL = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  TC_STATUS_PANIC = 7,
} TcStatus;

/**
 * Sampled source, interaction lists and moments over one tree.
 */
typedef struct TcSolver TcSolver;

/**
 * Refined mesh hierarchy.
 */
typedef struct TcTree TcTree;

/**
 * Source density callback: `f(user, x, y, z)`.
 */
typedef double (*TcSourceFn)(void *user, double x, double y, double z);

typedef struct TcSolveOptions {
  /**
   * One of the `TC_MODE_*` constants.
   */
  uint32_t mode;
  /**
   * Target accuracy for adaptive order selection.
   */
  double epsilon;
  /**
   * Fixed expansion order, or a negative value for adaptive selection.
   */
  int32_t uniform_p;
  /**
   * Worker threads; 0 and 1 both run sequentially.
   */
  uint32_t threads;
} TcSolveOptions;

typedef struct TcSolveStats {
  uint64_t far_evaluations;
  /**
   * Evaluations whose order was capped at `p_max`.
   */
  uint64_t clamped_count;
  /**
   * Treecode 2 leaves summed directly instead of expanded.
   */
  uint64_t fallback_count;
  uint32_t max_order_used;
  double eval_seconds;
} TcSolveStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The string
 * stays valid until the next failing call on the same thread.
 */
const char *tc_last_error_message(void);

/**
 * Builds the box `[lo, hi]` split into `cells^3` cubes of `split`
 * tetrahedra each, refined `refine` times.
 *
 * # Safety
 * `lo` and `hi` point to three doubles; `out` is writable.
 */
enum TcStatus tc_tree_new_box(const double *lo,
                              const double *hi,
                              size_t cells,
                              uint32_t split,
                              size_t refine,
                              struct TcTree **out);

/**
 * Loads a base mesh file and refines it `refine` times.
 *
 * # Safety
 * `path` is a NUL-terminated UTF-8 string; `out` is writable.
 */
enum TcStatus tc_tree_load_mesh(const char *path, size_t refine, struct TcTree **out);

/**
 * Releases a tree. Solvers built from it stay valid.
 *
 * # Safety
 * `tree` is null or came from `tc_tree_new_box`/`tc_tree_load_mesh` and has
 * not been freed.
 */
void tc_tree_free(struct TcTree *tree);

/**
 * Number of leaf elements, or 0 for a null handle.
 *
 * # Safety
 * `tree` is null or a live tree handle.
 */
size_t tc_tree_leaf_count(const struct TcTree *tree);

/**
 * Number of levels, or 0 for a null handle.
 *
 * # Safety
 * `tree` is null or a live tree handle.
 */
size_t tc_tree_depth(const struct TcTree *tree);

/**
 * Writes leaf barycenters as `x0 y0 z0 x1 ...` into `out[..3N]`.
 *
 * # Safety
 * `tree` is a live tree handle; `out` is writable for `len` doubles.
 */
enum TcStatus tc_tree_barycenters(const struct TcTree *tree, double *out, size_t len);

/**
 * Samples `source` at every quadrature point of `tree` (the callback is not
 * retained) and precomputes moments up to `p_max`.
 *
 * `f_bound` bounds `|f|` over the domain; pass a value `<= 0` to use the
 * largest sampled `|f|`. `demote_at` is the expansion ratio at or above
 * which far-field nodes are split; pass a negative value for the default.
 *
 * # Safety
 * `tree` is a live tree handle, `out` is writable, and `source` is safe to
 * call with `user` during this call.
 */
enum TcStatus tc_solver_new(const struct TcTree *tree,
                            TcSourceFn source,
                            void *user,
                            double f_bound,
                            size_t p_max,
                            double demote_at,
                            struct TcSolver **out);

/**
 * Solver for the built-in Gaussian test problem.
 *
 * # Safety
 * `tree` is a live tree handle and `out` is writable.
 */
enum TcStatus tc_solver_new_gaussian(const struct TcTree *tree,
                                     size_t p_max,
                                     double demote_at,
                                     struct TcSolver **out);

/**
 * # Safety
 * `solver` is null or a live solver handle.
 */
void tc_solver_free(struct TcSolver *solver);

/**
 * Potential at every leaf barycenter into `values[..N]`, and the
 * per-target truncation bound into `bounds[..N]` when `bounds` is not null.
 *
 * # Safety
 * `solver` is a live solver handle, `options` is readable, `values` (and
 * `bounds` if given) are writable for `len` doubles, and `stats` is null or
 * writable.
 */
enum TcStatus tc_solve(struct TcSolver *solver,
                       const struct TcSolveOptions *options,
                       double *values,
                       double *bounds,
                       size_t len,
                       struct TcSolveStats *stats);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TREECODE_H */
