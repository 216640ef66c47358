#ifndef BLOCKRG_H
#define BLOCKRG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values are stable.
 */
typedef enum RgStatus {
  RG_STATUS_OK = 0,
  RG_STATUS_INVALID = 1,
  RG_STATUS_CAP_EXCEEDED = 2,
  RG_STATUS_DIVERGENT = 3,
  RG_STATUS_NUMERICAL = 4,
  RG_STATUS_NULL_POINTER = 5,
  RG_STATUS_UTF8 = 6,
  RG_STATUS_PANIC = 7,
} RgStatus;

/**
 * Couplings `J(X)` keyed by site set.
 */
typedef struct RgInteraction RgInteraction;

/**
 * A finite volume.
 */
typedef struct RgLattice RgLattice;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *rg_last_error(void);

/**
 * Release a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void rg_string_free(char *s);

/**
 * Build a lattice from a spec such as
 * `{"geometry":"square_2d","extent":[4,4],"boundary":{"kind":"periodic"}}`.
 *
 * # Safety
 * `spec_json` must be a valid C string; `out` must be writable.
 */
enum RgStatus rg_lattice_new(const char *spec_json, struct RgLattice **out);

/**
 * # Safety
 * `lat` must be null or a handle from this library not yet freed.
 */
void rg_lattice_free(struct RgLattice *lat);

/**
 * # Safety
 * `lat` must be a live handle; `out` must be writable.
 */
enum RgStatus rg_lattice_num_sites(const struct RgLattice *lat, size_t *out);

/**
 * Parse couplings such as
 * `{"dim":1,"translation_invariant":true,"couplings":{"[[0],[1]]":0.5}}`.
 *
 * # Safety
 * `text` must be a valid C string; `out` must be writable.
 */
enum RgStatus rg_interaction_from_json(const char *text, struct RgInteraction **out);

/**
 * Serialize couplings; free the result with [`rg_string_free`].
 *
 * # Safety
 * `j` must be a live handle; `out` must be writable.
 */
enum RgStatus rg_interaction_to_json(const struct RgInteraction *j, char **out);

/**
 * Coupling of one site set, zero when absent.
 *
 * # Safety
 * `j` must be a live handle, `set_json` a valid C string, `out` writable.
 */
enum RgStatus rg_interaction_get(const struct RgInteraction *j, const char *set_json, double *out);

/**
 * # Safety
 * `j` must be null or a handle from this library not yet freed.
 */
void rg_interaction_free(struct RgInteraction *j);

/**
 * One exact RG step. Writes the image lattice and the renormalized
 * couplings with `|J′| ≤ drop_tol` removed (the constant is always kept).
 *
 * # Safety
 * Handles must be live, `kernel_json` a valid C string, outputs writable.
 */
enum RgStatus rg_renormalize(const struct RgLattice *lat,
                             const struct RgInteraction *j,
                             const char *kernel_json,
                             double drop_tol,
                             struct RgLattice **out_image,
                             struct RgInteraction **out_couplings);

/**
 * `∂J′(Z)/∂J(W)` with `Z` in image coordinates.
 *
 * # Safety
 * Handles must be live, strings valid C strings, `out` writable.
 */
enum RgStatus rg_partial_derivative(const struct RgLattice *lat,
                                    const struct RgInteraction *j,
                                    const char *kernel_json,
                                    const char *z_json,
                                    const char *w_json,
                                    double *out);

/**
 * Ursell coefficient of the graph with row-major `n × n` adjacency
 * `adj` (non-zero = edge).
 *
 * # Safety
 * `adj` must point to `n * n` readable bytes; `out` must be writable.
 */
enum RgStatus rg_ursell(const uint8_t *adj, size_t n, int64_t *out);

/**
 * Largest activity `ε` for which the polymer series closes at `ln M`,
 * with `M = m_num / m_den`.
 *
 * # Safety
 * `out` must be writable.
 */
enum RgStatus rg_epsilon_threshold(uint32_t p,
                                   uint32_t r,
                                   uint32_t c_link,
                                   int64_t m_num,
                                   int64_t m_den,
                                   double *out);

/**
 * Run a full JSON config, as the command-line tool does, and write the
 * report JSON to `out_report` (free with [`rg_string_free`]). Artifact
 * contents are added under `"artifact_contents"`, keyed by file name. A
 * divergent run still
 * returns the report, with status `Divergent`.
 *
 * # Safety
 * `config_json` must be a valid C string; `out_report` must be writable.
 */
enum RgStatus rg_run_config(const char *config_json, char **out_report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BLOCKRG_H */
