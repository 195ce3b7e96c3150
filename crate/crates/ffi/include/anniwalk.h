#ifndef ANNIWALK_H
#define ANNIWALK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes for every fallible call.
 */
typedef enum AwStatus {
  AwStatus_Ok = 0,
  AwStatus_NullPointer = 1,
  AwStatus_InvalidUtf8 = 2,
  AwStatus_BadConfig = 3,
  AwStatus_GeometryError = 4,
  AwStatus_NumericsError = 5,
  AwStatus_BufferTooSmall = 6,
  AwStatus_Panic = 7,
} AwStatus;

/**
 * Opaque domain description.
 */
typedef struct AwDomain AwDomain;

/**
 * Opaque table of exact constants.
 */
typedef struct AwJnTable AwJnTable;

/**
 * Opaque lattice with its conductances.
 */
typedef struct AwLattice AwLattice;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string.
 */
const char *aw_version(void);

/**
 * Parse a domain from its JSON description.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum AwStatus aw_domain_from_json(const char *json, struct AwDomain **out);

/**
 * # Safety
 * `d` must come from `aw_domain_from_json` and not be freed twice.
 */
void aw_domain_free(struct AwDomain *d);

/**
 * Build the lattice of one side (`side`: 0 plus, 1 minus) at level `j`.
 *
 * # Safety
 * `d` must be a live domain handle; `out` a valid pointer.
 */
enum AwStatus aw_lattice_build(const struct AwDomain *d,
                               uint32_t side,
                               uint32_t j,
                               struct AwLattice **out);

/**
 * # Safety
 * `l` must come from `aw_lattice_build` and not be freed twice.
 */
void aw_lattice_free(struct AwLattice *l);

/**
 * Vertex, edge, and boundary counts of a built lattice.
 *
 * # Safety
 * `l` must be a live lattice handle; out pointers valid or null.
 */
enum AwStatus aw_lattice_counts(const struct AwLattice *l,
                                uintptr_t *vertices,
                                uintptr_t *edges,
                                uintptr_t *boundary);

/**
 * Total vertex measure of the lattice walk.
 *
 * # Safety
 * `l` must be a live lattice handle; `out` valid.
 */
enum AwStatus aw_lattice_total_measure(const struct AwLattice *l, double *out);

/**
 * Total interface surface measure between the two sides at level `j`.
 *
 * # Safety
 * `d` must be a live domain handle; `out` valid.
 */
enum AwStatus aw_interface_total_measure(const struct AwDomain *d, uint32_t j, double *out);

/**
 * Allocate the exact constant table `J_0 .. J_n_max`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum AwStatus aw_jn_table_new(uint32_t n_max, struct AwJnTable **out);

/**
 * # Safety
 * `t` must come from `aw_jn_table_new` and not be freed twice.
 */
void aw_jn_table_free(struct AwJnTable *t);

/**
 * Floating value of `J_n`.
 *
 * # Safety
 * `t` must be a live table handle; `out` valid.
 */
enum AwStatus aw_jn_decimal(const struct AwJnTable *t, uint32_t n, double *out);

/**
 * Exact value of `J_n` as a string like `4 + 10/3*pi`.
 *
 * # Safety
 * `t` must be a live table handle; `buf` must hold `cap` writable bytes.
 */
enum AwStatus aw_jn_exact_string(const struct AwJnTable *t, uint32_t n, char *buf, uintptr_t cap);

/**
 * Run an experiment from a JSON config; the manifest is written back as
 * JSON. `pass` receives 1 when every gated check passed.
 *
 * # Safety
 * `json` must be NUL-terminated; `buf` must hold `cap` writable bytes;
 * `pass` may be null.
 */
enum AwStatus aw_run_experiment(const char *json, char *buf, uintptr_t cap, int32_t *pass);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ANNIWALK_H */
