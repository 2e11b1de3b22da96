#ifndef MFTN_FFI_H
#define MFTN_FFI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MftnStatus {
  MFTN_STATUS_OK = 0,
  MFTN_STATUS_NULL_POINTER = 1,
  MFTN_STATUS_INVALID_UTF8 = 2,
  MFTN_STATUS_INVALID_ARGUMENT = 3,
  MFTN_STATUS_NUMERICAL = 4,
  MFTN_STATUS_SYMMETRY_FAILED = 5,
  MFTN_STATUS_IO = 6,
  MFTN_STATUS_PANIC = 7,
} MftnStatus;

// A basis of local operators.
typedef struct MftnBasis MftnBasis;

// A single MPS tensor with its symmetry data.
typedef struct MftnMps MftnMps;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. The pointer
// stays valid until the next `mftn_*` call on the same thread.
const char *mftn_last_error(void);

// Library version as a static string.
const char *mftn_version(void);

// # Safety
// `s` must come from this library and not have been freed.
void mftn_string_free(char *s);

// Weyl-Heisenberg basis for qudit dimension `d`.
//
// # Safety
// `out` must be a valid pointer to writable storage.
enum MftnStatus mftn_basis_weyl_heisenberg(size_t d, struct MftnBasis **out);

// Number of operators in the basis.
//
// # Safety
// `b` must be a live handle or NULL.
size_t mftn_basis_len(const struct MftnBasis *b);

// # Safety
// `b` must come from this library and not have been freed.
void mftn_basis_free(struct MftnBasis *b);

// The AKLT tensor with its Pauli corrections.
//
// # Safety
// `out` must be a valid pointer to writable storage.
enum MftnStatus mftn_mps_aklt(struct MftnMps **out);

// SPT tensor `Σ α_g P_g* ⊗ P_g` over the basis. `alpha_re` and `alpha_im`
// each hold `len` entries, one per basis element.
//
// # Safety
// `basis` must be a live handle, the arrays must hold `len` readable
// doubles and `out` must be writable.
enum MftnStatus mftn_mps_spt(const struct MftnBasis *basis,
                             const double *alpha_re,
                             const double *alpha_im,
                             size_t len,
                             struct MftnMps **out);

// # Safety
// `a` must be a live handle or NULL.
size_t mftn_mps_bond_dim(const struct MftnMps *a);

// # Safety
// `a` must be a live handle or NULL.
size_t mftn_mps_phys_dim(const struct MftnMps *a);

// Checks the MF symmetry of the tensor. `passed` receives the verdict and
// `residual`, if not NULL, the worst relative residual.
//
// # Safety
// `a` must be a live handle and `passed` writable.
enum MftnStatus mftn_mps_check_symmetry(const struct MftnMps *a,
                                        double tol,
                                        bool *passed,
                                        double *residual);

// Unnormalized expectation of a Weyl-Heisenberg string on a uniform chain
// of `sites` copies of the tensor. `labels` holds one label per site
// separated by `;`, e.g. `"X;I;Z^2"`.
//
// # Safety
// `a` must be a live handle, `labels` a NUL-terminated string and
// `out_re`, `out_im` writable.
enum MftnStatus mftn_mps_expectation(const struct MftnMps *a,
                                     size_t sites,
                                     const char *labels,
                                     bool periodic,
                                     double *out_re,
                                     double *out_im);

// # Safety
// `a` must come from this library and not have been freed.
void mftn_mps_free(struct MftnMps *a);

// Runs a command-line invocation, e.g. `{"transfer", "--alpha", "0.5", "--L", "2"}`,
// without the program name. `out_text` receives the JSON report or help
// text (free with `mftn_string_free`) and `out_code` the process exit code.
//
// # Safety
// `argv` must hold `argc` NUL-terminated strings; `out_text` and
// `out_code` must be writable.
enum MftnStatus mftn_run(size_t argc, const char *const *argv, char **out_text, int32_t *out_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFTN_FFI_H */
