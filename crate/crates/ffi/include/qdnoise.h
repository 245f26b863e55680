#ifndef QDNOISE_H
#define QDNOISE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QdnStatus {
  QDN_STATUS_OK = 0,
  QDN_STATUS_NULL_POINTER = 1,
  QDN_STATUS_INVALID_ARGUMENT = 2,
  QDN_STATUS_CONFIG_ERROR = 3,
  QDN_STATUS_NUMERIC_ERROR = 4,
  QDN_STATUS_IO_ERROR = 5,
  QDN_STATUS_BUFFER_TOO_SMALL = 6,
  QDN_STATUS_PANIC = 7,
} QdnStatus;

/**
 * Power-spectral-density model.
 */
typedef struct QdnPsd QdnPsd;

/**
 * One-sided Welch estimate.
 */
typedef struct QdnPsdEstimate QdnPsdEstimate;

/**
 * Uniformly sampled noise trace.
 */
typedef struct QdnTrace QdnTrace;

/**
 * Library version as a static NUL-terminated string.
 */
const char *qdn_version(void);

/**
 * Message of the last failure on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *qdn_last_error(void);

void qdn_clear_error(void);

/**
 * Parse a PSD model from JSON (`{"unit_label": ..., "segments": [...]}`).
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum QdnStatus qdn_psd_from_json(const char *json, struct QdnPsd **out);

/**
 * # Safety
 * `psd` must come from `qdn_psd_from_json` or be NULL.
 */
void qdn_psd_free(struct QdnPsd *psd);

/**
 * # Safety
 * `psd` must be a live handle and `out` a valid pointer.
 */
enum QdnStatus qdn_psd_eval(const struct QdnPsd *psd, double frequency_hz, double *out);

/**
 * # Safety
 * `psd` must be a live handle and `out` a valid pointer.
 */
enum QdnStatus qdn_psd_integrate(const struct QdnPsd *psd,
                                 double f_lo_hz,
                                 double f_hi_hz,
                                 double *out);

/**
 * # Safety
 * `psd` must be a live handle and `out` a valid pointer.
 */
enum QdnStatus qdn_synthesize(const struct QdnPsd *psd,
                              size_t n_samples,
                              double sample_rate_hz,
                              uint64_t seed,
                              struct QdnTrace **out);

/**
 * Trace from caller-owned samples, which are copied.
 *
 * # Safety
 * `samples` must point to `n` doubles, `unit` be a NUL-terminated label
 * such as `"detuning-Hz"`, and `out` a valid pointer.
 */
enum QdnStatus qdn_trace_from_samples(const double *samples,
                                      size_t n,
                                      double sample_rate_hz,
                                      const char *unit,
                                      struct QdnTrace **out);

/**
 * # Safety
 * `trace` must come from this library or be NULL.
 */
void qdn_trace_free(struct QdnTrace *trace);

/**
 * Number of samples; 0 for a NULL handle.
 *
 * # Safety
 * `trace` must be a live handle or NULL.
 */
size_t qdn_trace_len(const struct QdnTrace *trace);

/**
 * Sample rate in Hz; NaN for a NULL handle.
 *
 * # Safety
 * `trace` must be a live handle or NULL.
 */
double qdn_trace_sample_rate(const struct QdnTrace *trace);

/**
 * Copy the samples into `buf`, which must hold at least `qdn_trace_len`.
 *
 * # Safety
 * `buf` must point to `capacity` writable doubles.
 */
enum QdnStatus qdn_trace_copy_samples(const struct QdnTrace *trace, double *buf, size_t capacity);

/**
 * # Safety
 * `trace` must be a live handle and `path` a NUL-terminated string.
 */
enum QdnStatus qdn_trace_save(const struct QdnTrace *trace, const char *path);

/**
 * # Safety
 * `path` and `unit` must be NUL-terminated strings and `out` valid.
 */
enum QdnStatus qdn_trace_load(const char *path, const char *unit, struct QdnTrace **out);

/**
 * Welch estimate. `segment_length` 0 picks the default; `window` is 0 for
 * Hann and 1 for rectangular.
 *
 * # Safety
 * `trace` must be a live handle and `out` a valid pointer.
 */
enum QdnStatus qdn_welch(const struct QdnTrace *trace,
                         size_t segment_length,
                         double overlap_fraction,
                         uint32_t window,
                         struct QdnPsdEstimate **out);

/**
 * # Safety
 * `est` must come from `qdn_welch` or be NULL.
 */
void qdn_estimate_free(struct QdnPsdEstimate *est);

/**
 * Number of frequency bins; 0 for a NULL handle.
 *
 * # Safety
 * `est` must be a live handle or NULL.
 */
size_t qdn_estimate_len(const struct QdnPsdEstimate *est);

/**
 * Copy bin frequencies and densities; either buffer may be NULL.
 *
 * # Safety
 * Non-NULL buffers must hold `capacity` writable doubles.
 */
enum QdnStatus qdn_estimate_copy(const struct QdnPsdEstimate *est,
                                 double *frequencies_hz,
                                 double *densities,
                                 size_t capacity);

/**
 * Ramsey fringe spin-up probability.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum QdnStatus qdn_fringe_probability(double f_rabi_hz,
                                      double t_pi_half_s,
                                      double t_e_s,
                                      double delta_f_hz,
                                      double *out);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum QdnStatus qdn_t2star_prediction(double s0,
                                     double alpha,
                                     double t_m_s,
                                     double t_e_s,
                                     double *out);

/**
 * Spinful nuclei `p gamma n_atoms`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum QdnStatus qdn_count_spinful(double p, double gamma, double n_atoms, double *out);

/**
 * Ergodic-limit hyperfine T2* in seconds.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum QdnStatus qdn_ergodic_t2star(double p,
                                  double gamma,
                                  double hyperfine_ev,
                                  double nuclear_spin,
                                  double n_atoms,
                                  double *out);

#endif  /* QDNOISE_H */
