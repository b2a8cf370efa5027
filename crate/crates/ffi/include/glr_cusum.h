#ifndef GLR_CUSUM_H
#define GLR_CUSUM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GlrStatus {
  GLR_STATUS_OK = 0,
  GLR_STATUS_NULL_POINTER = 1,
  GLR_STATUS_INVALID_CONFIG = 2,
  GLR_STATUS_INVALID_DATA = 3,
  GLR_STATUS_DOMAIN = 4,
  GLR_STATUS_WINDOW_OUT_OF_RANGE = 5,
  GLR_STATUS_IO = 6,
  GLR_STATUS_PANIC = 7,
} GlrStatus;

typedef enum GlrNuMode {
  GLR_NU_MODE_EXACT = 0,
  GLR_NU_MODE_APPROX = 1,
} GlrNuMode;

/**
 * Opaque streaming detector.
 */
typedef struct GlrDetector GlrDetector;

/**
 * Detector settings. `w_n = 0` selects the unbounded window.
 */
typedef struct GlrDetectorConfig {
  double xi;
  size_t w_n;
  size_t r_n;
  double varpi;
  double zeta;
  double delta_n;
  size_t warmup;
  bool reset_on_alarm;
} GlrDetectorConfig;

typedef struct GlrAlarm {
  uint64_t l;
  uint64_t k_star;
  double statistic;
} GlrAlarm;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next failing call on the same thread.
 */
const char *glr_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *glr_version(void);

/**
 * Defaults: ξ = 4, one-minute grid on a 390-minute day, 30-observation
 * window, no minimum span, ζ = 1.
 */
enum GlrStatus glr_detector_config_default(struct GlrDetectorConfig *cfg);

enum GlrStatus glr_detector_new(const struct GlrDetectorConfig *cfg, struct GlrDetector **det);

/**
 * Releases a detector; NULL is ignored.
 */
void glr_detector_free(struct GlrDetector *det);

/**
 * Feeds one raw return `dy` with spot volatility `sigma`. `fired` is set
 * when an alarm is raised, in which case `alarm` (may be NULL) receives it.
 */
enum GlrStatus glr_detector_step(struct GlrDetector *det,
                                 double dy,
                                 double sigma,
                                 bool *fired,
                                 struct GlrAlarm *alarm_out);

/**
 * Feeds an already standardized increment.
 */
enum GlrStatus glr_detector_push(struct GlrDetector *det,
                                 double x,
                                 bool *fired,
                                 struct GlrAlarm *alarm_out);

/**
 * Statistic for the window `(k, l]` over retained anchors.
 */
enum GlrStatus glr_detector_stat(const struct GlrDetector *det,
                                 uint64_t k,
                                 uint64_t l,
                                 double *value);

/**
 * Number of increments consumed so far.
 */
enum GlrStatus glr_detector_index(const struct GlrDetector *det, uint64_t *index);

enum GlrStatus glr_detector_set_zeta(struct GlrDetector *det, double zeta);

/**
 * First alarm over one day of `len` log prices with aligned spot vols.
 * `found` is false when no alarm is raised.
 */
enum GlrStatus glr_first_alarm(const double *log_prices,
                               const double *spot_vols,
                               size_t len,
                               const struct GlrDetectorConfig *cfg,
                               bool *found,
                               struct GlrAlarm *alarm_out);

/**
 * `ζ = 4 × median` of a day's spot-vol estimates.
 */
enum GlrStatus glr_truncation_scale(const double *spot_vols, size_t len, double *zeta);

/**
 * Overshoot constant `D_a`; pass `a = INFINITY` for the unbounded window.
 */
enum GlrStatus glr_theory_d(double a, enum GlrNuMode mode, double *value);

/**
 * Approximate average run length at threshold `xi` and window ratio `a = w_n/ξ²`.
 */
enum GlrStatus glr_theory_arl(double xi, double a, enum GlrNuMode mode, double *value);

/**
 * False detection rate over `ell` observations, linear and exponential forms.
 */
enum GlrStatus glr_theory_fdr(double xi,
                              double a,
                              double ell,
                              enum GlrNuMode mode,
                              double *linear,
                              double *exponential);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GLR_CUSUM_H */
