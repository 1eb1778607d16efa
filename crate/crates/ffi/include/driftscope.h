#ifndef DRIFTSCOPE_H
#define DRIFTSCOPE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DsStatus {
  DS_STATUS_OK = 0,
  DS_STATUS_NULL_POINTER = 1,
  DS_STATUS_INVALID_ARGUMENT = 2,
  DS_STATUS_DIMENSION = 3,
  DS_STATUS_IO = 4,
  DS_STATUS_PARSE = 5,
  DS_STATUS_NUMERIC = 6,
  DS_STATUS_PANIC = 7,
} DsStatus;

/**
 * Linear dynamical system with quadratic risk.
 */
typedef struct DsLds DsLds;

/**
 * Trained recurrent model loaded from a checkpoint.
 */
typedef struct DsModel DsModel;

/**
 * Alert rule; times in seconds.
 */
typedef struct DsAlertRule {
  double ratio_threshold;
  double floor;
  double anchor_time;
  double horizon;
  double check_interval;
  size_t min_new_events;
  bool first_alert_only;
} DsAlertRule;

typedef struct DsAlert {
  size_t t0;
  size_t t1;
  double t0_time;
  double t1_time;
  double p0;
  double p1;
  size_t new_events;
} DsAlert;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty if none.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *ds_last_error_message(void);

/**
 * Default alert rule.
 */
struct DsAlertRule ds_alert_rule_default(void);

/**
 * Load a JSON checkpoint written by `driftscope train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DsStatus ds_model_load(const char *path, struct DsModel **out);

/**
 * # Safety
 * `model` must come from [`ds_model_load`] and not be used afterwards.
 */
void ds_model_free(struct DsModel *model);

/**
 * Input width `d = 2F + 1` expected by the model.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum DsStatus ds_model_input_dim(const struct DsModel *model, size_t *out);

/**
 * Per-step risk. `x` is `n_steps x d`; `out_p` receives `n_steps`
 * values and `out_p_base` (nullable) the empty-prefix prediction.
 *
 * # Safety
 * Pointers must reference arrays of the stated lengths.
 */
enum DsStatus ds_model_forward(const struct DsModel *model,
                               const double *x,
                               const size_t *step_feature,
                               const double *step_time,
                               size_t n_steps,
                               double *out_p,
                               double *out_p_base);

/**
 * Temporal integrated gradients over the window `(t0, t1]` with `m`
 * midpoint nodes and the carry-forward baseline. `out_attr` receives
 * `n_steps x d` values; `out_target` (nullable) receives `p(x) - p(baseline)`.
 *
 * # Safety
 * Pointers must reference arrays of the stated lengths.
 */
enum DsStatus ds_model_integrated_gradients(const struct DsModel *model,
                                            const double *x,
                                            const size_t *step_feature,
                                            const double *step_time,
                                            size_t n_steps,
                                            size_t t0,
                                            size_t t1,
                                            size_t m,
                                            double *out_attr,
                                            double *out_target);

/**
 * Discrete time derivatives `p_t - p_{t-1}` placed on the active value
 * channel of each step. `out_attr` receives `n_steps x d` values.
 *
 * # Safety
 * Pointers must reference arrays of the stated lengths.
 */
enum DsStatus ds_model_discrete_time_derivatives(const struct DsModel *model,
                                                 const double *x,
                                                 const size_t *step_feature,
                                                 const double *step_time,
                                                 size_t n_steps,
                                                 double *out_attr);

/**
 * Build `h_t = A h_{t-1} + B x_t` with risk `0.5 h^T Q h`. `a` is
 * `n x n`, `b` is `n x d`, `h0` has `n` entries, `q` is `n x n` or null
 * for the identity.
 *
 * # Safety
 * Pointers must reference arrays of the stated lengths; `out` must be writable.
 */
enum DsStatus ds_lds_new(const double *a,
                         const double *b,
                         const double *h0,
                         const double *q,
                         size_t n,
                         size_t d,
                         struct DsLds **out);

/**
 * # Safety
 * `lds` must come from [`ds_lds_new`] and not be used afterwards.
 */
void ds_lds_free(struct DsLds *lds);

/**
 * Risk after each step; `out_risk` receives `n_steps` values.
 *
 * # Safety
 * Pointers must reference arrays of the stated lengths.
 */
enum DsStatus ds_lds_run(const struct DsLds *lds,
                         const double *x,
                         size_t n_steps,
                         double *out_risk);

/**
 * `dp_{t1} / dx_t`; `out_grad` receives `d` values.
 *
 * # Safety
 * Pointers must reference arrays of the stated lengths.
 */
enum DsStatus ds_lds_input_gradient(const struct DsLds *lds,
                                    const double *x,
                                    size_t n_steps,
                                    size_t t,
                                    size_t t1,
                                    double *out_grad);

/**
 * Exact integrated gradient of `p_{t1}` from `baseline` to `x`;
 * `out_attr` receives `t1 x d` values.
 *
 * # Safety
 * Pointers must reference arrays of the stated lengths.
 */
enum DsStatus ds_lds_integrated_gradient(const struct DsLds *lds,
                                         const double *baseline,
                                         const double *x,
                                         size_t n_steps,
                                         size_t t1,
                                         double *out_attr);

/**
 * Evaluate `rule` on a risk series. `out_fired` is set to 1 and `out_alert`
 * filled when the rule fires, otherwise `out_fired` is 0.
 *
 * # Safety
 * `p` and `step_time` must hold `n_steps` values; outputs must be writable.
 */
enum DsStatus ds_evaluate_alert_rule(const double *p,
                                     const double *step_time,
                                     size_t n_steps,
                                     double p_base,
                                     const struct DsAlertRule *rule,
                                     int32_t *out_fired,
                                     struct DsAlert *out_alert);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRIFTSCOPE_H */
