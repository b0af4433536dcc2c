#ifndef CPC_H
#define CPC_H

#include <stddef.h>
#include <stdint.h>

/*
 Result code of every entry point.
 */
typedef enum CpcStatus {
  CPC_STATUS_OK = 0,
  CPC_STATUS_NULL_POINTER = 1,
  CPC_STATUS_INVALID_ARGUMENT = 2,
  CPC_STATUS_NUMERICAL = 3,
  CPC_STATUS_PANIC = 4,
} CpcStatus;

/*
 Outcome of `β` calibration.
 */
typedef struct CpcBetaReport CpcBetaReport;

/*
 Safe and optimized categorical policies over `0..len`.
 */
typedef struct CpcPolicyPair CpcPolicyPair;

/*
 Outcome of a CRC or gCRC threshold selection.
 */
typedef struct CpcRiskReport CpcRiskReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *cpc_version(void);

/*
 Message of the last failed call on this thread, or null. Valid until the
 next failing call on the same thread.
 */
const char *cpc_last_error(void);

/*
 Build a policy pair from two probability vectors of length `len`.

 # Safety
 `safe` and `optimized` must point to `len` doubles; `out` must be writable.
 */
enum CpcStatus cpc_policy_pair_new(const double *safe,
                                   const double *optimized,
                                   size_t len,
                                   struct CpcPolicyPair **out);

/*
 # Safety
 `pair` must be null or a handle from [`cpc_policy_pair_new`], freed once.
 */
void cpc_policy_pair_free(struct CpcPolicyPair *pair);

/*
 Calibrate `β` from labeled samples of the safe policy and draws from the
 optimized policy. `beta_min <= 0` selects the default floor.

 # Safety
 Array arguments must hold the stated number of elements.
 */
enum CpcStatus cpc_calibrate_beta(const struct CpcPolicyPair *pair,
                                  const size_t *cal_points,
                                  const double *cal_losses,
                                  size_t n_cal,
                                  const size_t *proposals,
                                  size_t n_proposals,
                                  double alpha,
                                  double bound,
                                  double beta_min,
                                  struct CpcBetaReport **out);

/*
 `β̂`; `+inf` when no clip is needed.

 # Safety
 `report` must be a live handle; `beta_hat` must be writable.
 */
enum CpcStatus cpc_beta_report_beta_hat(const struct CpcBetaReport *report, double *beta_hat);

/*
 Number of scanned grid points.

 # Safety
 `report` must be a live handle; `len` must be writable.
 */
enum CpcStatus cpc_beta_report_len(const struct CpcBetaReport *report, size_t *len);

/*
 Copy the `β` grid and weighted risk trace into arrays of `capacity`
 doubles (at least [`cpc_beta_report_len`]).

 # Safety
 `grid` and `risk` must hold `capacity` writable doubles.
 */
enum CpcStatus cpc_beta_report_trace(const struct CpcBetaReport *report,
                                     double *grid,
                                     double *risk,
                                     size_t capacity);

/*
 # Safety
 `report` must be null or a live handle, freed once.
 */
void cpc_beta_report_free(struct CpcBetaReport *report);

/*
 Draw up to `n` points from the clipped policy at `beta` by accept-reject
 with at most `budget` proposals. Writes the draws to `points` and their
 count to `accepted`.

 # Safety
 `points` must hold `n` writable elements; `accepted` must be writable.
 */
enum CpcStatus cpc_sample(const struct CpcPolicyPair *pair,
                          double beta,
                          size_t n,
                          size_t budget,
                          uint64_t seed,
                          size_t *points,
                          size_t *accepted);

/*
 Generalized CRC threshold. `losses` is row-major, one row of `grid_len`
 values per calibration curve; the largest grid value is the safe end.

 # Safety
 `grid` holds `grid_len` doubles, `losses` holds `grid_len * n_curves`.
 */
enum CpcStatus cpc_gcrc(const double *grid,
                        size_t grid_len,
                        const double *losses,
                        size_t n_curves,
                        double alpha,
                        double bound,
                        struct CpcRiskReport **out);

/*
 Plain CRC threshold; same layout as [`cpc_gcrc`].

 # Safety
 As for [`cpc_gcrc`].
 */
enum CpcStatus cpc_crc(const double *grid,
                       size_t grid_len,
                       const double *losses,
                       size_t n_curves,
                       double alpha,
                       double bound,
                       struct CpcRiskReport **out);

/*
 The selected threshold.

 # Safety
 `report` must be a live handle; `lambda` must be writable.
 */
enum CpcStatus cpc_risk_report_lambda(const struct CpcRiskReport *report, double *lambda);

/*
 # Safety
 `report` must be null or a live handle, freed once.
 */
void cpc_risk_report_free(struct CpcRiskReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CPC_H */
