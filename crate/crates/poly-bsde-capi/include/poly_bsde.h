#ifndef POLY_BSDE_H
#define POLY_BSDE_H

/* Generated by the build script from the Rust sources; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of a C API call. Zero means success; every other value is a
// failure and leaves a human-readable explanation in
// [`pb_last_error_message`].
typedef enum PbStatus {
  // The call succeeded and all output parameters are filled.
  PB_STATUS_OK = 0,
  // A required pointer argument was null.
  PB_STATUS_NULL_POINTER = 1,
  // Arguments were rejected before or during evaluation: parameters
  // outside their admissible ranges, a truncation order above the
  // table maximum, or a query time outside the solved span.
  PB_STATUS_INVALID_INPUT = 2,
  // The backward integration produced a non-finite or capped value;
  // typically the expansion does not converge for these parameters.
  PB_STATUS_DIVERGED = 3,
  // An internal least-squares system was numerically singular.
  PB_STATUS_RANK_DEFICIENT = 4,
  // A panic was caught at the boundary; this indicates a bug in the
  // library rather than bad input.
  PB_STATUS_INTERNAL = 5,
} PbStatus;

// Opaque handle to a solved coefficient table: every polynomial
// coefficient of every expansion order on every time node. Created by
// the `pb_solve_*` functions and released with [`pb_table_free`].
typedef struct PbTable PbTable;

// Flat-volatility parameters of the jump model with a state-dependent
// jump intensity.
//
// The forward dynamics are, with `sig(y) = sigma * sqrt(y + 1)`,
//
// ```text
// dx = -(sig(y)^2 / 2 + lambda(y) * beta) dt + sig(y) dW + jumps,
// dy = -kappa * y dt + alpha * sqrt(y + 1) dB,   d<W, B> = rho dt,
// ```
//
// with jump sizes `N(jump_mu, jump_sigma^2)` arriving at rate
// `lambda(y) = max(0, sum_j intensity_coeffs[j] * y^j)` and `beta` the
// compensator `E[e^J - 1]`.
typedef struct PbHestonParams {
  // Base volatility scale; must be positive (typical range 0.05–1).
  double sigma;
  // Volatility of the factor; must be non-negative.
  double alpha;
  // Correlation between the price and factor noises, in [-1, 1].
  double rho;
  // Mean-reversion speed of the factor; must be non-negative.
  double kappa;
  // Mean jump size in log-price units.
  double jump_mu;
  // Jump-size standard deviation; must be non-negative.
  double jump_sigma;
  // Coefficients of the intensity polynomial in `y`, constant term
  // first. May be null when `n_intensity` is zero, which disables
  // jumps entirely.
  const double *intensity_coeffs;
  // Number of intensity coefficients behind `intensity_coeffs`.
  size_t n_intensity;
  // Lower edge of the factor range on which the intensity polynomial
  // must stay non-negative (validated at construction).
  double intensity_lo;
  // Upper edge of that factor range; must exceed `intensity_lo`.
  double intensity_hi;
} PbHestonParams;

// Flat-volatility parameters of the controlled-elasticity model
//
// ```text
// dx = -beta * sigma^2 * (1 + y)^2 * b(x) / 2 dt + sigma * (1 + y) dW,
// dy = -kappa * y dt + alpha * (1 + y) dB,      d<W, B> = rho dt,
// ```
//
// in which the local factor `b(x) = 1 / (1 + (1 - beta) x)` carries the
// elasticity of the original price process: `beta = 1` is lognormal,
// `beta = 0` normal, and for `beta < 1` the state is confined to
// `1 + (1 - beta) x > 0`.
typedef struct PbSabrParams {
  // Base volatility scale; must be positive.
  double sigma;
  // Volatility of the factor; must be non-negative.
  double alpha;
  // Correlation between the price and factor noises, in [-1, 1].
  double rho;
  // Mean-reversion speed of the factor; must be non-negative.
  double kappa;
  // Elasticity exponent, in [0, 1].
  double beta;
} PbSabrParams;

// Parameters of the exponential-utility hedging model. The indifference
// value solves a semilinear equation whose driver contains the squared
// market price of risk `Theta(x, y) = premium_base + premium_slope * y`
// (floored at zero) and a quadratic penalty on the unhedgeable factor
// noise; the terminal condition is `risk_aversion * liability`.
typedef struct PbUtilityParams {
  // Base volatility scale of the traded asset; must be positive.
  double sigma;
  // Volatility of the factor; must be non-negative.
  double alpha;
  // Correlation between the asset and factor noises, in (-1, 1);
  // the endpoints are excluded because the driver divides by
  // `1 - rho^2`.
  double rho;
  // Mean-reversion speed of the factor; must be non-negative.
  double kappa;
  // Constant part of the squared risk premium; must be non-negative.
  double premium_base;
  // Slope of the squared risk premium in the factor.
  double premium_slope;
  // Absolute risk aversion of the exponential utility; must be
  // positive.
  double risk_aversion;
  // Linear loading of the liability on the terminal factor value.
  double liability_slope;
  // Coefficients of the liability's polynomial leg in the terminal
  // log price, constant term first; must hold at least one entry.
  const double *liability_coeffs;
  // Number of coefficients behind `liability_coeffs`.
  size_t n_liability;
} PbUtilityParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Version of the library behind this interface as a static
// NUL-terminated string; never null and valid for the process lifetime.
const char *pb_version(void);

// Message of the most recent failure on the calling thread, as a
// NUL-terminated string. Never null; empty before the first failure.
// The pointer stays valid until the next failing call on the same
// thread, after which it must not be read.
const char *pb_last_error_message(void);

// Releases a table handle. Passing null is a no-op; passing the same
// handle twice, or a pointer not produced by a `pb_solve_*` function,
// is undefined behaviour.
//
// # Safety
//
// `table` must be null or a handle previously returned through a
// `pb_solve_*` out-parameter and not yet freed.
void pb_table_free(struct PbTable *table);

// Highest expansion order held by the table, or -1 when `table` is
// null. Orders `0..=n_max` are valid in the query functions.
//
// # Safety
//
// `table` must be null or a live handle from a `pb_solve_*` function.
int32_t pb_table_n_max(const struct PbTable *table);

// Evaluates the expansion value summed through `order` at time `t` and
// state `(x, y)`, writing it to `out_value`. The time must lie inside
// the solved span `[0, t_end]`; it is resolved to the nearest grid node
// from below.
//
// # Safety
//
// `table` must be a live handle from a `pb_solve_*` function and
// `out_value` must point to writable memory for one `double`.
enum PbStatus pb_table_value(const struct PbTable *table,
                             size_t order,
                             double t,
                             double x,
                             double y,
                             double *out_value);

// Evaluates the hedging controls of the truncated value at time `t` and
// state `(x, y)`: `out_z` receives the partial derivative in `x` (the
// diffusion control) and `out_gamma` the partial derivative in `y` (the
// factor exposure).
//
// # Safety
//
// `table` must be a live handle from a `pb_solve_*` function; `out_z`
// and `out_gamma` must each point to writable memory for one `double`.
enum PbStatus pb_table_controls(const struct PbTable *table,
                                size_t order,
                                double t,
                                double x,
                                double y,
                                double *out_z,
                                double *out_gamma);

// Evaluates the jump control of the truncated value: the exact change
// of the order-`order` truncation when the log price jumps from `x` to
// `x + jump`, written to `out_value`. It satisfies
//
// ```text
// U(t, x, y, jump) = V(t, x + jump, y) - V(t, x, y)
// ```
//
// for the truncated polynomial `V`.
//
// # Safety
//
// `table` must be a live handle from a `pb_solve_*` function and
// `out_value` must point to writable memory for one `double`.
enum PbStatus pb_table_jump_control(const struct PbTable *table,
                                    size_t order,
                                    double t,
                                    double x,
                                    double y,
                                    double jump,
                                    double *out_value);

// Solves the jump model for the terminal condition `x^moment` through
// expansion order `n_max` on a uniform grid of `n_steps` steps over
// `[0, t_end]`, writing a fresh handle to `out_table` on success. On
// failure `out_table` is left untouched.
//
// # Safety
//
// `params` must point to a valid [`PbHestonParams`] (with
// `intensity_coeffs` covering `n_intensity` doubles when non-null) and
// `out_table` must point to writable memory for one pointer.
enum PbStatus pb_solve_heston(const struct PbHestonParams *params,
                              size_t moment,
                              size_t n_max,
                              double t_end,
                              size_t n_steps,
                              struct PbTable **out_table);

// Solves the controlled-elasticity model for the terminal condition
// `x^moment` through expansion order `n_max` on a uniform grid of
// `n_steps` steps over `[0, t_end]`, writing a fresh handle to
// `out_table` on success.
//
// # Safety
//
// `params` must point to a valid [`PbSabrParams`] and `out_table` must
// point to writable memory for one pointer.
enum PbStatus pb_solve_sabr(const struct PbSabrParams *params,
                            size_t moment,
                            size_t n_max,
                            double t_end,
                            size_t n_steps,
                            struct PbTable **out_table);

// Solves the utility hedging model through expansion order `n_max` on a
// uniform grid of `n_steps` steps over `[0, t_end]`, writing a fresh
// handle to `out_table` on success. The solved quantity is the
// certainty-equivalent exponent; its value and controls are queried
// with the same `pb_table_*` functions as the pricing models.
//
// # Safety
//
// `params` must point to a valid [`PbUtilityParams`] (with
// `liability_coeffs` covering `n_liability` doubles) and `out_table`
// must point to writable memory for one pointer.
enum PbStatus pb_solve_utility(const struct PbUtilityParams *params,
                               size_t n_max,
                               double t_end,
                               size_t n_steps,
                               struct PbTable **out_table);

// Computes the power moments of the terminal log price under the jump
// model: `out_gammas[i]` receives the order-`n_max` estimate of
// `E[x_T^(i+1)]` for `i = 0..m_max`, so the array must hold `m_max`
// doubles (first moment first). The backward grid has `n_steps`
// uniform steps over `[0, t_end]`.
//
// # Safety
//
// `params` must point to a valid [`PbHestonParams`] and `out_gammas`
// must point to writable memory for `m_max` doubles.
enum PbStatus pb_heston_moments(const struct PbHestonParams *params,
                                size_t m_max,
                                size_t n_max,
                                double t_end,
                                size_t n_steps,
                                double *out_gammas);

// Computes the power moments of the terminal log price under the
// controlled-elasticity model; see [`pb_heston_moments`] for the
// output convention.
//
// # Safety
//
// `params` must point to a valid [`PbSabrParams`] and `out_gammas`
// must point to writable memory for `m_max` doubles.
enum PbStatus pb_sabr_moments(const struct PbSabrParams *params,
                              size_t m_max,
                              size_t n_max,
                              double t_end,
                              size_t n_steps,
                              double *out_gammas);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POLY_BSDE_H */
