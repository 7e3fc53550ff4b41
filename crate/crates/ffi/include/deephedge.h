/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef DEEPHEDGE_H
#define DEEPHEDGE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum DhStatus {
  DH_STATUS_OK = 0,
  DH_STATUS_NULL_POINTER = 1,
  DH_STATUS_INVALID_ARGUMENT = 2,
  DH_STATUS_DOMAIN = 3,
  DH_STATUS_NO_CONVERGENCE = 4,
  DH_STATUS_IO = 5,
  DH_STATUS_FORMAT = 6,
  DH_STATUS_OUT_OF_RANGE = 7,
  DH_STATUS_PANIC = 8,
} DhStatus;

// A trained hedging policy loaded from a checkpoint directory.
typedef struct DhAgent DhAgent;

// A simulated hedging episode.
typedef struct DhEpisode DhEpisode;

// Black-Scholes sensitivities; theta per year, vega per unit volatility.
typedef struct DhGreeks {
  double delta;
  double gamma;
  double theta;
  double vega;
} DhGreeks;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or an empty string.
// The pointer stays valid until the next call on the same thread.
const char *dh_last_error(void);

// Library version as a static NUL-terminated string.
const char *dh_version(void);

// European call price. `tau` in years.
//
// # Safety
// `out` must be null or valid for writes.
enum DhStatus dh_bs_call_price(double spot,
                               double strike,
                               double tau,
                               double vol,
                               double rate,
                               double *out);

// # Safety
// `out` must be null or valid for writes.
enum DhStatus dh_bs_delta(double spot,
                          double strike,
                          double tau,
                          double vol,
                          double rate,
                          double *out);

// # Safety
// `out` must be null or valid for writes.
enum DhStatus dh_bs_greeks(double spot,
                           double strike,
                           double tau,
                           double vol,
                           double rate,
                           struct DhGreeks *out);

// Volatility reproducing `price`.
//
// # Safety
// `out` must be null or valid for writes.
enum DhStatus dh_implied_vol(double price,
                             double spot,
                             double strike,
                             double tau,
                             double rate,
                             double *out);

// Simulate one at-the-money episode. Free the handle with [`dh_episode_free`].
//
// # Safety
// `out` must be null or valid for writes.
enum DhStatus dh_episode_generate(double drift,
                                  double vol,
                                  double initial_price,
                                  uint32_t maturity_days,
                                  uint32_t steps_per_day,
                                  uint64_t seed,
                                  struct DhEpisode **out);

// Number of grid nodes (steps + 1).
//
// # Safety
// `episode` must come from [`dh_episode_generate`]; `out` valid for writes.
enum DhStatus dh_episode_len(const struct DhEpisode *episode, size_t *out);

// # Safety
// `episode` must come from [`dh_episode_generate`]; `out` valid for writes.
enum DhStatus dh_episode_stock(const struct DhEpisode *episode, size_t index, double *out);

// # Safety
// `episode` must come from [`dh_episode_generate`]; `out` valid for writes.
enum DhStatus dh_episode_option(const struct DhEpisode *episode, size_t index, double *out);

// Premium received at the start of the episode.
//
// # Safety
// `episode` must come from [`dh_episode_generate`]; `out` valid for writes.
enum DhStatus dh_episode_premium(const struct DhEpisode *episode, double *out);

// Total P&L of hedging the episode with `agent`, or with the
// Black-Scholes delta when `agent` is null.
//
// # Safety
// Handles must be null or live; `out` valid for writes.
enum DhStatus dh_episode_hedge_pnl(const struct DhEpisode *episode,
                                   const struct DhAgent *agent,
                                   double cost_rate,
                                   double *out);

// # Safety
// `episode` must be null or come from [`dh_episode_generate`], freed once.
void dh_episode_free(struct DhEpisode *episode);

// Load the actor of a checkpoint directory written by `deephedge train`.
//
// # Safety
// `dir` must be a NUL-terminated UTF-8 path; `out` valid for writes.
enum DhStatus dh_agent_load(const char *dir, struct DhAgent **out);

// Target hedge position in [0, 1] and predicted reward variance for a
// simulated state. `tau` in years, `moneyness` = spot / strike.
//
// # Safety
// `agent` must be live; `position_out` and `sigma2_out` valid for writes
// (`sigma2_out` may be null).
enum DhStatus dh_agent_act(const struct DhAgent *agent,
                           double tau,
                           double moneyness,
                           double position,
                           double vol,
                           double *position_out,
                           double *sigma2_out);

// # Safety
// `agent` must be null or come from [`dh_agent_load`], freed once.
void dh_agent_free(struct DhAgent *agent);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEEPHEDGE_H */
