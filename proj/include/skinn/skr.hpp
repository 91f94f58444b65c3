#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "skinn/autodiff.hpp"

namespace skinn {

struct PricingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/**
 * Structured-knowledge representations: every pricing theory the network can
 * be anchored to. Closed-form kernels (Bsm, Absm), the asymptotic dynamic
 * SABR surface, characteristic-function models priced by cosine expansion
 * (Hsv, Hsvj), the nonparametric martingale probability matrix (Mopa), and
 * the surrogate-backed entries that route through a frozen pretrained net.
 */
enum class Repr : std::uint8_t {
  Bsm,
  Absm,
  Sabr,
  Hsv,
  Hsvj,
  Mopa,
  DsnnHsv,
  DsnnNasv,
  AeBsm,
};

std::size_t repr_dim(Repr repr);
const char* repr_name(Repr repr);
Repr repr_from_name(const std::string& s);

/** Names of the constrained parameters, one per repr_dim slot. */
std::vector<std::string> repr_param_names(Repr repr);

/** One option quote's pricing inputs. m is redundant (K/S) but kept explicit. */
struct SkInputs {
  double S = 0.0;    // spot
  double K = 0.0;    // strike
  double r = 0.0;    // continuously compounded rate, per year
  double tau = 0.0;  // time to maturity, years
  double m = 0.0;    // moneyness K/S

  static SkInputs make(double S, double K, double r, double tau);
  void validate() const;
};

/**
 * Latent parameter vector for one representation, stored unconstrained.
 * param_transform maps it to the constrained domain. Raw zeros decode to
 * conventional starting values (sigma 0.2, kappa 2, variances 0.04, ...).
 *
 * Constrained layouts:
 *   Bsm      [sigma]
 *   Absm     [a0..a5], the implied-vol polynomial coefficients
 *   Sabr     [alpha, beta, nu_1..nu_360, rho_1..rho_360]
 *   Hsv      [v_theta, v0, sigma_v, rho, kappa]
 *   Hsvj     Hsv + [p, eta1, eta2, lambda]
 *   Mopa     row-major 10 x 200 state probabilities
 *   DsnnHsv  same as Hsv
 *   DsnnNasv Hsv + [gamma_v]
 *   AeBsm    [z1, z2], unconstrained latent codes
 */
struct SkrParams {
  Repr repr = Repr::Bsm;
  std::vector<double> raw;

  static SkrParams init(Repr repr);
};

// Transform a raw leaf block already on the tape into the constrained view.
std::vector<Var> param_transform(Tape& t, Index raw0, std::size_t n, Repr repr);
// Convenience: lift raw values and transform in one call.
std::vector<Var> param_transform(Tape& t, const std::vector<double>& raw, Repr repr);
// Constrained values without a tape, for reporting and interval work.
std::vector<double> param_transform_values(const std::vector<double>& raw, Repr repr);

// Smooth floor keeping implied vols positive; identity to round-off for
// inputs comfortably above the floor. Counts how often the floor engaged.
Var floored_vol(Tape& t, Var sigma);
std::uint64_t vol_floor_count();
void reset_vol_floor_count();

Var bsm_price(Tape& t, const SkInputs& x, Var sigma);

Var absm_vol(Tape& t, double m, double tau, const std::vector<Var>& alpha);
Var absm_price(Tape& t, const SkInputs& x, const std::vector<Var>& alpha);

/**
 * Per-tape cache for the dynamic SABR surface. The latent vol-of-vol and
 * correlation curves live on a fixed grid t_i = i/360; the quadratures every
 * option needs are linear functionals of the gridded values (plus the squared
 * running integral for the double-integral term), so one build serves a whole
 * panel of strikes and maturities on the same tape.
 */
struct SabrCurves {
  Tape* tape = nullptr;
  Index nu_sq0 = 0;             // 360 contiguous nodes, nu_i^2
  Index q0 = 0;                 // 360 contiguous nodes, nu_i * rho_i
  std::vector<Var> p;           // running integral P(t_i) of nu*rho, [0..360]
  std::vector<Var> p_sq;        // P(t_i)^2, [0..360]
  std::vector<Var> g;           // running integral of P^2, [0..360]
  std::vector<Var> j;           // running integral of g, [0..360]
};

struct SabrTimeFunctions {
  Var v1_sq;
  Var v2_sq;
  Var eta1;
  Var eta2;
};

SabrCurves build_sabr_curves(Tape& t, const std::vector<Var>& nu,
                             const std::vector<Var>& rho);
SabrTimeFunctions sabr_time_functions_at(const SabrCurves& curves, double T);
// One-shot variant; builds the curves internally.
SabrTimeFunctions sabr_time_functions(Tape& t, const std::vector<Var>& nu,
                                      const std::vector<Var>& rho, double T);

Var sabr_implied_vol(Tape& t, const SkInputs& x, Var alpha, Var beta,
                     const SabrCurves& curves);
Var sabr_price(Tape& t, const SkInputs& x, Var alpha, Var beta,
               const SabrCurves& curves);
// Prices from the full constrained vector, building curves on the fly.
Var sabr_price(Tape& t, const SkInputs& x, const std::vector<Var>& constrained);

/** Cosine-expansion controls. The interval (a, b) is derived per call. */
struct CosConfig {
  int terms = 256;
  double width = 12.0;  // multiplier L on the cumulant-implied std dev

  void validate() const;
};

struct CosInterval {
  double a = 0.0;
  double b = 0.0;
};

// Characteristic function of log S_T under the square-root volatility model,
// phi = [v_theta, v0, sigma_v, rho, kappa].
CVar heston_cf(Tape& t, double u, const SkInputs& x, const std::vector<Var>& phi);

// Characteristic function of the double-exponential jump component.
CVar jump_cf(Tape& t, double u, Var p, Var eta1, Var eta2, Var lambda, double tau);

// Truncation interval from the first two cumulants of log(S_T/K); jump
// cumulants (including the fourth) are added for Hsvj.
CosInterval cos_interval(const SkInputs& x, const std::vector<double>& phi,
                         Repr repr, double width);

// Call payoff series coefficients on [a, b] in log-moneyness.
std::vector<double> cos_payoff_coeffs(double a, double b, int n, double K);

Var cos_price(Tape& t, const SkInputs& x, const std::vector<Var>& phi, Repr repr,
              const CosConfig& cos);

/**
 * State grid shared by all tenors of the martingale probability matrix:
 * 10 tenors 0.1..1.0, 200 terminal price states equally spaced on
 * [0.5, 1.5] x reference spot, discount factors at a reference rate.
 */
struct MopaGrid {
  std::vector<double> tenors;
  std::vector<double> states;
  std::vector<double> discounts;
  double spot_ref = 0.0;

  std::size_t n_tenors() const { return tenors.size(); }
  std::size_t n_states() const { return states.size(); }
};

MopaGrid make_mopa_grid(double spot_ref, double rate_ref, std::size_t n_tenors = 10,
                        std::size_t n_states = 200);
// Nearest tenor for an option's maturity; throws if tau is beyond the grid.
std::size_t mopa_tenor_index(const MopaGrid& grid, double tau);
// One row of the terminal payoff matrix for a strike.
std::vector<double> mopa_payoff_row(const MopaGrid& grid, double K);

Var mopa_price(Tape& t, const SkInputs& x, const MopaGrid& grid,
               const std::vector<Var>& q);

/** Pricing hook for representations backed by a frozen pretrained net. */
struct SurrogateBackend {
  virtual ~SurrogateBackend() = default;
  virtual Var price(Tape& t, const SkInputs& x,
                    const std::vector<Var>& phi) const = 0;
  // Pin any cached constants onto the tape ahead of a checkpoint mark, so
  // rewinds to that mark keep them alive. Default backends have none.
  virtual void bind(Tape&) const {}
};

/**
 * Shared context for skr_price. The caches must have been built on the same
 * tape, from the same constrained vector, as the prices being requested.
 */
struct SkrContext {
  CosConfig cos;
  const MopaGrid* mopa = nullptr;
  const SabrCurves* sabr = nullptr;
  const SurrogateBackend* surrogate = nullptr;
};

Var skr_price(Tape& t, Repr repr, const SkInputs& x,
              const std::vector<Var>& constrained, const SkrContext& ctx);

}  // namespace skinn
