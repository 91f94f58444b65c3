#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "skinn/autodiff.hpp"
#include "skinn/rng.hpp"
#include "skinn/skr.hpp"
#include "oracles/binomial.hpp"
#include "oracles/finite_diff.hpp"
#include "oracles/heston_cos.hpp"
#include "oracles/sabr_integrals.hpp"

using namespace skinn;

namespace {

std::vector<Var> lift_vars(Tape& t, const std::vector<double>& v) {
  Index b = t.lift_block(v.data(), v.size());
  std::vector<Var> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(t.node(static_cast<Index>(b + i)));
  return out;
}

// price from constrained values on a throwaway tape
double dispatch_value(Repr repr, const SkInputs& x, const std::vector<double>& con,
                      const MopaGrid* grid = nullptr, CosConfig cos = {}) {
  Tape t;
  auto c = lift_vars(t, con);
  SkrContext ctx;
  ctx.mopa = grid;
  ctx.cos = cos;
  return skr_price(t, repr, x, c, ctx).value();
}

std::vector<double> dispatch_grad(Repr repr, const SkInputs& x,
                                  const std::vector<double>& con,
                                  const MopaGrid* grid = nullptr,
                                  CosConfig cos = {}) {
  Tape t;
  Index b = t.lift_block(con.data(), con.size());
  std::vector<Var> c;
  c.reserve(con.size());
  for (std::size_t i = 0; i < con.size(); ++i)
    c.push_back(t.node(static_cast<Index>(b + i)));
  SkrContext ctx;
  ctx.mopa = grid;
  ctx.cos = cos;
  Var px = skr_price(t, repr, x, c, ctx);
  std::vector<double> g(con.size());
  t.grad_block(px, b, con.size(), g.data());
  return g;
}

// The truncation interval is held fixed while the tape differentiates, which
// is the exact price's gradient. The finite-difference side recomputes the
// interval at every bump and so also measures the payoff mass beyond the
// truncation point, a term that dies off exponentially in the interval width;
// gradient comparisons therefore run wider and deeper than production pricing.
void check_grad_against_fd(Repr repr, const SkInputs& x, std::vector<double> con,
                           const std::vector<std::size_t>& coords,
                           const MopaGrid* grid = nullptr, CosConfig cos = {}) {
  std::vector<double> g = dispatch_grad(repr, x, con, grid, cos);
  double px = dispatch_value(repr, x, con, grid, cos);
  for (std::size_t j : coords) {
    double save = con[j];
    double h = 1e-3 * (1.0 + std::abs(save));
    auto f = [&](double v) {
      con[j] = v;
      double p = dispatch_value(repr, x, con, grid, cos);
      con[j] = save;
      return p;
    };
    double fd = oracle::central_diff4(f, save, h);
    double tol = 1e-4 * std::max({std::abs(fd), std::abs(g[j]),
                                  1e-6 * (1.0 + std::abs(px))});
    CAPTURE(j);
    CAPTURE(g[j]);
    CAPTURE(fd);
    CHECK(std::abs(g[j] - fd) <= tol);
  }
}

SkInputs random_inputs(Rng& rng, double tau_lo = 0.2, double tau_hi = 1.0) {
  double m = rng.uniform(0.8, 1.2);
  double r = rng.uniform(0.0, 0.05);
  double tau = rng.uniform(tau_lo, tau_hi);
  return SkInputs::make(100.0, 100.0 * m, r, tau);
}

std::vector<double> random_hsv(Rng& rng) {
  return {rng.uniform(0.02, 0.12), rng.uniform(0.02, 0.12),
          rng.uniform(0.2, 0.8), rng.uniform(-0.85, 0.2),
          rng.uniform(0.8, 4.0)};
}

std::vector<double> random_hsvj(Rng& rng) {
  auto p = random_hsv(rng);
  p.push_back(rng.uniform(0.25, 0.75));
  p.push_back(rng.uniform(5.0, 15.0));
  p.push_back(rng.uniform(3.0, 10.0));
  p.push_back(rng.uniform(0.1, 1.0));
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// representation table and inputs

TEST_CASE("representation dimensions and name round trip") {
  CHECK(repr_dim(Repr::Bsm) == 1);
  CHECK(repr_dim(Repr::Absm) == 6);
  CHECK(repr_dim(Repr::Sabr) == 722);
  CHECK(repr_dim(Repr::Hsv) == 5);
  CHECK(repr_dim(Repr::Hsvj) == 9);
  CHECK(repr_dim(Repr::Mopa) == 2000);
  CHECK(repr_dim(Repr::DsnnHsv) == 5);
  CHECK(repr_dim(Repr::DsnnNasv) == 6);
  CHECK(repr_dim(Repr::AeBsm) == 2);

  for (int k = 0; k <= static_cast<int>(Repr::AeBsm); ++k) {
    Repr r = static_cast<Repr>(k);
    CHECK(repr_from_name(repr_name(r)) == r);
  }
  CHECK_THROWS_AS(repr_from_name("garch"), PricingError);
}

TEST_CASE("input validation") {
  SkInputs x = SkInputs::make(100.0, 110.0, 0.03, 0.5);
  CHECK(x.m == doctest::Approx(1.1).epsilon(1e-14));
  CHECK_THROWS_AS(SkInputs::make(100.0, 100.0, 0.05, 0.0), PricingError);
  CHECK_THROWS_AS(SkInputs::make(100.0, 100.0, 0.05, -0.1), PricingError);
  CHECK_THROWS_AS(SkInputs::make(-1.0, 100.0, 0.05, 0.5), PricingError);
  CHECK_THROWS_AS(SkInputs::make(100.0, 0.0, 0.05, 0.5), PricingError);

  SkInputs bad = x;
  bad.m = 1.2;
  CHECK_THROWS_AS(bad.validate(), PricingError);
}

// ---------------------------------------------------------------------------
// parameter transform

TEST_CASE("raw zeros decode to the conventional starting point") {
  auto bsm = param_transform_values(std::vector<double>(1, 0.0), Repr::Bsm);
  CHECK(bsm[0] == doctest::Approx(0.2).epsilon(1e-14));

  auto hsv = param_transform_values(std::vector<double>(5, 0.0), Repr::Hsv);
  CHECK(hsv[0] == doctest::Approx(0.04).epsilon(1e-14));
  CHECK(hsv[1] == doctest::Approx(0.04).epsilon(1e-14));
  CHECK(hsv[2] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(hsv[3] == 0.0);
  CHECK(hsv[4] == doctest::Approx(2.0).epsilon(1e-14));

  auto hsvj = param_transform_values(std::vector<double>(9, 0.0), Repr::Hsvj);
  CHECK(hsvj[5] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(hsvj[6] == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(hsvj[7] == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(hsvj[8] == doctest::Approx(0.5).epsilon(1e-14));

  auto nasv = param_transform_values(std::vector<double>(6, 0.0), Repr::DsnnNasv);
  CHECK(nasv[5] == doctest::Approx(0.5).epsilon(1e-14));

  auto sabr = param_transform_values(std::vector<double>(722, 0.0), Repr::Sabr);
  CHECK(sabr[0] == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(sabr[1] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(sabr[2] == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(sabr[361] == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(sabr[362] == 0.0);
  CHECK(sabr[721] == 0.0);

  auto absm = param_transform_values(std::vector<double>(6, 0.0), Repr::Absm);
  CHECK(absm[0] == doctest::Approx(0.2).epsilon(1e-14));
  for (int i = 1; i < 6; ++i) CHECK(absm[i] == 0.0);

  auto ae = param_transform_values({0.3, -0.7}, Repr::AeBsm);
  CHECK(ae[0] == 0.3);
  CHECK(ae[1] == -0.7);
}

TEST_CASE("mopa rows are simplex points and equal raws give a uniform row") {
  std::vector<double> raw(2000, 0.7);
  auto q = param_transform_values(raw, Repr::Mopa);
  for (std::size_t h = 0; h < 10; ++h) {
    double s = 0.0;
    for (std::size_t i = 0; i < 200; ++i) {
      double qi = q[h * 200 + i];
      CHECK(qi >= 0.0);
      CHECK(qi == doctest::Approx(1.0 / 200.0).epsilon(1e-12));
      s += qi;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }

  Rng rng(11, Stream::Generic);
  for (auto& v : raw) v = rng.uniform(-2.0, 2.0);
  q = param_transform_values(raw, Repr::Mopa);
  for (std::size_t h = 0; h < 10; ++h) {
    double s = 0.0;
    for (std::size_t i = 0; i < 200; ++i) s += q[h * 200 + i];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("correlation transform saturates cleanly") {
  std::vector<double> raw(5, 0.0);
  raw[3] = 20.0;
  auto hsv = param_transform_values(raw, Repr::Hsv);
  CHECK(1.0 - hsv[3] < 1e-8);
  CHECK(hsv[3] <= 1.0);
  raw[3] = -20.0;
  CHECK(param_transform_values(raw, Repr::Hsv)[3] >= -1.0);
}

TEST_CASE("on-tape transform agrees with the value-level transform") {
  Rng rng(23, Stream::Generic);
  for (Repr repr : {Repr::Bsm, Repr::Absm, Repr::Sabr, Repr::Hsv, Repr::Hsvj,
                    Repr::Mopa, Repr::DsnnNasv, Repr::AeBsm}) {
    std::vector<double> raw(repr_dim(repr));
    for (auto& v : raw) v = rng.uniform(-1.5, 1.5);
    auto vals = param_transform_values(raw, repr);

    Tape t;
    auto vars = param_transform(t, raw, repr);
    REQUIRE(vars.size() == vals.size());
    for (std::size_t i = 0; i < vals.size(); ++i)
      CHECK(vars[i].value() == doctest::Approx(vals[i]).epsilon(1e-15));
  }
}

TEST_CASE("transform rejects wrong lengths") {
  Tape t;
  CHECK_THROWS_AS(param_transform(t, std::vector<double>(4, 0.0), Repr::Hsv),
                  PricingError);
  CHECK_THROWS_AS(param_transform_values(std::vector<double>(721, 0.0), Repr::Sabr),
                  PricingError);
}

TEST_CASE("transform is differentiable end to end") {
  // raw leaves -> constrained -> price, against bumps in raw space
  Rng rng(31, Stream::Generic);
  SkInputs x = SkInputs::make(100.0, 105.0, 0.02, 0.6);
  for (Repr repr : {Repr::Bsm, Repr::Hsv}) {
    std::vector<double> raw(repr_dim(repr));
    for (auto& v : raw) v = rng.uniform(-0.8, 0.8);

    Tape t;
    Index b = t.lift_block(raw.data(), raw.size());
    auto con = param_transform(t, b, raw.size(), repr);
    SkrContext ctx;
    Var px = skr_price(t, repr, x, con, ctx);
    std::vector<double> g(raw.size());
    t.grad_block(px, b, raw.size(), g.data());

    for (std::size_t j = 0; j < raw.size(); ++j) {
      auto f = [&](double v) {
        std::vector<double> r2 = raw;
        r2[j] = v;
        return dispatch_value(repr, x, param_transform_values(r2, repr));
      };
      double fd = oracle::central_diff4(f, raw[j], 1e-3);
      CAPTURE(j);
      CHECK(std::abs(g[j] - fd) <= 1e-4 * std::max(1e-4, std::abs(fd)));
    }
  }
}

// ---------------------------------------------------------------------------
// vol floor

TEST_CASE("floor passes healthy vols through bit exactly and counts hits") {
  reset_vol_floor_count();
  Tape t;
  Var s = t.lift(0.2);
  Var f = floored_vol(t, s);
  CHECK(f.value() == 0.2);
  CHECK(vol_floor_count() == 0);

  Var tiny = t.lift(1e-6);
  Var ft = floored_vol(t, tiny);
  CHECK(ft.value() > 0.5e-4);
  CHECK(vol_floor_count() == 1);

  Var neg = t.lift(-0.01);
  CHECK(floored_vol(t, neg).value() > 0.0);
  CHECK(vol_floor_count() == 2);
  reset_vol_floor_count();
  CHECK(vol_floor_count() == 0);
}

// ---------------------------------------------------------------------------
// closed-form kernel

TEST_CASE("bsm price matches a binomial tree") {
  Tape t;
  SkInputs x = SkInputs::make(100.0, 100.0, 0.05, 1.0);
  Var px = bsm_price(t, x, t.lift(0.2));
  double tree = oracle::crr_call(100.0, 100.0, 0.05, 1.0, 0.2, 20000);
  CHECK(px.value() == doctest::Approx(tree).epsilon(1e-4));
  CHECK(px.value() == doctest::Approx(10.4506).epsilon(1e-4));
}

TEST_CASE("bsm degenerate limits") {
  Tape t;
  SkInputs atm = SkInputs::make(100.0, 100.0, 0.05, 1.0);
  double intrinsic = 100.0 - 100.0 * std::exp(-0.05);
  CHECK(bsm_price(t, atm, t.lift(1e-8)).value() ==
        doctest::Approx(intrinsic).epsilon(1e-6));

  SkInputs free_call = SkInputs::make(100.0, 1e-9, 0.05, 1.0);
  CHECK(bsm_price(t, free_call, t.lift(0.2)).value() ==
        doctest::Approx(100.0).epsilon(1e-8));

  CHECK_THROWS_AS(bsm_price(t, atm, t.lift(0.0)), PricingError);
  CHECK_THROWS_AS(SkInputs::make(100.0, 100.0, 0.05, 0.0), PricingError);
}

TEST_CASE("bsm strike ladder is monotone and stays inside static bounds") {
  Tape t;
  double prev = 1e300;
  for (int i = 0; i < 50; ++i) {
    double K = 50.0 + 2.0 * i;
    SkInputs x = SkInputs::make(100.0, K, 0.05, 1.0);
    double p = bsm_price(t, x, t.lift(0.2)).value();
    CHECK(p <= prev + 1e-8);
    CHECK(p >= std::max(100.0 - K * std::exp(-0.05), 0.0) - 1e-10);
    CHECK(p <= 100.0 + 1e-10);
    prev = p;
  }
}

TEST_CASE("bsm vega equals the analytic expression") {
  Tape t;
  SkInputs x = SkInputs::make(100.0, 110.0, 0.03, 0.7);
  Var sig = t.lift(0.25);
  Var px = bsm_price(t, x, sig);
  double g = t.grad(px, {sig})[0];

  double srt = 0.25 * std::sqrt(0.7);
  double d1 = (std::log(100.0 / 110.0) + 0.03 * 0.7) / srt + 0.5 * srt;
  double pdf = std::exp(-0.5 * d1 * d1) / std::sqrt(2.0 * 3.14159265358979323846);
  CHECK(g == doctest::Approx(100.0 * pdf * std::sqrt(0.7)).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// polynomial surface kernel

TEST_CASE("absm with only a constant coefficient reduces to bsm exactly") {
  Tape t;
  SkInputs x = SkInputs::make(100.0, 95.0, 0.04, 0.8);
  std::vector<Var> alpha = lift_vars(t, {0.2, 0.0, 0.0, 0.0, 0.0, 0.0});
  double direct = bsm_price(t, x, t.lift(0.2)).value();
  CHECK(absm_price(t, x, alpha).value() == direct);
}

TEST_CASE("absm vol is the stated polynomial") {
  Tape t;
  std::vector<Var> alpha = lift_vars(t, {0.2, 0.1, 0.0, 0.0, 0.0, 0.0});
  CHECK(absm_vol(t, 1.0, 0.5, alpha).value() == doctest::Approx(0.3).epsilon(1e-15));

  std::vector<Var> full = lift_vars(t, {0.2, 0.05, -0.02, 0.01, 0.03, -0.04});
  double m = 1.1, tau = 0.6;
  double want = 0.2 + 0.05 * m - 0.02 * m * m + 0.01 * tau + 0.03 * tau * tau -
                0.04 * m * tau;
  CHECK(absm_vol(t, m, tau, full).value() == doctest::Approx(want).epsilon(1e-15));
}

TEST_CASE("absm maturity-slope gradient matches finite differences") {
  SkInputs x = SkInputs::make(100.0, 103.0, 0.02, 0.6);
  std::vector<double> alpha = {0.22, 0.03, -0.01, 0.02, 0.01, -0.02};
  auto g = dispatch_grad(Repr::Absm, x, alpha);
  auto f = [&](double v) {
    auto a2 = alpha;
    a2[3] = v;
    return dispatch_value(Repr::Absm, x, a2);
  };
  double fd = oracle::central_diff4(f, alpha[3], 1e-4);
  CHECK(std::abs(g[3] - fd) < 1e-6);
}

TEST_CASE("absm engages the floor when the polynomial goes negative") {
  reset_vol_floor_count();
  Tape t;
  SkInputs x = SkInputs::make(100.0, 100.0, 0.0, 0.5);
  std::vector<Var> alpha = lift_vars(t, {-0.05, 0.0, 0.0, 0.0, 0.0, 0.0});
  double p = absm_price(t, x, alpha).value();
  CHECK(vol_floor_count() == 1);
  CHECK(p >= 0.0);
  CHECK(p < 0.1);
  reset_vol_floor_count();
}

// ---------------------------------------------------------------------------
// dynamic sabr time integrals

TEST_CASE("constant curves reproduce the flat-parameter integrals") {
  for (double T : {0.5, 1.0}) {
    Tape t;
    std::vector<Var> nu(360), rho(360);
    for (int i = 0; i < 360; ++i) {
      nu[i] = t.lift(0.3);
      rho[i] = t.lift(-0.5);
    }
    auto tf = sabr_time_functions(t, nu, rho, T);
    CHECK(tf.v1_sq.value() == doctest::Approx(0.09).epsilon(1e-4));
    CHECK(tf.v2_sq.value() == doctest::Approx(0.09).epsilon(1e-4));
    CHECK(tf.eta1.value() == doctest::Approx(-0.15).epsilon(1e-4));
    CHECK(tf.eta2.value() == doctest::Approx(0.0225).epsilon(1e-4));
  }
}

TEST_CASE("decaying vol-of-vol curve matches the symbolic antiderivatives") {
  oracle::SabrExpCase ref{0.4, 1.2, 0.6};
  for (double T : {0.73, 1.0}) {
    Tape t;
    std::vector<Var> nu(360), rho(360);
    for (int i = 0; i < 360; ++i) {
      double ti = (i + 1) / 360.0;
      nu[i] = t.lift(0.4 * std::exp(-1.2 * ti));
      rho[i] = t.lift(0.6);
    }
    auto tf = sabr_time_functions(t, nu, rho, T);
    CAPTURE(T);
    CHECK(tf.v1_sq.value() == doctest::Approx(ref.v1_sq(T)).epsilon(1e-4));
    CHECK(tf.v2_sq.value() == doctest::Approx(ref.v2_sq(T)).epsilon(1e-4));
    CHECK(tf.eta1.value() == doctest::Approx(ref.eta1(T)).epsilon(1e-4));
    CHECK(tf.eta2.value() == doctest::Approx(ref.eta2(T)).epsilon(1e-4));
  }
}

TEST_CASE("curve cache answers repeated maturities like one-shot builds") {
  Rng rng(47, Stream::Generic);
  std::vector<double> nu_v(360), rho_v(360);
  for (int i = 0; i < 360; ++i) {
    nu_v[i] = rng.uniform(0.15, 0.5);
    rho_v[i] = rng.uniform(-0.7, 0.7);
  }

  Tape tc;
  std::vector<Var> nu_c(360), rho_c(360);
  for (int i = 0; i < 360; ++i) {
    nu_c[i] = tc.lift(nu_v[i]);
    rho_c[i] = tc.lift(rho_v[i]);
  }
  SabrCurves curves = build_sabr_curves(tc, nu_c, rho_c);

  for (double T : {0.21, 0.5, 0.77, 1.0}) {
    auto cached = sabr_time_functions_at(curves, T);
    Tape ts;
    std::vector<Var> nu_s(360), rho_s(360);
    for (int i = 0; i < 360; ++i) {
      nu_s[i] = ts.lift(nu_v[i]);
      rho_s[i] = ts.lift(rho_v[i]);
    }
    auto solo = sabr_time_functions(ts, nu_s, rho_s, T);
    CHECK(cached.v1_sq.value() == solo.v1_sq.value());
    CHECK(cached.v2_sq.value() == solo.v2_sq.value());
    CHECK(cached.eta1.value() == solo.eta1.value());
    CHECK(cached.eta2.value() == solo.eta2.value());
  }

  CHECK_THROWS_AS(sabr_time_functions_at(curves, 0.0), PricingError);
  CHECK_THROWS_AS(sabr_time_functions_at(curves, 1.2), PricingError);
}

// ---------------------------------------------------------------------------
// sabr implied vol and price

namespace {

std::vector<double> sabr_constrained(double alpha, double beta,
                                     const std::vector<double>& nu,
                                     const std::vector<double>& rho) {
  std::vector<double> con;
  con.reserve(722);
  con.push_back(alpha);
  con.push_back(beta);
  con.insert(con.end(), nu.begin(), nu.end());
  con.insert(con.end(), rho.begin(), rho.end());
  return con;
}

}  // namespace

TEST_CASE("lognormal backbone with dead vol-of-vol collapses to alpha") {
  SkInputs x = SkInputs::make(100.0, 108.0, 0.03, 0.7);
  for (double alpha : {0.25, 0.3}) {
    Tape t;
    std::vector<Var> nu(360), rho(360);
    for (int i = 0; i < 360; ++i) {
      nu[i] = t.lift(0.0);
      rho[i] = t.lift(0.3);
    }
    SabrCurves curves = build_sabr_curves(t, nu, rho);
    Var sig = sabr_implied_vol(t, x, t.lift(alpha), t.lift(1.0), curves);
    if (alpha == 0.25)
      CHECK(sig.value() == alpha);
    else
      CHECK(sig.value() == doctest::Approx(alpha).epsilon(1e-15));
  }
}

TEST_CASE("at the forward strike only the maturity term survives") {
  double S = 100.0, r = 0.04, tau = 0.5;
  double fhat = S * std::exp(r * tau);
  SkInputs x = SkInputs::make(S, fhat, r, tau);

  Tape t;
  std::vector<Var> nu(360), rho(360);
  for (int i = 0; i < 360; ++i) {
    nu[i] = t.lift(0.35);
    rho[i] = t.lift(-0.4);
  }
  SabrCurves curves = build_sabr_curves(t, nu, rho);
  double alpha = 0.2, beta = 0.7;
  Var sig = sabr_implied_vol(t, x, t.lift(alpha), t.lift(beta), curves);

  auto tf = sabr_time_functions_at(curves, tau);
  double w = std::pow(fhat, 1.0 - beta) / alpha;
  double u = 1.0 - beta;
  double e2 = tf.eta2.value();
  double b = (u * u / 24.0 + w * beta * tf.eta1.value() / 4.0 +
              (2.0 * tf.v2_sq.value() - 3.0 * e2 * e2 * w * w) / 24.0) /
             (w * w);
  CHECK(sig.value() == doctest::Approx((1.0 + b * tau) / w).epsilon(1e-12));
}

TEST_CASE("sabr curve-point gradient matches finite differences") {
  SkInputs x = SkInputs::make(100.0, 105.0, 0.02, 0.8);
  std::vector<double> nu(360, 0.3), rho(360, -0.3);
  double fhat = 100.0 * std::exp(0.02 * 0.8);
  double alpha = std::pow(fhat, 1.0 - 0.8) / 5.0;
  auto con = sabr_constrained(alpha, 0.8, nu, rho);

  auto g = dispatch_grad(Repr::Sabr, x, con);
  std::size_t idx = 2 + 179;  // curve sample at t = 0.5
  auto f = [&](double v) {
    auto c2 = con;
    c2[idx] = v;
    return dispatch_value(Repr::Sabr, x, c2);
  };
  double fd = oracle::central_diff4(f, con[idx], 1e-4);
  CHECK(g[idx] != 0.0);
  CHECK(std::abs(g[idx] - fd) < 1e-5);
}

TEST_CASE("sabr price floors a collapsing implied vol and counts it") {
  reset_vol_floor_count();
  SkInputs x = SkInputs::make(100.0, 100.0, 0.02, 0.5);
  std::vector<double> nu(360, 0.0), rho(360, 0.0);
  auto con = sabr_constrained(1e-5, 0.9, nu, rho);
  double p = dispatch_value(Repr::Sabr, x, con);
  CHECK(vol_floor_count() == 1);
  CHECK(p >= 0.0);
  double intrinsic = std::max(100.0 - 100.0 * std::exp(-0.02 * 0.5), 0.0);
  CHECK(p >= intrinsic - 1e-9);
  reset_vol_floor_count();
}

// ---------------------------------------------------------------------------
// characteristic functions

TEST_CASE("cf normalizes at zero frequency across random parameter draws") {
  Rng rng(61, Stream::Generic);
  SkInputs x = SkInputs::make(100.0, 102.0, 0.03, 0.5);
  for (int k = 0; k < 100; ++k) {
    Tape t;
    bool jumps = (k % 2) == 1;
    std::vector<double> pv = jumps ? random_hsvj(rng) : random_hsv(rng);
    auto phi = lift_vars(t, pv);
    CVar psi = heston_cf(t, 0.0, x, {phi.begin(), phi.begin() + 5});
    if (jumps) {
      CVar pj = jump_cf(t, 0.0, phi[5], phi[6], phi[7], phi[8], x.tau);
      psi = cmul(psi, pj);
    }
    CHECK(std::abs(psi.re.value() - 1.0) < 1e-10);
    CHECK(std::abs(psi.im.value()) < 1e-10);
  }
}

TEST_CASE("stiff mean reversion pins the cf to the lognormal one") {
  Tape t;
  SkInputs x = SkInputs::make(100.0, 100.0, 0.05, 1.0);
  auto phi = lift_vars(t, {0.04, 0.04, 1e-4, -0.5, 500.0});
  double x0 = std::log(100.0) + 0.05;
  for (int u = 0; u <= 50; ++u) {
    CVar psi = heston_cf(t, u, x, phi);
    std::complex<double> want =
        std::exp(std::complex<double>(0.0, 1.0) * (u * (x0 - 0.02)) -
                 std::complex<double>(0.02 * u * u, 0.0));
    CAPTURE(u);
    CHECK(std::abs(psi.re.value() - want.real()) < 1e-4);
    CHECK(std::abs(psi.im.value() - want.imag()) < 1e-4);
  }
}

TEST_CASE("cf respects conjugate symmetry") {
  Rng rng(71, Stream::Generic);
  SkInputs x = SkInputs::make(100.0, 95.0, 0.02, 0.75);
  for (int k = 0; k < 5; ++k) {
    Tape t;
    auto phi = lift_vars(t, random_hsv(rng));
    for (double u : {0.5, 2.0, 7.3, 20.0}) {
      CVar a = heston_cf(t, u, x, phi);
      CVar b = heston_cf(t, -u, x, phi);
      CHECK(std::abs(a.re.value() - b.re.value()) < 1e-12);
      CHECK(std::abs(a.im.value() + b.im.value()) < 1e-12);
    }
  }
}

TEST_CASE("jump cf identities and domain") {
  Tape t;
  Var p = t.lift(0.4), e1 = t.lift(10.0), e2 = t.lift(5.0);

  CVar off = jump_cf(t, 3.7, p, e1, e2, t.lift(0.0), 0.5);
  CHECK(off.re.value() == 1.0);
  CHECK(off.im.value() == 0.0);

  CVar zero_u = jump_cf(t, 0.0, p, e1, e2, t.lift(0.8), 0.5);
  CHECK(zero_u.re.value() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(zero_u.im.value()) < 1e-14);

  CHECK_THROWS_AS(jump_cf(t, 1.0, p, t.lift(0.9), e2, t.lift(0.5), 0.5),
                  PricingError);
  CHECK_THROWS_AS(jump_cf(t, 1.0, t.lift(1.2), e1, e2, t.lift(0.5), 0.5),
                  PricingError);
}

TEST_CASE("jump cf gradient in the mixing weight matches finite differences") {
  double u = 2.0, tau = 0.6;
  auto parts = [&](double pv) {
    Tape t;
    CVar j = jump_cf(t, u, t.lift(pv), t.lift(10.0), t.lift(5.0), t.lift(0.7), tau);
    return std::pair<double, double>(j.re.value(), j.im.value());
  };
  Tape t;
  Var p = t.lift(0.4);
  CVar j = jump_cf(t, u, p, t.lift(10.0), t.lift(5.0), t.lift(0.7), tau);
  double gre = t.grad(j.re, {p})[0];
  double gim = t.grad(j.im, {p})[0];
  double fre = oracle::central_diff4([&](double v) { return parts(v).first; }, 0.4, 1e-4);
  double fim = oracle::central_diff4([&](double v) { return parts(v).second; }, 0.4, 1e-4);
  CHECK(std::abs(gre - fre) < 1e-6);
  CHECK(std::abs(gim - fim) < 1e-6);
}

// ---------------------------------------------------------------------------
// series interval and payoff coefficients

TEST_CASE("interval under near-lognormal parameters hits the textbook numbers") {
  SkInputs x = SkInputs::make(100.0, 100.0, 0.05, 1.0);
  CosInterval iv = cos_interval(x, {0.04, 0.04, 1e-4, 0.0, 500.0}, Repr::Hsv, 12.0);
  CHECK(iv.a == doctest::Approx(-2.37).epsilon(1e-9));
  CHECK(iv.b == doctest::Approx(2.43).epsilon(1e-9));
}

TEST_CASE("interval is symmetric about the mean cumulant") {
  Rng rng(83, Stream::Generic);
  for (int k = 0; k < 10; ++k) {
    SkInputs x = random_inputs(rng);
    bool jumps = (k % 2) == 1;
    auto pv = jumps ? random_hsvj(rng) : random_hsv(rng);
    CosInterval iv = cos_interval(x, pv, jumps ? Repr::Hsvj : Repr::Hsv, 12.0);
    oracle::HestonParams hp{pv[0], pv[1], pv[2], pv[3], pv[4]};
    oracle::JumpParams jp;
    if (jumps) jp = {pv[5], pv[6], pv[7], pv[8]};
    auto im_lcf = [&](double u) {
      return oracle::log_cf_moneyness(u, x.S, x.K, x.r, x.tau, hp, jp).imag();
    };
    double c1 = oracle::central_diff4(im_lcf, 0.0, 1e-3);
    CHECK(iv.b - c1 == doctest::Approx(c1 - iv.a).epsilon(1e-10));
  }
}

TEST_CASE("interval cumulants agree with cf derivatives") {
  struct Case {
    SkInputs x;
    std::vector<double> phi;
  };
  std::vector<Case> cases = {
      {SkInputs::make(100.0, 100.0, 0.03, 0.5), {0.04, 0.04, 0.5, -0.7, 2.0}},
      {SkInputs::make(100.0, 90.0, 0.05, 1.0), {0.09, 0.04, 0.3, -0.5, 1.5}},
      {SkInputs::make(100.0, 105.0, 0.02, 0.75), {0.06, 0.05, 0.4, -0.3, 1.2}},
  };
  double L = 12.0;
  for (const auto& c : cases) {
    oracle::HestonParams hp{c.phi[0], c.phi[1], c.phi[2], c.phi[3], c.phi[4]};
    auto im_lcf = [&](double u) {
      return oracle::log_cf_moneyness(u, c.x.S, c.x.K, c.x.r, c.x.tau, hp, {}).imag();
    };
    auto re_lcf = [&](double u) {
      return oracle::log_cf_moneyness(u, c.x.S, c.x.K, c.x.r, c.x.tau, hp, {}).real();
    };
    double c1_fd = oracle::central_diff4(im_lcf, 0.0, 1e-3);
    double c2_fd = -oracle::central_diff2nd4(re_lcf, 0.0, 1e-3);

    CosInterval iv = cos_interval(c.x, c.phi, Repr::Hsv, L);
    double c1 = 0.5 * (iv.a + iv.b);
    double half = 0.5 * (iv.b - iv.a) / L;
    CHECK(c1 == doctest::Approx(c1_fd).epsilon(1e-3));
    CHECK(half * half == doctest::Approx(c2_fd).epsilon(1e-3));
  }
}

TEST_CASE("interval rejects a degenerate variance") {
  SkInputs x = SkInputs::make(100.0, 100.0, 0.03, 0.5);
  CHECK_THROWS_AS(cos_interval(x, {0.0, 0.0, 0.5, -0.7, 2.0}, Repr::Hsv, 12.0),
                  PricingError);
}

TEST_CASE("leading payoff coefficient has the closed form") {
  double a = -2.37, b = 2.43, K = 100.0;
  auto v = cos_payoff_coeffs(a, b, 256, K);
  double want = 2.0 / (b - a) * K * ((std::exp(b) - 1.0) - b);
  CHECK(v[0] == doctest::Approx(want).epsilon(1e-13));
  CHECK_THROWS_AS(cos_payoff_coeffs(a, b, 0, K), PricingError);
}

TEST_CASE("payoff series reconstructs the kinked payoff as terms grow") {
  // the kink at zero log-moneyness limits pointwise convergence to O(N^-2),
  // so high accuracy needs a deep series
  double a = -2.37, b = 2.43, K = 100.0, xx = 0.1;
  double exact = K * (std::exp(xx) - 1.0);
  for (auto [n, tol] : {std::pair<int, double>{256, 2e-2},
                        std::pair<int, double>{8192, 1e-6}}) {
    auto v = cos_payoff_coeffs(a, b, n, K);
    double s = 0.5 * v[0];
    for (int w = 1; w < n; ++w)
      s += v[w] * std::cos(w * 3.14159265358979323846 * (xx - a) / (b - a));
    CAPTURE(n);
    CHECK(std::abs(s - exact) < tol);
  }
}

// ---------------------------------------------------------------------------
// cosine-expansion pricing

TEST_CASE("switching jumps off reproduces the pure diffusion price") {
  SkInputs x = SkInputs::make(100.0, 104.0, 0.03, 0.5);
  std::vector<double> hsv = {0.05, 0.04, 0.45, -0.6, 1.8};
  std::vector<double> hsvj = hsv;
  hsvj.insert(hsvj.end(), {0.4, 10.0, 5.0, 0.0});
  double p5 = dispatch_value(Repr::Hsv, x, hsv);
  double p9 = dispatch_value(Repr::Hsvj, x, hsvj);
  CHECK(p9 == doctest::Approx(p5).epsilon(1e-10));
}

TEST_CASE("stiff mean reversion prices like the lognormal kernel") {
  SkInputs x = SkInputs::make(100.0, 100.0, 0.05, 1.0);
  double heston = dispatch_value(Repr::Hsv, x, {0.04, 0.04, 1e-4, 0.0, 500.0});
  Tape t;
  double bsm = bsm_price(t, x, t.lift(0.2)).value();
  CHECK(std::abs(heston - bsm) < 1e-3);
}

TEST_CASE("cos prices sit inside the monte carlo bands") {
  // simulated references: 200,000 full-truncation Euler paths, 500 steps
  struct Frozen {
    SkInputs x;
    std::vector<double> phi;
    Repr repr;
    double price, se;
  };
  std::vector<Frozen> cases = {
      {SkInputs::make(100.0, 100.0, 0.03, 0.5), {0.04, 0.04, 0.5, -0.7, 2.0},
       Repr::Hsv, 6.072897, 0.015923},
      {SkInputs::make(100.0, 110.0, 0.03, 0.5), {0.04, 0.04, 0.5, -0.7, 2.0},
       Repr::Hsv, 1.644226, 0.008461},
      {SkInputs::make(100.0, 90.0, 0.05, 1.0), {0.09, 0.04, 0.3, -0.5, 1.5},
       Repr::Hsv, 18.488244, 0.043821},
      {SkInputs::make(100.0, 100.0, 0.03, 0.5),
       {0.04, 0.04, 0.5, -0.7, 2.0, 0.4, 10.0, 5.0, 0.5}, Repr::Hsvj, 6.246670,
       0.019265},
  };
  for (const auto& c : cases) {
    double p = dispatch_value(c.repr, c.x, c.phi);
    CHECK(std::abs(p - c.price) < 3.0 * c.se);

    oracle::HestonParams hp{c.phi[0], c.phi[1], c.phi[2], c.phi[3], c.phi[4]};
    oracle::JumpParams jp;
    if (c.repr == Repr::Hsvj) jp = {c.phi[5], c.phi[6], c.phi[7], c.phi[8]};
    double ref = oracle::heston_cos_price(c.x.S, c.x.K, c.x.r, c.x.tau, hp, jp);
    CHECK(p == doctest::Approx(ref).epsilon(1e-5));
  }
}

TEST_CASE("cos strike ladder is monotone and stays inside static bounds") {
  std::vector<double> phi = {0.04, 0.04, 0.5, -0.7, 2.0};
  double prev = 1e300;
  for (int i = 0; i < 50; ++i) {
    double K = 70.0 + 1.2 * i;
    SkInputs x = SkInputs::make(100.0, K, 0.03, 0.5);
    double p = dispatch_value(Repr::Hsv, x, phi);
    CHECK(p <= prev + 1e-8);
    CHECK(p >= std::max(100.0 - K * std::exp(-0.03 * 0.5), 0.0) - 1e-7);
    CHECK(p <= 100.0 + 1e-7);
    prev = p;
  }
}

TEST_CASE("series controls are validated") {
  Tape t;
  SkInputs x = SkInputs::make(100.0, 100.0, 0.03, 0.5);
  auto phi = lift_vars(t, {0.04, 0.04, 0.5, -0.7, 2.0});
  CosConfig cfg;
  cfg.terms = 16;
  CHECK_THROWS_AS(cos_price(t, x, phi, Repr::Hsv, cfg), PricingError);
  cfg.terms = 256;
  cfg.width = -1.0;
  CHECK_THROWS_AS(cos_price(t, x, phi, Repr::Hsv, cfg), PricingError);
}

// ---------------------------------------------------------------------------
// probability matrix pricing

TEST_CASE("state grid construction") {
  MopaGrid g = make_mopa_grid(100.0, 0.05);
  REQUIRE(g.n_tenors() == 10);
  REQUIRE(g.n_states() == 200);
  CHECK(g.tenors.front() == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(g.tenors.back() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(g.states.front() == doctest::Approx(50.0).epsilon(1e-15));
  CHECK(g.states.back() == doctest::Approx(150.0).epsilon(1e-15));
  CHECK(g.discounts[0] == doctest::Approx(std::exp(-0.005)).epsilon(1e-15));

  CHECK(mopa_tenor_index(g, 0.02) == 0);
  CHECK(mopa_tenor_index(g, 0.14) == 0);
  CHECK(mopa_tenor_index(g, 0.16) == 1);
  CHECK(mopa_tenor_index(g, 1.04) == 9);
  CHECK_THROWS_AS(mopa_tenor_index(g, 1.2), PricingError);
}

TEST_CASE("point-mass row prices the forward within one grid cell") {
  MopaGrid g = make_mopa_grid(100.0, 0.05);
  double tau = 0.1, r = 0.05, K = 95.0;
  double fwd = 100.0 * std::exp(r * tau);
  std::size_t nearest = 0;
  double best = 1e300;
  for (std::size_t i = 0; i < 200; ++i)
    if (std::abs(g.states[i] - fwd) < best) {
      best = std::abs(g.states[i] - fwd);
      nearest = i;
    }
  std::vector<double> q(2000, 0.0);
  q[nearest] = 1.0;

  SkInputs x = SkInputs::make(100.0, K, r, tau);
  double p = dispatch_value(Repr::Mopa, x, q, &g);
  double cell = g.states[1] - g.states[0];
  CHECK(std::abs(p - std::exp(-r * tau) * (fwd - K)) <= cell);
}

TEST_CASE("strikes beyond the top state are worthless") {
  MopaGrid g = make_mopa_grid(100.0, 0.0);
  std::vector<double> q(2000, 1.0 / 200.0);
  SkInputs x = SkInputs::make(100.0, 160.0, 0.0, 0.3);
  CHECK(dispatch_value(Repr::Mopa, x, q, &g) == 0.0);
}

TEST_CASE("uniform rows equal the direct sum over grid states") {
  MopaGrid g = make_mopa_grid(100.0, 0.0);
  std::vector<double> q(2000, 1.0 / 200.0);
  SkInputs x = SkInputs::make(100.0, 100.0, 0.0, 0.1);
  double p = dispatch_value(Repr::Mopa, x, q, &g);

  double direct = 0.0;
  for (std::size_t i = 0; i < 200; ++i)
    direct += std::max(g.states[i] - 100.0, 0.0) / 200.0;
  CHECK(p == doctest::Approx(direct).epsilon(1e-12));
  CHECK(direct == doctest::Approx(12.5628).epsilon(1e-4));
}

TEST_CASE("scattered rows price identically to contiguous ones") {
  MopaGrid g = make_mopa_grid(100.0, 0.02);
  Rng rng(97, Stream::Generic);
  std::vector<double> raw(2000);
  for (auto& v : raw) v = rng.uniform(-1.0, 1.0);
  auto q = param_transform_values(raw, Repr::Mopa);
  SkInputs x = SkInputs::make(100.0, 97.0, 0.02, 0.32);
  double contiguous = dispatch_value(Repr::Mopa, x, q, &g);

  Tape t;
  std::vector<Var> qv(2000);
  for (std::size_t i = 0; i < 2000; ++i) qv[i] = t.lift(q[2000 - 1 - i]);
  std::vector<Var> reordered(2000);
  for (std::size_t i = 0; i < 2000; ++i) reordered[i] = qv[2000 - 1 - i];
  double scattered = mopa_price(t, x, g, reordered).value();
  CHECK(scattered == doctest::Approx(contiguous).epsilon(1e-14));
}

// ---------------------------------------------------------------------------
// dispatch

TEST_CASE("dispatch routes to the closed-form kernel unchanged") {
  SkInputs x = SkInputs::make(100.0, 102.0, 0.03, 0.4);
  Tape t;
  auto con = lift_vars(t, {0.27});
  SkrContext ctx;
  Var via = skr_price(t, Repr::Bsm, x, con, ctx);
  Var direct = bsm_price(t, x, con[0]);
  CHECK(via.value() == direct.value());
}

TEST_CASE("dispatch enforces context and parameter requirements") {
  SkInputs x = SkInputs::make(100.0, 100.0, 0.03, 0.4);
  Tape t;
  SkrContext ctx;

  auto q = lift_vars(t, std::vector<double>(2000, 1.0 / 200.0));
  CHECK_THROWS_AS(skr_price(t, Repr::Mopa, x, q, ctx), PricingError);

  auto z = lift_vars(t, {0.1, 0.2});
  CHECK_THROWS_AS(skr_price(t, Repr::AeBsm, x, z, ctx), PricingError);
  auto h = lift_vars(t, {0.04, 0.04, 0.5, -0.5, 2.0});
  CHECK_THROWS_AS(skr_price(t, Repr::DsnnHsv, x, h, ctx), PricingError);

  CHECK_THROWS_AS(skr_price(t, Repr::Hsv, x, z, ctx), PricingError);
  CHECK_THROWS_AS(skr_price(t, static_cast<Repr>(99), x, z, ctx), PricingError);
}

TEST_CASE("a surrogate hook receives the dispatch call") {
  struct Doubler : SurrogateBackend {
    Var price(Tape& t, const SkInputs& x, const std::vector<Var>& phi) const override {
      (void)x;
      (void)t;
      return phi[0] * 2.0;
    }
  };
  Doubler backend;
  SkrContext ctx;
  ctx.surrogate = &backend;
  Tape t;
  SkInputs x = SkInputs::make(100.0, 100.0, 0.0, 0.5);
  auto z = lift_vars(t, {1.5, -0.5});
  CHECK(skr_price(t, Repr::AeBsm, x, z, ctx).value() == 3.0);
}

// ---------------------------------------------------------------------------
// gradient sweep across representations

TEST_CASE("bsm gradients match finite differences on random points") {
  Rng rng(101, Stream::Generic);
  for (int k = 0; k < 20; ++k) {
    SkInputs x = random_inputs(rng);
    check_grad_against_fd(Repr::Bsm, x, {rng.uniform(0.1, 0.45)}, {0});
  }
}

TEST_CASE("absm gradients match finite differences on random points") {
  Rng rng(103, Stream::Generic);
  for (int k = 0; k < 20; ++k) {
    SkInputs x = random_inputs(rng);
    std::vector<double> a = {rng.uniform(0.2, 0.45), rng.uniform(-0.02, 0.02),
                             rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02),
                             rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02)};
    check_grad_against_fd(Repr::Absm, x, a, {0, 1, 2, 3, 4, 5});
  }
}

TEST_CASE("sabr gradients match finite differences on random points") {
  Rng rng(107, Stream::Generic);
  std::vector<std::size_t> strata = {0,       1,       2,       2 + 90,
                                     2 + 179, 2 + 270, 2 + 359, 362,
                                     362 + 90, 362 + 179, 362 + 270, 362 + 359};
  for (int k = 0; k < 20; ++k) {
    SkInputs x = random_inputs(rng, 0.3, 1.0);
    double beta = rng.uniform(0.6, 0.95);
    double fhat = x.S * std::exp(x.r * x.tau);
    double alpha = std::pow(fhat, 1.0 - beta) / rng.uniform(3.0, 12.0);
    std::vector<double> nu(360), rho(360);
    for (int i = 0; i < 360; ++i) {
      nu[i] = rng.uniform(0.15, 0.6);
      rho[i] = rng.uniform(-0.8, 0.8);
    }
    check_grad_against_fd(Repr::Sabr, x, sabr_constrained(alpha, beta, nu, rho),
                          strata);
  }

  // one full pass over all 722 coordinates; curve samples beyond the option
  // maturity must come back exactly dead
  SkInputs x = SkInputs::make(100.0, 104.0, 0.03, 0.5);
  std::vector<double> nu(360, 0.3), rho(360, -0.4);
  auto con = sabr_constrained(0.35, 0.85, nu, rho);
  std::vector<std::size_t> all(722);
  for (std::size_t i = 0; i < 722; ++i) all[i] = i;
  check_grad_against_fd(Repr::Sabr, x, con, all);
  auto g = dispatch_grad(Repr::Sabr, x, con);
  CHECK(g[2 + 200] == 0.0);
  CHECK(g[362 + 200] == 0.0);
}

TEST_CASE("hsv gradients match finite differences on random points") {
  Rng rng(109, Stream::Generic);
  for (int k = 0; k < 20; ++k) {
    SkInputs x = random_inputs(rng);
    check_grad_against_fd(Repr::Hsv, x, random_hsv(rng), {0, 1, 2, 3, 4}, nullptr,
                          {2048, 20.0});
  }
}

TEST_CASE("hsvj gradients match finite differences on random points") {
  Rng rng(113, Stream::Generic);
  for (int k = 0; k < 20; ++k) {
    SkInputs x = random_inputs(rng);
    check_grad_against_fd(Repr::Hsvj, x, random_hsvj(rng),
                          {0, 1, 2, 3, 4, 5, 6, 7, 8}, nullptr, {2048, 20.0});
  }
}

TEST_CASE("mopa gradients match finite differences on random points") {
  MopaGrid grid = make_mopa_grid(100.0, 0.03);
  Rng rng(127, Stream::Generic);
  for (int k = 0; k < 20; ++k) {
    SkInputs x = random_inputs(rng, 0.08, 1.0);
    std::vector<double> raw(2000);
    for (auto& v : raw) v = rng.uniform(-1.0, 1.0);
    auto q = param_transform_values(raw, Repr::Mopa);

    std::size_t h = mopa_tenor_index(grid, x.tau);
    std::vector<std::size_t> row(200);
    for (std::size_t i = 0; i < 200; ++i) row[i] = h * 200 + i;
    check_grad_against_fd(Repr::Mopa, x, q, row, &grid);

    auto g = dispatch_grad(Repr::Mopa, x, q, &grid);
    std::size_t other = (h + 1) % 10;
    CHECK(g[other * 200 + 17] == 0.0);
  }
}
