#include "skinn/skr.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>

namespace skinn {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kLog2 = 0.69314718055994530942;

constexpr double kVolFloor = 1e-4;
constexpr double kFloorSharpness = 2000.0;

constexpr int kSabrGridN = 360;
constexpr double kSabrGridH = 1.0 / 360.0;

constexpr std::size_t kMopaTenors = 10;
constexpr std::size_t kMopaStates = 200;

std::atomic<std::uint64_t> g_floor_count{0};

// softplus scaled so a raw zero decodes to `target`
Var positive(Var v, double target) { return softplus(v) * (target / kLog2); }

double positive_value(double v, double target) {
  return softplus(v) * (target / kLog2);
}

}  // namespace

std::size_t repr_dim(Repr repr) {
  switch (repr) {
    case Repr::Bsm: return 1;
    case Repr::Absm: return 6;
    case Repr::Sabr: return 722;
    case Repr::Hsv: return 5;
    case Repr::Hsvj: return 9;
    case Repr::Mopa: return kMopaTenors * kMopaStates;
    case Repr::DsnnHsv: return 5;
    case Repr::DsnnNasv: return 6;
    case Repr::AeBsm: return 2;
  }
  throw PricingError("repr_dim: unknown representation");
}

const char* repr_name(Repr repr) {
  switch (repr) {
    case Repr::Bsm: return "bsm";
    case Repr::Absm: return "absm";
    case Repr::Sabr: return "sabr";
    case Repr::Hsv: return "hsv";
    case Repr::Hsvj: return "hsvj";
    case Repr::Mopa: return "mopa";
    case Repr::DsnnHsv: return "dsnn-hsv";
    case Repr::DsnnNasv: return "dsnn-nasv";
    case Repr::AeBsm: return "ae-bsm";
  }
  throw PricingError("repr_name: unknown representation");
}

Repr repr_from_name(const std::string& s) {
  for (int k = 0; k <= static_cast<int>(Repr::AeBsm); ++k) {
    Repr r = static_cast<Repr>(k);
    if (s == repr_name(r)) return r;
  }
  throw PricingError("unknown representation name: " + s);
}

std::vector<std::string> repr_param_names(Repr repr) {
  std::vector<std::string> out;
  switch (repr) {
    case Repr::Bsm:
      return {"sigma"};
    case Repr::Absm:
      return {"a0", "a1", "a2", "a3", "a4", "a5"};
    case Repr::Sabr:
      out = {"alpha", "beta"};
      for (int i = 1; i <= kSabrGridN; ++i)
        out.push_back("nu_" + std::to_string(i));
      for (int i = 1; i <= kSabrGridN; ++i)
        out.push_back("rho_" + std::to_string(i));
      return out;
    case Repr::Hsv:
    case Repr::DsnnHsv:
      return {"v_theta", "v0", "sigma_v", "rho", "kappa"};
    case Repr::Hsvj:
      return {"v_theta", "v0", "sigma_v", "rho", "kappa",
              "p",       "eta1", "eta2",  "lambda"};
    case Repr::DsnnNasv:
      return {"v_theta", "v0", "sigma_v", "rho", "kappa", "gamma_v"};
    case Repr::AeBsm:
      return {"z1", "z2"};
    case Repr::Mopa:
      for (std::size_t h = 1; h <= kMopaTenors; ++h)
        for (std::size_t i = 1; i <= kMopaStates; ++i)
          out.push_back("q_" + std::to_string(h) + "_" + std::to_string(i));
      return out;
  }
  throw PricingError("repr_param_names: unknown representation");
}

SkInputs SkInputs::make(double S, double K, double r, double tau) {
  SkInputs x{S, K, r, tau, K / S};
  x.validate();
  return x;
}

void SkInputs::validate() const {
  if (!(S > 0.0)) throw PricingError("SkInputs: spot must be positive");
  if (!(K > 0.0)) throw PricingError("SkInputs: strike must be positive");
  if (!(tau > 0.0)) throw PricingError("SkInputs: maturity must be positive");
  double ref = K / S;
  if (std::abs(m - ref) > 1e-12 * std::max(1.0, std::abs(ref)))
    throw PricingError("SkInputs: moneyness inconsistent with K/S");
}

SkrParams SkrParams::init(Repr repr) {
  SkrParams p;
  p.repr = repr;
  p.raw.assign(repr_dim(repr), 0.0);
  return p;
}

std::vector<Var> param_transform(Tape& t, Index raw0, std::size_t n, Repr repr) {
  if (n != repr_dim(repr))
    throw PricingError(std::string("param_transform: raw length mismatch for ") +
                       repr_name(repr));
  auto at = [&](std::size_t i) { return Var(&t, raw0 + static_cast<Index>(i), t.value(raw0 + static_cast<Index>(i))); };
  std::vector<Var> out;
  out.reserve(n);
  switch (repr) {
    case Repr::Bsm:
      out.push_back(positive(at(0), 0.2));
      break;
    case Repr::Absm:
      out.push_back(positive(at(0), 0.2));
      for (std::size_t i = 1; i < 6; ++i) out.push_back(at(i));
      break;
    case Repr::Sabr:
      out.push_back(positive(at(0), 0.2));
      out.push_back(sigmoid(at(1)));
      for (std::size_t i = 0; i < kSabrGridN; ++i)
        out.push_back(positive(at(2 + i), 0.3));
      for (std::size_t i = 0; i < kSabrGridN; ++i)
        out.push_back(tanh(at(2 + kSabrGridN + i)));
      break;
    case Repr::Hsvj:
    case Repr::DsnnNasv:
    case Repr::Hsv:
    case Repr::DsnnHsv:
      out.push_back(positive(at(0), 0.04));  // v_theta
      out.push_back(positive(at(1), 0.04));  // v0
      out.push_back(positive(at(2), 0.5));   // sigma_v
      out.push_back(tanh(at(3)));            // rho
      out.push_back(positive(at(4), 2.0));   // kappa
      if (repr == Repr::Hsvj) {
        out.push_back(sigmoid(at(5)));              // p
        out.push_back(positive(at(6), 9.0) + 1.0);  // eta1 > 1
        out.push_back(positive(at(7), 5.0));        // eta2
        out.push_back(positive(at(8), 0.5));        // lambda
      } else if (repr == Repr::DsnnNasv) {
        out.push_back(sigmoid(at(5)));  // gamma_v
      }
      break;
    case Repr::Mopa:
      for (std::size_t h = 0; h < kMopaTenors; ++h) {
        std::size_t base = h * kMopaStates;
        // shift by the trace-time row max; softmax is shift-invariant, so
        // treating the shift as a constant leaves gradients exact
        double mx = t.value(raw0 + static_cast<Index>(base));
        for (std::size_t i = 1; i < kMopaStates; ++i)
          mx = std::max(mx, t.value(raw0 + static_cast<Index>(base + i)));
        std::vector<Var> sh, ex;
        sh.reserve(kMopaStates);
        ex.reserve(kMopaStates);
        for (std::size_t i = 0; i < kMopaStates; ++i)
          sh.push_back(at(base + i) - mx);
        // two passes keep the Exp nodes and the Div nodes in unbroken runs,
        // which downstream range ops depend on
        for (std::size_t i = 0; i < kMopaStates; ++i) ex.push_back(exp(sh[i]));
        Var z = t.emit_sum(ex.front().index(), static_cast<Index>(kMopaStates));
        for (std::size_t i = 0; i < kMopaStates; ++i)
          out.push_back(ex[i] / z);
      }
      break;
    case Repr::AeBsm:
      out.push_back(at(0));
      out.push_back(at(1));
      break;
  }
  return out;
}

std::vector<Var> param_transform(Tape& t, const std::vector<double>& raw, Repr repr) {
  if (raw.empty()) throw PricingError("param_transform: empty raw vector");
  Index b = t.lift_block(raw.data(), raw.size());
  return param_transform(t, b, raw.size(), repr);
}

std::vector<double> param_transform_values(const std::vector<double>& raw, Repr repr) {
  if (raw.size() != repr_dim(repr))
    throw PricingError(std::string("param_transform: raw length mismatch for ") +
                       repr_name(repr));
  std::vector<double> out;
  out.reserve(raw.size());
  auto pos = positive_value;
  switch (repr) {
    case Repr::Bsm:
      out.push_back(pos(raw[0], 0.2));
      break;
    case Repr::Absm:
      out.push_back(pos(raw[0], 0.2));
      for (std::size_t i = 1; i < 6; ++i) out.push_back(raw[i]);
      break;
    case Repr::Sabr:
      out.push_back(pos(raw[0], 0.2));
      out.push_back(sigmoid(raw[1]));
      for (std::size_t i = 0; i < kSabrGridN; ++i) out.push_back(pos(raw[2 + i], 0.3));
      for (std::size_t i = 0; i < kSabrGridN; ++i)
        out.push_back(std::tanh(raw[2 + kSabrGridN + i]));
      break;
    case Repr::Hsvj:
    case Repr::DsnnNasv:
    case Repr::Hsv:
    case Repr::DsnnHsv:
      out.push_back(pos(raw[0], 0.04));
      out.push_back(pos(raw[1], 0.04));
      out.push_back(pos(raw[2], 0.5));
      out.push_back(std::tanh(raw[3]));
      out.push_back(pos(raw[4], 2.0));
      if (repr == Repr::Hsvj) {
        out.push_back(sigmoid(raw[5]));
        out.push_back(pos(raw[6], 9.0) + 1.0);
        out.push_back(pos(raw[7], 5.0));
        out.push_back(pos(raw[8], 0.5));
      } else if (repr == Repr::DsnnNasv) {
        out.push_back(sigmoid(raw[5]));
      }
      break;
    case Repr::Mopa:
      for (std::size_t h = 0; h < kMopaTenors; ++h) {
        std::size_t base = h * kMopaStates;
        double mx = raw[base];
        for (std::size_t i = 1; i < kMopaStates; ++i) mx = std::max(mx, raw[base + i]);
        double z = 0.0;
        for (std::size_t i = 0; i < kMopaStates; ++i) z += std::exp(raw[base + i] - mx);
        for (std::size_t i = 0; i < kMopaStates; ++i)
          out.push_back(std::exp(raw[base + i] - mx) / z);
      }
      break;
    case Repr::AeBsm:
      out.push_back(raw[0]);
      out.push_back(raw[1]);
      break;
  }
  return out;
}

Var floored_vol(Tape& t, Var sigma) {
  (void)t;
  if (sigma.value() <= kVolFloor)
    g_floor_count.fetch_add(1, std::memory_order_relaxed);
  Var z = sigma * (-kFloorSharpness) + kVolFloor * kFloorSharpness;
  return sigma + softplus(z) * (1.0 / kFloorSharpness);
}

std::uint64_t vol_floor_count() { return g_floor_count.load(std::memory_order_relaxed); }

void reset_vol_floor_count() { g_floor_count.store(0, std::memory_order_relaxed); }

Var bsm_price(Tape& t, const SkInputs& x, Var sigma) {
  x.validate();
  if (!(sigma.value() > 0.0)) throw PricingError("bsm_price: sigma must be positive");
  (void)t;
  double sqt = std::sqrt(x.tau);
  Var srt = sigma * sqt;
  double drift = std::log(x.S / x.K) + x.r * x.tau;
  Var d1 = drift / srt + srt * 0.5;
  Var d2 = d1 - srt;
  return norm_cdf(d1) * x.S - norm_cdf(d2) * (x.K * std::exp(-x.r * x.tau));
}

Var absm_vol(Tape& t, double m, double tau, const std::vector<Var>& alpha) {
  (void)t;
  if (alpha.size() != 6) throw PricingError("absm_vol: expected 6 coefficients");
  return alpha[0] + alpha[1] * m + alpha[2] * (m * m) + alpha[3] * tau +
         alpha[4] * (tau * tau) + alpha[5] * (m * tau);
}

Var absm_price(Tape& t, const SkInputs& x, const std::vector<Var>& alpha) {
  x.validate();
  Var sig = floored_vol(t, absm_vol(t, x.m, x.tau, alpha));
  return bsm_price(t, x, sig);
}

namespace {

// trapezoid weights for int_0^T t^pow f(t) dt over the latent grid, with the
// curve extended flat onto [0, t_1) and a linearly interpolated partial cell
std::vector<double> sabr_quad_weights(double T, int pow) {
  std::vector<double> w(kSabrGridN, 0.0);
  auto g = [pow](double t) {
    if (pow == 0) return 1.0;
    if (pow == 1) return t;
    return t * t;
  };
  // grid node k sits at t = k*h; node 0 shares the first curve sample
  auto slot = [](int k) { return k == 0 ? 0 : k - 1; };
  int kfull = static_cast<int>(std::floor(T / kSabrGridH + 1e-9));
  kfull = std::min(kfull, kSabrGridN);
  for (int k = 1; k <= kfull; ++k) {
    double t0 = (k - 1) * kSabrGridH;
    double t1 = k * kSabrGridH;
    w[slot(k - 1)] += 0.5 * kSabrGridH * g(t0);
    w[slot(k)] += 0.5 * kSabrGridH * g(t1);
  }
  double t_edge = kfull * kSabrGridH;
  double hp = T - t_edge;
  if (hp > 0.0 && kfull < kSabrGridN) {
    double theta = hp / kSabrGridH;
    w[slot(kfull)] += 0.5 * hp * g(t_edge);
    w[slot(kfull)] += 0.5 * hp * g(T) * (1.0 - theta);
    w[slot(kfull + 1)] += 0.5 * hp * g(T) * theta;
  }
  return w;
}

void check_sabr_maturity(double T) {
  if (!(T > 0.0) || T > 1.0 + 1e-12)
    throw PricingError("sabr: maturity outside the latent curve grid (0, 1]");
}

}  // namespace

SabrCurves build_sabr_curves(Tape& t, const std::vector<Var>& nu,
                             const std::vector<Var>& rho) {
  if (nu.size() != kSabrGridN || rho.size() != kSabrGridN)
    throw PricingError("build_sabr_curves: expected 360-point curves");
  SabrCurves c;
  c.tape = &t;

  std::vector<Var> nu_sq, q;
  nu_sq.reserve(kSabrGridN);
  q.reserve(kSabrGridN);
  for (int i = 0; i < kSabrGridN; ++i) nu_sq.push_back(nu[i] * nu[i]);
  for (int i = 0; i < kSabrGridN; ++i) q.push_back(nu[i] * rho[i]);
  c.nu_sq0 = nu_sq.front().index();
  c.q0 = q.front().index();

  const double h2 = 0.5 * kSabrGridH;
  auto q_at = [&](int k) { return q[k == 0 ? 0 : k - 1]; };

  c.p.resize(kSabrGridN + 1);
  c.p[0] = t.lift(0.0);
  for (int k = 1; k <= kSabrGridN; ++k)
    c.p[k] = c.p[k - 1] + (q_at(k - 1) + q_at(k)) * h2;

  c.p_sq.resize(kSabrGridN + 1);
  for (int k = 0; k <= kSabrGridN; ++k) c.p_sq[k] = c.p[k] * c.p[k];

  c.g.resize(kSabrGridN + 1);
  c.g[0] = t.lift(0.0);
  for (int k = 1; k <= kSabrGridN; ++k)
    c.g[k] = c.g[k - 1] + (c.p_sq[k - 1] + c.p_sq[k]) * h2;

  c.j.resize(kSabrGridN + 1);
  c.j[0] = t.lift(0.0);
  for (int k = 1; k <= kSabrGridN; ++k)
    c.j[k] = c.j[k - 1] + (c.g[k - 1] + c.g[k]) * h2;

  return c;
}

SabrTimeFunctions sabr_time_functions_at(const SabrCurves& curves, double T) {
  check_sabr_maturity(T);
  Tape& t = *curves.tape;

  std::vector<double> w0 = sabr_quad_weights(T, 0);
  std::vector<double> w1 = sabr_quad_weights(T, 1);
  std::vector<double> w2 = sabr_quad_weights(T, 2);

  double inv_t3 = 1.0 / (T * T * T);
  std::vector<double> wv(kSabrGridN);

  // v1^2 = 3/T^3 (T^2 I0 - 2T I1 + I2) over nu^2
  for (int i = 0; i < kSabrGridN; ++i)
    wv[i] = 3.0 * inv_t3 * (T * T * w0[i] - 2.0 * T * w1[i] + w2[i]);
  Var v1_sq = t.emit_weighted_sum(wv.data(), curves.nu_sq0, kSabrGridN);

  // v2^2 = 6/T^3 (T I1 - I2) over nu^2
  for (int i = 0; i < kSabrGridN; ++i)
    wv[i] = 6.0 * inv_t3 * (T * w1[i] - w2[i]);
  Var v2_sq = t.emit_weighted_sum(wv.data(), curves.nu_sq0, kSabrGridN);

  // eta1 = 2/T^2 (T J0 - J1) over nu*rho
  for (int i = 0; i < kSabrGridN; ++i)
    wv[i] = 2.0 / (T * T) * (T * w0[i] - w1[i]);
  Var eta1 = t.emit_weighted_sum(wv.data(), curves.q0, kSabrGridN);

  // eta2 = 12/T^4 * J(T), the twice-integrated square of the running integral
  double scale = 12.0 / (T * T * T * T);
  int k = static_cast<int>(std::floor(T / kSabrGridH + 1e-9));
  k = std::min(k, kSabrGridN);
  double hp = T - k * kSabrGridH;
  Var eta2(nullptr, kNoNode, 0.0);
  if (hp <= 0.0) {
    eta2 = curves.j[k] * scale;
  } else {
    Var p_T = t.emit_weighted_sum(w0.data(), curves.q0, kSabrGridN);
    Var psq_T = p_T * p_T;
    Var g_T = curves.g[k] + (curves.p_sq[k] + psq_T) * (0.5 * hp);
    Var j_T = curves.j[k] + (curves.g[k] + g_T) * (0.5 * hp);
    eta2 = j_T * scale;
  }
  return {v1_sq, v2_sq, eta1, eta2};
}

SabrTimeFunctions sabr_time_functions(Tape& t, const std::vector<Var>& nu,
                                      const std::vector<Var>& rho, double T) {
  check_sabr_maturity(T);
  SabrCurves c = build_sabr_curves(t, nu, rho);
  return sabr_time_functions_at(c, T);
}

Var sabr_implied_vol(Tape& t, const SkInputs& x, Var alpha, Var beta,
                     const SabrCurves& curves) {
  x.validate();
  check_sabr_maturity(x.tau);
  SabrTimeFunctions tf = sabr_time_functions_at(curves, x.tau);

  double fhat = x.S * std::exp(x.r * x.tau);
  Var one_m_beta = 1.0 - beta;
  Var w = exp(one_m_beta * std::log(fhat)) / alpha;
  Var w_sq = w * w;
  Var e1w = tf.eta1 * w;
  Var u_sq = one_m_beta * one_m_beta;
  Var eta1_sq = tf.eta1 * tf.eta1;
  Var eta2_sq = tf.eta2 * tf.eta2;

  Var a1 = (beta - 1.0 + e1w) * 0.5;
  Var a2 = u_sq * (1.0 / 12.0) + (one_m_beta - e1w) * 0.25 +
           (tf.v1_sq * 4.0 + (eta2_sq + eta1_sq * 3.0) * 3.0) * w_sq * (1.0 / 24.0);
  Var b = (u_sq * (1.0 / 24.0) + w * beta * tf.eta1 * 0.25 +
           (tf.v2_sq * 2.0 - eta2_sq * w_sq * 3.0) * (1.0 / 24.0)) /
          w_sq;

  double lkf = std::log(x.K / fhat);
  return (1.0 + a1 * lkf + a2 * (lkf * lkf) + b * x.tau) / w;
}

Var sabr_price(Tape& t, const SkInputs& x, Var alpha, Var beta,
               const SabrCurves& curves) {
  Var sig = floored_vol(t, sabr_implied_vol(t, x, alpha, beta, curves));
  return bsm_price(t, x, sig);
}

Var sabr_price(Tape& t, const SkInputs& x, const std::vector<Var>& constrained) {
  if (constrained.size() != repr_dim(Repr::Sabr))
    throw PricingError("sabr_price: expected the 722-dim constrained vector");
  std::vector<Var> nu(constrained.begin() + 2, constrained.begin() + 2 + kSabrGridN);
  std::vector<Var> rho(constrained.begin() + 2 + kSabrGridN, constrained.end());
  SabrCurves c = build_sabr_curves(t, nu, rho);
  return sabr_price(t, x, constrained[0], constrained[1], c);
}

namespace {

CVar one_minus(const CVar& z) { return {1.0 - z.re, -z.im}; }

// exponent of the square-root-volatility characteristic function at frequency
// u, with x0 the log-forward anchor carried on the imaginary axis; b - d is
// formed as (b^2 - d^2)/(b + d), which stays accurate where the direct
// difference cancels
CVar heston_cf_exponent(Tape& t, double u, double x0, double tau,
                        const Var& v_theta, const Var& v0, const Var& sigma_v,
                        const Var& rho, const Var& kappa) {
  (void)t;
  Var sv_sq = sigma_v * sigma_v;
  CVar b{kappa, rho * sigma_v * (-u)};
  CVar num{sv_sq * (-(u * u)), sv_sq * (-u)};  // sigma_v^2 (-iu - u^2) = b^2 - d^2
  CVar d = csqrt(csub(cmul(b, b), num));
  CVar bpd = cadd(b, d);
  CVar bmd = cdiv(num, bpd);
  CVar g = cdiv(bmd, bpd);
  CVar edt = cexp(cscale(d, -tau));
  CVar one_m_gedt = one_minus(cmul(g, edt));
  CVar lg = clog(cdiv(one_m_gedt, one_minus(g)));
  CVar cc = cscale(csub(cscale(bmd, tau), cscale(lg, 2.0)), kappa / sv_sq);
  CVar dq = cdiv(cmul(bmd, one_minus(edt)), one_m_gedt);
  CVar dc{dq.re / sv_sq, dq.im / sv_sq};
  CVar ex = cadd(cscale(cc, v_theta), cscale(dc, v0));
  ex.im = ex.im + u * x0;
  return ex;
}

CVar checked_cexp(const CVar& ex, double u, const char* who) {
  if (!(ex.re.value() < 700.0))
    throw PricingError(std::string(who) + ": exponent overflow at u=" +
                       std::to_string(u));
  return cexp(ex);
}

}  // namespace

CVar heston_cf(Tape& t, double u, const SkInputs& x, const std::vector<Var>& phi) {
  x.validate();
  if (phi.size() != 5) throw PricingError("heston_cf: expected 5 parameters");
  double x0 = std::log(x.S) + x.r * x.tau;
  CVar ex = heston_cf_exponent(t, u, x0, x.tau, phi[0], phi[1], phi[2], phi[3], phi[4]);
  return checked_cexp(ex, u, "heston_cf");
}

CVar jump_cf(Tape& t, double u, Var p, Var eta1, Var eta2, Var lambda, double tau) {
  (void)t;
  if (!(eta1.value() > 1.0)) throw PricingError("jump_cf: eta1 must exceed 1");
  if (!(eta2.value() > 0.0)) throw PricingError("jump_cf: eta2 must be positive");
  if (!(p.value() > 0.0 && p.value() < 1.0))
    throw PricingError("jump_cf: p must lie in (0, 1)");
  if (lambda.value() < 0.0) throw PricingError("jump_cf: lambda must be nonnegative");

  // p eta1 / (eta1 - iu) + (1-p) eta2 / (eta2 + iu) - 1, scaled by lambda tau
  Var pe = p * eta1;
  Var den1 = eta1 * eta1 + u * u;
  Var re1 = pe * eta1 / den1;
  Var im1 = pe * u / den1;
  Var qe = (1.0 - p) * eta2;
  Var den2 = eta2 * eta2 + u * u;
  Var re2 = qe * eta2 / den2;
  Var im2 = qe * (-u) / den2;
  Var lt = lambda * tau;
  CVar ex{lt * (re1 + re2 - 1.0), lt * (im1 + im2)};
  return cexp(ex);
}

CosInterval cos_interval(const SkInputs& x, const std::vector<double>& phi,
                         Repr repr, double width) {
  x.validate();
  if (repr != Repr::Hsv && repr != Repr::Hsvj)
    throw PricingError("cos_interval: representation has no characteristic function");
  if (phi.size() != repr_dim(repr))
    throw PricingError("cos_interval: parameter count mismatch");

  double vt = phi[0], v0 = phi[1], sv = phi[2], rho = phi[3], kp = phi[4];
  double tau = x.tau;
  double x0 = std::log(x.S / x.K) + x.r * tau;
  double ekt = std::exp(-kp * tau);

  double c1 = x0 - 0.5 * vt * tau + (vt - v0) * (1.0 - ekt) / (2.0 * kp);

  // exact second cumulant, assembled from the integrated-variance moments of
  // the square-root process; every e^{+kappa tau} has been folded into ekt so
  // stiff mean reversion cannot overflow
  double m_i = vt * tau + (v0 - vt) * (1.0 - ekt) / kp;
  double var_vt = sv * sv / kp * v0 * ekt * (1.0 - ekt) +
                  sv * sv * vt / (2.0 * kp) * (1.0 - ekt) * (1.0 - ekt);
  double cov_iv =
      sv * sv / kp *
      (v0 * ekt * (tau - (1.0 - ekt) / kp) +
       0.5 * vt *
           ((1.0 - ekt) / kp - 2.0 * tau * ekt + ekt * (1.0 - ekt) / kp));
  double p1 = (1.0 - ekt * (1.0 + kp * tau)) / (kp * kp);
  double q1 = ((1.0 - ekt) - 0.5 * (1.0 - ekt * ekt)) / (kp * kp);
  double var_i =
      2.0 * sv * sv / kp *
      (v0 * (p1 - q1) +
       0.5 * vt * ((tau - (1.0 - ekt) / kp) / kp - 2.0 * p1 + q1));
  double wa = rho * kp / sv - 0.5;
  double wb = rho / sv;
  double c2 = wa * wa * var_i + wb * wb * var_vt + 2.0 * wa * wb * cov_iv +
              (1.0 - rho * rho) * m_i;
  double c4 = 0.0;

  if (repr == Repr::Hsvj) {
    double p = phi[5], e1 = phi[6], e2 = phi[7], lam = phi[8];
    double q = 1.0 - p;
    c1 += lam * tau * (p / e1 - q / e2);
    c2 += 2.0 * lam * tau * (p / (e1 * e1) + q / (e2 * e2));
    c4 += 24.0 * lam * tau * (p / (e1 * e1 * e1 * e1) + q / (e2 * e2 * e2 * e2));
  }

  if (!(c2 > 0.0)) throw PricingError("cos_interval: nonpositive variance cumulant");
  double hw = width * std::sqrt(c2 + std::sqrt(c4));
  return {c1 - hw, c1 + hw};
}

std::vector<double> cos_payoff_coeffs(double a, double b, int n, double K) {
  if (n < 1) throw PricingError("cos_payoff_coeffs: need at least one term");
  if (!(b > a)) throw PricingError("cos_payoff_coeffs: empty interval");
  std::vector<double> v(static_cast<std::size_t>(n), 0.0);
  double lo = a < 0.0 ? 0.0 : a;
  if (b <= lo) return v;

  double span = b - a;
  double eb = std::exp(b);
  double el = std::exp(lo);
  for (int w = 0; w < n; ++w) {
    double f = w * kPi / span;
    double cb = std::cos(f * (b - a)), sb = std::sin(f * (b - a));
    double cl = std::cos(f * (lo - a)), sl = std::sin(f * (lo - a));
    double chi = (cb * eb - cl * el + f * (sb * eb - sl * el)) / (1.0 + f * f);
    double psi = (w == 0) ? (b - lo) : (sb - sl) / f;
    v[static_cast<std::size_t>(w)] = 2.0 / span * K * (chi - psi);
  }
  return v;
}

void CosConfig::validate() const {
  if (terms < 32) throw PricingError("CosConfig: need at least 32 terms");
  if (!(width > 0.0)) throw PricingError("CosConfig: width must be positive");
}

Var cos_price(Tape& t, const SkInputs& x, const std::vector<Var>& phi, Repr repr,
              const CosConfig& cos) {
  x.validate();
  cos.validate();
  if (repr != Repr::Hsv && repr != Repr::Hsvj)
    throw PricingError("cos_price: representation has no characteristic function");
  if (phi.size() != repr_dim(repr))
    throw PricingError("cos_price: parameter count mismatch");

  // the truncation interval is a function of the current parameter values and
  // enters the expansion as constants
  std::vector<double> pv(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) pv[i] = phi[i].value();
  CosInterval iv = cos_interval(x, pv, repr, cos.width);
  std::vector<double> coeff = cos_payoff_coeffs(iv.a, iv.b, cos.terms, x.K);

  double x0 = std::log(x.S / x.K) + x.r * x.tau;
  std::vector<Index> terms;
  terms.reserve(static_cast<std::size_t>(cos.terms));
  for (int w = 0; w < cos.terms; ++w) {
    double u = w * kPi / (iv.b - iv.a);
    CVar ex =
        heston_cf_exponent(t, u, x0, x.tau, phi[0], phi[1], phi[2], phi[3], phi[4]);
    CVar psi = checked_cexp(ex, u, "cos_price");
    if (repr == Repr::Hsvj)
      psi = cmul(psi, jump_cf(t, u, phi[5], phi[6], phi[7], phi[8], x.tau));
    double ca = std::cos(u * iv.a), sa = std::sin(u * iv.a);
    Var re = psi.re * ca + psi.im * sa;
    double wt = (w == 0 ? 0.5 : 1.0) * coeff[static_cast<std::size_t>(w)];
    terms.push_back((re * wt).index());
  }
  Var s = t.emit_sum_list(terms.data(), static_cast<Index>(terms.size()));
  return s * std::exp(-x.r * x.tau);
}

MopaGrid make_mopa_grid(double spot_ref, double rate_ref, std::size_t n_tenors,
                        std::size_t n_states) {
  if (!(spot_ref > 0.0)) throw PricingError("make_mopa_grid: spot must be positive");
  if (n_tenors < 1 || n_states < 2)
    throw PricingError("make_mopa_grid: degenerate grid");
  MopaGrid g;
  g.spot_ref = spot_ref;
  g.tenors.resize(n_tenors);
  g.discounts.resize(n_tenors);
  for (std::size_t h = 0; h < n_tenors; ++h) {
    g.tenors[h] = static_cast<double>(h + 1) / static_cast<double>(n_tenors);
    g.discounts[h] = std::exp(-rate_ref * g.tenors[h]);
  }
  g.states.resize(n_states);
  double lo = 0.5 * spot_ref, hi = 1.5 * spot_ref;
  for (std::size_t i = 0; i < n_states; ++i)
    g.states[i] = lo + (hi - lo) * static_cast<double>(i) /
                           static_cast<double>(n_states - 1);
  return g;
}

std::size_t mopa_tenor_index(const MopaGrid& grid, double tau) {
  if (!(tau > 0.0)) throw PricingError("mopa_tenor_index: maturity must be positive");
  double step = grid.tenors.size() > 1 ? grid.tenors[1] - grid.tenors[0]
                                       : grid.tenors[0];
  if (tau > grid.tenors.back() + 0.5 * step)
    throw PricingError("mopa_tenor_index: maturity beyond the tenor grid");
  std::size_t best = 0;
  double best_d = std::abs(tau - grid.tenors[0]);
  for (std::size_t h = 1; h < grid.tenors.size(); ++h) {
    double d = std::abs(tau - grid.tenors[h]);
    if (d < best_d) {
      best = h;
      best_d = d;
    }
  }
  return best;
}

std::vector<double> mopa_payoff_row(const MopaGrid& grid, double K) {
  std::vector<double> row(grid.n_states());
  for (std::size_t i = 0; i < row.size(); ++i)
    row[i] = grid.states[i] > K ? grid.states[i] - K : 0.0;
  return row;
}

Var mopa_price(Tape& t, const SkInputs& x, const MopaGrid& grid,
               const std::vector<Var>& q) {
  x.validate();
  if (q.size() != grid.n_tenors() * grid.n_states())
    throw PricingError("mopa_price: probability vector does not match the grid");
  std::size_t h = mopa_tenor_index(grid, x.tau);
  std::vector<double> payoff = mopa_payoff_row(grid, x.K);

  std::size_t base = h * grid.n_states();
  Index q0 = q[base].index();
  bool contiguous = true;
  for (std::size_t i = 1; i < grid.n_states(); ++i)
    if (q[base + i].index() != q0 + i) {
      contiguous = false;
      break;
    }

  Var px(nullptr, kNoNode, 0.0);
  if (contiguous) {
    px = t.emit_weighted_sum(payoff.data(), q0, static_cast<Index>(grid.n_states()));
  } else {
    std::vector<Index> ids;
    ids.reserve(grid.n_states());
    for (std::size_t i = 0; i < grid.n_states(); ++i)
      ids.push_back((q[base + i] * payoff[i]).index());
    px = t.emit_sum_list(ids.data(), static_cast<Index>(ids.size()));
  }
  return px * grid.discounts[h];
}

Var skr_price(Tape& t, Repr repr, const SkInputs& x,
              const std::vector<Var>& constrained, const SkrContext& ctx) {
  if (constrained.size() != repr_dim(repr))
    throw PricingError(std::string("skr_price: parameter count mismatch for ") +
                       repr_name(repr));
  switch (repr) {
    case Repr::Bsm:
      return bsm_price(t, x, constrained[0]);
    case Repr::Absm:
      return absm_price(t, x, constrained);
    case Repr::Sabr:
      if (ctx.sabr)
        return sabr_price(t, x, constrained[0], constrained[1], *ctx.sabr);
      return sabr_price(t, x, constrained);
    case Repr::Hsv:
    case Repr::Hsvj:
      return cos_price(t, x, constrained, repr, ctx.cos);
    case Repr::Mopa:
      if (!ctx.mopa) throw PricingError("skr_price: mopa grid missing from context");
      return mopa_price(t, x, *ctx.mopa, constrained);
    case Repr::DsnnHsv:
    case Repr::DsnnNasv:
    case Repr::AeBsm:
      if (!ctx.surrogate)
        throw PricingError("skr_price: surrogate backend missing from context");
      return ctx.surrogate->price(t, x, constrained);
  }
  throw PricingError("skr_price: unknown representation");
}

}  // namespace skinn
