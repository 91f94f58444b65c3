#include "skinn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <utility>

#include "skinn/optim.hpp"
#include "skinn/rng.hpp"

namespace skinn {

namespace {

// Stand-in for tau = 0, where the payoff is exactly intrinsic. Small enough
// that no kernel distinguishes it from expiry at the tolerances in use.
constexpr double kExpiryTau = 1e-6;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void check_quote(const Quote& q, std::size_t i, const char* who) {
  const bool ok = q.S > 0.0 && q.K > 0.0 && q.tau > 0.0 && std::isfinite(q.S) &&
                  std::isfinite(q.K) && std::isfinite(q.r) &&
                  std::isfinite(q.tau) && std::isfinite(q.mid);
  if (!ok)
    throw TrainError(std::string(who) + ": quote " + std::to_string(i) +
                     " is malformed");
}

}  // namespace

void TrainConfig::validate() const {
  if (!std::isfinite(lambda_sk) || lambda_sk < 0.0)
    throw TrainError("TrainConfig: lambda_sk must be finite and non-negative");
  if (epochs < 1) throw TrainError("TrainConfig: epochs must be positive");
  if (!std::isfinite(lr) || lr <= 0.0)
    throw TrainError("TrainConfig: learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw TrainError("TrainConfig: Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw TrainError("TrainConfig: Adam eps must be positive");
  if (n_colloc == 0) throw TrainError("TrainConfig: collocation count must be positive");
  if (!(m_lo > 0.0) || !(m_lo < m_hi) || !std::isfinite(m_hi))
    throw TrainError("TrainConfig: bad moneyness box");
  if (!(tau_lo > 0.0) || !(tau_lo < tau_hi) || !std::isfinite(tau_hi))
    throw TrainError("TrainConfig: bad maturity box");
  if (net.input_dim != 3)
    throw TrainError("TrainConfig: network must take (m, tau, r)");
}

CollocationSet draw_collocation(const TrainConfig& cfg, double rate) {
  cfg.validate();
  if (!std::isfinite(rate)) throw TrainError("draw_collocation: non-finite rate");
  CollocationSet out;
  out.seed = cfg.colloc_seed;
  out.rate = rate;
  out.m_lo = cfg.m_lo;
  out.m_hi = cfg.m_hi;
  out.tau_lo = cfg.tau_lo;
  out.tau_hi = cfg.tau_hi;
  Rng rng(cfg.colloc_seed, Stream::Collocation);
  out.points.reserve(cfg.n_colloc);
  for (std::size_t i = 0; i < cfg.n_colloc; ++i) {
    const double m = rng.uniform(cfg.m_lo, cfg.m_hi);
    const double tau = rng.uniform(cfg.tau_lo, cfg.tau_hi);
    out.points.push_back(SkInputs::make(1.0, m, rate, tau));
  }
  return out;
}

Var data_loss(Tape& t, const MlpOnTape& net, const Panel& panel) {
  if (panel.empty()) throw TrainError("data_loss: empty panel");
  if (net.params->dims.front() != 3)
    throw TrainError("data_loss: network must take (m, tau, r)");
  std::vector<Index> sq;
  sq.reserve(panel.size());
  for (std::size_t i = 0; i < panel.size(); ++i) {
    const Quote& q = panel[i];
    check_quote(q, i, "data_loss");
    const double in[3] = {q.K / q.S, q.tau, q.r};
    Var res = mlp_forward(net, in) - q.mid / q.K;
    sq.push_back((res * res).index());
  }
  return t.emit_sum_list(sq.data(), static_cast<Index>(sq.size())) *
         (1.0 / static_cast<double>(panel.size()));
}

Var sk_loss(Tape& t, const MlpOnTape& net, const std::vector<Var>& constrained,
            const CollocationSet& colloc, Repr repr, const SkrContext& ctx) {
  if (colloc.points.empty()) throw TrainError("sk_loss: empty collocation set");
  if (net.params->dims.front() != 3)
    throw TrainError("sk_loss: network must take (m, tau, r)");
  std::vector<Index> sq;
  sq.reserve(colloc.points.size());
  for (std::size_t i = 0; i < colloc.points.size(); ++i) {
    const SkInputs& x = colloc.points[i];
    try {
      const double in[3] = {x.m, x.tau, x.r};
      Var f = mlp_forward(net, in);
      Var g = skr_price(t, repr, x, constrained, ctx) * (1.0 / x.K);
      Var res = f - g;
      sq.push_back((res * res).index());
    } catch (const PricingError& e) {
      throw PricingError("sk_loss: collocation point " + std::to_string(i) +
                         ": " + e.what());
    } catch (const AutodiffError& e) {
      throw AutodiffError("sk_loss: collocation point " + std::to_string(i) +
                          ": " + e.what());
    }
  }
  return t.emit_sum_list(sq.data(), static_cast<Index>(sq.size())) *
         (1.0 / static_cast<double>(colloc.points.size()));
}

Panel boundary_augment(const CollocationSet& colloc) {
  if (!std::isfinite(colloc.rate))
    throw TrainError("boundary_augment: non-finite rate");
  Rng rng(colloc.seed, Stream::Boundary);
  Panel extra;
  extra.reserve(100);
  for (int i = 0; i < 100; ++i) {
    Quote q;
    q.S = 1.0;
    q.r = colloc.rate;
    switch (i % 3) {
      case 0: {  // intrinsic value at expiry
        const double m = rng.uniform(colloc.m_lo, colloc.m_hi);
        q.K = m;
        q.tau = kExpiryTau;
        q.mid = std::max(1.0 / m - 1.0, 0.0) * m;
        break;
      }
      case 1: {  // worthless deep out of the money near expiry
        q.K = rng.uniform(1.5, 2.0);
        q.tau = rng.uniform(7.0 / 365.0, 0.05);
        q.mid = 0.0;
        break;
      }
      default: {  // discounted lower bound deep in the money
        const double m = rng.uniform(0.5, 0.65);
        q.K = m;
        q.tau = rng.uniform(colloc.tau_lo, colloc.tau_hi);
        q.mid = std::max(1.0 / m - std::exp(-colloc.rate * q.tau), 0.0) * m;
        break;
      }
    }
    extra.push_back(q);
  }
  return extra;
}

FittedModel train_skinn(const TrainConfig& cfg, const Panel& panel,
                        const SkrContext& ctx,
                        const CollocationSet* colloc_override) {
  cfg.validate();
  if (panel.empty()) throw TrainError("train_skinn: empty panel");
  for (std::size_t i = 0; i < panel.size(); ++i)
    check_quote(panel[i], i, "train_skinn");

  const std::size_t nq = repr_dim(cfg.repr);
  const bool use_sk = cfg.lambda_sk > 0.0;

  CollocationSet colloc;
  if (use_sk || cfg.boundary) {
    if (colloc_override != nullptr) {
      colloc = *colloc_override;
      if (colloc.points.empty())
        throw TrainError("train_skinn: empty collocation set");
    } else {
      colloc = draw_collocation(cfg, panel_median_rate(panel));
    }
  }

  Panel work = panel;
  if (cfg.boundary) {
    Panel extra = boundary_augment(colloc);
    work.insert(work.end(), extra.begin(), extra.end());
  }

  MlpParams net = init_mlp(cfg.net);
  std::vector<double> phi_raw = SkrParams::init(cfg.repr).raw;
  const std::size_t np = net.flat.size();

  Tape t;
  if (ctx.surrogate) ctx.surrogate->bind(t);
  MlpOnTape mt = lift_mlp(t, net);
  const Index raw0 = t.lift_block(phi_raw.data(), nq);
  const std::size_t mark = t.mark();

  Adam opt(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
  std::vector<double> joint(np + nq);
  std::copy(net.flat.begin(), net.flat.end(), joint.begin());
  std::copy(phi_raw.begin(), phi_raw.end(), joint.begin() + np);
  std::vector<double> g(np + nq, 0.0);

  auto build = [&](double* ld_out, double* ls_out) {
    t.rewind(mark);
    std::copy(joint.begin(), joint.begin() + np, net.flat.begin());
    std::copy(joint.begin() + np, joint.end(), phi_raw.begin());
    refresh_mlp(mt);
    for (std::size_t j = 0; j < nq; ++j)
      t.set_leaf(static_cast<Index>(raw0 + j), phi_raw[j]);

    Var ld = data_loss(t, mt, work);
    Var total = ld;
    *ls_out = 0.0;
    if (use_sk) {
      std::vector<Var> constrained = param_transform(t, raw0, nq, cfg.repr);
      SkrContext local = ctx;
      SabrCurves curves;
      if (cfg.repr == Repr::Sabr) {
        const std::size_t grid_n = (nq - 2) / 2;
        std::vector<Var> nu(constrained.begin() + 2,
                            constrained.begin() + 2 + grid_n);
        std::vector<Var> rho(constrained.begin() + 2 + grid_n, constrained.end());
        curves = build_sabr_curves(t, nu, rho);
        local.sabr = &curves;
      }
      Var ls = sk_loss(t, mt, constrained, colloc, cfg.repr, local);
      *ls_out = ls.value();
      total = ld + cfg.lambda_sk * ls;
    }
    *ld_out = ld.value();
    return total;
  };

  FittedModel out;
  out.config = cfg;
  out.trace.reserve(static_cast<std::size_t>(cfg.epochs) + 1);
  double last_ld = 0.0;
  double last_ls = 0.0;

  for (int e = 0; e <= cfg.epochs; ++e) {
    double ld = 0.0;
    double ls = 0.0;
    try {
      Var total = build(&ld, &ls);
      out.trace.push_back({e, ld, ls, total.value()});
      if (e == cfg.epochs) break;
      t.grad_block(total, mt.p0, np + nq, g.data());
    } catch (const AutodiffError& err) {
      throw TrainError("train_skinn: non-finite value at epoch " +
                       std::to_string(e) + " (last data loss " + fmt(last_ld) +
                       ", sk loss " + fmt(last_ls) + "): " + err.what());
    } catch (const PricingError& err) {
      throw TrainError("train_skinn: pricing failure at epoch " +
                       std::to_string(e) + " (last data loss " + fmt(last_ld) +
                       ", sk loss " + fmt(last_ls) + "): " + err.what());
    }
    for (double gv : g)
      if (!std::isfinite(gv))
        throw TrainError("train_skinn: non-finite gradient at epoch " +
                         std::to_string(e) + " (data loss " + fmt(ld) +
                         ", sk loss " + fmt(ls) + ")");
    last_ld = ld;
    last_ls = ls;
    opt.step(joint, g);
  }

  out.final_data_loss = out.trace.back().data_loss;
  out.final_sk_loss = out.trace.back().sk_loss;
  std::copy(joint.begin(), joint.begin() + np, net.flat.begin());
  std::copy(joint.begin() + np, joint.end(), phi_raw.begin());
  out.net = std::move(net);
  out.phi_raw = std::move(phi_raw);
  out.phi = param_transform_values(out.phi_raw, cfg.repr);
  return out;
}

std::vector<Var> clamp_normalize(Tape& t, const std::vector<Var>& raw,
                                 const std::vector<double>& lo,
                                 const std::vector<double>& hi) {
  const std::size_t n = raw.size();
  if (n == 0) throw TrainError("clamp_normalize: empty weight vector");
  if (lo.size() != n || hi.size() != n)
    throw TrainError("clamp_normalize: bound count mismatch");
  std::vector<Var> clamped;
  std::vector<Index> ids;
  clamped.reserve(n);
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(lo[i]) || !std::isfinite(hi[i]) || !(lo[i] <= hi[i]))
      throw TrainError("clamp_normalize: bad bounds at index " +
                       std::to_string(i));
    Var w = lo[i] == hi[i] ? t.lift(lo[i])
                           : sigmoid(raw[i]) * (hi[i] - lo[i]) + lo[i];
    clamped.push_back(w);
    ids.push_back(w.index());
  }
  Var inv = 1.0 / t.emit_sum_list(ids.data(), static_cast<Index>(n));
  std::vector<Var> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(clamped[i] * inv);
  return out;
}

std::vector<double> clamp_normalize_values(const std::vector<double>& raw,
                                           const std::vector<double>& lo,
                                           const std::vector<double>& hi) {
  const std::size_t n = raw.size();
  if (n == 0) throw TrainError("clamp_normalize: empty weight vector");
  if (lo.size() != n || hi.size() != n)
    throw TrainError("clamp_normalize: bound count mismatch");
  std::vector<double> clamped(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(lo[i]) || !std::isfinite(hi[i]) || !(lo[i] <= hi[i]))
      throw TrainError("clamp_normalize: bad bounds at index " +
                       std::to_string(i));
    clamped[i] = lo[i] == hi[i] ? lo[i] : sigmoid(raw[i]) * (hi[i] - lo[i]) + lo[i];
    sum += clamped[i];
  }
  const double inv = 1.0 / sum;
  for (double& w : clamped) w *= inv;
  return clamped;
}

Var meanvar_sk_loss(Tape& t, const MlpOnTape& net, const std::vector<Var>& w_raw,
                    const std::vector<double>& features, std::size_t n_features,
                    const std::vector<double>& sigma, double eta,
                    const std::vector<double>& lo, const std::vector<double>& hi,
                    bool* cap_exceeded) {
  const std::size_t n = w_raw.size();
  if (n == 0) throw TrainError("meanvar_sk_loss: no assets");
  if (n_features == 0 || features.size() != n * n_features)
    throw TrainError("meanvar_sk_loss: features shape mismatch");
  if (net.params->dims.front() != static_cast<int>(n_features))
    throw TrainError("meanvar_sk_loss: network input width != feature count");
  if (sigma.size() != n * n)
    throw TrainError("meanvar_sk_loss: covariance shape mismatch");
  if (!std::isfinite(eta) || eta < 0.0)
    throw TrainError("meanvar_sk_loss: risk aversion must be finite and non-negative");
  if (lo.size() != n || hi.size() != n)
    throw TrainError("meanvar_sk_loss: bound count mismatch");

  double scale = 1.0;
  for (double s : sigma) {
    if (!std::isfinite(s)) throw TrainError("meanvar_sk_loss: non-finite covariance");
    scale = std::max(scale, std::abs(s));
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(sigma[i * n + j] - sigma[j * n + i]) > 1e-12 * scale)
        throw TrainError("meanvar_sk_loss: covariance not symmetric");

  double sum_lo = 0.0;
  double sum_hi = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(lo[i]) || !std::isfinite(hi[i]) || !(lo[i] <= hi[i]))
      throw TrainError("meanvar_sk_loss: bad bounds at index " + std::to_string(i));
    sum_lo += lo[i];
    sum_hi += hi[i];
  }
  if (sum_lo > 1.0 || sum_hi < 1.0)
    throw TrainError("meanvar_sk_loss: weight bounds cannot reach unit sum");

  std::vector<Var> w = clamp_normalize(t, w_raw, lo, hi);
  if (cap_exceeded != nullptr) {
    *cap_exceeded = false;
    for (std::size_t i = 0; i < n; ++i)
      if (w[i].value() > hi[i] + 1e-6) *cap_exceeded = true;
  }

  std::vector<Var> preds;
  preds.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    preds.push_back(mlp_forward(net, &features[i * n_features]));

  // one contiguous copy of the weights, so the covariance rows can be fused
  const Index w0 = static_cast<Index>(t.size());
  std::vector<Var> wc;
  wc.reserve(n);
  for (std::size_t i = 0; i < n; ++i) wc.push_back(w[i] * 1.0);

  std::vector<Index> ret_terms;
  ret_terms.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    ret_terms.push_back((wc[i] * preds[i]).index());
  Var ret = t.emit_sum_list(ret_terms.data(), static_cast<Index>(n));

  std::vector<Index> var_terms;
  var_terms.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Var row = t.emit_weighted_sum(&sigma[i * n], w0, static_cast<Index>(n));
    var_terms.push_back((wc[i] * row).index());
  }
  Var quad = t.emit_sum_list(var_terms.data(), static_cast<Index>(n));

  return quad * eta - ret;
}

}  // namespace skinn
