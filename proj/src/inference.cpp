#include "skinn/inference.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <numbers>
#include <string>

#include "skinn/autodiff.hpp"
#include "skinn/mlp.hpp"

namespace skinn {

namespace {

// Rebuilds the trainer's composite loss at an arbitrary joint point. The
// tape keeps the lifted parameter leaves below a mark and rewinds the graph
// above it on every evaluation, so repeated calls reuse the allocation.
class CompositeObjective {
 public:
  CompositeObjective(const FittedModel& model, const Panel& panel,
                     const CollocationSet& colloc, const SkrContext& ctx)
      : repr_(model.config.repr),
        lambda_(model.config.lambda_sk),
        net_(model.net),
        phi_raw_(model.phi_raw),
        panel_(&panel),
        colloc_(&colloc),
        ctx_(ctx) {
    if (panel.empty()) throw InferenceError("inference: empty panel");
    if (phi_raw_.size() != repr_dim(repr_))
      throw InferenceError(
          "inference: latent parameter size does not match representation");
    if (lambda_ > 0.0 && colloc.points.empty())
      throw InferenceError(
          "inference: structured term is active but the collocation set is "
          "empty");
    if (ctx_.surrogate) ctx_.surrogate->bind(tape_);
    on_tape_ = lift_mlp(tape_, net_);
    raw0_ = tape_.lift_block(phi_raw_.data(), phi_raw_.size());
    mark_ = tape_.mark();
  }

  std::size_t n_theta() const { return net_.flat.size(); }
  std::size_t size() const { return net_.flat.size() + phi_raw_.size(); }

  std::vector<double> point() const {
    std::vector<double> joint(size());
    std::copy(net_.flat.begin(), net_.flat.end(), joint.begin());
    std::copy(phi_raw_.begin(), phi_raw_.end(),
              joint.begin() + net_.flat.size());
    return joint;
  }

  // Composite loss at joint; when out is non-null, also its gradient over
  // the [theta | raw phi] block.
  double eval(const std::vector<double>& joint, double* out) {
    place(joint);
    Var ld = data_loss(tape_, on_tape_, *panel_);
    Var total = lambda_ > 0.0 ? ld + lambda_ * sk_term() : ld;
    if (out != nullptr) tape_.grad_block(total, on_tape_.p0, size(), out);
    return total.value();
  }

  // Per-observation scores at the fitted point, rows x size(). The data
  // part is the gradient of that quote's squared residual; the structured
  // part is one shared gradient added to every row.
  void scores(std::vector<double>& out) {
    const std::size_t n = size();
    const std::size_t rows = panel_->size();
    out.assign(rows * n, 0.0);
    const std::vector<double> joint = point();

    Panel one(1);
    for (std::size_t i = 0; i < rows; ++i) {
      place(joint);
      one[0] = (*panel_)[i];
      Var li = data_loss(tape_, on_tape_, one);
      tape_.grad_block(li, on_tape_.p0, n, &out[i * n]);
    }

    if (lambda_ > 0.0) {
      place(joint);
      std::vector<double> sk_grad(n);
      tape_.grad_block(sk_term(), on_tape_.p0, n, sk_grad.data());
      for (std::size_t i = 0; i < rows; ++i) {
        double* row = &out[i * n];
        for (std::size_t j = 0; j < n; ++j) row[j] += lambda_ * sk_grad[j];
      }
    }
  }

 private:
  void place(const std::vector<double>& joint) {
    tape_.rewind(mark_);
    std::copy(joint.begin(), joint.begin() + net_.flat.size(),
              net_.flat.begin());
    std::copy(joint.begin() + net_.flat.size(), joint.end(),
              phi_raw_.begin());
    refresh_mlp(on_tape_);
    for (std::size_t j = 0; j < phi_raw_.size(); ++j)
      tape_.set_leaf(static_cast<Index>(raw0_ + j), phi_raw_[j]);
  }

  Var sk_term() {
    std::vector<Var> constrained =
        param_transform(tape_, raw0_, phi_raw_.size(), repr_);
    SkrContext local = ctx_;
    SabrCurves curves;
    if (repr_ == Repr::Sabr) {
      const std::size_t grid_n = (phi_raw_.size() - 2) / 2;
      std::vector<Var> nu(constrained.begin() + 2,
                          constrained.begin() + 2 + grid_n);
      std::vector<Var> rho(constrained.begin() + 2 + grid_n,
                           constrained.end());
      curves = build_sabr_curves(tape_, nu, rho);
      local.sabr = &curves;
    }
    return sk_loss(tape_, on_tape_, constrained, *colloc_, repr_, local);
  }

  Repr repr_;
  double lambda_;
  MlpParams net_;
  std::vector<double> phi_raw_;
  const Panel* panel_;
  const CollocationSet* colloc_;
  SkrContext ctx_;
  Tape tape_;
  MlpOnTape on_tape_;
  Index raw0_ = 0;
  std::size_t mark_ = 0;
};

std::vector<double> hessian_impl(const FittedModel& model, const Panel& panel,
                                 const CollocationSet& colloc,
                                 const SkrContext& ctx, bool threaded,
                                 double* max_asym) {
  // the surrogate backend caches lifted weights per tape and is not safe to
  // share across concurrent tapes
  if (ctx.surrogate != nullptr) threaded = false;

  CompositeObjective probe(model, panel, colloc, ctx);
  const std::size_t n = probe.size();
  const std::vector<double> base = probe.point();
  std::vector<double> raw(n * n, 0.0);

  std::atomic<bool> failed{false};
  std::exception_ptr err;
#pragma omp parallel for schedule(dynamic) if (threaded)
  for (std::ptrdiff_t jc = 0; jc < static_cast<std::ptrdiff_t>(n); ++jc) {
    if (failed.load(std::memory_order_relaxed)) continue;
    try {
      const std::size_t j = static_cast<std::size_t>(jc);
      CompositeObjective obj(model, panel, colloc, ctx);
      std::vector<double> x = base;
      std::vector<double> gp(n), gm(n);
      const double h = 1e-4 * (1.0 + std::abs(base[j]));
      try {
        x[j] = base[j] + h;
        obj.eval(x, gp.data());
        x[j] = base[j] - h;
        obj.eval(x, gm.data());
      } catch (const std::exception& e) {
        throw InferenceError("empirical_hessian: evaluation failed at "
                             "coordinate " +
                             std::to_string(j) + ": " + e.what());
      }
      const double inv = 1.0 / (2.0 * h);
      for (std::size_t i = 0; i < n; ++i)
        raw[i * n + j] = (gp[i] - gm[i]) * inv;
    } catch (...) {
#pragma omp critical(skinn_hess_err)
      {
        if (!err) err = std::current_exception();
      }
      failed.store(true, std::memory_order_relaxed);
    }
  }
  if (err) std::rethrow_exception(err);

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (!std::isfinite(raw[i * n + j]))
        throw InferenceError("empirical_hessian: non-finite entry at (" +
                             std::to_string(i) + ", " + std::to_string(j) +
                             ")");

  double asym = 0.0;
  std::vector<double> sym(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      asym = std::max(asym, std::abs(raw[i * n + j] - raw[j * n + i]));
      sym[i * n + j] = 0.5 * (raw[i * n + j] + raw[j * n + i]);
    }
  if (max_asym != nullptr) *max_asym = asym;
  return sym;
}

}  // namespace

std::vector<double> score_outer_product(const FittedModel& model,
                                        const Panel& panel,
                                        const CollocationSet& colloc,
                                        const SkrContext& ctx) {
  CompositeObjective obj(model, panel, colloc, ctx);
  const std::size_t n = obj.size();
  const std::size_t rows = panel.size();
  std::vector<double> s;
  obj.scores(s);

  std::vector<double> xi(n * n, 0.0);
  for (std::size_t k = 0; k < rows; ++k) {
    const double* row = &s[k * n];
    for (std::size_t i = 0; i < n; ++i) {
      const double si = row[i];
      if (si == 0.0) continue;
      double* xr = &xi[i * n];
      for (std::size_t j = 0; j < n; ++j) xr[j] += si * row[j];
    }
  }
  const double inv = 1.0 / static_cast<double>(rows);
  for (double& v : xi) {
    v *= inv;
    if (!std::isfinite(v))
      throw InferenceError("score_outer_product: non-finite entry");
  }
  return xi;
}

std::vector<double> empirical_hessian(const FittedModel& model,
                                      const Panel& panel,
                                      const CollocationSet& colloc,
                                      const SkrContext& ctx, double* max_asym) {
  return hessian_impl(model, panel, colloc, ctx, true, max_asym);
}

std::vector<double> empirical_hessian_serial(const FittedModel& model,
                                             const Panel& panel,
                                             const CollocationSet& colloc,
                                             const SkrContext& ctx,
                                             double* max_asym) {
  return hessian_impl(model, panel, colloc, ctx, false, max_asym);
}

SandwichEstimate sandwich(const FittedModel& model, const Panel& panel,
                          const CollocationSet& colloc,
                          const SkrContext& ctx) {
  SandwichEstimate out;
  out.n_theta = model.net.flat.size();
  out.n_phi = model.phi_raw.size();
  out.n_obs = panel.size();
  out.score_outer = score_outer_product(model, panel, colloc, ctx);
  out.hessian = empirical_hessian(model, panel, colloc, ctx);

  const std::size_t n = out.n_theta + out.n_phi;
  using Mat =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<Mat> h_map(out.hessian.data(), n, n);
  Eigen::Map<const Mat> xi_map(out.score_outer.data(), n, n);

  Eigen::SelfAdjointEigenSolver<Mat> es(h_map, Eigen::EigenvaluesOnly);
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double a = std::abs(es.eigenvalues()[i]);
    lo = std::min(lo, a);
    hi = std::max(hi, a);
  }
  out.condition = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();

  if (!(out.condition <= 1e12)) {
    for (std::size_t i = 0; i < n; ++i) out.hessian[i * n + i] += 1e-8;
    out.regularized = true;
  }

  Eigen::FullPivLU<Mat> lu(h_map);
  if (!lu.isInvertible())
    throw InferenceError("sandwich: hessian is singular after regularization");
  Mat a = lu.solve(xi_map);
  Mat v = lu.solve(a.transpose());
  v = 0.5 * (v + v.transpose()).eval();
  if (!v.allFinite())
    throw InferenceError("sandwich: covariance has non-finite entries");

  out.covariance.assign(n * n, 0.0);
  Eigen::Map<Mat>(out.covariance.data(), n, n) = v;
  out.phi_block.assign(out.n_phi * out.n_phi, 0.0);
  for (std::size_t i = 0; i < out.n_phi; ++i)
    for (std::size_t j = 0; j < out.n_phi; ++j)
      out.phi_block[i * out.n_phi + j] =
          out.covariance[(out.n_theta + i) * n + out.n_theta + j];
  return out;
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw InferenceError("normal_quantile: p must lie in (0, 1)");
  // Acklam's rational approximation, then one Halley step against erfc
  static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                              -2.759285104469687e+02, 1.383577518672690e+02,
                              -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                              -1.556989798598866e+02, 6.680131188771972e+01,
                              -1.328068155288572e+01};
  static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                              -2.400758277161838e+00, -2.549732539343734e+00,
                              4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double u = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u + c[5]) /
        ((((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0);
  } else if (p <= 1.0 - plow) {
    const double u = p - 0.5;
    const double r = u * u;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        u /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double u = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u +
          c[5]) /
        ((((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u =
      e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

std::vector<CiRow> confidence_interval(Repr repr,
                                       const std::vector<double>& phi_raw,
                                       const std::vector<double>& phi_block,
                                       std::size_t n_obs, double alpha) {
  const std::size_t q = repr_dim(repr);
  if (phi_raw.size() != q)
    throw InferenceError("confidence_interval: parameter size mismatch");
  if (phi_block.size() != q * q)
    throw InferenceError("confidence_interval: covariance size mismatch");
  if (n_obs == 0)
    throw InferenceError("confidence_interval: no observations");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw InferenceError("confidence_interval: alpha must lie in (0, 1)");

  double scale = 0.0;
  for (std::size_t j = 0; j < q; ++j)
    scale = std::max(scale, std::abs(phi_block[j * q + j]));

  Tape t;
  const Index r0 = t.lift_block(phi_raw.data(), q);
  std::vector<Var> constrained = param_transform(t, r0, q, repr);
  std::vector<double> jac(q * q);
  for (std::size_t j = 0; j < q; ++j)
    t.grad_block(constrained[j], r0, q, &jac[j * q]);

  const double z = normal_quantile(1.0 - alpha / 2.0);
  std::vector<std::string> names = repr_param_names(repr);
  std::vector<CiRow> rows(q);
  for (std::size_t j = 0; j < q; ++j) {
    double var_c = 0.0;
    for (std::size_t u = 0; u < q; ++u) {
      if (jac[j * q + u] == 0.0) continue;
      for (std::size_t w = 0; w < q; ++w)
        var_c += jac[j * q + u] * phi_block[u * q + w] * jac[j * q + w];
    }
    // round-off from the quadratic form may leave a tiny negative variance
    if (var_c < 0.0) {
      if (var_c < -1e-10 * (scale + 1.0))
        throw InferenceError("confidence_interval: negative variance for " +
                             names[j]);
      var_c = 0.0;
    }
    const double se = std::sqrt(var_c / static_cast<double>(n_obs));
    rows[j].name = names[j];
    rows[j].estimate = constrained[j].value();
    rows[j].std_err = se;
    rows[j].lo = rows[j].estimate - z * se;
    rows[j].hi = rows[j].estimate + z * se;
  }
  return rows;
}

void write_inference_csv(std::ostream& os, const std::vector<CiRow>& rows,
                         bool regularized) {
  os << "name,estimate,std_err,ci_lo,ci_hi,regularized\n";
  char buf[320];
  for (const CiRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%d\n",
                  r.name.c_str(), r.estimate, r.std_err, r.lo, r.hi,
                  regularized ? 1 : 0);
    os << buf;
  }
}

}  // namespace skinn
