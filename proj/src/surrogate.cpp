#include "skinn/surrogate.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "skinn/optim.hpp"
#include "skinn/rng.hpp"

namespace skinn {

const char* sde_model_name(SdeModel m) {
  return m == SdeModel::Hsv ? "hsv" : "nasv";
}

SdeModel sde_model_from_name(const std::string& s) {
  if (s == "hsv") return SdeModel::Hsv;
  if (s == "nasv") return SdeModel::Nasv;
  throw SurrogateError("unknown SDE model name: " + s);
}

void SdeSpec::validate() const {
  if (!(kappa > 0.0) || !std::isfinite(kappa))
    throw SurrogateError("SdeSpec: kappa must be positive");
  if (!(v_theta >= 0.0) || !std::isfinite(v_theta))
    throw SurrogateError("SdeSpec: v_theta must be non-negative");
  if (!(v0 >= 0.0) || !std::isfinite(v0))
    throw SurrogateError("SdeSpec: v0 must be non-negative");
  if (!(sigma_v >= 0.0) || !std::isfinite(sigma_v))
    throw SurrogateError("SdeSpec: sigma_v must be non-negative");
  if (!(rho > -1.0 && rho < 1.0))
    throw SurrogateError("SdeSpec: rho must lie in (-1, 1)");
  if (!(gamma_v > 0.0 && gamma_v <= 1.0))
    throw SurrogateError("SdeSpec: gamma_v must lie in (0, 1]");
  if (model == SdeModel::Hsv && gamma_v != 0.5)
    throw SurrogateError("SdeSpec: the hsv model pins gamma_v to 0.5");
  if (steps_per_year < 1)
    throw SurrogateError("SdeSpec: steps_per_year must be at least 1");
  if (paths < 2 || paths % 2 != 0)
    throw SurrogateError("SdeSpec: paths must be even and at least 2");
}

namespace {

constexpr std::size_t kPairChunk = 64;
constexpr double kSpotRef = 100.0;

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Everything one chunk needs, precomputed once per query.
struct SimTask {
  double x0 = 0.0;  // log spot
  double rate = 0.0;
  double strike = 0.0;
  double dt = 0.0, sdt = 0.0;
  double kappa = 0.0, v_theta = 0.0, sigma_v = 0.0, gamma = 0.5, v0 = 0.0;
  double rho = 0.0, rho_c = 0.0;
  int n_steps = 0;
  std::uint64_t seed = 0;
};

inline void advance(const SimTask& tk, double& x, double& v, double zs,
                    double zv) {
  const double vplus = v > 0.0 ? v : 0.0;
  x += (tk.rate - 0.5 * vplus) * tk.dt + std::sqrt(vplus) * tk.sdt * zs;
  v += tk.kappa * (tk.v_theta - vplus) * tk.dt +
       tk.sigma_v * std::pow(vplus, tk.gamma) * tk.sdt * zv;
}

[[noreturn]] void throw_sim_diag(const SimTask& tk, std::size_t chunk, int step,
                                 double x, double v) {
  std::ostringstream os;
  os << "simulate_price: path went non-finite at step " << step << "/"
     << tk.n_steps << " (chunk " << chunk << ", x=" << x << ", v=" << v
     << ", sigma_v=" << tk.sigma_v << ", gamma_v=" << tk.gamma << ")";
  throw SurrogateError(os.str());
}

// One chunk of antithetic pairs. Accumulates the sum and sum of squares of
// the per-pair mean payoffs (undiscounted).
void run_chunk(const SimTask& tk, std::size_t chunk, std::size_t pairs,
               double& sum_out, double& sumsq_out) {
  Rng rng(tk.seed, Stream::Simulation, chunk);
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t p = 0; p < pairs; ++p) {
    double xp = tk.x0, vp = tk.v0;
    double xm = tk.x0, vm = tk.v0;
    for (int s = 0; s < tk.n_steps; ++s) {
      const double z1 = rng.gaussian();
      const double zv = tk.rho * z1 + tk.rho_c * rng.gaussian();
      advance(tk, xp, vp, z1, zv);
      advance(tk, xm, vm, -z1, -zv);
      if (!(std::isfinite(xp) && std::isfinite(vp)))
        throw_sim_diag(tk, chunk, s, xp, vp);
      if (!(std::isfinite(xm) && std::isfinite(vm)))
        throw_sim_diag(tk, chunk, s, xm, vm);
    }
    const double pay = 0.5 * (std::max(std::exp(xp) - tk.strike, 0.0) +
                              std::max(std::exp(xm) - tk.strike, 0.0));
    sum += pay;
    sumsq += pay * pay;
  }
  sum_out = sum;
  sumsq_out = sumsq;
}

McPrice simulate_impl(const SdeSpec& spec, const SkInputs& x, bool threaded) {
  spec.validate();
  x.validate();

  SimTask tk;
  tk.x0 = std::log(x.S);
  tk.rate = x.r;
  tk.strike = x.K;
  tk.n_steps = std::max(
      1, static_cast<int>(std::ceil(spec.steps_per_year * x.tau - 1e-9)));
  tk.dt = x.tau / tk.n_steps;
  tk.sdt = std::sqrt(tk.dt);
  tk.kappa = spec.kappa;
  tk.v_theta = spec.v_theta;
  tk.sigma_v = spec.sigma_v;
  tk.gamma = spec.gamma_v;
  tk.v0 = spec.v0;
  tk.rho = spec.rho;
  tk.rho_c = std::sqrt(1.0 - spec.rho * spec.rho);
  tk.seed = spec.seed;

  const std::size_t n_pairs = static_cast<std::size_t>(spec.paths) / 2;
  const std::size_t n_chunks = (n_pairs + kPairChunk - 1) / kPairChunk;
  std::vector<double> csum(n_chunks, 0.0), csq(n_chunks, 0.0);

  std::atomic<bool> failed{false};
  std::exception_ptr err;
#pragma omp parallel for schedule(static) if (threaded)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(n_chunks); ++c) {
    if (failed.load(std::memory_order_relaxed)) continue;
    try {
      const std::size_t lo = static_cast<std::size_t>(c) * kPairChunk;
      const std::size_t pairs = std::min(kPairChunk, n_pairs - lo);
      run_chunk(tk, static_cast<std::size_t>(c), pairs, csum[c], csq[c]);
    } catch (...) {
#pragma omp critical(skinn_sim_err)
      {
        if (!err) err = std::current_exception();
      }
      failed.store(true, std::memory_order_relaxed);
    }
  }
  if (err) std::rethrow_exception(err);

  // fixed-order combine, so thread count never changes the result
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    sum += csum[c];
    sumsq += csq[c];
  }
  const double n = static_cast<double>(n_pairs);
  const double mean = sum / n;
  double var = 0.0;
  if (n_pairs > 1) var = std::max(0.0, (sumsq - n * mean * mean) / (n - 1.0));
  const double disc = std::exp(-x.r * x.tau);

  McPrice out{disc * mean, disc * std::sqrt(var / n)};
  if (!(std::isfinite(out.price) && std::isfinite(out.std_err)))
    throw SurrogateError("simulate_price: estimate overflowed; payoffs too large");
  return out;
}

}  // namespace

McPrice simulate_price(const SdeSpec& spec, const SkInputs& x) {
  return simulate_impl(spec, x, true);
}

McPrice simulate_price_serial(const SdeSpec& spec, const SkInputs& x) {
  return simulate_impl(spec, x, false);
}

std::vector<std::string> surrogate_columns(SdeModel model) {
  std::vector<std::string> c{"m",  "tau",     "r",   "v_theta",
                             "v0", "sigma_v", "rho", "kappa"};
  if (model == SdeModel::Nasv) c.push_back("gamma_v");
  return c;
}

Bounds default_surrogate_bounds(SdeModel model) {
  Bounds b{{0.5, 1.5},      // m
           {7.0 / 365.0, 1.0},
           {0.0, 0.08},
           {0.01, 0.25},    // v_theta
           {0.01, 0.25},    // v0
           {0.05, 1.0},     // sigma_v
           {-0.95, 0.0},    // rho
           {0.5, 5.0}};     // kappa
  if (model == SdeModel::Nasv) b.push_back({0.3, 0.9});
  return b;
}

SurrogateDataset build_surrogate_dataset(SdeModel model, std::size_t n,
                                         const Bounds& bounds,
                                         std::uint64_t seed,
                                         const McConfig& mc) {
  const auto cols = surrogate_columns(model);
  if (bounds.size() != cols.size())
    throw SurrogateError("build_surrogate_dataset: expected " +
                         std::to_string(cols.size()) + " bounds, got " +
                         std::to_string(bounds.size()));
  for (const auto& [lo, hi] : bounds)
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi))
      throw SurrogateError("build_surrogate_dataset: bad sampling bound");
  if (mc.paths < 2 || mc.paths % 2 != 0 || mc.steps_per_year < 1)
    throw SurrogateError("build_surrogate_dataset: bad Monte Carlo config");

  SurrogateDataset d;
  d.model = model;
  d.n_sk = 3;
  d.columns = cols;
  d.bounds = bounds;
  d.inputs.resize(n * cols.size());
  d.prices.resize(n);

  std::atomic<bool> failed{false};
  std::exception_ptr err;
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    if (failed.load(std::memory_order_relaxed)) continue;
    try {
      double* row = d.inputs.data() + static_cast<std::size_t>(i) * cols.size();
      Rng crng(seed, Stream::Collocation, static_cast<std::uint64_t>(i));
      for (std::size_t k = 0; k < cols.size(); ++k)
        row[k] = crng.uniform(bounds[k].first, bounds[k].second);

      SdeSpec s;
      s.model = model;
      s.v_theta = row[3];
      s.v0 = row[4];
      s.sigma_v = row[5];
      s.rho = row[6];
      s.kappa = row[7];
      s.gamma_v = model == SdeModel::Nasv ? row[8] : 0.5;
      s.steps_per_year = mc.steps_per_year;
      s.paths = mc.paths;
      s.seed = split_seed(seed, Stream::Simulation, static_cast<std::uint64_t>(i));

      SkInputs q = SkInputs::make(kSpotRef, kSpotRef * row[0], row[2], row[1]);
      // rows run in parallel already; keep the inner simulator serial
      d.prices[i] = simulate_impl(s, q, false).price / q.K;
    } catch (...) {
#pragma omp critical(skinn_dataset_err)
      {
        if (!err) err = std::current_exception();
      }
      failed.store(true, std::memory_order_relaxed);
    }
  }
  if (err) std::rethrow_exception(err);
  return d;
}

void write_surrogate_csv(std::ostream& os, const SurrogateDataset& d) {
  if (!d.bounds.empty()) {
    os << "# bounds";
    for (const auto& [lo, hi] : d.bounds) os << ' ' << g17(lo) << ':' << g17(hi);
    os << '\n';
  }
  for (std::size_t k = 0; k < d.columns.size(); ++k) os << d.columns[k] << ',';
  os << "price\n";
  for (std::size_t i = 0; i < d.n_rows(); ++i) {
    const double* row = d.row(i);
    for (std::size_t k = 0; k < d.n_cols(); ++k) os << g17(row[k]) << ',';
    os << g17(d.prices[i]) << '\n';
  }
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string tok;
  std::istringstream is(line);
  while (std::getline(is, tok, ',')) out.push_back(tok);
  return out;
}

}  // namespace

SurrogateDataset read_surrogate_csv(std::istream& is) {
  SurrogateDataset d;
  std::string line;
  bool have_header = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream cs(line);
      std::string hash, key;
      cs >> hash >> key;
      if (key == "bounds") {
        std::string tok;
        while (cs >> tok) {
          auto colon = tok.find(':');
          if (colon == std::string::npos)
            throw SurrogateError("read_surrogate_csv: bad bounds entry: " + tok);
          d.bounds.emplace_back(std::stod(tok.substr(0, colon)),
                                std::stod(tok.substr(colon + 1)));
        }
      }
      continue;
    }
    have_header = true;
    break;
  }
  if (!have_header) throw SurrogateError("read_surrogate_csv: missing header");

  auto names = split_csv(line);
  if (names.size() < 2 || names.back() != "price")
    throw SurrogateError("read_surrogate_csv: last header column must be price");
  names.pop_back();
  d.columns = names;
  d.model = d.columns == surrogate_columns(SdeModel::Nasv) ? SdeModel::Nasv
                                                           : SdeModel::Hsv;
  if (!d.bounds.empty() && d.bounds.size() != d.columns.size())
    throw SurrogateError("read_surrogate_csv: bounds/column count mismatch");

  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() != d.columns.size() + 1)
      throw SurrogateError("read_surrogate_csv: row has " +
                           std::to_string(cells.size()) + " cells, expected " +
                           std::to_string(d.columns.size() + 1));
    for (std::size_t k = 0; k < d.columns.size(); ++k)
      d.inputs.push_back(std::stod(cells[k]));
    d.prices.push_back(std::stod(cells.back()));
  }
  return d;
}

namespace {

constexpr std::size_t kBatch = 256;

void shuffle_order(std::vector<std::size_t>& order, std::uint64_t seed, int epoch) {
  Rng rng(seed, Stream::Shuffle, static_cast<std::uint64_t>(epoch));
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    std::size_t j = rng.below(i + 1);
    std::swap(order[i], order[j]);
  }
}

}  // namespace

FrozenSurrogate train_surrogate(const SurrogateDataset& d, const MlpConfig& cfg,
                                int epochs, double lr) {
  if (d.n_rows() == 0)
    throw SurrogateError("train_surrogate: dataset is empty");
  if (static_cast<std::size_t>(cfg.input_dim) != d.n_cols())
    throw SurrogateError("train_surrogate: config expects " +
                         std::to_string(cfg.input_dim) +
                         " inputs, dataset has " + std::to_string(d.n_cols()));
  if (d.n_sk > d.n_cols())
    throw SurrogateError("train_surrogate: n_sk exceeds the column count");
  if (epochs < 1 || !(lr > 0.0))
    throw SurrogateError("train_surrogate: bad epochs or learning rate");

  MlpParams net = init_mlp(cfg);
  Tape t;
  MlpOnTape mt = lift_mlp(t, net);
  const std::size_t mark = t.mark();

  Adam opt(lr);
  std::vector<double> g(net.flat.size());
  std::vector<std::size_t> order(d.n_rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Index> sq_ids;
  sq_ids.reserve(kBatch);

  const std::size_t n = d.n_rows();
  for (int e = 0; e < epochs; ++e) {
    shuffle_order(order, cfg.seed, e);
    for (std::size_t b0 = 0; b0 < n; b0 += kBatch) {
      const std::size_t bn = std::min(kBatch, n - b0);
      t.rewind(mark);
      sq_ids.clear();
      try {
        refresh_mlp(mt);
        for (std::size_t k = 0; k < bn; ++k) {
          const std::size_t i = order[b0 + k];
          Var res = mlp_forward(mt, d.row(i)) - d.prices[i];
          sq_ids.push_back((res * res).index());
        }
        Var loss =
            t.emit_sum_list(sq_ids.data(), static_cast<Index>(bn)) * (1.0 / bn);
        t.grad_block(loss, mt.p0, net.flat.size(), g.data());
      } catch (const AutodiffError& ex) {
        throw SurrogateError("train_surrogate: diverged at epoch " +
                             std::to_string(e) + ": " + ex.what());
      }
      opt.step(net.flat, g);
    }
  }

  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double res = mlp_value(net, d.row(i)) - d.prices[i];
    sse += res * res;
  }

  FrozenSurrogate out;
  out.net = std::move(net);
  out.n_sk = d.n_sk;
  out.n_phi = d.n_cols() - d.n_sk;
  out.bounds = d.bounds;
  out.final_rmse = std::sqrt(sse / n);
  return out;
}

void write_surrogate(std::ostream& os, const FrozenSurrogate& f) {
  os << "surrogate v1 sk=" << f.n_sk << " phi=" << f.n_phi
     << " rmse=" << g17(f.final_rmse) << " bounds=";
  if (f.bounds.empty()) {
    os << "none";
  } else {
    for (std::size_t k = 0; k < f.bounds.size(); ++k) {
      if (k) os << ',';
      os << g17(f.bounds[k].first) << ':' << g17(f.bounds[k].second);
    }
  }
  os << '\n';
  write_mlp(os, f.net);
}

FrozenSurrogate read_surrogate(std::istream& is) {
  std::string line;
  if (!std::getline(is, line))
    throw SurrogateError("read_surrogate: missing header");
  std::istringstream hs(line);
  std::string magic, ver, sk_kv, phi_kv, rmse_kv, bounds_kv;
  hs >> magic >> ver >> sk_kv >> phi_kv >> rmse_kv >> bounds_kv;
  if (magic != "surrogate" || ver != "v1" || sk_kv.rfind("sk=", 0) != 0 ||
      phi_kv.rfind("phi=", 0) != 0 || rmse_kv.rfind("rmse=", 0) != 0 ||
      bounds_kv.rfind("bounds=", 0) != 0)
    throw SurrogateError("read_surrogate: bad header: " + line);

  FrozenSurrogate f;
  f.n_sk = std::stoul(sk_kv.substr(3));
  f.n_phi = std::stoul(phi_kv.substr(4));
  f.final_rmse = std::stod(rmse_kv.substr(5));
  const std::string bs = bounds_kv.substr(7);
  if (bs != "none") {
    std::istringstream bss(bs);
    std::string tok;
    while (std::getline(bss, tok, ',')) {
      auto colon = tok.find(':');
      if (colon == std::string::npos)
        throw SurrogateError("read_surrogate: bad bounds entry: " + tok);
      f.bounds.emplace_back(std::stod(tok.substr(0, colon)),
                            std::stod(tok.substr(colon + 1)));
    }
  }
  f.net = read_mlp(is);
  if (static_cast<std::size_t>(f.net.dims.front()) != f.n_sk + f.n_phi)
    throw SurrogateError("read_surrogate: slot layout does not match net input");
  return f;
}

AeGrid make_ae_grid() {
  AeGrid g;
  g.m.resize(20);
  for (int i = 0; i < 20; ++i) g.m[i] = 0.7 + 0.6 * i / 19.0;
  g.tau.resize(10);
  for (int h = 0; h < 10; ++h) g.tau[h] = 0.1 + 0.9 * h / 9.0;
  return g;
}

std::pair<FrozenSurrogate, FrozenSurrogate> train_autoencoder(
    const std::vector<std::vector<double>>& surfaces, int latent_dim,
    const MlpConfig& cfg, int epochs, double lr) {
  if (surfaces.empty())
    throw SurrogateError("train_autoencoder: no surfaces");
  for (std::size_t i = 0; i < surfaces.size(); ++i)
    if (surfaces[i].size() != kSurfaceSize)
      throw SurrogateError("train_autoencoder: surface " + std::to_string(i) +
                           " has " + std::to_string(surfaces[i].size()) +
                           " points, expected " + std::to_string(kSurfaceSize));
  if (latent_dim < 1 || static_cast<std::size_t>(latent_dim) > kSurfaceSize)
    throw SurrogateError("train_autoencoder: bad latent dimension");
  if (epochs < 1 || !(lr > 0.0))
    throw SurrogateError("train_autoencoder: bad epochs or learning rate");

  std::vector<int> enc_dims{static_cast<int>(kSurfaceSize)};
  for (int l = 0; l < cfg.hidden_layers; ++l) enc_dims.push_back(cfg.hidden_width);
  enc_dims.push_back(latent_dim);
  std::vector<int> dec_dims(enc_dims.rbegin(), enc_dims.rend());

  MlpParams enc = init_net(enc_dims, cfg.activation, cfg.seed);
  MlpParams dec = init_net(dec_dims, cfg.activation,
                           split_seed(cfg.seed, Stream::Generic, 1));
  const std::size_t ne = enc.flat.size(), nd = dec.flat.size();

  Tape t;
  // adjacent leaf blocks, so one grad_block sweep covers both nets
  MlpOnTape me = lift_mlp(t, enc);
  MlpOnTape md = lift_mlp(t, dec);
  const std::size_t mark = t.mark();

  Adam opt(lr);
  std::vector<double> joint(ne + nd), g(ne + nd);
  std::vector<std::size_t> order(surfaces.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Index> sq_ids;

  constexpr std::size_t kAeBatch = 32;
  const std::size_t n = surfaces.size();
  for (int e = 0; e < epochs; ++e) {
    shuffle_order(order, cfg.seed, e);
    for (std::size_t b0 = 0; b0 < n; b0 += kAeBatch) {
      const std::size_t bn = std::min(kAeBatch, n - b0);
      t.rewind(mark);
      sq_ids.clear();
      try {
        refresh_mlp(me);
        refresh_mlp(md);
        for (std::size_t k = 0; k < bn; ++k) {
          const std::vector<double>& s = surfaces[order[b0 + k]];
          std::vector<Var> z = net_forward(me, s.data());
          std::vector<Var> y = net_forward(md, z);
          for (std::size_t j = 0; j < kSurfaceSize; ++j) {
            Var res = y[j] - s[j];
            sq_ids.push_back((res * res).index());
          }
        }
        Var loss = t.emit_sum_list(sq_ids.data(),
                                   static_cast<Index>(sq_ids.size())) *
                   (1.0 / (bn * kSurfaceSize));
        t.grad_block(loss, me.p0, ne + nd, g.data());
      } catch (const AutodiffError& ex) {
        throw SurrogateError("train_autoencoder: diverged at epoch " +
                             std::to_string(e) + ": " + ex.what());
      }
      std::copy(enc.flat.begin(), enc.flat.end(), joint.begin());
      std::copy(dec.flat.begin(), dec.flat.end(), joint.begin() + ne);
      opt.step(joint, g);
      std::copy(joint.begin(), joint.begin() + ne, enc.flat.begin());
      std::copy(joint.begin() + ne, joint.end(), dec.flat.begin());
    }
  }

  double sse = 0.0;
  std::vector<double> z(latent_dim), y(kSurfaceSize);
  for (const auto& s : surfaces) {
    net_value(enc, s.data(), z.data());
    net_value(dec, z.data(), y.data());
    for (std::size_t j = 0; j < kSurfaceSize; ++j) {
      const double res = y[j] - s[j];
      sse += res * res;
    }
  }
  const double rmse = std::sqrt(sse / (n * kSurfaceSize));

  FrozenSurrogate fe;
  fe.net = std::move(enc);
  fe.n_sk = kSurfaceSize;
  fe.n_phi = 0;
  fe.final_rmse = rmse;

  FrozenSurrogate fd;
  fd.net = std::move(dec);
  fd.n_sk = 0;
  fd.n_phi = static_cast<std::size_t>(latent_dim);
  fd.final_rmse = rmse;
  return {std::move(fe), std::move(fd)};
}

namespace {

// Cell index and barycentric weight along one grid axis. The weight is left
// unclamped, so queries beyond the ends extrapolate along the edge cell.
std::pair<std::size_t, double> locate(const std::vector<double>& g, double v) {
  std::size_t i = static_cast<std::size_t>(
      std::upper_bound(g.begin(), g.end(), v) - g.begin());
  if (i > 0) --i;
  if (i >= g.size() - 1) i = g.size() - 2;
  return {i, (v - g[i]) / (g[i + 1] - g[i])};
}

}  // namespace

SurrogateSkr::SurrogateSkr(FrozenSurrogate frozen, Repr repr)
    : frozen_(std::move(frozen)), repr_(repr), grid_(make_ae_grid()) {
  if (frozen_.net.dims.size() < 2)
    throw SurrogateError("surrogate_as_skr: frozen net has no layers");
  const auto in_dim = static_cast<std::size_t>(frozen_.net.dims.front());
  const auto out_dim = static_cast<std::size_t>(frozen_.net.dims.back());
  switch (repr_) {
    case Repr::DsnnHsv:
    case Repr::DsnnNasv:
      if (frozen_.n_phi != repr_dim(repr_))
        throw SurrogateError("surrogate_as_skr: net exposes " +
                             std::to_string(frozen_.n_phi) +
                             " latent slots, " + repr_name(repr_) + " needs " +
                             std::to_string(repr_dim(repr_)));
      if (frozen_.n_sk != 3)
        throw SurrogateError(
            "surrogate_as_skr: net needs the (m, tau, r) leading inputs");
      if (frozen_.n_sk + frozen_.n_phi != in_dim)
        throw SurrogateError(
            "surrogate_as_skr: slot layout does not match net input width");
      if (out_dim != 1)
        throw SurrogateError("surrogate_as_skr: net must be scalar-valued");
      break;
    case Repr::AeBsm:
      if (frozen_.n_sk != 0 || frozen_.n_phi != repr_dim(repr_))
        throw SurrogateError("surrogate_as_skr: decoder must expose exactly " +
                             std::to_string(repr_dim(repr_)) + " latent slots");
      if (in_dim != frozen_.n_phi)
        throw SurrogateError(
            "surrogate_as_skr: slot layout does not match net input width");
      if (out_dim != kSurfaceSize)
        throw SurrogateError("surrogate_as_skr: decoder must produce a " +
                             std::to_string(kSurfaceSize) + "-point surface");
      break;
    default:
      throw SurrogateError(std::string("surrogate_as_skr: ") +
                           repr_name(repr_) + " has no surrogate backing");
  }
}

void SurrogateSkr::bind(Tape& t) const {
  // the id check catches a fresh tape recycled onto a previous tape's
  // address; the size check catches a rewind below the lifted block
  if (tape_ == &t && tape_id_ == t.id() &&
      t.size() >= p0_ + frozen_.net.flat.size())
    return;
  tape_ = &t;
  tape_id_ = t.id();
  p0_ = lift_mlp(t, frozen_.net).p0;
}

MlpOnTape SurrogateSkr::on_tape(Tape& t) const {
  bind(t);
  MlpOnTape m;
  m.tape = &t;
  m.params = &frozen_.net;
  m.p0 = p0_;
  return m;
}

Var SurrogateSkr::price(Tape& t, const SkInputs& x,
                        const std::vector<Var>& phi) const {
  if (phi.size() != frozen_.n_phi)
    throw SurrogateError("surrogate price: got " + std::to_string(phi.size()) +
                         " latent slots, net expects " +
                         std::to_string(frozen_.n_phi));
  if (repr_ == Repr::AeBsm) return decoder_price(t, x, phi);

  MlpOnTape m = on_tape(t);
  std::vector<Var> in;
  in.reserve(3 + phi.size());
  in.push_back(t.lift(x.m));
  in.push_back(t.lift(x.tau));
  in.push_back(t.lift(x.r));
  in.insert(in.end(), phi.begin(), phi.end());
  return mlp_forward(m, in) * x.K;
}

Var SurrogateSkr::decoder_price(Tape& t, const SkInputs& x,
                                const std::vector<Var>& phi) const {
  const auto [i, wm] = locate(grid_.m, x.m);
  const auto [h, wt] = locate(grid_.tau, x.tau);
  const Index c00 = static_cast<Index>(h * grid_.m.size() + i);
  const Index c10 = static_cast<Index>((h + 1) * grid_.m.size() + i);
  const std::vector<Index> rows{c00, c00 + 1, c10, c10 + 1};

  MlpOnTape m = on_tape(t);
  std::vector<Var> z = net_forward_rows(m, phi, rows);
  Var surf = (z[0] * ((1.0 - wt) * (1.0 - wm)) + z[1] * ((1.0 - wt) * wm)) +
             (z[2] * (wt * (1.0 - wm)) + z[3] * (wt * wm));
  return surf * x.K;
}

SurrogateSkr surrogate_as_skr(FrozenSurrogate frozen, Repr repr) {
  return SurrogateSkr(std::move(frozen), repr);
}

}  // namespace skinn
