#include "skinn/mlp.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "skinn/rng.hpp"

namespace skinn {

const char* activation_name(Activation a) {
  return a == Activation::Relu ? "relu" : "silu";
}

Activation activation_from_name(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "silu") return Activation::Silu;
  throw std::runtime_error("unknown activation: " + s);
}

int MlpParams::param_count(const std::vector<int>& dims) {
  int n = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l)
    n += dims[l] * dims[l + 1] + dims[l + 1];
  return n;
}

MlpParams init_net(std::vector<int> dims, Activation act, std::uint64_t seed) {
  if (dims.size() < 2) throw std::runtime_error("network needs at least two layers");
  for (int d : dims)
    if (d < 1) throw std::runtime_error("network layer dimensions must be positive");

  MlpParams p;
  p.dims = std::move(dims);
  p.activation = act;
  p.flat.resize(MlpParams::param_count(p.dims));

  Rng rng(seed, Stream::ParamInit);
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < p.dims.size(); ++l) {
    int fan_in = p.dims[l], fan_out = p.dims[l + 1];
    double bound = std::sqrt(6.0 / fan_in);
    for (int k = 0; k < fan_in * fan_out; ++k)
      p.flat[off++] = rng.uniform(-bound, bound);
    for (int k = 0; k < fan_out; ++k) p.flat[off++] = 0.0;
  }
  return p;
}

MlpParams init_mlp(const MlpConfig& cfg) {
  if (cfg.input_dim < 1 || cfg.hidden_layers < 1 || cfg.hidden_width < 1)
    throw std::runtime_error("mlp config dimensions must be positive");
  std::vector<int> dims;
  dims.push_back(cfg.input_dim);
  for (int l = 0; l < cfg.hidden_layers; ++l) dims.push_back(cfg.hidden_width);
  dims.push_back(1);
  return init_net(std::move(dims), cfg.activation, cfg.seed);
}

MlpOnTape lift_mlp(Tape& t, const MlpParams& p) {
  MlpOnTape m;
  m.tape = &t;
  m.params = &p;
  m.p0 = t.lift_block(p.flat.data(), p.flat.size());
  return m;
}

void refresh_mlp(const MlpOnTape& m) {
  const auto& flat = m.params->flat;
  for (std::size_t k = 0; k < flat.size(); ++k)
    m.tape->set_leaf(m.p0 + static_cast<Index>(k), flat[k]);
}

namespace {

Var activate(Tape& t, Var v, Activation a) {
  return a == Activation::Relu ? max0(v) : silu(v);
}

// Emits one hidden/output stack. `x0` names a contiguous on-tape input range
// when xc is null, otherwise xc points at the immediate input values. A
// non-null `rows` restricts the output layer to those unit indices.
std::vector<Var> forward_impl(const MlpOnTape& m, const double* xc, Index x0,
                              const Index* rows = nullptr, Index n_rows = 0) {
  Tape& t = *m.tape;
  const MlpParams& p = *m.params;
  Index n_in = static_cast<Index>(p.dims.front());
  Index off = m.p0;

  Index cur0 = x0;
  Index cur_n = n_in;
  const double* cur_c = xc;

  for (std::size_t l = 0; l + 1 < p.dims.size(); ++l) {
    Index fan_in = static_cast<Index>(p.dims[l]);
    Index fan_out = static_cast<Index>(p.dims[l + 1]);
    Index w0 = off;
    Index b0 = off + fan_in * fan_out;
    off = b0 + fan_out;

    bool last = (l + 2 == p.dims.size());
    Index z0 = static_cast<Index>(t.size());
    if (last && rows != nullptr) {
      for (Index k = 0; k < n_rows; ++k) {
        Index row = w0 + rows[k] * fan_in;
        if (cur_c != nullptr)
          t.emit_dot_const(b0 + rows[k], row, cur_c, fan_in);
        else
          t.emit_dot(b0 + rows[k], row, cur0, fan_in);
      }
      cur0 = z0;
      cur_n = n_rows;
      break;
    }
    for (Index j = 0; j < fan_out; ++j) {
      Index row = w0 + j * fan_in;
      if (cur_c != nullptr)
        t.emit_dot_const(b0 + j, row, cur_c, fan_in);
      else
        t.emit_dot(b0 + j, row, cur0, fan_in);
    }

    if (last) {
      cur0 = z0;
      cur_n = fan_out;
      cur_c = nullptr;
      break;
    }
    Index h0 = static_cast<Index>(t.size());
    for (Index j = 0; j < fan_out; ++j)
      activate(t, t.node(z0 + j), p.activation);
    cur0 = h0;
    cur_n = fan_out;
    cur_c = nullptr;
  }

  std::vector<Var> out;
  out.reserve(cur_n);
  for (Index j = 0; j < cur_n; ++j) out.push_back(t.node(cur0 + j));
  return out;
}

// Var inputs may be scattered; relocate them into one contiguous block.
Index contiguous_inputs(Tape& t, const std::vector<Var>& x) {
  Index first = static_cast<Index>(t.size());
  bool already = true;
  for (std::size_t k = 0; k < x.size(); ++k)
    if (x[k].index() != x[0].index() + k) { already = false; break; }
  if (already && !x.empty()) return x[0].index();
  for (const Var& v : x) (void)(v * 1.0);
  return first;
}

}  // namespace

std::vector<Var> net_forward(const MlpOnTape& m, const double* x) {
  return forward_impl(m, x, 0);
}

std::vector<Var> net_forward(const MlpOnTape& m, const std::vector<Var>& x) {
  if (static_cast<int>(x.size()) != m.params->dims.front())
    throw std::runtime_error("mlp forward: input dimension mismatch");
  Index x0 = contiguous_inputs(*m.tape, x);
  return forward_impl(m, nullptr, x0);
}

std::vector<Var> net_forward_rows(const MlpOnTape& m, const std::vector<Var>& x,
                                  const std::vector<Index>& rows) {
  if (static_cast<int>(x.size()) != m.params->dims.front())
    throw std::runtime_error("mlp forward: input dimension mismatch");
  if (rows.empty()) throw std::runtime_error("mlp forward: no output rows selected");
  for (Index j : rows)
    if (j >= static_cast<Index>(m.params->dims.back()))
      throw std::runtime_error("mlp forward: output row out of range");
  Index x0 = contiguous_inputs(*m.tape, x);
  return forward_impl(m, nullptr, x0, rows.data(),
                      static_cast<Index>(rows.size()));
}

Var mlp_forward(const MlpOnTape& m, const double* x) {
  if (m.params->dims.back() != 1)
    throw std::runtime_error("mlp forward: network is not scalar-valued");
  return forward_impl(m, x, 0)[0];
}

Var mlp_forward(const MlpOnTape& m, const std::vector<Var>& x) {
  if (m.params->dims.back() != 1)
    throw std::runtime_error("mlp forward: network is not scalar-valued");
  return net_forward(m, x)[0];
}

void net_value(const MlpParams& p, const double* x, double* out) {
  std::vector<double> cur(x, x + p.dims.front());
  std::vector<double> nxt;
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < p.dims.size(); ++l) {
    int fan_in = p.dims[l], fan_out = p.dims[l + 1];
    const double* w = p.flat.data() + off;
    const double* b = p.flat.data() + off + static_cast<std::size_t>(fan_in) * fan_out;
    off += static_cast<std::size_t>(fan_in) * fan_out + fan_out;
    nxt.resize(fan_out);
    bool last = (l + 2 == p.dims.size());
    for (int j = 0; j < fan_out; ++j) {
      double v = b[j];
      const double* row = w + static_cast<std::size_t>(j) * fan_in;
      for (int k = 0; k < fan_in; ++k) v += row[k] * cur[k];
      if (!last) v = (p.activation == Activation::Relu) ? max0(v) : silu(v);
      nxt[j] = v;
    }
    cur.swap(nxt);
  }
  for (std::size_t j = 0; j < cur.size(); ++j) out[j] = cur[j];
}

double mlp_value(const MlpParams& p, const double* x) {
  if (p.dims.back() != 1)
    throw std::runtime_error("mlp value: network is not scalar-valued");
  double out;
  net_value(p, x, &out);
  return out;
}

std::vector<double> mlp_input_grad(const MlpParams& p, const double* x) {
  Tape t;
  std::vector<Var> xs;
  xs.reserve(p.dims.front());
  for (int k = 0; k < p.dims.front(); ++k) xs.push_back(t.lift(x[k]));
  MlpOnTape m = lift_mlp(t, p);
  Var y = mlp_forward(m, xs);
  return t.grad(y, xs);
}

void write_mlp(std::ostream& os, const MlpParams& p) {
  os << "mlp v1 dims=";
  for (std::size_t l = 0; l < p.dims.size(); ++l) {
    if (l) os << ',';
    os << p.dims[l];
  }
  os << " activation=" << activation_name(p.activation) << "\n";
  os.write(reinterpret_cast<const char*>(p.flat.data()),
           static_cast<std::streamsize>(p.flat.size() * sizeof(double)));
}

MlpParams read_mlp(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("mlp read: missing header");
  std::istringstream hs(line);
  std::string magic, ver, dims_kv, act_kv;
  hs >> magic >> ver >> dims_kv >> act_kv;
  if (magic != "mlp" || ver != "v1" || dims_kv.rfind("dims=", 0) != 0 ||
      act_kv.rfind("activation=", 0) != 0)
    throw std::runtime_error("mlp read: bad header: " + line);

  MlpParams p;
  std::istringstream ds(dims_kv.substr(5));
  std::string tok;
  while (std::getline(ds, tok, ',')) p.dims.push_back(std::stoi(tok));
  if (p.dims.size() < 2) throw std::runtime_error("mlp read: bad dims");
  p.activation = activation_from_name(act_kv.substr(11));

  p.flat.resize(MlpParams::param_count(p.dims));
  is.read(reinterpret_cast<char*>(p.flat.data()),
          static_cast<std::streamsize>(p.flat.size() * sizeof(double)));
  if (!is) throw std::runtime_error("mlp read: truncated parameter block");
  return p;
}

}  // namespace skinn
