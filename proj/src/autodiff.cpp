#include "skinn/autodiff.hpp"

#include <algorithm>

namespace skinn {

namespace {
bool is_range_op(Op o) {
  return o == Op::Sum || o == Op::SumList || o == Op::Dot ||
         o == Op::DotConst || o == Op::WSumConst;
}
}  // namespace

void Tape::rewind(std::size_t m) {
  if (m > op_.size()) throw AutodiffError("rewind: mark beyond tape end");
  // Dropped range nodes own the tail of meta_ and the pools; truncate to the
  // first dropped entry of each kind.
  std::size_t meta_keep = meta_.size();
  std::size_t cpool_keep = cpool_.size();
  std::size_t ipool_keep = ipool_.size();
  bool meta_found = false, cpool_found = false, ipool_found = false;
  for (std::size_t i = m; i < op_.size(); ++i) {
    Op o = op_[i];
    if (!is_range_op(o)) continue;
    const RangeMeta& rm = meta_[a_[i]];
    if (!meta_found) {
      meta_keep = a_[i];
      meta_found = true;
    }
    if (!cpool_found && (o == Op::DotConst || o == Op::WSumConst)) {
      cpool_keep = (o == Op::DotConst) ? rm.x0 : rm.w0;
      cpool_found = true;
    }
    if (!ipool_found && o == Op::SumList) {
      ipool_keep = rm.x0;
      ipool_found = true;
    }
    if (meta_found && cpool_found && ipool_found) break;
  }
  meta_.resize(meta_keep);
  cpool_.resize(cpool_keep);
  ipool_.resize(ipool_keep);
  op_.resize(m);
  val_.resize(m);
  a_.resize(m);
  b_.resize(m);
  pa_.resize(m);
  pb_.resize(m);
}

Index Tape::lift_block(const double* xs, std::size_t n) {
  Index first = static_cast<Index>(op_.size());
  for (std::size_t k = 0; k < n; ++k) lift(xs[k]);
  return first;
}

Var Tape::emit_dot(Index bias, Index w0, Index x0, Index n) {
  double v = (bias == kNoNode) ? 0.0 : val_[bias];
  const double* w = val_.data() + w0;
  const double* x = val_.data() + x0;
  for (Index k = 0; k < n; ++k) v += w[k] * x[k];
  Index mi = static_cast<Index>(meta_.size());
  meta_.push_back(RangeMeta{bias, w0, x0, n});
  return push(Op::Dot, v, mi, kNoNode, 0.0, 0.0);
}

Var Tape::emit_dot_const(Index bias, Index w0, const double* x, Index n) {
  double v = (bias == kNoNode) ? 0.0 : val_[bias];
  const double* w = val_.data() + w0;
  for (Index k = 0; k < n; ++k) v += w[k] * x[k];
  Index off = static_cast<Index>(cpool_.size());
  cpool_.insert(cpool_.end(), x, x + n);
  Index mi = static_cast<Index>(meta_.size());
  meta_.push_back(RangeMeta{bias, w0, off, n});
  return push(Op::DotConst, v, mi, kNoNode, 0.0, 0.0);
}

Var Tape::emit_weighted_sum(const double* w, Index x0, Index n) {
  const double* x = val_.data() + x0;
  double v = 0.0;
  for (Index k = 0; k < n; ++k) v += w[k] * x[k];
  Index off = static_cast<Index>(cpool_.size());
  cpool_.insert(cpool_.end(), w, w + n);
  Index mi = static_cast<Index>(meta_.size());
  meta_.push_back(RangeMeta{kNoNode, off, x0, n});
  return push(Op::WSumConst, v, mi, kNoNode, 0.0, 0.0);
}

Var Tape::emit_sum(Index x0, Index n) {
  const double* x = val_.data() + x0;
  double v = 0.0;
  for (Index k = 0; k < n; ++k) v += x[k];
  Index mi = static_cast<Index>(meta_.size());
  meta_.push_back(RangeMeta{kNoNode, kNoNode, x0, n});
  return push(Op::Sum, v, mi, kNoNode, 0.0, 0.0);
}

Var Tape::emit_sum_list(const Index* ids, Index n) {
  double v = 0.0;
  for (Index k = 0; k < n; ++k) v += val_[ids[k]];
  Index off = static_cast<Index>(ipool_.size());
  ipool_.insert(ipool_.end(), ids, ids + n);
  Index mi = static_cast<Index>(meta_.size());
  meta_.push_back(RangeMeta{kNoNode, kNoNode, off, n});
  return push(Op::SumList, v, mi, kNoNode, 0.0, 0.0);
}

void Tape::backward(const Var& out) {
  if (out.tape() != this) throw AutodiffError("backward: output from another tape");
  adj_.assign(op_.size(), 0.0);
  adj_[out.index()] = 1.0;
  for (std::size_t i = op_.size(); i-- > 0;) {
    double a = adj_[i];
    if (a == 0.0) continue;
    switch (op_[i]) {
      case Op::Leaf:
        break;
      case Op::Add:
        adj_[a_[i]] += a;
        adj_[b_[i]] += a;
        break;
      case Op::Sub:
        adj_[a_[i]] += a;
        adj_[b_[i]] -= a;
        break;
      case Op::Sum: {
        const RangeMeta& m = meta_[a_[i]];
        double* dst = adj_.data() + m.x0;
        for (Index k = 0; k < m.n; ++k) dst[k] += a;
        break;
      }
      case Op::SumList: {
        const RangeMeta& m = meta_[a_[i]];
        const Index* ids = ipool_.data() + m.x0;
        for (Index k = 0; k < m.n; ++k) adj_[ids[k]] += a;
        break;
      }
      case Op::Dot: {
        const RangeMeta& m = meta_[a_[i]];
        if (m.bias != kNoNode) adj_[m.bias] += a;
        const double* w = val_.data() + m.w0;
        const double* x = val_.data() + m.x0;
        double* aw = adj_.data() + m.w0;
        double* ax = adj_.data() + m.x0;
        for (Index k = 0; k < m.n; ++k) {
          aw[k] += x[k] * a;
          ax[k] += w[k] * a;
        }
        break;
      }
      case Op::DotConst: {
        const RangeMeta& m = meta_[a_[i]];
        if (m.bias != kNoNode) adj_[m.bias] += a;
        const double* x = cpool_.data() + m.x0;
        double* aw = adj_.data() + m.w0;
        for (Index k = 0; k < m.n; ++k) aw[k] += x[k] * a;
        break;
      }
      case Op::WSumConst: {
        const RangeMeta& m = meta_[a_[i]];
        const double* w = cpool_.data() + m.w0;
        double* ax = adj_.data() + m.x0;
        for (Index k = 0; k < m.n; ++k) ax[k] += w[k] * a;
        break;
      }
      default:
        // unary and binary ops with recorded local partials
        adj_[a_[i]] += pa_[i] * a;
        if (b_[i] != kNoNode) adj_[b_[i]] += pb_[i] * a;
        break;
    }
  }
}

std::vector<double> Tape::grad(const Var& out, const std::vector<Var>& wrt) {
  for (const Var& v : wrt)
    if (v.tape() != this)
      throw AutodiffError("grad: wrt variable from another tape");
  backward(out);
  std::vector<double> g(wrt.size());
  for (std::size_t k = 0; k < wrt.size(); ++k) g[k] = adj_[wrt[k].index()];
  return g;
}

void Tape::grad_block(const Var& out, Index first, std::size_t n, double* out_grad) {
  backward(out);
  std::copy(adj_.begin() + first, adj_.begin() + first + n, out_grad);
}

std::string Tape::op_name(Op o) {
  switch (o) {
    case Op::Leaf: return "lift";
    case Op::Add: case Op::AddC: return "add";
    case Op::Sub: case Op::SubC: return "sub";
    case Op::Mul: case Op::MulC: return "mul";
    case Op::Div: case Op::RdivC: return "div";
    case Op::Neg: return "neg";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sqrt: return "sqrt";
    case Op::PowC: return "pow";
    case Op::Max0: return "max0";
    case Op::Silu: return "silu";
    case Op::Tanh: return "tanh";
    case Op::Softplus: return "softplus";
    case Op::Sigmoid: return "sigmoid";
    case Op::NormCdf: return "norm_cdf";
    case Op::NormPdf: return "norm_pdf";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Atan2: return "atan2";
    case Op::Sum: case Op::SumList: return "sum";
    case Op::Dot: case Op::DotConst: case Op::WSumConst: return "dot";
  }
  return "op";
}

}  // namespace skinn
