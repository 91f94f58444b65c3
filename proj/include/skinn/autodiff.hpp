#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace skinn {

using Index = std::uint32_t;
inline constexpr Index kNoNode = static_cast<Index>(-1);

struct AutodiffError : std::runtime_error {
  explicit AutodiffError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class Op : std::uint8_t {
  Leaf,
  Add, Sub, Mul, Div,
  AddC, SubC,   // x + c, c - x
  MulC,         // x * c
  RdivC,        // c / x
  Neg,
  Exp, Log, Sqrt, PowC,
  Max0, Silu, Tanh, Softplus, Sigmoid,
  NormCdf, NormPdf,
  Sin, Cos, Atan2,
  Sum,          // contiguous range sum
  SumList,      // scattered sum
  Dot,          // bias + <w, x>, both on-tape ranges
  DotConst,     // bias + <w, c>, c from the constant pool
  WSumConst,    // <c, x>, constant weights, on-tape x range
};

class Tape;

/** Handle to one tape node: value plus position for the adjoint sweep. */
class Var {
 public:
  Var() = default;
  Var(Tape* tape, Index idx, double val) : tape_(tape), idx_(idx), val_(val) {}

  double value() const { return val_; }
  Index index() const { return idx_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  Index idx_ = 0;
  double val_ = 0.0;
};

/**
 * Append-only reverse-mode tape over scalars. Nodes are topologically ordered
 * by construction; the backward sweep is a single reverse pass. Networks and
 * pricing kernels that touch contiguous parameter blocks use the fused range
 * ops (Dot/DotConst/WSumConst) to keep node counts near the flop count.
 *
 * A mark()/rewind() pair lets a training loop keep the parameter leaves at the
 * bottom of the tape and rebuild only the expression graph each epoch.
 */
class Tape {
 public:
  Tape() = default;

  std::size_t size() const { return op_.size(); }
  std::size_t mark() const { return op_.size(); }

  // Process-unique identity. Lets caches distinguish a fresh tape that landed
  // at a recycled address from the one they were built against.
  std::uint64_t id() const { return id_; }

  void reserve(std::size_t nodes) {
    op_.reserve(nodes);
    val_.reserve(nodes);
    a_.reserve(nodes);
    b_.reserve(nodes);
    pa_.reserve(nodes);
    pb_.reserve(nodes);
  }

  void clear() {
    op_.clear(); val_.clear(); a_.clear(); b_.clear();
    pa_.clear(); pb_.clear(); adj_.clear();
    meta_.clear(); cpool_.clear(); ipool_.clear();
  }

  // Drops every node at or above m. Pool contents appended after m are dropped
  // alongside their owning nodes, so rewinding to a checkpoint is exact.
  void rewind(std::size_t m);

  Var lift(double x) {
    check_finite(x, "lift");
    return push(Op::Leaf, x, kNoNode, kNoNode, 0.0, 0.0);
  }

  // Contiguous block of leaves; returns the index of the first.
  Index lift_block(const double* xs, std::size_t n);

  // In-place update of a leaf created before the current checkpoint.
  void set_leaf(Index i, double x) {
    if (op_[i] != Op::Leaf) throw AutodiffError("set_leaf: node is not a leaf");
    check_finite(x, "set_leaf");
    val_[i] = x;
  }

  Var node(Index i) const { return Var(const_cast<Tape*>(this), i, val_[i]); }
  double value(Index i) const { return val_[i]; }

  // ---- adjoint sweep ----
  void backward(const Var& out);
  double adjoint(Index i) const { return adj_[i]; }
  double adjoint(const Var& v) const { return adj_[v.index()]; }

  // d(out)/d(wrt_k); variables not feeding out get exactly 0.
  std::vector<double> grad(const Var& out, const std::vector<Var>& wrt);

  // Fast gather for a contiguous leaf block (parameter vectors).
  void grad_block(const Var& out, Index first, std::size_t n, double* out_grad);

  // ---- emitters used by operator overloads and the fused kernels ----
  Var push(Op o, double v, Index a, Index b, double pa, double pb) {
    check_finite_op(v, o);
    Index i = static_cast<Index>(op_.size());
    op_.push_back(o);
    val_.push_back(v);
    a_.push_back(a);
    b_.push_back(b);
    pa_.push_back(pa);
    pb_.push_back(pb);
    return Var(this, i, v);
  }

  // bias (optional) + dot of two on-tape ranges of length n
  Var emit_dot(Index bias, Index w0, Index x0, Index n);
  // bias (optional) + dot of an on-tape range with an immediate vector
  Var emit_dot_const(Index bias, Index w0, const double* x, Index n);
  // dot of an immediate weight vector with an on-tape range
  Var emit_weighted_sum(const double* w, Index x0, Index n);
  Var emit_sum(Index x0, Index n);
  Var emit_sum_list(const Index* ids, Index n);

  void check_same(const Var& x, const Var& y) const {
    if (x.tape() != y.tape())
      throw AutodiffError("operands live on different tapes");
  }

 private:
  static void check_finite(double v, const char* who) {
    if (!std::isfinite(v))
      throw AutodiffError(std::string(who) + ": produced non-finite value");
  }
  void check_finite_op(double v, Op o) const {
    if (!std::isfinite(v)) throw AutodiffError(op_name(o) + ": produced non-finite value");
  }
  static std::string op_name(Op o);

  // fused range ops keep their operands here; x0 doubles as the cpool offset
  // for DotConst, the ipool offset for SumList
  struct RangeMeta {
    Index bias, w0, x0, n;
  };

  static std::uint64_t fresh_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
  }

  std::uint64_t id_ = fresh_id();
  std::vector<Op> op_;
  std::vector<double> val_;
  std::vector<Index> a_, b_;
  std::vector<double> pa_, pb_;
  std::vector<double> adj_;
  std::vector<RangeMeta> meta_;
  std::vector<double> cpool_;  // immediate vectors for DotConst / WSumConst
  std::vector<Index> ipool_;   // node id lists for SumList
};

// ---------------------------------------------------------------------------
// scalar helpers shared by double and Var code paths
// ---------------------------------------------------------------------------

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double max0(double x) { return x > 0.0 ? x : 0.0; }
inline double silu(double x) { return x * sigmoid(x); }

inline double softplus(double x) {
  if (x > 36.0) return x;
  if (x < -36.0) return std::exp(x);
  return std::log1p(std::exp(-std::fabs(x))) + max0(x);
}

inline constexpr double kInvSqrt2 = 0.70710678118654752440084436210485;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267793994605993438;

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }
inline double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

// ---------------------------------------------------------------------------
// Var arithmetic
// ---------------------------------------------------------------------------

inline Var operator+(const Var& x, const Var& y) {
  x.tape()->check_same(x, y);
  return x.tape()->push(Op::Add, x.value() + y.value(), x.index(), y.index(), 1.0, 1.0);
}
inline Var operator+(const Var& x, double c) {
  return x.tape()->push(Op::AddC, x.value() + c, x.index(), kNoNode, 1.0, 0.0);
}
inline Var operator+(double c, const Var& x) { return x + c; }

inline Var operator-(const Var& x, const Var& y) {
  x.tape()->check_same(x, y);
  return x.tape()->push(Op::Sub, x.value() - y.value(), x.index(), y.index(), 1.0, -1.0);
}
inline Var operator-(const Var& x, double c) { return x + (-c); }
inline Var operator-(double c, const Var& x) {
  return x.tape()->push(Op::SubC, c - x.value(), x.index(), kNoNode, -1.0, 0.0);
}
inline Var operator-(const Var& x) {
  return x.tape()->push(Op::Neg, -x.value(), x.index(), kNoNode, -1.0, 0.0);
}

inline Var operator*(const Var& x, const Var& y) {
  x.tape()->check_same(x, y);
  return x.tape()->push(Op::Mul, x.value() * y.value(), x.index(), y.index(),
                        y.value(), x.value());
}
inline Var operator*(const Var& x, double c) {
  return x.tape()->push(Op::MulC, x.value() * c, x.index(), kNoNode, c, 0.0);
}
inline Var operator*(double c, const Var& x) { return x * c; }

inline Var operator/(const Var& x, const Var& y) {
  x.tape()->check_same(x, y);
  double inv = 1.0 / y.value();
  double v = x.value() * inv;
  return x.tape()->push(Op::Div, v, x.index(), y.index(), inv, -v * inv);
}
inline Var operator/(const Var& x, double c) { return x * (1.0 / c); }
inline Var operator/(double c, const Var& x) {
  double inv = 1.0 / x.value();
  return x.tape()->push(Op::RdivC, c * inv, x.index(), kNoNode, -c * inv * inv, 0.0);
}

inline Var& operator+=(Var& x, const Var& y) { x = x + y; return x; }
inline Var& operator+=(Var& x, double c) { x = x + c; return x; }
inline Var& operator*=(Var& x, const Var& y) { x = x * y; return x; }
inline Var& operator*=(Var& x, double c) { x = x * c; return x; }
inline Var& operator-=(Var& x, const Var& y) { x = x - y; return x; }

inline Var exp(const Var& x) {
  double v = std::exp(x.value());
  return x.tape()->push(Op::Exp, v, x.index(), kNoNode, v, 0.0);
}
inline Var log(const Var& x) {
  if (!(x.value() > 0.0))
    throw AutodiffError("log: non-positive argument");
  return x.tape()->push(Op::Log, std::log(x.value()), x.index(), kNoNode,
                        1.0 / x.value(), 0.0);
}
inline Var sqrt(const Var& x) {
  if (!(x.value() > 0.0))
    throw AutodiffError("sqrt: non-positive argument");
  double v = std::sqrt(x.value());
  return x.tape()->push(Op::Sqrt, v, x.index(), kNoNode, 0.5 / v, 0.0);
}
inline Var pow(const Var& x, double c) {
  if (!(x.value() > 0.0))
    throw AutodiffError("pow: non-positive base");
  double v = std::pow(x.value(), c);
  return x.tape()->push(Op::PowC, v, x.index(), kNoNode, c * v / x.value(), 0.0);
}
inline Var pow(const Var& x, const Var& c) { return exp(c * log(x)); }

// subgradient at 0 is 0
inline Var max0(const Var& x) {
  double p = x.value() > 0.0 ? 1.0 : 0.0;
  return x.tape()->push(Op::Max0, max0(x.value()), x.index(), kNoNode, p, 0.0);
}
inline Var silu(const Var& x) {
  double s = sigmoid(x.value());
  return x.tape()->push(Op::Silu, x.value() * s, x.index(), kNoNode,
                        s * (1.0 + x.value() * (1.0 - s)), 0.0);
}
inline Var tanh(const Var& x) {
  double v = std::tanh(x.value());
  return x.tape()->push(Op::Tanh, v, x.index(), kNoNode, 1.0 - v * v, 0.0);
}
inline Var softplus(const Var& x) {
  return x.tape()->push(Op::Softplus, softplus(x.value()), x.index(), kNoNode,
                        sigmoid(x.value()), 0.0);
}

// local partial is the closed-form density, not a differentiated approximation
inline Var norm_cdf(const Var& x) {
  return x.tape()->push(Op::NormCdf, norm_cdf(x.value()), x.index(), kNoNode,
                        norm_pdf(x.value()), 0.0);
}
inline Var norm_pdf(const Var& x) {
  double v = norm_pdf(x.value());
  return x.tape()->push(Op::NormPdf, v, x.index(), kNoNode, -x.value() * v, 0.0);
}

inline Var sin(const Var& x) {
  return x.tape()->push(Op::Sin, std::sin(x.value()), x.index(), kNoNode,
                        std::cos(x.value()), 0.0);
}
inline Var cos(const Var& x) {
  return x.tape()->push(Op::Cos, std::cos(x.value()), x.index(), kNoNode,
                        -std::sin(x.value()), 0.0);
}
inline Var atan2(const Var& y, const Var& x) {
  y.tape()->check_same(y, x);
  double d = x.value() * x.value() + y.value() * y.value();
  if (d == 0.0) throw AutodiffError("atan2: zero argument");
  return y.tape()->push(Op::Atan2, std::atan2(y.value(), x.value()),
                        y.index(), x.index(), x.value() / d, -y.value() / d);
}

inline Var sigmoid(const Var& x) {
  double s = sigmoid(x.value());
  return x.tape()->push(Op::Sigmoid, s, x.index(), kNoNode, s * (1.0 - s), 0.0);
}

// ---------------------------------------------------------------------------
// complex values as explicit (re, im) pairs
// ---------------------------------------------------------------------------

struct CVar {
  Var re, im;
};

inline CVar cvar(const Var& re, const Var& im) { return CVar{re, im}; }

inline CVar cadd(const CVar& a, const CVar& b) { return {a.re + b.re, a.im + b.im}; }
inline CVar csub(const CVar& a, const CVar& b) { return {a.re - b.re, a.im - b.im}; }
inline CVar cmul(const CVar& a, const CVar& b) {
  return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re};
}
inline CVar cdiv(const CVar& a, const CVar& b) {
  Var d = b.re * b.re + b.im * b.im;
  return {(a.re * b.re + a.im * b.im) / d, (a.im * b.re - a.re * b.im) / d};
}
inline CVar cexp(const CVar& z) {
  Var m = exp(z.re);
  return {m * cos(z.im), m * sin(z.im)};
}
inline CVar clog(const CVar& z) {
  Var r2 = z.re * z.re + z.im * z.im;
  return {0.5 * log(r2), atan2(z.im, z.re)};
}
inline CVar csqrt(const CVar& z) {
  CVar l = clog(z);
  return cexp(CVar{0.5 * l.re, 0.5 * l.im});
}
inline Var creal(const CVar& z) { return z.re; }
inline Var cimag(const CVar& z) { return z.im; }
inline CVar conj(const CVar& z) { return {z.re, -z.im}; }

// mixed arithmetic with real scalars and immediate complex constants
inline CVar cscale(const CVar& a, double c) { return {a.re * c, a.im * c}; }
inline CVar cscale(const CVar& a, const Var& c) { return {a.re * c, a.im * c}; }
inline CVar cadd(const CVar& a, double re, double im) { return {a.re + re, a.im + im}; }
inline CVar cmul_i(const CVar& a) {  // multiply by i
  return {-a.im, a.re};
}
inline CVar cmul(const CVar& a, double re, double im) {
  return {a.re * re - a.im * im, a.re * im + a.im * re};
}

}  // namespace skinn
