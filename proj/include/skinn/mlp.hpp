#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "skinn/autodiff.hpp"

namespace skinn {

enum class Activation : std::uint8_t { Relu, Silu };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& s);

struct MlpConfig {
  int input_dim = 3;
  int hidden_layers = 3;
  int hidden_width = 32;
  Activation activation = Activation::Silu;
  std::uint64_t seed = 0;
};

/**
 * Flat parameter store for a fully-connected stack. Layout per layer:
 * weights row-major (fan_out x fan_in), then the bias vector. The layout
 * doubles as the on-tape layout, so optimizer state can index it directly.
 */
struct MlpParams {
  std::vector<int> dims;  // {in, hidden..., out}
  Activation activation = Activation::Silu;
  std::vector<double> flat;

  int count() const { return static_cast<int>(flat.size()); }
  static int param_count(const std::vector<int>& dims);
};

// Kaiming-uniform weights (bound sqrt(6/fan_in)), zero biases, scalar output.
MlpParams init_mlp(const MlpConfig& cfg);

// Same init for an arbitrary layer stack (surrogates, autoencoders).
MlpParams init_net(std::vector<int> dims, Activation act, std::uint64_t seed);

/** Parameters lifted onto a tape as one contiguous leaf block. */
struct MlpOnTape {
  Tape* tape = nullptr;
  const MlpParams* params = nullptr;
  Index p0 = 0;
};

MlpOnTape lift_mlp(Tape& t, const MlpParams& p);

// Push current parameter values into the existing leaves (after an optimizer
// step, before rebuilding the epoch graph above the checkpoint).
void refresh_mlp(const MlpOnTape& m);

// Scalar-output forward passes.
Var mlp_forward(const MlpOnTape& m, const double* x);
Var mlp_forward(const MlpOnTape& m, const std::vector<Var>& x);

// Forward pass returning every output unit (multi-output stacks).
std::vector<Var> net_forward(const MlpOnTape& m, const double* x);
std::vector<Var> net_forward(const MlpOnTape& m, const std::vector<Var>& x);

// Forward pass emitting only the selected output rows. The hidden stack is
// built in full; use when few of many outputs feed the graph downstream.
std::vector<Var> net_forward_rows(const MlpOnTape& m, const std::vector<Var>& x,
                                  const std::vector<Index>& rows);

// Plain double forward, same accumulation order as the tape path.
double mlp_value(const MlpParams& p, const double* x);
void net_value(const MlpParams& p, const double* x, double* out);

// d(output)/d(x_i) of the recorded forward pass, on a scratch tape.
std::vector<double> mlp_input_grad(const MlpParams& p, const double* x);

// Flat-vector persistence: one text header line, then the raw little-endian
// 64-bit floats in layer order.
void write_mlp(std::ostream& os, const MlpParams& p);
MlpParams read_mlp(std::istream& is);

}  // namespace skinn
