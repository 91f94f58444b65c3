#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "skinn/autodiff.hpp"
#include "skinn/mlp.hpp"
#include "skinn/panel.hpp"
#include "skinn/skr.hpp"

namespace skinn {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/**
 * Everything one joint fit needs. The data weight is normalized to one, so
 * lambda_sk alone sets the balance between fitting quotes and tracking the
 * representation; zero turns the run into a plain network fit that never
 * touches the latent parameters.
 */
struct TrainConfig {
  Repr repr = Repr::Bsm;
  double lambda_sk = 1.0;
  int epochs = 500;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t n_colloc = 2048;
  std::uint64_t colloc_seed = 0;
  bool boundary = false;
  MlpConfig net;

  // Collocation box. Rates are not sampled; points sit at the panel median.
  double m_lo = 0.7;
  double m_hi = 1.3;
  double tau_lo = 7.0 / 365.0;
  double tau_hi = 1.0;

  void validate() const;
};

/** Collocation inputs, drawn once and fixed for the whole run. */
struct CollocationSet {
  std::vector<SkInputs> points;
  std::uint64_t seed = 0;
  double rate = 0.0;
  double m_lo = 0.7;
  double m_hi = 1.3;
  double tau_lo = 7.0 / 365.0;
  double tau_hi = 1.0;
};

CollocationSet draw_collocation(const TrainConfig& cfg, double rate);

/**
 * The fitted pair: network weights and latent parameters, with the loss
 * trace logged once per epoch plus a closing row evaluated at the final
 * parameters. total always equals data + lambda * sk.
 */
struct FittedModel {
  MlpParams net;
  std::vector<double> phi_raw;
  std::vector<double> phi;
  TrainConfig config;
  double final_data_loss = 0.0;
  double final_sk_loss = 0.0;

  struct TraceRow {
    int epoch = 0;
    double data_loss = 0.0;
    double sk_loss = 0.0;
    double total = 0.0;
  };
  std::vector<TraceRow> trace;
};

// Mean squared error over the panel, targets and predictions per unit strike.
Var data_loss(Tape& t, const MlpOnTape& net, const Panel& panel);

// Mean squared gap between the network and the representation over the
// collocation set. Gradients reach the network weights and the latent
// parameters alike.
Var sk_loss(Tape& t, const MlpOnTape& net, const std::vector<Var>& constrained,
            const CollocationSet& colloc, Repr repr, const SkrContext& ctx);

/**
 * Soft boundary rows appended to the data side: intrinsic value at expiry,
 * zero deep out of the money, and the discounted lower bound deep in the
 * money, each as ordinary quotes the data loss treats like observations.
 */
Panel boundary_augment(const CollocationSet& colloc);

FittedModel train_skinn(const TrainConfig& cfg, const Panel& panel,
                        const SkrContext& ctx = SkrContext{},
                        const CollocationSet* colloc_override = nullptr);

// Box-clamp by a scaled sigmoid, then normalize to unit sum. The return
// feasibility check (sum lo <= 1 <= sum hi) lives in the callers below.
std::vector<Var> clamp_normalize(Tape& t, const std::vector<Var>& raw,
                                 const std::vector<double>& lo,
                                 const std::vector<double>& hi);
std::vector<double> clamp_normalize_values(const std::vector<double>& raw,
                                           const std::vector<double>& lo,
                                           const std::vector<double>& hi);

/**
 * Mean-variance structured loss over one cross-section: minus the portfolio's
 * predicted return plus eta times its historical variance, with weights
 * decoded from w_raw by clamp_normalize. features holds one row of length
 * n_features per asset; sigma is the n x n covariance, row-major. When
 * normalization pushes a weight above its cap by more than 1e-6 the optional
 * flag is set.
 */
Var meanvar_sk_loss(Tape& t, const MlpOnTape& net, const std::vector<Var>& w_raw,
                    const std::vector<double>& features, std::size_t n_features,
                    const std::vector<double>& sigma, double eta,
                    const std::vector<double>& lo, const std::vector<double>& hi,
                    bool* cap_exceeded = nullptr);

}  // namespace skinn
