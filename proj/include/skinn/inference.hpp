#pragma once

#include <cstddef>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "skinn/panel.hpp"
#include "skinn/skr.hpp"
#include "skinn/trainer.hpp"

// Post-fit inference on the joint parameter vector: empirical sandwich
// covariance from a finite-difference Hessian and per-observation score
// outer products, plus delta-method confidence intervals for the
// constrained representation parameters.
//
// Conventions. The joint vector is [theta | raw phi] in the same layout the
// trainer optimizes. The per-observation score treats the collocation grid
// as fixed: s_i = grad(l_i) + lambda * grad(L_SK), so the structured term is
// a common shift of every score and duplicating the panel leaves the outer
// product unchanged. Both factors are per-observation averages, so the
// covariance scales as V/N when building intervals.

namespace skinn {

struct InferenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SandwichEstimate {
  std::vector<double> hessian;      // (p+q)^2 row-major, symmetrized, after
                                    // any ridge
  std::vector<double> score_outer;  // (p+q)^2 row-major
  std::vector<double> covariance;   // H^-1 Xi H^-1, symmetrized
  std::vector<double> phi_block;    // q x q raw-space block of covariance
  std::size_t n_theta = 0;
  std::size_t n_phi = 0;
  std::size_t n_obs = 0;
  double condition = 0.0;  // eigenvalue ratio of the pre-ridge Hessian
  bool regularized = false;
};

// (1/N) sum of s_i s_i^T over the panel, (p+q)^2 row-major.
std::vector<double> score_outer_product(const FittedModel& model,
                                        const Panel& panel,
                                        const CollocationSet& colloc,
                                        const SkrContext& ctx = SkrContext{});

// Central finite differences of the composite gradient, column step
// 1e-4 * (1 + |x_j|), symmetrized. max_asym reports the largest
// |H - H^T| entry before symmetrization. Columns run in parallel; the
// serial twin is the reference implementation.
std::vector<double> empirical_hessian(const FittedModel& model,
                                      const Panel& panel,
                                      const CollocationSet& colloc,
                                      const SkrContext& ctx = SkrContext{},
                                      double* max_asym = nullptr);
std::vector<double> empirical_hessian_serial(
    const FittedModel& model, const Panel& panel, const CollocationSet& colloc,
    const SkrContext& ctx = SkrContext{}, double* max_asym = nullptr);

SandwichEstimate sandwich(const FittedModel& model, const Panel& panel,
                          const CollocationSet& colloc,
                          const SkrContext& ctx = SkrContext{});

struct CiRow {
  std::string name;
  double estimate = 0.0;  // constrained space
  double std_err = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// Delta-method intervals in constrained space: the raw-space phi covariance
// is pushed through the parameter transform's Jacobian, then each row gets
// estimate +- z_{alpha/2} * sqrt(var_j / n_obs). Intervals are not clipped
// to the constraint set.
std::vector<CiRow> confidence_interval(Repr repr,
                                       const std::vector<double>& phi_raw,
                                       const std::vector<double>& phi_block,
                                       std::size_t n_obs, double alpha);

// Inverse standard normal CDF.
double normal_quantile(double p);

void write_inference_csv(std::ostream& os, const std::vector<CiRow>& rows,
                         bool regularized);

}  // namespace skinn
