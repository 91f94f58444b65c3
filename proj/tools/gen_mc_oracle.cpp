// Monte-Carlo reference prices for the stochastic-volatility pricing kernels.
// Full-truncation log-Euler scheme, optional double-exponential jumps, optional
// variance exponent gamma (gamma = 0.5 is the square-root diffusion). Run once;
// the printed values are frozen into the unit and acceptance tests.

#include <cmath>
#include <cstdio>
#include <vector>

#include "skinn/rng.hpp"

namespace {

struct McSpec {
  const char* label;
  double S, K, r, tau;
  double v_theta, v0, sigma_v, rho, kappa;
  double gamma = 0.5;
  double jump_p = 0.0, jump_eta1 = 0.0, jump_eta2 = 0.0, jump_lambda = 0.0;
};

struct McResult {
  double price;
  double se;
};

McResult simulate(const McSpec& s, long paths, int steps, std::uint64_t seed) {
  skinn::Rng rng(seed, skinn::Stream::Simulation);
  const double dt = s.tau / steps;
  const double sdt = std::sqrt(dt);
  const double rho_bar = std::sqrt(1.0 - s.rho * s.rho);
  double sum = 0.0, sum_sq = 0.0;
  for (long p = 0; p < paths; ++p) {
    double x = std::log(s.S);
    double v = s.v0;
    for (int k = 0; k < steps; ++k) {
      double z1 = rng.gaussian();
      double z2 = s.rho * z1 + rho_bar * rng.gaussian();
      double vp = v > 0.0 ? v : 0.0;
      double vol = std::sqrt(vp);
      x += (s.r - 0.5 * vp) * dt + vol * sdt * z1;
      v += s.kappa * (s.v_theta - vp) * dt + s.sigma_v * std::pow(vp, s.gamma) * sdt * z2;
      if (s.jump_lambda > 0.0) {
        // Poisson arrivals within the step, each adding a double-exponential
        // log-price jump; matches the uncompensated jump characteristic function.
        double lam_dt = s.jump_lambda * dt;
        int n_jumps = 0;
        double acc = rng.uniform_pos();
        double thresh = std::exp(-lam_dt);
        while (acc > thresh) {
          ++n_jumps;
          acc *= rng.uniform_pos();
        }
        for (int j = 0; j < n_jumps; ++j) {
          double u = rng.uniform_pos();
          if (rng.uniform() < s.jump_p) {
            x += -std::log(u) / s.jump_eta1;
          } else {
            x -= -std::log(u) / s.jump_eta2;
          }
        }
      }
    }
    double st = std::exp(x);
    double payoff = st > s.K ? st - s.K : 0.0;
    double disc = std::exp(-s.r * s.tau) * payoff;
    sum += disc;
    sum_sq += disc * disc;
  }
  double mean = sum / paths;
  double var = (sum_sq / paths - mean * mean) / (paths - 1);
  return {mean, std::sqrt(var)};
}

}  // namespace

int main() {
  const long kPaths = 200000;
  const int kSteps = 500;
  const std::uint64_t kSeed = 777;

  std::vector<McSpec> specs = {
      {"heston_atm", 100, 100, 0.03, 0.5, 0.04, 0.04, 0.5, -0.7, 2.0},
      {"heston_otm", 100, 110, 0.03, 0.5, 0.04, 0.04, 0.5, -0.7, 2.0},
      {"heston_itm_long", 100, 90, 0.05, 1.0, 0.09, 0.04, 0.3, -0.5, 1.5},
      {"hsvj_atm", 100, 100, 0.03, 0.5, 0.04, 0.04, 0.5, -0.7, 2.0, 0.5,
       0.4, 10.0, 5.0, 0.5},
      {"nasv_gamma07", 100, 100, 0.03, 0.5, 0.04, 0.04, 0.5, -0.7, 2.0, 0.7},
      {"nasv_gamma09", 100, 105, 0.03, 0.75, 0.09, 0.06, 0.4, -0.6, 1.5, 0.9},
  };

  std::printf("paths=%ld steps=%d seed=%llu\n", kPaths, kSteps,
              static_cast<unsigned long long>(kSeed));
  for (const auto& s : specs) {
    McResult r = simulate(s, kPaths, kSteps, kSeed);
    std::printf("%-18s price=%.6f se=%.6f\n", s.label, r.price, r.se);
  }
  return 0;
}
