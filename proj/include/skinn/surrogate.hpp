#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "skinn/mlp.hpp"
#include "skinn/skr.hpp"

namespace skinn {

struct SurrogateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class SdeModel : std::uint8_t { Hsv, Nasv };

const char* sde_model_name(SdeModel m);
SdeModel sde_model_from_name(const std::string& s);

/**
 * One Euler-Maruyama pricing query. The variance diffusion is
 * sigma_v * v^gamma_v; the Hsv model pins gamma_v to 1/2, Nasv leaves it
 * free, and both run through the same step kernel so the gamma_v = 1/2
 * special case reproduces Hsv paths exactly under a shared seed.
 */
struct SdeSpec {
  SdeModel model = SdeModel::Hsv;
  double v_theta = 0.04;
  double v0 = 0.04;
  double sigma_v = 0.5;
  double rho = -0.7;
  double kappa = 2.0;
  double gamma_v = 0.5;
  int steps_per_year = 250;
  int paths = 1000;  // total paths; simulated as antithetic pairs
  std::uint64_t seed = 0;

  void validate() const;
};

struct McPrice {
  double price = 0.0;
  double std_err = 0.0;  // standard error of the antithetic-pair mean
};

// Full-truncation Euler call price. The parallel driver and its serial twin
// share one chunked kernel, so they agree bitwise for any thread count.
McPrice simulate_price(const SdeSpec& spec, const SkInputs& x);
McPrice simulate_price_serial(const SdeSpec& spec, const SkInputs& x);

/** Uniform sampling box: one (lo, hi) per dataset column. */
using Bounds = std::vector<std::pair<double, double>>;

Bounds default_surrogate_bounds(SdeModel model);

// Column layout for a simulated pricing dataset: the three observable
// coordinates first, then the latent vector in representation order.
std::vector<std::string> surrogate_columns(SdeModel model);

/**
 * Monte Carlo training table for a pricing surrogate. Prices are stored per
 * unit strike, so rows with different strikes share one scale.
 */
struct SurrogateDataset {
  SdeModel model = SdeModel::Hsv;
  std::size_t n_sk = 3;  // leading columns observable, the rest latent
  std::vector<std::string> columns;
  Bounds bounds;
  std::vector<double> inputs;  // row-major, n_rows x columns.size()
  std::vector<double> prices;

  std::size_t n_rows() const { return prices.size(); }
  std::size_t n_cols() const { return columns.size(); }
  const double* row(std::size_t i) const { return inputs.data() + i * n_cols(); }
};

/** Per-row Monte Carlo effort for dataset generation. */
struct McConfig {
  int paths = 1000;
  int steps_per_year = 250;
};

SurrogateDataset build_surrogate_dataset(SdeModel model, std::size_t n,
                                         const Bounds& bounds,
                                         std::uint64_t seed,
                                         const McConfig& mc = {});

// CSV persistence: an optional leading "# bounds" comment, a header row of
// column names plus "price", then one row per observation.
void write_surrogate_csv(std::ostream& os, const SurrogateDataset& d);
SurrogateDataset read_surrogate_csv(std::istream& is);

/**
 * A trained net frozen for use as a pricing representation. n_sk leading
 * inputs are observable coordinates, n_phi trailing inputs are the latent
 * slots a calibration is allowed to move.
 */
struct FrozenSurrogate {
  MlpParams net;
  std::size_t n_sk = 0;
  std::size_t n_phi = 0;
  Bounds bounds;
  double final_rmse = 0.0;
};

FrozenSurrogate train_surrogate(const SurrogateDataset& d, const MlpConfig& cfg,
                                int epochs, double lr);

void write_surrogate(std::ostream& os, const FrozenSurrogate& f);
FrozenSurrogate read_surrogate(std::istream& is);

/** Fixed (moneyness, tenor) layout shared by every stored price surface. */
struct AeGrid {
  std::vector<double> m;    // 20 nodes, 0.7 .. 1.3
  std::vector<double> tau;  // 10 nodes, 0.1 .. 1.0
};

AeGrid make_ae_grid();

// Surface vectors are tenor-major over the grid: index = h * 20 + i for
// tenor node h and moneyness node i.
constexpr std::size_t kSurfaceSize = 200;

/**
 * Joint encoder/decoder training on stored surfaces. The encoder maps a
 * surface to latent_dim codes (n_sk = surface size); the decoder maps codes
 * back to a surface (n_phi = latent_dim) and is the part reused as a pricing
 * representation. Both report the shared reconstruction RMSE per grid point.
 */
std::pair<FrozenSurrogate, FrozenSurrogate> train_autoencoder(
    const std::vector<std::vector<double>>& surfaces, int latent_dim,
    const MlpConfig& cfg, int epochs = 200, double lr = 1e-3);

/**
 * Adapter exposing a frozen net through the pricing dispatch. Direct nets
 * append the latent slots to (m, tau, r) and scale the per-strike output;
 * decoder nets evaluate the latent surface and interpolate it bilinearly at
 * the query point, extrapolating along the edge cells.
 *
 * The weights are lifted lazily onto whichever tape prices first. Call
 * bind() before placing a checkpoint mark if later rewinds must keep the
 * lifted weights alive.
 */
class SurrogateSkr : public SurrogateBackend {
 public:
  SurrogateSkr(FrozenSurrogate frozen, Repr repr);

  Var price(Tape& t, const SkInputs& x,
            const std::vector<Var>& phi) const override;
  void bind(Tape& t) const override;

  const FrozenSurrogate& frozen() const { return frozen_; }
  Repr repr() const { return repr_; }

 private:
  MlpOnTape on_tape(Tape& t) const;
  Var decoder_price(Tape& t, const SkInputs& x,
                    const std::vector<Var>& phi) const;

  FrozenSurrogate frozen_;
  Repr repr_;
  AeGrid grid_;
  mutable Tape* tape_ = nullptr;
  mutable std::uint64_t tape_id_ = 0;
  mutable Index p0_ = 0;
};

SurrogateSkr surrogate_as_skr(FrozenSurrogate frozen, Repr repr);

}  // namespace skinn
