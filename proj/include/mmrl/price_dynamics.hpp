#pragma once

// Diffusion-approximation coefficients for semi-Markov and Hawkes midprice
// models, and an Euler-Maruyama simulator for the resulting SDE
//
//   dP_t = eta dt + sqrt(sigma^2 + sigma_bar^2 + varsigma^2) dW_t.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mmrl/rng.hpp"

namespace mmrl {

/// Raised when model inputs violate a precondition (degenerate chain,
/// negative radicand, bad normalization, ...). The message names the inputs.
class ModelError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Probability mass function over positive integers.
using IntDistribution = std::map<int, double>;
/// Joint probability mass function over integer pairs (k, p).
using PairDistribution = std::map<std::pair<int, int>, double>;

/// One row of an ergodic-weighted table: (pi_i, value_i).
struct WeightedValue {
  double weight = 0.0;
  double value = 0.0;
};
using WeightedTable = std::vector<WeightedValue>;

struct DiffusionParams {
  double eta = 0.0;
  double sigma = 0.0;
  double sigma_bar = 0.0;
  double varsigma = 0.0;

  /// sqrt(sigma^2 + sigma_bar^2 + varsigma^2), the diffusion coefficient.
  double total_volatility() const;
  void validate() const;

  bool operator==(const DiffusionParams&) const = default;
};

struct SemiMarkovInputs {
  double p_cont = 0.5;        // P[up | previous up]
  double p_cont_prime = 0.5;  // P[down | previous down]
  double delta = 0.01;        // tick size
  double m_up = 1.0;          // mean holding time in state +delta
  double m_down = 1.0;        // mean holding time in state -delta
  double pi_factor = 1.0;     // multiplies sigma^2 inside sigma_bar
  double sigma = 0.0;
  std::optional<double> tau;  // computed from the distributions when absent
  IntDistribution alpha_b;
  IntDistribution alpha_a;
  PairDistribution f;
  PairDistribution f_tilde;

  void validate() const;
};

struct HawkesInputs {
  double lambda = 1.0;   // background intensity
  double mu_hat = 0.0;   // branching ratio
  // a* is either given directly or aggregated from {pi_i, a(i)}.
  std::optional<double> a_star;
  WeightedTable a_table;
  // sigma_hat is either given directly or aggregated from {pi_i, v(i)}.
  std::optional<double> sigma_hat;
  WeightedTable v_table;
  double sigma = 0.0;
  // Use the unsquared second summand of sigma_bar as printed in the source
  // formula instead of the dimensionally consistent squared form.
  bool sigma_bar_literal = false;

  void validate() const;
};

struct PricePath {
  std::vector<double> times;
  std::vector<double> prices;
  std::uint64_t seed = 0;
};

// --- semi-Markov ---------------------------------------------------------

/// Long-run probability of the up state, (p' - 1) / (p + p' - 2).
double semi_markov_pi_star(double p_cont, double p_cont_prime);

/// sigma* = sqrt(4 delta^2 (1 - p' + pi*(p' - p)) / (p + p' - 2)^2).
double semi_markov_sigma_star(double p_cont, double p_cont_prime, double delta);

/// tau = sum_k sum_p alpha_b(k) alpha_a(p) [pi* f(k,p) + (1 - pi*) f~(k,p)],
/// truncated at the supplied supports.
double compute_tau(const IntDistribution& alpha_b, const IntDistribution& alpha_a,
                   const PairDistribution& f, const PairDistribution& f_tilde, double pi_star);

/// Mean holding time m_tau = pi* m(+delta) + (1 - pi*) m(-delta).
double semi_markov_m_tau(double pi_star, double m_up, double m_down);

DiffusionParams semi_markov_params(const SemiMarkovInputs& inputs);

// --- Hawkes --------------------------------------------------------------

/// a* = sum_i pi_i a(i).
double hawkes_a_star(const WeightedTable& table);

/// sigma_hat = sqrt(sum_i pi_i v(i)).
double hawkes_sigma_hat(const WeightedTable& table);

DiffusionParams hawkes_params(const HawkesInputs& inputs);

// --- simulation ----------------------------------------------------------

/// Number of grid steps T/dt; throws ModelError unless T/dt is integral
/// within 1e-9 and at least one.
std::int64_t grid_steps(double dt, double horizon);

/// Incremental Euler-Maruyama stepper.
///
/// The recursion P_{k+1} = P_k + eta dt + vol sqrt(dt) Z_k is evaluated in
/// its summed form P_k = P0 + eta (k dt) + vol sqrt(dt) (Z_0 + ... + Z_{k-1}),
/// which is the same scheme but keeps pure-drift paths free of rounding
/// drift. The environment and simulate_path share this class, so a path
/// produced step by step is bit-identical to the batch path.
class PriceStepper {
 public:
  PriceStepper(const DiffusionParams& params, double dt, double p0, std::uint64_t seed);

  double price() const { return price_; }
  std::int64_t step_index() const { return step_; }
  /// Advances one grid step and returns the new price.
  double advance();

 private:
  double p0_;
  double drift_;
  double vol_sqrt_dt_;
  double dt_;
  std::int64_t step_ = 0;
  double noise_sum_ = 0.0;
  double price_;
  Rng rng_;
};

PricePath simulate_path(const DiffusionParams& params, double dt, double horizon, double p0,
                        std::uint64_t seed);

}  // namespace mmrl
