#pragma once

// Episodic market-making MDP: state (normalized midprice, normalized
// inventory), inventory-masked action in {-1, 0, +1}, reward equal to the
// wealth change net of the running inventory penalty.

#include <cstdint>
#include <optional>
#include <vector>

#include "mmrl/execution.hpp"
#include "mmrl/price_dynamics.hpp"
#include "mmrl/rng.hpp"

namespace mmrl {

struct EpisodeConfig {
  double dt = 0.001;
  double horizon = 1.0;
  double p0 = 50.0;
  int max_inventory = 5;
  double spread = 0.01;
  double inventory_penalty = 0.001;
  double fill_probability = 0.2;
  bool adverse_enabled = true;
  ArrivalModel arrivals{};
  DiffusionParams diffusion{0.0, 0.1, 0.1, 0.1};
  std::uint64_t seed = 0;

  void validate() const;
  std::int64_t steps() const;
};

struct Observation {
  double price_z = 0.0;
  double inv_n = 0.0;

  bool operator==(const Observation&) const = default;
};

/// Action codes: -1 posts a sell order at the ask, +1 posts a buy order at
/// the bid, 0 holds.
enum ActionCode : int { kSell = -1, kHold = 0, kBuy = 1 };

/// Running z-score statistics (Welford). Frozen instances only read.
class Normalizer {
 public:
  static constexpr double kStdFloor = 1e-8;

  void observe(double x);
  /// (x - mean) / max(std, floor); falls back to x - reference until two
  /// samples have been seen.
  double zscore(double x, double reference) const;

  std::uint64_t count() const { return count_; }
  double mean() const { return mean_; }
  double variance() const;
  bool frozen() const { return frozen_; }
  void freeze(bool f = true) { frozen_ = f; }

  /// Raw accumulator access for checkpointing.
  double m2() const { return m2_; }
  void restore(std::uint64_t count, double mean, double m2);

  bool operator==(const Normalizer&) const = default;

 private:
  std::uint64_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
  bool frozen_ = false;
};

/// Allowed actions for inventory Q under limit q, in ascending order.
std::vector<int> allowed_actions(std::int64_t inventory, int max_inventory);
bool is_allowed(int action, std::int64_t inventory, int max_inventory);

double step_reward(double wealth_prev, double wealth_next, std::int64_t inventory_next,
                   double inventory_penalty, double dt);

/// Updates the normalizer unless frozen, then normalizes.
Observation normalize_observation(double midprice, std::int64_t inventory, Normalizer& normalizer,
                                  int max_inventory, double reference_price);

PostingDecision posting_for(int action);

/// One row of the per-step trace.
struct StepInfo {
  std::int64_t step = 0;
  double price = 0.0;       // midprice at the start of the step
  double bid = 0.0;
  double ask = 0.0;
  double next_price = 0.0;  // midprice after the step
  int action = 0;           // proposed by the agent
  int effective_action = 0; // after masking
  bool mask_violation = false;
  FillOutcome fills{};
  std::int64_t inventory = 0;
  double cash = 0.0;
  double wealth = 0.0;
  double reward = 0.0;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

class Environment {
 public:
  explicit Environment(EpisodeConfig config);

  /// Starts an episode. The price, arrival and thinning streams are derived
  /// from `seed`.
  Observation reset(std::uint64_t seed);
  Observation reset() { return reset(config_.seed); }

  StepResult step(int action);

  const EpisodeConfig& config() const { return config_; }
  const LedgerState& ledger() const { return ledger_; }
  double price() const { return price_; }
  std::int64_t steps_taken() const { return step_; }
  bool done() const { return step_ >= n_steps_; }
  double current_wealth() const { return wealth(ledger_, price_); }

  Normalizer& normalizer() { return normalizer_; }
  const Normalizer& normalizer() const { return normalizer_; }

  /// Count of steps where |Q| exceeded the limit or the effective action
  /// left the allowed set. Must stay zero.
  std::uint64_t safety_violations() const { return safety_violations_; }

 private:
  Observation observe();

  EpisodeConfig config_;
  std::int64_t n_steps_;
  Normalizer normalizer_;
  std::optional<PriceStepper> stepper_;
  Rng arrival_rng_;
  Rng thinning_rng_;
  LedgerState ledger_;
  double price_ = 0.0;
  std::int64_t step_ = 0;
  bool started_ = false;
  std::uint64_t safety_violations_ = 0;
};

}  // namespace mmrl
