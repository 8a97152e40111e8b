#include "mmrl/environment.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace mmrl {

void EpisodeConfig::validate() const {
  if (max_inventory < 1) {
    throw std::invalid_argument("max_inventory must be >= 1");
  }
  if (!(inventory_penalty >= 0.0)) {
    throw std::invalid_argument("inventory_penalty must be >= 0");
  }
  if (!(fill_probability >= 0.0 && fill_probability <= 1.0)) {
    throw std::invalid_argument("fill_probability must lie in [0, 1]");
  }
  if (!(arrivals.p_buy >= 0.0 && arrivals.p_buy <= 1.0) ||
      !(arrivals.p_sell >= 0.0 && arrivals.p_sell <= 1.0)) {
    throw std::invalid_argument("market-order probabilities must lie in [0, 1]");
  }
  if (!(spread > 0.0)) {
    throw std::invalid_argument("spread must be positive");
  }
  if (!std::isfinite(p0)) {
    throw std::invalid_argument("p0 must be finite");
  }
  diffusion.validate();
  grid_steps(dt, horizon);
}

std::int64_t EpisodeConfig::steps() const {
  return grid_steps(dt, horizon);
}

void Normalizer::observe(double x) {
  if (frozen_) {
    return;
  }
  ++count_;
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta * (x - mean_);
}

double Normalizer::variance() const {
  return count_ > 1 ? std::max(0.0, m2_ / static_cast<double>(count_)) : 0.0;
}

double Normalizer::zscore(double x, double reference) const {
  if (count_ < 2) {
    return x - reference;
  }
  return (x - mean_) / std::max(std::sqrt(variance()), kStdFloor);
}

void Normalizer::restore(std::uint64_t count, double mean, double m2) {
  count_ = count;
  mean_ = mean;
  m2_ = m2;
}

std::vector<int> allowed_actions(std::int64_t inventory, int max_inventory) {
  if (std::llabs(inventory) > max_inventory) {
    throw std::out_of_range("inventory " + std::to_string(inventory) + " outside [-" +
                            std::to_string(max_inventory) + ", " +
                            std::to_string(max_inventory) + "]");
  }
  if (inventory == -max_inventory) {
    return {kHold, kBuy};
  }
  if (inventory == max_inventory) {
    return {kSell, kHold};
  }
  return {kSell, kHold, kBuy};
}

bool is_allowed(int action, std::int64_t inventory, int max_inventory) {
  if (action == kHold) {
    return std::llabs(inventory) <= max_inventory;
  }
  if (action == kBuy) {
    return inventory >= -max_inventory && inventory < max_inventory;
  }
  if (action == kSell) {
    return inventory > -max_inventory && inventory <= max_inventory;
  }
  return false;
}

double step_reward(double wealth_prev, double wealth_next, std::int64_t inventory_next,
                   double inventory_penalty, double dt) {
  return (wealth_next - wealth_prev) -
         inventory_penalty * static_cast<double>(std::llabs(inventory_next)) * dt;
}

Observation normalize_observation(double midprice, std::int64_t inventory, Normalizer& normalizer,
                                  int max_inventory, double reference_price) {
  normalizer.observe(midprice);
  Observation obs;
  obs.price_z = normalizer.zscore(midprice, reference_price);
  obs.inv_n = static_cast<double>(inventory) / static_cast<double>(max_inventory);
  return obs;
}

PostingDecision posting_for(int action) {
  return PostingDecision{action == kSell, action == kBuy};
}

Environment::Environment(EpisodeConfig config) : config_(config), n_steps_(0) {
  config_.validate();
  n_steps_ = config_.steps();
}

Observation Environment::observe() {
  return normalize_observation(price_, ledger_.inventory, normalizer_, config_.max_inventory,
                               config_.p0);
}

Observation Environment::reset(std::uint64_t seed) {
  stepper_.emplace(config_.diffusion, config_.dt, config_.p0, stream_seed(seed, Stream::price));
  arrival_rng_ = Rng(stream_seed(seed, Stream::arrivals));
  thinning_rng_ = Rng(stream_seed(seed, Stream::thinning));
  ledger_ = LedgerState{};
  price_ = config_.p0;
  step_ = 0;
  started_ = true;
  return observe();
}

StepResult Environment::step(int action) {
  if (!started_) {
    throw std::logic_error("step() called before reset()");
  }
  if (done()) {
    throw std::logic_error("step() called after the episode finished");
  }
  StepResult result;
  StepInfo& info = result.info;
  info.step = step_;
  info.action = action;
  info.mask_violation = !is_allowed(action, ledger_.inventory, config_.max_inventory);
  info.effective_action = info.mask_violation ? kHold : action;

  const std::int64_t inventory_before = ledger_.inventory;
  const PostingDecision posting = posting_for(info.effective_action);
  const double wealth_prev = wealth(ledger_, price_);
  const Quote now = derive_quotes(price_, config_.spread);
  const double next_price = stepper_->advance();
  const Quote next = derive_quotes(next_price, config_.spread);

  // All streams advance every step, whatever the action.
  const MarketOrderArrivals arrivals = sample_market_orders(config_.arrivals, arrival_rng_);
  const ThinningDraws draws = draw_thinning(config_.fill_probability, thinning_rng_);

  const SidePair adverse =
      config_.adverse_enabled ? adverse_fill_indicators(posting, now, next) : SidePair{};
  const SidePair nonadverse = nonadverse_fill_indicators(posting, arrivals, draws);
  const FillOutcome fills = combine_fills(adverse, nonadverse);
  ledger_ = apply_fills(ledger_, fills, price_, config_.spread);

  if (!is_allowed(info.effective_action, inventory_before, config_.max_inventory) ||
      std::llabs(ledger_.inventory) > config_.max_inventory) {
    ++safety_violations_;
  }

  info.price = price_;
  info.bid = now.bid;
  info.ask = now.ask;
  info.next_price = next_price;
  info.fills = fills;

  price_ = next_price;
  ++step_;

  const double wealth_next = wealth(ledger_, price_);
  result.reward = step_reward(wealth_prev, wealth_next, ledger_.inventory,
                              config_.inventory_penalty, config_.dt);
  result.done = done();
  result.observation = observe();

  info.inventory = ledger_.inventory;
  info.cash = ledger_.cash;
  info.wealth = wealth_next;
  info.reward = result.reward;
  return result;
}

}  // namespace mmrl
