#include <doctest.h>

#include <cmath>

#include "mmrl/environment.hpp"

using namespace mmrl;
using doctest::Approx;

namespace {

// Zero volatility, certain arrivals and fills, no adverse path: every posted
// order fills at the current quote.
EpisodeConfig certain_fills() {
  EpisodeConfig c;
  c.diffusion = {0, 0, 0, 0};
  c.fill_probability = 1.0;
  c.arrivals = {1.0, 1.0};
  c.adverse_enabled = false;
  c.horizon = 0.01;
  return c;
}

}  // namespace

TEST_SUITE("environment") {

TEST_CASE("allowed actions follow the inventory limit") {
  CHECK(allowed_actions(5, 5) == std::vector<int>{-1, 0});
  CHECK(allowed_actions(-5, 5) == std::vector<int>{0, 1});
  CHECK(allowed_actions(0, 5) == std::vector<int>{-1, 0, 1});
  CHECK_THROWS_AS(allowed_actions(6, 5), std::out_of_range);
  CHECK(is_allowed(1, 4, 5));
  CHECK_FALSE(is_allowed(1, 5, 5));
  CHECK_FALSE(is_allowed(2, 0, 5));
}

TEST_CASE("step reward") {
  CHECK(step_reward(10, 10, 0, 0.001, 0.001) == 0.0);
  CHECK(step_reward(10, 10, 1, 0.001, 0.001) == Approx(-1e-6).epsilon(1e-12));
  CHECK(step_reward(0, 0.005, 1, 0.001, 0.001) == Approx(0.005 - 1e-6).epsilon(1e-12));
  CHECK(step_reward(0, 0, -3, 0.001, 0.001) == Approx(-3e-6).epsilon(1e-12));
}

TEST_CASE("observation normalization") {
  Normalizer n;
  for (double x : {1.0, 2.0, 3.0, 4.0}) n.observe(x);
  CHECK(n.mean() == 2.5);
  CHECK(n.variance() == Approx(1.25).epsilon(1e-15));
  Normalizer copy = n;
  const Observation o = normalize_observation(2.5, 5, copy, 5, 0.0);
  CHECK(o.price_z == Approx(0.0).epsilon(1e-12));
  CHECK(o.inv_n == 1.0);
  CHECK(normalize_observation(2.5, -5, copy, 5, 0.0).inv_n == -1.0);

  Normalizer constant;
  for (int i = 0; i < 10; ++i) {
    CHECK(normalize_observation(50.0, 0, constant, 5, 50.0).price_z == 0.0);
  }

  Normalizer fresh;
  CHECK(normalize_observation(51.0, 0, fresh, 5, 50.0).price_z == 1.0);

  n.freeze();
  const Normalizer before = n;
  n.observe(1000.0);
  CHECK(n == before);
}

TEST_CASE("reset") {
  EpisodeConfig c;
  Environment env(c);
  const Observation o = env.reset(1);
  CHECK(env.price() == 50.0);
  CHECK(env.ledger().inventory == 0);
  CHECK(o.inv_n == 0.0);
  CHECK(o.price_z == 0.0);
  EpisodeConfig bad;
  bad.max_inventory = 0;
  CHECK_THROWS(Environment(bad));
}

TEST_CASE("holding changes nothing but the penalty") {
  Environment env(EpisodeConfig{});
  env.reset(3);
  while (!env.done()) {
    const StepResult r = env.step(kHold);
    CHECK(r.reward == 0.0);
    CHECK(r.info.inventory == 0);
  }
  CHECK(env.current_wealth() == 0.0);
  CHECK_THROWS_AS(env.step(kHold), std::logic_error);
}

TEST_CASE("forced fills and masking") {
  Environment env(certain_fills());
  env.reset(1);
  const StepResult buy = env.step(kBuy);
  CHECK(buy.info.inventory == 1);
  CHECK(buy.info.cash == Approx(-49.995).epsilon(1e-15));
  CHECK(buy.reward == Approx(0.005 - 1e-6).epsilon(1e-9));
  for (int i = 0; i < 4; ++i) env.step(kBuy);
  CHECK(env.ledger().inventory == 5);
  const StepResult masked = env.step(kBuy);
  CHECK(masked.info.mask_violation);
  CHECK(masked.info.effective_action == kHold);
  CHECK(masked.info.inventory == 5);
  CHECK(env.safety_violations() == 0);
}

TEST_CASE("step before reset is an error") {
  Environment env(EpisodeConfig{});
  CHECK_THROWS_AS(env.step(kHold), std::logic_error);
}

TEST_CASE("episodes last exactly T/dt steps") {
  Environment env(EpisodeConfig{});
  env.reset(0);
  std::int64_t steps = 0;
  bool done = false;
  while (!done) {
    done = env.step(kHold).done;
    ++steps;
  }
  CHECK(steps == 1000);
}

TEST_CASE("random policies: telescoping, bounds, mask conformance") {
  Rng policy(17);
  EpisodeConfig c;
  Environment env(c);
  for (int ep = 0; ep < 20; ++ep) {
    env.reset(1000 + ep);
    double reward_sum = 0.0;
    double abs_q = 0.0;
    const double w0 = env.current_wealth();
    bool done = false;
    while (!done) {
      const std::int64_t q_before = env.ledger().inventory;
      const int a = static_cast<int>(policy.below(3)) - 1;
      const StepResult r = env.step(a);
      CHECK(is_allowed(r.info.effective_action, q_before, c.max_inventory));
      CHECK(std::llabs(r.info.inventory) <= c.max_inventory);
      CHECK(r.info.mask_violation == !is_allowed(a, q_before, c.max_inventory));
      reward_sum += r.reward;
      abs_q += std::abs(static_cast<double>(r.info.inventory));
      done = r.done;
    }
    const double objective = env.current_wealth() - w0 - c.inventory_penalty * abs_q * c.dt;
    CHECK(reward_sum == Approx(objective).epsilon(1e-9));
  }
  CHECK(env.safety_violations() == 0);
}

TEST_CASE("same seed and actions reproduce the episode") {
  auto run = [](std::uint64_t seed) {
    Environment env(EpisodeConfig{});
    env.reset(seed);
    Rng policy(5);
    std::vector<double> out;
    while (!env.done()) {
      const StepResult r = env.step(static_cast<int>(policy.below(3)) - 1);
      out.push_back(r.reward);
      out.push_back(r.observation.price_z);
      out.push_back(r.info.cash);
    }
    return out;
  };
  CHECK(run(9) == run(9));
  CHECK(run(9) != run(10));
}

TEST_CASE("adverse toggle does not change the price path") {
  EpisodeConfig on;
  EpisodeConfig off = on;
  off.adverse_enabled = false;
  Environment a(on), b(off);
  a.reset(4);
  b.reset(4);
  Rng pa(2), pb(2);
  while (!a.done()) {
    const StepResult ra = a.step(static_cast<int>(pa.below(3)) - 1);
    const StepResult rb = b.step(static_cast<int>(pb.below(3)) - 1);
    CHECK(ra.info.next_price == rb.info.next_price);
  }
}

}
