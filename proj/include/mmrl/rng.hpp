#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace mmrl {

// Labeled random streams. Every stream used by a run is derived from the
// master seed through derive_seed(), so two runs with the same master seed
// draw identical numbers regardless of which features are switched on.
enum class Stream : std::uint64_t {
  price = 1,
  arrivals = 2,
  thinning = 3,
  policy = 4,
  init = 5,
  replay = 6,
};

enum class Phase : std::uint64_t {
  setup = 0,
  train = 1,
  test = 2,
};

/// SplitMix64 finalizer; bijective on 64-bit words.
std::uint64_t mix64(std::uint64_t x);

/// Hash-combines a sequence of words into a seed. Distinct (domain, index)
/// tuples give statistically independent seeds.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t domain, std::uint64_t index,
                          std::uint64_t salt = 0);

/// Seed of episode `index` in `phase`. Training and testing use different
/// derivation domains, so their seed sets do not share structure.
std::uint64_t episode_seed(std::uint64_t master, Phase phase, std::uint64_t index);

/// Seed for a labeled stream inside an episode (or any other seeded scope).
std::uint64_t stream_seed(std::uint64_t scope_seed, Stream stream);

/// Seeded generator with platform-independent variates.
///
/// The engine is std::mt19937_64 (whose output sequence is fixed by the
/// standard). Uniforms take the top 53 bits of one engine word; normals use
/// the Marsaglia polar method and keep the second variate of each pair.
/// std::normal_distribution is avoided because its algorithm is
/// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform on [0, 1).
  double uniform();
  /// Standard normal.
  double normal();
  /// True with probability p (p = 0 never, p = 1 always).
  bool bernoulli(double p);
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Full generator state as text; restore() accepts the same text.
  std::string serialize() const;
  void restore(const std::string& state);

  bool operator==(const Rng& other) const = default;

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mmrl
