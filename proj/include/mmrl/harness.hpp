#pragma once

// Run configuration, training and testing loops, metrics/trace emission,
// checkpoints and manifests.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmrl/environment.hpp"
#include "mmrl/price_dynamics.hpp"
#include "mmrl/sac.hpp"

namespace mmrl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PriceModel { literal, semi_markov, hawkes };

struct RunConfig {
  EpisodeConfig episode;  // episode.diffusion holds the literal coefficients
  sac::SacHyper sac;
  int n_train_episodes = 1000;
  int n_test_episodes = 200;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  std::vector<int> trace_train_episodes{0};
  std::vector<int> trace_test_episodes{0};
  bool test_stochastic = false;
  int histogram_bins = 20;
  PriceModel price_model = PriceModel::literal;
  SemiMarkovInputs semi_markov;
  HawkesInputs hawkes;

  /// Coefficients for the selected price model.
  DiffusionParams resolved_diffusion() const;
  /// Episode settings with the resolved coefficients filled in.
  EpisodeConfig resolved_episode() const;
  void validate() const;
};

/// Parses the flat `key = value` format. Blank lines and `#` comments are
/// ignored; unknown keys and malformed values raise ConfigError with the
/// line number. Missing keys keep their defaults.
RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::filesystem::path& path);
/// Applies a single `key=value` override.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
/// Every key with its resolved value, one `key = value` per line, in a
/// fixed order. The output parses back to an identical configuration.
std::string format_config(const RunConfig& config);
std::vector<std::string> config_keys();

/// Hash of every setting that shapes training (not output locations,
/// test-episode counts or trace selection).
std::uint64_t config_fingerprint(const RunConfig& config);

struct EpisodeMetrics {
  int episode = 0;
  double total_reward = 0.0;
  double terminal_wealth = 0.0;
  std::int64_t afa = 0;
  std::int64_t afb = 0;
  std::int64_t nfa = 0;
  std::int64_t nfb = 0;
  std::int64_t ask_fills = 0;
  std::int64_t bid_fills = 0;
  double mean_abs_inventory = 0.0;
  std::int64_t max_abs_inventory = 0;
  std::int64_t mask_violations = 0;
  double inventory_penalty_sum = 0.0;  // alpha * sum |Q_t| dt
};

struct EpisodeTrace {
  int episode = 0;
  std::vector<StepInfo> steps;
};

/// Mean SAC diagnostics over the updates made during one training episode.
struct EpisodeUpdateStats {
  int episode = 0;
  std::size_t updates = 0;
  double q1_loss = 0.0;
  double q2_loss = 0.0;
  double value_loss = 0.0;
  double policy_loss = 0.0;
  double entropy = 0.0;
  std::size_t buffer_size = 0;
};

struct Checkpoint {
  sac::AgentNets nets;
  Normalizer normalizer;
  std::string agent_rng_state;
  std::uint64_t fingerprint = 0;
};

/// Binary checkpoint: "MMCK" | u32 version | u64 fingerprint | u8 has_trunk |
/// network records (trunk if present, actor, q1, q2, value, value_target) |
/// u64 normalizer count | f64 mean | f64 m2 | u32 length | RNG state text.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);

using ProgressFn = std::function<void(const std::string&)>;

struct TrainingResult {
  Checkpoint checkpoint;
  std::vector<EpisodeMetrics> metrics;
  std::vector<EpisodeTrace> traces;
  std::vector<EpisodeUpdateStats> updates;
  std::size_t buffer_insertions = 0;
  std::size_t buffer_size = 0;
  std::uint64_t safety_violations = 0;
};

struct TestingResult {
  std::vector<EpisodeMetrics> metrics;
  std::vector<EpisodeTrace> traces;
  std::uint64_t safety_violations = 0;
};

TrainingResult run_training(const RunConfig& config, const ProgressFn& progress = {});
/// Fixed policy, frozen normalizer, no learning. Throws ConfigError when the
/// checkpoint fingerprint does not match `config`.
TestingResult run_testing(const RunConfig& config, const Checkpoint& checkpoint,
                          const ProgressFn& progress = {});

/// Rolls one episode with an arbitrary action rule. Used by the loops above
/// and by scripted baselines.
using PolicyFn = std::function<int(const Observation&, const Environment&)>;
EpisodeMetrics run_episode(Environment& env, std::uint64_t seed, int episode_index,
                           const PolicyFn& policy, EpisodeTrace* trace = nullptr);

struct Histogram {
  double left = 0.0;
  double width = 1.0;
  std::vector<std::int64_t> counts;
};
Histogram make_histogram(const std::vector<double>& values, int bins);

std::string format_double(double x);
std::string metrics_csv(const std::vector<EpisodeMetrics>& metrics);
std::string trace_csv(const EpisodeTrace& trace);
std::string histogram_csv(const Histogram& histogram);
std::string updates_csv(const std::vector<EpisodeUpdateStats>& updates);

/// Writes `<phase>_metrics.csv`, `<phase>_reward_histogram.csv` and one
/// `<phase>_trace_<episode>.csv` per trace into `out_dir`.
void emit_outputs(const std::string& phase, const std::vector<EpisodeMetrics>& metrics,
                  const std::vector<EpisodeTrace>& traces, int histogram_bins,
                  const std::filesystem::path& out_dir);

void write_manifest(const std::filesystem::path& path, const RunConfig& config);

/// Full pipeline used by the CLI: manifest, training outputs, checkpoint,
/// and (when n_test_episodes > 0 and `with_test`) testing outputs.
struct RunSummary {
  TrainingResult training;
  TestingResult testing;
};
RunSummary train_and_emit(const RunConfig& config, bool with_test, const ProgressFn& progress = {});
TestingResult test_and_emit(const RunConfig& config, const std::filesystem::path& checkpoint_path,
                            const ProgressFn& progress = {});

}  // namespace mmrl
