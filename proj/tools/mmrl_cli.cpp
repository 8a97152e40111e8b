// mmrl: train, test and inspect the market-making agent from the command line.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mmrl/harness.hpp"
#include "mmrl/price_dynamics.hpp"

namespace {

struct CommonOptions {
  std::string config = "default";
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string adverse;
  std::string trace;
  std::vector<std::string> overrides;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config,-c", o.config, "config file, or 'default' for the built-in profile");
  cmd->add_option("--seed,-s", o.seed, "master seed");
  cmd->add_option("--out,-o", o.out, "output directory");
  cmd->add_option("--adverse-fills", o.adverse, "override adverse fills")
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--trace-episodes", o.trace, "comma-separated episode indices to trace");
  cmd->add_option("--set", o.overrides, "key=value override (repeatable)");
  cmd->add_flag("--quiet,-q", o.quiet, "suppress progress output");
}

mmrl::RunConfig resolve(const CommonOptions& o) {
  mmrl::RunConfig config;
  if (o.config != "default") {
    config = mmrl::load_config(o.config);
  }
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw mmrl::ConfigError("--set expects key=value, got '" + kv + "'");
    }
    mmrl::set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) {
    config.seed = *o.seed;
  }
  if (!o.out.empty()) {
    config.output_dir = o.out;
  }
  if (!o.adverse.empty()) {
    mmrl::set_config_value(config, "adverse_fills", o.adverse);
  }
  if (!o.trace.empty()) {
    mmrl::set_config_value(config, "trace_train_episodes", o.trace);
    mmrl::set_config_value(config, "trace_test_episodes", o.trace);
  }
  config.validate();
  return config;
}

mmrl::ProgressFn progress_for(const CommonOptions& o) {
  if (o.quiet) {
    return {};
  }
  return [](const std::string& msg) { std::cerr << msg << '\n'; };
}

double mean_reward(const std::vector<mmrl::EpisodeMetrics>& metrics) {
  double sum = 0.0;
  for (const auto& m : metrics) {
    sum += m.total_reward;
  }
  return metrics.empty() ? 0.0 : sum / static_cast<double>(metrics.size());
}

void print_params(const mmrl::DiffusionParams& d) {
  std::cout << "eta = " << mmrl::format_double(d.eta) << '\n'
            << "sigma = " << mmrl::format_double(d.sigma) << '\n'
            << "sigma_bar = " << mmrl::format_double(d.sigma_bar) << '\n'
            << "varsigma = " << mmrl::format_double(d.varsigma) << '\n'
            << "total_volatility = " << mmrl::format_double(d.total_volatility()) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Market-making agent: price simulation, training and evaluation"};
  app.require_subcommand(1);

  CommonOptions train_opts, test_opts, run_opts, path_opts, derive_opts;

  auto* train = app.add_subcommand("train", "train an agent and write checkpoint and metrics");
  add_common(train, train_opts);

  auto* test = app.add_subcommand("test", "evaluate a checkpoint with a fixed policy");
  add_common(test, test_opts);
  std::string checkpoint;
  test->add_option("--checkpoint", checkpoint, "checkpoint file (default <out>/checkpoint.bin)");

  auto* run = app.add_subcommand("run", "train, then test on unseen episodes");
  add_common(run, run_opts);

  auto* path = app.add_subcommand("simulate-path", "write one simulated midprice path as CSV");
  add_common(path, path_opts);
  std::string path_file;
  path->add_option("--file,-f", path_file, "output CSV (stdout when omitted)");

  auto* derive = app.add_subcommand("derive-params", "print diffusion coefficients for a model");
  add_common(derive, derive_opts);
  std::string model;
  derive->add_option("--model,-m", model, "price model")
      ->required()
      ->check(CLI::IsMember({"semi-markov", "hawkes", "literal"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const auto config = resolve(train_opts);
      const auto summary = mmrl::train_and_emit(config, false, progress_for(train_opts));
      std::cout << "trained " << summary.training.metrics.size() << " episodes; mean reward "
                << mmrl::format_double(mean_reward(summary.training.metrics)) << "; outputs in "
                << config.output_dir << '\n';
    } else if (*test) {
      const auto config = resolve(test_opts);
      const std::filesystem::path ck =
          checkpoint.empty() ? std::filesystem::path(config.output_dir) / "checkpoint.bin"
                             : std::filesystem::path(checkpoint);
      const auto result = mmrl::test_and_emit(config, ck, progress_for(test_opts));
      std::cout << "tested " << result.metrics.size() << " episodes; mean reward "
                << mmrl::format_double(mean_reward(result.metrics)) << '\n';
    } else if (*run) {
      const auto config = resolve(run_opts);
      const auto summary = mmrl::train_and_emit(config, true, progress_for(run_opts));
      std::cout << "train mean reward " << mmrl::format_double(mean_reward(summary.training.metrics))
                << "; test mean reward " << mmrl::format_double(mean_reward(summary.testing.metrics))
                << "; outputs in " << config.output_dir << '\n';
    } else if (*path) {
      const auto config = resolve(path_opts);
      const auto episode = config.resolved_episode();
      const auto p = mmrl::simulate_path(episode.diffusion, episode.dt, episode.horizon,
                                         episode.p0, config.seed);
      std::ofstream file;
      if (!path_file.empty()) {
        file.open(path_file);
        if (!file) {
          throw std::runtime_error("cannot write " + path_file);
        }
      }
      std::ostream& out = path_file.empty() ? std::cout : file;
      out << "t,price\n";
      for (std::size_t i = 0; i < p.prices.size(); ++i) {
        out << mmrl::format_double(p.times[i]) << ',' << mmrl::format_double(p.prices[i]) << '\n';
      }
    } else if (*derive) {
      auto config = resolve(derive_opts);
      mmrl::set_config_value(config, "price_model", model);
      print_params(config.resolved_diffusion());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
