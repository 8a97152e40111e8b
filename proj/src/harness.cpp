#include "mmrl/harness.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <fstream>
#include <mutex>
#include <sstream>

namespace mmrl {

namespace fs = std::filesystem;

// --- value parsing and formatting ---------------------------------------

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) {
    return {};
  }
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(trim(cur));
  return parts;
}

double parse_double(const std::string& s) {
  const std::string t = trim(s);
  double v = 0.0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw ConfigError("expected a number, got '" + s + "'");
  }
  return v;
}

template <typename Int>
Int parse_integer(const std::string& s) {
  const std::string t = trim(s);
  Int v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw ConfigError("expected an integer, got '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& s) {
  const std::string t = trim(s);
  if (t == "on" || t == "true" || t == "1" || t == "yes") {
    return true;
  }
  if (t == "off" || t == "false" || t == "0" || t == "no") {
    return false;
  }
  throw ConfigError("expected on/off, got '" + s + "'");
}

std::string format_bool(bool b) {
  return b ? "on" : "off";
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  if (trim(s).empty()) {
    return out;
  }
  for (const auto& part : split(s, ',')) {
    out.push_back(parse_integer<int>(part));
  }
  return out;
}

std::string format_int_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out += (i ? "," : "") + std::to_string(v[i]);
  }
  return out;
}

std::pair<std::string, std::string> split_entry(const std::string& entry) {
  const auto colon = entry.find(':');
  if (colon == std::string::npos) {
    throw ConfigError("expected 'key:value' entry, got '" + entry + "'");
  }
  return {entry.substr(0, colon), entry.substr(colon + 1)};
}

IntDistribution parse_int_distribution(const std::string& s) {
  IntDistribution d;
  if (trim(s).empty()) {
    return d;
  }
  for (const auto& entry : split(s, ',')) {
    const auto [k, w] = split_entry(entry);
    d[parse_integer<int>(k)] += parse_double(w);
  }
  return d;
}

std::string format_int_distribution(const IntDistribution& d) {
  std::string out;
  for (const auto& [k, w] : d) {
    out += (out.empty() ? "" : ",") + std::to_string(k) + ":" + format_double(w);
  }
  return out;
}

PairDistribution parse_pair_distribution(const std::string& s) {
  PairDistribution d;
  if (trim(s).empty()) {
    return d;
  }
  for (const auto& entry : split(s, ',')) {
    const auto [kp, w] = split_entry(entry);
    const auto slash = kp.find('/');
    if (slash == std::string::npos) {
      throw ConfigError("expected 'k/p:mass' entry, got '" + entry + "'");
    }
    d[{parse_integer<int>(kp.substr(0, slash)), parse_integer<int>(kp.substr(slash + 1))}] +=
        parse_double(w);
  }
  return d;
}

std::string format_pair_distribution(const PairDistribution& d) {
  std::string out;
  for (const auto& [kp, w] : d) {
    out += (out.empty() ? "" : ",") + std::to_string(kp.first) + "/" +
           std::to_string(kp.second) + ":" + format_double(w);
  }
  return out;
}

WeightedTable parse_table(const std::string& s) {
  WeightedTable t;
  if (trim(s).empty()) {
    return t;
  }
  for (const auto& entry : split(s, ',')) {
    const auto [w, v] = split_entry(entry);
    t.push_back({parse_double(w), parse_double(v)});
  }
  return t;
}

std::string format_table(const WeightedTable& t) {
  std::string out;
  for (const auto& row : t) {
    out += (out.empty() ? "" : ",") + format_double(row.weight) + ":" + format_double(row.value);
  }
  return out;
}

std::optional<double> parse_optional(const std::string& s) {
  if (trim(s).empty()) {
    return std::nullopt;
  }
  return parse_double(s);
}

std::string format_optional(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

PriceModel parse_model(const std::string& s) {
  const std::string t = trim(s);
  if (t == "literal") {
    return PriceModel::literal;
  }
  if (t == "semi-markov") {
    return PriceModel::semi_markov;
  }
  if (t == "hawkes") {
    return PriceModel::hawkes;
  }
  throw ConfigError("price_model must be literal, semi-markov or hawkes, got '" + s + "'");
}

std::string format_model(PriceModel m) {
  switch (m) {
    case PriceModel::literal:
      return "literal";
    case PriceModel::semi_markov:
      return "semi-markov";
    case PriceModel::hawkes:
      return "hawkes";
  }
  return "literal";
}

// --- key registry ---------------------------------------------------------

struct KeySpec {
  const char* name;
  bool fingerprinted;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define MMRL_DOUBLE(key, fp, field)                                        \
  KeySpec {                                                                \
    key, fp, [](const RunConfig& c) { return format_double(c.field); },    \
        [](RunConfig& c, const std::string& v) { c.field = parse_double(v); } \
  }
#define MMRL_INT(key, fp, field, type)                                          \
  KeySpec {                                                                     \
    key, fp, [](const RunConfig& c) { return std::to_string(c.field); },        \
        [](RunConfig& c, const std::string& v) { c.field = parse_integer<type>(v); } \
  }
#define MMRL_BOOL(key, fp, field)                                         \
  KeySpec {                                                               \
    key, fp, [](const RunConfig& c) { return format_bool(c.field); },     \
        [](RunConfig& c, const std::string& v) { c.field = parse_bool(v); } \
  }
#define MMRL_WITH(key, fp, field, fmt, parse)                        \
  KeySpec {                                                          \
    key, fp, [](const RunConfig& c) { return fmt(c.field); },        \
        [](RunConfig& c, const std::string& v) { c.field = parse(v); } \
  }

const std::vector<KeySpec>& registry() {
  static const std::vector<KeySpec> keys = {
      // episode
      MMRL_DOUBLE("dt", true, episode.dt),
      MMRL_DOUBLE("horizon", true, episode.horizon),
      MMRL_DOUBLE("p0", true, episode.p0),
      MMRL_INT("max_inventory", true, episode.max_inventory, int),
      MMRL_DOUBLE("spread", true, episode.spread),
      MMRL_DOUBLE("inventory_penalty", true, episode.inventory_penalty),
      MMRL_DOUBLE("fill_probability", true, episode.fill_probability),
      MMRL_BOOL("adverse_fills", true, episode.adverse_enabled),
      MMRL_DOUBLE("mo_buy_probability", true, episode.arrivals.p_buy),
      MMRL_DOUBLE("mo_sell_probability", true, episode.arrivals.p_sell),
      // price model
      MMRL_WITH("price_model", true, price_model, format_model, parse_model),
      MMRL_DOUBLE("eta", true, episode.diffusion.eta),
      MMRL_DOUBLE("sigma", true, episode.diffusion.sigma),
      MMRL_DOUBLE("sigma_bar", true, episode.diffusion.sigma_bar),
      MMRL_DOUBLE("varsigma", true, episode.diffusion.varsigma),
      MMRL_DOUBLE("sm_p_cont", true, semi_markov.p_cont),
      MMRL_DOUBLE("sm_p_cont_prime", true, semi_markov.p_cont_prime),
      MMRL_DOUBLE("sm_delta", true, semi_markov.delta),
      MMRL_DOUBLE("sm_m_up", true, semi_markov.m_up),
      MMRL_DOUBLE("sm_m_down", true, semi_markov.m_down),
      MMRL_DOUBLE("sm_pi_factor", true, semi_markov.pi_factor),
      MMRL_DOUBLE("sm_sigma", true, semi_markov.sigma),
      MMRL_WITH("sm_tau", true, semi_markov.tau, format_optional, parse_optional),
      MMRL_WITH("sm_alpha_b", true, semi_markov.alpha_b, format_int_distribution,
                parse_int_distribution),
      MMRL_WITH("sm_alpha_a", true, semi_markov.alpha_a, format_int_distribution,
                parse_int_distribution),
      MMRL_WITH("sm_f", true, semi_markov.f, format_pair_distribution, parse_pair_distribution),
      MMRL_WITH("sm_f_tilde", true, semi_markov.f_tilde, format_pair_distribution,
                parse_pair_distribution),
      MMRL_DOUBLE("hp_lambda", true, hawkes.lambda),
      MMRL_DOUBLE("hp_mu_hat", true, hawkes.mu_hat),
      MMRL_WITH("hp_a_star", true, hawkes.a_star, format_optional, parse_optional),
      MMRL_WITH("hp_a_table", true, hawkes.a_table, format_table, parse_table),
      MMRL_WITH("hp_sigma_hat", true, hawkes.sigma_hat, format_optional, parse_optional),
      MMRL_WITH("hp_v_table", true, hawkes.v_table, format_table, parse_table),
      MMRL_DOUBLE("hp_sigma", true, hawkes.sigma),
      MMRL_BOOL("hawkes_sigma_bar_literal", true, hawkes.sigma_bar_literal),
      // learner
      MMRL_DOUBLE("gamma", true, sac.gamma),
      MMRL_DOUBLE("tau_polyak", true, sac.tau_polyak),
      MMRL_DOUBLE("entropy_temp", true, sac.entropy_temp),
      MMRL_INT("batch_size", true, sac.batch_size, int),
      MMRL_INT("buffer_capacity", true, sac.buffer_capacity, std::size_t),
      MMRL_INT("updates_per_step", true, sac.updates_per_step, int),
      MMRL_INT("update_every", true, sac.update_every, int),
      MMRL_INT("warmup_steps", true, sac.warmup_steps, std::size_t),
      MMRL_DOUBLE("learning_rate", true, sac.learning_rate),
      MMRL_INT("hidden_units", true, sac.hidden_units, int),
      MMRL_BOOL("shared_trunk", true, sac.shared_trunk),
      // run
      MMRL_INT("n_train_episodes", true, n_train_episodes, int),
      MMRL_INT("n_test_episodes", false, n_test_episodes, int),
      MMRL_INT("seed", true, seed, std::uint64_t),
      MMRL_WITH("output_dir", false, output_dir, std::string, trim),
      MMRL_WITH("trace_train_episodes", false, trace_train_episodes, format_int_list,
                parse_int_list),
      MMRL_WITH("trace_test_episodes", false, trace_test_episodes, format_int_list,
                parse_int_list),
      MMRL_BOOL("test_stochastic", false, test_stochastic),
      MMRL_INT("histogram_bins", false, histogram_bins, int),
  };
  return keys;
}

#undef MMRL_DOUBLE
#undef MMRL_INT
#undef MMRL_BOOL
#undef MMRL_WITH

std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

// --- RunConfig ------------------------------------------------------------

DiffusionParams RunConfig::resolved_diffusion() const {
  switch (price_model) {
    case PriceModel::semi_markov:
      return semi_markov_params(semi_markov);
    case PriceModel::hawkes:
      return hawkes_params(hawkes);
    case PriceModel::literal:
      break;
  }
  return episode.diffusion;
}

EpisodeConfig RunConfig::resolved_episode() const {
  EpisodeConfig e = episode;
  e.diffusion = resolved_diffusion();
  e.seed = seed;
  return e;
}

void RunConfig::validate() const {
  auto field_error = [](const std::string& field, const std::string& why) {
    return ConfigError("invalid " + field + ": " + why);
  };
  if (n_train_episodes < 1) {
    throw field_error("n_train_episodes", "must be >= 1");
  }
  if (n_test_episodes < 0) {
    throw field_error("n_test_episodes", "must be >= 0");
  }
  if (histogram_bins < 1) {
    throw field_error("histogram_bins", "must be >= 1");
  }
  if (episode.max_inventory < 1) {
    throw field_error("max_inventory", "must be >= 1");
  }
  try {
    resolved_episode().validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid episode settings: ") + e.what());
  }
  try {
    sac.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid learner settings: ") + e.what());
  }
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : registry()) {
    out.emplace_back(k.name);
  }
  return out;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& k : registry()) {
    if (key == k.name) {
      try {
        k.set(config, value);
      } catch (const ConfigError& e) {
        throw ConfigError("key '" + key + "': " + e.what());
      }
      return;
    }
  }
  throw ConfigError("unknown key '" + key + "'");
}

RunConfig parse_config(std::istream& in) {
  RunConfig config;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) {
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      set_config_value(config, trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  config.validate();
  return config;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file " + path.string());
  }
  try {
    return parse_config(in);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& k : registry()) {
    out += std::string(k.name) + " = " + k.get(config) + "\n";
  }
  return out;
}

std::uint64_t config_fingerprint(const RunConfig& config) {
  std::uint64_t h = fnv1a("mmrl-config-v1");
  for (const auto& k : registry()) {
    if (k.fingerprinted) {
      h = fnv1a(std::string(k.name) + "=" + k.get(config) + "\n", h);
    }
  }
  return h;
}

// --- checkpoints ----------------------------------------------------------

namespace {

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.write(bytes, sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  char bytes[sizeof(T)];
  in.read(bytes, sizeof(T));
  if (!in) {
    throw std::runtime_error("checkpoint truncated");
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

constexpr char kCheckpointMagic[4] = {'M', 'M', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

nn::Mlp expect_network(std::istream& in, const std::string& role) {
  std::string got;
  nn::Mlp net = nn::read_network(in, &got);
  if (got != role) {
    throw std::runtime_error("checkpoint: expected network '" + role + "', found '" + got + "'");
  }
  return net;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  out.write(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, ck.fingerprint);
  put<std::uint8_t>(out, ck.nets.trunk ? 1 : 0);
  if (ck.nets.trunk) {
    nn::write_network(out, *ck.nets.trunk, "trunk");
  }
  nn::write_network(out, ck.nets.actor, "actor");
  nn::write_network(out, ck.nets.q1, "q1");
  nn::write_network(out, ck.nets.q2, "q2");
  nn::write_network(out, ck.nets.value, "value");
  nn::write_network(out, ck.nets.value_target, "value_target");
  put<std::uint64_t>(out, ck.normalizer.count());
  put<double>(out, ck.normalizer.mean());
  put<double>(out, ck.normalizer.m2());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.agent_rng_state.size()));
  out.write(ck.agent_rng_state.data(), static_cast<std::streamsize>(ck.agent_rng_state.size()));
  if (!out) {
    throw std::runtime_error("failed writing checkpoint");
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw std::runtime_error("not a checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.fingerprint = get<std::uint64_t>(in);
  const bool has_trunk = get<std::uint8_t>(in) != 0;
  if (has_trunk) {
    ck.nets.trunk = expect_network(in, "trunk");
  }
  ck.nets.actor = expect_network(in, "actor");
  ck.nets.q1 = expect_network(in, "q1");
  ck.nets.q2 = expect_network(in, "q2");
  ck.nets.value = expect_network(in, "value");
  ck.nets.value_target = expect_network(in, "value_target");
  const auto count = get<std::uint64_t>(in);
  const double mean = get<double>(in);
  const double m2 = get<double>(in);
  ck.normalizer.restore(count, mean, m2);
  const auto len = get<std::uint32_t>(in);
  if (len > (1u << 20)) {
    throw std::runtime_error("checkpoint: RNG state too long");
  }
  ck.agent_rng_state.resize(len);
  in.read(ck.agent_rng_state.data(), len);
  if (!in) {
    throw std::runtime_error("checkpoint truncated");
  }
  const nn::AdamConfig opt{};
  if (ck.nets.trunk) {
    ck.nets.trunk_opt = nn::Adam(*ck.nets.trunk, opt);
  }
  ck.nets.actor_opt = nn::Adam(ck.nets.actor, opt);
  ck.nets.q1_opt = nn::Adam(ck.nets.q1, opt);
  ck.nets.q2_opt = nn::Adam(ck.nets.q2, opt);
  ck.nets.value_opt = nn::Adam(ck.nets.value, opt);
  return ck;
}

void save_checkpoint(const fs::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write checkpoint " + path.string());
  }
  write_checkpoint(out, checkpoint);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open checkpoint " + path.string());
  }
  return read_checkpoint(in);
}

// --- rollouts -------------------------------------------------------------

EpisodeMetrics run_episode(Environment& env, std::uint64_t seed, int episode_index,
                           const PolicyFn& policy, EpisodeTrace* trace) {
  EpisodeMetrics m;
  m.episode = episode_index;
  if (trace != nullptr) {
    trace->episode = episode_index;
    trace->steps.clear();
  }
  Observation obs = env.reset(seed);
  const double initial_wealth = env.current_wealth();
  double abs_q_sum = 0.0;
  std::int64_t steps = 0;
  bool done = false;
  while (!done) {
    const int action = policy(obs, env);
    const StepResult r = env.step(action);
    m.total_reward += r.reward;
    m.mask_violations += r.info.mask_violation ? 1 : 0;
    const std::int64_t abs_q = std::llabs(r.info.inventory);
    abs_q_sum += static_cast<double>(abs_q);
    m.max_abs_inventory = std::max(m.max_abs_inventory, abs_q);
    if (trace != nullptr) {
      trace->steps.push_back(r.info);
    }
    obs = r.observation;
    done = r.done;
    ++steps;
  }
  const LedgerState& ledger = env.ledger();
  m.terminal_wealth = env.current_wealth() - initial_wealth;
  m.afa = ledger.afa;
  m.afb = ledger.afb;
  m.nfa = ledger.nfa;
  m.nfb = ledger.nfb;
  m.ask_fills = ledger.n_plus;
  m.bid_fills = ledger.n_minus;
  m.mean_abs_inventory = steps > 0 ? abs_q_sum / static_cast<double>(steps) : 0.0;
  m.inventory_penalty_sum = env.config().inventory_penalty * abs_q_sum * env.config().dt;
  return m;
}

namespace {

bool selected(const std::vector<int>& list, int episode) {
  return std::find(list.begin(), list.end(), episode) != list.end();
}

std::uint64_t agent_init_seed(std::uint64_t master) {
  return derive_seed(master, static_cast<std::uint64_t>(Phase::setup),
                     static_cast<std::uint64_t>(Stream::init));
}

std::uint64_t agent_rng_seed(std::uint64_t master, Phase phase) {
  return derive_seed(master, static_cast<std::uint64_t>(phase),
                     static_cast<std::uint64_t>(Stream::policy), 0xa9e7);
}

// The learner allocates and frees several 0.5 MB temporaries per update.
// glibc serves those with mmap by default, and the resulting page faults cost
// about a third of the update time, so keep them on the heap instead.
void keep_large_blocks_on_heap() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 128 << 20);
  });
#endif
}

}  // namespace

TrainingResult run_training(const RunConfig& config, const ProgressFn& progress) {
  config.validate();
  keep_large_blocks_on_heap();
  const sac::SacHyper& hyper = config.sac;
  Environment env(config.resolved_episode());
  sac::AgentNets nets = sac::AgentNets::create(hyper, agent_init_seed(config.seed));
  sac::ReplayBuffer buffer(hyper.buffer_capacity);
  Rng agent_rng(agent_rng_seed(config.seed, Phase::train));

  TrainingResult result;
  std::uint64_t global_step = 0;
  for (int ep = 0; ep < config.n_train_episodes; ++ep) {
    EpisodeUpdateStats stats;
    stats.episode = ep;
    EpisodeTrace trace;
    const bool traced = selected(config.trace_train_episodes, ep);

    // Rolled by hand rather than through run_episode so that each transition
    // is stored and the update schedule runs between environment steps.
    EpisodeMetrics m;
    m.episode = ep;
    Observation obs = env.reset(episode_seed(config.seed, Phase::train,
                                             static_cast<std::uint64_t>(ep)));
    double abs_q_sum = 0.0;
    std::int64_t steps = 0;
    bool done = false;
    while (!done) {
      const sac::ActResult a = sac::act(nets, obs, false, agent_rng);
      const StepResult r = env.step(a.action_code);
      buffer.push(sac::Transition{obs, a.action_cont, r.reward, r.observation, r.done});
      ++result.buffer_insertions;
      ++global_step;
      if (global_step % static_cast<std::uint64_t>(hyper.update_every) == 0) {
        for (int u = 0; u < hyper.updates_per_step; ++u) {
          if (const auto d = sac::update_step(nets, buffer, hyper, agent_rng)) {
            ++stats.updates;
            stats.q1_loss += d->q1_loss;
            stats.q2_loss += d->q2_loss;
            stats.value_loss += d->value_loss;
            stats.policy_loss += d->policy_loss;
            stats.entropy += d->entropy;
          }
        }
      }
      m.total_reward += r.reward;
      m.mask_violations += r.info.mask_violation ? 1 : 0;
      const std::int64_t abs_q = std::llabs(r.info.inventory);
      abs_q_sum += static_cast<double>(abs_q);
      m.max_abs_inventory = std::max(m.max_abs_inventory, abs_q);
      if (traced) {
        trace.steps.push_back(r.info);
      }
      obs = r.observation;
      done = r.done;
      ++steps;
    }
    const LedgerState& ledger = env.ledger();
    m.terminal_wealth = env.current_wealth();
    m.afa = ledger.afa;
    m.afb = ledger.afb;
    m.nfa = ledger.nfa;
    m.nfb = ledger.nfb;
    m.ask_fills = ledger.n_plus;
    m.bid_fills = ledger.n_minus;
    m.mean_abs_inventory = abs_q_sum / static_cast<double>(steps);
    m.inventory_penalty_sum = env.config().inventory_penalty * abs_q_sum * env.config().dt;
    result.metrics.push_back(m);
    if (traced) {
      trace.episode = ep;
      result.traces.push_back(std::move(trace));
    }
    if (stats.updates > 0) {
      const auto n = static_cast<double>(stats.updates);
      stats.q1_loss /= n;
      stats.q2_loss /= n;
      stats.value_loss /= n;
      stats.policy_loss /= n;
      stats.entropy /= n;
    }
    stats.buffer_size = buffer.size();
    result.updates.push_back(stats);
    if (progress) {
      std::ostringstream msg;
      msg << "train episode " << ep + 1 << "/" << config.n_train_episodes
          << " reward=" << format_double(m.total_reward) << " updates=" << stats.updates;
      progress(msg.str());
    }
  }
  result.buffer_size = buffer.size();
  result.safety_violations = env.safety_violations();
  result.checkpoint.nets = std::move(nets);
  result.checkpoint.normalizer = env.normalizer();
  result.checkpoint.agent_rng_state = agent_rng.serialize();
  result.checkpoint.fingerprint = config_fingerprint(config);
  return result;
}

TestingResult run_testing(const RunConfig& config, const Checkpoint& checkpoint,
                          const ProgressFn& progress) {
  config.validate();
  if (checkpoint.fingerprint != config_fingerprint(config)) {
    throw ConfigError("checkpoint fingerprint does not match the run configuration");
  }
  Environment env(config.resolved_episode());
  env.normalizer() = checkpoint.normalizer;
  env.normalizer().freeze();
  Rng policy_rng(agent_rng_seed(config.seed, Phase::test));
  const bool deterministic = !config.test_stochastic;
  const PolicyFn policy = [&](const Observation& obs, const Environment&) {
    return sac::act(checkpoint.nets, obs, deterministic, policy_rng).action_code;
  };
  TestingResult result;
  for (int ep = 0; ep < config.n_test_episodes; ++ep) {
    const bool traced = selected(config.trace_test_episodes, ep);
    EpisodeTrace trace;
    result.metrics.push_back(run_episode(
        env, episode_seed(config.seed, Phase::test, static_cast<std::uint64_t>(ep)), ep, policy,
        traced ? &trace : nullptr));
    if (traced) {
      result.traces.push_back(std::move(trace));
    }
    if (progress) {
      progress("test episode " + std::to_string(ep + 1) + "/" +
               std::to_string(config.n_test_episodes) +
               " reward=" + format_double(result.metrics.back().total_reward));
    }
  }
  result.safety_violations = env.safety_violations();
  return result;
}

// --- outputs --------------------------------------------------------------

Histogram make_histogram(const std::vector<double>& values, int bins) {
  if (bins < 1) {
    throw std::invalid_argument("histogram needs at least one bin");
  }
  Histogram h;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  if (values.empty()) {
    return h;
  }
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (hi > lo) {
    h.left = lo;
    h.width = (hi - lo) / bins;
  } else {
    h.width = 1.0;
    h.left = lo - 0.5 * bins * h.width;
  }
  for (double v : values) {
    auto idx = static_cast<std::int64_t>(std::floor((v - h.left) / h.width));
    idx = std::clamp<std::int64_t>(idx, 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(idx)];
  }
  return h;
}

std::string metrics_csv(const std::vector<EpisodeMetrics>& metrics) {
  std::ostringstream out;
  out << "episode,total_reward,terminal_wealth,afa,afb,nfa,nfb,ask_fills,bid_fills,"
         "mean_abs_inventory,max_abs_inventory,mask_violations,inventory_penalty\n";
  for (const auto& m : metrics) {
    out << m.episode << ',' << format_double(m.total_reward) << ','
        << format_double(m.terminal_wealth) << ',' << m.afa << ',' << m.afb << ',' << m.nfa << ','
        << m.nfb << ',' << m.ask_fills << ',' << m.bid_fills << ','
        << format_double(m.mean_abs_inventory) << ',' << m.max_abs_inventory << ','
        << m.mask_violations << ',' << format_double(m.inventory_penalty_sum) << '\n';
  }
  return out.str();
}

std::string trace_csv(const EpisodeTrace& trace) {
  std::ostringstream out;
  out << "step,price,bid,ask,next_price,action,effective_action,mask_violation,ask_fill,"
         "bid_fill,afa,afb,nfa,nfb,inventory,cash,wealth,reward\n";
  for (const auto& s : trace.steps) {
    const FillOutcome& f = s.fills;
    out << s.step << ',' << format_double(s.price) << ',' << format_double(s.bid) << ','
        << format_double(s.ask) << ',' << format_double(s.next_price) << ',' << s.action << ','
        << s.effective_action << ',' << int{s.mask_violation} << ',' << int{f.ask_fill} << ','
        << int{f.bid_fill} << ',' << int{f.ask_adverse} << ',' << int{f.bid_adverse} << ','
        << int{f.ask_nonadverse} << ',' << int{f.bid_nonadverse} << ',' << s.inventory << ','
        << format_double(s.cash) << ',' << format_double(s.wealth) << ','
        << format_double(s.reward) << '\n';
  }
  return out.str();
}

std::string histogram_csv(const Histogram& h) {
  std::ostringstream out;
  out << "bin_left_edge,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    out << format_double(h.left + static_cast<double>(i) * h.width) << ',' << h.counts[i] << '\n';
  }
  out << "# bin_width=" << format_double(h.width) << '\n';
  return out.str();
}

std::string updates_csv(const std::vector<EpisodeUpdateStats>& updates) {
  std::ostringstream out;
  out << "episode,updates,q1_loss,q2_loss,value_loss,policy_loss,entropy,buffer_size\n";
  for (const auto& u : updates) {
    out << u.episode << ',' << u.updates << ',' << format_double(u.q1_loss) << ','
        << format_double(u.q2_loss) << ',' << format_double(u.value_loss) << ','
        << format_double(u.policy_loss) << ',' << format_double(u.entropy) << ','
        << u.buffer_size << '\n';
  }
  return out.str();
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << text;
  if (!out) {
    throw std::runtime_error("failed writing " + path.string());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw std::runtime_error("cannot create output directory " + dir.string() + ": " +
                             ec.message());
  }
}

}  // namespace

void emit_outputs(const std::string& phase, const std::vector<EpisodeMetrics>& metrics,
                  const std::vector<EpisodeTrace>& traces, int histogram_bins,
                  const fs::path& out_dir) {
  ensure_dir(out_dir);
  write_text(out_dir / (phase + "_metrics.csv"), metrics_csv(metrics));
  std::vector<double> rewards;
  rewards.reserve(metrics.size());
  for (const auto& m : metrics) {
    rewards.push_back(m.total_reward);
  }
  write_text(out_dir / (phase + "_reward_histogram.csv"),
             histogram_csv(make_histogram(rewards, histogram_bins)));
  for (const auto& t : traces) {
    write_text(out_dir / (phase + "_trace_" + std::to_string(t.episode) + ".csv"), trace_csv(t));
  }
}

void write_manifest(const fs::path& path, const RunConfig& config) {
  std::ostringstream out;
  out << "# resolved run configuration; usable as --config to reproduce the run\n";
  out << "# fingerprint = " << config_fingerprint(config) << "\n";
  const DiffusionParams d = config.resolved_diffusion();
  out << "# resolved_diffusion = eta:" << format_double(d.eta)
      << " sigma:" << format_double(d.sigma) << " sigma_bar:" << format_double(d.sigma_bar)
      << " varsigma:" << format_double(d.varsigma) << "\n";
  out << "# episode seeds: derive(seed, phase, index) with phase train=1, test=2\n";
  out << format_config(config);
  write_text(path, out.str());
}

RunSummary train_and_emit(const RunConfig& config, bool with_test, const ProgressFn& progress) {
  config.validate();
  const fs::path dir = config.output_dir;
  ensure_dir(dir);
  write_manifest(dir / "manifest.txt", config);
  RunSummary summary;
  summary.training = run_training(config, progress);
  emit_outputs("train", summary.training.metrics, summary.training.traces, config.histogram_bins,
               dir);
  write_text(dir / "train_updates.csv", updates_csv(summary.training.updates));
  save_checkpoint(dir / "checkpoint.bin", summary.training.checkpoint);
  if (with_test && config.n_test_episodes > 0) {
    summary.testing = run_testing(config, summary.training.checkpoint, progress);
    emit_outputs("test", summary.testing.metrics, summary.testing.traces, config.histogram_bins,
                 dir);
  }
  return summary;
}

TestingResult test_and_emit(const RunConfig& config, const fs::path& checkpoint_path,
                            const ProgressFn& progress) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  TestingResult result = run_testing(config, ck, progress);
  emit_outputs("test", result.metrics, result.traces, config.histogram_bins, config.output_dir);
  return result;
}

}  // namespace mmrl
