#include "mmrl/price_dynamics.hpp"

#include <cmath>
#include <sstream>

namespace mmrl {

namespace {

constexpr double kNormTol = 1e-9;

std::string describe(std::initializer_list<std::pair<const char*, double>> fields) {
  std::ostringstream out;
  out.precision(17);
  bool first = true;
  for (const auto& [name, value] : fields) {
    out << (first ? "" : ", ") << name << "=" << value;
    first = false;
  }
  return out.str();
}

void check_chain(double p_cont, double p_cont_prime) {
  if (p_cont + p_cont_prime == 2.0) {
    throw ModelError("degenerate semi-Markov chain: p_cont + p_cont_prime = 2 (" +
                     describe({{"p_cont", p_cont}, {"p_cont_prime", p_cont_prime}}) + ")");
  }
}

void check_distribution(const IntDistribution& d, const char* name) {
  double sum = 0.0;
  for (const auto& [k, w] : d) {
    if (k < 1 || !(w >= 0.0)) {
      throw ModelError(std::string(name) + ": entries must be nonnegative masses on k >= 1");
    }
    sum += w;
  }
  if (d.empty() || std::abs(sum - 1.0) > kNormTol) {
    throw ModelError(std::string(name) + ": masses must sum to 1 (got " +
                     describe({{"sum", sum}}) + ")");
  }
}

void check_distribution(const PairDistribution& d, const char* name) {
  double sum = 0.0;
  for (const auto& [kp, w] : d) {
    if (kp.first < 1 || kp.second < 1 || !(w >= 0.0)) {
      throw ModelError(std::string(name) + ": entries must be nonnegative masses on k, p >= 1");
    }
    sum += w;
  }
  if (d.empty() || std::abs(sum - 1.0) > kNormTol) {
    throw ModelError(std::string(name) + ": masses must sum to 1 (got " +
                     describe({{"sum", sum}}) + ")");
  }
}

double weight_sum(const WeightedTable& table) {
  double sum = 0.0;
  for (const auto& row : table) {
    if (!(row.weight >= 0.0)) {
      throw ModelError("ergodic weights must be nonnegative");
    }
    sum += row.weight;
  }
  return sum;
}

void check_weights(const WeightedTable& table) {
  const double sum = weight_sum(table);
  if (table.empty() || std::abs(sum - 1.0) > kNormTol) {
    throw ModelError("ergodic weights must sum to 1 (got " + describe({{"sum", sum}}) + ")");
  }
}

}  // namespace

double DiffusionParams::total_volatility() const {
  return std::sqrt(sigma * sigma + sigma_bar * sigma_bar + varsigma * varsigma);
}

void DiffusionParams::validate() const {
  if (!std::isfinite(eta) || !(sigma >= 0.0) || !(sigma_bar >= 0.0) || !(varsigma >= 0.0) ||
      !std::isfinite(sigma) || !std::isfinite(sigma_bar) || !std::isfinite(varsigma)) {
    throw ModelError("diffusion coefficients must be finite with nonnegative volatilities (" +
                     describe({{"eta", eta},
                               {"sigma", sigma},
                               {"sigma_bar", sigma_bar},
                               {"varsigma", varsigma}}) +
                     ")");
  }
}

void SemiMarkovInputs::validate() const {
  if (!(p_cont > 0.0 && p_cont < 1.0) || !(p_cont_prime > 0.0 && p_cont_prime < 1.0)) {
    throw ModelError("continuation probabilities must lie in (0, 1) (" +
                     describe({{"p_cont", p_cont}, {"p_cont_prime", p_cont_prime}}) + ")");
  }
  check_chain(p_cont, p_cont_prime);
  if (!(delta > 0.0)) {
    throw ModelError("tick size must be positive (" + describe({{"delta", delta}}) + ")");
  }
  if (!(m_up > 0.0) || !(m_down > 0.0)) {
    throw ModelError("mean holding times must be positive (" +
                     describe({{"m_up", m_up}, {"m_down", m_down}}) + ")");
  }
  if (tau) {
    if (!(*tau > 0.0)) {
      throw ModelError("tau must be positive (" + describe({{"tau", *tau}}) + ")");
    }
  } else {
    check_distribution(alpha_b, "alpha_b");
    check_distribution(alpha_a, "alpha_a");
    check_distribution(f, "f");
    check_distribution(f_tilde, "f_tilde");
  }
}

void HawkesInputs::validate() const {
  if (!(lambda > 0.0)) {
    throw ModelError("background intensity must be positive (" +
                     describe({{"lambda", lambda}}) + ")");
  }
  if (!(mu_hat >= 0.0 && mu_hat < 1.0)) {
    throw ModelError("branching ratio must lie in [0, 1) for stationarity (" +
                     describe({{"mu_hat", mu_hat}}) + ")");
  }
  if (!a_star) {
    check_weights(a_table);
  }
  if (sigma_hat) {
    if (!(*sigma_hat >= 0.0)) {
      throw ModelError("sigma_hat must be nonnegative");
    }
  } else {
    check_weights(v_table);
    for (const auto& row : v_table) {
      if (!(row.value >= 0.0)) {
        throw ModelError("negative variance in v table (" + describe({{"v", row.value}}) + ")");
      }
    }
  }
}

double semi_markov_pi_star(double p_cont, double p_cont_prime) {
  check_chain(p_cont, p_cont_prime);
  return (p_cont_prime - 1.0) / (p_cont + p_cont_prime - 2.0);
}

double semi_markov_sigma_star(double p_cont, double p_cont_prime, double delta) {
  const double pi_star = semi_markov_pi_star(p_cont, p_cont_prime);
  const double denom = p_cont + p_cont_prime - 2.0;
  const double radicand =
      4.0 * delta * delta * ((1.0 - p_cont_prime + pi_star * (p_cont_prime - p_cont)) / (denom * denom));
  if (radicand < 0.0) {
    throw ModelError("negative radicand in sigma* (" +
                     describe({{"p_cont", p_cont},
                               {"p_cont_prime", p_cont_prime},
                               {"delta", delta},
                               {"radicand", radicand}}) +
                     ")");
  }
  return std::sqrt(radicand);
}

double compute_tau(const IntDistribution& alpha_b, const IntDistribution& alpha_a,
                   const PairDistribution& f, const PairDistribution& f_tilde, double pi_star) {
  if (alpha_b.empty() || alpha_a.empty() || (f.empty() && f_tilde.empty())) {
    throw ModelError("compute_tau: empty distribution support");
  }
  auto mass = [](const PairDistribution& d, int k, int p) {
    const auto it = d.find({k, p});
    return it == d.end() ? 0.0 : it->second;
  };
  double tau = 0.0;
  for (const auto& [k, wb] : alpha_b) {
    for (const auto& [p, wa] : alpha_a) {
      const double f_star = pi_star * mass(f, k, p) + (1.0 - pi_star) * mass(f_tilde, k, p);
      tau += wb * wa * f_star;
    }
  }
  return tau;
}

double semi_markov_m_tau(double pi_star, double m_up, double m_down) {
  if (!(m_up > 0.0) || !(m_down > 0.0)) {
    throw ModelError("mean holding times must be positive (" +
                     describe({{"m_up", m_up}, {"m_down", m_down}}) + ")");
  }
  return pi_star * m_up + (1.0 - pi_star) * m_down;
}

DiffusionParams semi_markov_params(const SemiMarkovInputs& in) {
  in.validate();
  const double pi_star = semi_markov_pi_star(in.p_cont, in.p_cont_prime);
  const double m_tau = semi_markov_m_tau(pi_star, in.m_up, in.m_down);
  // 2 pi* - 1 rewritten as (p' - p) / (p + p' - 2), which avoids the
  // cancellation of the literal form when pi* is close to 1/2.
  const double s_star =
      in.delta * ((in.p_cont_prime - in.p_cont) / (in.p_cont + in.p_cont_prime - 2.0));
  const double sigma_star = semi_markov_sigma_star(in.p_cont, in.p_cont_prime, in.delta);
  const double tau =
      in.tau ? *in.tau : compute_tau(in.alpha_b, in.alpha_a, in.f, in.f_tilde, pi_star);
  if (!(tau > 0.0)) {
    throw ModelError("nonpositive tau (" + describe({{"tau", tau}}) + ")");
  }
  const double bar_radicand =
      sigma_star * sigma_star / m_tau + in.pi_factor * in.sigma * in.sigma / m_tau;
  if (bar_radicand < 0.0) {
    throw ModelError("negative radicand in sigma_bar (" +
                     describe({{"pi_factor", in.pi_factor}, {"radicand", bar_radicand}}) + ")");
  }
  DiffusionParams out;
  out.eta = s_star / m_tau;
  out.sigma = in.sigma;
  out.sigma_bar = std::sqrt(bar_radicand);
  out.varsigma = sigma_star / std::sqrt(tau);
  out.validate();
  return out;
}

double hawkes_a_star(const WeightedTable& table) {
  check_weights(table);
  double a = 0.0;
  for (const auto& row : table) {
    a += row.weight * row.value;
  }
  return a;
}

double hawkes_sigma_hat(const WeightedTable& table) {
  check_weights(table);
  double var = 0.0;
  for (const auto& row : table) {
    if (!(row.value >= 0.0)) {
      throw ModelError("negative variance in v table (" + describe({{"v", row.value}}) + ")");
    }
    var += row.weight * row.value;
  }
  return std::sqrt(var);
}

DiffusionParams hawkes_params(const HawkesInputs& in) {
  in.validate();
  const double a_star = in.a_star ? *in.a_star : hawkes_a_star(in.a_table);
  const double sigma_hat = in.sigma_hat ? *in.sigma_hat : hawkes_sigma_hat(in.v_table);
  const double rate = in.lambda / (1.0 - in.mu_hat);
  const double root_rate = std::sqrt(rate);
  const double sigma_star = sigma_hat * root_rate;

  const double jump_term = a_star * root_rate;
  const double bar_radicand =
      sigma_star * sigma_star + (in.sigma_bar_literal ? jump_term : jump_term * jump_term);
  if (bar_radicand < 0.0) {
    throw ModelError("negative radicand in Hawkes sigma_bar (" +
                     describe({{"a_star", a_star}, {"radicand", bar_radicand}}) + ")");
  }
  DiffusionParams out;
  out.eta = a_star * rate;
  out.sigma = in.sigma;
  out.sigma_bar = std::sqrt(bar_radicand);
  out.varsigma = sigma_star * root_rate;
  out.validate();
  return out;
}

std::int64_t grid_steps(double dt, double horizon) {
  if (!(dt > 0.0) || !(horizon >= dt)) {
    throw ModelError("time grid requires dt > 0 and T >= dt (" +
                     describe({{"dt", dt}, {"T", horizon}}) + ")");
  }
  const double ratio = horizon / dt;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9 * std::max(1.0, rounded)) {
    throw ModelError("grid mismatch: T/dt is not an integer (" +
                     describe({{"dt", dt}, {"T", horizon}, {"T/dt", ratio}}) + ")");
  }
  return static_cast<std::int64_t>(rounded);
}

PriceStepper::PriceStepper(const DiffusionParams& params, double dt, double p0,
                           std::uint64_t seed)
    : p0_(p0),
      drift_(params.eta),
      vol_sqrt_dt_(params.total_volatility() * std::sqrt(dt)),
      dt_(dt),
      price_(p0),
      rng_(seed) {
  params.validate();
}

double PriceStepper::advance() {
  ++step_;
  noise_sum_ += rng_.normal();
  price_ = p0_ + drift_ * (static_cast<double>(step_) * dt_) + vol_sqrt_dt_ * noise_sum_;
  return price_;
}

PricePath simulate_path(const DiffusionParams& params, double dt, double horizon, double p0,
                        std::uint64_t seed) {
  const std::int64_t n = grid_steps(dt, horizon);
  PriceStepper stepper(params, dt, p0, seed);
  PricePath path;
  path.seed = seed;
  path.times.reserve(static_cast<std::size_t>(n + 1));
  path.prices.reserve(static_cast<std::size_t>(n + 1));
  path.times.push_back(0.0);
  path.prices.push_back(p0);
  for (std::int64_t k = 1; k <= n; ++k) {
    path.times.push_back(static_cast<double>(k) * dt);
    path.prices.push_back(stepper.advance());
  }
  return path;
}

}  // namespace mmrl
