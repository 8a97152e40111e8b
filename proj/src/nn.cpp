#include "mmrl/nn.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "mmrl/rng.hpp"

namespace mmrl::nn {

namespace {

std::uint64_t next_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

Eigen::MatrixXd relu(const Eigen::MatrixXd& z) {
  return z.cwiseMax(0.0);
}

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
    throw std::runtime_error("network record truncated");
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

constexpr char kMagic[4] = {'M', 'M', 'N', 'N'};
constexpr std::uint32_t kFormatVersion = 1;

}  // namespace

Eigen::VectorXd MlpGradients::flat() const {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += weights[l].size() + biases[l].size();
  }
  Eigen::VectorXd out(n);
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    for (Eigen::Index r = 0; r < weights[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < weights[l].cols(); ++c) {
        out(k++) = weights[l](r, c);
      }
    }
    for (Eigen::Index r = 0; r < biases[l].size(); ++r) {
      out(k++) = biases[l](r);
    }
  }
  return out;
}

MlpGradients& MlpGradients::operator+=(const MlpGradients& other) {
  if (other.weights.size() != weights.size()) {
    throw std::invalid_argument("gradient shape mismatch");
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] += other.weights[l];
    biases[l] += other.biases[l];
  }
  return *this;
}

bool MlpGradients::all_finite() const {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (!weights[l].allFinite() || !biases[l].allFinite()) {
      return false;
    }
  }
  return true;
}

Mlp::Mlp() : id_(next_id()) {}

Mlp::Mlp(std::vector<int> dims, std::uint64_t seed, Activation output_activation)
    : dims_(std::move(dims)), output_activation_(output_activation), id_(next_id()) {
  if (dims_.size() < 2) {
    throw std::invalid_argument("an MLP needs at least input and output dimensions");
  }
  for (int d : dims_) {
    if (d < 1) {
      throw std::invalid_argument("MLP layer dimensions must be positive");
    }
  }
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    const int fan_in = dims_[l];
    const int fan_out = dims_[l + 1];
    const double bound = std::sqrt(6.0 / fan_in);
    Eigen::MatrixXd w(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r) {
      for (int c = 0; c < fan_in; ++c) {
        w(r, c) = (2.0 * rng.uniform() - 1.0) * bound;
      }
    }
    weights_.push_back(std::move(w));
    biases_.push_back(Eigen::VectorXd::Zero(fan_out));
  }
}

Mlp::Mlp(const Mlp& other)
    : dims_(other.dims_),
      output_activation_(other.output_activation_),
      weights_(other.weights_),
      biases_(other.biases_),
      id_(next_id()) {}

Mlp& Mlp::operator=(const Mlp& other) {
  if (this != &other) {
    dims_ = other.dims_;
    output_activation_ = other.output_activation_;
    weights_ = other.weights_;
    biases_ = other.biases_;
    touch();
  }
  return *this;
}

void Mlp::set_weight(std::size_t layer, const Eigen::MatrixXd& w) {
  if (w.rows() != weights_.at(layer).rows() || w.cols() != weights_.at(layer).cols()) {
    throw std::invalid_argument("weight shape mismatch");
  }
  weights_[layer] = w;
  touch();
}

void Mlp::set_bias(std::size_t layer, const Eigen::VectorXd& b) {
  if (b.size() != biases_.at(layer).size()) {
    throw std::invalid_argument("bias shape mismatch");
  }
  biases_[layer] = b;
  touch();
}

void Mlp::check_input(const Eigen::MatrixXd& input) const {
  if (dims_.empty() || input.rows() != dims_.front()) {
    throw std::invalid_argument("MLP input has " + std::to_string(input.rows()) +
                                " rows, expected " +
                                std::to_string(dims_.empty() ? 0 : dims_.front()));
  }
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& input) const {
  check_input(input);
  Eigen::MatrixXd a = input;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Eigen::MatrixXd z = weights_[l] * a;
    z.colwise() += biases_[l];
    const bool last = l + 1 == weights_.size();
    a = (!last || output_activation_ == Activation::relu) ? relu(z) : std::move(z);
  }
  return a;
}

MlpCache Mlp::forward_cached(const Eigen::MatrixXd& input) const {
  check_input(input);
  MlpCache cache;
  cache.net_id = id_;
  cache.version = version_;
  cache.input = input;
  cache.pre.reserve(weights_.size());
  cache.post.reserve(weights_.size());
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const Eigen::MatrixXd& a = l == 0 ? cache.input : cache.post.back();
    Eigen::MatrixXd z = weights_[l] * a;
    z.colwise() += biases_[l];
    const bool last = l + 1 == weights_.size();
    Eigen::MatrixXd out = (!last || output_activation_ == Activation::relu) ? relu(z) : z;
    cache.pre.push_back(std::move(z));
    cache.post.push_back(std::move(out));
  }
  return cache;
}

Backward Mlp::backward(const MlpCache& cache, const Eigen::MatrixXd& output_grad,
                       bool want_param_grads) const {
  if (cache.net_id != id_ || cache.version != version_) {
    throw std::logic_error("stale forward cache: network changed since the forward pass");
  }
  if (output_grad.rows() != dims_.back() || output_grad.cols() != cache.input.cols()) {
    throw std::invalid_argument("output gradient shape mismatch");
  }
  Backward result;
  if (want_param_grads) {
    result.params.weights.resize(weights_.size());
    result.params.biases.resize(weights_.size());
  }
  Eigen::MatrixXd grad = output_grad;
  for (std::size_t l = weights_.size(); l-- > 0;) {
    const bool last = l + 1 == weights_.size();
    if (!last || output_activation_ == Activation::relu) {
      grad = (cache.pre[l].array() > 0.0).select(grad, 0.0);
    }
    const Eigen::MatrixXd& a_prev = l == 0 ? cache.input : cache.post[l - 1];
    if (want_param_grads) {
      result.params.weights[l].noalias() = grad * a_prev.transpose();
      result.params.biases[l] = grad.rowwise().sum();
    }
    Eigen::MatrixXd next(weights_[l].cols(), grad.cols());
    next.noalias() = weights_[l].transpose() * grad;
    grad = std::move(next);
  }
  result.input_grad = std::move(grad);
  return result;
}

std::size_t Mlp::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    n += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
  }
  return n;
}

namespace {

// Locates flat index `index` inside (layer, is_bias, row, col).
struct FlatPos {
  std::size_t layer;
  bool is_bias;
  Eigen::Index row;
  Eigen::Index col;
};

FlatPos locate(const std::vector<Eigen::MatrixXd>& w, const std::vector<Eigen::VectorXd>& b,
               std::size_t index) {
  for (std::size_t l = 0; l < w.size(); ++l) {
    const auto wn = static_cast<std::size_t>(w[l].size());
    if (index < wn) {
      const auto cols = static_cast<std::size_t>(w[l].cols());
      return {l, false, static_cast<Eigen::Index>(index / cols),
              static_cast<Eigen::Index>(index % cols)};
    }
    index -= wn;
    const auto bn = static_cast<std::size_t>(b[l].size());
    if (index < bn) {
      return {l, true, static_cast<Eigen::Index>(index), 0};
    }
    index -= bn;
  }
  throw std::out_of_range("parameter index out of range");
}

}  // namespace

double Mlp::param(std::size_t index) const {
  const FlatPos p = locate(weights_, biases_, index);
  return p.is_bias ? biases_[p.layer](p.row) : weights_[p.layer](p.row, p.col);
}

void Mlp::set_param(std::size_t index, double value) {
  const FlatPos p = locate(weights_, biases_, index);
  if (p.is_bias) {
    biases_[p.layer](p.row) = value;
  } else {
    weights_[p.layer](p.row, p.col) = value;
  }
  touch();
}

Eigen::VectorXd Mlp::flat_params() const {
  MlpGradients view{weights_, biases_};
  return view.flat();
}

void Mlp::add_to_params(const MlpGradients& delta, double scale) {
  if (delta.weights.size() != weights_.size()) {
    throw std::invalid_argument("parameter update shape mismatch");
  }
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    weights_[l] += scale * delta.weights[l];
    biases_[l] += scale * delta.biases[l];
  }
  touch();
}

void Mlp::soft_update_from(const Mlp& source, double tau) {
  if (!same_shape(source)) {
    throw std::invalid_argument("soft update between differently shaped networks");
  }
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    weights_[l] = (1.0 - tau) * weights_[l] + tau * source.weights_[l];
    biases_[l] = (1.0 - tau) * biases_[l] + tau * source.biases_[l];
  }
  touch();
}

bool Mlp::all_finite() const {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (!weights_[l].allFinite() || !biases_[l].allFinite()) {
      return false;
    }
  }
  return true;
}

bool Mlp::same_shape(const Mlp& other) const {
  return dims_ == other.dims_ && output_activation_ == other.output_activation_;
}

bool Mlp::operator==(const Mlp& other) const {
  if (!same_shape(other)) {
    return false;
  }
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (weights_[l] != other.weights_[l] || biases_[l] != other.biases_[l]) {
      return false;
    }
  }
  return true;
}

MlpGradients zero_gradients_like(const Mlp& net) {
  MlpGradients g;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    g.weights.push_back(Eigen::MatrixXd::Zero(net.weight(l).rows(), net.weight(l).cols()));
    g.biases.push_back(Eigen::VectorXd::Zero(net.bias(l).size()));
  }
  return g;
}

Adam::Adam(const Mlp& net, AdamConfig config)
    : config_(config), m_(zero_gradients_like(net)), v_(zero_gradients_like(net)) {}

void Adam::step(Mlp& net, const MlpGradients& grads) {
  if (grads.weights.size() != m_.weights.size() || grads.biases.size() != m_.biases.size()) {
    throw std::invalid_argument("Adam: gradient layer count does not match optimizer state");
  }
  for (std::size_t l = 0; l < m_.weights.size(); ++l) {
    if (grads.weights[l].rows() != m_.weights[l].rows() ||
        grads.weights[l].cols() != m_.weights[l].cols() ||
        grads.biases[l].size() != m_.biases[l].size() ||
        net.weight(l).rows() != m_.weights[l].rows() ||
        net.weight(l).cols() != m_.weights[l].cols()) {
      throw std::invalid_argument("Adam: gradient shape mismatch in layer " + std::to_string(l));
    }
  }
  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  MlpGradients delta;
  delta.weights.resize(m_.weights.size());
  delta.biases.resize(m_.biases.size());
  const double lr = config_.learning_rate;
  const double eps = config_.epsilon;
  auto update = [&](auto& m, auto& v, const auto& g, auto& d) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    d = ((m.array() / c1) / ((v.array() / c2).sqrt() + eps)).matrix();
  };
  for (std::size_t l = 0; l < m_.weights.size(); ++l) {
    update(m_.weights[l], v_.weights[l], grads.weights[l], delta.weights[l]);
    update(m_.biases[l], v_.biases[l], grads.biases[l], delta.biases[l]);
  }
  net.add_to_params(delta, -lr);
}

SquashedComponent squashed_component(double mean, double log_std, double noise) {
  const bool in_range = log_std > kLogStdMin && log_std < kLogStdMax;
  const double ls = std::clamp(log_std, kLogStdMin, kLogStdMax);
  const double sd = std::exp(ls);
  const double u = mean + sd * noise;
  const double a = std::tanh(u);
  // sech^2(u) equals 1 - tanh^2(u) without the cancellation once |u| is large.
  const double sech = 1.0 / std::cosh(u);
  const double one_minus_a2 = sech * sech;
  SquashedComponent c;
  c.action = a;
  c.log_prob = -0.5 * noise * noise - ls - 0.5 * std::log(2.0 * std::numbers::pi) -
               std::log(one_minus_a2 + kTanhEpsilon);
  // d/du of -log(1 - tanh(u)^2 + eps)
  const double g_u = 2.0 * a * one_minus_a2 / (one_minus_a2 + kTanhEpsilon);
  const double du_dls = in_range ? sd * noise : 0.0;
  c.d_action_d_mean = one_minus_a2;
  c.d_action_d_log_std = one_minus_a2 * du_dls;
  c.d_logp_d_mean = g_u;
  c.d_logp_d_log_std = (in_range ? -1.0 : 0.0) + g_u * du_dls;
  return c;
}

TanhGaussianSample tanh_gaussian_sample(const GaussianHeadOutput& head,
                                        const Eigen::VectorXd& noise) {
  if (head.mean.size() != head.log_std.size() || head.mean.size() != noise.size()) {
    throw std::invalid_argument("Gaussian head and noise dimensions differ");
  }
  TanhGaussianSample s;
  s.action.resize(head.mean.size());
  for (Eigen::Index i = 0; i < head.mean.size(); ++i) {
    const SquashedComponent c = squashed_component(head.mean(i), head.log_std(i), noise(i));
    s.action(i) = c.action;
    s.log_prob += c.log_prob;
  }
  return s;
}

void write_network(std::ostream& out, const Mlp& net, const std::string& role) {
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(role.size()));
  out.write(role.data(), static_cast<std::streamsize>(role.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.output_activation()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.dims().size()));
  for (int d : net.dims()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const Eigen::MatrixXd& w = net.weight(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        put<double>(out, w(r, c));
      }
    }
    const Eigen::VectorXd& b = net.bias(l);
    for (Eigen::Index r = 0; r < b.size(); ++r) {
      put<double>(out, b(r));
    }
  }
  if (!out) {
    throw std::runtime_error("failed writing network record '" + role + "'");
  }
}

Mlp read_network(std::istream& in, std::string* role) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("not a network record (bad magic)");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kFormatVersion) {
    throw std::runtime_error("unsupported network record version " + std::to_string(version));
  }
  const auto role_len = get<std::uint32_t>(in);
  if (role_len > 4096) {
    throw std::runtime_error("network record role name too long");
  }
  std::string name(role_len, '\0');
  in.read(name.data(), role_len);
  const auto act = get<std::uint32_t>(in);
  if (act > 1) {
    throw std::runtime_error("unknown output activation in network record");
  }
  const auto ndims = get<std::uint32_t>(in);
  if (ndims < 2 || ndims > 64) {
    throw std::runtime_error("bad dimension count in network record");
  }
  std::vector<int> dims;
  for (std::uint32_t i = 0; i < ndims; ++i) {
    const auto d = get<std::uint32_t>(in);
    if (d == 0 || d > (1u << 20)) {
      throw std::runtime_error("bad layer width in network record");
    }
    dims.push_back(static_cast<int>(d));
  }
  Mlp net(dims, 0, static_cast<Activation>(act));
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    Eigen::MatrixXd w(net.weight(l).rows(), net.weight(l).cols());
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        w(r, c) = get<double>(in);
      }
    }
    Eigen::VectorXd b(net.bias(l).size());
    for (Eigen::Index r = 0; r < b.size(); ++r) {
      b(r) = get<double>(in);
    }
    net.set_weight(l, w);
    net.set_bias(l, b);
  }
  if (role != nullptr) {
    *role = std::move(name);
  }
  return net;
}

}  // namespace mmrl::nn
