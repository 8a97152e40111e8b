#pragma once

// Dense ReLU perceptrons with hand-written reverse-mode gradients, Adam, and
// the tanh-squashed Gaussian head used by the actor.
//
// Batches are column-major: an input matrix has one column per sample.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mmrl::nn {

enum class Activation : std::uint32_t { identity = 0, relu = 1 };

struct MlpGradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  /// Flattened in checkpoint order (W0 row-major, b0, W1, b1, ...).
  Eigen::VectorXd flat() const;
  MlpGradients& operator+=(const MlpGradients& other);
  bool all_finite() const;
};

/// Activations retained by a forward pass for the matching backward pass.
struct MlpCache {
  std::uint64_t net_id = 0;
  std::uint64_t version = 0;
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> pre;   // per layer, before activation
  std::vector<Eigen::MatrixXd> post;  // per layer, after activation
  const Eigen::MatrixXd& output() const { return post.back(); }
};

struct Backward {
  MlpGradients params;  // empty when parameter gradients were not requested
  Eigen::MatrixXd input_grad;
};

class Mlp {
 public:
  Mlp();
  /// dims = {in, hidden..., out}. Hidden layers use ReLU; the output layer
  /// uses `output_activation`. Weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)),
  /// biases zero.
  Mlp(std::vector<int> dims, std::uint64_t seed, Activation output_activation = Activation::identity);

  Mlp(const Mlp& other);
  Mlp& operator=(const Mlp& other);
  Mlp(Mlp&&) noexcept = default;
  Mlp& operator=(Mlp&&) noexcept = default;

  const std::vector<int>& dims() const { return dims_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  std::size_t layer_count() const { return weights_.size(); }
  Activation output_activation() const { return output_activation_; }

  const Eigen::MatrixXd& weight(std::size_t layer) const { return weights_.at(layer); }
  const Eigen::VectorXd& bias(std::size_t layer) const { return biases_.at(layer); }
  void set_weight(std::size_t layer, const Eigen::MatrixXd& w);
  void set_bias(std::size_t layer, const Eigen::VectorXd& b);

  Eigen::MatrixXd forward(const Eigen::MatrixXd& input) const;
  MlpCache forward_cached(const Eigen::MatrixXd& input) const;

  /// Reverse-mode gradients of sum(output_grad .* output). Throws if the
  /// cache came from another network or the parameters changed since.
  Backward backward(const MlpCache& cache, const Eigen::MatrixXd& output_grad,
                    bool want_param_grads = true) const;

  std::size_t param_count() const;
  double param(std::size_t index) const;
  void set_param(std::size_t index, double value);
  Eigen::VectorXd flat_params() const;

  /// params += delta, with delta laid out like MlpGradients.
  void add_to_params(const MlpGradients& delta, double scale);
  /// this <- (1 - tau) this + tau source.
  void soft_update_from(const Mlp& source, double tau);
  bool all_finite() const;
  bool same_shape(const Mlp& other) const;

  bool operator==(const Mlp& other) const;

 private:
  void touch() { ++version_; }
  void check_input(const Eigen::MatrixXd& input) const;

  std::vector<int> dims_;
  Activation output_activation_ = Activation::identity;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
  std::uint64_t id_;
  std::uint64_t version_ = 0;
};

MlpGradients zero_gradients_like(const Mlp& net);

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(const Mlp& net, AdamConfig config);

  /// One bias-corrected Adam step on `net` with gradient `grads`.
  void step(Mlp& net, const MlpGradients& grads);

  std::uint64_t step_count() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::uint64_t t_ = 0;
  MlpGradients m_;
  MlpGradients v_;
};

// --- tanh-squashed Gaussian -----------------------------------------------

constexpr double kLogStdMin = -20.0;
constexpr double kLogStdMax = 2.0;
constexpr double kTanhEpsilon = 1e-6;

struct GaussianHeadOutput {
  Eigen::VectorXd mean;
  Eigen::VectorXd log_std;  // unclamped; clamping happens when sampling
};

struct TanhGaussianSample {
  Eigen::VectorXd action;
  double log_prob = 0.0;
};

/// a = tanh(mu + sigma eps), log_prob = sum[log N(u; mu, sigma) - log(1 - a^2 + 1e-6)],
/// with log sigma clamped to [-20, 2].
TanhGaussianSample tanh_gaussian_sample(const GaussianHeadOutput& head, const Eigen::VectorXd& noise);

/// One component of the squashed sample with the pathwise derivatives of
/// the action and of its log-density with respect to the head outputs
/// (noise held fixed).
struct SquashedComponent {
  double action = 0.0;
  double log_prob = 0.0;
  double d_action_d_mean = 0.0;
  double d_action_d_log_std = 0.0;
  double d_logp_d_mean = 0.0;
  double d_logp_d_log_std = 0.0;
};
SquashedComponent squashed_component(double mean, double log_std, double noise);

// --- persistence ----------------------------------------------------------

/// Binary network record, little-endian:
///   "MMNN" | u32 version (1) | u32 role length | role bytes |
///   u32 output activation | u32 dim count | u32 dims... |
///   per layer: f64 weights row-major (out x in), f64 biases.
void write_network(std::ostream& out, const Mlp& net, const std::string& role);
/// Reads one record; throws on a bad magic, version, or truncated stream.
Mlp read_network(std::istream& in, std::string* role = nullptr);

}  // namespace mmrl::nn
