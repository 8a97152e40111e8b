#pragma once

// Soft Actor-Critic with a separate state-value network and its Polyak
// target: twin soft Q critics, value V_psi, target V_psi_hat, and a
// tanh-Gaussian actor. The continuous action in (-1, 1) is mapped onto the
// market-making action codes by discretize().

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "mmrl/environment.hpp"
#include "mmrl/nn.hpp"
#include "mmrl/rng.hpp"

namespace mmrl::sac {

constexpr int kStateDim = 2;
constexpr int kActionDim = 1;

struct SacHyper {
  double gamma = 0.99;
  double tau_polyak = 0.005;
  double entropy_temp = 0.2;
  int batch_size = 256;
  std::size_t buffer_capacity = 1'000'000;
  int updates_per_step = 1;
  int update_every = 1;  // environment steps between update rounds
  std::size_t warmup_steps = 1000;
  double learning_rate = 3e-4;
  int hidden_units = 256;
  bool shared_trunk = false;

  void validate() const;
};

struct Transition {
  Observation state;
  double action_cont = 0.0;
  double reward = 0.0;
  Observation next_state;
  bool done = false;
};

/// Columns are samples.
struct Batch {
  Eigen::MatrixXd states;       // kStateDim x B
  Eigen::RowVectorXd actions;   // continuous actions
  Eigen::RowVectorXd rewards;
  Eigen::MatrixXd next_states;  // kStateDim x B
  Eigen::RowVectorXd dones;     // 1.0 for terminal transitions
  Eigen::Index size() const { return states.cols(); }
};

Batch make_batch(const std::vector<Transition>& transitions);

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  /// Appends; at capacity the oldest transition is overwritten.
  void push(const Transition& t);
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  /// Transition `i` in insertion order among those still stored.
  const Transition& at(std::size_t i) const;
  /// Uniform sampling with replacement.
  Batch sample(std::size_t batch_size, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;  // next slot to overwrite once full
  std::vector<Transition> data_;
};

struct AgentNets {
  std::optional<nn::Mlp> trunk;  // shared feature extractor, optional
  nn::Mlp actor;                 // features -> (mu, log_std)
  nn::Mlp q1;                    // (features, action) -> Q
  nn::Mlp q2;
  nn::Mlp value;                 // state -> V
  nn::Mlp value_target;
  nn::Adam trunk_opt;
  nn::Adam actor_opt;
  nn::Adam q1_opt;
  nn::Adam q2_opt;
  nn::Adam value_opt;

  /// Fresh networks; every role gets its own derived initialization seed.
  static AgentNets create(const SacHyper& hyper, std::uint64_t init_seed);

  /// Trunk features of a batch of states (the states themselves without a trunk).
  Eigen::MatrixXd features(const Eigen::MatrixXd& states) const;
  bool all_finite() const;
};

/// Thresholds at +/-1/3; the boundaries belong to hold.
int discretize(double action_cont);

struct ActResult {
  double action_cont = 0.0;
  int action_code = 0;
};
ActResult act(const AgentNets& nets, const Observation& obs, bool deterministic, Rng& rng);

struct LossGrad {
  double loss = 0.0;
  nn::MlpGradients grads;
};

struct CriticLosses {
  double loss1 = 0.0;
  double loss2 = 0.0;
  nn::MlpGradients grads1;
  nn::MlpGradients grads2;
  std::optional<nn::MlpGradients> trunk_grads;
  Eigen::RowVectorXd targets;  // Q_hat, held constant
};

/// Q_hat = r + gamma (1 - done) V_target(s'); loss_i = mean 1/2 (Q_i(s, a) - Q_hat)^2.
CriticLosses critic_losses(const AgentNets& nets, const Batch& batch, double gamma);

/// mean 1/2 (V(s) - [min Q(s, a~) - temp log pi(a~|s)])^2 with a~ = f(noise; s).
/// Gradient with respect to the value network.
LossGrad value_loss(const AgentNets& nets, const Batch& batch, const Eigen::MatrixXd& noise,
                    double entropy_temp);

/// mean [temp log pi(f(noise; s)|s) - min Q(s, f(noise; s))]. Gradient with
/// respect to the actor, flowing through the sampled action into the critics.
/// `mean_entropy` receives the batch mean of -log pi when non-null.
LossGrad policy_loss(const AgentNets& nets, const Batch& batch, const Eigen::MatrixXd& noise,
                     double entropy_temp, double* mean_entropy = nullptr);

std::pair<double, double> critic_update(AgentNets& nets, const Batch& batch, double gamma);
double value_update(AgentNets& nets, const Batch& batch, double entropy_temp, Rng& rng);
double policy_update(AgentNets& nets, const Batch& batch, double entropy_temp, Rng& rng,
                     double* mean_entropy = nullptr);
void soft_update_target(AgentNets& nets, double tau_polyak);

struct UpdateDiagnostics {
  double q1_loss = 0.0;
  double q2_loss = 0.0;
  double value_loss = 0.0;
  double policy_loss = 0.0;
  double entropy = 0.0;
  std::size_t buffer_size = 0;
};

/// Critic, value, policy, then target updates on one uniform batch.
/// Returns nullopt (no-op) while the buffer is smaller than the batch or
/// the warmup threshold. Throws if any parameter becomes non-finite.
std::optional<UpdateDiagnostics> update_step(AgentNets& nets, const ReplayBuffer& buffer,
                                             const SacHyper& hyper, Rng& rng);

}  // namespace mmrl::sac
