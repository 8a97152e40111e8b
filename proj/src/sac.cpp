#include "mmrl/sac.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace mmrl::sac {

namespace {

enum class Role : std::uint64_t { trunk = 1, actor = 2, q1 = 3, q2 = 4, value = 5 };

std::uint64_t role_seed(std::uint64_t init_seed, Role role) {
  return derive_seed(init_seed, 0xa6e7, static_cast<std::uint64_t>(role));
}

void require_nonempty(const Batch& batch, const char* what) {
  if (batch.size() == 0) {
    throw std::invalid_argument(std::string(what) + ": empty batch");
  }
}

Eigen::MatrixXd critic_input(const Eigen::MatrixXd& features, const Eigen::RowVectorXd& actions) {
  Eigen::MatrixXd x(features.rows() + 1, features.cols());
  x.topRows(features.rows()) = features;
  x.bottomRows(1) = actions;
  return x;
}

// Squashed samples for a batch of actor outputs (row 0 mean, row 1 log std).
struct BatchSample {
  Eigen::RowVectorXd actions;
  Eigen::RowVectorXd log_probs;
  std::vector<nn::SquashedComponent> parts;
};

BatchSample sample_batch(const Eigen::MatrixXd& head, const Eigen::MatrixXd& noise) {
  if (noise.rows() != kActionDim || noise.cols() != head.cols()) {
    throw std::invalid_argument("policy noise must be 1 x batch");
  }
  BatchSample s;
  const Eigen::Index n = head.cols();
  s.actions.resize(n);
  s.log_probs.resize(n);
  s.parts.resize(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) {
    const nn::SquashedComponent c = nn::squashed_component(head(0, j), head(1, j), noise(0, j));
    s.actions(j) = c.action;
    s.log_probs(j) = c.log_prob;
    s.parts[static_cast<std::size_t>(j)] = c;
  }
  return s;
}

Eigen::MatrixXd draw_noise(Eigen::Index n, Rng& rng) {
  Eigen::MatrixXd noise(kActionDim, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    noise(0, j) = rng.normal();
  }
  return noise;
}

}  // namespace

void SacHyper::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("gamma must lie in [0, 1]");
  }
  if (!(tau_polyak > 0.0 && tau_polyak <= 1.0)) {
    throw std::invalid_argument("tau_polyak must lie in (0, 1]");
  }
  if (!(entropy_temp >= 0.0)) {
    throw std::invalid_argument("entropy_temp must be >= 0");
  }
  if (batch_size < 1 || buffer_capacity < 1 || updates_per_step < 1 || update_every < 1 ||
      hidden_units < 1) {
    throw std::invalid_argument(
        "batch_size, buffer_capacity, updates_per_step, update_every and hidden_units must be "
        ">= 1");
  }
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("learning_rate must be positive");
  }
}

Batch make_batch(const std::vector<Transition>& transitions) {
  const auto n = static_cast<Eigen::Index>(transitions.size());
  Batch b;
  b.states.resize(kStateDim, n);
  b.next_states.resize(kStateDim, n);
  b.actions.resize(n);
  b.rewards.resize(n);
  b.dones.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Transition& t = transitions[static_cast<std::size_t>(j)];
    b.states(0, j) = t.state.price_z;
    b.states(1, j) = t.state.inv_n;
    b.next_states(0, j) = t.next_state.price_z;
    b.next_states(1, j) = t.next_state.inv_n;
    b.actions(j) = t.action_cont;
    b.rewards(j) = t.reward;
    b.dones(j) = t.done ? 1.0 : 0.0;
  }
  return b;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) {
    throw std::invalid_argument("replay buffer capacity must be positive");
  }
  data_.reserve(std::min<std::size_t>(capacity, 1u << 16));
}

void ReplayBuffer::push(const Transition& t) {
  if (data_.size() < capacity_) {
    data_.push_back(t);
    return;
  }
  data_[cursor_] = t;
  cursor_ = (cursor_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= data_.size()) {
    throw std::out_of_range("replay buffer index out of range");
  }
  return data_[(cursor_ + i) % data_.size()];
}

Batch ReplayBuffer::sample(std::size_t batch_size, Rng& rng) const {
  if (data_.empty()) {
    throw std::logic_error("cannot sample from an empty replay buffer");
  }
  std::vector<Transition> picked;
  picked.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    picked.push_back(data_[rng.below(data_.size())]);
  }
  return make_batch(picked);
}

AgentNets AgentNets::create(const SacHyper& hyper, std::uint64_t init_seed) {
  hyper.validate();
  const int h = hyper.hidden_units;
  AgentNets nets;
  int feature_dim = kStateDim;
  if (hyper.shared_trunk) {
    nets.trunk.emplace(std::vector<int>{kStateDim, h, h}, role_seed(init_seed, Role::trunk),
                       nn::Activation::relu);
    feature_dim = h;
  }
  nets.actor = nn::Mlp({feature_dim, h, h, 2 * kActionDim}, role_seed(init_seed, Role::actor));
  nets.q1 = nn::Mlp({feature_dim + kActionDim, h, h, 1}, role_seed(init_seed, Role::q1));
  nets.q2 = nn::Mlp({feature_dim + kActionDim, h, h, 1}, role_seed(init_seed, Role::q2));
  nets.value = nn::Mlp({kStateDim, h, h, 1}, role_seed(init_seed, Role::value));
  nets.value_target = nets.value;

  const nn::AdamConfig opt{hyper.learning_rate, 0.9, 0.999, 1e-8};
  if (nets.trunk) {
    nets.trunk_opt = nn::Adam(*nets.trunk, opt);
  }
  nets.actor_opt = nn::Adam(nets.actor, opt);
  nets.q1_opt = nn::Adam(nets.q1, opt);
  nets.q2_opt = nn::Adam(nets.q2, opt);
  nets.value_opt = nn::Adam(nets.value, opt);
  return nets;
}

Eigen::MatrixXd AgentNets::features(const Eigen::MatrixXd& states) const {
  return trunk ? trunk->forward(states) : states;
}

bool AgentNets::all_finite() const {
  return (!trunk || trunk->all_finite()) && actor.all_finite() && q1.all_finite() &&
         q2.all_finite() && value.all_finite() && value_target.all_finite();
}

int discretize(double action_cont) {
  constexpr double kThreshold = 1.0 / 3.0;
  if (action_cont > kThreshold) {
    return kBuy;
  }
  if (action_cont < -kThreshold) {
    return kSell;
  }
  return kHold;
}

ActResult act(const AgentNets& nets, const Observation& obs, bool deterministic, Rng& rng) {
  Eigen::MatrixXd s(kStateDim, 1);
  s << obs.price_z, obs.inv_n;
  const Eigen::MatrixXd head = nets.actor.forward(nets.features(s));
  ActResult r;
  if (deterministic) {
    r.action_cont = std::tanh(head(0, 0));
  } else {
    r.action_cont = nn::squashed_component(head(0, 0), head(1, 0), rng.normal()).action;
  }
  r.action_code = discretize(r.action_cont);
  return r;
}

CriticLosses critic_losses(const AgentNets& nets, const Batch& batch, double gamma) {
  require_nonempty(batch, "critic update");
  const auto n = static_cast<double>(batch.size());
  CriticLosses out;
  const Eigen::RowVectorXd v_next = nets.value_target.forward(batch.next_states).row(0);
  out.targets = batch.rewards.array() + gamma * (1.0 - batch.dones.array()) * v_next.array();

  nn::MlpCache trunk_cache;
  Eigen::MatrixXd feats;
  if (nets.trunk) {
    trunk_cache = nets.trunk->forward_cached(batch.states);
    feats = trunk_cache.output();
  } else {
    feats = batch.states;
  }
  const Eigen::MatrixXd x = critic_input(feats, batch.actions);
  const bool want_input = nets.trunk.has_value();

  auto one = [&](const nn::Mlp& q, double& loss, nn::MlpGradients& grads) -> Eigen::MatrixXd {
    const nn::MlpCache cache = q.forward_cached(x);
    const Eigen::RowVectorXd residual = cache.output().row(0) - out.targets;
    loss = 0.5 * residual.squaredNorm() / n;
    nn::Backward bw = q.backward(cache, residual / n, true);
    grads = std::move(bw.params);
    return want_input ? bw.input_grad : Eigen::MatrixXd();
  };
  const Eigen::MatrixXd in1 = one(nets.q1, out.loss1, out.grads1);
  const Eigen::MatrixXd in2 = one(nets.q2, out.loss2, out.grads2);
  if (nets.trunk) {
    const Eigen::Index f = feats.rows();
    const Eigen::MatrixXd feat_grad = in1.topRows(f) + in2.topRows(f);
    out.trunk_grads = nets.trunk->backward(trunk_cache, feat_grad, true).params;
  }
  return out;
}

LossGrad value_loss(const AgentNets& nets, const Batch& batch, const Eigen::MatrixXd& noise,
                    double entropy_temp) {
  require_nonempty(batch, "value update");
  const auto n = static_cast<double>(batch.size());
  const Eigen::MatrixXd feats = nets.features(batch.states);
  const BatchSample fresh = sample_batch(nets.actor.forward(feats), noise);
  const Eigen::MatrixXd x = critic_input(feats, fresh.actions);
  const Eigen::RowVectorXd q_min =
      nets.q1.forward(x).row(0).cwiseMin(nets.q2.forward(x).row(0));
  const Eigen::RowVectorXd target = q_min - entropy_temp * fresh.log_probs;

  const nn::MlpCache cache = nets.value.forward_cached(batch.states);
  const Eigen::RowVectorXd residual = cache.output().row(0) - target;
  LossGrad out;
  out.loss = 0.5 * residual.squaredNorm() / n;
  out.grads = nets.value.backward(cache, residual / n, true).params;
  return out;
}

LossGrad policy_loss(const AgentNets& nets, const Batch& batch, const Eigen::MatrixXd& noise,
                     double entropy_temp, double* mean_entropy) {
  require_nonempty(batch, "policy update");
  const Eigen::Index b = batch.size();
  const auto n = static_cast<double>(b);
  const Eigen::MatrixXd feats = nets.features(batch.states);
  const nn::MlpCache actor_cache = nets.actor.forward_cached(feats);
  const BatchSample s = sample_batch(actor_cache.output(), noise);

  const Eigen::MatrixXd x = critic_input(feats, s.actions);
  const nn::MlpCache c1 = nets.q1.forward_cached(x);
  const nn::MlpCache c2 = nets.q2.forward_cached(x);
  const Eigen::RowVectorXd q1 = c1.output().row(0);
  const Eigen::RowVectorXd q2 = c2.output().row(0);

  // The min routes each sample's gradient to one critic (ties go to Q1).
  Eigen::MatrixXd g1 = Eigen::MatrixXd::Zero(1, b);
  Eigen::MatrixXd g2 = Eigen::MatrixXd::Zero(1, b);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < b; ++j) {
    const bool first = q1(j) <= q2(j);
    loss += entropy_temp * s.log_probs(j) - (first ? q1(j) : q2(j));
    (first ? g1 : g2)(0, j) = -1.0 / n;
  }
  const Eigen::MatrixXd da1 = nets.q1.backward(c1, g1, false).input_grad;
  const Eigen::MatrixXd da2 = nets.q2.backward(c2, g2, false).input_grad;
  const Eigen::Index action_row = x.rows() - 1;

  Eigen::MatrixXd head_grad(2, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const nn::SquashedComponent& c = s.parts[static_cast<std::size_t>(j)];
    const double dl_da = da1(action_row, j) + da2(action_row, j);
    head_grad(0, j) = entropy_temp / n * c.d_logp_d_mean + dl_da * c.d_action_d_mean;
    head_grad(1, j) = entropy_temp / n * c.d_logp_d_log_std + dl_da * c.d_action_d_log_std;
  }
  LossGrad out;
  out.loss = loss / n;
  out.grads = nets.actor.backward(actor_cache, head_grad, true).params;
  if (mean_entropy != nullptr) {
    *mean_entropy = -s.log_probs.mean();
  }
  return out;
}

std::pair<double, double> critic_update(AgentNets& nets, const Batch& batch, double gamma) {
  CriticLosses l = critic_losses(nets, batch, gamma);
  nets.q1_opt.step(nets.q1, l.grads1);
  nets.q2_opt.step(nets.q2, l.grads2);
  if (nets.trunk && l.trunk_grads) {
    nets.trunk_opt.step(*nets.trunk, *l.trunk_grads);
  }
  return {l.loss1, l.loss2};
}

double value_update(AgentNets& nets, const Batch& batch, double entropy_temp, Rng& rng) {
  require_nonempty(batch, "value update");
  const LossGrad l = value_loss(nets, batch, draw_noise(batch.size(), rng), entropy_temp);
  nets.value_opt.step(nets.value, l.grads);
  return l.loss;
}

double policy_update(AgentNets& nets, const Batch& batch, double entropy_temp, Rng& rng,
                     double* mean_entropy) {
  require_nonempty(batch, "policy update");
  const LossGrad l =
      policy_loss(nets, batch, draw_noise(batch.size(), rng), entropy_temp, mean_entropy);
  nets.actor_opt.step(nets.actor, l.grads);
  return l.loss;
}

void soft_update_target(AgentNets& nets, double tau_polyak) {
  if (!(tau_polyak > 0.0 && tau_polyak <= 1.0)) {
    throw std::invalid_argument("tau_polyak must lie in (0, 1]");
  }
  nets.value_target.soft_update_from(nets.value, tau_polyak);
}

std::optional<UpdateDiagnostics> update_step(AgentNets& nets, const ReplayBuffer& buffer,
                                             const SacHyper& hyper, Rng& rng) {
  const auto batch_size = static_cast<std::size_t>(hyper.batch_size);
  if (buffer.size() < batch_size || buffer.size() < hyper.warmup_steps) {
    return std::nullopt;
  }
  const Batch batch = buffer.sample(batch_size, rng);
  UpdateDiagnostics d;
  std::tie(d.q1_loss, d.q2_loss) = critic_update(nets, batch, hyper.gamma);
  d.value_loss = value_update(nets, batch, hyper.entropy_temp, rng);
  d.policy_loss = policy_update(nets, batch, hyper.entropy_temp, rng, &d.entropy);
  soft_update_target(nets, hyper.tau_polyak);
  d.buffer_size = buffer.size();
  if (!nets.all_finite()) {
    throw std::runtime_error("SAC update produced non-finite parameters");
  }
  return d;
}

}  // namespace mmrl::sac
