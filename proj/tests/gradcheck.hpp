#pragma once

// Finite-difference checks of the hand-written gradients. Coordinates whose
// +/-h perturbation changes any ReLU pattern, min(Q1, Q2) choice or log-std
// clamp state are skipped, because the central difference is meaningless
// across a kink.

#include <cmath>
#include <functional>
#include <vector>

#include "mmrl/nn.hpp"
#include "mmrl/sac.hpp"
#include "oracles.hpp"

namespace gradcheck {

constexpr double kStep = 1e-5;
constexpr double kRelTol = 1e-4;
// Absolute slack for gradients so small that the central difference is
// dominated by rounding of the loss (about 1e-16 |L| / h).
constexpr double kAbsFloor = 1e-10;

struct Stats {
  int checked = 0;
  int failed = 0;
  int skipped = 0;
  double worst = 0.0;  // largest relative error among non-floor cases

  void record(double analytic, double numeric) {
    ++checked;
    const double diff = std::abs(analytic - numeric);
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (!oracle::gradients_agree(analytic, numeric, kRelTol, kAbsFloor)) {
      ++failed;
    }
    if (diff > kAbsFloor && scale > 0) {
      worst = std::max(worst, diff / scale);
    }
  }
  bool ok() const { return failed == 0 && checked > 0; }
};

using Signature = std::vector<char>;

inline void append_pattern(Signature& sig, const mmrl::nn::MlpCache& cache) {
  // Hidden layers only; the output layer has no kink.
  for (std::size_t l = 0; l + 1 < cache.pre.size(); ++l) {
    const Eigen::MatrixXd& pre = cache.pre[l];
    for (Eigen::Index i = 0; i < pre.size(); ++i) sig.push_back(pre.data()[i] > 0.0);
  }
}

// Central-difference check of `loss` along `count` random parameters of
// `net`, against `analytic` laid out like Mlp::flat_params.
inline void check_params(mmrl::nn::Mlp& net, const Eigen::VectorXd& analytic,
                         const std::function<double()>& loss,
                         const std::function<Signature()>& signature, int count, mmrl::Rng& rng,
                         Stats& stats) {
  const Signature base = signature();
  int done = 0;
  for (int attempt = 0; done < count && attempt < 20 * count; ++attempt) {
    const std::size_t k = rng.below(net.param_count());
    const double x0 = net.param(k);
    net.set_param(k, x0 + kStep);
    const double up = loss();
    const bool smooth_up = signature() == base;
    net.set_param(k, x0 - kStep);
    const double down = loss();
    const bool smooth_down = signature() == base;
    net.set_param(k, x0);
    if (!smooth_up || !smooth_down) {
      ++stats.skipped;
      continue;
    }
    stats.record(analytic(static_cast<Eigen::Index>(k)), (up - down) / (2 * kStep));
    ++done;
  }
}

// Parameter and input gradients of sum(G .* net(X)) for one network.
inline void check_network(mmrl::nn::Mlp net, int batch, int count, mmrl::Rng& rng, Stats& stats) {
  Eigen::MatrixXd x(net.input_dim(), batch);
  Eigen::MatrixXd g(net.output_dim(), batch);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();

  const auto cache = net.forward_cached(x);
  const auto bw = net.backward(cache, g, true);
  const Eigen::VectorXd analytic = bw.params.flat();

  auto loss = [&] { return (g.array() * net.forward(x).array()).sum(); };
  Eigen::MatrixXd probe = x;
  auto signature_at = [&](const Eigen::MatrixXd& in) {
    Signature s;
    append_pattern(s, net.forward_cached(in));
    return s;
  };
  check_params(net, analytic, loss, [&] { return signature_at(x); }, count, rng, stats);

  // Input gradient.
  const Signature base = signature_at(x);
  int done = 0;
  for (int attempt = 0; done < count && attempt < 20 * count; ++attempt) {
    const Eigen::Index k = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(x.size())));
    probe = x;
    probe.data()[k] += kStep;
    const double up = (g.array() * net.forward(probe).array()).sum();
    const bool s_up = signature_at(probe) == base;
    probe.data()[k] -= 2 * kStep;
    const double down = (g.array() * net.forward(probe).array()).sum();
    const bool s_down = signature_at(probe) == base;
    if (!s_up || !s_down) {
      ++stats.skipped;
      continue;
    }
    stats.record(bw.input_grad.data()[k], (up - down) / (2 * kStep));
    ++done;
  }
}

// Kink signature of everything the three SAC losses evaluate.
inline Signature sac_signature(const mmrl::sac::AgentNets& nets, const mmrl::sac::Batch& batch,
                               const Eigen::MatrixXd& noise) {
  Signature s;
  const Eigen::MatrixXd feats = nets.features(batch.states);
  if (nets.trunk) append_pattern(s, nets.trunk->forward_cached(batch.states));
  const auto actor = nets.actor.forward_cached(feats);
  append_pattern(s, actor);
  const Eigen::MatrixXd& head = actor.output();
  Eigen::MatrixXd x_new(feats.rows() + 1, feats.cols());
  Eigen::MatrixXd x_old(feats.rows() + 1, feats.cols());
  x_new.topRows(feats.rows()) = feats;
  x_old.topRows(feats.rows()) = feats;
  x_old.bottomRows(1) = batch.actions;
  for (Eigen::Index j = 0; j < head.cols(); ++j) {
    const double ls = head(1, j);
    s.push_back(ls > mmrl::nn::kLogStdMin && ls < mmrl::nn::kLogStdMax);
    x_new(feats.rows(), j) = mmrl::nn::squashed_component(head(0, j), ls, noise(0, j)).action;
  }
  const auto q1n = nets.q1.forward_cached(x_new);
  const auto q2n = nets.q2.forward_cached(x_new);
  append_pattern(s, q1n);
  append_pattern(s, q2n);
  for (Eigen::Index j = 0; j < head.cols(); ++j) s.push_back(q1n.output()(0, j) <= q2n.output()(0, j));
  append_pattern(s, nets.q1.forward_cached(x_old));
  append_pattern(s, nets.q2.forward_cached(x_old));
  append_pattern(s, nets.value.forward_cached(batch.states));
  append_pattern(s, nets.value_target.forward_cached(batch.next_states));
  return s;
}

// Critic, value and policy loss gradients against finite differences.
inline void check_sac_losses(mmrl::sac::AgentNets& nets, const mmrl::sac::Batch& batch,
                             const Eigen::MatrixXd& noise, double gamma, double temp, int count,
                             mmrl::Rng& rng, Stats& critic, Stats& value, Stats& policy) {
  auto sig = [&] { return sac_signature(nets, batch, noise); };

  const auto c = mmrl::sac::critic_losses(nets, batch, gamma);
  check_params(nets.q1, c.grads1.flat(),
               [&] { return mmrl::sac::critic_losses(nets, batch, gamma).loss1; }, sig, count, rng,
               critic);
  check_params(nets.q2, c.grads2.flat(),
               [&] { return mmrl::sac::critic_losses(nets, batch, gamma).loss2; }, sig, count, rng,
               critic);
  if (nets.trunk && c.trunk_grads) {
    check_params(*nets.trunk, c.trunk_grads->flat(),
                 [&] {
                   const auto l = mmrl::sac::critic_losses(nets, batch, gamma);
                   return l.loss1 + l.loss2;
                 },
                 sig, count, rng, critic);
  }

  const auto v = mmrl::sac::value_loss(nets, batch, noise, temp);
  check_params(nets.value, v.grads.flat(),
               [&] { return mmrl::sac::value_loss(nets, batch, noise, temp).loss; }, sig, count,
               rng, value);

  const auto p = mmrl::sac::policy_loss(nets, batch, noise, temp);
  check_params(nets.actor, p.grads.flat(),
               [&] { return mmrl::sac::policy_loss(nets, batch, noise, temp).loss; }, sig, count,
               rng, policy);
}

}  // namespace gradcheck
