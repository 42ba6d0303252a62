#include "quadsim/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace quadsim {

namespace {

void ClipNorm(Eigen::VectorXd& grad, double max_norm) {
  if (max_norm <= 0.0) return;
  const double norm = grad.norm();
  if (norm > max_norm) grad *= max_norm / norm;
}

Eigen::MatrixXd SelectColumns(const Eigen::MatrixXd& m,
                              std::span<const Eigen::Index> idx) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    out.col(static_cast<Eigen::Index>(j)) = m.col(idx[j]);
  }
  return out;
}

Eigen::RowVectorXd SelectColumns(const Eigen::RowVectorXd& v,
                                 std::span<const Eigen::Index> idx) {
  Eigen::RowVectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    out(static_cast<Eigen::Index>(j)) = v(idx[j]);
  }
  return out;
}

}  // namespace

GaeResult Gae(std::span<const double> rewards, std::span<const double> values,
              std::span<const std::uint8_t> dones, double gamma, double lambda,
              double bootstrap_value) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) {
    throw std::invalid_argument("Gae: length mismatch");
  }
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_advantage = 0.0;
  double next_value = bootstrap_value;
  for (std::size_t i = n; i-- > 0;) {
    const double live = dones[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * next_value * live - values[i];
    next_advantage = delta + gamma * lambda * live * next_advantage;
    out.advantages[i] = next_advantage;
    out.returns[i] = next_advantage + values[i];
    next_value = values[i];
  }
  return out;
}

LossAndGrad ActorLoss(const PolicyNet& net, const Eigen::MatrixXd& obs,
                      const Eigen::MatrixXd& actions,
                      const Eigen::RowVectorXd& old_log_probs,
                      const Eigen::RowVectorXd& advantages, double eps,
                      double clip) {
  const double n = static_cast<double>(obs.cols());
  Mlp::Cache cache;
  const Eigen::MatrixXd squashed =
      net.mlp.Forward(net.normalizer.Apply(obs), &cache);
  const Eigen::MatrixXd mean = net.action_scale.asDiagonal() * squashed;
  const Eigen::RowVectorXd log_probs = GaussianLogProb(actions, mean, eps);
  const Eigen::RowVectorXd ratio = (log_probs - old_log_probs).array().exp();

  LossAndGrad out;
  Eigen::RowVectorXd grad_log_prob(obs.cols());
  double objective = 0.0;
  int clipped = 0;
  double kl = 0.0;
  for (Eigen::Index j = 0; j < obs.cols(); ++j) {
    const double r = ratio(j);
    const double a = advantages(j);
    const double unclipped = r * a;
    const double bounded = std::clamp(r, 1.0 - clip, 1.0 + clip) * a;
    objective += std::min(unclipped, bounded);
    // The unclipped branch carries the gradient; the clipped one is flat.
    grad_log_prob(j) = unclipped <= bounded ? -a * r / n : 0.0;
    if (std::abs(r - 1.0) > clip) ++clipped;
    kl += (r - 1.0) - std::log(r);
  }
  out.loss = -objective / n;
  out.clip_fraction = clipped / n;
  out.approx_kl = kl / n;

  // d log_prob / d mean = (a - mean) / eps^2, then through the scale.
  const Eigen::MatrixXd grad_mean =
      ((actions - mean) / (eps * eps)) * grad_log_prob.asDiagonal();
  const Eigen::MatrixXd grad_out = net.action_scale.asDiagonal() * grad_mean;
  out.grad = net.mlp.Backward(cache, grad_out);
  return out;
}

LossAndGrad CriticLoss(const CriticNet& net, const Eigen::MatrixXd& obs,
                       const Eigen::RowVectorXd& returns) {
  const double n = static_cast<double>(obs.cols());
  Mlp::Cache cache;
  const Eigen::RowVectorXd values =
      net.mlp.Forward(net.normalizer.Apply(obs), &cache).row(0);
  const Eigen::RowVectorXd diff = values - returns;
  LossAndGrad out;
  out.loss = diff.squaredNorm() / n;
  const Eigen::MatrixXd grad_out = (2.0 / n) * diff;
  out.grad = net.mlp.Backward(cache, grad_out);
  return out;
}

PpoLearner::PpoLearner(PolicyNet actor, CriticNet critic, double lr_actor,
                       double lr_critic, PpoConfig config)
    : actor_(std::move(actor)),
      critic_(std::move(critic)),
      actor_opt_(actor_.mlp.params().size(), lr_actor),
      critic_opt_(critic_.mlp.params().size(), lr_critic),
      config_(config) {}

PpoStats PpoLearner::Update(const RolloutBatch& batch, double eps,
                            std::mt19937_64& rng) {
  const Eigen::Index n = batch.size();
  if (n == 0) return {};
  const double adv_mean = batch.advantages.mean();
  const double adv_std = std::sqrt(
      (batch.advantages.array() - adv_mean).square().mean());
  const Eigen::RowVectorXd advantages =
      (batch.advantages.array() - adv_mean) / (adv_std + 1e-8);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const Eigen::Index mb = std::clamp<Eigen::Index>(config_.minibatch, 1, n);

  PpoStats stats;
  int updates = 0;
  for (int pass = 0; pass < config_.passes; ++pass) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += mb) {
      const Eigen::Index len = std::min(mb, n - start);
      const std::span<const Eigen::Index> idx(order.data() + start,
                                              static_cast<std::size_t>(len));
      const Eigen::MatrixXd obs = SelectColumns(batch.observations, idx);

      LossAndGrad actor = ActorLoss(
          actor_, obs, SelectColumns(batch.actions, idx),
          SelectColumns(batch.log_probs, idx), SelectColumns(advantages, idx),
          eps, config_.clip);
      LossAndGrad critic =
          CriticLoss(critic_, obs, SelectColumns(batch.returns, idx));
      if (!std::isfinite(actor.loss) || !std::isfinite(critic.loss) ||
          !actor.grad.allFinite() || !critic.grad.allFinite()) {
        throw std::runtime_error(
            "ppo: non-finite loss (actor " + std::to_string(actor.loss) +
            ", critic " + std::to_string(critic.loss) + ")");
      }
      ClipNorm(actor.grad, config_.max_grad_norm);
      ClipNorm(critic.grad, config_.max_grad_norm);
      actor_opt_.Step(actor_.mlp.params(), actor.grad);
      critic_opt_.Step(critic_.mlp.params(), critic.grad);

      stats.actor_loss += actor.loss;
      stats.critic_loss += critic.loss;
      stats.clip_fraction += actor.clip_fraction;
      stats.approx_kl += actor.approx_kl;
      ++updates;
    }
  }
  stats.actor_loss /= updates;
  stats.critic_loss /= updates;
  stats.clip_fraction /= updates;
  stats.approx_kl /= updates;
  return stats;
}

}  // namespace quadsim
