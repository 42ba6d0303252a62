#ifndef QUADSIM_PPO_HPP_
#define QUADSIM_PPO_HPP_

#include <span>
#include <vector>

#include "quadsim/policy.hpp"

namespace quadsim {

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// Generalized advantage estimation over one contiguous segment.
// dones[t] cuts both the bootstrap and the recursion after step t;
// `bootstrap_value` is V of the state following the last step.
GaeResult Gae(std::span<const double> rewards, std::span<const double> values,
              std::span<const std::uint8_t> dones, double gamma, double lambda,
              double bootstrap_value);

// Transitions assembled from all workers, one column per transition.
struct RolloutBatch {
  Eigen::MatrixXd observations;
  Eigen::MatrixXd actions;  // unclamped Gaussian draws
  Eigen::RowVectorXd log_probs;
  Eigen::RowVectorXd rewards;
  Eigen::RowVectorXd values;
  std::vector<std::uint8_t> dones;
  Eigen::RowVectorXd advantages;
  Eigen::RowVectorXd returns;

  Eigen::Index size() const { return observations.cols(); }
};

struct LossAndGrad {
  double loss = 0.0;
  Eigen::VectorXd grad;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

// Clipped surrogate loss (negated for minimization), averaged over columns.
LossAndGrad ActorLoss(const PolicyNet& net, const Eigen::MatrixXd& obs,
                      const Eigen::MatrixXd& actions,
                      const Eigen::RowVectorXd& old_log_probs,
                      const Eigen::RowVectorXd& advantages, double eps,
                      double clip);

// Mean squared error of the value prediction against the returns.
LossAndGrad CriticLoss(const CriticNet& net, const Eigen::MatrixXd& obs,
                       const Eigen::RowVectorXd& returns);

struct PpoConfig {
  double clip = 0.2;
  int passes = 10;
  int minibatch = 4000;
  double max_grad_norm = 0.5;
};

struct PpoStats {
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

class PpoLearner {
 public:
  PpoLearner(PolicyNet actor, CriticNet critic, double lr_actor,
             double lr_critic, PpoConfig config);

  // Normalizes the batch advantages and runs the configured passes of
  // minibatch updates. Throws std::runtime_error on a non-finite loss.
  PpoStats Update(const RolloutBatch& batch, double eps, std::mt19937_64& rng);

  PolicyNet& actor() { return actor_; }
  const PolicyNet& actor() const { return actor_; }
  CriticNet& critic() { return critic_; }
  const CriticNet& critic() const { return critic_; }

 private:
  PolicyNet actor_;
  CriticNet critic_;
  Adam actor_opt_;
  Adam critic_opt_;
  PpoConfig config_;
};

}  // namespace quadsim

#endif  // QUADSIM_PPO_HPP_
