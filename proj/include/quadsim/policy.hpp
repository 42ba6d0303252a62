#ifndef QUADSIM_POLICY_HPP_
#define QUADSIM_POLICY_HPP_

#include <iosfwd>
#include <string>

#include "quadsim/mlp.hpp"

namespace quadsim {

// Running mean and variance of observations. Frozen while collecting a
// batch, updated between batches.
struct ObsNormalizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  double count = 0.0;

  explicit ObsNormalizer(int size = 0);
  void Update(const Eigen::MatrixXd& batch);  // one sample per column
  Eigen::MatrixXd Apply(const Eigen::MatrixXd& x) const;
};

// Actor: obs -> 50 -> 50 -> action, ReLU hidden layers, tanh-squashed mean
// scaled to the action box [-scale, scale].
struct PolicyNet {
  Mlp mlp;
  Eigen::VectorXd action_scale;
  ObsNormalizer normalizer;
  int history = 2;

  static PolicyNet Create(int obs_size, int action_size, int history,
                          std::mt19937_64& rng, int hidden = 50);
  Eigen::MatrixXd Mean(const Eigen::MatrixXd& obs,
                       Mlp::Cache* cache = nullptr) const;
};

// Critic: obs -> 64 -> 64 -> 1 with tanh hidden layers.
struct CriticNet {
  Mlp mlp;
  ObsNormalizer normalizer;

  static CriticNet Create(int obs_size, std::mt19937_64& rng, int hidden = 64);
  Eigen::RowVectorXd Value(const Eigen::MatrixXd& obs,
                           Mlp::Cache* cache = nullptr) const;
};

struct PolicySample {
  Eigen::VectorXd action;   // clamped to the action box
  Eigen::VectorXd raw;      // unclamped Gaussian draw
  double log_prob = 0.0;    // of `raw` under N(mean, eps^2 I)
  Eigen::VectorXd mean;
};

// Draws a ~ N(pi(obs), eps^2 I). With eps == 0 the mean is returned.
PolicySample ForwardPolicy(const PolicyNet& net, const Eigen::VectorXd& obs,
                           double eps, std::mt19937_64& rng);

// Diagonal Gaussian log density of each column of `actions`.
Eigen::RowVectorXd GaussianLogProb(const Eigen::MatrixXd& actions,
                                   const Eigen::MatrixXd& means, double eps);

// Versioned binary checkpoint of a policy.
void SavePolicy(const PolicyNet& net, std::ostream& out);
PolicyNet LoadPolicy(std::istream& in);
void SavePolicy(const PolicyNet& net, const std::string& path);
PolicyNet LoadPolicy(const std::string& path);

}  // namespace quadsim

#endif  // QUADSIM_POLICY_HPP_
