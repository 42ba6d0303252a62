#ifndef QUADSIM_TRAINER_HPP_
#define QUADSIM_TRAINER_HPP_

#include <functional>
#include <iosfwd>
#include <vector>

#include "quadsim/env.hpp"
#include "quadsim/ppo.hpp"

namespace quadsim {

struct TrainConfig {
  int workers = 64;
  int batch = 64000;  // transitions per epoch
  int epochs = 500;
  double gamma = 0.99;
  double lambda = 0.95;
  double lr_actor = 3e-4;
  double lr_critic = 1e-3;
  double eps_start = 0.5;
  double eps_end = 0.01;
  PpoConfig ppo;

  void Validate() const;
  // Exploration noise for `epoch` in [0, epochs), linear in the epoch.
  double Exploration(int epoch) const;
};

struct EpochStats {
  int epoch = 0;
  double mean_return = 0.0;
  double mean_episode_length = 0.0;
  int episodes = 0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double exploration = 0.0;
};

struct TrainResult {
  PolicyNet policy;
  CriticNet critic;
  std::vector<EpochStats> curve;
};

// Independent environment plus action-sampling stream of one worker.
// Episodes continue across batches.
class RolloutWorker {
 public:
  RolloutWorker(const EnvConfig& env, std::uint64_t seed);

  struct Segment {
    std::vector<Eigen::VectorXd> observations;
    std::vector<Eigen::VectorXd> actions;
    std::vector<double> log_probs;
    std::vector<double> rewards;
    std::vector<double> values;
    std::vector<std::uint8_t> dones;
    double bootstrap_value = 0.0;
    std::vector<double> episode_returns;
    std::vector<int> episode_lengths;
  };

  Segment Collect(const PolicyNet& actor, const CriticNet& critic, int steps,
                  double eps, double gamma);

 private:
  Env env_;
  std::mt19937_64 rng_;
  Eigen::VectorXd obs_;
  double episode_return_ = 0.0;
  int episode_length_ = 0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// PPO training with domain-randomized environments. Workers run on
// separate threads; results are merged in worker order so runs with equal
// seeds are identical.
TrainResult Train(const EnvConfig& env, const TrainConfig& cfg,
                  std::uint64_t seed, const EpochCallback& on_epoch = {});

// Training curve CSV: epoch,mean_return,mean_ep_len,clip_frac,kl
void WriteTrainingCurve(const std::vector<EpochStats>& curve, std::ostream& out);

struct EpisodeOutcome {
  int steps = 0;
  double flight_time = 0.0;  // steps / policy rate, s
  double total_reward = 0.0;
  Termination cause = Termination::kNone;
};

// Runs the deterministic (mean-action) policy for one episode.
EpisodeOutcome RunEpisode(const PolicyNet& policy, Env& env,
                          EpisodeCsvWriter* writer = nullptr);

}  // namespace quadsim

#endif  // QUADSIM_TRAINER_HPP_
