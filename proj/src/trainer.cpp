#include "quadsim/trainer.hpp"

#include <ostream>
#include <stdexcept>
#include <thread>

namespace quadsim {

void TrainConfig::Validate() const {
  if (workers < 1 || batch < workers || epochs < 1) {
    throw std::invalid_argument("TrainConfig: bad worker/batch/epoch counts");
  }
  if (!(gamma > 0 && gamma < 1 && lambda > 0 && lambda < 1)) {
    throw std::invalid_argument("TrainConfig: gamma and lambda must be in (0,1)");
  }
  if (!(eps_start > eps_end && eps_end > 0)) {
    throw std::invalid_argument("TrainConfig: need eps_start > eps_end > 0");
  }
  if (ppo.passes < 1 || ppo.minibatch < 1 || !(ppo.clip > 0)) {
    throw std::invalid_argument("TrainConfig: bad PPO settings");
  }
}

double TrainConfig::Exploration(int epoch) const {
  if (epochs == 1) return eps_start;
  const double frac = static_cast<double>(epoch) / (epochs - 1);
  return eps_start + (eps_end - eps_start) * frac;
}

RolloutWorker::RolloutWorker(const EnvConfig& env, std::uint64_t seed)
    : env_(env, seed), rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
  obs_ = env_.Reset();
}

RolloutWorker::Segment RolloutWorker::Collect(const PolicyNet& actor,
                                              const CriticNet& critic,
                                              int steps, double eps,
                                              double gamma) {
  Segment seg;
  for (int t = 0; t < steps; ++t) {
    const PolicySample sample = ForwardPolicy(actor, obs_, eps, rng_);
    const double value = critic.Value(obs_)(0);
    const EnvStep step = std::get<EnvStep>(env_.Step(sample.action));

    double reward = step.reward;
    // Time-limit ends are not failures: fold the bootstrap into the reward.
    if (step.done && !step.terminated) {
      reward += gamma * critic.Value(step.observation)(0);
    }
    seg.observations.push_back(obs_);
    seg.actions.push_back(sample.raw);
    seg.log_probs.push_back(sample.log_prob);
    seg.rewards.push_back(reward);
    seg.values.push_back(value);
    seg.dones.push_back(step.done ? 1 : 0);

    episode_return_ += step.reward;
    ++episode_length_;
    if (step.done) {
      seg.episode_returns.push_back(episode_return_);
      seg.episode_lengths.push_back(episode_length_);
      episode_return_ = 0.0;
      episode_length_ = 0;
      obs_ = env_.Reset();
    } else {
      obs_ = step.observation;
    }
  }
  seg.bootstrap_value = critic.Value(obs_)(0);
  return seg;
}

TrainResult Train(const EnvConfig& env, const TrainConfig& cfg,
                  std::uint64_t seed, const EpochCallback& on_epoch) {
  cfg.Validate();
  env.Validate();
  std::mt19937_64 rng(seed);
  const int obs_size = env.ObservationSize();
  PpoLearner learner(PolicyNet::Create(obs_size, kActionDim, env.history, rng),
                     CriticNet::Create(obs_size, rng), cfg.lr_actor,
                     cfg.lr_critic, cfg.ppo);

  std::vector<RolloutWorker> workers;
  workers.reserve(static_cast<std::size_t>(cfg.workers));
  for (int w = 0; w < cfg.workers; ++w) {
    workers.emplace_back(env, seed * 1000003ULL + static_cast<std::uint64_t>(w) + 1);
  }

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double eps = cfg.Exploration(epoch);
    std::vector<RolloutWorker::Segment> segments(workers.size());
    {
      std::vector<std::jthread> threads;
      for (std::size_t w = 0; w < workers.size(); ++w) {
        const int steps = cfg.batch / cfg.workers +
                          (static_cast<int>(w) < cfg.batch % cfg.workers ? 1 : 0);
        threads.emplace_back([&, w, steps] {
          segments[w] = workers[w].Collect(learner.actor(), learner.critic(),
                                           steps, eps, cfg.gamma);
        });
      }
    }

    RolloutBatch batch;
    const Eigen::Index n = cfg.batch;
    batch.observations.resize(obs_size, n);
    batch.actions.resize(kActionDim, n);
    batch.log_probs.resize(n);
    batch.rewards.resize(n);
    batch.values.resize(n);
    batch.advantages.resize(n);
    batch.returns.resize(n);
    EpochStats stats;
    stats.epoch = epoch;
    stats.exploration = eps;
    double return_sum = 0.0;
    double length_sum = 0.0;
    Eigen::Index col = 0;
    for (const auto& seg : segments) {
      const GaeResult gae = Gae(seg.rewards, seg.values, seg.dones, cfg.gamma,
                                cfg.lambda, seg.bootstrap_value);
      for (std::size_t t = 0; t < seg.rewards.size(); ++t, ++col) {
        batch.observations.col(col) = seg.observations[t];
        batch.actions.col(col) = seg.actions[t];
        batch.log_probs(col) = seg.log_probs[t];
        batch.rewards(col) = seg.rewards[t];
        batch.values(col) = seg.values[t];
        batch.dones.push_back(seg.dones[t]);
        batch.advantages(col) = gae.advantages[t];
        batch.returns(col) = gae.returns[t];
      }
      for (std::size_t e = 0; e < seg.episode_returns.size(); ++e) {
        return_sum += seg.episode_returns[e];
        length_sum += seg.episode_lengths[e];
        ++stats.episodes;
      }
    }
    if (stats.episodes > 0) {
      stats.mean_return = return_sum / stats.episodes;
      stats.mean_episode_length = length_sum / stats.episodes;
    }

    const PpoStats ppo = learner.Update(batch, eps, rng);
    stats.clip_fraction = ppo.clip_fraction;
    stats.approx_kl = ppo.approx_kl;

    // Normalizer statistics advance after the update so that the stored
    // log-probabilities stay consistent within an epoch.
    learner.actor().normalizer.Update(batch.observations);
    learner.critic().normalizer.Update(batch.observations);

    result.curve.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  result.policy = learner.actor();
  result.critic = learner.critic();
  return result;
}

void WriteTrainingCurve(const std::vector<EpochStats>& curve,
                        std::ostream& out) {
  out << "epoch,mean_return,mean_ep_len,clip_frac,kl\n";
  for (const EpochStats& s : curve) {
    out << s.epoch << ',' << s.mean_return << ',' << s.mean_episode_length
        << ',' << s.clip_fraction << ',' << s.approx_kl << '\n';
  }
}

EpisodeOutcome RunEpisode(const PolicyNet& policy, Env& env,
                          EpisodeCsvWriter* writer) {
  EpisodeOutcome outcome;
  Eigen::VectorXd obs = env.Reset();
  const double rate = PolicyRateHz(env.config().level);
  while (true) {
    const Eigen::VectorXd mean = policy.Mean(obs).col(0);
    const Eigen::Vector4d action =
        mean.cwiseMax(-policy.action_scale).cwiseMin(policy.action_scale);
    const EnvStep step = std::get<EnvStep>(env.Step(action));
    if (writer) writer->Write(step);
    outcome.total_reward += step.reward;
    ++outcome.steps;
    obs = step.observation;
    if (step.done) {
      outcome.cause = step.info.cause;
      break;
    }
  }
  outcome.flight_time = outcome.steps / rate;
  return outcome;
}

}  // namespace quadsim
