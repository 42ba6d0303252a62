#include "quadsim/policy.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace quadsim {

namespace {

constexpr char kMagic[8] = {'Q', 'S', 'P', 'O', 'L', 'I', 'C', 'Y'};
constexpr std::uint32_t kVersion = 1;
constexpr double kObsClip = 10.0;

template <typename T>
void WritePod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T ReadPod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return value;
}

void WriteVector(std::ostream& out, const Eigen::VectorXd& v) {
  WritePod<std::int32_t>(out, static_cast<std::int32_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

Eigen::VectorXd ReadVector(std::istream& in) {
  const auto n = ReadPod<std::int32_t>(in);
  if (n < 0 || n > (1 << 26)) throw std::runtime_error("checkpoint: bad size");
  Eigen::VectorXd v(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

ObsNormalizer::ObsNormalizer(int size)
    : mean(Eigen::VectorXd::Zero(size)), var(Eigen::VectorXd::Ones(size)) {}

void ObsNormalizer::Update(const Eigen::MatrixXd& batch) {
  const double n = static_cast<double>(batch.cols());
  if (n == 0) return;
  const Eigen::VectorXd batch_mean = batch.rowwise().mean();
  const Eigen::VectorXd batch_var =
      (batch.colwise() - batch_mean).array().square().rowwise().mean();
  if (count == 0.0) {
    mean = batch_mean;
    var = batch_var;
    count = n;
    return;
  }
  // Chan et al. parallel combination.
  const double total = count + n;
  const Eigen::VectorXd delta = batch_mean - mean;
  mean += delta * (n / total);
  var = (var * count + batch_var * n +
         delta.array().square().matrix() * (count * n / total)) /
        total;
  count = total;
}

Eigen::MatrixXd ObsNormalizer::Apply(const Eigen::MatrixXd& x) const {
  const Eigen::VectorXd inv_std =
      (var.array() + 1e-8).sqrt().inverse().matrix();
  Eigen::MatrixXd out = (x.colwise() - mean).array().colwise() * inv_std.array();
  return out.cwiseMax(-kObsClip).cwiseMin(kObsClip);
}

PolicyNet PolicyNet::Create(int obs_size, int action_size, int history,
                            std::mt19937_64& rng, int hidden) {
  PolicyNet net;
  net.mlp = Mlp({obs_size, hidden, hidden, action_size}, Activation::kRelu,
                Activation::kTanh);
  net.mlp.InitKaimingUniform(rng, 0.01);
  net.action_scale = Eigen::VectorXd::Ones(action_size);
  net.normalizer = ObsNormalizer(obs_size);
  net.history = history;
  return net;
}

Eigen::MatrixXd PolicyNet::Mean(const Eigen::MatrixXd& obs,
                                Mlp::Cache* cache) const {
  return action_scale.asDiagonal() * mlp.Forward(normalizer.Apply(obs), cache);
}

CriticNet CriticNet::Create(int obs_size, std::mt19937_64& rng, int hidden) {
  CriticNet net;
  net.mlp = Mlp({obs_size, hidden, hidden, 1}, Activation::kTanh,
                Activation::kIdentity);
  net.mlp.InitKaimingUniform(rng);
  net.normalizer = ObsNormalizer(obs_size);
  return net;
}

Eigen::RowVectorXd CriticNet::Value(const Eigen::MatrixXd& obs,
                                    Mlp::Cache* cache) const {
  return mlp.Forward(normalizer.Apply(obs), cache).row(0);
}

Eigen::RowVectorXd GaussianLogProb(const Eigen::MatrixXd& actions,
                                   const Eigen::MatrixXd& means, double eps) {
  const double d = static_cast<double>(actions.rows());
  const double log_norm =
      -d * std::log(eps) - 0.5 * d * std::log(2.0 * std::numbers::pi);
  return (-0.5 / (eps * eps)) * (actions - means).colwise().squaredNorm()
             .array() + log_norm;
}

PolicySample ForwardPolicy(const PolicyNet& net, const Eigen::VectorXd& obs,
                           double eps, std::mt19937_64& rng) {
  PolicySample sample;
  sample.mean = net.Mean(obs).col(0);
  if (eps <= 0.0) {
    sample.raw = sample.mean;
    sample.action = sample.mean;
    return sample;
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  sample.raw = sample.mean;
  for (Eigen::Index i = 0; i < sample.raw.size(); ++i) {
    sample.raw(i) += eps * normal(rng);
  }
  sample.action =
      sample.raw.cwiseMax(-net.action_scale).cwiseMin(net.action_scale);
  sample.log_prob = GaussianLogProb(sample.raw, sample.mean, eps)(0);
  return sample;
}

void SavePolicy(const PolicyNet& net, std::ostream& out) {
  out.write(kMagic, sizeof(kMagic));
  WritePod(out, kVersion);
  WritePod<std::int32_t>(out, net.history);
  WritePod<std::int32_t>(out, static_cast<std::int32_t>(net.mlp.hidden_activation()));
  WritePod<std::int32_t>(out, static_cast<std::int32_t>(net.mlp.output_activation()));
  WritePod<std::int32_t>(out, static_cast<std::int32_t>(net.mlp.sizes().size()));
  for (int s : net.mlp.sizes()) WritePod<std::int32_t>(out, s);
  WriteVector(out, net.action_scale);
  WritePod(out, net.normalizer.count);
  WriteVector(out, net.normalizer.mean);
  WriteVector(out, net.normalizer.var);
  WriteVector(out, net.mlp.params());
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

PolicyNet LoadPolicy(std::istream& in) {
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  if (ReadPod<std::uint32_t>(in) != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version");
  }
  PolicyNet net;
  net.history = ReadPod<std::int32_t>(in);
  const auto hidden = static_cast<Activation>(ReadPod<std::int32_t>(in));
  const auto output = static_cast<Activation>(ReadPod<std::int32_t>(in));
  const auto n_sizes = ReadPod<std::int32_t>(in);
  if (n_sizes < 2 || n_sizes > 64) throw std::runtime_error("checkpoint: bad shape");
  std::vector<int> sizes;
  for (int i = 0; i < n_sizes; ++i) sizes.push_back(ReadPod<std::int32_t>(in));
  net.mlp = Mlp(sizes, hidden, output);
  net.action_scale = ReadVector(in);
  net.normalizer.count = ReadPod<double>(in);
  net.normalizer.mean = ReadVector(in);
  net.normalizer.var = ReadVector(in);
  const Eigen::VectorXd params = ReadVector(in);
  if (params.size() != net.mlp.params().size() ||
      net.action_scale.size() != sizes.back() ||
      net.normalizer.mean.size() != sizes.front() ||
      net.normalizer.var.size() != sizes.front()) {
    throw std::runtime_error("checkpoint: inconsistent shapes");
  }
  net.mlp.params() = params;
  return net;
}

void SavePolicy(const PolicyNet& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  SavePolicy(net, out);
}

PolicyNet LoadPolicy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return LoadPolicy(in);
}

}  // namespace quadsim
