#include "quadsim/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace quadsim {

namespace {

Eigen::MatrixXd Activate(const Eigen::MatrixXd& z, Activation act) {
  switch (act) {
    case Activation::kIdentity:
      return z;
    case Activation::kRelu:
      return z.cwiseMax(0.0);
    case Activation::kTanh:
      return z.array().tanh().matrix();
  }
  return z;
}

// Multiplies the upstream gradient by the activation derivative at z.
Eigen::MatrixXd ActivationBackward(const Eigen::MatrixXd& z,
                                   const Eigen::MatrixXd& upstream,
                                   Activation act) {
  switch (act) {
    case Activation::kIdentity:
      return upstream;
    case Activation::kRelu:
      return (z.array() > 0.0).select(upstream, 0.0);
    case Activation::kTanh: {
      const Eigen::ArrayXXd t = z.array().tanh();
      return (upstream.array() * (1.0 - t.square())).matrix();
    }
  }
  return upstream;
}

}  // namespace

Mlp::Mlp(std::vector<int> sizes, Activation hidden, Activation output)
    : sizes_(std::move(sizes)), hidden_(hidden), output_(output) {
  if (sizes_.size() < 2) throw std::invalid_argument("Mlp: need >= 2 sizes");
  Eigen::Index total = 0;
  for (std::size_t i = 0; i + 1 < sizes_.size(); ++i) {
    offsets_.push_back(total);
    total += static_cast<Eigen::Index>(sizes_[i + 1]) * (sizes_[i] + 1);
  }
  params_ = Eigen::VectorXd::Zero(total);
}

void Mlp::InitKaimingUniform(std::mt19937_64& rng, double output_gain) {
  for (int l = 0; l < num_layers(); ++l) {
    const double bound = std::sqrt(6.0 / sizes_[l]);
    std::uniform_real_distribution<double> dist(-bound, bound);
    WeightMap w = weight(l);
    const double gain = l + 1 == num_layers() ? output_gain : 1.0;
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = gain * dist(rng);
    }
    bias(l).setZero();
  }
}

Mlp::WeightMap Mlp::weight(int layer) {
  return WeightMap(params_.data() + WeightOffset(layer), sizes_[layer + 1],
                   sizes_[layer]);
}

Mlp::ConstWeightMap Mlp::weight(int layer) const {
  return ConstWeightMap(params_.data() + WeightOffset(layer),
                        sizes_[layer + 1], sizes_[layer]);
}

Mlp::BiasMap Mlp::bias(int layer) {
  return BiasMap(params_.data() + BiasOffset(layer), sizes_[layer + 1]);
}

Mlp::ConstBiasMap Mlp::bias(int layer) const {
  return ConstBiasMap(params_.data() + BiasOffset(layer), sizes_[layer + 1]);
}

Eigen::MatrixXd Mlp::Forward(const Eigen::MatrixXd& x, Cache* cache) const {
  if (x.rows() != input_size()) {
    throw std::invalid_argument("Mlp::Forward: input size mismatch");
  }
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Eigen::MatrixXd h = x;
  for (int l = 0; l < num_layers(); ++l) {
    Eigen::MatrixXd z = weight(l) * h;
    z.colwise() += bias(l);
    const Activation act = l + 1 == num_layers() ? output_ : hidden_;
    Eigen::MatrixXd next = Activate(z, act);
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->pre.push_back(std::move(z));
    }
    h = std::move(next);
  }
  return h;
}

Eigen::VectorXd Mlp::Backward(const Cache& cache,
                              const Eigen::MatrixXd& grad_output) const {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params_.size());
  Eigen::MatrixXd upstream = grad_output;
  for (int l = num_layers() - 1; l >= 0; --l) {
    const Activation act = l + 1 == num_layers() ? output_ : hidden_;
    const Eigen::MatrixXd delta = ActivationBackward(cache.pre[l], upstream, act);
    WeightMap(grad.data() + WeightOffset(l), sizes_[l + 1], sizes_[l]) =
        delta * cache.inputs[l].transpose();
    BiasMap(grad.data() + BiasOffset(l), sizes_[l + 1]) = delta.rowwise().sum();
    if (l > 0) upstream = weight(l).transpose() * delta;
  }
  return grad;
}

Adam::Adam(Eigen::Index size, double learning_rate, double beta1, double beta2,
           double epsilon)
    : lr_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      epsilon_(epsilon),
      m_(Eigen::VectorXd::Zero(size)),
      v_(Eigen::VectorXd::Zero(size)) {}

void Adam::Step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  ++steps_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  params.array() -=
      lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + epsilon_);
}

}  // namespace quadsim
