#ifndef QUADSIM_MLP_HPP_
#define QUADSIM_MLP_HPP_

#include <Eigen/Dense>

#include <random>
#include <vector>

namespace quadsim {

enum class Activation { kIdentity, kRelu, kTanh };

// Fully connected network with parameters stored in one flat vector so that
// optimizers and finite-difference checks can treat it as a single array.
// Inputs are column-major batches: one sample per column.
class Mlp {
 public:
  using WeightMap = Eigen::Map<Eigen::MatrixXd>;
  using ConstWeightMap = Eigen::Map<const Eigen::MatrixXd>;
  using BiasMap = Eigen::Map<Eigen::VectorXd>;
  using ConstBiasMap = Eigen::Map<const Eigen::VectorXd>;

  // Activations recorded by Forward for Backward.
  struct Cache {
    std::vector<Eigen::MatrixXd> inputs;  // input to each layer
    std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
  };

  Mlp() = default;
  Mlp(std::vector<int> sizes, Activation hidden, Activation output);

  // Hidden and output weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)),
  // biases zero. The output layer is additionally scaled by `output_gain`.
  void InitKaimingUniform(std::mt19937_64& rng, double output_gain = 1.0);

  Eigen::MatrixXd Forward(const Eigen::MatrixXd& x, Cache* cache = nullptr) const;
  // Gradient of a scalar loss with respect to all parameters, given the
  // loss gradient with respect to the network output.
  Eigen::VectorXd Backward(const Cache& cache,
                           const Eigen::MatrixXd& grad_output) const;

  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }
  Activation hidden_activation() const { return hidden_; }
  Activation output_activation() const { return output_; }

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

  WeightMap weight(int layer);
  ConstWeightMap weight(int layer) const;
  BiasMap bias(int layer);
  ConstBiasMap bias(int layer) const;

 private:
  Eigen::Index WeightOffset(int layer) const { return offsets_[layer]; }
  Eigen::Index BiasOffset(int layer) const {
    return offsets_[layer] +
           static_cast<Eigen::Index>(sizes_[layer + 1]) * sizes_[layer];
  }

  std::vector<int> sizes_;
  std::vector<Eigen::Index> offsets_;
  Activation hidden_ = Activation::kRelu;
  Activation output_ = Activation::kIdentity;
  Eigen::VectorXd params_;
};

// Adam over a flat parameter vector.
class Adam {
 public:
  Adam() = default;
  Adam(Eigen::Index size, double learning_rate, double beta1 = 0.9,
       double beta2 = 0.999, double epsilon = 1e-8);
  void Step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
  double learning_rate() const { return lr_; }

 private:
  double lr_ = 1e-3;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double epsilon_ = 1e-8;
  long steps_ = 0;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
};

}  // namespace quadsim

#endif  // QUADSIM_MLP_HPP_
