#ifndef QUADSIM_BAYESOPT_HPP_
#define QUADSIM_BAYESOPT_HPP_

#include <cmath>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace quadsim {

struct GpHyper {
  double signal_var = 1.0;
  Eigen::VectorXd length_scales;
  double noise_var = 1e-6;
};

struct GpPrediction {
  double mean = 0.0;
  double std = 0.0;
};

// Bounds on the log hyperparameters (standardized output units).
struct GpBounds {
  double log_ls_min = std::log(1e-2), log_ls_max = std::log(1e1);
  double log_sf_min = std::log(1e-2), log_sf_max = std::log(1e2);
  double log_sn_min = std::log(1e-8), log_sn_max = std::log(1e-1);
};

// Matern-5/2 ARD kernel on inputs in the unit cube. Outputs are standardized
// internally; predictions are returned in the original units.
class GaussianProcess {
 public:
  // Maximizes the log marginal likelihood from `restarts` random starts.
  // X holds one point per row. Throws if fewer than 2 points are given or
  // the kernel matrix stays singular after jitter up to 1e-4.
  void Fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
           std::mt19937_64& rng, int restarts = 8, const GpBounds& bounds = {});
  // Conditions on the data with fixed hyperparameters.
  void FitFixed(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                const GpHyper& hyper);

  GpPrediction Predict(const Eigen::VectorXd& x) const;
  // Batch prediction, one point per row.
  std::vector<GpPrediction> Predict(const Eigen::MatrixXd& X) const;

  // Log marginal likelihood of the standardized outputs and its gradient
  // with respect to (log l_1..l_d, log signal_var, log noise_var).
  double LogMarginalLikelihood(const GpHyper& hyper,
                               Eigen::VectorXd* grad = nullptr) const;

  const GpHyper& hyper() const { return hyper_; }
  double jitter() const { return jitter_; }
  int size() const { return static_cast<int>(X_.rows()); }

  static double Kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                       const GpHyper& hyper);

 private:
  void SetData(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);
  void Condition();

  Eigen::MatrixXd X_;
  Eigen::VectorXd y_;  // standardized
  double y_mean_ = 0.0;
  double y_std_ = 1.0;
  GpHyper hyper_;
  double jitter_ = 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
};

enum class AcquisitionKind { kLcb, kEi, kPi };
std::string ToString(AcquisitionKind kind);

struct AcquisitionParams {
  double kappa = 2.0;
  double xi = 0.01;
};

// Minimization forms. LCB is a value to minimize; EI and PI are to be
// maximized against the incumbent `best_y`.
double LowerConfidenceBound(const GpPrediction& p, double kappa);
double ExpectedImprovement(const GpPrediction& p, double best_y, double xi);
double ProbabilityOfImprovement(const GpPrediction& p, double best_y, double xi);
// Larger is better for every kind.
double AcquisitionScore(const GpPrediction& p, AcquisitionKind kind,
                        double best_y, const AcquisitionParams& params);

struct BoConfig {
  int n_evals = 250;
  int initial_design = 20;
  int candidates = 2048;
  int refine_starts = 8;
  int gp_restarts = 8;
  AcquisitionParams acquisition;
};

struct BoRecord {
  int iter = 0;
  Eigen::VectorXd x;
  double objective = 0.0;
  std::optional<AcquisitionKind> kind;  // empty for the initial design
  Eigen::VectorXd incumbent;
  double incumbent_objective = 0.0;
};

struct BoResult {
  Eigen::VectorXd best_x;
  double best_objective = 0.0;
  std::vector<BoRecord> history;
};

// n points in [0,1]^d with one point per stratum in every dimension.
Eigen::MatrixXd LatinHypercube(int n, int d, std::mt19937_64& rng);

using BoObjective = std::function<double(const Eigen::VectorXd&)>;
using BoCallback = std::function<void(const BoRecord&)>;

// Minimizes `f` over the box [lower, upper]. Non-finite objective values
// are replaced by ten times the worst finite value seen so far.
BoResult BoMinimize(const BoObjective& f, const Eigen::VectorXd& lower,
                    const Eigen::VectorXd& upper, const BoConfig& cfg,
                    std::mt19937_64& rng, const BoCallback& on_eval = {});

// One JSON object per line: iter, xi, objective, acquisition_kind, incumbent.
void WriteHistoryLine(const BoRecord& record, std::ostream& out);

}  // namespace quadsim

#endif  // QUADSIM_BAYESOPT_HPP_
