#include "quadsim/bayesopt.hpp"

#include <algorithm>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>
#include <nlohmann/json.hpp>

namespace quadsim {

namespace {

const double kSqrt5 = std::sqrt(5.0);

double Matern52(double r) {
  return (1.0 + kSqrt5 * r + 5.0 * r * r / 3.0) * std::exp(-kSqrt5 * r);
}

double Sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double NormalCdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double NormalPdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

// Kernel matrix without the diagonal noise term.
Eigen::MatrixXd KernelMatrix(const Eigen::MatrixXd& X, const GpHyper& h) {
  const Eigen::Index n = X.rows();
  const Eigen::RowVectorXd inv_ls = h.length_scales.cwiseInverse().transpose();
  const Eigen::MatrixXd Z = X.array().rowwise() * inv_ls.array();
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    K(i, i) = h.signal_var;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double r = (Z.row(i) - Z.row(j)).norm();
      K(i, j) = K(j, i) = h.signal_var * Matern52(r);
    }
  }
  return K;
}

// Cholesky with an escalating diagonal jitter. Returns false if even the
// largest jitter fails.
bool JitteredCholesky(const Eigen::MatrixXd& K, Eigen::LLT<Eigen::MatrixXd>& llt,
                      double& jitter) {
  static constexpr double kLadder[] = {0.0,  1e-10, 1e-9, 1e-8,
                                       1e-7, 1e-6,  1e-5, 1e-4};
  const Eigen::Index n = K.rows();
  for (double j : kLadder) {
    llt.compute(K + j * Eigen::MatrixXd::Identity(n, n));
    if (llt.info() == Eigen::Success) {
      jitter = j;
      return true;
    }
  }
  return false;
}

struct LmlProblem {
  const GaussianProcess* gp;
  GpBounds bounds;
  int dims;
};

// z (unbounded) -> log hyperparameters inside the bounds.
GpHyper FromLatent(const gsl_vector* z, const LmlProblem& p,
                   Eigen::VectorXd* dlog_dz) {
  const int d = p.dims;
  GpHyper h;
  h.length_scales.resize(d);
  dlog_dz->resize(d + 2);
  auto map = [&](int i, double lo, double hi) {
    const double s = Sigmoid(gsl_vector_get(z, static_cast<std::size_t>(i)));
    (*dlog_dz)(i) = (hi - lo) * s * (1.0 - s);
    return std::exp(lo + (hi - lo) * s);
  };
  for (int i = 0; i < d; ++i) {
    h.length_scales(i) = map(i, p.bounds.log_ls_min, p.bounds.log_ls_max);
  }
  h.signal_var = map(d, p.bounds.log_sf_min, p.bounds.log_sf_max);
  h.noise_var = map(d + 1, p.bounds.log_sn_min, p.bounds.log_sn_max);
  return h;
}

constexpr double kFailedLml = 1e10;

void NegLmlFdf(const gsl_vector* z, void* params, double* f, gsl_vector* df) {
  const auto& p = *static_cast<const LmlProblem*>(params);
  Eigen::VectorXd chain;
  const GpHyper h = FromLatent(z, p, &chain);
  Eigen::VectorXd grad;
  const double lml = p.gp->LogMarginalLikelihood(h, df ? &grad : nullptr);
  const bool ok = std::isfinite(lml);
  if (f) *f = ok ? -lml : kFailedLml;
  if (df) {
    for (int i = 0; i < p.dims + 2; ++i) {
      gsl_vector_set(df, static_cast<std::size_t>(i),
                     ok ? -grad(i) * chain(i) : 0.0);
    }
  }
}

double NegLmlF(const gsl_vector* z, void* params) {
  double f = 0.0;
  NegLmlFdf(z, params, &f, nullptr);
  return f;
}

void NegLmlDf(const gsl_vector* z, void* params, gsl_vector* df) {
  NegLmlFdf(z, params, nullptr, df);
}

}  // namespace

double GaussianProcess::Kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                               const GpHyper& hyper) {
  const double r = (a - b).cwiseQuotient(hyper.length_scales).norm();
  return hyper.signal_var * Matern52(r);
}

void GaussianProcess::SetData(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  if (X.rows() < 2 || X.rows() != y.size()) {
    throw std::invalid_argument("GaussianProcess: need >= 2 aligned points");
  }
  if (!y.allFinite()) throw std::invalid_argument("GaussianProcess: non-finite y");
  X_ = X;
  y_mean_ = y.mean();
  y_std_ = std::sqrt((y.array() - y_mean_).square().mean());
  if (!(y_std_ > 0.0)) y_std_ = 1.0;
  y_ = (y.array() - y_mean_) / y_std_;
}

double GaussianProcess::LogMarginalLikelihood(const GpHyper& hyper,
                                              Eigen::VectorXd* grad) const {
  const Eigen::Index n = X_.rows();
  const Eigen::Index d = X_.cols();
  const Eigen::MatrixXd Kf = KernelMatrix(X_, hyper);
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;
  if (!JitteredCholesky(
          Kf + hyper.noise_var * Eigen::MatrixXd::Identity(n, n), llt, jitter)) {
    return -std::numeric_limits<double>::infinity();
  }
  const Eigen::VectorXd alpha = llt.solve(y_);
  const Eigen::MatrixXd L = llt.matrixL();
  const double lml = -0.5 * y_.dot(alpha) - L.diagonal().array().log().sum() -
                     0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  if (grad) {
    grad->resize(d + 2);
    const Eigen::MatrixXd W =
        alpha * alpha.transpose() - llt.solve(Eigen::MatrixXd::Identity(n, n));
    for (Eigen::Index k = 0; k < d; ++k) {
      const double inv_l2 = 1.0 / (hyper.length_scales(k) * hyper.length_scales(k));
      double g = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < i; ++j) {
          const double r = (X_.row(i) - X_.row(j))
                               .cwiseQuotient(hyper.length_scales.transpose())
                               .norm();
          const double diff = X_(i, k) - X_(j, k);
          const double dk = hyper.signal_var * (5.0 / 3.0) * (1.0 + kSqrt5 * r) *
                            std::exp(-kSqrt5 * r) * diff * diff * inv_l2;
          g += 2.0 * W(i, j) * dk;
        }
      }
      (*grad)(k) = 0.5 * g;
    }
    (*grad)(d) = 0.5 * (W.cwiseProduct(Kf)).sum();
    (*grad)(d + 1) = 0.5 * hyper.noise_var * W.trace();
  }
  return lml;
}

void GaussianProcess::Condition() {
  const Eigen::Index n = X_.rows();
  const Eigen::MatrixXd K = KernelMatrix(X_, hyper_) +
                            hyper_.noise_var * Eigen::MatrixXd::Identity(n, n);
  if (!JitteredCholesky(K, llt_, jitter_)) {
    throw std::runtime_error(
        "GaussianProcess: kernel matrix singular after jitter 1e-4");
  }
  alpha_ = llt_.solve(y_);
}

void GaussianProcess::FitFixed(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                               const GpHyper& hyper) {
  SetData(X, y);
  if (hyper.length_scales.size() != X.cols()) {
    throw std::invalid_argument("GaussianProcess: length-scale dimension");
  }
  hyper_ = hyper;
  Condition();
}

void GaussianProcess::Fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                          std::mt19937_64& rng, int restarts,
                          const GpBounds& bounds) {
  SetData(X, y);
  const int d = static_cast<int>(X.cols());
  const auto n = static_cast<std::size_t>(d + 2);
  LmlProblem problem{this, bounds, d};

  gsl_multimin_function_fdf fn;
  fn.n = n;
  fn.f = &NegLmlF;
  fn.df = &NegLmlDf;
  fn.fdf = &NegLmlFdf;
  fn.params = &problem;

  gsl_set_error_handler_off();
  gsl_multimin_fdfminimizer* solver =
      gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, n);
  gsl_vector* z = gsl_vector_alloc(n);
  std::uniform_real_distribution<double> unit(0.02, 0.98);

  double best = std::numeric_limits<double>::infinity();
  GpHyper best_hyper;
  for (int r = 0; r < std::max(restarts, 1); ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      const double u = unit(rng);
      gsl_vector_set(z, i, std::log(u / (1.0 - u)));
    }
    gsl_multimin_fdfminimizer_set(solver, &fn, z, 0.1, 0.1);
    for (int iter = 0; iter < 200; ++iter) {
      if (gsl_multimin_fdfminimizer_iterate(solver) != GSL_SUCCESS) break;
      if (gsl_multimin_test_gradient(solver->gradient, 1e-5) == GSL_SUCCESS) break;
    }
    const double value = solver->f;
    if (value < best) {
      best = value;
      Eigen::VectorXd chain;
      best_hyper = FromLatent(solver->x, problem, &chain);
    }
  }
  gsl_vector_free(z);
  gsl_multimin_fdfminimizer_free(solver);

  if (!(best < kFailedLml)) {
    throw std::runtime_error(
        "GaussianProcess: no hyperparameters with a usable kernel matrix");
  }
  hyper_ = best_hyper;
  Condition();
}

GpPrediction GaussianProcess::Predict(const Eigen::VectorXd& x) const {
  Eigen::MatrixXd row = x.transpose();
  return Predict(row).front();
}

std::vector<GpPrediction> GaussianProcess::Predict(const Eigen::MatrixXd& X) const {
  const Eigen::Index n = X_.rows();
  const Eigen::Index m = X.rows();
  Eigen::MatrixXd Ks(n, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const Eigen::VectorXd xj = X.row(j).transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      Ks(i, j) = Kernel(X_.row(i).transpose(), xj, hyper_);
    }
  }
  const Eigen::VectorXd mean = Ks.transpose() * alpha_;
  const Eigen::MatrixXd V = llt_.matrixL().solve(Ks);
  const Eigen::VectorXd reduction = V.colwise().squaredNorm().transpose();
  std::vector<GpPrediction> out(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    const double var = std::max(hyper_.signal_var - reduction(j), 0.0);
    out[static_cast<std::size_t>(j)] = {y_mean_ + y_std_ * mean(j),
                                        y_std_ * std::sqrt(var)};
  }
  return out;
}

std::string ToString(AcquisitionKind kind) {
  switch (kind) {
    case AcquisitionKind::kLcb: return "LCB";
    case AcquisitionKind::kEi: return "EI";
    case AcquisitionKind::kPi: return "PI";
  }
  return "?";
}

double LowerConfidenceBound(const GpPrediction& p, double kappa) {
  return p.mean - kappa * p.std;
}

double ExpectedImprovement(const GpPrediction& p, double best_y, double xi) {
  const double gain = best_y - p.mean - xi;
  if (p.std <= 0.0) return std::max(gain, 0.0);
  const double z = gain / p.std;
  return std::max(gain * NormalCdf(z) + p.std * NormalPdf(z), 0.0);
}

double ProbabilityOfImprovement(const GpPrediction& p, double best_y, double xi) {
  const double gain = best_y - p.mean - xi;
  if (p.std <= 0.0) return gain > 0.0 ? 1.0 : 0.0;
  return NormalCdf(gain / p.std);
}

double AcquisitionScore(const GpPrediction& p, AcquisitionKind kind,
                        double best_y, const AcquisitionParams& params) {
  switch (kind) {
    case AcquisitionKind::kLcb: return -LowerConfidenceBound(p, params.kappa);
    case AcquisitionKind::kEi: return ExpectedImprovement(p, best_y, params.xi);
    case AcquisitionKind::kPi:
      return ProbabilityOfImprovement(p, best_y, params.xi);
  }
  return 0.0;
}

Eigen::MatrixXd LatinHypercube(int n, int d, std::mt19937_64& rng) {
  Eigen::MatrixXd out(n, d);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<int> strata(static_cast<std::size_t>(n));
  for (int k = 0; k < d; ++k) {
    std::iota(strata.begin(), strata.end(), 0);
    std::shuffle(strata.begin(), strata.end(), rng);
    for (int i = 0; i < n; ++i) {
      out(i, k) = (strata[static_cast<std::size_t>(i)] + unit(rng)) / n;
    }
  }
  return out;
}

namespace {

// Coordinate pattern search on the acquisition score inside the unit cube.
std::pair<Eigen::VectorXd, double> Refine(const GaussianProcess& gp,
                                          Eigen::VectorXd x, double score,
                                          AcquisitionKind kind, double best_y,
                                          const AcquisitionParams& params) {
  double step = 0.05;
  while (step > 1e-4) {
    bool improved = false;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      for (double sign : {1.0, -1.0}) {
        Eigen::VectorXd trial = x;
        trial(k) = std::clamp(trial(k) + sign * step, 0.0, 1.0);
        const double s = AcquisitionScore(gp.Predict(trial), kind, best_y, params);
        if (s > score) {
          x = trial;
          score = s;
          improved = true;
        }
      }
    }
    if (!improved) step *= 0.5;
  }
  return {x, score};
}

}  // namespace

BoResult BoMinimize(const BoObjective& f, const Eigen::VectorXd& lower,
                    const Eigen::VectorXd& upper, const BoConfig& cfg,
                    std::mt19937_64& rng, const BoCallback& on_eval) {
  const int d = static_cast<int>(lower.size());
  if (upper.size() != d || !(lower.array() < upper.array()).all()) {
    throw std::invalid_argument("BoMinimize: need lower < upper");
  }
  if (cfg.n_evals < 1 || cfg.initial_design < 2 || cfg.candidates < 1) {
    throw std::invalid_argument("BoMinimize: bad evaluation counts");
  }
  const Eigen::VectorXd span = upper - lower;
  auto to_box = [&](const Eigen::VectorXd& u) -> Eigen::VectorXd {
    return lower + span.cwiseProduct(u);
  };

  Eigen::MatrixXd X(0, d);
  std::vector<double> y;
  std::vector<std::size_t> pending;  // non-finite before any finite value
  double worst_finite = -std::numeric_limits<double>::infinity();
  BoResult result;
  std::size_t incumbent = 0;

  auto penalty = [&] {
    return worst_finite > 0.0 ? 10.0 * worst_finite : worst_finite + 1.0;
  };
  auto evaluate = [&](const Eigen::VectorXd& u, std::optional<AcquisitionKind> kind) {
    const double raw = f(to_box(u));
    double used = raw;
    if (std::isfinite(raw)) {
      if (raw > worst_finite) worst_finite = raw;
      for (std::size_t i : pending) {
        y[i] = penalty();
        result.history[i].objective = y[i];
      }
      pending.clear();
    } else if (std::isfinite(worst_finite)) {
      used = penalty();
    } else {
      used = std::numeric_limits<double>::infinity();
      pending.push_back(y.size());
    }
    X.conservativeResize(X.rows() + 1, Eigen::NoChange);
    X.row(X.rows() - 1) = u.transpose();
    y.push_back(used);
    if (y[incumbent] > used || !std::isfinite(y[incumbent])) incumbent = y.size() - 1;

    BoRecord rec;
    rec.iter = static_cast<int>(y.size()) - 1;
    rec.x = to_box(u);
    rec.objective = used;
    rec.kind = kind;
    rec.incumbent = to_box(X.row(static_cast<Eigen::Index>(incumbent)).transpose());
    rec.incumbent_objective = y[incumbent];
    result.history.push_back(rec);
    if (on_eval) on_eval(rec);
  };

  const int n_init = std::min(cfg.initial_design, cfg.n_evals);
  const Eigen::MatrixXd design = LatinHypercube(n_init, d, rng);
  for (int i = 0; i < n_init; ++i) evaluate(design.row(i).transpose(), std::nullopt);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> pick_kind(0, 2);
  GaussianProcess gp;
  while (static_cast<int>(y.size()) < cfg.n_evals) {
    Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(
        y.data(), static_cast<Eigen::Index>(y.size()));
    if (!yv.allFinite()) {
      // Nothing finite yet: keep sampling uniformly.
      Eigen::VectorXd u(d);
      for (int k = 0; k < d; ++k) u(k) = unit(rng);
      evaluate(u, std::nullopt);
      continue;
    }
    gp.Fit(X, yv, rng, cfg.gp_restarts);
    const auto kind = static_cast<AcquisitionKind>(pick_kind(rng));
    const double best_y = yv.minCoeff();

    Eigen::MatrixXd cand(cfg.candidates, d);
    for (int i = 0; i < cfg.candidates; ++i) {
      for (int k = 0; k < d; ++k) cand(i, k) = unit(rng);
    }
    const std::vector<GpPrediction> preds = gp.Predict(cand);
    std::vector<double> scores(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
      scores[i] = AcquisitionScore(preds[i], kind, best_y, cfg.acquisition);
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto top = std::min<std::size_t>(
        static_cast<std::size_t>(std::max(cfg.refine_starts, 1)), order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(top),
                      order.end(), [&](std::size_t a, std::size_t b) {
                        return scores[a] > scores[b];
                      });

    Eigen::VectorXd best_u = cand.row(static_cast<Eigen::Index>(order[0])).transpose();
    double best_score = scores[order[0]];
    for (std::size_t r = 0; r < top; ++r) {
      const std::size_t i = order[r];
      auto [u, s] = Refine(gp, cand.row(static_cast<Eigen::Index>(i)).transpose(),
                           scores[i], kind, best_y, cfg.acquisition);
      if (s > best_score) {
        best_score = s;
        best_u = u;
      }
    }
    evaluate(best_u, kind);
  }

  result.best_x = result.history[incumbent].x;
  result.best_objective = y[incumbent];
  return result;
}

void WriteHistoryLine(const BoRecord& record, std::ostream& out) {
  nlohmann::json j;
  j["iter"] = record.iter;
  j["xi"] = std::vector<double>(record.x.data(), record.x.data() + record.x.size());
  j["objective"] = record.objective;
  j["acquisition_kind"] =
      record.kind ? nlohmann::json(ToString(*record.kind)) : nlohmann::json("LHS");
  j["incumbent"] = std::vector<double>(record.incumbent.data(),
                                       record.incumbent.data() + record.incumbent.size());
  out << j.dump() << '\n';
}

}  // namespace quadsim
