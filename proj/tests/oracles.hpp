// Independent reference computations shared by unit and acceptance tests.
#ifndef QUADSIM_TESTS_ORACLES_HPP_
#define QUADSIM_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "quadsim/policy.hpp"
#include "quadsim/ppo.hpp"

namespace quadsim::oracle {

// GAE as the lambda-weighted mixture of n-step advantages, evaluated
// directly for every t (O(T^2)). The mixture is truncated at the end of the
// episode or segment, where the last n-step term takes the remaining weight.
inline std::vector<double> BruteForceGae(const std::vector<double>& r,
                                         const std::vector<double>& v,
                                         const std::vector<std::uint8_t>& done,
                                         double gamma, double lambda,
                                         double bootstrap) {
  const std::size_t n = r.size();
  std::vector<double> adv(n);
  for (std::size_t t = 0; t < n; ++t) {
    std::size_t e = t;
    while (e + 1 < n && !done[e]) ++e;
    const std::size_t horizon = e - t + 1;
    const double tail = done[e] ? 0.0 : (e + 1 == n ? bootstrap : v[e + 1]);
    double total = 0.0;
    for (std::size_t k = 1; k <= horizon; ++k) {
      double ret = 0.0;
      for (std::size_t j = 0; j < k; ++j) ret += std::pow(gamma, j) * r[t + j];
      const double next = k < horizon ? v[t + k] : tail;
      const double a_k = ret + std::pow(gamma, k) * next - v[t];
      const double w = k < horizon ? (1.0 - lambda) * std::pow(lambda, k - 1)
                                   : std::pow(lambda, k - 1);
      total += w * a_k;
    }
    adv[t] = total;
  }
  return adv;
}

// |a - b| relative to their magnitudes; `floor` keeps the ratio finite when
// both vanish.
inline double RelativeError(double a, double b, double floor = 1e-9) {
  return std::abs(a - b) / (std::abs(a) + std::abs(b) + floor);
}

// Central difference d loss / d params(i) with step h.
inline double CentralDifference(const std::function<double(const Eigen::VectorXd&)>& loss,
                                Eigen::VectorXd params, Eigen::Index i, double h = 1e-5) {
  const double x = params(i);
  params(i) = x + h;
  const double up = loss(params);
  params(i) = x - h;
  const double down = loss(params);
  return (up - down) / (2.0 * h);
}

// Observations whose first-layer ReLU pre-activations all stay at least
// `margin` away from zero, obtained by redrawing offending samples.
inline Eigen::MatrixXd ObservationsAwayFromKinks(const PolicyNet& net, int count,
                                                 std::mt19937_64& rng,
                                                 double margin = 1e-3) {
  std::normal_distribution<double> normal;
  const int dim = net.mlp.input_size();
  Eigen::MatrixXd obs(dim, count);
  for (int j = 0; j < count; ++j) {
    for (int tries = 0;; ++tries) {
      for (int i = 0; i < dim; ++i) obs(i, j) = normal(rng);
      Mlp::Cache cache;
      net.Mean(obs.col(j), &cache);
      bool ok = true;
      for (int l = 0; l + 1 < net.mlp.num_layers(); ++l) {
        ok = ok && cache.pre[static_cast<std::size_t>(l)].cwiseAbs().minCoeff() > margin;
      }
      if (ok || tries > 1000) break;
    }
  }
  return obs;
}

// Expected improvement E[max(best - xi - Y, 0)] for Y ~ N(mean, std^2) by
// composite Simpson quadrature from 12 standard deviations below the mean up
// to the kink at best - xi, where the integrand is smooth.
inline double QuadratureExpectedImprovement(double mean, double std,
                                            double best, double xi) {
  const int n = 20000;
  const double lo = mean - 12.0 * std;
  const double hi = std::min(best - xi, mean + 12.0 * std);
  if (hi <= lo) return 0.0;
  const double h = (hi - lo) / n;
  double sum = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double y = lo + i * h;
    const double z = (y - mean) / std;
    const double f = std::max(best - xi - y, 0.0) * std::exp(-0.5 * z * z) /
                     (std * std::sqrt(2.0 * 3.14159265358979323846));
    sum += f * (i == 0 || i == n ? 1.0 : (i % 2 ? 4.0 : 2.0));
  }
  return sum * h / 3.0;
}

}  // namespace quadsim::oracle

#endif  // QUADSIM_TESTS_ORACLES_HPP_
